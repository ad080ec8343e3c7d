use serde::{Deserialize, Serialize};

use super::tensor::Parameter;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for an ordered parameter list.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. `grads[i]` belongs to `params[i]`; `None` means no
    /// gradient reached that parameter. Frozen parameters are never touched.
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Parameter], grads: &[Option<Vec<f64>>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Config(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Config(format!(
                "adam state tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if self.m[i].len() != p.len() {
                return Err(Error::Config(format!("adam state shape mismatch for `{}`", p.name)));
            }
            if let Some(g) = g {
                if g.len() != p.len() {
                    return Err(Error::Config(format!("gradient shape mismatch for `{}`", p.name)));
                }
                if p.trainable && g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Training {
                        param: p.name.clone(),
                        message: "non-finite gradient".into(),
                    });
                }
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if !p.trainable {
                continue;
            }
            let Some(g) = g else { continue };
            let rate = p.lr.unwrap_or(lr);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.tensor.values_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= rate * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn scalar(v: f64) -> Parameter {
        Parameter::new("w", Tensor::vector(vec![v]))
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(0.7);
        let mut s = AdamState::new(AdamConfig::default());
        s.step(&mut [&mut p], &[Some(vec![0.0])]).unwrap();
        assert_eq!(p.values(), &[0.7]);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(AdamConfig::with_lr(1e-3));
        s.step(&mut [&mut p], &[Some(vec![1.0])]).unwrap();
        // lr · g / (|g| + eps)
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameter_unchanged() {
        let mut p = scalar(2.0);
        p.trainable = false;
        let mut s = AdamState::new(AdamConfig::default());
        for _ in 0..5 {
            s.step(&mut [&mut p], &[Some(vec![3.0])]).unwrap();
        }
        assert_eq!(p.values(), &[2.0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar(1.0);
        p.name = "layer1.weight".into();
        let mut s = AdamState::new(AdamConfig::default());
        let err = s.step(&mut [&mut p], &[Some(vec![f64::NAN])]).unwrap_err();
        match err {
            Error::Training { param, .. } => assert_eq!(param, "layer1.weight"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.values(), &[1.0]);
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn per_parameter_learning_rate() {
        let mut a = scalar(0.0);
        let mut b = scalar(0.0).with_lr(0.1);
        let mut s = AdamState::new(AdamConfig::with_lr(1e-3));
        s.step(&mut [&mut a, &mut b], &[Some(vec![1.0]), Some(vec![1.0])]).unwrap();
        assert!((a.values()[0] + 1e-3).abs() < 1e-9);
        assert!((b.values()[0] + 0.1).abs() < 1e-7);
    }

    #[test]
    fn reproducible() {
        let run = || {
            let mut p = Parameter::new("w", Tensor::vector(vec![0.1, -0.2, 0.3]));
            let mut s = AdamState::new(AdamConfig::default());
            for k in 0..50 {
                let g: Vec<f64> = p.values().iter().map(|w| (w * 3.0 + k as f64).sin()).collect();
                s.step(&mut [&mut p], &[Some(g)]).unwrap();
            }
            p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
