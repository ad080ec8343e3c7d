//! The analytic binary stimulus-response predictor and a two-layer EMS
//! module with hand-set weights that computes the same thing.

use super::arch::ArchitectureId;
use super::module::{action_width, Analytic, Body, ModuleConfig, ReMaPModule};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Logit magnitude used to saturate the analytic predictor.
pub const LOGIT_SCALE: f64 = 30.0;

/// Read-out gain of the EMS realization; larger is a sharper step.
pub const REALIZATION_GAIN: f64 = 1e4;

#[derive(Clone, Debug)]
pub struct PerfectSr {
    pub analytic: ReMaPModule,
    pub realization: ReMaPModule,
}

/// Builds both predictors for a boundary `w · Ψ_t + bias` over the current
/// frame. Positive projections are rewarded for `a_x > 0`.
pub fn perfect_sr_module(boundary: &[f64], bias: f64, k_b: usize, k_f: usize) -> Result<PerfectSr> {
    let d = boundary.len();
    if d == 0 || k_f == 0 {
        return Err(Error::Config("perfect module needs a boundary and k_f ≥ 1".into()));
    }
    let config = ModuleConfig {
        arch: ArchitectureId::EMS,
        widths: vec![1, 2, 1],
        k_b,
        k_f,
        action_width: action_width(k_b),
        scene_width: (k_b + 1) * d,
        init_sigma: 0.0,
        seed: 0,
        conv: None,
    };
    config.validate()?;
    let ax = 2 * k_b;
    let analytic = ReMaPModule {
        config: config.clone(),
        body: Body::Analytic(Analytic {
            boundary: boundary.to_vec(),
            bias,
            frame_offset: k_b * d,
            ax_index: ax,
            k_f,
            logit_scale: LOGIT_SCALE,
        }),
        frozen: true,
    };

    let mut realization = ReMaPModule::from_config(&config)?;
    let a = config.action_width;
    let layers = realization.layers_mut().expect("layered");
    // Bottleneck: u = w·Ψ_t + bias, then CReLU gives [relu(u), relu(-u)].
    let mut w0 = vec![0.0; config.scene_width];
    w0[k_b * d..].copy_from_slice(boundary);
    set(&mut layers[0].params[0].tensor, w0);
    set(&mut layers[0].params[1].tensor, vec![bias]);
    // Layer 1 units: u + a_x and u - a_x, with u = relu(u) - relu(-u).
    let mut w1 = vec![0.0; 2 * (2 + a)];
    for (unit, sign) in [(0, 1.0), (1, -1.0)] {
        let row = &mut w1[unit * (2 + a)..(unit + 1) * (2 + a)];
        row[0] = 1.0;
        row[1] = -1.0;
        row[2 + ax] = sign;
    }
    set(&mut layers[1].params[0].tensor, w1);
    // Layer 2: ((u + a)² - (u - a)²) / 4 = u·a from the squared blocks.
    let mut w2 = vec![0.0; 8];
    w2[4] = 0.25;
    w2[6] = 0.25;
    w2[5] = -0.25;
    w2[7] = -0.25;
    set(&mut layers[2].params[0].tensor, w2);
    // Read-out: column 0 steps from -30 to +30 as relu(u·a) leaves zero;
    // later columns are constant.
    let mut w3 = vec![0.0; k_f * 4];
    w3[0] = REALIZATION_GAIN;
    let mut b3 = vec![LOGIT_SCALE; k_f];
    b3[0] = -LOGIT_SCALE;
    set(&mut layers[3].params[0].tensor, w3);
    set(&mut layers[3].params[1].tensor, b3);
    realization.freeze();
    Ok(PerfectSr { analytic, realization })
}

fn set(t: &mut Tensor, values: Vec<f64>) {
    assert_eq!(t.len(), values.len());
    t.values_mut().copy_from_slice(&values);
}

/// Linear boundary positive on `positive` and negative on `negative`.
/// Starts from the mean difference through the midpoint of the class means,
/// then runs perceptron passes until every point sits on its side with a
/// margin (or the pass budget runs out, for sets that are not separable).
pub fn fit_boundary(negative: &[Vec<f64>], positive: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let mean = |set: &[Vec<f64>]| -> Result<Vec<f64>> {
        let first = set.first().ok_or_else(|| Error::Input("empty class".into()))?;
        let mut m = vec![0.0; first.len()];
        for v in set {
            if v.len() != m.len() {
                return Err(Error::Input("encodings differ in width".into()));
            }
            for (a, b) in m.iter_mut().zip(v) {
                *a += b / set.len() as f64;
            }
        }
        Ok(m)
    };
    let (m0, m1) = (mean(negative)?, mean(positive)?);
    if m0.len() != m1.len() {
        return Err(Error::Input("class means differ in width".into()));
    }
    let mut w: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
    let mut bias = -w.iter().zip(m0.iter().zip(&m1)).map(|(w, (a, b))| w * (a + b) / 2.0).sum::<f64>();
    let scale = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let margin = 0.05 * scale;
    for _ in 0..PERCEPTRON_PASSES {
        let mut clean = true;
        for (set, y) in [(negative, -1.0), (positive, 1.0)] {
            for v in set {
                if v.len() != w.len() {
                    return Err(Error::Input("encodings differ in width".into()));
                }
                let u = bias + w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                if y * u <= margin {
                    clean = false;
                    let step = 0.1 * scale / v.iter().map(|x| x * x).sum::<f64>().max(1e-12).sqrt();
                    for (wi, xi) in w.iter_mut().zip(v) {
                        *wi += y * step * xi;
                    }
                    bias += y * step;
                }
            }
        }
        if clean {
            break;
        }
    }
    Ok((w, bias))
}

const PERCEPTRON_PASSES: usize = 500;
