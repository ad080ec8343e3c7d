use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformInit {
    /// Noise added to the identity action map.
    pub action_noise: f64,
    /// Initial value of every action-map bias entry.
    pub action_bias: f64,
    pub adapter_eps: f64,
    pub adapter_bias: f64,
    pub adapter_hidden: usize,
    pub action_lr: f64,
    pub adapter_lr: f64,
    /// Clamp used when mapping adapted probabilities back to logits.
    pub delta: f64,
}

impl Default for TransformInit {
    fn default() -> Self {
        Self {
            action_noise: 0.01,
            action_bias: 1.0,
            adapter_eps: 0.001,
            adapter_bias: 0.01,
            adapter_hidden: 4,
            action_lr: 0.1,
            adapter_lr: 0.01,
            delta: 1e-3,
        }
    }
}

impl TransformInit {
    /// Noise and biases zeroed: both maps start as exact identities.
    pub fn identity() -> Self {
        Self {
            action_noise: 0.0,
            action_bias: 0.0,
            adapter_eps: 0.0,
            adapter_bias: 0.0,
            ..Self::default()
        }
    }
}

/// Learned adapters around a frozen module: a linear map on the action
/// coordinates (history and candidate) and a small network on the
/// module's reward maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformStack {
    /// Index of the module this stack wraps.
    pub target: usize,
    pub coords: usize,
    pub k_f: usize,
    pub delta: f64,
    pub action: [Parameter; 2],
    /// `g` weight and bias, first layer, second layer.
    pub adapter: [Parameter; 6],
}

#[derive(Clone, Copy, Debug)]
pub struct TransformBound {
    action: [Var; 2],
    adapter: [Var; 6],
}

fn near_identity<R: Rng>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> Result<Vec<f64>> {
    let noise = (sd > 0.0)
        .then(|| Normal::new(0.0, sd))
        .transpose()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut w = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let e = noise.map(|n| n.sample(rng)).unwrap_or(0.0);
            w.push(if i == j { 1.0 + e } else { e });
        }
    }
    Ok(w)
}

impl TransformBound {
    pub fn flat(&self) -> Vec<Var> {
        self.action.iter().chain(&self.adapter).copied().collect()
    }
}

impl TransformStack {
    pub fn new<R: Rng>(target: usize, k_b: usize, k_f: usize, init: &TransformInit, rng: &mut R) -> Result<Self> {
        let h = init.adapter_hidden;
        if k_f > h {
            return Err(Error::Config(format!(
                "reward-map adapter with {h} hidden units cannot preserve {k_f} maps"
            )));
        }
        let c = 2 * (k_b + 1);
        let p = |name: &str, rows: usize, cols: usize, values: Vec<f64>, lr: f64| -> Result<Parameter> {
            Ok(Parameter::new(name, Tensor::matrix(rows, cols, values)?).with_lr(lr))
        };
        let (alr, mlr) = (init.action_lr, init.adapter_lr);
        let eps = init.adapter_eps;
        let in1 = 2 * k_f + c;
        Ok(Self {
            target,
            coords: c,
            k_f,
            delta: init.delta,
            action: [
                p("xf.action.w", c, c, near_identity(c, c, init.action_noise, rng)?, alr)?,
                p("xf.action.b", 1, c, vec![init.action_bias; c], alr)?,
            ],
            adapter: [
                p("xf.g.w", k_f, c, near_identity(k_f, c, eps, rng)?, mlr)?,
                p("xf.g.b", 1, k_f, vec![init.adapter_bias; k_f], mlr)?,
                p("xf.l1.w", h, in1, near_identity(h, in1, eps, rng)?, mlr)?,
                p("xf.l1.b", 1, h, vec![init.adapter_bias; h], mlr)?,
                p("xf.l2.w", k_f, 4 * h, near_identity(k_f, 4 * h, eps, rng)?, mlr)?,
                p("xf.l2.b", 1, k_f, vec![init.adapter_bias; k_f], mlr)?,
            ],
        })
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.action.iter().chain(&self.adapter)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.action.iter_mut().chain(&mut self.adapter)
    }

    pub fn bind(&self, tape: &mut Tape) -> TransformBound {
        let adapter = std::array::from_fn(|i| tape.param(&self.adapter[i]));
        TransformBound {
            action: [tape.param(&self.action[0]), tape.param(&self.action[1])],
            adapter,
        }
    }

    /// Replaces the coordinate columns of an action block with `W_a·a + b`;
    /// validity bits pass through.
    pub fn actions(&self, tape: &mut Tape, bound: &TransformBound, actions: Var) -> Result<Var> {
        let width = tape.cols(actions);
        if width < self.coords {
            return Err(Error::Config(format!(
                "action block of width {width} has fewer than {} coordinates",
                self.coords
            )));
        }
        let coords = tape.columns(actions, 0, self.coords)?;
        let moved = tape.affine(coords, bound.action[0], Some(bound.action[1]))?;
        if width == self.coords {
            return Ok(moved);
        }
        let rest = tape.columns(actions, self.coords, width)?;
        tape.concat(&[moved, rest])
    }

    /// Adapts a module's logits through probability space and returns new
    /// logits. `actions` is the untransformed action block.
    pub fn maps(&self, tape: &mut Tape, bound: &TransformBound, logits: Var, actions: Var) -> Result<Var> {
        let [gw, gb, w1, b1, w2, b2] = bound.adapter;
        let m = tape.activate(Activation::Sigmoid, logits);
        let a = tape.columns(actions, 0, self.coords)?;
        let g = tape.affine(a, gw, Some(gb))?;
        let g = tape.activate(Activation::Relu, g);
        let mg = tape.mul(m, g)?;
        let x = tape.concat(&[m, mg, a])?;
        let h = tape.affine(x, w1, Some(b1))?;
        let h = tape.activate(Activation::Cres, h);
        let out = tape.affine(h, w2, Some(b2))?;
        Ok(tape.prob_to_logit(out, self.delta))
    }
}
