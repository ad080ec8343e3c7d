//! Elementwise and width-expanding nonlinearities.
//!
//! Width-expanding activations write their blocks side by side within each
//! row:
//!
//! | activation | output row                                   | width |
//! |------------|----------------------------------------------|-------|
//! | `crelu`    | `relu(x) ⊕ relu(-x)`                         | 2n    |
//! | `sq`       | `x ⊕ x²`                                     | 2n    |
//! | `cres`     | `relu(x) ⊕ relu(-x) ⊕ relu(x)² ⊕ relu(-x)²`  | 4n    |
//! | `relu-sq`  | `relu(x) ⊕ x²`                               | 2n    |
//!
//! so `cres(x)` is exactly `sq(crelu(x))` block for block.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    /// `elu` with α = 1.
    Elu,
    Crelu,
    Sq,
    Cres,
    /// `relu(x) ⊕ x²`, the symmetry-ablated CReS.
    ReluSq,
}

impl Activation {
    pub const ALL: [Activation; 9] = [
        Activation::Identity,
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Elu,
        Activation::Crelu,
        Activation::Sq,
        Activation::Cres,
        Activation::ReluSq,
    ];

    pub fn width_factor(self) -> usize {
        match self {
            Activation::Identity
            | Activation::Relu
            | Activation::Tanh
            | Activation::Sigmoid
            | Activation::Elu => 1,
            Activation::Crelu | Activation::Sq | Activation::ReluSq => 2,
            Activation::Cres => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Elu => "elu",
            Activation::Crelu => "crelu",
            Activation::Sq => "sq",
            Activation::Cres => "cres",
            Activation::ReluSq => "relu-sq",
        }
    }

    /// Applies the activation to one row of `n` inputs, writing `factor·n` outputs.
    pub(crate) fn forward_row(self, x: &[f64], y: &mut [f64]) {
        let n = x.len();
        debug_assert_eq!(y.len(), n * self.width_factor());
        match self {
            Activation::Identity => y.copy_from_slice(x),
            Activation::Relu => {
                for (o, &v) in y.iter_mut().zip(x) {
                    *o = v.max(0.0);
                }
            }
            Activation::Tanh => {
                for (o, &v) in y.iter_mut().zip(x) {
                    *o = v.tanh();
                }
            }
            Activation::Sigmoid => {
                for (o, &v) in y.iter_mut().zip(x) {
                    *o = sigmoid(v);
                }
            }
            Activation::Elu => {
                for (o, &v) in y.iter_mut().zip(x) {
                    *o = if v > 0.0 { v } else { v.exp_m1() };
                }
            }
            Activation::Crelu => {
                for (i, &v) in x.iter().enumerate() {
                    y[i] = v.max(0.0);
                    y[n + i] = (-v).max(0.0);
                }
            }
            Activation::Sq => {
                for (i, &v) in x.iter().enumerate() {
                    y[i] = v;
                    y[n + i] = v * v;
                }
            }
            Activation::Cres => {
                for (i, &v) in x.iter().enumerate() {
                    let p = v.max(0.0);
                    let q = (-v).max(0.0);
                    y[i] = p;
                    y[n + i] = q;
                    y[2 * n + i] = p * p;
                    y[3 * n + i] = q * q;
                }
            }
            Activation::ReluSq => {
                for (i, &v) in x.iter().enumerate() {
                    y[i] = v.max(0.0);
                    y[n + i] = v * v;
                }
            }
        }
    }

    /// Accumulates `dx += J(x)ᵀ dy` for one row.
    pub(crate) fn backward_row(self, x: &[f64], y: &[f64], dy: &[f64], dx: &mut [f64]) {
        let n = x.len();
        match self {
            Activation::Identity => {
                for (d, &g) in dx.iter_mut().zip(dy) {
                    *d += g;
                }
            }
            Activation::Relu => {
                for i in 0..n {
                    if x[i] > 0.0 {
                        dx[i] += dy[i];
                    }
                }
            }
            Activation::Tanh => {
                for i in 0..n {
                    dx[i] += dy[i] * (1.0 - y[i] * y[i]);
                }
            }
            Activation::Sigmoid => {
                for i in 0..n {
                    dx[i] += dy[i] * y[i] * (1.0 - y[i]);
                }
            }
            Activation::Elu => {
                for i in 0..n {
                    dx[i] += if x[i] > 0.0 { dy[i] } else { dy[i] * x[i].exp() };
                }
            }
            Activation::Crelu => {
                for i in 0..n {
                    if x[i] > 0.0 {
                        dx[i] += dy[i];
                    } else if x[i] < 0.0 {
                        dx[i] -= dy[n + i];
                    }
                }
            }
            Activation::Sq => {
                for i in 0..n {
                    dx[i] += dy[i] + 2.0 * x[i] * dy[n + i];
                }
            }
            Activation::Cres => {
                for i in 0..n {
                    let v = x[i];
                    if v > 0.0 {
                        dx[i] += dy[i] + 2.0 * v * dy[2 * n + i];
                    } else if v < 0.0 {
                        dx[i] += -dy[n + i] + 2.0 * v * dy[3 * n + i];
                    }
                }
            }
            Activation::ReluSq => {
                for i in 0..n {
                    let relu = if x[i] > 0.0 { dy[i] } else { 0.0 };
                    dx[i] += relu + 2.0 * x[i] * dy[n + i];
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown activation `{s}`")))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
