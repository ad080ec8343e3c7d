use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteMode {
    Layer,
    Unit,
}

impl std::str::FromStr for VoteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" => Ok(VoteMode::Layer),
            "unit" => Ok(VoteMode::Unit),
            other => Err(Error::Config(format!("voting mode must be `layer` or `unit`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for VoteMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VoteMode::Layer => "layer",
            VoteMode::Unit => "unit",
        })
    }
}

/// Magnitudes and biases for the vote parameters. Prior modules use
/// `(mu0, b0)` at the first layer and `(mu1, b1)` deeper; the newest module
/// uses `(new_mu, new_b)` everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteInit {
    pub mu0: f64,
    pub b0: f64,
    pub mu1: f64,
    pub b1: f64,
    pub new_mu: f64,
    pub new_b: f64,
    pub sigma: f64,
    /// Skip the grid check.
    #[serde(default)]
    pub overridden: bool,
}

impl Default for VoteInit {
    fn default() -> Self {
        Self {
            mu0: 0.01,
            b0: 0.1,
            mu1: 0.02,
            b1: 0.5,
            new_mu: 0.01,
            new_b: 0.1,
            sigma: 0.001,
            overridden: false,
        }
    }
}

impl VoteInit {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("vote init sigma must be non-negative, got {}", self.sigma)));
        }
        if self.overridden {
            return Ok(());
        }
        let within = |x: f64, lo: f64, hi: f64| (lo..=hi).contains(&x);
        let ok = within(self.mu0, 0.005, 0.01)
            && within(self.b0, 0.01, 0.1)
            && within(self.mu1, 0.01, 0.02)
            && [0.1, 0.2, 0.5, 1.0].contains(&self.b1);
        if !ok {
            return Err(Error::Config(format!(
                "vote init outside the search grid (mu0={}, b0={}, mu1={}, b1={}); set `overridden` to force",
                self.mu0, self.b0, self.mu1, self.b1
            )));
        }
        Ok(())
    }

    fn scheme(&self, layer: usize, newest: bool) -> (f64, f64) {
        match (newest, layer) {
            (true, _) => (self.new_mu, self.new_b),
            (false, 0) => (self.mu0, self.b0),
            (false, _) => (self.mu1, self.b1),
        }
    }
}

/// Mixture parameters for every layer. In layer mode, layer `i` holds
/// `W` (`Ω × Ω·L_i`, one row per candidate score) and `b` (`Ω`); in unit
/// mode `W` holds `L_i·Ω·Ω` values laid out `[unit][score][part]` and `b`
/// holds `L_i·Ω`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteState {
    pub mode: VoteMode,
    pub candidates: usize,
    pub widths: Vec<usize>,
    pub init: VoteInit,
    pub layers: Vec<[Parameter; 2]>,
    /// Replaces every softmax with a one-hot on this candidate.
    #[serde(default)]
    pub forced: Option<usize>,
}

/// Draws vote parameters. `newest[ω]` marks candidates initialised with
/// the new-module scheme.
pub fn init_votes<R: Rng>(
    newest: &[bool],
    widths: &[usize],
    init: &VoteInit,
    mode: VoteMode,
    rng: &mut R,
) -> Result<VoteState> {
    init.validate()?;
    let k = newest.len();
    if k == 0 {
        return Err(Error::Config("voting needs at least one candidate".into()));
    }
    let mut draw = |mu: f64| -> Result<f64> {
        if init.sigma == 0.0 {
            return Ok(mu.abs());
        }
        let n = Normal::new(mu, init.sigma).map_err(|e| Error::Config(e.to_string()))?;
        Ok(n.sample(rng).abs())
    };
    let mut layers = Vec::with_capacity(widths.len());
    for (i, &l) in widths.iter().enumerate() {
        let (w, b) = match mode {
            VoteMode::Layer => {
                let mut w = Vec::with_capacity(k * k * l);
                let mut b = Vec::with_capacity(k);
                for &fresh in newest {
                    let (mu, bias) = init.scheme(i, fresh);
                    for _ in 0..k * l {
                        w.push(draw(mu)?);
                    }
                    b.push(bias);
                }
                (Tensor::matrix(k, k * l, w)?, Tensor::matrix(1, k, b)?)
            }
            VoteMode::Unit => {
                let mut w = Vec::with_capacity(l * k * k);
                let mut b = Vec::with_capacity(l * k);
                for _ in 0..l {
                    for &fresh in newest {
                        let (mu, bias) = init.scheme(i, fresh);
                        for _ in 0..k {
                            w.push(draw(mu)?);
                        }
                        b.push(bias);
                    }
                }
                (Tensor::matrix(l * k, k, w)?, Tensor::matrix(1, l * k, b)?)
            }
        };
        layers.push([
            Parameter::new(format!("vote{i}.w"), w),
            Parameter::new(format!("vote{i}.b"), b),
        ]);
    }
    Ok(VoteState {
        mode,
        candidates: k,
        widths: widths.to_vec(),
        init: *init,
        layers,
        forced: None,
    })
}

impl VoteState {
    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flatten()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flatten()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<[Var; 2]> {
        self.layers.iter().map(|[w, b]| [tape.param(w), tape.param(b)]).collect()
    }

    /// Mixes the candidate outputs of layer `i`. Returns the composite and
    /// the vote weights averaged over rows (and units), one per candidate.
    pub fn mix(&self, tape: &mut Tape, i: usize, bound: &[Var; 2], parts: &[Var]) -> Result<(Var, Vec<f64>)> {
        let k = self.candidates;
        if parts.len() != k {
            return Err(Error::Config(format!("{} candidates voted with {k}-way weights", parts.len())));
        }
        let width = self.widths[i];
        for &p in parts {
            if tape.cols(p) != width {
                return Err(Error::Config(format!(
                    "layer {i}: candidate width {} does not match {width}",
                    tape.cols(p)
                )));
            }
        }
        if let Some(f) = self.forced {
            let mut onehot = vec![0.0; k];
            onehot[f] = 1.0;
            let probs = tape.row(onehot.clone());
            return Ok((tape.mix(probs, parts)?, onehot));
        }
        match self.mode {
            VoteMode::Layer => {
                let cat = tape.concat(parts)?;
                let scores = tape.affine(cat, bound[0], Some(bound[1]))?;
                let probs = tape.softmax(scores);
                let mean = column_means(tape.value(probs), k);
                Ok((tape.mix(probs, parts)?, mean))
            }
            VoteMode::Unit => {
                let out = tape.unit_vote(parts, bound[0], bound[1])?;
                let probs = tape.unit_vote_probs(out).expect("unit_vote node");
                Ok((out, column_means(probs, k)))
            }
        }
    }
}

fn column_means(values: &[f64], k: usize) -> Vec<f64> {
    let n = values.len() / k;
    let mut out = vec![0.0; k];
    for row in values.chunks(k) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter().map(|v| v / n as f64).collect()
}
