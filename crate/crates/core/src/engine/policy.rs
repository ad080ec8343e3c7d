//! Candidate sampling and the map-to-policy pipeline: min-subtraction,
//! normalisation under a family `f`, and highest-variance map selection.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionPoint, Screen};
use crate::error::{Error, Result};

/// Draws `n` distinct grid points uniformly; `n` equal to the grid size
/// enumerates the grid in row-major order.
pub fn subsample_actions<R: Rng>(screen: Screen, n: usize, rng: &mut R) -> Result<Vec<ActionPoint>> {
    let cells = screen.cells();
    if n < 2 || n > cells {
        return Err(Error::Input(format!("cannot draw {n} candidates from {cells} cells")));
    }
    if n == cells {
        return Ok((0..cells).map(|i| screen.point(i)).collect());
    }
    Ok(index::sample(rng, cells, n).into_iter().map(|i| screen.point(i)).collect())
}

/// `values - min(values)`.
pub fn normalize_map(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    values.iter().map(|v| v - min).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistFamily {
    Identity,
    /// `exp(x / T)`; with `literal` set, `exp(-x / T)`.
    Boltzmann {
        temperature: f64,
        #[serde(default)]
        literal: bool,
    },
}

impl DistFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistFamily::Boltzmann { temperature, .. } if !(temperature > 0.0 && temperature.is_finite()) => {
                Err(Error::Config(format!("Boltzmann temperature must be positive, got {temperature}")))
            }
            _ => Ok(()),
        }
    }
}

/// Probability vector `f(v_i) / Σ f(v_j)`. Returns `true` alongside when the
/// mass was zero and the uniform distribution was used instead.
pub fn distify(values: &[f64], family: DistFamily) -> (Vec<f64>, bool) {
    let n = values.len();
    let weights: Vec<f64> = match family {
        DistFamily::Identity => values.iter().map(|v| v.max(0.0)).collect(),
        DistFamily::Boltzmann { temperature, literal } => {
            // Shifting by the extreme value leaves the ratios unchanged.
            let sign = if literal { -1.0 } else { 1.0 };
            let top = values.iter().map(|v| sign * v).fold(f64::NEG_INFINITY, f64::max);
            values.iter().map(|v| ((sign * v - top) / temperature).exp()).collect()
        }
    };
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        log::debug!("zero-mass reward map; using a uniform policy");
        return (vec![1.0 / n as f64; n], true);
    }
    (weights.iter().map(|w| w / total).collect(), false)
}

/// Population variance of a probability vector.
pub fn variance(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    p.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Index of the distribution with the largest variance; ties go to the
/// lowest index.
pub fn var_argmax(dists: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, d) in dists.iter().enumerate() {
        let v = variance(d);
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding left the total just under 1: take the last positive entry.
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn normalize_examples() {
        assert!(close(&normalize_map(&[0.2, 0.7, 0.5]), &[0.0, 0.5, 0.3]));
        assert_eq!(normalize_map(&[0.4; 5]), vec![0.0; 5]);
        assert_eq!(normalize_map(&[0.0, 0.5, 0.3]), vec![0.0, 0.5, 0.3]);
    }

    #[test]
    fn distify_examples() {
        let (p, fb) = distify(&[0.0, 0.5, 0.3], DistFamily::Identity);
        assert!(close(&p, &[0.0, 0.625, 0.375]) && !fb);
        let (p, _) = distify(&[0.7; 4], DistFamily::Identity);
        assert!(close(&p, &[0.25; 4]));
        let (p, fb) = distify(&[0.0; 4], DistFamily::Identity);
        assert!(close(&p, &[0.25; 4]) && fb);
        let cold = DistFamily::Boltzmann {
            temperature: 1e-3,
            literal: false,
        };
        let (p, _) = distify(&[0.0, 2.0, 1.0], cold);
        assert!(p[1] >= 0.999);
        let literal = DistFamily::Boltzmann {
            temperature: 1e-3,
            literal: true,
        };
        let (p, _) = distify(&[0.0, 2.0, 1.0], literal);
        assert!(p[0] >= 0.999);
        assert!(DistFamily::Boltzmann {
            temperature: 0.0,
            literal: false
        }
        .validate()
        .is_err());
    }

    #[test]
    fn var_argmax_examples() {
        let uniform = vec![0.25; 4];
        let hot = vec![0.0, 1.0, 0.0, 0.0];
        assert_eq!(var_argmax(&[uniform.clone(), hot.clone()]), 1);
        assert_eq!(var_argmax(&[hot.clone(), hot]), 0);
        assert_eq!(var_argmax(&[uniform.clone(), uniform]), 0);
    }

    #[test]
    fn subsample_contract() {
        let screen = Screen::square(8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = subsample_actions(screen, 64, &mut rng).unwrap();
        assert_eq!(all.len(), 64);
        for (i, p) in all.iter().enumerate() {
            assert_eq!(screen.index(*p), i);
        }
        let some = subsample_actions(screen, 20, &mut rng).unwrap();
        let mut idx: Vec<usize> = some.iter().map(|p| screen.index(*p)).collect();
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 20);
        assert!(subsample_actions(screen, 65, &mut rng).is_err());
        assert!(subsample_actions(screen, 1, &mut rng).is_err());
    }

    #[test]
    fn subsample_uniform_within_three_sigma() {
        let screen = Screen::square(8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (draws, n) = (100_000, 8);
        let mut counts = vec![0usize; 64];
        for _ in 0..draws / n {
            for p in subsample_actions(screen, n, &mut rng).unwrap() {
                counts[screen.index(p)] += 1;
            }
        }
        let p = n as f64 / 64.0;
        let trials = (draws / n) as f64;
        let (mean, sd) = (trials * p, (trials * p * (1.0 - p)).sqrt());
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd + 1.0, "{c} vs {mean}±{sd}");
        }
    }

    #[test]
    fn sampling_follows_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = [0.0, 1.0, 0.0];
        assert!((0..100).all(|_| sample_index(&p, &mut rng) == 1));
        let p = [0.2, 0.3, 0.5];
        let mut hits = [0usize; 3];
        for _ in 0..20_000 {
            hits[sample_index(&p, &mut rng)] += 1;
        }
        for (h, q) in hits.iter().zip(p) {
            assert!((*h as f64 / 20_000.0 - q).abs() < 0.02);
        }
    }
}
