//! Reward-map images as binary PPM.

use std::fs;
use std::path::Path;

use crate::engine::RewardMapSample;
use crate::env::{ActionPoint, Screen};
use crate::error::{Error, Result};

/// Red for predicted reward 1, blue for 0.
pub fn color(v: f64) -> [u8; 3] {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    [(255.0 * v).round() as u8, 0, (255.0 * (1.0 - v)).round() as u8]
}

/// Value per screen pixel taken from the nearest candidate; ties go to the
/// candidate listed first.
pub fn rasterize(candidates: &[ActionPoint], values: &[f64], screen: Screen) -> Result<Vec<f64>> {
    if candidates.is_empty() || candidates.len() != values.len() {
        return Err(Error::Input(format!(
            "{} candidates with {} values",
            candidates.len(),
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(screen.cells());
    for i in 0..screen.cells() {
        let p = screen.point(i);
        let mut best = (u64::MAX, 0);
        for (k, c) in candidates.iter().enumerate() {
            let dx = p.x.abs_diff(c.x) as u64;
            let dy = p.y.abs_diff(c.y) as u64;
            let d = dx * dx + dy * dy;
            if d < best.0 {
                best = (d, k);
            }
        }
        out.push(values[best.1]);
    }
    Ok(out)
}

pub fn ppm(pixels: &[f64], screen: Screen) -> Vec<u8> {
    let mut bytes = format!("P6\n{} {}\n255\n", screen.width, screen.height).into_bytes();
    for &v in pixels {
        bytes.extend_from_slice(&color(v));
    }
    bytes
}

/// Writes map `offset` of `sample` to `path`.
pub fn render_reward_map(sample: &RewardMapSample, offset: usize, screen: Screen, path: &Path) -> Result<()> {
    if offset >= sample.probabilities.len() {
        return Err(Error::Input(format!(
            "map {offset} requested from a sample with {}",
            sample.probabilities.len()
        )));
    }
    let pixels = rasterize(&sample.candidates, &sample.map(offset), screen)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, ppm(&pixels, screen)).map_err(|e| Error::io(path, e))
}
