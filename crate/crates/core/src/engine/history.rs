use std::collections::VecDeque;
use std::sync::Arc;

use crate::backbone::Encoding;
use crate::error::{Error, Result};

/// The last `k_b + 1` scene encodings and the last `k_b` executed actions.
/// Slots not yet filled read as zeros with a cleared validity bit.
#[derive(Clone, Debug)]
pub struct HistoryBuffer {
    k_b: usize,
    frame_width: usize,
    spatial_width: usize,
    scenes: VecDeque<Option<Arc<Encoding>>>,
    actions: VecDeque<Option<[f64; 2]>>,
}

impl HistoryBuffer {
    pub fn new(k_b: usize, frame_width: usize, spatial_width: usize) -> Self {
        Self {
            k_b,
            frame_width,
            spatial_width,
            scenes: std::iter::repeat_n(None, k_b + 1).collect(),
            actions: std::iter::repeat_n(None, k_b).collect(),
        }
    }

    pub fn k_b(&self) -> usize {
        self.k_b
    }

    pub fn push_frame(&mut self, encoding: Arc<Encoding>) -> Result<()> {
        if encoding.scene.len() != self.frame_width {
            return Err(Error::Input(format!(
                "encoding has {} values, history expects {}",
                encoding.scene.len(),
                self.frame_width
            )));
        }
        if self.spatial_width > 0 && encoding.spatial.len() != self.spatial_width {
            return Err(Error::Input(format!(
                "spatial map has {} values, history expects {}",
                encoding.spatial.len(),
                self.spatial_width
            )));
        }
        self.scenes.pop_front();
        self.scenes.push_back(Some(encoding));
        Ok(())
    }

    /// Records an executed action in centre-relative coordinates.
    pub fn push_action(&mut self, a: [f64; 2]) {
        if self.k_b == 0 {
            return;
        }
        self.actions.pop_front();
        self.actions.push_back(Some(a));
    }

    /// `Ψ_{t-k_b} ⊕ … ⊕ Ψ_t`.
    pub fn scene_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity((self.k_b + 1) * self.frame_width);
        for s in &self.scenes {
            match s {
                Some(e) => out.extend_from_slice(&e.scene),
                None => out.extend(std::iter::repeat_n(0.0, self.frame_width)),
            }
        }
        out
    }

    /// Spatial map of the current frame.
    pub fn spatial(&self) -> Vec<f64> {
        if self.spatial_width == 0 {
            return Vec::new();
        }
        match self.scenes.back().and_then(|s| s.as_ref()) {
            Some(e) => e.spatial.clone(),
            None => vec![0.0; self.spatial_width],
        }
    }

    /// Action block for one candidate: history points, the candidate, and
    /// the history validity bits.
    pub fn action_row(&self, candidate: [f64; 2], out: &mut Vec<f64>) {
        for a in &self.actions {
            out.extend_from_slice(&a.unwrap_or([0.0, 0.0]));
        }
        out.extend_from_slice(&candidate);
        for a in &self.actions {
            out.push(if a.is_some() { 1.0 } else { 0.0 });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(v: f64) -> Arc<Encoding> {
        Arc::new(Encoding {
            scene: vec![v; 2],
            spatial: vec![v; 3],
            spatial_dims: (1, 1, 3),
        })
    }

    #[test]
    fn ring_semantics_and_padding() {
        let mut h = HistoryBuffer::new(1, 2, 3);
        assert_eq!(h.scene_vector(), vec![0.0; 4]);
        let mut row = Vec::new();
        h.action_row([0.5, -0.5], &mut row);
        assert_eq!(row, vec![0.0, 0.0, 0.5, -0.5, 0.0]);

        h.push_frame(enc(1.0)).unwrap();
        assert_eq!(h.scene_vector(), vec![0.0, 0.0, 1.0, 1.0]);
        h.push_frame(enc(2.0)).unwrap();
        h.push_frame(enc(3.0)).unwrap();
        assert_eq!(h.scene_vector(), vec![2.0, 2.0, 3.0, 3.0]);
        assert_eq!(h.spatial(), vec![3.0; 3]);

        h.push_action([0.1, 0.2]);
        h.push_action([0.3, 0.4]);
        let mut row = Vec::new();
        h.action_row([0.0, 1.0], &mut row);
        assert_eq!(row, vec![0.3, 0.4, 0.0, 1.0, 1.0]);
        assert!(h.push_frame(Arc::new(Encoding {
            scene: vec![0.0; 5],
            spatial: vec![],
            spatial_dims: (0, 0, 0)
        }))
        .is_err());
    }

    #[test]
    fn zero_history() {
        let mut h = HistoryBuffer::new(0, 2, 0);
        h.push_frame(enc(4.0)).unwrap();
        h.push_action([1.0, 1.0]);
        assert_eq!(h.scene_vector(), vec![4.0, 4.0]);
        let mut row = Vec::new();
        h.action_row([0.2, 0.3], &mut row);
        assert_eq!(row, vec![0.2, 0.3]);
    }
}
