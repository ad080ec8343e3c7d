//! Channels-last 2-D convolution and average pooling, forward and backward.

use crate::diffcore::gemm::{gemm, View};

/// Geometry of one convolution over an `h × w × c_in` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Width of one unrolled receptive field.
    pub fn patch(&self) -> usize {
        self.kernel * self.kernel * self.c_in
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unrolls receptive fields into rows of `kernel·kernel·c_in` values.
pub fn im2col(s: &ConvShape, x: &[f64]) -> Vec<f64> {
    let (oh, ow, k, p) = (s.out_h(), s.out_w(), s.kernel, s.patch());
    let mut cols = vec![0.0; oh * ow * p];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * p..(oy * ow + ox + 1) * p];
            for ky in 0..k {
                let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                if iy < 0 || iy >= s.h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                    if ix < 0 || ix >= s.w as isize {
                        continue;
                    }
                    let src = (iy as usize * s.w + ix as usize) * s.c_in;
                    let dst = (ky * k + kx) * s.c_in;
                    row[dst..dst + s.c_in].copy_from_slice(&x[src..src + s.c_in]);
                }
            }
        }
    }
    cols
}

fn col2im(s: &ConvShape, cols: &[f64], dx: &mut [f64]) {
    let (oh, ow, k, p) = (s.out_h(), s.out_w(), s.kernel, s.patch());
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * p..(oy * ow + ox + 1) * p];
            for ky in 0..k {
                let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                if iy < 0 || iy >= s.h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                    if ix < 0 || ix >= s.w as isize {
                        continue;
                    }
                    let d = (iy as usize * s.w + ix as usize) * s.c_in;
                    let src = (ky * k + kx) * s.c_in;
                    for c in 0..s.c_in {
                        dx[d + c] += row[src + c];
                    }
                }
            }
        }
    }
}

/// `y = conv(x, w) + b`; `w` is `c_out × patch`. Returns `y` and the unrolled
/// input, which the backward pass reuses.
pub fn conv_forward(s: &ConvShape, x: &[f64], w: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cols = im2col(s, x);
    let n = s.positions();
    let mut y = vec![0.0; n * s.c_out];
    for r in 0..n {
        y[r * s.c_out..(r + 1) * s.c_out].copy_from_slice(b);
    }
    gemm(
        n,
        s.patch(),
        s.c_out,
        View::rows(&cols, s.patch()),
        View::transposed(w, s.patch()),
        1.0,
        &mut y,
        s.c_out,
    );
    (y, cols)
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
pub fn conv_backward(
    s: &ConvShape,
    cols: &[f64],
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let n = s.positions();
    let p = s.patch();
    gemm(
        s.c_out,
        n,
        p,
        View::transposed(dy, s.c_out),
        View::rows(cols, p),
        1.0,
        dw,
        p,
    );
    for r in 0..n {
        for (g, d) in db.iter_mut().zip(&dy[r * s.c_out..(r + 1) * s.c_out]) {
            *g += d;
        }
    }
    if !want_dx {
        return None;
    }
    let mut dcols = vec![0.0; n * p];
    gemm(n, s.c_out, p, View::rows(dy, s.c_out), View::rows(w, p), 0.0, &mut dcols, p);
    let mut dx = vec![0.0; s.h * s.w * s.c_in];
    col2im(s, &dcols, &mut dx);
    Some(dx)
}

/// Non-overlapping `f × f` average pooling of an `h × w × c` map.
pub fn avg_pool(x: &[f64], h: usize, w: usize, c: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h / f, w / f);
    let mut y = vec![0.0; oh * ow * c];
    let norm = 1.0 / (f * f) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = (oy * ow + ox) * c;
            for dy in 0..f {
                for dx in 0..f {
                    let src = ((oy * f + dy) * w + ox * f + dx) * c;
                    for ch in 0..c {
                        y[dst + ch] += x[src + ch] * norm;
                    }
                }
            }
        }
    }
    y
}

pub fn avg_pool_backward(dy: &[f64], h: usize, w: usize, c: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h / f, w / f);
    let mut dx = vec![0.0; h * w * c];
    let norm = 1.0 / (f * f) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            let src = (oy * ow + ox) * c;
            for ddy in 0..f {
                for ddx in 0..f {
                    let dst = ((oy * f + ddy) * w + ox * f + ddx) * c;
                    for ch in 0..c {
                        dx[dst + ch] += dy[src + ch] * norm;
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(s: &ConvShape, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut y = Vec::new();
        for oy in 0..s.out_h() {
            for ox in 0..s.out_w() {
                for co in 0..s.c_out {
                    let mut acc = b[co];
                    for ky in 0..s.kernel {
                        for kx in 0..s.kernel {
                            let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                            let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                            if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                continue;
                            }
                            for ci in 0..s.c_in {
                                acc += w[co * s.patch() + (ky * s.kernel + kx) * s.c_in + ci]
                                    * x[(iy as usize * s.w + ix as usize) * s.c_in + ci];
                            }
                        }
                    }
                    y.push(acc);
                }
            }
        }
        y
    }

    fn shape() -> ConvShape {
        ConvShape {
            h: 7,
            w: 6,
            c_in: 2,
            c_out: 3,
            kernel: 3,
            stride: 2,
            pad: 1,
        }
    }

    #[test]
    fn forward_matches_direct_sum() {
        let s = shape();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<f64> = (0..s.h * s.w * s.c_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..s.c_out * s.patch()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = vec![0.1, -0.2, 0.3];
        let (y, _) = conv_forward(&s, &x, &w, &b);
        for (a, e) in y.iter().zip(naive(&s, &x, &w, &b)) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let s = shape();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..s.h * s.w * s.c_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..s.c_out * s.patch()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = vec![0.0; 3];
        let g: Vec<f64> = (0..s.out_h() * s.out_w() * s.c_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |x: &[f64], w: &[f64]| -> f64 {
            conv_forward(&s, x, w, &b).0.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let (_, cols) = conv_forward(&s, &x, &w, &b);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 3];
        let dx = conv_backward(&s, &cols, &w, &g, &mut dw, &mut db, true).unwrap();
        let h = 1e-5;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp, &w) - f(&xm, &w)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
        for i in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[i] += h;
            wm[i] -= h;
            let fd = (f(&x, &wp) - f(&x, &wm)) / (2.0 * h);
            assert!((fd - dw[i]).abs() < 1e-7);
        }
        let total: Vec<f64> = (0..3).map(|c| g.iter().skip(c).step_by(3).sum()).collect();
        for (a, e) in db.iter().zip(total) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..4 * 4 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = avg_pool(&x, 4, 4, 2, 2);
        let g: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dx = avg_pool_backward(&g, 4, 4, 2, 2);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
