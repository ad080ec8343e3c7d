//! Reverse-mode differentiation over an explicit, append-only tape.
//!
//! Every value on the tape is a row-major matrix. Binary operations
//! broadcast an operand with a single row across the other operand's rows;
//! the backward pass sums the broadcast rows back down. A tape is built per
//! forward pass and thrown away afterwards.

use super::activation::{sigmoid, Activation};
use super::gemm::{gemm, View};
use super::tensor::{Parameter, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One supervised entry of a logit matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pick {
    pub row: usize,
    pub col: usize,
    pub target: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    AffineJoin {
        shared: Var,
        rows: Var,
        w: Var,
        b: Option<Var>,
    },
    Activate(Activation, Var),
    Mul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Columns {
        x: Var,
        start: usize,
    },
    RepeatRows {
        x: Var,
        times: usize,
    },
    Reshape(Var),
    Softmax(Var),
    Mix {
        probs: Var,
        parts: Vec<Var>,
    },
    UnitVote {
        parts: Vec<Var>,
        w: Var,
        b: Var,
        probs: Vec<f64>,
    },
    SigmoidXent {
        logits: Var,
        picks: Vec<Pick>,
    },
    ProbToLogit {
        x: Var,
        delta: f64,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// The gradient, or zeros when `v` did not influence the output.
    pub fn get_or_zero(&self, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.lens[v.0]],
        }
    }
}

fn broadcast(a: usize, b: usize) -> Result<usize> {
    if a == b || b == 1 {
        Ok(a)
    } else if a == 1 {
        Ok(b)
    } else {
        Err(Error::Config(format!("cannot broadcast {a} rows against {b} rows")))
    }
}

#[inline]
fn bix(rows: usize, r: usize) -> usize {
    if rows == 1 {
        0
    } else {
        r
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var> {
        if rows * cols != values.len() {
            return Err(Error::Config(format!(
                "leaf of {rows}×{cols} given {} values",
                values.len()
            )));
        }
        Ok(self.push(rows, cols, values, Op::Leaf))
    }

    pub fn row(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(1, n, values, Op::Leaf)
    }

    pub fn tensor(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.values().to_vec(), Op::Leaf)
    }

    pub fn param(&mut self, p: &Parameter) -> Var {
        self.tensor(&p.tensor)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].rows
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].cols
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("node shape is consistent")
    }

    /// Softmax weights stored by a [`Tape::unit_vote`] node, laid out `rows × units × parts`.
    pub fn unit_vote_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::UnitVote { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// `x · wᵀ + b` for `x: R×in`, `w: out×in`, `b: 1×out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, inp) = self.shape(x);
        let (out, w_in) = self.shape(w);
        if inp != w_in {
            return Err(Error::Config(format!(
                "affine: input width {inp} does not match weight {out}×{w_in}"
            )));
        }
        self.check_bias(b, out)?;
        let mut y = vec![0.0; rows * out];
        gemm(
            rows,
            inp,
            out,
            View::rows(self.value(x), inp),
            View::transposed(self.value(w), inp),
            0.0,
            &mut y,
            out,
        );
        if let Some(b) = b {
            let bv = self.value(b);
            for r in 0..rows {
                for (o, bo) in y[r * out..(r + 1) * out].iter_mut().zip(bv) {
                    *o += bo;
                }
            }
        }
        Ok(self.push(rows, out, y, Op::Affine { x, w, b }))
    }

    fn check_bias(&self, b: Option<Var>, out: usize) -> Result<()> {
        if let Some(b) = b {
            if self.rows(b) * self.cols(b) != out {
                return Err(Error::Config(format!(
                    "bias has {} values, layer has {out} outputs",
                    self.rows(b) * self.cols(b)
                )));
            }
        }
        Ok(())
    }

    /// `w · (shared ⊕ rows) + b` where `shared` has one row (broadcast) or
    /// as many rows as `rows`. The shared block is multiplied once.
    pub fn affine_join(&mut self, shared: Var, rows: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sr, m) = self.shape(shared);
        let (n, k) = self.shape(rows);
        let (out, w_in) = self.shape(w);
        if w_in != m + k {
            return Err(Error::Config(format!(
                "affine_join: weight {out}×{w_in} does not match {m}+{k} inputs"
            )));
        }
        if sr != 1 && sr != n {
            return Err(Error::Config(format!(
                "affine_join: shared block has {sr} rows, per-row block has {n}"
            )));
        }
        self.check_bias(b, out)?;
        let wv = self.value(w);
        let mut s = vec![0.0; sr * out];
        gemm(
            sr,
            m,
            out,
            View::rows(self.value(shared), m),
            View {
                data: wv,
                row_stride: 1,
                col_stride: w_in,
            },
            0.0,
            &mut s,
            out,
        );
        let mut y = vec![0.0; n * out];
        if k > 0 {
            gemm(
                n,
                k,
                out,
                View::rows(self.value(rows), k),
                View {
                    data: &wv[m..],
                    row_stride: 1,
                    col_stride: w_in,
                },
                0.0,
                &mut y,
                out,
            );
        }
        let bv = b.map(|b| self.value(b).to_vec());
        for r in 0..n {
            let srow = &s[bix(sr, r) * out..(bix(sr, r) + 1) * out];
            let yrow = &mut y[r * out..(r + 1) * out];
            for o in 0..out {
                yrow[o] += srow[o];
                if let Some(bv) = &bv {
                    yrow[o] += bv[o];
                }
            }
        }
        Ok(self.push(n, out, y, Op::AffineJoin { shared, rows, w, b }))
    }

    pub fn activate(&mut self, act: Activation, x: Var) -> Var {
        let (rows, n) = self.shape(x);
        let f = act.width_factor();
        let mut y = vec![0.0; rows * n * f];
        {
            let xv = self.value(x);
            for r in 0..rows {
                act.forward_row(&xv[r * n..(r + 1) * n], &mut y[r * n * f..(r + 1) * n * f]);
            }
        }
        self.push(rows, n * f, y, Op::Activate(act, x))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(usize, usize, Vec<f64>)> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != cb {
            return Err(Error::Config(format!("elementwise op on widths {ca} and {cb}")));
        }
        let rows = broadcast(ra, rb)?;
        let av = self.value(a);
        let bv = self.value(b);
        let mut y = vec![0.0; rows * ca];
        for r in 0..rows {
            let (ia, ib) = (bix(ra, r) * ca, bix(rb, r) * ca);
            for c in 0..ca {
                y[r * ca + c] = f(av[ia + c], bv[ib + c]);
            }
        }
        Ok((rows, ca, y))
    }

    /// Elementwise product with row broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (rows, cols, y) = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(rows, cols, y, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (rows, cols, y) = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(rows, cols, y, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let (rows, cols) = self.shape(x);
        let y = self.value(x).iter().map(|v| v * c).collect();
        self.push(rows, cols, y, Op::Scale(x, c))
    }

    /// Column-wise concatenation; single-row parts broadcast.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Config("concat of nothing".into()));
        }
        let mut rows = 1;
        for &p in parts {
            rows = broadcast(rows, self.rows(p))?;
        }
        let cols: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut y = vec![0.0; rows * cols];
        let mut off = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            let pv = self.value(p);
            for r in 0..rows {
                let src = bix(pr, r) * pc;
                y[r * cols + off..r * cols + off + pc].copy_from_slice(&pv[src..src + pc]);
            }
            off += pc;
        }
        Ok(self.push(rows, cols, y, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end` of `x`.
    pub fn columns(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if start > end || end > cols {
            return Err(Error::Config(format!("column range {start}..{end} outside width {cols}")));
        }
        let w = end - start;
        let xv = self.value(x);
        let mut y = Vec::with_capacity(rows * w);
        for r in 0..rows {
            y.extend_from_slice(&xv[r * cols + start..r * cols + end]);
        }
        Ok(self.push(rows, w, y, Op::Columns { x, start }))
    }

    /// Repeats every row `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let (rows, cols) = self.shape(x);
        let xv = self.value(x);
        let mut y = Vec::with_capacity(rows * times * cols);
        for r in 0..rows {
            for _ in 0..times {
                y.extend_from_slice(&xv[r * cols..(r + 1) * cols]);
            }
        }
        self.push(rows * times, cols, y, Op::RepeatRows { x, times })
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r * c != rows * cols {
            return Err(Error::Config(format!("cannot reshape {r}×{c} into {rows}×{cols}")));
        }
        let y = self.value(x).to_vec();
        Ok(self.push(rows, cols, y, Op::Reshape(x)))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let xv = self.value(x);
        let mut y = vec![0.0; rows * cols];
        for r in 0..rows {
            softmax_into(&xv[r * cols..(r + 1) * cols], &mut y[r * cols..(r + 1) * cols]);
        }
        self.push(rows, cols, y, Op::Softmax(x))
    }

    /// `Σ_k probs[:, k] · parts[k]`; `probs` is `R×K` (or one broadcast row).
    pub fn mix(&mut self, probs: Var, parts: &[Var]) -> Result<Var> {
        let (pr, k) = self.shape(probs);
        if k != parts.len() || k == 0 {
            return Err(Error::Config(format!("mix: {k} weights for {} parts", parts.len())));
        }
        let cols = self.cols(parts[0]);
        let mut rows = pr;
        for &p in parts {
            if self.cols(p) != cols {
                return Err(Error::Config("mix: parts differ in width".into()));
            }
            rows = broadcast(rows, self.rows(p))?;
        }
        let pv = self.value(probs);
        let mut y = vec![0.0; rows * cols];
        for (ki, &part) in parts.iter().enumerate() {
            let prow = self.rows(part);
            let xv = self.value(part);
            for r in 0..rows {
                let w = pv[bix(pr, r) * k + ki];
                let src = &xv[bix(prow, r) * cols..(bix(prow, r) + 1) * cols];
                for (o, s) in y[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(self.push(
            rows,
            cols,
            y,
            Op::Mix {
                probs,
                parts: parts.to_vec(),
            },
        ))
    }

    /// Per-unit voting. For every row `r` and unit `j`, the scores
    /// `s = W_j · (parts[0][r,j], …, parts[K-1][r,j]) + b_j` are soft-maxed
    /// into weights that mix the parts' unit `j`. `w` holds `L·K·K` values
    /// laid out `[unit][score][part]`; `b` holds `L·K`.
    pub fn unit_vote(&mut self, parts: &[Var], w: Var, b: Var) -> Result<Var> {
        let k = parts.len();
        if k == 0 {
            return Err(Error::Config("unit_vote of nothing".into()));
        }
        let cols = self.cols(parts[0]);
        let mut rows = 1;
        for &p in parts {
            if self.cols(p) != cols {
                return Err(Error::Config("unit_vote: parts differ in width".into()));
            }
            rows = broadcast(rows, self.rows(p))?;
        }
        let wl = self.rows(w) * self.cols(w);
        let bl = self.rows(b) * self.cols(b);
        if wl != cols * k * k || bl != cols * k {
            return Err(Error::Config(format!(
                "unit_vote: expected {}+{} vote parameters for {cols} units × {k} parts, got {wl}+{bl}",
                cols * k * k,
                cols * k
            )));
        }
        let wv = self.value(w);
        let bv = self.value(b);
        let mut probs = vec![0.0; rows * cols * k];
        let mut y = vec![0.0; rows * cols];
        let mut acts = vec![0.0; k];
        let mut scores = vec![0.0; k];
        for r in 0..rows {
            for j in 0..cols {
                for (ki, &p) in parts.iter().enumerate() {
                    acts[ki] = self.value(p)[bix(self.rows(p), r) * cols + j];
                }
                for s in 0..k {
                    let wrow = &wv[(j * k + s) * k..(j * k + s + 1) * k];
                    scores[s] = bv[j * k + s] + wrow.iter().zip(&acts).map(|(a, b)| a * b).sum::<f64>();
                }
                let pr = &mut probs[(r * cols + j) * k..(r * cols + j + 1) * k];
                softmax_into(&scores, pr);
                let mut acc = 0.0;
                for ki in 0..k {
                    acc += pr[ki] * acts[ki];
                }
                y[r * cols + j] = acc;
            }
        }
        Ok(self.push(
            rows,
            cols,
            y,
            Op::UnitVote {
                parts: parts.to_vec(),
                w,
                b,
                probs,
            },
        ))
    }

    /// Mean sigmoid cross-entropy over the picked logits.
    pub fn sigmoid_xent(&mut self, logits: Var, picks: Vec<Pick>) -> Result<Var> {
        if picks.is_empty() {
            return Err(Error::Input("sigmoid_xent needs at least one target".into()));
        }
        let (rows, cols) = self.shape(logits);
        let lv = self.value(logits);
        let mut total = 0.0;
        for p in &picks {
            if p.row >= rows || p.col >= cols {
                return Err(Error::Input(format!("pick ({}, {}) outside {rows}×{cols}", p.row, p.col)));
            }
            total += sigmoid_cross_entropy_value(lv[p.row * cols + p.col], p.target)?;
        }
        let loss = total / picks.len() as f64;
        Ok(self.push(1, 1, vec![loss], Op::SigmoidXent { logits, picks }))
    }

    /// Maps probabilities to logits; outside `[delta, 1-delta]` the map is
    /// continued linearly so the gradient never vanishes.
    pub fn prob_to_logit(&mut self, x: Var, delta: f64) -> Var {
        let (rows, cols) = self.shape(x);
        let y = self.value(x).iter().map(|&p| extended_logit(p, delta).0).collect();
        self.push(rows, cols, y, Op::ProbToLogit { x, delta })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(x))
    }

    /// Back-propagates from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Config("backward needs a scalar output".into()));
        }
        Ok(self.backward_with(loss, vec![1.0]))
    }

    /// Back-propagates an arbitrary output cotangent `seed`.
    pub fn backward_with(&self, out: Var, seed: Vec<f64>) -> Gradients {
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        assert_eq!(seed.len(), lens[out.0], "seed length must match output");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let (lo, hi) = grads.split_at_mut(i);
            let Some(dy) = hi[0].as_deref() else { continue };
            self.backward_node(i, dy, lo, &lens);
        }
        Gradients { grads, lens }
    }

    fn backward_node(&self, i: usize, dy: &[f64], g: &mut [Option<Vec<f64>>], lens: &[usize]) {
        fn acc<'a>(g: &'a mut [Option<Vec<f64>>], lens: &[usize], v: Var) -> &'a mut Vec<f64> {
            g[v.0].get_or_insert_with(|| vec![0.0; lens[v.0]])
        }
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (_, inp) = self.shape(*x);
                let out = cols;
                gemm(
                    rows,
                    out,
                    inp,
                    View::rows(dy, out),
                    View::rows(self.value(*w), inp),
                    1.0,
                    acc(g, lens, *x),
                    inp,
                );
                gemm(
                    out,
                    rows,
                    inp,
                    View::transposed(dy, out),
                    View::rows(self.value(*x), inp),
                    1.0,
                    acc(g, lens, *w),
                    inp,
                );
                if let Some(b) = b {
                    let db = acc(g, lens, *b);
                    for r in 0..rows {
                        for o in 0..out {
                            db[o] += dy[r * out + o];
                        }
                    }
                }
            }
            Op::AffineJoin { shared, rows: per_row, w, b } => {
                let (sr, m) = self.shape(*shared);
                let k = self.cols(*per_row);
                let out = cols;
                let w_in = m + k;
                let wv = self.value(*w);
                // Cotangent seen by the shared block (summed when broadcast).
                let ds: Vec<f64> = if sr == 1 {
                    let mut s = vec![0.0; out];
                    for r in 0..rows {
                        for o in 0..out {
                            s[o] += dy[r * out + o];
                        }
                    }
                    s
                } else {
                    dy.to_vec()
                };
                if let Some(b) = b {
                    let db = acc(g, lens, *b);
                    for r in 0..sr {
                        for o in 0..out {
                            db[o] += ds[r * out + o];
                        }
                    }
                }
                {
                    let dw = acc(g, lens, *w);
                    gemm(
                        out,
                        sr,
                        m,
                        View::transposed(&ds, out),
                        View::rows(self.value(*shared), m),
                        1.0,
                        dw,
                        w_in,
                    );
                    if k > 0 {
                        gemm(
                            out,
                            rows,
                            k,
                            View::transposed(dy, out),
                            View::rows(self.value(*per_row), k),
                            1.0,
                            &mut dw[m..],
                            w_in,
                        );
                    }
                }
                gemm(
                    sr,
                    out,
                    m,
                    View::rows(&ds, out),
                    View {
                        data: wv,
                        row_stride: w_in,
                        col_stride: 1,
                    },
                    1.0,
                    acc(g, lens, *shared),
                    m,
                );
                if k > 0 {
                    gemm(
                        rows,
                        out,
                        k,
                        View::rows(dy, out),
                        View {
                            data: &wv[m..],
                            row_stride: w_in,
                            col_stride: 1,
                        },
                        1.0,
                        acc(g, lens, *per_row),
                        k,
                    );
                }
            }
            Op::Activate(act, x) => {
                let n = self.cols(*x);
                let xv = self.value(*x);
                let dx = acc(g, lens, *x);
                for r in 0..rows {
                    act.backward_row(
                        &xv[r * n..(r + 1) * n],
                        &node.value[r * cols..(r + 1) * cols],
                        &dy[r * cols..(r + 1) * cols],
                        &mut dx[r * n..(r + 1) * n],
                    );
                }
            }
            Op::Mul(a, b) => {
                let (ra, rb) = (self.rows(*a), self.rows(*b));
                let av = self.value(*a).to_vec();
                let bv = self.value(*b).to_vec();
                {
                    let da = acc(g, lens, *a);
                    for r in 0..rows {
                        for c in 0..cols {
                            da[bix(ra, r) * cols + c] += dy[r * cols + c] * bv[bix(rb, r) * cols + c];
                        }
                    }
                }
                let db = acc(g, lens, *b);
                for r in 0..rows {
                    for c in 0..cols {
                        db[bix(rb, r) * cols + c] += dy[r * cols + c] * av[bix(ra, r) * cols + c];
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    let rv = self.rows(v);
                    let d = acc(g, lens, v);
                    for r in 0..rows {
                        for c in 0..cols {
                            d[bix(rv, r) * cols + c] += dy[r * cols + c];
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                let dx = acc(g, lens, *x);
                for (d, &gy) in dx.iter_mut().zip(dy) {
                    *d += c * gy;
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    let d = acc(g, lens, p);
                    for r in 0..rows {
                        let dst = bix(pr, r) * pc;
                        for c in 0..pc {
                            d[dst + c] += dy[r * cols + off + c];
                        }
                    }
                    off += pc;
                }
            }
            Op::Columns { x, start } => {
                let xc = self.cols(*x);
                let dx = acc(g, lens, *x);
                for r in 0..rows {
                    for c in 0..cols {
                        dx[r * xc + start + c] += dy[r * cols + c];
                    }
                }
            }
            Op::RepeatRows { x, times } => {
                let dx = acc(g, lens, *x);
                for r in 0..rows {
                    let src = r / times;
                    for c in 0..cols {
                        dx[src * cols + c] += dy[r * cols + c];
                    }
                }
            }
            Op::Reshape(x) => {
                let dx = acc(g, lens, *x);
                for (d, &gy) in dx.iter_mut().zip(dy) {
                    *d += gy;
                }
            }
            Op::Softmax(x) => {
                let dx = acc(g, lens, *x);
                for r in 0..rows {
                    let y = &node.value[r * cols..(r + 1) * cols];
                    let gy = &dy[r * cols..(r + 1) * cols];
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] += y[c] * (gy[c] - dot);
                    }
                }
            }
            Op::Mix { probs, parts } => {
                let (pr, k) = self.shape(*probs);
                let pv = self.value(*probs).to_vec();
                let mut dp = vec![0.0; pr * k];
                for (ki, &part) in parts.iter().enumerate() {
                    let prow = self.rows(part);
                    let xv = self.value(part);
                    for r in 0..rows {
                        let src = bix(prow, r) * cols;
                        let gy = &dy[r * cols..(r + 1) * cols];
                        dp[bix(pr, r) * k + ki] += gy.iter().zip(&xv[src..src + cols]).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let w_at = |r: usize| pv[bix(pr, r) * k + ki];
                    let d = acc(g, lens, part);
                    for r in 0..rows {
                        let w = w_at(r);
                        let dst = bix(prow, r) * cols;
                        for c in 0..cols {
                            d[dst + c] += w * dy[r * cols + c];
                        }
                    }
                }
                let d = acc(g, lens, *probs);
                for (a, b) in d.iter_mut().zip(&dp) {
                    *a += b;
                }
            }
            Op::UnitVote { parts, w, b, probs } => {
                let k = parts.len();
                let wv = self.value(*w).to_vec();
                let mut dw = vec![0.0; wv.len()];
                let mut db = vec![0.0; cols * k];
                let mut dparts: Vec<Vec<f64>> = parts.iter().map(|&p| vec![0.0; lens[p.0]]).collect();
                let mut acts = vec![0.0; k];
                let mut ds = vec![0.0; k];
                for r in 0..rows {
                    for j in 0..cols {
                        let gy = dy[r * cols + j];
                        if gy == 0.0 {
                            continue;
                        }
                        for (ki, &p) in parts.iter().enumerate() {
                            acts[ki] = self.value(p)[bix(self.rows(p), r) * cols + j];
                        }
                        let pr = &probs[(r * cols + j) * k..(r * cols + j + 1) * k];
                        // d out / d p_k = act_k
                        let dot: f64 = (0..k).map(|s| pr[s] * gy * acts[s]).sum();
                        for s in 0..k {
                            ds[s] = pr[s] * (gy * acts[s] - dot);
                        }
                        for (ki, &p) in parts.iter().enumerate() {
                            let mut d = pr[ki] * gy;
                            for s in 0..k {
                                d += ds[s] * wv[(j * k + s) * k + ki];
                            }
                            dparts[ki][bix(self.rows(p), r) * cols + j] += d;
                        }
                        for s in 0..k {
                            db[j * k + s] += ds[s];
                            for ki in 0..k {
                                dw[(j * k + s) * k + ki] += ds[s] * acts[ki];
                            }
                        }
                    }
                }
                for (&p, d) in parts.iter().zip(dparts) {
                    let t = acc(g, lens, p);
                    for (a, b) in t.iter_mut().zip(d) {
                        *a += b;
                    }
                }
                for (v, d) in [(*w, dw), (*b, db)] {
                    let t = acc(g, lens, v);
                    for (a, b) in t.iter_mut().zip(d) {
                        *a += b;
                    }
                }
            }
            Op::SigmoidXent { logits, picks } => {
                let lc = self.cols(*logits);
                let lv = self.value(*logits).to_vec();
                let scale = dy[0] / picks.len() as f64;
                let d = acc(g, lens, *logits);
                for p in picks {
                    let idx = p.row * lc + p.col;
                    d[idx] += scale * (sigmoid(lv[idx]) - p.target);
                }
            }
            Op::ProbToLogit { x, delta } => {
                let xv = self.value(*x).to_vec();
                let dx = acc(g, lens, *x);
                for (idx, &p) in xv.iter().enumerate() {
                    dx[idx] += dy[idx] * extended_logit(p, *delta).1;
                }
            }
            Op::Sum(x) => {
                let dx = acc(g, lens, *x);
                for d in dx.iter_mut() {
                    *d += dy[0];
                }
            }
        }
    }
}

pub(crate) fn softmax_into(x: &[f64], y: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in y.iter_mut().zip(x) {
        *o = (v - max).exp();
        z += *o;
    }
    for o in y.iter_mut() {
        *o /= z;
    }
}

/// Value and derivative of the linearly continued logit.
pub(crate) fn extended_logit(p: f64, delta: f64) -> (f64, f64) {
    let lo = delta;
    let hi = 1.0 - delta;
    let edge_slope = 1.0 / (delta * (1.0 - delta));
    if p < lo {
        ((lo / hi).ln() + (p - lo) * edge_slope, edge_slope)
    } else if p > hi {
        ((hi / lo).ln() + (p - hi) * edge_slope, edge_slope)
    } else {
        ((p / (1.0 - p)).ln(), 1.0 / (p * (1.0 - p)))
    }
}

/// `-[t·ln σ(z) + (1-t)·ln(1-σ(z))]` in the overflow-free form.
pub fn sigmoid_cross_entropy_value(z: f64, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Input(format!("cross-entropy target {target} outside [0, 1]")));
    }
    Ok(z.max(0.0) - z * target + (-z.abs()).exp().ln_1p())
}
