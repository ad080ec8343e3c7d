//! Central-difference gradient checks for every differentiable operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use touchstream::backbone::conv::{avg_pool, avg_pool_backward, conv_backward, conv_forward, ConvShape};
use touchstream::diffcore::{sigmoid_cross_entropy_value, Activation, Pick, Tape, Var};
use touchstream::engine::module_gradients;
use touchstream::env::Paradigm;
use touchstream::zoo::{ArchitectureId, ModuleConfig, ModuleInput, ReMaPModule};

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely; central differences
/// cannot resolve them to four relative digits.
pub const FLOOR: f64 = 1e-4;
pub const CASES: usize = 100;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

#[derive(Debug, Default, Clone)]
pub struct Report {
    pub name: String,
    pub cases: usize,
    pub coords: usize,
    pub worst: f64,
}

impl Report {
    fn new(name: &str) -> Self {
        Self { name: name.into(), ..Self::default() }
    }

    fn see(&mut self, a: f64, n: f64) {
        self.coords += 1;
        let e = rel_error(a, n);
        if e > self.worst || e.is_nan() {
            self.worst = e;
        }
    }

    pub fn passed(&self) -> bool {
        self.cases == CASES && self.worst < TOLERANCE
    }
}

/// One random tape case: leaf shapes and values, and the graph on top.
struct Case {
    leaves: Vec<(usize, usize, Vec<f64>)>,
    build: Box<dyn Fn(&mut Tape, &[Var]) -> Var>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from `kinks` by `gap`.
fn away(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, kinks: &[f64], gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > gap) {
                break v;
            }
        })
        .collect()
}

/// Evaluates `sum(out ⊙ probe)` for the case.
fn eval(case: &Case, values: &[Vec<f64>], probe: &[f64]) -> (f64, Tape, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case
        .leaves
        .iter()
        .zip(values)
        .map(|((r, c, _), v)| tape.leaf(*r, *c, v.clone()).expect("leaf"))
        .collect();
    let out = (case.build)(&mut tape, &vars);
    let (r, c) = tape.shape(out);
    let p = tape.leaf(r, c, probe.to_vec()).expect("probe");
    let m = tape.mul(out, p).expect("probe shape");
    let s = tape.sum(m);
    (tape.value(s)[0], tape, vars, s)
}

fn check_case(report: &mut Report, case: Case, rng: &mut ChaCha8Rng) {
    let values: Vec<Vec<f64>> = case.leaves.iter().map(|l| l.2.clone()).collect();
    let (out_len, probe) = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = case
            .leaves
            .iter()
            .map(|(r, c, v)| tape.leaf(*r, *c, v.clone()).unwrap())
            .collect();
        let out = (case.build)(&mut tape, &vars);
        let n = tape.value(out).len();
        (n, uniform(rng, n, -1.0, 1.0))
    };
    assert_eq!(probe.len(), out_len);
    let (_, tape, vars, s) = eval(&case, &values, &probe);
    let grads = tape.backward(s).expect("scalar");
    for (li, v) in vars.iter().enumerate() {
        let g = grads.get_or_zero(*v);
        for i in 0..values[li].len() {
            let mut plus = values.clone();
            plus[li][i] += H;
            let mut minus = values.clone();
            minus[li][i] -= H;
            let n = (eval(&case, &plus, &probe).0 - eval(&case, &minus, &probe).0) / (2.0 * H);
            report.see(g[i], n);
        }
    }
    report.cases += 1;
}

fn run(name: &str, seed: u64, mut gen: impl FnMut(&mut ChaCha8Rng) -> Case) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report::new(name);
    for _ in 0..CASES {
        let case = gen(&mut rng);
        check_case(&mut report, case, &mut rng);
    }
    report
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..4), rng.random_range(1..5))
}

fn tape_ops() -> Vec<Report> {
    let mut out = Vec::new();
    out.push(run("affine", 1, |rng| {
        let (r, i) = dims(rng);
        let o = rng.random_range(1..4);
        let bias = rng.random_bool(0.5);
        let mut leaves = vec![(r, i, uniform(rng, r * i, -1.0, 1.0)), (o, i, uniform(rng, o * i, -1.0, 1.0))];
        if bias {
            leaves.push((1, o, uniform(rng, o, -1.0, 1.0)));
        }
        Case {
            leaves,
            build: Box::new(move |t, v| t.affine(v[0], v[1], v.get(2).copied()).unwrap()),
        }
    }));
    out.push(run("affine_join", 2, |rng| {
        let n = rng.random_range(1..4);
        let sr = if rng.random_bool(0.5) { 1 } else { n };
        let (m, k, o) = (rng.random_range(1..4), rng.random_range(0..4), rng.random_range(1..4));
        Case {
            leaves: vec![
                (sr, m, uniform(rng, sr * m, -1.0, 1.0)),
                (n, k, uniform(rng, n * k, -1.0, 1.0)),
                (o, m + k, uniform(rng, o * (m + k), -1.0, 1.0)),
                (1, o, uniform(rng, o, -1.0, 1.0)),
            ],
            build: Box::new(|t, v| t.affine_join(v[0], v[1], v[2], Some(v[3])).unwrap()),
        }
    }));
    let acts = [
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
    for (ai, act) in acts.into_iter().enumerate() {
        out.push(run(&format!("activate:{act}"), 10 + ai as u64, move |rng| {
            let (r, c) = dims(rng);
            Case {
                leaves: vec![(r, c, away(rng, r * c, -2.0, 2.0, &[0.0], 1e-3))],
                build: Box::new(move |t, v| t.activate(act, v[0])),
            }
        }));
    }
    out.push(run("mul", 3, |rng| {
        let (r, c) = dims(rng);
        let rb = if rng.random_bool(0.5) { 1 } else { r };
        Case {
            leaves: vec![(r, c, uniform(rng, r * c, -1.0, 1.0)), (rb, c, uniform(rng, rb * c, -1.0, 1.0))],
            build: Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
        }
    }));
    out.push(run("add", 4, |rng| {
        let (r, c) = dims(rng);
        let ra = if rng.random_bool(0.5) { 1 } else { r };
        Case {
            leaves: vec![(ra, c, uniform(rng, ra * c, -1.0, 1.0)), (r, c, uniform(rng, r * c, -1.0, 1.0))],
            build: Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
        }
    }));
    out.push(run("scale", 5, |rng| {
        let (r, c) = dims(rng);
        let k = rng.random_range(-3.0..3.0);
        Case {
            leaves: vec![(r, c, uniform(rng, r * c, -1.0, 1.0))],
            build: Box::new(move |t, v| t.scale(v[0], k)),
        }
    }));
    out.push(run("concat", 6, |rng| {
        let rows = rng.random_range(1..4);
        let parts = rng.random_range(1..4);
        let leaves = (0..parts)
            .map(|_| {
                let r = if rng.random_bool(0.3) { 1 } else { rows };
                let c = rng.random_range(1..4);
                (r, c, uniform(rng, r * c, -1.0, 1.0))
            })
            .collect();
        Case {
            leaves,
            build: Box::new(|t, v| t.concat(v).unwrap()),
        }
    }));
    out.push(run("columns", 7, |rng| {
        let (r, c) = (rng.random_range(1..4), rng.random_range(2..6));
        let s = rng.random_range(0..c);
        let e = rng.random_range(s + 1..=c);
        Case {
            leaves: vec![(r, c, uniform(rng, r * c, -1.0, 1.0))],
            build: Box::new(move |t, v| t.columns(v[0], s, e).unwrap()),
        }
    }));
    out.push(run("repeat_rows", 8, |rng| {
        let (r, c) = dims(rng);
        let k = rng.random_range(1..4);
        Case {
            leaves: vec![(r, c, uniform(rng, r * c, -1.0, 1.0))],
            build: Box::new(move |t, v| t.repeat_rows(v[0], k)),
        }
    }));
    out.push(run("reshape", 9, |rng| {
        let (r, c) = dims(rng);
        Case {
            leaves: vec![(r, c, uniform(rng, r * c, -1.0, 1.0))],
            build: Box::new(move |t, v| t.reshape(v[0], 1, r * c).unwrap()),
        }
    }));
    out.push(run("softmax", 20, |rng| {
        let (r, c) = dims(rng);
        Case {
            leaves: vec![(r, c, uniform(rng, r * c, -3.0, 3.0))],
            build: Box::new(|t, v| t.softmax(v[0])),
        }
    }));
    out.push(run("mix", 21, |rng| {
        let rows = rng.random_range(1..4);
        let k = rng.random_range(1..4);
        let c = rng.random_range(1..4);
        let pr = if rng.random_bool(0.5) { 1 } else { rows };
        let mut leaves = vec![(pr, k, uniform(rng, pr * k, 0.0, 1.0))];
        for _ in 0..k {
            let r = if rng.random_bool(0.3) { 1 } else { rows };
            leaves.push((r, c, uniform(rng, r * c, -1.0, 1.0)));
        }
        Case {
            leaves,
            build: Box::new(|t, v| t.mix(v[0], &v[1..]).unwrap()),
        }
    }));
    out.push(run("unit_vote", 22, |rng| {
        let rows = rng.random_range(1..4);
        let k = rng.random_range(1..4);
        let c = rng.random_range(1..4);
        let mut leaves = vec![
            (c * k, k, uniform(rng, c * k * k, -1.0, 1.0)),
            (1, c * k, uniform(rng, c * k, -1.0, 1.0)),
        ];
        for _ in 0..k {
            let r = if rng.random_bool(0.3) { 1 } else { rows };
            leaves.push((r, c, uniform(rng, r * c, -1.0, 1.0)));
        }
        Case {
            leaves,
            build: Box::new(|t, v| t.unit_vote(&v[2..], v[0], v[1]).unwrap()),
        }
    }));
    out.push(run("sigmoid_xent", 23, |rng| {
        let (r, c) = dims(rng);
        let n = rng.random_range(1..6);
        let picks: Vec<Pick> = (0..n)
            .map(|_| Pick {
                row: rng.random_range(0..r),
                col: rng.random_range(0..c),
                target: rng.random_range(0.0..1.0),
            })
            .collect();
        Case {
            leaves: vec![(r, c, uniform(rng, r * c, -4.0, 4.0))],
            build: Box::new(move |t, v| t.sigmoid_xent(v[0], picks.clone()).unwrap()),
        }
    }));
    out.push(run("prob_to_logit", 24, |rng| {
        let (r, c) = dims(rng);
        let delta = rng.random_range(0.01..0.1);
        Case {
            leaves: vec![(r, c, away(rng, r * c, -0.2, 1.2, &[delta, 1.0 - delta], 1e-3))],
            build: Box::new(move |t, v| t.prob_to_logit(v[0], delta)),
        }
    }));
    out.push(run("sum", 25, |rng| {
        let (r, c) = dims(rng);
        Case {
            leaves: vec![(r, c, uniform(rng, r * c, -1.0, 1.0))],
            build: Box::new(|t, v| t.sum(v[0])),
        }
    }));
    out
}

fn conv_ops() -> Vec<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut conv = Report::new("conv2d");
    for _ in 0..CASES {
        let kernel = rng.random_range(1..4);
        let s = ConvShape {
            h: rng.random_range(kernel..6),
            w: rng.random_range(kernel..6),
            c_in: rng.random_range(1..3),
            c_out: rng.random_range(1..3),
            kernel,
            stride: rng.random_range(1..3),
            pad: rng.random_range(0..2),
        };
        let x = uniform(&mut rng, s.h * s.w * s.c_in, -1.0, 1.0);
        let w = uniform(&mut rng, s.c_out * s.patch(), -1.0, 1.0);
        let b = uniform(&mut rng, s.c_out, -1.0, 1.0);
        let (y, cols) = conv_forward(&s, &x, &w, &b);
        let probe = uniform(&mut rng, y.len(), -1.0, 1.0);
        let f = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
            conv_forward(&s, x, w, b).0.iter().zip(&probe).map(|(a, p)| a * p).sum()
        };
        let (mut dw, mut db) = (vec![0.0; w.len()], vec![0.0; b.len()]);
        let dx = conv_backward(&s, &cols, &w, &probe, &mut dw, &mut db, true).unwrap();
        let numeric = |v: &[f64], which: usize, i: usize| {
            let mut p = v.to_vec();
            let mut m = v.to_vec();
            p[i] += H;
            m[i] -= H;
            let (fp, fm) = match which {
                0 => (f(&p, &w, &b), f(&m, &w, &b)),
                1 => (f(&x, &p, &b), f(&x, &m, &b)),
                _ => (f(&x, &w, &p), f(&x, &w, &m)),
            };
            (fp - fm) / (2.0 * H)
        };
        for i in 0..x.len() {
            let n = numeric(&x, 0, i);
            conv.see(dx[i], n);
        }
        for i in 0..w.len() {
            let n = numeric(&w, 1, i);
            conv.see(dw[i], n);
        }
        for i in 0..b.len() {
            let n = numeric(&b, 2, i);
            conv.see(db[i], n);
        }
        conv.cases += 1;
    }
    let mut pool = Report::new("avg_pool");
    for _ in 0..CASES {
        let f = rng.random_range(1..4);
        let (h, w, c) = (f * rng.random_range(1..4), f * rng.random_range(1..4), rng.random_range(1..4));
        let x = uniform(&mut rng, h * w * c, -1.0, 1.0);
        let probe = uniform(&mut rng, (h / f) * (w / f) * c, -1.0, 1.0);
        let val = |x: &[f64]| -> f64 { avg_pool(x, h, w, c, f).iter().zip(&probe).map(|(a, p)| a * p).sum() };
        let dx = avg_pool_backward(&probe, h, w, c, f);
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += H;
            m[i] -= H;
            pool.see(dx[i], (val(&p) - val(&m)) / (2.0 * H));
        }
        pool.cases += 1;
    }
    vec![conv, pool]
}

/// Whole modules of every architecture: parameter gradients of the mean
/// cross-entropy on random candidate batches.
fn modules() -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut report = Report::new("module");
    let archs = ArchitectureId::all();
    let frame = 3;
    for case in 0..CASES {
        let arch = archs[case % archs.len()];
        let paradigm = if case % 2 == 0 { Paradigm::Sr } else { Paradigm::Mts };
        let mut cfg = ModuleConfig::for_task(arch, paradigm, frame, rng.random()).unwrap();
        for w in &mut cfg.widths {
            *w = (*w).min(6);
        }
        let mut module = ReMaPModule::from_config(&cfg).unwrap();
        for p in module.params_mut() {
            let v = uniform(&mut rng, p.len(), -0.6, 0.6);
            p.tensor.values_mut().copy_from_slice(&v);
        }
        let rows = rng.random_range(1..4);
        let input = ModuleInput {
            scene: uniform(&mut rng, cfg.scene_width, -1.0, 1.0),
            spatial: Vec::new(),
            scene_rows: 1,
            actions: uniform(&mut rng, rows * cfg.action_width, -1.0, 1.0),
            rows,
        };
        let picks: Vec<Pick> = (0..rng.random_range(1..5))
            .map(|_| Pick {
                row: rng.random_range(0..rows),
                col: rng.random_range(0..cfg.k_f),
                target: rng.random_range(0.0..1.0),
            })
            .collect();
        let (_, grads) = module_gradients(&module, &input, picks.clone()).unwrap();
        let loss = |m: &ReMaPModule| -> f64 {
            let z = m.forward(&input).unwrap();
            picks
                .iter()
                .map(|p| sigmoid_cross_entropy_value(z[p.row * cfg.k_f + p.col], p.target).unwrap())
                .sum::<f64>()
                / picks.len() as f64
        };
        let n_params = grads.len();
        for _ in 0..12 {
            let pi = rng.random_range(0..n_params);
            let Some(g) = &grads[pi] else { continue };
            let i = rng.random_range(0..g.len());
            let mut plus = module.clone();
            plus.params_mut()[pi].tensor.values_mut()[i] += H;
            let mut minus = module.clone();
            minus.params_mut()[pi].tensor.values_mut()[i] -= H;
            report.see(g[i], (loss(&plus) - loss(&minus)) / (2.0 * H));
        }
        report.cases += 1;
    }
    report
}

pub fn all() -> Vec<Report> {
    let mut out = tape_ops();
    out.extend(conv_ops());
    out.push(modules());
    out
}
