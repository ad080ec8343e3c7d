use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::diffcore::{AdamConfig, AdamState, Parameter, Pick, Tape, Var};
use crate::engine::Predictor;
use crate::env::SwitchCue;
use crate::error::{Error, Result};
use crate::seed;
use crate::zoo::{Bound, Context, ModuleInput, ReMaPModule};

use super::transform::{TransformBound, TransformInit, TransformStack};
use super::votes::{init_votes, VoteInit, VoteMode, VoteState};

pub const CHECKPOINT_KIND: &str = "voting-controller";

/// Modules in allocation order. Only the newest one trains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleSet {
    pub modules: Vec<ReMaPModule>,
    /// Task each module was allocated for.
    pub provenance: Vec<String>,
}

impl ModuleSet {
    pub fn new(module: ReMaPModule, task: impl Into<String>) -> Self {
        Self {
            modules: vec![module],
            provenance: vec![task.into()],
        }
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn newest(&self) -> &ReMaPModule {
        self.modules.last().expect("module set is never empty")
    }

    /// Checks that `m` can be voted against the incumbent layer by layer.
    pub fn check_compatible(&self, m: &ReMaPModule) -> Result<()> {
        let inc = self.newest();
        let (a, b) = (&inc.config, &m.config);
        if m.layers().is_none() || inc.layers().is_none() {
            return Err(Error::Config("voting needs layered modules".into()));
        }
        if inc.layer_widths() != m.layer_widths()
            || a.k_b != b.k_b
            || a.k_f != b.k_f
            || a.scene_width != b.scene_width
            || a.action_width != b.action_width
            || a.conv != b.conv
        {
            return Err(Error::Config(format!(
                "module with widths {:?} is not shape-compatible with {:?}",
                m.layer_widths(),
                inc.layer_widths()
            )));
        }
        Ok(())
    }

    /// Parameter hashes of every frozen module.
    pub fn frozen_hashes(&self) -> Vec<String> {
        self.modules.iter().filter(|m| m.frozen).map(|m| m.hash()).collect()
    }
}

/// One voting candidate: a module as is, or wrapped by the transform stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Candidate {
    Module(usize),
    Transformed(usize),
}

impl Candidate {
    pub fn module(self) -> usize {
        match self {
            Candidate::Module(m) | Candidate::Transformed(m) => m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VotingConfig {
    pub mode: VoteMode,
    pub init: VoteInit,
    /// When false, no transform candidate is allocated.
    pub transforms: bool,
    pub transform_init: TransformInit,
    /// Learning rate of new modules.
    pub lr: f64,
    /// Learning rate of the vote parameters; defaults to `lr`.
    #[serde(default)]
    pub vote_lr: Option<f64>,
    pub seed: u64,
}

impl Default for VotingConfig {
    fn default() -> Self {
        Self {
            mode: VoteMode::Layer,
            init: VoteInit::default(),
            transforms: true,
            transform_init: TransformInit::default(),
            lr: 1e-3,
            vote_lr: None,
            seed: 0,
        }
    }
}

/// Mean vote weights of one layer at one update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub step: u64,
    pub layer: usize,
    pub weights: Vec<f64>,
}

/// Dynamic voting over a growing module set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VotingController {
    pub set: ModuleSet,
    pub candidates: Vec<Candidate>,
    pub votes: Option<VoteState>,
    pub transform: Option<TransformStack>,
    pub config: VotingConfig,
    adam: AdamState,
    #[serde(skip)]
    log: Vec<VoteRecord>,
    last_weights: Vec<Vec<f64>>,
}

struct Pass {
    logits: Var,
    modules: Vec<Bound>,
    votes: Vec<[Var; 2]>,
    transform: Option<TransformBound>,
    weights: Vec<Vec<f64>>,
}

impl VotingController {
    pub fn new(module: ReMaPModule, task: impl Into<String>, config: VotingConfig) -> Result<Self> {
        config.init.validate()?;
        if module.layers().is_none() {
            return Err(Error::Config("voting needs a layered module".into()));
        }
        let widths = module.layer_widths().len();
        Ok(Self {
            set: ModuleSet::new(module, task),
            candidates: vec![Candidate::Module(0)],
            votes: None,
            transform: None,
            adam: AdamState::new(AdamConfig::with_lr(config.lr)),
            config,
            log: Vec::new(),
            last_weights: vec![vec![1.0]; widths],
        })
    }

    /// Freezes every module, appends a fresh one with the incumbent's
    /// architecture, wraps the previous newest module in a transform stack
    /// and re-initialises the votes.
    pub fn allocate(&mut self, task: impl Into<String>) -> Result<()> {
        let n = self.set.len();
        let mut cfg = self.set.newest().config.clone();
        cfg.seed = seed::derive_seed(self.config.seed, &format!("module/{n}"));
        let fresh = ReMaPModule::from_config(&cfg)?;
        self.allocate_with(fresh, task)
    }

    /// [`Self::allocate`] with a given new module.
    pub fn allocate_with(&mut self, module: ReMaPModule, task: impl Into<String>) -> Result<()> {
        self.set.check_compatible(&module)?;
        let mut module = module;
        module.frozen = false;
        for p in module.params_mut() {
            p.trainable = true;
        }
        for m in &mut self.set.modules {
            m.freeze();
        }
        let prior = self.set.len() - 1;
        self.set.modules.push(module);
        self.set.provenance.push(task.into());
        let n = self.set.len();
        let mut candidates: Vec<Candidate> = (0..n - 1).map(Candidate::Module).collect();
        self.transform = None;
        if self.config.transforms {
            let c = &self.set.modules[prior].config;
            let mut rng = seed::stream(self.config.seed, &format!("transform/{n}"));
            self.transform = Some(TransformStack::new(
                prior,
                c.k_b,
                c.k_f,
                &self.config.transform_init,
                &mut rng,
            )?);
            candidates.push(Candidate::Transformed(prior));
        }
        candidates.push(Candidate::Module(n - 1));
        let newest: Vec<bool> = candidates.iter().map(|c| *c == Candidate::Module(n - 1)).collect();
        let widths = self.set.newest().layer_widths();
        let mut rng = seed::stream(self.config.seed, &format!("votes/{n}"));
        let mut votes = init_votes(&newest, &widths, &self.config.init, self.config.mode, &mut rng)?;
        if let Some(lr) = self.config.vote_lr {
            for p in votes.params_mut() {
                p.lr = Some(lr);
            }
        }
        self.votes = Some(votes);
        self.last_weights = widths
            .iter()
            .map(|_| newest.iter().map(|_| 1.0 / newest.len() as f64).collect())
            .collect();
        self.candidates = candidates;
        self.adam = AdamState::new(AdamConfig::with_lr(self.config.lr));
        Ok(())
    }

    /// Replaces every vote with a one-hot on candidate `c`, or restores
    /// learned votes with `None`.
    pub fn force(&mut self, c: Option<usize>) -> Result<()> {
        if let Some(i) = c {
            if i >= self.candidates.len() {
                return Err(Error::Config(format!("candidate {i} out of {}", self.candidates.len())));
            }
        }
        if let Some(v) = &mut self.votes {
            v.forced = c;
        }
        Ok(())
    }

    /// Vote weight on candidate `c` averaged over layers, from the most
    /// recent update.
    pub fn reuse_fraction(&self, c: usize) -> Result<f64> {
        if c >= self.candidates.len() {
            return Err(Error::Config(format!("candidate {c} out of {}", self.candidates.len())));
        }
        Ok(self.last_weights.iter().map(|w| w[c]).sum::<f64>() / self.last_weights.len() as f64)
    }

    /// Summed reuse of module `m` over its plain and transformed candidates.
    pub fn module_reuse(&self, m: usize) -> Result<f64> {
        let mut total = 0.0;
        for (i, c) in self.candidates.iter().enumerate() {
            if c.module() == m {
                total += self.reuse_fraction(i)?;
            }
        }
        Ok(total)
    }

    pub fn last_weights(&self) -> &[Vec<f64>] {
        &self.last_weights
    }

    /// Takes the vote records gathered since the last call.
    pub fn drain_log(&mut self) -> Vec<VoteRecord> {
        std::mem::take(&mut self.log)
    }

    fn pass(&self, tape: &mut Tape, input: &ModuleInput) -> Result<Pass> {
        let modules = &self.set.modules;
        let ctx = modules[0].context(tape, input)?;
        let bounds: Vec<Bound> = modules.iter().map(|m| m.bind(tape)).collect();
        let votes = self.votes.as_ref().map(|v| v.bind(tape)).unwrap_or_default();
        let tb = self.transform.as_ref().map(|t| t.bind(tape));
        let ctx_t = match (&self.transform, &tb) {
            (Some(t), Some(b)) => Some(Context {
                actions: t.actions(tape, b, ctx.actions)?,
                ..ctx
            }),
            _ => None,
        };
        let depth = self.set.newest().layer_widths().len();
        let mut h = None;
        let mut weights = Vec::with_capacity(depth);
        for i in 0..depth {
            let mut parts = Vec::with_capacity(self.candidates.len());
            for c in &self.candidates {
                let y = match *c {
                    Candidate::Module(m) => modules[m].layer_forward(i, tape, &bounds[m], h, &ctx)?,
                    Candidate::Transformed(m) => {
                        let (t, b, cx) = match (&self.transform, &tb, &ctx_t) {
                            (Some(t), Some(b), Some(cx)) => (t, b, cx),
                            _ => return Err(Error::Config("transform candidate without a transform".into())),
                        };
                        let y = modules[m].layer_forward(i, tape, &bounds[m], h, cx)?;
                        if i + 1 == depth {
                            t.maps(tape, b, y, ctx.actions)?
                        } else {
                            y
                        }
                    }
                };
                parts.push(y);
            }
            match &self.votes {
                Some(v) => {
                    let (mixed, w) = v.mix(tape, i, &votes[i], &parts)?;
                    h = Some(mixed);
                    weights.push(w);
                }
                None => {
                    h = Some(parts[0]);
                    weights.push(vec![1.0]);
                }
            }
        }
        Ok(Pass {
            logits: h.expect("at least one layer"),
            modules: bounds,
            votes,
            transform: tb,
            weights,
        })
    }

    /// Composite logits together with the per-layer mean vote weights.
    pub fn forward_with_weights(&self, input: &ModuleInput) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let pass = self.pass(&mut tape, input)?;
        Ok((tape.value(pass.logits).to_vec(), pass.weights))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let params = self.all_params().cloned().collect();
        Checkpoint::new(CHECKPOINT_KIND, self.clone(), params).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::<Self>::load(path, CHECKPOINT_KIND)?;
        let ours: Vec<Parameter> = ck.spec.all_params().cloned().collect();
        if ours != ck.params {
            return Err(Error::Config(format!("{}: controller parameters disagree", path.display())));
        }
        Ok(ck.spec)
    }

    fn all_params(&self) -> impl Iterator<Item = &Parameter> {
        self.set
            .modules
            .iter()
            .flat_map(|m| m.params())
            .chain(self.votes.iter().flat_map(|v| v.params()))
            .chain(self.transform.iter().flat_map(|t| t.params()))
    }
}

impl Predictor for VotingController {
    fn k_b(&self) -> usize {
        self.set.newest().config.k_b
    }

    fn k_f(&self) -> usize {
        self.set.newest().config.k_f
    }

    fn frame_width(&self) -> usize {
        let c = &self.set.newest().config;
        c.scene_width / (c.k_b + 1)
    }

    fn spatial_width(&self) -> usize {
        let c = &self.set.newest().config;
        c.conv.as_ref().map(|c| c.positions * c.channels).unwrap_or(0)
    }

    fn predict(&self, input: &ModuleInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pass = self.pass(&mut tape, input)?;
        Ok(tape.value(pass.logits).to_vec())
    }

    fn update(&mut self, input: &ModuleInput, picks: Vec<Pick>, step: u64) -> Result<f64> {
        let mut tape = Tape::new();
        let pass = self.pass(&mut tape, input)?;
        let loss = tape.sigmoid_xent(pass.logits, picks)?;
        let value = tape.value(loss)[0];
        if !value.is_finite() {
            return Err(Error::Training {
                param: "loss".into(),
                message: format!("non-finite loss {value}"),
            });
        }
        let grads = tape.backward(loss)?;
        let newest = self.set.len() - 1;
        let mut vars: Vec<Var> = pass.modules[newest].flat();
        vars.extend(pass.votes.iter().flatten());
        if let Some(tb) = &pass.transform {
            vars.extend(tb.flat());
        }
        let g: Vec<Option<Vec<f64>>> = vars.iter().map(|&v| Some(grads.get_or_zero(v))).collect();
        let (modules, votes, transform) = (&mut self.set.modules, &mut self.votes, &mut self.transform);
        let mut params: Vec<&mut Parameter> = modules[newest].params_mut();
        if let Some(v) = votes {
            params.extend(v.params_mut());
        }
        if let Some(t) = transform {
            params.extend(t.params_mut());
        }
        self.adam.step(&mut params, &g)?;
        if self.votes.is_some() {
            for (layer, w) in pass.weights.iter().enumerate() {
                self.log.push(VoteRecord {
                    step,
                    layer,
                    weights: w.clone(),
                });
            }
        }
        self.last_weights = pass.weights;
        Ok(value)
    }

    fn on_cue(&mut self, cue: &SwitchCue) -> Result<()> {
        self.allocate(cue.task.id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ModuleLearner;
    use crate::env::Paradigm;
    use crate::zoo::ModuleConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn module(seed: u64) -> ReMaPModule {
        let c = ModuleConfig::for_task("ems".parse().unwrap(), Paradigm::Sr, 6, seed).unwrap();
        ReMaPModule::from_config(&c).unwrap()
    }

    /// Larger weights than the default init so candidates differ visibly.
    fn loud(seed: u64) -> ReMaPModule {
        scaled(seed, 1.0)
    }

    fn scaled(seed: u64, amp: f64) -> ReMaPModule {
        let mut m = module(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in m.params_mut() {
            for v in p.tensor.values_mut() {
                *v = rng.random_range(-amp..amp);
            }
        }
        m
    }

    fn input(m: &ReMaPModule, rows: usize, seed: u64) -> ModuleInput {
        let c = &m.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actions = Vec::new();
        for _ in 0..rows {
            for _ in 0..c.action_width - c.k_b {
                actions.push(rng.random_range(-1.0..1.0));
            }
            actions.extend(std::iter::repeat_n(1.0, c.k_b));
        }
        ModuleInput {
            scene: (0..c.scene_width).map(|_| rng.random_range(0.0..1.0)).collect(),
            spatial: Vec::new(),
            scene_rows: 1,
            actions,
            rows,
        }
    }

    fn picks(rows: usize, k_f: usize, seed: u64) -> Vec<Pick> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..6)
            .map(|_| Pick {
                row: rng.random_range(0..rows),
                col: rng.random_range(0..k_f),
                target: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
            })
            .collect()
    }

    #[test]
    fn allocation_counts_and_freezing() {
        let mut c = VotingController::new(module(1), "a", VotingConfig::default()).unwrap();
        assert_eq!(c.candidates, vec![Candidate::Module(0)]);
        c.allocate("b").unwrap();
        assert_eq!(c.set.len(), 2);
        assert_eq!(
            c.candidates,
            vec![Candidate::Module(0), Candidate::Transformed(0), Candidate::Module(1)]
        );
        c.allocate("c").unwrap();
        c.allocate("d").unwrap();
        assert_eq!(c.set.len(), 4);
        assert_eq!(c.candidates.len(), 5);
        assert_eq!(c.transform.as_ref().unwrap().target, 2);
        assert!(c.set.modules[..3].iter().all(|m| m.frozen));
        assert!(!c.set.newest().frozen);
        assert_eq!(c.set.provenance, vec!["a", "b", "c", "d"]);

        let ablated = VotingConfig {
            transforms: false,
            ..VotingConfig::default()
        };
        let mut c = VotingController::new(module(1), "a", ablated).unwrap();
        c.allocate("b").unwrap();
        assert_eq!(c.candidates, vec![Candidate::Module(0), Candidate::Module(1)]);
    }

    #[test]
    fn incompatible_module_is_rejected() {
        let mut c = VotingController::new(module(1), "a", VotingConfig::default()).unwrap();
        let cfg = ModuleConfig::for_task("ems".parse().unwrap(), Paradigm::Mts, 6, 2).unwrap();
        let other = ReMaPModule::from_config(&cfg).unwrap();
        assert!(c.allocate_with(other, "b").is_err());
    }

    #[test]
    fn one_hot_on_a_module_is_that_module() {
        let (a, b) = (loud(1), loud(2));
        let x = input(&a, 7, 3);
        for mode in [VoteMode::Layer, VoteMode::Unit] {
            let cfg = VotingConfig {
                mode,
                ..VotingConfig::default()
            };
            let mut c = VotingController::new(a.clone(), "a", cfg).unwrap();
            c.allocate_with(b.clone(), "b").unwrap();
            c.force(Some(0)).unwrap();
            assert_eq!(c.predict(&x).unwrap(), a.forward(&x).unwrap());
            c.force(Some(2)).unwrap();
            assert_eq!(c.predict(&x).unwrap(), b.forward(&x).unwrap());
            c.force(None).unwrap();
            let mixed = c.predict(&x).unwrap();
            assert_ne!(mixed, a.forward(&x).unwrap());
        }
    }

    #[test]
    fn identity_transform_candidate_matches_its_module() {
        let a = scaled(4, 0.3);
        let x = input(&a, 9, 5);
        let cfg = VotingConfig {
            transform_init: TransformInit::identity(),
            ..VotingConfig::default()
        };
        let mut c = VotingController::new(a.clone(), "a", cfg).unwrap();
        c.allocate("b").unwrap();
        c.force(Some(1)).unwrap();
        let got = c.predict(&x).unwrap();
        let want = a.forward(&x).unwrap();
        let mut checked = 0;
        for (g, w) in got.iter().zip(&want) {
            let (pg, pw) = (crate::diffcore::sigmoid(*g), crate::diffcore::sigmoid(*w));
            if (0.001..=0.999).contains(&pw) {
                assert!((pg - pw).abs() < 1e-12, "{pg} vs {pw}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn training_keeps_frozen_hashes_and_probability_votes() {
        for mode in [VoteMode::Layer, VoteMode::Unit] {
            let cfg = VotingConfig {
                mode,
                lr: 1e-2,
                ..VotingConfig::default()
            };
            let mut c = VotingController::new(loud(1), "a", cfg).unwrap();
            c.allocate("b").unwrap();
            c.allocate("c").unwrap();
            let before = c.set.frozen_hashes();
            let newest = c.set.newest().hash();
            let vote_before = c.votes.clone();
            let xform_before = c.transform.clone();
            for s in 0..15 {
                let x = input(&c.set.modules[0], 8, s);
                c.update(&x, picks(8, 2, s), s).unwrap();
                for w in c.last_weights() {
                    assert!(w.iter().all(|&p| p >= 0.0));
                    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
            assert_eq!(c.set.frozen_hashes(), before);
            assert_ne!(c.set.newest().hash(), newest);
            assert_ne!(c.votes, vote_before);
            assert_ne!(c.transform, xform_before);
        }
    }

    #[test]
    fn forced_new_module_reduces_to_single_module_training() {
        let (old, fresh) = (loud(1), module(9));
        let mut single = ModuleLearner::new(fresh.clone(), 1e-3);
        let mut c = VotingController::new(old, "a", VotingConfig::default()).unwrap();
        c.allocate_with(fresh, "b").unwrap();
        c.force(Some(2)).unwrap();
        for s in 0..25 {
            let x = input(&single.module, 8, 100 + s);
            let p = picks(8, 2, s);
            assert_eq!(c.predict(&x).unwrap(), single.predict(&x).unwrap());
            let l1 = single.update(&x, p.clone(), s).unwrap();
            let l2 = c.update(&x, p, s).unwrap();
            assert_eq!(l1.to_bits(), l2.to_bits());
        }
        assert_eq!(c.set.newest().hash(), single.module.hash());
    }

    #[test]
    fn reuse_fraction_replays_the_log() {
        let mut c = VotingController::new(loud(1), "a", VotingConfig::default()).unwrap();
        c.allocate("b").unwrap();
        let x = input(&c.set.modules[0], 5, 1);
        c.update(&x, picks(5, 2, 1), 42).unwrap();
        let log = c.drain_log();
        assert_eq!(log.len(), c.last_weights().len());
        for cand in 0..3 {
            let direct = log.iter().map(|r| r.weights[cand]).sum::<f64>() / log.len() as f64;
            assert!((c.reuse_fraction(cand).unwrap() - direct).abs() < 1e-15);
        }
        let total: f64 = (0..3).map(|i| c.reuse_fraction(i).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(
            (c.module_reuse(0).unwrap() - c.reuse_fraction(0).unwrap() - c.reuse_fraction(1).unwrap()).abs()
                < 1e-15
        );
        c.force(Some(0)).unwrap();
        c.update(&x, picks(5, 2, 2), 43).unwrap();
        assert_eq!(c.reuse_fraction(0).unwrap(), 1.0);
        assert!(c.reuse_fraction(3).is_err());

        let mut even = VotingController::new(loud(2), "a", VotingConfig::default()).unwrap();
        even.allocate("b").unwrap();
        even.last_weights = vec![vec![0.5, 0.0, 0.5]; 4];
        assert_eq!(even.reuse_fraction(0).unwrap(), 0.5);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut c = VotingController::new(loud(1), "a", VotingConfig::default()).unwrap();
        c.allocate("b").unwrap();
        let x = input(&c.set.modules[0], 4, 1);
        c.update(&x, picks(4, 2, 1), 0).unwrap();
        c.save(&path).unwrap();
        let back = VotingController::load(&path).unwrap();
        assert_eq!(back.predict(&x).unwrap(), c.predict(&x).unwrap());
        assert_eq!(back.candidates, c.candidates);
    }
}
