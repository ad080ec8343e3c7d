//! Task and switch experiments with their file outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{hex, ExperimentConfig, TaskEntry};
use super::metrics::{auc, rgain, ta_n_auc, tgain, LearningCurve};
use super::render::render_reward_map;
use crate::backbone::{default_encoder, Encoder, EncodingCache};
use crate::engine::{
    candidate_input, run_stream, HistoryBuffer, ModuleLearner, Predictor, RunConfig, RunResult, StepLog,
};
use crate::env::{
    switch_pair, InstancePool, ScheduledStream, Split, SwitchPair, TaskSchedule, TaskSpec, TouchStream, Variant,
};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::voting::{VoteMode, VoteRecord, VotingConfig, VotingController};
use crate::zoo::{ArchitectureId, ModuleConfig, ReMaPModule};

const CACHE_CAPACITY: usize = 20_000;

/// Encoder, instance pool and encoding cache shared by every run.
pub struct Lab {
    pub config: ExperimentConfig,
    pub encoder: Arc<Encoder>,
    pub pool: Arc<InstancePool>,
    pub cache: EncodingCache,
}

impl Lab {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let encoder = match &config.backbone_checkpoint {
            Some(path) => Encoder::load(path)?,
            None => default_encoder(config.screen(), config.backbone_seed)?,
        };
        Self::with_encoder(config, Arc::new(encoder))
    }

    pub fn with_encoder(config: ExperimentConfig, encoder: Arc<Encoder>) -> Result<Self> {
        config.validate()?;
        let p = &config.pool;
        let pool = Arc::new(InstancePool::generate(
            config.screen(),
            p.per_class_train,
            p.per_class_validation,
            p.seed,
        )?);
        let cache = EncodingCache::new(encoder.clone(), CACHE_CAPACITY);
        Ok(Self {
            config,
            encoder,
            pool,
            cache,
        })
    }

    fn run_config(&self, steps: u64, seed: u64) -> RunConfig {
        let mut policy = self.config.policy.clone();
        policy.seed = derive_seed(seed, "policy");
        RunConfig {
            steps,
            policy,
            validation: Some(self.config.validation.clone()),
            capture_maps: self.config.capture_maps.clone(),
        }
    }

    fn stream(&self, task: &TaskSpec, steps: u64, seed: u64) -> Result<ScheduledStream> {
        ScheduledStream::new(
            TaskSchedule::new(vec![(task.clone(), steps)]),
            self.pool.clone(),
            Split::Train,
            derive_seed(seed, "env"),
        )
    }

    fn module(&self, arch: ArchitectureId, task: &TaskSpec, seed: u64, tag: &str) -> Result<ReMaPModule> {
        let cfg = ModuleConfig::for_task(
            arch,
            task.variant.paradigm(),
            self.encoder.scene_width(),
            derive_seed(seed, tag),
        )?;
        ReMaPModule::from_config(&cfg)
    }

    fn curve(&self, r: &RunResult) -> Result<LearningCurve> {
        Ok(LearningCurve::new(r.validation.clone())?.smoothed(self.config.smoothing))
    }
}

/// Outcome of one (architecture, task, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: String,
    pub architecture: ArchitectureId,
    pub task: String,
    pub seed: u64,
    pub lr: f64,
    pub steps: u64,
    pub horizon: u64,
    pub parameters: usize,
    /// Smoothed validation curve.
    pub curve: LearningCurve,
    pub auc: f64,
    pub final_reward: f64,
    pub first_at_0_9: Option<u64>,
    pub module_hash: String,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn curve_rows(curves: &[(&str, &LearningCurve)]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["step".to_string()];
    header.extend(curves.iter().map(|(n, _)| n.to_string()));
    let rows = curves[0]
        .1
        .points
        .iter()
        .enumerate()
        .map(|(i, (s, _))| {
            let mut r = vec![s.to_string()];
            r.extend(curves.iter().map(|(_, c)| format!("{}", c.points[i].1)));
            r
        })
        .collect();
    (header, rows)
}

fn digest(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

fn render_captures(r: &RunResult, screen: crate::env::Screen, dir: &Path) -> Result<()> {
    for (step, sample) in &r.maps {
        for j in 0..sample.probabilities.len() {
            render_reward_map(sample, j, screen, &dir.join(format!("maps/step-{step}-map-{j}.ppm")))?;
        }
    }
    Ok(())
}

fn write_steps(dir: &Path, steps: &[StepLog], enabled: bool) -> Result<()> {
    if enabled {
        write_jsonl(&dir.join("steps.jsonl"), steps)?;
    }
    Ok(())
}

/// Trains one module on one task. With `out` set, writes the cell's files
/// and reuses a finished cell whose key matches.
pub fn run_task(
    lab: &mut Lab,
    arch: ArchitectureId,
    entry: &TaskEntry,
    seed: u64,
    out: Option<&Path>,
) -> Result<CellResult> {
    let task = &entry.task;
    let paradigm = task.variant.paradigm();
    let lr = lab.config.learning_rates.lookup(arch, paradigm);
    let key = digest(&serde_json::to_string(&(
        "task-cell",
        arch,
        entry,
        seed,
        lr,
        &lab.config.policy,
        &lab.config.validation,
        lab.config.smoothing,
        &lab.config.pool,
        lab.config.screen,
        lab.encoder.hash(),
        &lab.config.capture_maps,
        lab.config.step_logs,
    ))?);
    let dir = out.map(|o| o.join("tasks").join(arch.to_string()).join(task.id()).join(format!("seed-{seed}")));
    if let Some(d) = &dir {
        if let Ok(text) = fs::read_to_string(d.join("result.json")) {
            if let Ok(done) = serde_json::from_str::<CellResult>(&text) {
                if done.key == key {
                    log::info!("reusing finished cell {}", d.display());
                    return Ok(done);
                }
            }
        }
    }
    let module = lab.module(arch, task, seed, "module")?;
    let parameters = module.parameter_count();
    let mut learner = ModuleLearner::new(module, lr);
    let mut stream = lab.stream(task, entry.steps, seed)?;
    let rc = lab.run_config(entry.steps, seed);
    let r = run_stream(&mut stream, &mut lab.cache, &mut learner, &rc)?;
    let curve = lab.curve(&r)?;
    let result = CellResult {
        key,
        architecture: arch,
        task: task.id(),
        seed,
        lr,
        steps: entry.steps,
        horizon: entry.horizon,
        parameters,
        auc: auc(&curve.truncated(entry.horizon))?,
        final_reward: curve.last().unwrap_or(0.0),
        first_at_0_9: curve.first_reaching(0.9),
        module_hash: learner.module.hash(),
        curve,
    };
    if let Some(d) = &dir {
        let raw = LearningCurve::new(r.validation.clone())?;
        let (h, rows) = curve_rows(&[("validation", &raw), ("smoothed", &result.curve)]);
        write_csv(&d.join("curve.csv"), &h.iter().map(|s| s.as_str()).collect::<Vec<_>>(), &rows)?;
        write_steps(d, &r.steps, lab.config.step_logs)?;
        learner.module.save(&d.join("module.json"))?;
        render_captures(&r, lab.config.screen(), d)?;
        write_json(&d.join("result.json"), &result)?;
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub config_hash: String,
    pub code_version: String,
    pub backbone_hash: String,
    pub cells: Vec<CellResult>,
    /// Seed → architecture → score.
    pub ta_n_auc: BTreeMap<u64, BTreeMap<String, f64>>,
    /// Relative path → SHA-256 of every file written by the cells.
    pub files: BTreeMap<String, String>,
}

/// Every architecture on every task for every seed, then TA-N-AUC per seed.
pub fn run_suite(lab: &mut Lab, out: &Path) -> Result<SuiteSummary> {
    let config = lab.config.clone();
    write_json(&out.join("config.json"), &config)?;
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &seed in &config.seeds {
        for &arch in &config.architectures {
            for entry in &config.tasks {
                match run_task(lab, arch, entry, seed, Some(out)) {
                    Ok(c) => cells.push(c),
                    Err(e) => {
                        log::error!("{arch} on {} seed {seed}: {e}", entry.task.id());
                        failures.push(format!("{arch}/{}/seed-{seed}: {e}", entry.task.id()));
                    }
                }
            }
        }
    }
    let mut scores = BTreeMap::new();
    for &seed in &config.seeds {
        let mut table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for c in cells.iter().filter(|c| c.seed == seed) {
            table
                .entry(c.architecture.to_string())
                .or_default()
                .insert(c.task.clone(), c.auc);
        }
        if !table.is_empty() {
            match ta_n_auc(&table) {
                Ok(s) => {
                    scores.insert(seed, s);
                }
                Err(e) => failures.push(format!("ta-n-auc seed {seed}: {e}")),
            }
        }
    }
    let auc_rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.architecture.to_string(),
                c.task.clone(),
                c.seed.to_string(),
                format!("{}", c.auc),
                format!("{}", c.final_reward),
            ]
        })
        .collect();
    write_csv(&out.join("auc.csv"), &["architecture", "task", "seed", "auc", "final"], &auc_rows)?;
    let score_rows: Vec<Vec<String>> = scores
        .iter()
        .flat_map(|(seed, s)| s.iter().map(move |(a, v)| vec![seed.to_string(), a.clone(), format!("{v}")]))
        .collect();
    write_csv(&out.join("ta_n_auc.csv"), &["seed", "architecture", "score"], &score_rows)?;
    let summary = SuiteSummary {
        config_hash: config.hash(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        backbone_hash: lab.encoder.hash().into(),
        cells,
        ta_n_auc: scores,
        files: hash_tree(out, "tasks")?,
    };
    write_json(&out.join("summary.json"), &summary)?;
    if !failures.is_empty() {
        write_text(&out.join("failures.txt"), &(failures.join("\n") + "\n"))?;
    }
    Ok(summary)
}

/// SHA-256 of every file below `root/sub`, keyed by relative path.
pub fn hash_tree(root: &Path, sub: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.join(sub)];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        for e in entries {
            let path = e.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
                out.insert(rel, hex(&Sha256::digest(&bytes)));
            }
        }
    }
    Ok(out)
}

/// The identity switch: 2-way SR cued into itself.
pub fn no_switch_pair() -> SwitchPair {
    let t = TaskSpec::new(Variant::TwoWaySr, &[0, 1]);
    SwitchPair {
        id: 0,
        name: "2-way SR to the same task".into(),
        base: t.clone(),
        switch: t,
    }
}

pub fn pair_for(id: u8) -> Result<SwitchPair> {
    if id == 0 {
        Ok(no_switch_pair())
    } else {
        switch_pair(id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchRecord {
    pub id: u8,
    pub name: String,
    pub mode: VoteMode,
    pub transforms: bool,
    pub seed: u64,
    pub base_task: String,
    pub switch_task: String,
    /// Smoothed validation reward of the base module when the cue fired.
    pub base_final: f64,
    pub switch: LearningCurve,
    pub scratch: LearningCurve,
    pub rgain: f64,
    pub tgain: f64,
    /// Final vote weight per candidate.
    pub reuse: Vec<f64>,
    /// Final weight on the base module, plain and transformed together.
    pub base_reuse: f64,
    pub frozen_hash_before: String,
    pub frozen_hash_after: String,
}

/// Trains (or reloads) the base module for a switch experiment.
pub fn train_base(lab: &mut Lab, task: &TaskSpec, seed: u64, out: Option<&Path>) -> Result<(ReMaPModule, f64)> {
    let sc = lab.config.switch.clone();
    let lr = lab.config.learning_rates.lookup(sc.architecture, task.variant.paradigm());
    let dir = out.map(|o| o.join("switch/base").join(task.id()).join(format!("seed-{seed}")));
    let key = digest(&serde_json::to_string(&(
        "base",
        sc.architecture,
        task,
        sc.base_steps,
        seed,
        lr,
        &lab.config.policy,
        &lab.config.validation,
        lab.config.smoothing,
        &lab.config.pool,
        lab.encoder.hash(),
    ))?);
    if let Some(d) = &dir {
        let stamp = fs::read_to_string(d.join("key.txt")).unwrap_or_default();
        if stamp.trim() == key {
            let module = ReMaPModule::load(&d.join("module.json"))?;
            let text = fs::read_to_string(d.join("final.txt")).map_err(|e| Error::io(d, e))?;
            let fin = text
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{}: bad final reward", d.display())))?;
            return Ok((module, fin));
        }
    }
    let module = lab.module(sc.architecture, task, seed, "base")?;
    let mut learner = ModuleLearner::new(module, lr);
    let mut stream = lab.stream(task, sc.base_steps, derive_seed(seed, "base"))?;
    let rc = lab.run_config(sc.base_steps, derive_seed(seed, "base"));
    let r = run_stream(&mut stream, &mut lab.cache, &mut learner, &rc)?;
    let fin = lab.curve(&r)?.last().unwrap_or(0.0);
    if let Some(d) = &dir {
        learner.module.save(&d.join("module.json"))?;
        write_text(&d.join("final.txt"), &format!("{fin}\n"))?;
        write_text(&d.join("key.txt"), &format!("{key}\n"))?;
    }
    Ok((learner.module, fin))
}

/// Options that vary between switch runs of one config.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchOptions {
    pub mode: VoteMode,
    pub transforms: bool,
    /// Post-cue steps; the config's budget when `None`.
    pub steps: Option<u64>,
}

/// Cues a controller holding the base module into the switch task and
/// compares it with a module trained from scratch on the same stream.
pub fn run_switch(
    lab: &mut Lab,
    pair: &SwitchPair,
    opts: SwitchOptions,
    seed: u64,
    out: Option<&Path>,
) -> Result<SwitchRecord> {
    let sc = lab.config.switch.clone();
    let steps = opts.steps.unwrap_or(sc.steps);
    let (base, base_final) = train_base(lab, &pair.base, seed, out)?;
    let lr = lab.config.learning_rates.lookup(sc.architecture, pair.switch.variant.paradigm());
    let vc = VotingConfig {
        mode: opts.mode,
        transforms: opts.transforms,
        lr,
        seed: derive_seed(seed, "voting"),
        ..sc.voting.clone()
    };
    let mut ctl = VotingController::new(base, pair.base.id(), vc)?;
    ctl.allocate(pair.switch.id())?;
    let frozen_hash_before = ctl.set.frozen_hashes().join(",");
    let run_seed = derive_seed(seed, "switch");
    let rc = lab.run_config(steps, run_seed);
    let mut stream = lab.stream(&pair.switch, steps, run_seed)?;
    let rs = run_stream(&mut stream, &mut lab.cache, &mut ctl, &rc)?;
    let votes: Vec<VoteRecord> = ctl.drain_log();

    let scratch_module = lab.module(sc.architecture, &pair.switch, seed, "scratch")?;
    let mut scratch = ModuleLearner::new(scratch_module, lr);
    let mut stream = lab.stream(&pair.switch, steps, run_seed)?;
    let rr = run_stream(&mut stream, &mut lab.cache, &mut scratch, &rc)?;

    let (cs, cr) = (lab.curve(&rs)?, lab.curve(&rr)?);
    let reuse = (0..ctl.candidates.len())
        .map(|c| ctl.reuse_fraction(c))
        .collect::<Result<Vec<_>>>()?;
    let record = SwitchRecord {
        id: pair.id,
        name: pair.name.clone(),
        mode: opts.mode,
        transforms: opts.transforms,
        seed,
        base_task: pair.base.id(),
        switch_task: pair.switch.id(),
        base_final,
        rgain: rgain(&cs, &cr)?,
        tgain: tgain(&cs, &cr)?,
        reuse,
        base_reuse: ctl.module_reuse(0)?,
        frozen_hash_before,
        frozen_hash_after: ctl.set.frozen_hashes().join(","),
        switch: cs,
        scratch: cr,
    };
    if let Some(o) = out {
        let tag = if opts.transforms { "" } else { "-no-transforms" };
        let d = o
            .join("switch")
            .join(format!("{:02}-{}{tag}", pair.id, opts.mode))
            .join(format!("seed-{seed}"));
        let (h, rows) = curve_rows(&[("switch", &record.switch), ("scratch", &record.scratch)]);
        write_csv(&d.join("curves.csv"), &h.iter().map(|s| s.as_str()).collect::<Vec<_>>(), &rows)?;
        write_jsonl(&d.join("votes.jsonl"), &votes)?;
        write_steps(&d, &rs.steps, lab.config.step_logs)?;
        ctl.save(&d.join("controller.json"))?;
        write_json(&d.join("record.json"), &record)?;
    }
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchSummary {
    pub config_hash: String,
    pub code_version: String,
    pub records: Vec<SwitchRecord>,
    pub files: BTreeMap<String, String>,
}

/// Every configured switch id in every configured mode for every seed.
pub fn run_switch_suite(lab: &mut Lab, transforms: bool, out: &Path) -> Result<SwitchSummary> {
    let config = lab.config.clone();
    write_json(&out.join("config.json"), &config)?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &id in &config.switch.ids {
        let pair = pair_for(id)?;
        for &mode in &config.switch.modes {
            for &seed in &config.seeds {
                let opts = SwitchOptions {
                    mode,
                    transforms,
                    steps: None,
                };
                match run_switch(lab, &pair, opts, seed, Some(out)) {
                    Ok(r) => records.push(r),
                    Err(e) => {
                        log::error!("switch {id} {mode} seed {seed}: {e}");
                        failures.push(format!("switch {id} {mode} seed {seed}: {e}"));
                    }
                }
            }
        }
    }
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.id.to_string(),
                r.mode.to_string(),
                r.seed.to_string(),
                format!("{}", r.rgain),
                format!("{}", r.tgain),
                format!("{}", r.base_reuse),
            ]
        })
        .collect();
    write_csv(
        &out.join("switch_metrics.csv"),
        &["id", "mode", "seed", "rgain", "tgain", "base_reuse"],
        &rows,
    )?;
    let summary = SwitchSummary {
        config_hash: config.hash(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        records,
        files: hash_tree(out, "switch")?,
    };
    write_json(&out.join("switch_summary.json"), &summary)?;
    if !failures.is_empty() {
        write_text(&out.join("switch_failures.txt"), &(failures.join("\n") + "\n"))?;
    }
    Ok(summary)
}

/// Renders every horizon map of `predictor` over the full grid for the
/// first `frames` frames of a validation stream.
pub fn render_module_maps<P: Predictor + ?Sized>(
    lab: &mut Lab,
    predictor: &P,
    task: &TaskSpec,
    frames: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let screen = lab.config.screen();
    let mut env = TouchStream::new(task, lab.pool.clone(), Split::Validation, derive_seed(seed, "render"))?;
    let mut history = HistoryBuffer::new(predictor.k_b(), predictor.frame_width(), predictor.spatial_width());
    let grid: Vec<_> = (0..screen.cells()).map(|i| screen.point(i)).collect();
    let centre = crate::env::ActionPoint::new(screen.width / 2, screen.height / 2);
    let mut written = Vec::new();
    for f in 0..frames {
        history.push_frame(lab.cache.get(&env.frame().image)?)?;
        let input = candidate_input(&history, &grid, screen);
        let logits = predictor.predict(&input)?;
        let k_f = predictor.k_f();
        let sample = crate::engine::RewardMapSample {
            candidates: grid.clone(),
            logits,
            probabilities: vec![Vec::new(); k_f],
            chosen_map: 0,
            uniform_fallbacks: Vec::new(),
        };
        for j in 0..k_f {
            let path = out.join(format!("frame-{f}-map-{j}.ppm"));
            render_reward_map(&sample, j, screen, &path)?;
            written.push(path);
        }
        env.step(centre)?;
        history.push_action(centre.normalized(screen));
    }
    Ok(written)
}
