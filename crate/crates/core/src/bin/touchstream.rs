use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use touchstream::backbone::{pretrain, pretraining_set, EncoderSpec, PretrainConfig};
use touchstream::engine::ModuleLearner;
use touchstream::env::CLASS_COUNT;
use touchstream::harness::{
    pair_for, render_module_maps, run_suite, run_switch, run_switch_suite, run_task, ExperimentConfig, Lab,
    SuiteSummary, SwitchOptions, SwitchSummary, TaskEntry,
};
use touchstream::voting::VoteMode;
use touchstream::zoo::{ArchitectureId, ReMaPModule};
use touchstream::{Error, Result};

#[derive(Parser)]
#[command(name = "touchstream", version, about = "TouchStream continual-learning lab")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); the built-in desk config when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run this seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Voting granularity for switch runs; every configured mode when omitted.
    #[arg(long, global = true)]
    voting_mode: Option<VoteMode>,
    /// Drop the action and map transforms from switch runs.
    #[arg(long, global = true)]
    no_transforms: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train and freeze the visual encoder, then write it as a checkpoint.
    PretrainBackbone {
        #[arg(long, default_value_t = 60)]
        per_class: usize,
        #[arg(long, default_value_t = 8)]
        epochs: usize,
    },
    /// Train one architecture on one configured task.
    RunTask {
        /// Task id (e.g. v1-c0.1) or index into the config's task list.
        #[arg(long)]
        task: String,
        /// Architecture name (e.g. ems, late-relu-small); every configured one when omitted.
        #[arg(long)]
        arch: Option<ArchitectureId>,
        /// Override the task's step budget.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Every architecture on every task and seed.
    RunSuite,
    /// Switch experiments; every configured id when none is given.
    RunSwitch {
        #[arg(long)]
        id: Vec<u8>,
        /// Override the post-cue step budget.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Render a saved module's reward maps over the whole screen.
    RenderMaps {
        #[arg(long)]
        module: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 4)]
        frames: usize,
    },
    /// Summarise finished runs in the output directory.
    Report,
    /// Print the effective config as JSON.
    ShowConfig,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = common.seed {
        config.seeds = vec![s];
    }
    if let Some(m) = common.voting_mode {
        config.switch.modes = vec![m];
    }
    config.validate()?;
    Ok(config)
}

fn find_task(config: &ExperimentConfig, key: &str) -> Result<TaskEntry> {
    if let Ok(i) = key.parse::<usize>() {
        if let Some(e) = config.tasks.get(i) {
            return Ok(e.clone());
        }
    }
    config
        .tasks
        .iter()
        .find(|e| e.task.id() == key)
        .cloned()
        .ok_or_else(|| {
            let ids: Vec<String> = config.tasks.iter().map(|e| e.task.id()).collect();
            Error::Config(format!("no task {key:?} in config; known: {}", ids.join(", ")))
        })
}

fn pretrain_backbone(config: &ExperimentConfig, out: &Path, per_class: usize, epochs: usize) -> Result<()> {
    let screen = config.screen();
    let classes: Vec<usize> = (0..CLASS_COUNT).collect();
    let train = pretraining_set(screen, &classes, per_class, config.backbone_seed)?;
    let held = pretraining_set(screen, &classes, 10, config.backbone_seed ^ 0x5eed)?;
    let spec = EncoderSpec::for_screen(screen, config.backbone_seed);
    let cfg = PretrainConfig {
        epochs,
        ..PretrainConfig::default()
    };
    let p = pretrain(spec, &train, cfg)?;
    let path = out.join("backbone.json");
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    p.encoder.save(&path)?;
    println!(
        "encoder {} written to {}; train acc {:.3}, held-out acc {:.3}",
        p.encoder.hash(),
        path.display(),
        p.head.accuracy(&p.encoder, &train)?,
        p.head.accuracy(&p.encoder, &held)?
    );
    Ok(())
}

fn report(out: &Path) -> Result<()> {
    let mut any = false;
    if let Ok(text) = fs::read_to_string(out.join("summary.json")) {
        any = true;
        let s: SuiteSummary = serde_json::from_str(&text)?;
        println!("suite (config {}, {} cells)", &s.config_hash[..12], s.cells.len());
        println!("{:<28} {:<22} {:>5} {:>10} {:>7}", "architecture", "task", "seed", "auc", "final");
        for c in &s.cells {
            println!(
                "{:<28} {:<22} {:>5} {:>10.1} {:>7.3}",
                c.architecture.to_string(),
                c.task,
                c.seed,
                c.auc,
                c.final_reward
            );
        }
        for (seed, scores) in &s.ta_n_auc {
            for (arch, v) in scores {
                println!("ta-n-auc seed {seed} {arch}: {v:.4}");
            }
        }
    }
    if let Ok(text) = fs::read_to_string(out.join("switch_summary.json")) {
        any = true;
        let s: SwitchSummary = serde_json::from_str(&text)?;
        println!("switches ({} runs)", s.records.len());
        println!("{:>3} {:<6} {:>5} {:>8} {:>10} {:>6}  name", "id", "mode", "seed", "rgain", "tgain", "reuse");
        for r in &s.records {
            println!(
                "{:>3} {:<6} {:>5} {:>8.3} {:>10.2e} {:>6.2}  {}",
                r.id,
                r.mode.to_string(),
                r.seed,
                r.rgain,
                r.tgain,
                r.base_reuse,
                r.name
            );
        }
    }
    if !any {
        return Err(Error::Config(format!("no summaries found in {}", out.display())));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    let mut config = load_config(common)?;
    let out = common.out.as_path();
    let saved = out.join("backbone.json");
    if config.backbone_checkpoint.is_none() && saved.is_file() {
        log::info!("using encoder checkpoint {}", saved.display());
        config.backbone_checkpoint = Some(saved);
    }
    match cli.command {
        Command::PretrainBackbone { per_class, epochs } => pretrain_backbone(&config, out, per_class, epochs),
        Command::Report => report(out),
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&config)?);
            Ok(())
        }
        Command::RunTask { task, arch, steps } => {
            let mut entry = find_task(&config, &task)?;
            if let Some(s) = steps {
                entry.steps = s;
                entry.horizon = entry.horizon.min(s);
            }
            let archs = arch.map(|a| vec![a]).unwrap_or_else(|| config.architectures.clone());
            let seeds = config.seeds.clone();
            let mut lab = Lab::new(config)?;
            for &seed in &seeds {
                for &a in &archs {
                    let c = run_task(&mut lab, a, &entry, seed, Some(out))?;
                    println!(
                        "{a} {} seed {seed}: auc {:.1}, final {:.3}",
                        c.task, c.auc, c.final_reward
                    );
                }
            }
            Ok(())
        }
        Command::RunSuite => {
            let mut lab = Lab::new(config)?;
            let s = run_suite(&mut lab, out)?;
            println!("{} cells written to {}", s.cells.len(), out.display());
            report(out)
        }
        Command::RunSwitch { id, steps } => {
            let transforms = !common.no_transforms;
            let mut lab = Lab::new(config.clone())?;
            if id.is_empty() && steps.is_none() {
                run_switch_suite(&mut lab, transforms, out)?;
                return report(out);
            }
            let ids = if id.is_empty() { config.switch.ids.clone() } else { id };
            for i in ids {
                let pair = pair_for(i)?;
                for &mode in &config.switch.modes {
                    for &seed in &config.seeds {
                        let opts = SwitchOptions { mode, transforms, steps };
                        let r = run_switch(&mut lab, &pair, opts, seed, Some(out))?;
                        println!(
                            "{} [{mode}] seed {seed}: rgain {:.3}, tgain {:.2e}, base reuse {:.2}",
                            r.name, r.rgain, r.tgain, r.base_reuse
                        );
                    }
                }
            }
            Ok(())
        }
        Command::RenderMaps { module, task, frames } => {
            let entry = find_task(&config, &task)?;
            let m = ReMaPModule::load(&module)?;
            let seed = config.seeds.first().copied().unwrap_or(0);
            let mut lab = Lab::new(config)?;
            let learner = ModuleLearner::new(m, 0.0);
            let dir = out.join("maps");
            let written = render_module_maps(&mut lab, &learner, &entry.task, frames, seed, &dir)?;
            println!("{} images written to {}", written.len(), dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

