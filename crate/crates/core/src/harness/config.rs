use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{DistFamily, PolicyConfig, ValidationConfig};
use crate::env::{Paradigm, Screen, TaskSpec, Variant};
use crate::error::{Error, Result};
use crate::voting::{VoteInit, VoteMode, VotingConfig};
use crate::zoo::ArchitectureId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub per_class_train: usize,
    pub per_class_validation: usize,
    pub seed: u64,
}

/// One task of a suite with its step budget and the horizon up to which
/// its AUC is taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub task: TaskSpec,
    pub steps: u64,
    pub horizon: u64,
}

/// A learning-rate override; unset fields match anything. Later entries win.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrEntry {
    #[serde(default)]
    pub architecture: Option<ArchitectureId>,
    #[serde(default)]
    pub paradigm: Option<Paradigm>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub default: f64,
    #[serde(default)]
    pub table: Vec<LrEntry>,
}

impl LearningRates {
    pub fn lookup(&self, arch: ArchitectureId, paradigm: Paradigm) -> f64 {
        self.table
            .iter()
            .rev()
            .find(|e| e.architecture.is_none_or(|a| a == arch) && e.paradigm.is_none_or(|p| p == paradigm))
            .map(|e| e.lr)
            .unwrap_or(self.default)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    /// Switch pairs to run; 0 re-cues the same 2-way SR task.
    pub ids: Vec<u8>,
    pub architecture: ArchitectureId,
    pub base_steps: u64,
    pub steps: u64,
    pub modes: Vec<VoteMode>,
    pub voting: VotingConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub screen: u32,
    pub backbone_seed: u64,
    /// Encoder checkpoint; trained in-process from `backbone_seed` when absent.
    #[serde(default)]
    pub backbone_checkpoint: Option<PathBuf>,
    pub pool: PoolConfig,
    pub architectures: Vec<ArchitectureId>,
    pub tasks: Vec<TaskEntry>,
    pub policy: PolicyConfig,
    pub learning_rates: LearningRates,
    pub seeds: Vec<u64>,
    pub validation: ValidationConfig,
    /// Trailing window, in steps, for smoothing validation curves.
    pub smoothing: u64,
    pub switch: SwitchConfig,
    /// Steps at which reward maps are rendered.
    #[serde(default)]
    pub capture_maps: Vec<u64>,
    /// Write one JSON line per environment step.
    pub step_logs: bool,
    pub output: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale defaults: the four-task efficiency suite and the switch
    /// experiments used by the acceptance checks.
    pub fn desk() -> Self {
        let two = |v| TaskSpec::new(v, &[0, 1]);
        let four = |v| TaskSpec::new(v, &[0, 1, 2, 3]);
        let entry = |task, steps| TaskEntry {
            task,
            steps,
            horizon: steps,
        };
        Self {
            screen: 64,
            backbone_seed: 0,
            backbone_checkpoint: None,
            pool: PoolConfig {
                per_class_train: 40,
                per_class_validation: 20,
                seed: 1,
            },
            architectures: vec![ArchitectureId::EMS, "late-relu-small".parse().expect("valid id")],
            tasks: vec![
                entry(two(Variant::TwoWaySr), 30_000),
                entry(four(Variant::FourWayQuadrantSr), 40_000),
                entry(two(Variant::TwoWayStationaryMts), 40_000),
                entry(four(Variant::FourWayFourShownStationaryMts), 40_000),
            ],
            policy: PolicyConfig {
                family: DistFamily::Boltzmann {
                    temperature: 0.05,
                    literal: false,
                },
                batch: 8,
                ..PolicyConfig::default()
            },
            learning_rates: LearningRates {
                default: 1e-3,
                table: Vec::new(),
            },
            seeds: vec![0, 1, 2],
            validation: ValidationConfig::default(),
            smoothing: 2000,
            switch: SwitchConfig {
                ids: vec![1, 11, 13],
                architecture: ArchitectureId::EMS,
                base_steps: 10_000,
                steps: 30_000,
                modes: vec![VoteMode::Layer, VoteMode::Unit],
                voting: VotingConfig {
                    init: VoteInit {
                        b1: 1.0,
                        ..VoteInit::default()
                    },
                    vote_lr: Some(3e-2),
                    ..VotingConfig::default()
                },
            },
            capture_maps: Vec::new(),
            step_logs: true,
            output: PathBuf::from("out"),
        }
    }

    pub fn screen(&self) -> Screen {
        Screen::square(self.screen)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.screen < 16 {
            return Err(Error::Config(format!("screen side {} is too small", self.screen)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.smoothing == 0 {
            return Err(Error::Config("smoothing window must be positive".into()));
        }
        if self.validation.every == 0 || self.validation.trials == 0 {
            return Err(Error::Config("validation cadence and trials must be positive".into()));
        }
        self.policy.validate()?;
        for t in &self.tasks {
            t.task.validate()?;
            if t.horizon == 0 || t.horizon > t.steps {
                return Err(Error::Config(format!(
                    "task `{}`: horizon {} outside 1..={}",
                    t.task.id(),
                    t.horizon,
                    t.steps
                )));
            }
        }
        for lr in std::iter::once(self.learning_rates.default).chain(self.learning_rates.table.iter().map(|e| e.lr)) {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate {lr} must be positive")));
            }
        }
        self.switch.voting.init.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_round_trips_and_validates() {
        let c = ExperimentConfig::desk();
        c.validate().unwrap();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut other = c.clone();
        other.seeds.push(9);
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentConfig::desk();
        c.tasks[0].horizon = c.tasks[0].steps + 1;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk();
        c.seeds.clear();
        assert!(c.validate().is_err());
        let text = serde_json::to_string(&ExperimentConfig::desk()).unwrap().replacen('{', "{\"bogus\":1,", 1);
        assert!(serde_json::from_str::<ExperimentConfig>(&text).is_err());
    }

    #[test]
    fn learning_rate_lookup_prefers_later_matches() {
        let ems = ArchitectureId::EMS;
        let late: ArchitectureId = "late-relu-small".parse().unwrap();
        let lr = LearningRates {
            default: 1e-3,
            table: vec![
                LrEntry {
                    architecture: None,
                    paradigm: Some(Paradigm::Mts),
                    lr: 5e-4,
                },
                LrEntry {
                    architecture: Some(late),
                    paradigm: Some(Paradigm::Mts),
                    lr: 2e-4,
                },
            ],
        };
        assert_eq!(lr.lookup(ems, Paradigm::Sr), 1e-3);
        assert_eq!(lr.lookup(ems, Paradigm::Mts), 5e-4);
        assert_eq!(lr.lookup(late, Paradigm::Mts), 2e-4);
    }
}
