//! JSON-lines action/frame logs that can be replayed bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geometry::ActionPoint;
use super::schedule::ScheduledStream;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub step: u64,
    pub segment: usize,
    pub x: u32,
    pub y: u32,
    pub reward: f64,
    /// Digest of the frame emitted after the action.
    pub frame: String,
    #[serde(default)]
    pub cue: bool,
}

/// Plays `actions` and records what the stream emitted.
pub fn record(stream: &mut ScheduledStream, actions: &[ActionPoint]) -> Result<Vec<ReplayRecord>> {
    let mut out = Vec::with_capacity(actions.len());
    for &a in actions {
        let (emitted, cue) = stream.step(a)?;
        out.push(ReplayRecord {
            step: stream.steps(),
            segment: stream.segment(),
            x: a.x,
            y: a.y,
            reward: emitted.reward,
            frame: format!("{:016x}", emitted.frame.image.digest()),
            cue: cue.is_some(),
        });
    }
    Ok(out)
}

/// Re-executes a log's actions and checks every emitted frame and reward.
pub fn verify(stream: &mut ScheduledStream, log: &[ReplayRecord]) -> Result<()> {
    let actions: Vec<ActionPoint> = log.iter().map(|r| ActionPoint::new(r.x, r.y)).collect();
    let again = record(stream, &actions)?;
    for (a, b) in log.iter().zip(&again) {
        if a.frame != b.frame || a.reward.to_bits() != b.reward.to_bits() || a.cue != b.cue {
            return Err(Error::Environment(format!("replay diverged at step {}", a.step)));
        }
    }
    Ok(())
}

pub fn write_jsonl(path: &Path, records: &[ReplayRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ReplayRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
