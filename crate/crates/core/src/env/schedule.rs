use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::geometry::ActionPoint;
use super::pool::{InstancePool, Split};
use super::render::LabeledImage;
use super::task::{EmittedFrame, RewardTransform, TaskSpec, TouchStream, Variant};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub task: TaskSpec,
    pub steps: u64,
}

/// Ordered tasks with their durations, as stored in schedule config files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub segments: Vec<Segment>,
}

impl TaskSchedule {
    pub fn new(segments: Vec<(TaskSpec, u64)>) -> Self {
        Self {
            segments: segments.into_iter().map(|(task, steps)| Segment { task, steps }).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config("schedule has no tasks".into()));
        }
        for s in &self.segments {
            if s.steps == 0 {
                return Err(Error::Config(format!("task {} has zero duration", s.task.id())));
            }
            s.task.validate()?;
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.segments.iter().map(|s| s.steps).sum()
    }

    /// Steps at which cues fire.
    pub fn boundaries(&self) -> Vec<u64> {
        let mut acc = 0;
        let mut out = Vec::new();
        for s in &self.segments[..self.segments.len().saturating_sub(1)] {
            acc += s.steps;
            out.push(acc);
        }
        out
    }
}

/// Signal that the task just changed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchCue {
    /// Number of actions taken when the cue fired.
    pub step: u64,
    pub segment: usize,
    pub task: TaskSpec,
}

/// A schedule played as one continuous stream.
pub struct ScheduledStream {
    schedule: TaskSchedule,
    pool: Arc<InstancePool>,
    split: Split,
    seed: u64,
    segment: usize,
    in_segment: u64,
    step: u64,
    env: TouchStream,
}

impl ScheduledStream {
    pub fn new(schedule: TaskSchedule, pool: Arc<InstancePool>, split: Split, seed: u64) -> Result<Self> {
        schedule.validate()?;
        let env = TouchStream::new(&schedule.segments[0].task, pool.clone(), split, segment_seed(seed, 0))?;
        Ok(Self {
            schedule,
            pool,
            split,
            seed,
            segment: 0,
            in_segment: 0,
            step: 0,
            env,
        })
    }

    pub fn frame(&self) -> &Arc<LabeledImage> {
        self.env.frame()
    }

    pub fn pool(&self) -> &Arc<InstancePool> {
        &self.pool
    }

    pub fn schedule(&self) -> &TaskSchedule {
        &self.schedule
    }

    pub fn current(&self) -> &TouchStream {
        &self.env
    }

    pub fn segment(&self) -> usize {
        self.segment
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.segment + 1 == self.schedule.segments.len()
            && self.in_segment >= self.schedule.segments[self.segment].steps
    }

    /// Executes one action. When it completes a task, the returned frame is
    /// the first frame of the next task and the cue is set.
    pub fn step(&mut self, action: ActionPoint) -> Result<(EmittedFrame, Option<SwitchCue>)> {
        if self.is_finished() {
            return Err(Error::StreamEnd(self.step));
        }
        let mut out = self.env.step(action)?;
        self.step += 1;
        self.in_segment += 1;
        let mut cue = None;
        if self.in_segment == self.schedule.segments[self.segment].steps
            && self.segment + 1 < self.schedule.segments.len()
        {
            self.segment += 1;
            self.in_segment = 0;
            let task = self.schedule.segments[self.segment].task.clone();
            self.env = TouchStream::new(&task, self.pool.clone(), self.split, segment_seed(self.seed, self.segment))?;
            out.frame = self.env.frame().clone();
            cue = Some(SwitchCue {
                step: self.step,
                segment: self.segment,
                task,
            });
        }
        Ok((out, cue))
    }
}

fn segment_seed(base: u64, segment: usize) -> u64 {
    seed::derive_seed(base, &format!("segment/{segment}"))
}

/// A base task and the task it switches to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchPair {
    pub id: u8,
    pub name: String,
    pub base: TaskSpec,
    pub switch: TaskSpec,
}

/// The fifteen standard switch experiments.
pub fn switch_pairs() -> Vec<SwitchPair> {
    use Variant::*;
    let two = |v| TaskSpec::new(v, &[0, 1]);
    let two_new = |v| TaskSpec::new(v, &[2, 3]);
    let four = |v| TaskSpec::new(v, &[0, 1, 2, 3]);
    let rows: Vec<(&str, TaskSpec, TaskSpec)> = vec![
        ("2-way SR to 2-way SR new classes", two(TwoWaySr), two_new(TwoWaySr)),
        ("2-way SR to 4-way double-binary SR", two(TwoWaySr), four(FourWayDoubleBinarySr)),
        (
            "2-way stationary MTS to 2-way stationary MTS new classes",
            two(TwoWayStationaryMts),
            two_new(TwoWayStationaryMts),
        ),
        ("2-way SR to 2-way stationary MTS", two(TwoWaySr), two(TwoWayStationaryMts)),
        ("2-way stationary MTS to 2-way SR", two(TwoWayStationaryMts), two(TwoWaySr)),
        (
            "2-way stationary MTS to 2-way vertical-motion horizontal-flip MTS",
            two(TwoWayStationaryMts),
            two(TwoWayMotionFlipMts),
        ),
        (
            "2-way vertical-motion horizontal-flip MTS to 4-way 2-shown vertical-motion MTS",
            two(TwoWayMotionFlipMts),
            four(FourWayTwoShownVerticalMotionMts),
        ),
        (
            "4-way 2-shown vertical-motion MTS to 4-way 4-shown permuted MTS",
            four(FourWayTwoShownVerticalMotionMts),
            four(FourWayFourShownPermutedMts),
        ),
        (
            "4-way double-binary SR to 4-way 4-shown stationary MTS",
            four(FourWayDoubleBinarySr),
            four(FourWayFourShownStationaryMts),
        ),
        (
            "4-way 4-shown stationary MTS to 4-way quadrant SR",
            four(FourWayFourShownStationaryMts),
            four(FourWayQuadrantSr),
        ),
        ("2-way SR to 4-way quadrant SR", two(TwoWaySr), four(FourWayQuadrantSr)),
        (
            "4-way double-binary SR to 4-way quadrant SR",
            four(FourWayDoubleBinarySr),
            four(FourWayQuadrantSr),
        ),
        (
            "2-way SR to class reversal",
            two(TwoWaySr),
            two(TwoWaySr).with_transform(RewardTransform::ClassReversal),
        ),
        (
            "2-way SR to squeezed map",
            two(TwoWaySr),
            two(TwoWaySr).with_transform(RewardTransform::Squeeze),
        ),
        (
            "2-way SR to 90 degree map rotation",
            two(TwoWaySr),
            two(TwoWaySr).with_transform(RewardTransform::Rotate90),
        ),
    ];
    rows.into_iter()
        .enumerate()
        .map(|(i, (name, base, switch))| SwitchPair {
            id: i as u8 + 1,
            name: name.into(),
            base,
            switch,
        })
        .collect()
}

pub fn switch_pair(id: u8) -> Result<SwitchPair> {
    switch_pairs()
        .into_iter()
        .find(|p| p.id == id)
        .ok_or_else(|| Error::Config(format!("switch ids are 1..=15, got {id}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::geometry::Screen;

    fn pool() -> Arc<InstancePool> {
        Arc::new(InstancePool::generate(Screen::DESK, 3, 2, 1).unwrap())
    }

    fn run(schedule: TaskSchedule) -> (Vec<u64>, Vec<SwitchCue>, Error) {
        let mut s = ScheduledStream::new(schedule, pool(), Split::Train, 5).unwrap();
        let mut cues = Vec::new();
        let mut cue_steps = Vec::new();
        loop {
            match s.step(ActionPoint::new(1, 1)) {
                Ok((_, Some(c))) => {
                    cue_steps.push(c.step);
                    cues.push(c);
                }
                Ok(_) => {}
                Err(e) => return (cue_steps, cues, e),
            }
        }
    }

    #[test]
    fn no_switch_boundary_still_cues() {
        let a = TaskSpec::new(Variant::TwoWaySr, &[0, 1]);
        let (steps, cues, end) = run(TaskSchedule::new(vec![(a.clone(), 100), (a.clone(), 100)]));
        assert_eq!(steps, vec![100]);
        assert_eq!(cues[0].task, a);
        assert!(matches!(end, Error::StreamEnd(200)));
    }

    #[test]
    fn switch_to_new_program() {
        let a = TaskSpec::new(Variant::TwoWaySr, &[0, 1]);
        let b = TaskSpec::new(Variant::TwoWayStationaryMts, &[0, 1]);
        let mut s = ScheduledStream::new(TaskSchedule::new(vec![(a, 100), (b.clone(), 100)]), pool(), Split::Train, 2).unwrap();
        for i in 0..100 {
            let (_, cue) = s.step(ActionPoint::new(0, 0)).unwrap();
            assert_eq!(cue.is_some(), i == 99);
        }
        assert_eq!(s.current().spec(), &b);
    }

    #[test]
    fn fifteen_pairs_construct() {
        let pairs = switch_pairs();
        assert_eq!(pairs.len(), 15);
        let p = pool();
        for pair in &pairs {
            TouchStream::new(&pair.base, p.clone(), Split::Train, 0).unwrap();
            TouchStream::new(&pair.switch, p.clone(), Split::Train, 0).unwrap();
        }
        assert_eq!(pairs[10].switch.variant, Variant::FourWayQuadrantSr);
        assert_eq!(pairs[12].switch.transform, RewardTransform::ClassReversal);
        assert!(switch_pair(16).is_err());
    }

    #[test]
    fn empty_or_zero_schedules_rejected() {
        assert!(TaskSchedule::new(vec![]).validate().is_err());
        let a = TaskSpec::new(Variant::TwoWaySr, &[0, 1]);
        assert!(TaskSchedule::new(vec![(a, 0)]).validate().is_err());
    }

    #[test]
    fn schedule_json_round_trip() {
        let a = TaskSpec::new(Variant::TwoWaySr, &[0, 1]).with_transform(RewardTransform::Rotate90);
        let s = TaskSchedule::new(vec![(a, 10)]);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"two-way-sr\"") && text.contains("\"rotate90\""));
        assert_eq!(serde_json::from_str::<TaskSchedule>(&text).unwrap(), s);
    }
}
