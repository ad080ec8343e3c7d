use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{iou, ActionPoint, BBox, Rect, Screen};
use super::pool::{InstancePool, Split};
use super::render::{compose_scene, render_template, Image, LabeledImage, Pose, CLASS_COUNT};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Paradigm {
    Sr,
    Mts,
    Loc,
    SceneMts,
}

/// The thirteen task programs, numbered as in the variant catalogue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    TwoWaySr,
    FourWayDoubleBinarySr,
    FourWayQuadrantSr,
    TwoWayStationaryMts,
    TwoWayHorizontalFlipMts,
    TwoWayVerticalMotionMts,
    TwoWayMotionFlipMts,
    FourWayTwoShownMts,
    FourWayTwoShownVerticalMotionMts,
    FourWayFourShownStationaryMts,
    FourWayFourShownPermutedMts,
    Localization,
    SceneMts,
}

impl Variant {
    pub const ALL: [Variant; 13] = [
        Variant::TwoWaySr,
        Variant::FourWayDoubleBinarySr,
        Variant::FourWayQuadrantSr,
        Variant::TwoWayStationaryMts,
        Variant::TwoWayHorizontalFlipMts,
        Variant::TwoWayVerticalMotionMts,
        Variant::TwoWayMotionFlipMts,
        Variant::FourWayTwoShownMts,
        Variant::FourWayTwoShownVerticalMotionMts,
        Variant::FourWayFourShownStationaryMts,
        Variant::FourWayFourShownPermutedMts,
        Variant::Localization,
        Variant::SceneMts,
    ];

    pub fn id(self) -> u8 {
        Variant::ALL.iter().position(|&v| v == self).expect("listed") as u8 + 1
    }

    pub fn from_id(id: u8) -> Result<Variant> {
        Variant::ALL
            .get((id as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Config(format!("task variant ids are 1..=13, got {id}")))
    }

    pub fn paradigm(self) -> Paradigm {
        match self.id() {
            1..=3 => Paradigm::Sr,
            4..=11 => Paradigm::Mts,
            12 => Paradigm::Loc,
            _ => Paradigm::SceneMts,
        }
    }

    /// Exact class count, or `None` when any non-empty set works.
    pub fn class_count(self) -> Option<usize> {
        match self {
            Variant::TwoWaySr
            | Variant::TwoWayStationaryMts
            | Variant::TwoWayHorizontalFlipMts
            | Variant::TwoWayVerticalMotionMts
            | Variant::TwoWayMotionFlipMts => Some(2),
            Variant::Localization | Variant::SceneMts => None,
            _ => Some(4),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::TwoWaySr => "two-way-sr",
            Variant::FourWayDoubleBinarySr => "four-way-double-binary-sr",
            Variant::FourWayQuadrantSr => "four-way-quadrant-sr",
            Variant::TwoWayStationaryMts => "two-way-stationary-mts",
            Variant::TwoWayHorizontalFlipMts => "two-way-horizontal-flip-mts",
            Variant::TwoWayVerticalMotionMts => "two-way-vertical-motion-mts",
            Variant::TwoWayMotionFlipMts => "two-way-motion-flip-mts",
            Variant::FourWayTwoShownMts => "four-way-two-shown-mts",
            Variant::FourWayTwoShownVerticalMotionMts => "four-way-two-shown-vertical-motion-mts",
            Variant::FourWayFourShownStationaryMts => "four-way-four-shown-stationary-mts",
            Variant::FourWayFourShownPermutedMts => "four-way-four-shown-permuted-mts",
            Variant::Localization => "localization",
            Variant::SceneMts => "scene-mts",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Reward-geometry changes used by switch experiments on SR tasks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardTransform {
    #[default]
    None,
    /// Class-to-region assignment reversed.
    ClassReversal,
    /// No reward anywhere in the bottom half.
    Squeeze,
    /// Reward regions rotated a quarter turn clockwise.
    Rotate90,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub variant: Variant,
    pub classes: Vec<usize>,
    #[serde(default)]
    pub transform: RewardTransform,
}

impl TaskSpec {
    pub fn new(variant: Variant, classes: &[usize]) -> Self {
        Self {
            variant,
            classes: classes.to_vec(),
            transform: RewardTransform::None,
        }
    }

    pub fn with_transform(mut self, transform: RewardTransform) -> Self {
        self.transform = transform;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config(format!("{}: empty class set", self.variant)));
        }
        if let Some(n) = self.variant.class_count() {
            if self.classes.len() != n {
                return Err(Error::Config(format!(
                    "{} needs {n} classes, got {}",
                    self.variant,
                    self.classes.len()
                )));
            }
        }
        if self.variant == Variant::SceneMts && self.classes.len() < 2 {
            return Err(Error::Config("scene-mts needs at least 2 classes".into()));
        }
        for (i, &c) in self.classes.iter().enumerate() {
            if c >= CLASS_COUNT {
                return Err(Error::Config(format!("class {c} outside 0..{CLASS_COUNT}")));
            }
            if self.classes[..i].contains(&c) {
                return Err(Error::Config(format!("class {c} listed twice")));
            }
        }
        if self.transform != RewardTransform::None && self.variant.paradigm() != Paradigm::Sr {
            return Err(Error::Config(format!(
                "reward transforms apply to SR variants only, not {}",
                self.variant
            )));
        }
        Ok(())
    }

    /// Short identifier used in logs and file names.
    pub fn id(&self) -> String {
        let classes: Vec<String> = self.classes.iter().map(|c| c.to_string()).collect();
        let mut s = format!("v{}-c{}", self.variant.id(), classes.join("."));
        match self.transform {
            RewardTransform::None => {}
            RewardTransform::ClassReversal => s.push_str("-reversal"),
            RewardTransform::Squeeze => s.push_str("-squeeze"),
            RewardTransform::Rotate90 => s.push_str("-rot90"),
        }
        s
    }
}

/// Button geometry scaled from the 224-pixel reference layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub template: u32,
    pub edge: u32,
    pub gap: u32,
}

impl Layout {
    pub fn for_screen(screen: Screen) -> Result<Layout> {
        let side = screen.height.min(screen.width);
        let s = side as f64 / 224.0;
        let edge = ((6.0 * s).round() as u32).max(1);
        let gap = ((12.0 * s).round() as u32).max(1);
        let room = side.saturating_sub(2 * edge + gap) / 2;
        let template = ((100.0 * s).round() as u32).min(room);
        if template < 4 {
            return Err(Error::Config(format!("screen {side} too small for match buttons")));
        }
        Ok(Layout { template, edge, gap })
    }

    fn left(&self, screen: Screen) -> u32 {
        let _ = screen;
        self.edge
    }

    fn right(&self, screen: Screen) -> u32 {
        screen.width - self.edge - self.template
    }

    fn top(&self) -> u32 {
        self.edge
    }

    fn bottom(&self, screen: Screen) -> u32 {
        screen.height - self.edge - self.template
    }

    fn middle(&self, screen: Screen) -> u32 {
        (screen.height - self.template) / 2
    }
}

/// One on-screen button: the index into the task's class list and its rect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Button {
    pub class_index: usize,
    pub rect: Rect,
}

#[derive(Clone, Debug)]
pub struct EmittedFrame {
    pub frame: Arc<LabeledImage>,
    pub reward: f64,
}

#[derive(Clone, Debug)]
enum Phase {
    Sr { class_index: usize },
    MtsSample { class_index: usize },
    MtsMatch { class_index: usize, buttons: Vec<Button> },
    LocFirst { target: BBox },
    LocSecond { target: BBox, first: ActionPoint },
    SceneSample { class_index: usize },
    SceneMatch { class_index: usize },
}

/// Reward for an SR action given the index of the displayed class.
pub fn sr_reward(spec: &TaskSpec, screen: Screen, class_index: usize, action: ActionPoint) -> f64 {
    let n = spec.classes.len();
    let mut a = action;
    let mut idx = class_index;
    match spec.transform {
        RewardTransform::None => {}
        RewardTransform::ClassReversal => idx = n - 1 - class_index,
        RewardTransform::Squeeze => {
            if !screen.in_top_half(action) {
                return 0.0;
            }
        }
        RewardTransform::Rotate90 => {
            a = ActionPoint::new(action.y, screen.width - 1 - action.x);
        }
    }
    let hit = match spec.variant {
        Variant::TwoWaySr => screen.in_left_half(a) == (idx == 0),
        Variant::FourWayDoubleBinarySr => screen.in_left_half(a) == (idx % 2 == 0),
        Variant::FourWayQuadrantSr => screen.quadrant(a) == idx,
        _ => false,
    };
    hit as u8 as f64
}

/// Reward for a match-screen action.
pub fn mts_reward(buttons: &[Button], class_index: usize, action: ActionPoint) -> f64 {
    buttons
        .iter()
        .any(|b| b.class_index == class_index && b.rect.contains(action)) as u8 as f64
}

/// Reward for a scene action: inside any visible instance of `class_id`.
pub fn scene_reward(scene: &LabeledImage, class_id: usize, action: ActionPoint) -> f64 {
    let i = scene.image.screen().index(action);
    scene
        .instances
        .iter()
        .any(|inst| inst.class_id == class_id && inst.mask[i]) as u8 as f64
}

/// Button placement for one match screen.
pub fn mts_layout<R: Rng>(variant: Variant, screen: Screen, layout: Layout, class_index: usize, n_classes: usize, rng: &mut R) -> Vec<Button> {
    let t = layout.template;
    let rect = |x, y| Rect { x, y, w: t, h: t };
    let (l, r) = (layout.left(screen), layout.right(screen));
    let mid = layout.middle(screen);
    let vert = |rng: &mut R| rng.random_range(layout.top()..=layout.bottom(screen));
    let grid = [
        (l, layout.top()),
        (r, layout.top()),
        (l, layout.bottom(screen)),
        (r, layout.bottom(screen)),
    ];
    let pair = |a: usize, b: usize, ya: u32, yb: u32| {
        vec![
            Button { class_index: a, rect: rect(l, ya) },
            Button { class_index: b, rect: rect(r, yb) },
        ]
    };
    match variant {
        Variant::TwoWayStationaryMts => pair(0, 1, mid, mid),
        Variant::TwoWayHorizontalFlipMts => {
            if rng.random_bool(0.5) {
                pair(0, 1, mid, mid)
            } else {
                pair(1, 0, mid, mid)
            }
        }
        Variant::TwoWayVerticalMotionMts => {
            let (ya, yb) = (vert(rng), vert(rng));
            pair(0, 1, ya, yb)
        }
        Variant::TwoWayMotionFlipMts => {
            let (ya, yb) = (vert(rng), vert(rng));
            if rng.random_bool(0.5) {
                pair(0, 1, ya, yb)
            } else {
                pair(1, 0, ya, yb)
            }
        }
        Variant::FourWayTwoShownMts | Variant::FourWayTwoShownVerticalMotionMts => {
            let mut other = rng.random_range(0..n_classes - 1);
            if other >= class_index {
                other += 1;
            }
            let (ya, yb) = if variant == Variant::FourWayTwoShownMts {
                (mid, mid)
            } else {
                (vert(rng), vert(rng))
            };
            if rng.random_bool(0.5) {
                pair(class_index, other, ya, yb)
            } else {
                pair(other, class_index, ya, yb)
            }
        }
        Variant::FourWayFourShownStationaryMts => (0..4)
            .map(|i| Button { class_index: i, rect: rect(grid[i].0, grid[i].1) })
            .collect(),
        Variant::FourWayFourShownPermutedMts => {
            let mut order: Vec<usize> = (0..4).collect();
            order.shuffle(rng);
            order
                .iter()
                .enumerate()
                .map(|(slot, &c)| Button { class_index: c, rect: rect(grid[slot].0, grid[slot].1) })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// A single task as an endless stream of frames and rewards.
pub struct TouchStream {
    spec: TaskSpec,
    screen: Screen,
    layout: Layout,
    pool: Arc<InstancePool>,
    split: Split,
    rng: ChaCha8Rng,
    phase: Phase,
    frame: Arc<LabeledImage>,
    templates: Vec<Image>,
    scene_samples: Vec<Arc<LabeledImage>>,
    match_screens: HashMap<Vec<Button>, Arc<LabeledImage>>,
    steps: u64,
}

impl TouchStream {
    pub fn new(spec: &TaskSpec, pool: Arc<InstancePool>, split: Split, seed: u64) -> Result<Self> {
        spec.validate()?;
        let screen = pool.screen();
        if spec.transform == RewardTransform::Rotate90 && screen.height != screen.width {
            return Err(Error::Config("map rotation needs a square screen".into()));
        }
        let layout = Layout::for_screen(screen)?;
        let templates = spec
            .classes
            .iter()
            .map(|&c| render_template(c, layout.template))
            .collect::<Result<Vec<_>>>()?;
        let scene_samples = if spec.variant == Variant::SceneMts {
            spec.classes
                .iter()
                .map(|&c| {
                    Ok(Arc::new(LabeledImage {
                        image: render_template(c, screen.width.min(screen.height))?,
                        class_id: Some(c),
                        instances: Vec::new(),
                    }))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let placeholder = Arc::new(LabeledImage {
            image: Image::filled(screen, [0, 0, 0]),
            class_id: None,
            instances: Vec::new(),
        });
        let mut env = Self {
            spec: spec.clone(),
            screen,
            layout,
            pool,
            split,
            rng: seed::stream(seed, "env"),
            phase: Phase::Sr { class_index: 0 },
            frame: placeholder,
            templates,
            scene_samples,
            match_screens: HashMap::new(),
            steps: 0,
        };
        env.begin_trial()?;
        Ok(env)
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn screen(&self) -> Screen {
        self.screen
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// The frame the next action responds to.
    pub fn frame(&self) -> &Arc<LabeledImage> {
        &self.frame
    }

    /// Buttons on the current match screen, if one is showing.
    pub fn buttons(&self) -> Option<&[Button]> {
        match &self.phase {
            Phase::MtsMatch { buttons, .. } => Some(buttons),
            _ => None,
        }
    }

    /// Whether the next action can earn reward (the last action of a trial).
    pub fn scored(&self) -> bool {
        matches!(
            self.phase,
            Phase::Sr { .. } | Phase::MtsMatch { .. } | Phase::LocSecond { .. } | Phase::SceneMatch { .. }
        )
    }

    /// Index of the class the current trial is about, where applicable.
    pub fn target_class_index(&self) -> Option<usize> {
        match &self.phase {
            Phase::Sr { class_index }
            | Phase::MtsSample { class_index }
            | Phase::MtsMatch { class_index, .. }
            | Phase::SceneSample { class_index }
            | Phase::SceneMatch { class_index } => Some(*class_index),
            _ => None,
        }
    }

    fn pick_class(&mut self) -> usize {
        self.rng.random_range(0..self.spec.classes.len())
    }

    fn pool_frame(&mut self, class_index: usize) -> Arc<LabeledImage> {
        let class = self.spec.classes[class_index];
        let items = self.pool.instances(class, self.split);
        items[self.rng.random_range(0..items.len())].clone()
    }

    fn begin_trial(&mut self) -> Result<()> {
        match self.spec.variant.paradigm() {
            Paradigm::Sr => {
                let class_index = self.pick_class();
                self.frame = self.pool_frame(class_index);
                self.phase = Phase::Sr { class_index };
            }
            Paradigm::Mts => {
                let class_index = self.pick_class();
                self.frame = self.pool_frame(class_index);
                self.phase = Phase::MtsSample { class_index };
            }
            Paradigm::Loc => {
                let k = self.pick_class();
                let class = self.spec.classes[k];
                let pose = Pose::sample(&mut self.rng, 0.12, 0.4);
                let seed = self.rng.random();
                let img = compose_scene(self.screen, &[(class, pose)], seed)?;
                let target = img.instances[0].bbox;
                self.frame = Arc::new(img);
                self.phase = Phase::LocFirst { target };
            }
            Paradigm::SceneMts => {
                let class_index = self.pick_class();
                self.frame = self.scene_samples[class_index].clone();
                self.phase = Phase::SceneSample { class_index };
            }
        }
        Ok(())
    }

    /// Executes one action and returns its reward with the next frame.
    pub fn step(&mut self, action: ActionPoint) -> Result<EmittedFrame> {
        if !self.screen.contains(action) {
            return Err(Error::Environment(format!(
                "action ({}, {}) outside {}×{} screen",
                action.x, action.y, self.screen.width, self.screen.height
            )));
        }
        let reward = match self.phase.clone() {
            Phase::Sr { class_index } => self.sr_step(class_index, action)?,
            Phase::MtsSample { class_index } => self.mts_show_match(class_index)?,
            Phase::MtsMatch { class_index, buttons } => {
                let r = mts_reward(&buttons, class_index, action);
                self.begin_trial()?;
                r
            }
            Phase::LocFirst { target } => {
                self.phase = Phase::LocSecond { target, first: action };
                0.0
            }
            Phase::LocSecond { target, first } => self.loc_step(target, first, action)?,
            Phase::SceneSample { class_index } => self.scene_show_match(class_index)?,
            Phase::SceneMatch { class_index } => {
                let r = scene_reward(&self.frame, self.spec.classes[class_index], action);
                self.begin_trial()?;
                r
            }
        };
        debug_assert!((0.0..=1.0).contains(&reward));
        self.steps += 1;
        Ok(EmittedFrame {
            frame: self.frame.clone(),
            reward,
        })
    }

    fn sr_step(&mut self, class_index: usize, action: ActionPoint) -> Result<f64> {
        let r = sr_reward(&self.spec, self.screen, class_index, action);
        self.begin_trial()?;
        Ok(r)
    }

    fn mts_show_match(&mut self, class_index: usize) -> Result<f64> {
        let buttons = mts_layout(
            self.spec.variant,
            self.screen,
            self.layout,
            class_index,
            self.spec.classes.len(),
            &mut self.rng,
        );
        let frame = match self.match_screens.get(&buttons) {
            Some(f) => f.clone(),
            None => {
                let mut img = Image::filled(self.screen, [0, 0, 0]);
                for b in &buttons {
                    img = img.paste(&self.templates[b.class_index], b.rect.x, b.rect.y);
                }
                let f = Arc::new(LabeledImage {
                    image: img,
                    class_id: None,
                    instances: Vec::new(),
                });
                self.match_screens.insert(buttons.clone(), f.clone());
                f
            }
        };
        self.frame = frame;
        self.phase = Phase::MtsMatch { class_index, buttons };
        Ok(0.0)
    }

    fn loc_step(&mut self, target: BBox, first: ActionPoint, second: ActionPoint) -> Result<f64> {
        let r = iou(&BBox::from_corners(first, second), &target);
        self.begin_trial()?;
        Ok(r)
    }

    fn scene_show_match(&mut self, class_index: usize) -> Result<f64> {
        let target = self.spec.classes[class_index];
        let scene = sample_scene(self.screen, &self.spec.classes, target, &mut self.rng)?;
        self.frame = Arc::new(scene);
        self.phase = Phase::SceneMatch { class_index };
        Ok(0.0)
    }
}

/// Largest allowed overlap between two silhouettes, as a fraction of the
/// smaller one.
pub const MAX_OCCLUSION: f64 = 0.3;

fn silhouette(screen: Screen, class_id: usize, pose: Pose) -> Result<Vec<bool>> {
    Ok(compose_scene(screen, &[(class_id, pose)], 0)?.instances.remove(0).mask)
}

/// A scene of 3 to 6 instances containing at least one of `target`.
pub fn sample_scene(screen: Screen, classes: &[usize], target: usize, rng: &mut ChaCha8Rng) -> Result<LabeledImage> {
    let n = rng.random_range(3..=6usize);
    let mut items: Vec<(usize, Pose)> = Vec::with_capacity(n);
    let mut masks: Vec<Vec<bool>> = Vec::with_capacity(n);
    let mut attempts = 0;
    while items.len() < n && attempts < 200 {
        attempts += 1;
        let class = if items.is_empty() {
            target
        } else {
            classes[rng.random_range(0..classes.len())]
        };
        let pose = Pose::sample(rng, 0.1, 0.2);
        let mask = silhouette(screen, class, pose)?;
        let area = mask.iter().filter(|&&m| m).count();
        if area == 0 {
            continue;
        }
        let ok = masks.iter().all(|m| {
            let other = m.iter().filter(|&&v| v).count();
            let overlap = m.iter().zip(&mask).filter(|(a, b)| **a && **b).count();
            overlap as f64 <= MAX_OCCLUSION * area.min(other) as f64
        });
        if ok {
            items.push((class, pose));
            masks.push(mask);
        }
    }
    if items.len() < 3 {
        return Err(Error::Environment("could not place 3 instances in a scene".into()));
    }
    let k = rng.random_range(0..items.len());
    items.swap(0, k);
    compose_scene(screen, &items, rng.random())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pool() -> Arc<InstancePool> {
        Arc::new(InstancePool::generate(Screen::DESK, 4, 2, 5).unwrap())
    }

    #[test]
    fn variant_ids_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::from_id(v.id()).unwrap(), v);
        }
        assert!(Variant::from_id(0).is_err());
        assert!(Variant::from_id(14).is_err());
        assert_eq!(Variant::FourWayQuadrantSr.id(), 3);
        assert_eq!(Variant::SceneMts.id(), 13);
    }

    #[test]
    fn layout_constants() {
        assert_eq!(
            Layout::for_screen(Screen::FULL).unwrap(),
            Layout { template: 100, edge: 6, gap: 12 }
        );
        let d = Layout::for_screen(Screen::DESK).unwrap();
        assert_eq!(d, Layout { template: 28, edge: 2, gap: 3 });
    }

    #[test]
    fn binary_sr_regions() {
        let spec = TaskSpec::new(Variant::TwoWaySr, &[0, 1]);
        let s = Screen::DESK;
        assert_eq!(sr_reward(&spec, s, 0, ActionPoint::new(5, 32)), 1.0);
        assert_eq!(sr_reward(&spec, s, 0, ActionPoint::new(40, 32)), 0.0);
        assert_eq!(sr_reward(&spec, s, 1, ActionPoint::new(40, 32)), 1.0);
    }

    #[test]
    fn quadrant_boundary_is_half_open() {
        let spec = TaskSpec::new(Variant::FourWayQuadrantSr, &[0, 1, 2, 3]);
        let s = Screen::DESK;
        assert_eq!(sr_reward(&spec, s, 3, ActionPoint::new(32, 32)), 1.0);
        assert_eq!(sr_reward(&spec, s, 0, ActionPoint::new(31, 31)), 1.0);
        assert_eq!(sr_reward(&spec, s, 0, ActionPoint::new(32, 31)), 0.0);
    }

    #[test]
    fn transforms() {
        let s = Screen::DESK;
        let base = TaskSpec::new(Variant::TwoWaySr, &[0, 1]);
        let rev = base.clone().with_transform(RewardTransform::ClassReversal);
        let sq = base.clone().with_transform(RewardTransform::Squeeze);
        let rot = base.clone().with_transform(RewardTransform::Rotate90);
        let left_top = ActionPoint::new(3, 3);
        let left_bottom = ActionPoint::new(3, 60);
        assert_eq!(sr_reward(&rev, s, 0, left_top), 0.0);
        assert_eq!(sr_reward(&rev, s, 1, left_top), 1.0);
        assert_eq!(sr_reward(&sq, s, 0, left_top), 1.0);
        assert_eq!(sr_reward(&sq, s, 0, left_bottom), 0.0);
        // the left-half region turns into the top half
        assert_eq!(sr_reward(&rot, s, 0, ActionPoint::new(60, 3)), 1.0);
        assert_eq!(sr_reward(&rot, s, 0, left_bottom), 0.0);
        assert_eq!(sr_reward(&rot, s, 1, left_bottom), 1.0);
    }

    #[test]
    fn spec_validation() {
        assert!(TaskSpec::new(Variant::TwoWaySr, &[0]).validate().is_err());
        assert!(TaskSpec::new(Variant::TwoWaySr, &[0, 0]).validate().is_err());
        assert!(TaskSpec::new(Variant::TwoWaySr, &[0, 9]).validate().is_err());
        assert!(TaskSpec::new(Variant::TwoWayStationaryMts, &[0, 1])
            .with_transform(RewardTransform::Squeeze)
            .validate()
            .is_err());
        assert!(TaskSpec::new(Variant::Localization, &[2]).validate().is_ok());
    }

    #[test]
    fn stationary_mts_trial() {
        let spec = TaskSpec::new(Variant::TwoWayStationaryMts, &[0, 1]);
        let mut env = TouchStream::new(&spec, pool(), Split::Train, 3).unwrap();
        let class_index = env.target_class_index().unwrap();
        let out = env.step(ActionPoint::new(0, 0)).unwrap();
        assert_eq!(out.reward, 0.0);
        let buttons = env.buttons().unwrap().to_vec();
        assert_eq!(buttons.len(), 2);
        let correct = buttons.iter().find(|b| b.class_index == class_index).unwrap().rect;
        // the gap between the two buttons is never rewarded
        let between = ActionPoint::new(32, correct.y + 2);
        assert!(!buttons.iter().any(|b| b.rect.contains(between)));
        let hit = env.step(ActionPoint::new(correct.x + 1, correct.y + 1)).unwrap();
        assert_eq!(hit.reward, 1.0);
    }

    #[test]
    fn permuted_slots_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layout = Layout::for_screen(Screen::DESK).unwrap();
        let mut counts = [[0u32; 4]; 4];
        let slots: Vec<(u32, u32)> = mts_layout(Variant::FourWayFourShownStationaryMts, Screen::DESK, layout, 0, 4, &mut rng)
            .iter()
            .map(|b| (b.rect.x, b.rect.y))
            .collect();
        for _ in 0..1000 {
            let bs = mts_layout(Variant::FourWayFourShownPermutedMts, Screen::DESK, layout, 0, 4, &mut rng);
            for b in bs {
                let slot = slots.iter().position(|&s| s == (b.rect.x, b.rect.y)).unwrap();
                counts[b.class_index][slot] += 1;
            }
        }
        for row in counts {
            for c in row {
                assert!((c as f64 / 1000.0 - 0.25).abs() <= 0.03, "{counts:?}");
            }
        }
    }

    #[test]
    fn buttons_never_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for screen in [Screen::DESK, Screen::FULL] {
            let layout = Layout::for_screen(screen).unwrap();
            for v in Variant::ALL.iter().filter(|v| v.paradigm() == Paradigm::Mts) {
                for _ in 0..50 {
                    let bs = mts_layout(*v, screen, layout, 1, v.class_count().unwrap(), &mut rng);
                    for i in 0..bs.len() {
                        let r = bs[i].rect;
                        assert!(r.x + r.w <= screen.width && r.y + r.h <= screen.height);
                        for j in i + 1..bs.len() {
                            assert!(!r.overlaps(&bs[j].rect));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn localization_two_steps() {
        let spec = TaskSpec::new(Variant::Localization, &[0, 1]);
        let mut env = TouchStream::new(&spec, pool(), Split::Train, 8).unwrap();
        let b = env.frame().instances[0].bbox;
        let first = env.step(ActionPoint::new(b.x1 as u32 - 1, b.y0 as u32)).unwrap();
        assert_eq!(first.reward, 0.0);
        let second = env.step(ActionPoint::new(b.x0 as u32, b.y1 as u32 - 1)).unwrap();
        assert_eq!(second.reward, 1.0);
    }

    #[test]
    fn scene_rewards() {
        let spec = TaskSpec::new(Variant::SceneMts, &[0, 1, 2]);
        let mut env = TouchStream::new(&spec, pool(), Split::Train, 4).unwrap();
        for _ in 0..20 {
            let class = spec.classes[env.target_class_index().unwrap()];
            env.step(ActionPoint::new(0, 0)).unwrap();
            let scene = env.frame().clone();
            assert!((3..=6).contains(&scene.instances.len()));
            let screen = scene.image.screen();
            let hit = scene
                .instances
                .iter()
                .filter(|i| i.class_id == class)
                .flat_map(|i| i.mask.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k))
                .next()
                .expect("target visible");
            let wrong = scene
                .instances
                .iter()
                .filter(|i| i.class_id != class)
                .flat_map(|i| i.mask.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k))
                .next();
            let background = (0..screen.cells()).find(|&k| scene.instances.iter().all(|i| !i.mask[k]));
            assert_eq!(scene_reward(&scene, class, screen.point(hit)), 1.0);
            if let Some(w) = wrong {
                assert_eq!(scene_reward(&scene, class, screen.point(w)), 0.0);
            }
            if let Some(bg) = background {
                assert_eq!(scene_reward(&scene, class, screen.point(bg)), 0.0);
            }
            env.step(screen.point(hit)).unwrap();
        }
    }

    #[test]
    fn out_of_grid_action_rejected() {
        let spec = TaskSpec::new(Variant::TwoWaySr, &[0, 1]);
        let mut env = TouchStream::new(&spec, pool(), Split::Train, 1).unwrap();
        assert!(matches!(env.step(ActionPoint::new(64, 0)), Err(Error::Environment(_))));
    }
}
