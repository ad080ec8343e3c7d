//! The touch-screen environment: synthetic images, task programs, schedules
//! with switch cues, and replay logs.

mod geometry;
mod pool;
mod render;
pub mod replay;
mod schedule;
mod task;

pub use geometry::{iou, ActionPoint, BBox, Rect, Screen};
pub use pool::{InstancePool, Split};
pub use render::{
    class_name, compose_scene, render_class_instance, render_template, tight_box, Image, Instance, LabeledImage, Pose,
    CLASS_COUNT,
};
pub use schedule::{switch_pair, switch_pairs, ScheduledStream, Segment, SwitchCue, SwitchPair, TaskSchedule};
pub use task::{
    mts_layout, mts_reward, sample_scene, scene_reward, sr_reward, Button, EmittedFrame, Layout, Paradigm,
    RewardTransform, TaskSpec, TouchStream, Variant, MAX_OCCLUSION,
};
