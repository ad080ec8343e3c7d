//! Reward-map modules: the EMS architecture, its ablations, a convolutional
//! bottleneck variant, and the analytic stimulus-response predictor.

mod arch;
mod module;
mod perfect;

pub use arch::{ArchActivation, ArchitectureId, Bottleneck, Degree, SizeClass};
pub use module::{
    action_width, build_ablation, build_conv_ems, build_ems, parameter_count, Analytic, Body, Bound, Context,
    ConvBottleneck, Layer, LayerKind, ModuleConfig, ModuleInput, ReMaPModule, CHECKPOINT_KIND,
};
pub use perfect::{fit_boundary, perfect_sr_module, PerfectSr, LOGIT_SCALE, REALIZATION_GAIN};
