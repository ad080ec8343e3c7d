//! Layered reward-map modules and their forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::arch::{ArchitectureId, Bottleneck, SizeClass};
use crate::checkpoint::Checkpoint;
use crate::diffcore::{hash_parameters, Activation, Parameter, Tape, Tensor, Var};
use crate::env::Paradigm;
use crate::error::{Error, Result};

pub const CHECKPOINT_KIND: &str = "remap-module";

/// Width of the per-candidate action block: `k_b` history points, the
/// candidate point, and one validity bit per history slot.
pub fn action_width(k_b: usize) -> usize {
    2 * k_b + 2 + k_b
}

/// 1×1-convolution bottleneck over the encoder's spatial map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBottleneck {
    pub positions: usize,
    pub channels: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleConfig {
    pub arch: ArchitectureId,
    /// Early bottleneck: `n_0, …, n_k`. Late bottleneck: `n_1, …, n_k`.
    pub widths: Vec<usize>,
    pub k_b: usize,
    pub k_f: usize,
    pub action_width: usize,
    /// Width of the concatenated scene history, `(k_b + 1) · D`.
    pub scene_width: usize,
    pub init_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub conv: Option<ConvBottleneck>,
}

impl ModuleConfig {
    /// Table widths for `paradigm` with two layers after the bottleneck.
    /// Small late-bottleneck modules get the width whose parameter count is
    /// closest to the matching EMS module.
    pub fn for_task(arch: ArchitectureId, paradigm: Paradigm, frame_width: usize, seed: u64) -> Result<Self> {
        let (k_b, k_f, depth) = (1, 2, 2);
        let mut config = ModuleConfig {
            arch,
            widths: Vec::new(),
            k_b,
            k_f,
            action_width: action_width(k_b),
            scene_width: (k_b + 1) * frame_width,
            init_sigma: 0.01,
            seed,
            conv: None,
        };
        let w = arch.default_width(paradigm);
        config.widths = match arch.bottleneck() {
            Bottleneck::Early => vec![w; depth + 1],
            Bottleneck::Late if arch.size() == SizeClass::Small => {
                let ems = ModuleConfig {
                    arch: ArchitectureId::EMS,
                    widths: vec![w; depth + 1],
                    ..config.clone()
                };
                vec![matched_width(&config, depth, parameter_count(&ems)?)?; depth]
            }
            Bottleneck::Late => vec![w; depth],
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let min_layers = match self.arch.bottleneck() {
            Bottleneck::Early => 2,
            Bottleneck::Late => 1,
        };
        if self.widths.len() < min_layers || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "{}: widths {:?} need at least {min_layers} positive entries",
                self.arch, self.widths
            )));
        }
        if self.k_f == 0 {
            return Err(Error::Config("k_f must be at least 1".into()));
        }
        if self.action_width != action_width(self.k_b) {
            return Err(Error::Config(format!(
                "action width {} does not match k_b = {}",
                self.action_width, self.k_b
            )));
        }
        if self.scene_width == 0 || self.scene_width % (self.k_b + 1) != 0 {
            return Err(Error::Config(format!(
                "scene width {} is not a multiple of {} frames",
                self.scene_width,
                self.k_b + 1
            )));
        }
        if !(self.init_sigma >= 0.0 && self.init_sigma.is_finite()) {
            return Err(Error::Config(format!("bad init σ {}", self.init_sigma)));
        }
        if let Some(c) = &self.conv {
            if c.positions == 0 || c.channels == 0 || c.hidden == 0 {
                return Err(Error::Config(format!("degenerate conv bottleneck {c:?}")));
            }
            if self.arch.bottleneck() != Bottleneck::Early {
                return Err(Error::Config("a conv bottleneck needs an early-bottleneck module".into()));
            }
        }
        Ok(())
    }
}

fn matched_width(config: &ModuleConfig, depth: usize, target: usize) -> Result<usize> {
    let count = |n: usize| {
        parameter_count(&ModuleConfig {
            widths: vec![n; depth],
            ..config.clone()
        })
    };
    let mut best = (1, usize::MAX);
    for n in 1..=4096 {
        let c = count(n)?;
        let diff = c.abs_diff(target);
        if diff < best.1 {
            best = (n, diff);
        }
        if c > target {
            break;
        }
    }
    if best.1 as f64 > 0.05 * target as f64 {
        return Err(Error::Config(format!(
            "{}: no width within 5% of {target} parameters",
            config.arch
        )));
    }
    Ok(best.0)
}

/// Parameter count implied by a configuration, from layer shapes alone.
pub fn parameter_count(config: &ModuleConfig) -> Result<usize> {
    Ok(plan(config)?.iter().map(|l| l.shapes.iter().map(|(r, c)| r * c).sum::<usize>()).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    /// `act(W · Ψ + b)`; one row per scene.
    Scene,
    /// Spatial map with the scene tiled onto its channels, three 1×1
    /// convolutions (tanh, then two of the layer activation), flattened.
    ConvScene(ConvBottleneck),
    /// `act(W · (prev ⊕ a) + b)` per candidate; `prev` is the scene itself
    /// in late-bottleneck modules.
    Join,
    Dense,
    /// Affine map to `k_f` logits.
    Readout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    pub activation: Activation,
    pub params: Vec<Parameter>,
    pub out_width: usize,
}

struct LayerPlan {
    kind: LayerKind,
    activation: Activation,
    shapes: Vec<(usize, usize)>,
    out_width: usize,
}

fn plan(config: &ModuleConfig) -> Result<Vec<LayerPlan>> {
    config.validate()?;
    let arch = config.arch;
    let act = arch.layer_activation();
    let a = config.action_width;
    let mut layers = Vec::new();
    let mut prev;
    let dense_from;
    match arch.bottleneck() {
        Bottleneck::Early => {
            let b_act = arch.bottleneck_activation();
            let n0 = config.widths[0];
            match &config.conv {
                None => {
                    layers.push(LayerPlan {
                        kind: LayerKind::Scene,
                        activation: b_act,
                        shapes: vec![(n0, config.scene_width), (1, n0)],
                        out_width: n0 * b_act.width_factor(),
                    });
                }
                Some(c) => {
                    let h = c.hidden;
                    let f = act.width_factor();
                    layers.push(LayerPlan {
                        kind: LayerKind::ConvScene(c.clone()),
                        activation: act,
                        shapes: vec![
                            (h, c.channels + config.scene_width),
                            (1, h),
                            (h, h),
                            (1, h),
                            (h, h * f),
                            (1, h),
                        ],
                        out_width: c.positions * h * f,
                    });
                }
            }
            prev = layers[0].out_width;
            let n1 = config.widths[1];
            layers.push(LayerPlan {
                kind: LayerKind::Join,
                activation: act,
                shapes: vec![(n1, prev + a), (1, n1)],
                out_width: n1 * act.width_factor(),
            });
            prev = layers[1].out_width;
            dense_from = 2;
        }
        Bottleneck::Late => {
            let n1 = config.widths[0];
            layers.push(LayerPlan {
                kind: LayerKind::Join,
                activation: act,
                shapes: vec![(n1, config.scene_width + a), (1, n1)],
                out_width: n1 * act.width_factor(),
            });
            prev = layers[0].out_width;
            dense_from = 1;
        }
    }
    for &n in &config.widths[dense_from..] {
        layers.push(LayerPlan {
            kind: LayerKind::Dense,
            activation: act,
            shapes: vec![(n, prev), (1, n)],
            out_width: n * act.width_factor(),
        });
        prev = n * act.width_factor();
    }
    layers.push(LayerPlan {
        kind: LayerKind::Readout,
        activation: Activation::Identity,
        shapes: vec![(config.k_f, prev), (1, config.k_f)],
        out_width: config.k_f,
    });
    Ok(layers)
}

/// Inputs for one forward pass. `scene` holds `scene_rows` rows of the
/// concatenated scene history; `actions` holds `rows` action vectors.
/// `scene_rows` is 1 (shared by every candidate) or equal to `rows`.
#[derive(Clone, Debug, Default)]
pub struct ModuleInput {
    pub scene: Vec<f64>,
    pub spatial: Vec<f64>,
    pub scene_rows: usize,
    pub actions: Vec<f64>,
    pub rows: usize,
}

/// Input nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Context {
    pub scene: Var,
    pub spatial: Option<Var>,
    pub actions: Var,
}

/// Parameter nodes of one module on a tape, per layer.
#[derive(Clone, Debug)]
pub struct Bound {
    pub layers: Vec<Vec<Var>>,
}

impl Bound {
    pub fn flat(&self) -> Vec<Var> {
        self.layers.iter().flatten().copied().collect()
    }
}

/// Eq.-style analytic predictor for binary stimulus-response tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analytic {
    pub boundary: Vec<f64>,
    pub bias: f64,
    /// Column where the current frame starts within the scene history.
    pub frame_offset: usize,
    /// Column of the candidate's horizontal coordinate in the action block.
    pub ax_index: usize,
    pub k_f: usize,
    pub logit_scale: f64,
}

impl Analytic {
    pub fn projection(&self, scene: &[f64]) -> f64 {
        let frame = &scene[self.frame_offset..self.frame_offset + self.boundary.len()];
        self.bias + frame.iter().zip(&self.boundary).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `relu(u)·relu(a_x) + relu(-u)·relu(-a_x)`.
    pub fn pre_heaviside(u: f64, ax: f64) -> f64 {
        u.max(0.0) * ax.max(0.0) + (-u).max(0.0) * (-ax).max(0.0)
    }

    fn logits(&self, input: &ModuleInput, scene_width: usize, action_width: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(input.rows * self.k_f);
        let shared = (input.scene_rows == 1).then(|| self.projection(&input.scene[..scene_width]));
        for r in 0..input.rows {
            let u = shared.unwrap_or_else(|| self.projection(&input.scene[r * scene_width..(r + 1) * scene_width]));
            let ax = input.actions[r * action_width + self.ax_index];
            let hit = Self::pre_heaviside(u, ax) > 0.0;
            out.push(if hit { self.logit_scale } else { -self.logit_scale });
            // Under its own policy every later step is rewarded too.
            out.extend(std::iter::repeat_n(self.logit_scale, self.k_f - 1));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Body {
    Layered(Vec<Layer>),
    Analytic(Analytic),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReMaPModule {
    pub config: ModuleConfig,
    pub body: Body,
    pub frozen: bool,
}

fn init_layers(config: &ModuleConfig) -> Result<Vec<Layer>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let plans = plan(config)?;
    Ok(plans
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let params = p
                .shapes
                .iter()
                .enumerate()
                .map(|(j, &(r, c))| {
                    let is_bias = r == 1 && j % 2 == 1;
                    let values = if is_bias {
                        vec![0.0; c]
                    } else {
                        (0..r * c).map(|_| normal.sample(&mut rng)).collect()
                    };
                    let name = format!("l{i}.{}{}", if is_bias { "b" } else { "w" }, j / 2);
                    Parameter::new(name, Tensor::matrix(r, c, values).expect("shape matches"))
                })
                .collect();
            Layer {
                kind: p.kind,
                activation: p.activation,
                params,
                out_width: p.out_width,
            }
        })
        .collect())
}

/// EMS module: CReLU scene bottleneck, CReS layers, affine read-out.
pub fn build_ems(config: &ModuleConfig) -> Result<ReMaPModule> {
    if !config.arch.is_ems() {
        return Err(Error::Config(format!("build_ems called with `{}`", config.arch)));
    }
    if config.conv.is_some() {
        return Err(Error::Config("use build_conv_ems for a convolutional bottleneck".into()));
    }
    ReMaPModule::from_config(config)
}

/// Any of the 24 architectures, including EMS.
pub fn build_ablation(config: &ModuleConfig) -> Result<ReMaPModule> {
    ReMaPModule::from_config(config)
}

/// EMS with a 1×1-convolution bottleneck over the spatial feature map.
pub fn build_conv_ems(config: &ModuleConfig, spatial_dims: (usize, usize, usize)) -> Result<ReMaPModule> {
    let conv = config
        .conv
        .as_ref()
        .ok_or_else(|| Error::Config("build_conv_ems needs a conv bottleneck".into()))?;
    let (h, w, c) = spatial_dims;
    if conv.positions != h * w || conv.channels != c {
        return Err(Error::Config(format!(
            "conv bottleneck expects {} positions × {} channels, map is {h}×{w}×{c}",
            conv.positions, conv.channels
        )));
    }
    if !config.arch.is_ems() {
        return Err(Error::Config(format!("build_conv_ems called with `{}`", config.arch)));
    }
    ReMaPModule::from_config(config)
}

impl ReMaPModule {
    pub fn from_config(config: &ModuleConfig) -> Result<Self> {
        Ok(Self {
            config: config.clone(),
            body: Body::Layered(init_layers(config)?),
            frozen: false,
        })
    }

    pub fn layers(&self) -> Option<&[Layer]> {
        match &self.body {
            Body::Layered(l) => Some(l),
            Body::Analytic(_) => None,
        }
    }

    pub fn layers_mut(&mut self) -> Option<&mut [Layer]> {
        match &mut self.body {
            Body::Layered(l) => Some(l),
            Body::Analytic(_) => None,
        }
    }

    pub fn k_f(&self) -> usize {
        self.config.k_f
    }

    pub fn parameter_count(&self) -> usize {
        self.params().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.layers().unwrap_or(&[]).iter().flat_map(|l| &l.params)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match &mut self.body {
            Body::Layered(l) => l.iter_mut().flat_map(|l| l.params.iter_mut()).collect(),
            Body::Analytic(_) => Vec::new(),
        }
    }

    pub fn hash(&self) -> String {
        hash_parameters(self.params())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
        for p in self.params_mut() {
            p.trainable = false;
        }
    }

    /// Output widths of every layer after its activation.
    pub fn layer_widths(&self) -> Vec<usize> {
        self.layers().unwrap_or(&[]).iter().map(|l| l.out_width).collect()
    }

    pub fn needs_spatial(&self) -> bool {
        self.config.conv.is_some()
    }

    pub fn check_input(&self, input: &ModuleInput) -> Result<()> {
        let c = &self.config;
        if input.rows == 0 {
            return Err(Error::Input("forward needs at least one candidate".into()));
        }
        if input.scene_rows != 1 && input.scene_rows != input.rows {
            return Err(Error::Input(format!(
                "{} scene rows for {} candidates",
                input.scene_rows, input.rows
            )));
        }
        if input.scene.len() != input.scene_rows * c.scene_width {
            return Err(Error::Input(format!(
                "scene block has {} values, expected {} × {}",
                input.scene.len(),
                input.scene_rows,
                c.scene_width
            )));
        }
        if input.actions.len() != input.rows * c.action_width {
            return Err(Error::Input(format!(
                "action block has {} values, expected {} × {}",
                input.actions.len(),
                input.rows,
                c.action_width
            )));
        }
        if let Some(conv) = &c.conv {
            if input.spatial.len() != input.scene_rows * conv.positions * conv.channels {
                return Err(Error::Input(format!(
                    "spatial block has {} values, expected {} × {} × {}",
                    input.spatial.len(),
                    input.scene_rows,
                    conv.positions,
                    conv.channels
                )));
            }
        }
        Ok(())
    }

    /// Puts the inputs on a tape.
    pub fn context(&self, tape: &mut Tape, input: &ModuleInput) -> Result<Context> {
        self.check_input(input)?;
        let c = &self.config;
        let scene = tape.leaf(input.scene_rows, c.scene_width, input.scene.clone())?;
        let actions = tape.leaf(input.rows, c.action_width, input.actions.clone())?;
        let spatial = match &c.conv {
            Some(conv) => {
                // Tile each scene row onto every spatial position.
                let n = input.scene_rows * conv.positions;
                let width = conv.channels + c.scene_width;
                let mut tiled = Vec::with_capacity(n * width);
                for s in 0..input.scene_rows {
                    let row = &input.scene[s * c.scene_width..(s + 1) * c.scene_width];
                    for p in 0..conv.positions {
                        let at = (s * conv.positions + p) * conv.channels;
                        tiled.extend_from_slice(&input.spatial[at..at + conv.channels]);
                        tiled.extend_from_slice(row);
                    }
                }
                Some(tape.leaf(n, width, tiled)?)
            }
            None => None,
        };
        Ok(Context { scene, spatial, actions })
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            layers: self
                .layers()
                .unwrap_or(&[])
                .iter()
                .map(|l| l.params.iter().map(|p| tape.param(p)).collect())
                .collect(),
        }
    }

    /// Output of layer `i` given the previous layer's output (`None` for
    /// the first layer).
    pub fn layer_forward(
        &self,
        i: usize,
        tape: &mut Tape,
        bound: &Bound,
        prev: Option<Var>,
        ctx: &Context,
    ) -> Result<Var> {
        let layers = self
            .layers()
            .ok_or_else(|| Error::Config("analytic modules have no layers".into()))?;
        let layer = &layers[i];
        let p = &bound.layers[i];
        let need_prev = || prev.ok_or_else(|| Error::Config(format!("layer {i} needs an input")));
        let pre = match &layer.kind {
            LayerKind::Scene => tape.affine(ctx.scene, p[0], Some(p[1]))?,
            LayerKind::ConvScene(_) => {
                let rows = tape.rows(ctx.scene);
                let spatial = ctx
                    .spatial
                    .ok_or_else(|| Error::Input("conv bottleneck needs a spatial map".into()))?;
                let h0 = tape.affine(spatial, p[0], Some(p[1]))?;
                let h0 = tape.activate(Activation::Tanh, h0);
                let h1 = tape.affine(h0, p[2], Some(p[3]))?;
                let h1 = tape.activate(layer.activation, h1);
                let h2 = tape.affine(h1, p[4], Some(p[5]))?;
                let h2 = tape.activate(layer.activation, h2);
                return tape.reshape(h2, rows, layer.out_width);
            }
            LayerKind::Join => {
                let shared = match prev {
                    Some(v) => v,
                    None => ctx.scene,
                };
                tape.affine_join(shared, ctx.actions, p[0], Some(p[1]))?
            }
            LayerKind::Dense | LayerKind::Readout => tape.affine(need_prev()?, p[0], Some(p[1]))?,
        };
        Ok(tape.activate(layer.activation, pre))
    }

    /// Logits (`rows × k_f`) on a tape. Analytic modules produce a constant.
    pub fn forward_on(&self, tape: &mut Tape, bound: &Bound, ctx: &Context, input: &ModuleInput) -> Result<Var> {
        match &self.body {
            Body::Analytic(a) => {
                let values = a.logits(input, self.config.scene_width, self.config.action_width);
                tape.leaf(input.rows, a.k_f, values)
            }
            Body::Layered(layers) => {
                let mut h = None;
                for i in 0..layers.len() {
                    h = Some(self.layer_forward(i, tape, bound, h, ctx)?);
                }
                Ok(h.expect("at least one layer"))
            }
        }
    }

    /// Logits for every candidate, `rows × k_f`, row-major.
    pub fn forward(&self, input: &ModuleInput) -> Result<Vec<f64>> {
        if let Body::Analytic(a) = &self.body {
            self.check_input(input)?;
            return Ok(a.logits(input, self.config.scene_width, self.config.action_width));
        }
        let mut tape = Tape::new();
        let ctx = self.context(&mut tape, input)?;
        let bound = self.bind(&mut tape);
        let out = self.forward_on(&mut tape, &bound, &ctx, input)?;
        Ok(tape.value(out).to_vec())
    }

    /// Every layer's post-activation output.
    pub fn layer_outputs(&self, input: &ModuleInput) -> Result<Vec<Tensor>> {
        let layers = self
            .layers()
            .ok_or_else(|| Error::Config("analytic modules have no layers".into()))?;
        let mut tape = Tape::new();
        let ctx = self.context(&mut tape, input)?;
        let bound = self.bind(&mut tape);
        let mut h = None;
        let mut out = Vec::new();
        for i in 0..layers.len() {
            let v = self.layer_forward(i, &mut tape, &bound, h, &ctx)?;
            out.push(tape.to_tensor(v));
            h = Some(v);
        }
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut shell = self.clone();
        let params: Vec<Parameter> = self.params().cloned().collect();
        for p in shell.params_mut() {
            p.tensor = Tensor::zeros(vec![0]);
        }
        Checkpoint::new(CHECKPOINT_KIND, shell, params).save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ck: Checkpoint<ReMaPModule> = Checkpoint::load(path, CHECKPOINT_KIND)?;
        let mut module = ck.spec;
        let mut stored = ck.params.into_iter();
        for p in module.params_mut() {
            *p = stored
                .next()
                .ok_or_else(|| Error::Config("checkpoint has too few parameters".into()))?;
        }
        if stored.next().is_some() {
            return Err(Error::Config("checkpoint has too many parameters".into()));
        }
        Ok(module)
    }
}
