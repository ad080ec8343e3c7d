use crate::diffcore::{AdamConfig, AdamState, Pick, Tape};
use crate::env::SwitchCue;
use crate::error::{Error, Result};
use crate::zoo::{ModuleInput, ReMaPModule};

/// Anything that maps candidate inputs to `k_f` logits and can be trained
/// on picked logits.
pub trait Predictor {
    fn k_b(&self) -> usize;
    fn k_f(&self) -> usize;
    /// Width of one frame's scene encoding.
    fn frame_width(&self) -> usize;
    /// Values in the spatial map, or 0 when unused.
    fn spatial_width(&self) -> usize;
    /// Logits, `rows × k_f`.
    fn predict(&self, input: &ModuleInput) -> Result<Vec<f64>>;
    /// One optimiser step on the mean cross-entropy of `picks`; returns the
    /// loss before the step.
    fn update(&mut self, input: &ModuleInput, picks: Vec<Pick>, step: u64) -> Result<f64>;
    fn on_cue(&mut self, _cue: &SwitchCue) -> Result<()> {
        Ok(())
    }
}

/// A single module trained with Adam.
#[derive(Clone, Debug)]
pub struct ModuleLearner {
    pub module: ReMaPModule,
    pub adam: AdamState,
}

impl ModuleLearner {
    pub fn new(module: ReMaPModule, lr: f64) -> Self {
        Self {
            module,
            adam: AdamState::new(AdamConfig::with_lr(lr)),
        }
    }
}

/// Runs forward and backward for `module` and returns the loss with a
/// gradient per parameter (`None` for frozen parameters).
pub fn module_gradients(
    module: &ReMaPModule,
    input: &ModuleInput,
    picks: Vec<Pick>,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let mut tape = Tape::new();
    let ctx = module.context(&mut tape, input)?;
    let bound = module.bind(&mut tape);
    let logits = module.forward_on(&mut tape, &bound, &ctx, input)?;
    let loss = tape.sigmoid_xent(logits, picks)?;
    let value = tape.value(loss)[0];
    if !value.is_finite() {
        return Err(Error::Training {
            param: "loss".into(),
            message: format!("non-finite loss {value}"),
        });
    }
    let grads = tape.backward(loss)?;
    let out = module
        .params()
        .zip(bound.flat())
        .map(|(p, v)| p.trainable.then(|| grads.get_or_zero(v)))
        .collect();
    Ok((value, out))
}

impl Predictor for ModuleLearner {
    fn k_b(&self) -> usize {
        self.module.config.k_b
    }

    fn k_f(&self) -> usize {
        self.module.config.k_f
    }

    fn frame_width(&self) -> usize {
        self.module.config.scene_width / (self.module.config.k_b + 1)
    }

    fn spatial_width(&self) -> usize {
        self.module
            .config
            .conv
            .as_ref()
            .map(|c| c.positions * c.channels)
            .unwrap_or(0)
    }

    fn predict(&self, input: &ModuleInput) -> Result<Vec<f64>> {
        self.module.forward(input)
    }

    fn update(&mut self, input: &ModuleInput, picks: Vec<Pick>, _step: u64) -> Result<f64> {
        let (loss, grads) = module_gradients(&self.module, input, picks)?;
        if self.module.frozen {
            return Ok(loss);
        }
        let mut params = self.module.params_mut();
        self.adam.step(&mut params, &grads)?;
        Ok(loss)
    }
}
