//! Minimal reverse-mode differentiable numerics in `f64`.
//!
//! Networks in this crate are tiny, so everything is built on a tape that is
//! recreated for every forward pass (see [`Tape`]). The free functions below
//! are eager conveniences over single tensors.

mod activation;
mod adam;
pub(crate) mod gemm;
mod tape;
mod tensor;

pub use activation::{sigmoid, Activation};
pub use adam::{AdamConfig, AdamState};
pub use tape::{sigmoid_cross_entropy_value, Gradients, Pick, Tape, Var};
pub use tensor::{hash_parameters, Parameter, Tensor};


use crate::error::{Error, Result};

fn eager(act: Activation, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.tensor(x);
    let y = tape.activate(act, v);
    let values = tape.value(y).to_vec();
    let mut shape = x.shape().to_vec();
    match shape.last_mut() {
        Some(last) => *last *= act.width_factor(),
        None => shape.push(act.width_factor()),
    }
    Tensor::new(shape, values).expect("activation preserves element count")
}

/// `w · input + b`.
pub fn affine(input: &Tensor, w: &Parameter, b: &Parameter) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.tensor(input);
    let wv = tape.param(w);
    let bv = tape.param(b);
    let y = tape.affine(x, wv, Some(bv))?;
    Ok(tape.to_tensor(y))
}

/// `relu(x) ⊕ relu(-x)`.
pub fn crelu(x: &Tensor) -> Tensor {
    eager(Activation::Crelu, x)
}

/// `x ⊕ x²`.
pub fn sq(x: &Tensor) -> Tensor {
    eager(Activation::Sq, x)
}

/// `relu(x) ⊕ relu(-x) ⊕ relu²(x) ⊕ relu²(-x)`.
pub fn cres(x: &Tensor) -> Tensor {
    eager(Activation::Cres, x)
}

/// One of the ablation activations `relu`, `tanh`, `sigmoid`, `elu`.
pub fn pointwise(name: &str, x: &Tensor) -> Result<Tensor> {
    let act: Activation = name.parse()?;
    match act {
        Activation::Relu | Activation::Tanh | Activation::Sigmoid | Activation::Elu => Ok(eager(act, x)),
        other => Err(Error::Config(format!("`{other}` is not a pointwise activation"))),
    }
}

/// Loss and its derivative with respect to the logit.
pub fn sigmoid_cross_entropy(logit: f64, target: f64) -> Result<(f64, f64)> {
    let loss = sigmoid_cross_entropy_value(logit, target)?;
    Ok((loss, sigmoid(logit) - target))
}
