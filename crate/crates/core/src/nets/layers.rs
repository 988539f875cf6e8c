//! Parameter naming and initialization shared by all networks.

use rand::Rng;

use crate::error::Result;
use crate::gradcore::{Activation, Pad2d, ParamSet, Real, Tape, Tensor, INSTANCE_NORM_EPS};

/// Std of the normal initializer for conv weights.
pub const INIT_STD: f64 = 0.02;

pub(crate) fn add_conv<T: Real, R: Rng + ?Sized>(
    p: &mut ParamSet<T>,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut R,
) {
    p.insert(
        format!("{name}/w"),
        Tensor::randn([c_out, c_in, k, k], 0.0, INIT_STD, rng),
    );
    p.insert(format!("{name}/b"), Tensor::zeros([c_out]));
}

/// Transposed-conv weight is `[Cin, Cout, k, k]`.
pub(crate) fn add_deconv<T: Real, R: Rng + ?Sized>(
    p: &mut ParamSet<T>,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    rng: &mut R,
) {
    p.insert(
        format!("{name}/w"),
        Tensor::randn([c_in, c_out, k, k], 0.0, INIT_STD, rng),
    );
    p.insert(format!("{name}/b"), Tensor::zeros([c_out]));
}

pub(crate) fn add_norm<T: Real>(p: &mut ParamSet<T>, name: &str, c: usize) {
    p.insert(format!("{name}/gain"), Tensor::ones([c]));
    p.insert(format!("{name}/shift"), Tensor::zeros([c]));
}

pub(crate) fn conv<T: Real>(
    tape: &Tape<T>,
    p: &ParamSet<T>,
    name: &str,
    x: &Tensor<T>,
    stride: usize,
    pad: Pad2d,
) -> Result<Tensor<T>> {
    tape.conv2d(
        x,
        p.get(&format!("{name}/w"))?,
        Some(p.get(&format!("{name}/b"))?),
        (stride, stride),
        pad,
    )
}

/// Convolution with TensorFlow-style "same" zero padding.
pub(crate) fn conv_same<T: Real>(
    tape: &Tape<T>,
    p: &ParamSet<T>,
    name: &str,
    x: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4()?;
    let k = p.get(&format!("{name}/w"))?.shape()[2];
    conv(
        tape,
        p,
        name,
        x,
        stride,
        Pad2d::same(h, w, k, k, (stride, stride)),
    )
}

pub(crate) fn norm<T: Real>(
    tape: &Tape<T>,
    p: &ParamSet<T>,
    name: &str,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    tape.instance_norm(
        x,
        p.get(&format!("{name}/gain"))?,
        p.get(&format!("{name}/shift"))?,
        INSTANCE_NORM_EPS,
    )
}

pub(crate) fn relu<T: Real>(tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    tape.activation(x, Activation::Relu)
}

/// Records `(stage, shape)` pairs when a trace is requested.
pub(crate) fn trace<T: Real>(
    sink: &mut Option<&mut Vec<StageShape>>,
    stage: impl Into<String>,
    x: &Tensor<T>,
) {
    if let Some(s) = sink.as_deref_mut() {
        s.push(StageShape {
            stage: stage.into(),
            shape: x.shape().to_vec(),
        });
    }
}

/// Shape of one network stage, captured for introspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShape {
    pub stage: String,
    pub shape: Vec<usize>,
}
