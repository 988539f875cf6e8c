//! Fully convolutional patch discriminator emitting one logit per patch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, StageShape};
use crate::error::{Error, Result};
use crate::gradcore::{Activation, Pad2d, ParamSet, Real, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub input_channels: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub final_kernel: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            channels: vec![64, 128, 256, 512],
            kernels: vec![4, 4, 4, 4],
            strides: vec![2, 2, 2, 1],
            final_kernel: 4,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn toy() -> Self {
        Self {
            channels: vec![8, 16, 32, 64],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 || self.kernels.len() != n || self.strides.len() != n {
            return Err(Error::invalid(
                "discriminator channel/kernel/stride lists must be non-empty and equal length",
            ));
        }
        if self.strides.iter().any(|&s| s == 0) {
            return Err(Error::invalid("discriminator strides must be positive"));
        }
        Ok(())
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet<T>> {
        self.validate()?;
        let mut p = ParamSet::new();
        let mut c_in = self.input_channels;
        for (i, (&c, &k)) in self.channels.iter().zip(&self.kernels).enumerate() {
            layers::add_conv(&mut p, &format!("group{i}"), c, c_in, k, rng);
            if i > 0 {
                layers::add_norm(&mut p, &format!("group{i}/in"), c);
            }
            c_in = c;
        }
        layers::add_conv(&mut p, "final", 1, c_in, self.final_kernel, rng);
        Ok(p)
    }

    /// Logit-map extent for an input extent (same padding: `ceil(n / stride)` per group).
    pub fn output_extent(&self, n: usize) -> usize {
        self.strides.iter().fold(n, |acc, &s| acc.div_ceil(s))
    }

    pub fn forward<T: Real>(
        &self,
        tape: &Tape<T>,
        p: &ParamSet<T>,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        self.forward_traced(tape, p, x, None)
    }

    pub fn forward_traced<T: Real>(
        &self,
        tape: &Tape<T>,
        p: &ParamSet<T>,
        x: &Tensor<T>,
        mut sink: Option<&mut Vec<StageShape>>,
    ) -> Result<Tensor<T>> {
        let [_, c, hh, ww] = x.dims4()?;
        if c != self.input_channels || hh < 16 || ww < 16 {
            return Err(Error::shape(format!(
                "discriminator needs {} channels and at least 16x16, got {c}x{hh}x{ww}",
                self.input_channels
            )));
        }
        layers::trace(&mut sink, "input", x);
        let mut h = x.clone();
        for (i, &s) in self.strides.iter().enumerate() {
            let name = format!("group{i}");
            h = layers::conv_same(tape, p, &name, &h, s)?;
            if i > 0 {
                h = layers::norm(tape, p, &format!("{name}/in"), &h)?;
            }
            h = tape.activation(&h, Activation::LeakyRelu(self.leaky_slope))?;
            layers::trace(&mut sink, name, &h);
        }
        let [_, _, fh, fw] = h.dims4()?;
        let k = self.final_kernel;
        let y = layers::conv(tape, p, "final", &h, 1, Pad2d::same(fh, fw, k, k, (1, 1)))?;
        layers::trace(&mut sink, "logits", &y);
        Ok(y)
    }
}
