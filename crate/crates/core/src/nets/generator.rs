//! Encoder / residual / decoder image generator.
//!
//! ```text
//! RP → [Conv+IN+ReLU]×4 → [RP+Conv+IN+ReLU+RP+Conv+IN (+skip)]×R
//!    → [Deconv+IN+ReLU]×2 → RP+Conv+Sigmoid
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, StageShape};
use crate::error::{Error, Result};
use crate::gradcore::{Activation, Pad2d, ParamSet, Real, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub input_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_kernels: Vec<usize>,
    pub encoder_strides: Vec<usize>,
    pub residual_blocks: usize,
    pub residual_channels: usize,
    pub residual_kernel: usize,
    pub decoder_channels: Vec<usize>,
    pub decoder_kernel: usize,
    pub final_kernel: usize,
    pub output_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            encoder_channels: vec![64, 128, 128, 256],
            encoder_kernels: vec![4, 3, 3, 3],
            encoder_strides: vec![1, 2, 1, 2],
            residual_blocks: 9,
            residual_channels: 256,
            residual_kernel: 3,
            decoder_channels: vec![128, 64],
            decoder_kernel: 3,
            final_kernel: 7,
            output_channels: 1,
        }
    }
}

impl GeneratorConfig {
    /// Same topology at 1/8 width with three residual blocks, for desk-scale runs.
    pub fn toy() -> Self {
        Self {
            encoder_channels: vec![8, 16, 16, 32],
            residual_blocks: 3,
            residual_channels: 32,
            decoder_channels: vec![16, 8],
            ..Self::default()
        }
    }

    pub fn base_channels(&self) -> usize {
        self.encoder_channels[0]
    }

    /// Total spatial downsampling of the encoder.
    pub fn downsampling(&self) -> usize {
        self.encoder_strides.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.encoder_channels.len();
        if n == 0 || self.encoder_kernels.len() != n || self.encoder_strides.len() != n {
            return Err(Error::invalid(
                "encoder channel/kernel/stride lists must be non-empty and equal length",
            ));
        }
        if self.encoder_strides[0] != 1 {
            return Err(Error::invalid("first encoder stage must have stride 1"));
        }
        if self.residual_channels != self.encoder_channels[n - 1] {
            return Err(Error::invalid(format!(
                "residual_channels {} must equal last encoder channel count {}",
                self.residual_channels,
                self.encoder_channels[n - 1]
            )));
        }
        if self.decoder_channels.is_empty()
            || 1usize << self.decoder_channels.len() != self.downsampling()
        {
            return Err(Error::invalid(format!(
                "decoder upsampling 2^{} must equal encoder downsampling {}",
                self.decoder_channels.len(),
                self.downsampling()
            )));
        }
        if self.residual_kernel % 2 == 0
            || self.final_kernel % 2 == 0
            || self.decoder_kernel % 2 == 0
        {
            return Err(Error::invalid(
                "residual, decoder and final kernels must be odd",
            ));
        }
        Ok(())
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet<T>> {
        self.validate()?;
        let mut p = ParamSet::new();
        let mut c_in = self.input_channels;
        for (i, (&c, &k)) in self
            .encoder_channels
            .iter()
            .zip(&self.encoder_kernels)
            .enumerate()
        {
            layers::add_conv(&mut p, &format!("enc{i}"), c, c_in, k, rng);
            layers::add_norm(&mut p, &format!("enc{i}/in"), c);
            c_in = c;
        }
        let rc = self.residual_channels;
        for r in 0..self.residual_blocks {
            for j in 1..=2 {
                layers::add_conv(
                    &mut p,
                    &format!("res{r}/conv{j}"),
                    rc,
                    rc,
                    self.residual_kernel,
                    rng,
                );
                layers::add_norm(&mut p, &format!("res{r}/conv{j}/in"), rc);
            }
        }
        for (i, &c) in self.decoder_channels.iter().enumerate() {
            layers::add_deconv(
                &mut p,
                &format!("dec{i}"),
                c_in,
                c,
                self.decoder_kernel,
                rng,
            );
            layers::add_norm(&mut p, &format!("dec{i}/in"), c);
            c_in = c;
        }
        layers::add_conv(
            &mut p,
            "final",
            self.output_channels,
            c_in,
            self.final_kernel,
            rng,
        );
        Ok(p)
    }

    fn check_input(&self, x: &Tensor<impl Real>) -> Result<()> {
        let [_, c, h, w] = x.dims4()?;
        let d = self.downsampling();
        if c != self.input_channels {
            return Err(Error::shape(format!(
                "generator expects {} input channels, got {c}",
                self.input_channels
            )));
        }
        if h < 16 || w < 16 || h % d != 0 || w % d != 0 {
            return Err(Error::shape(format!(
                "generator input {h}x{w} must be at least 16 and divisible by {d}"
            )));
        }
        Ok(())
    }

    pub fn forward<T: Real>(
        &self,
        tape: &Tape<T>,
        p: &ParamSet<T>,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        self.forward_traced(tape, p, x, None)
    }

    /// Forward pass, optionally recording every stage's output shape.
    pub fn forward_traced<T: Real>(
        &self,
        tape: &Tape<T>,
        p: &ParamSet<T>,
        x: &Tensor<T>,
        mut sink: Option<&mut Vec<StageShape>>,
    ) -> Result<Tensor<T>> {
        self.check_input(x)?;
        layers::trace(&mut sink, "input", x);
        let mut h = x.clone();
        for (i, (&k, &s)) in self
            .encoder_kernels
            .iter()
            .zip(&self.encoder_strides)
            .enumerate()
        {
            let name = format!("enc{i}");
            h = if i == 0 {
                let [_, _, hh, ww] = h.dims4()?;
                let padded = tape.reflection_pad(&h, Pad2d::same(hh, ww, k, k, (1, 1)))?;
                layers::conv(tape, p, &name, &padded, 1, Pad2d::ZERO)?
            } else {
                layers::conv_same(tape, p, &name, &h, s)?
            };
            h = layers::norm(tape, p, &format!("{name}/in"), &h)?;
            h = layers::relu(tape, &h)?;
            layers::trace(&mut sink, name, &h);
        }
        for r in 0..self.residual_blocks {
            h = self.residual_block(tape, p, r, &h)?;
            layers::trace(&mut sink, format!("res{r}"), &h);
        }
        let k = self.decoder_kernel;
        for i in 0..self.decoder_channels.len() {
            let name = format!("dec{i}");
            h = tape.conv2d_transpose(
                &h,
                p.get(&format!("{name}/w"))?,
                Some(p.get(&format!("{name}/b"))?),
                (2, 2),
                (k / 2, k / 2),
                (1, 1),
            )?;
            h = layers::norm(tape, p, &format!("{name}/in"), &h)?;
            h = layers::relu(tape, &h)?;
            layers::trace(&mut sink, name, &h);
        }
        let h = tape.reflection_pad(&h, Pad2d::uniform(self.final_kernel / 2))?;
        let h = layers::conv(tape, p, "final", &h, 1, Pad2d::ZERO)?;
        let y = tape.activation(&h, Activation::Sigmoid)?;
        layers::trace(&mut sink, "output", &y);
        Ok(y)
    }

    /// `x + IN(Conv(RP(ReLU(IN(Conv(RP(x)))))))`.
    pub fn residual_block<T: Real>(
        &self,
        tape: &Tape<T>,
        p: &ParamSet<T>,
        r: usize,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let pad = Pad2d::uniform(self.residual_kernel / 2);
        let c1 = format!("res{r}/conv1");
        let c2 = format!("res{r}/conv2");
        let h = tape.reflection_pad(x, pad)?;
        let h = layers::conv(tape, p, &c1, &h, 1, Pad2d::ZERO)?;
        let h = layers::norm(tape, p, &format!("{c1}/in"), &h)?;
        let h = layers::relu(tape, &h)?;
        let h = tape.reflection_pad(&h, pad)?;
        let h = layers::conv(tape, p, &c2, &h, 1, Pad2d::ZERO)?;
        let h = layers::norm(tape, p, &format!("{c2}/in"), &h)?;
        tape.add(x, &h)
    }

    /// Output-channel count of every convolution, in execution order.
    pub fn channel_plan(&self, p: &ParamSet<impl Real>) -> Result<Vec<usize>> {
        let mut plan = Vec::new();
        for i in 0..self.encoder_channels.len() {
            plan.push(p.get(&format!("enc{i}/w"))?.shape()[0]);
        }
        for r in 0..self.residual_blocks {
            for j in 1..=2 {
                plan.push(p.get(&format!("res{r}/conv{j}/w"))?.shape()[0]);
            }
        }
        for i in 0..self.decoder_channels.len() {
            plan.push(p.get(&format!("dec{i}/w"))?.shape()[1]);
        }
        plan.push(p.get("final/w")?.shape()[0]);
        Ok(plan)
    }
}
