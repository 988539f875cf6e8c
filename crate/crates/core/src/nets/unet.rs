//! Conventional four-level U-Net used as the L1-trained baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers;
use crate::error::{Error, Result};
use crate::gradcore::{Activation, Pad2d, ParamSet, Real, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnetConfig {
    pub base_channels: usize,
    pub levels: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            levels: 4,
        }
    }
}

impl UnetConfig {
    pub fn toy() -> Self {
        Self {
            base_channels: 8,
            levels: 4,
        }
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    fn add_double(
        p: &mut ParamSet<impl Real>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut (impl Rng + ?Sized),
    ) {
        layers::add_conv(p, &format!("{name}/a"), c_out, c_in, 3, rng);
        layers::add_norm(p, &format!("{name}/a/in"), c_out);
        layers::add_conv(p, &format!("{name}/b"), c_out, c_out, 3, rng);
        layers::add_norm(p, &format!("{name}/b/in"), c_out);
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet<T>> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(Error::invalid(
                "U-Net needs at least one level and one channel",
            ));
        }
        let mut p = ParamSet::new();
        let mut c_in = 1;
        for l in 0..self.levels {
            Self::add_double(&mut p, &format!("down{l}"), c_in, self.width(l), rng);
            c_in = self.width(l);
        }
        Self::add_double(&mut p, "bottom", c_in, self.width(self.levels), rng);
        c_in = self.width(self.levels);
        for l in (0..self.levels).rev() {
            layers::add_deconv(&mut p, &format!("up{l}/t"), c_in, self.width(l), 2, rng);
            Self::add_double(
                &mut p,
                &format!("up{l}"),
                2 * self.width(l),
                self.width(l),
                rng,
            );
            c_in = self.width(l);
        }
        layers::add_conv(&mut p, "final", 1, c_in, 1, rng);
        Ok(p)
    }

    fn double<T: Real>(
        tape: &Tape<T>,
        p: &ParamSet<T>,
        name: &str,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for part in ["a", "b"] {
            let n = format!("{name}/{part}");
            h = layers::conv(tape, p, &n, &h, 1, Pad2d::uniform(1))?;
            h = layers::norm(tape, p, &format!("{n}/in"), &h)?;
            h = layers::relu(tape, &h)?;
        }
        Ok(h)
    }

    pub fn forward<T: Real>(
        &self,
        tape: &Tape<T>,
        p: &ParamSet<T>,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let [_, c, h, w] = x.dims4()?;
        let d = 1 << self.levels;
        if c != 1 || h % d != 0 || w % d != 0 || h < 2 * d || w < 2 * d {
            return Err(Error::shape(format!(
                "U-Net input {c}x{h}x{w} must be single-channel with extents divisible by {d}"
            )));
        }
        let mut skips = Vec::with_capacity(self.levels);
        let mut hcur = x.clone();
        for l in 0..self.levels {
            let s = Self::double(tape, p, &format!("down{l}"), &hcur)?;
            hcur = tape.max_pool2d(&s, 2)?;
            skips.push(s);
        }
        hcur = Self::double(tape, p, "bottom", &hcur)?;
        for l in (0..self.levels).rev() {
            let up = tape.conv2d_transpose(
                &hcur,
                p.get(&format!("up{l}/t/w"))?,
                Some(p.get(&format!("up{l}/t/b"))?),
                (2, 2),
                (0, 0),
                (0, 0),
            )?;
            let cat = tape.concat_channels(&[&skips[l], &up])?;
            hcur = Self::double(tape, p, &format!("up{l}"), &cat)?;
        }
        let y = layers::conv(tape, p, "final", &hcur, 1, Pad2d::ZERO)?;
        tape.activation(&y, Activation::Sigmoid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_gives_half() {
        let cfg = UnetConfig {
            base_channels: 2,
            levels: 4,
        };
        let p = cfg
            .init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let y = cfg
            .forward(&Tape::inference(), &p, &Tensor::zeros([1, 1, 32, 32]))
            .unwrap();
        assert_eq!(y.shape(), &[1, 1, 32, 32]);
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn parameter_count_is_stable() {
        let cfg = UnetConfig {
            base_channels: 2,
            levels: 2,
        };
        let count = |seed| {
            cfg.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap()
                .num_scalars()
        };
        // down0: 1→2, 2→2; down1: 2→4, 4→4; bottom: 4→8, 8→8;
        // up1: t 8→4 (k2), 8→4, 4→4; up0: t 4→2, 4→2, 2→2; final 2→1 (k1).
        let conv = |ci: usize, co: usize, k: usize| ci * co * k * k + co;
        let norm = |c: usize| 2 * c;
        let double = |ci, co| conv(ci, co, 3) + norm(co) + conv(co, co, 3) + norm(co);
        let want = double(1, 2)
            + double(2, 4)
            + double(4, 8)
            + conv(8, 4, 2)
            + double(8, 4)
            + conv(4, 2, 2)
            + double(4, 2)
            + conv(2, 1, 1);
        assert_eq!(count(0), want);
        assert_eq!(count(1), want);
    }

    #[test]
    fn rejects_indivisible_input() {
        let cfg = UnetConfig {
            base_channels: 2,
            levels: 4,
        };
        let p = cfg
            .init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!(cfg
            .forward(&Tape::inference(), &p, &Tensor::zeros([1, 1, 40, 40]))
            .is_err());
    }
}
