use super::real::Real;
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default variance floor for instance normalization.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

impl<T: Real> Tape<T> {
    /// Per-(sample, channel) normalization over the spatial plane followed by
    /// a per-channel affine map: `gain·(x − μ)/√(σ² + eps) + shift`.
    pub fn instance_norm(
        &self,
        input: &Tensor<T>,
        gain: &Tensor<T>,
        shift: &Tensor<T>,
        eps: f64,
    ) -> Result<Tensor<T>> {
        let [n, c, h, w] = input.dims4()?;
        if gain.shape() != [c] || shift.shape() != [c] {
            return Err(Error::shape(format!(
                "instance_norm affine shapes {:?}/{:?}, expected [{c}]",
                gain.shape(),
                shift.shape()
            )));
        }
        let hw = h * w;
        if hw < 2 {
            return Err(Error::shape(
                "instance_norm needs at least two pixels per plane",
            ));
        }
        let x = input.data();
        let (gd, sd) = (gain.data(), shift.data());
        let inv_hw = T::ONE / T::from_f64(hw as f64);
        let eps_t = T::from_f64(eps);
        let mut xhat = vec![T::ZERO; x.len()];
        let mut inv_std = vec![T::ZERO; n * c];
        let mut y = vec![T::ZERO; x.len()];
        for p in 0..n * c {
            let plane = &x[p * hw..(p + 1) * hw];
            let mean = plane.iter().copied().sum::<T>() * inv_hw;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_hw;
            let is = T::ONE / (var + eps_t).sqrt();
            inv_std[p] = is;
            let ch = p % c;
            for i in 0..hw {
                let xh = (plane[i] - mean) * is;
                xhat[p * hw + i] = xh;
                y[p * hw + i] = gd[ch] * xh + sd[ch];
            }
        }
        if !self.tracks(&[input, gain, shift]) {
            return Ok(Tensor::from_parts(input.shape().to_vec(), y, None));
        }
        let gains = gain.shared_data();
        self.record(
            &[input, gain, shift],
            input.shape().to_vec(),
            y,
            Box::new(move |gy, need| {
                let mut gx = need[0].then(|| vec![T::ZERO; gy.len()]);
                let mut gg = vec![T::ZERO; c];
                let mut gs = vec![T::ZERO; c];
                for p in 0..n * c {
                    let ch = p % c;
                    let gyp = &gy[p * hw..(p + 1) * hw];
                    let xh = &xhat[p * hw..(p + 1) * hw];
                    let sum_g = gyp.iter().copied().sum::<T>();
                    let sum_gx = gyp.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
                    gg[ch] += sum_gx;
                    gs[ch] += sum_g;
                    if let Some(gx) = gx.as_mut() {
                        let k = gains[ch] * inv_std[p];
                        let mean_g = sum_g * inv_hw;
                        let mean_gx = sum_gx * inv_hw;
                        for i in 0..hw {
                            gx[p * hw + i] = k * (gyp[i] - mean_g - xh[i] * mean_gx);
                        }
                    }
                }
                vec![gx, need[1].then_some(gg), need[2].then_some(gs)]
            }),
        )
    }
}
