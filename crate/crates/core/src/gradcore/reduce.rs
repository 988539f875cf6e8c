use super::real::{gemm, Real, Trans};
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean absolute difference.
    L1Mean,
    /// Mean squared difference.
    Mse,
}

impl<T: Real> Tape<T> {
    pub fn reduce_loss(&self, a: &Tensor<T>, b: &Tensor<T>, kind: LossKind) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return Err(Error::shape(format!(
                "loss operands differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let n = a.numel();
        if n == 0 {
            return Err(Error::shape("loss over empty tensors"));
        }
        let diff: Vec<T> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let inv = T::ONE / T::from_f64(n as f64);
        let value = match kind {
            LossKind::L1Mean => diff.iter().map(|d| d.abs()).sum::<T>() * inv,
            LossKind::Mse => diff.iter().map(|&d| d * d).sum::<T>() * inv,
        };
        if !self.tracks(&[a, b]) {
            return Ok(Tensor::from_parts(Vec::new(), vec![value], None));
        }
        self.record(
            &[a, b],
            Vec::new(),
            vec![value],
            Box::new(move |g, need| {
                let scale = g[0] * inv;
                let ga: Vec<T> = match kind {
                    LossKind::L1Mean => diff
                        .iter()
                        .map(|&d| {
                            if d > T::ZERO {
                                scale
                            } else if d < T::ZERO {
                                -scale
                            } else {
                                T::ZERO
                            }
                        })
                        .collect(),
                    LossKind::Mse => {
                        let two = scale + scale;
                        diff.iter().map(|&d| two * d).collect()
                    }
                };
                let gb = need[1].then(|| ga.iter().map(|&v| -v).collect());
                vec![need[0].then_some(ga), gb]
            }),
        )
    }

    /// Channel Gram matrices `G[n,i,j] = Σ_hw F[n,i]·F[n,j] / (C·H·W)`.
    pub fn gram_matrix(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = features.dims4()?;
        let hw = h * w;
        if hw == 0 {
            return Err(Error::shape("gram_matrix of empty plane"));
        }
        let norm = T::ONE / T::from_f64((c * hw) as f64);
        let f = features.shared_data();
        let mut g = vec![T::ZERO; n * c * c];
        for s in 0..n {
            let fs = &f[s * c * hw..(s + 1) * c * hw];
            let gs = &mut g[s * c * c..(s + 1) * c * c];
            gemm(c, hw, c, fs, Trans::No, fs, Trans::Yes, gs, T::ZERO);
            gs.iter_mut().for_each(|v| *v *= norm);
        }
        self.record(
            &[features],
            vec![n, c, c],
            g,
            Box::new(move |gg, _| {
                let mut gf = vec![T::ZERO; n * c * hw];
                let mut sym = vec![T::ZERO; c * c];
                for s in 0..n {
                    let gs = &gg[s * c * c..(s + 1) * c * c];
                    for i in 0..c {
                        for j in 0..c {
                            sym[i * c + j] = (gs[i * c + j] + gs[j * c + i]) * norm;
                        }
                    }
                    gemm(
                        c,
                        c,
                        hw,
                        &sym,
                        Trans::No,
                        &f[s * c * hw..(s + 1) * c * hw],
                        Trans::No,
                        &mut gf[s * c * hw..(s + 1) * c * hw],
                        T::ZERO,
                    );
                }
                vec![Some(gf)]
            }),
        )
    }

    /// Spatial mean per (sample, channel): `[N, C, H, W] → [N, C]`.
    pub fn global_avg_pool(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = input.dims4()?;
        let hw = h * w;
        let inv = T::ONE / T::from_f64(hw as f64);
        let y = input
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        self.record(
            &[input],
            vec![n, c],
            y,
            Box::new(move |g, _| {
                vec![Some(
                    g.iter()
                        .flat_map(|&v| std::iter::repeat_n(v * inv, hw))
                        .collect(),
                )]
            }),
        )
    }
}
