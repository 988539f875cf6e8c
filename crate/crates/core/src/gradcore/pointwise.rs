use super::real::Real;
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    /// Slope used by the discriminator.
    pub const LEAKY: Activation = Activation::LeakyRelu(0.2);
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    // Evaluated on the non-positive side so exp never overflows.
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

#[inline]
fn softplus<T: Real>(x: T) -> T {
    x.max(T::ZERO) + (T::ONE + (-x.abs()).exp()).ln()
}

impl<T: Real> Tape<T> {
    pub fn activation(&self, input: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
        let x = input.shared_data();
        let y: Vec<T> = match kind {
            Activation::Relu => x.iter().map(|&v| v.max(T::ZERO)).collect(),
            Activation::LeakyRelu(slope) => {
                let s = T::from_f64(slope);
                x.iter()
                    .map(|&v| if v > T::ZERO { v } else { v * s })
                    .collect()
            }
            Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        };
        if !self.tracks(&[input]) {
            return Ok(Tensor::from_parts(input.shape().to_vec(), y, None));
        }
        let saved = match kind {
            Activation::Sigmoid => std::sync::Arc::new(y.clone()),
            _ => x,
        };
        self.record(
            &[input],
            input.shape().to_vec(),
            y,
            Box::new(move |g, _| {
                let gx = match kind {
                    Activation::Relu => g
                        .iter()
                        .zip(saved.iter())
                        .map(|(&g, &x)| if x > T::ZERO { g } else { T::ZERO })
                        .collect(),
                    Activation::LeakyRelu(slope) => {
                        let s = T::from_f64(slope);
                        g.iter()
                            .zip(saved.iter())
                            .map(|(&g, &x)| if x > T::ZERO { g } else { g * s })
                            .collect()
                    }
                    Activation::Sigmoid => g
                        .iter()
                        .zip(saved.iter())
                        .map(|(&g, &y)| g * y * (T::ONE - y))
                        .collect(),
                };
                vec![Some(gx)]
            }),
        )
    }

    /// `log(1 + eˣ)`, evaluated stably.
    pub fn softplus(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let x = input.shared_data();
        let y = x.iter().map(|&v| softplus(v)).collect();
        self.record(
            &[input],
            input.shape().to_vec(),
            y,
            Box::new(move |g, _| {
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(&g, &x)| g * sigmoid(x))
                        .collect(),
                )]
            }),
        )
    }

    pub fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(a, b, "add")?;
        let y = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x + y)
            .collect();
        self.record(
            &[a, b],
            a.shape().to_vec(),
            y,
            Box::new(|g, need| vec![need[0].then(|| g.to_vec()), need[1].then(|| g.to_vec())]),
        )
    }

    pub fn sub(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(a, b, "sub")?;
        let y = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x - y)
            .collect();
        self.record(
            &[a, b],
            a.shape().to_vec(),
            y,
            Box::new(|g, need| {
                vec![
                    need[0].then(|| g.to_vec()),
                    need[1].then(|| g.iter().map(|&v| -v).collect()),
                ]
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(a, b, "mul")?;
        let (xa, xb) = (a.shared_data(), b.shared_data());
        let y = xa.iter().zip(xb.iter()).map(|(&x, &y)| x * y).collect();
        self.record(
            &[a, b],
            a.shape().to_vec(),
            y,
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.iter().zip(xb.iter()).map(|(&g, &b)| g * b).collect()),
                    need[1].then(|| g.iter().zip(xa.iter()).map(|(&g, &a)| g * a).collect()),
                ]
            }),
        )
    }

    pub fn scale(&self, input: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
        let c = T::from_f64(factor);
        let y = input.data().iter().map(|&v| v * c).collect();
        self.record(
            &[input],
            input.shape().to_vec(),
            y,
            Box::new(move |g, _| vec![Some(g.iter().map(|&v| v * c).collect())]),
        )
    }

    /// `Σ wᵢ·sᵢ` over scalar tensors, accumulated in `f64` and rounded once.
    pub fn linear_combination(&self, terms: &[(&Tensor<T>, f64)]) -> Result<Tensor<T>> {
        let mut acc = 0.0f64;
        for (t, w) in terms {
            acc += w * t.item()?.to_f64();
        }
        let weights: Vec<T> = terms.iter().map(|(_, w)| T::from_f64(*w)).collect();
        let inputs: Vec<&Tensor<T>> = terms.iter().map(|(t, _)| *t).collect();
        self.record(
            &inputs,
            Vec::new(),
            vec![T::from_f64(acc)],
            Box::new(move |g, need| {
                weights
                    .iter()
                    .zip(need)
                    .map(|(&w, &n)| n.then(|| vec![g[0] * w]))
                    .collect()
            }),
        )
    }

    pub fn sum(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let total = input.data().iter().copied().sum::<T>();
        let n = input.numel();
        self.record(
            &[input],
            Vec::new(),
            vec![total],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let n = input.numel();
        if n == 0 {
            return Err(Error::shape("mean of empty tensor"));
        }
        let inv = T::ONE / T::from_f64(n as f64);
        let total = input.data().iter().copied().sum::<T>() * inv;
        self.record(
            &[input],
            Vec::new(),
            vec![total],
            Box::new(move |g, _| vec![Some(vec![g[0] * inv; n])]),
        )
    }
}
