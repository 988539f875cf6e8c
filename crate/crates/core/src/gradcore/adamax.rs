use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adamax hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamaxConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Per-parameter first moment `m`, infinity-norm accumulator `u` and the
/// shared step counter `t`.
#[derive(Debug, Clone)]
pub struct AdamaxState<T: Real = f32> {
    pub config: AdamaxConfig,
    pub(crate) m: BTreeMap<String, Vec<T>>,
    pub(crate) u: BTreeMap<String, Vec<T>>,
    pub(crate) t: u64,
}

impl<T: Real> AdamaxState<T> {
    pub fn new(config: AdamaxConfig) -> Self {
        Self {
            config,
            m: BTreeMap::new(),
            u: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&[T]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn inf_norm(&self, name: &str) -> Option<&[T]> {
        self.u.get(name).map(Vec::as_slice)
    }

    /// One update with learning rate `lr`:
    ///
    /// ```text
    /// m ← β₁m + (1 − β₁)g
    /// u ← max(β₂u, |g|)
    /// θ ← θ − lr/(1 − β₁ᵗ) · m/(u + ε)
    /// ```
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "adamax: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), (gname, g)) in params.iter().zip(grads.iter()) {
            if name != gname || p.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "adamax: parameter {name}{:?} paired with gradient {gname}{:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.t += 1;
        let c = self.config;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one_minus_b1 = T::from_f64(1.0 - c.beta1);
        let eps = T::from_f64(c.epsilon);
        let step_size = T::from_f64(lr / (1.0 - c.beta1.powi(self.t as i32)));

        let mut updated = ParamSet::new();
        for ((name, p), (_, g)) in params.iter().zip(grads.iter()) {
            let n = p.numel();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![T::ZERO; n]);
            let u = self
                .u
                .entry(name.clone())
                .or_insert_with(|| vec![T::ZERO; n]);
            if m.len() != n || u.len() != n {
                return Err(Error::shape(format!(
                    "adamax state for {name} has wrong size"
                )));
            }
            let mut theta = p.data().to_vec();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + one_minus_b1 * gi;
                u[i] = (b2 * u[i]).max(gi.abs());
                theta[i] -= step_size * m[i] / (u[i] + eps);
            }
            updated.insert(name.clone(), Tensor::new(p.shape().to_vec(), theta)?);
        }
        *params = updated;
        Ok(())
    }

    /// Flattens state into named tensors (`m/<name>`, `u/<name>`, `t`).
    pub fn to_tensors(&self, shapes: &ParamSet<T>) -> Result<ParamSet<T>> {
        let mut out = ParamSet::new();
        for (name, p) in shapes.iter() {
            let n = p.numel();
            let m = self
                .m
                .get(name)
                .cloned()
                .unwrap_or_else(|| vec![T::ZERO; n]);
            let u = self
                .u
                .get(name)
                .cloned()
                .unwrap_or_else(|| vec![T::ZERO; n]);
            out.insert(format!("m/{name}"), Tensor::new(p.shape().to_vec(), m)?);
            out.insert(format!("u/{name}"), Tensor::new(p.shape().to_vec(), u)?);
        }
        // Split so every count up to 2^48 survives the trip through f32.
        let hi = (self.t >> 24) as f64;
        let lo = (self.t & 0xff_ffff) as f64;
        out.insert(
            "t",
            Tensor::new([2], vec![T::from_f64(hi), T::from_f64(lo)])?,
        );
        Ok(out)
    }

    pub fn from_tensors(
        config: AdamaxConfig,
        tensors: &ParamSet<T>,
        shapes: &ParamSet<T>,
    ) -> Result<Self> {
        let mut state = Self::new(config);
        let t = tensors.get("t")?;
        if t.numel() != 2 {
            return Err(Error::format(
                "adamax state",
                "step counter must have two entries",
            ));
        }
        state.t = ((t.data()[0].to_f64() as u64) << 24) | t.data()[1].to_f64() as u64;
        for (name, p) in shapes.iter() {
            let m = tensors.get(&format!("m/{name}"))?;
            let u = tensors.get(&format!("u/{name}"))?;
            if m.shape() != p.shape() || u.shape() != p.shape() {
                return Err(Error::format(
                    "adamax state",
                    format!("shape mismatch for {name}"),
                ));
            }
            state.m.insert(name.clone(), m.data().to_vec());
            state.u.insert(name.clone(), u.data().to_vec());
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(value));
        p
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut state = AdamaxState::<f64>::new(AdamaxConfig::default());
        let mut p = single(0.0);
        state.step(&mut p, &single(1.0), 2e-4).unwrap();
        let moved = -p.get("w").unwrap().item().unwrap();
        // m = 0.5, bias correction 0.5, u = 1 (plus ε in the denominator).
        assert!((moved - 2e-4 / (1.0 + 1e-7)).abs() < 1e-18);
        assert_eq!(state.first_moment("w").unwrap(), &[0.5]);
        assert_eq!(state.inf_norm("w").unwrap(), &[1.0]);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamaxState::<f64>::new(AdamaxConfig::default());
        let mut p = single(0.37);
        for _ in 0..50 {
            state.step(&mut p, &single(0.0), 2e-4).unwrap();
        }
        assert_eq!(p.get("w").unwrap().item().unwrap(), 0.37);
    }

    #[test]
    fn matches_scalar_recurrence() {
        let cfg = AdamaxConfig::default();
        let mut state = AdamaxState::<f64>::new(cfg);
        let mut p = single(1.0);
        let g = 0.3;
        let (mut theta, mut m, mut u) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            state.step(&mut p, &single(g), cfg.lr).unwrap();
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            u = (cfg.beta2 * u).max(g.abs());
            theta -= cfg.lr / (1.0 - cfg.beta1.powi(t)) * m / (u + cfg.epsilon);
        }
        assert!((p.get("w").unwrap().item().unwrap() - theta).abs() < 1e-12);
    }

    #[test]
    fn mismatched_names_are_rejected() {
        let mut state = AdamaxState::<f64>::new(AdamaxConfig::default());
        let mut p = single(0.0);
        let mut g = ParamSet::new();
        g.insert("v", Tensor::scalar(1.0));
        assert!(state.step(&mut p, &g, 1e-3).is_err());
    }

    #[test]
    fn state_tensor_round_trip() {
        let mut state = AdamaxState::<f32>::new(AdamaxConfig::default());
        let mut p = ParamSet::<f32>::new();
        p.insert("a", Tensor::ones([2, 2]));
        let g = p.clone();
        for _ in 0..3 {
            state.step(&mut p, &g, 1e-3).unwrap();
        }
        let flat = state.to_tensors(&p).unwrap();
        let back = AdamaxState::from_tensors(state.config, &flat, &p).unwrap();
        assert_eq!(back.t, 3);
        assert_eq!(back.m, state.m);
        assert_eq!(back.u, state.u);
    }
}
