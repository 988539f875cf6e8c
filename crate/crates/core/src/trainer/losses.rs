use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{LossKind, ParamSet, Real, Tape, Tensor};
use crate::nets::FeatureExtractor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Cycle consistency.
    pub lambda1: f64,
    /// Identity.
    pub lambda2: f64,
    /// Style.
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 5.0,
            lambda2: 5.0,
            lambda3: 2e-5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(Error::invalid(
                "loss weights must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversarialMode {
    /// Generator minimizes `-log σ(D(G(x)))`.
    #[default]
    NonSaturating,
    /// Generator minimizes `log(1 - σ(D(G(x))))`.
    LiteralMinimax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Generator,
    Discriminator,
}

/// Adversarial loss on patch logits, written with softplus:
/// `-log σ(x) = softplus(-x)` and `-log(1 - σ(x)) = softplus(x)`.
///
/// The discriminator side needs `real`; the generator side ignores it.
pub fn adversarial_loss<T: Real>(
    tape: &Tape<T>,
    real: Option<&Tensor<T>>,
    fake: &Tensor<T>,
    side: Side,
    mode: AdversarialMode,
) -> Result<Tensor<T>> {
    match side {
        Side::Discriminator => {
            let real =
                real.ok_or_else(|| Error::invalid("discriminator loss needs real logits"))?;
            let r = tape.mean(&tape.softplus(&tape.scale(real, -1.0)?)?)?;
            let f = tape.mean(&tape.softplus(fake)?)?;
            tape.add(&r, &f)
        }
        Side::Generator => match mode {
            AdversarialMode::NonSaturating => tape.mean(&tape.softplus(&tape.scale(fake, -1.0)?)?),
            AdversarialMode::LiteralMinimax => tape.scale(&tape.mean(&tape.softplus(fake)?)?, -1.0),
        },
    }
}

/// An image-to-image mapping recorded on a tape.
pub type Mapping<'a, T> = &'a dyn Fn(&Tensor<T>) -> Result<Tensor<T>>;

/// `‖G_ab(G_ba(fpd)) − fpd‖₁ + ‖G_ba(G_ab(drr)) − drr‖₁`, both as means.
pub fn cycle_loss<T: Real>(
    tape: &Tape<T>,
    g_drr2fpd: Mapping<T>,
    g_fpd2drr: Mapping<T>,
    drr: &Tensor<T>,
    fpd: &Tensor<T>,
) -> Result<Tensor<T>> {
    let fpd_cycle = g_drr2fpd(&g_fpd2drr(fpd)?)?;
    let drr_cycle = g_fpd2drr(&g_drr2fpd(drr)?)?;
    tape.add(
        &tape.reduce_loss(&fpd_cycle, fpd, LossKind::L1Mean)?,
        &tape.reduce_loss(&drr_cycle, drr, LossKind::L1Mean)?,
    )
}

/// Each generator applied to an image already in its target domain.
pub fn identity_loss<T: Real>(
    tape: &Tape<T>,
    g_drr2fpd: Mapping<T>,
    g_fpd2drr: Mapping<T>,
    drr: &Tensor<T>,
    fpd: &Tensor<T>,
) -> Result<Tensor<T>> {
    tape.add(
        &tape.reduce_loss(&g_drr2fpd(fpd)?, fpd, LossKind::L1Mean)?,
        &tape.reduce_loss(&g_fpd2drr(drr)?, drr, LossKind::L1Mean)?,
    )
}

/// `Σ_taps mse(gram(V(a)), gram(V(b)))`.
pub fn style_distance<T: Real>(
    tape: &Tape<T>,
    extractor: &FeatureExtractor,
    weights: &ParamSet<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let fa = extractor.extract(tape, weights, a)?;
    let fb = extractor.extract(tape, weights, b)?;
    let terms = fa
        .iter()
        .zip(&fb)
        .map(|(x, y)| tape.reduce_loss(&tape.gram_matrix(x)?, &tape.gram_matrix(y)?, LossKind::Mse))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(&Tensor<T>, f64)> = terms.iter().map(|t| (t, 1.0)).collect();
    tape.linear_combination(&refs)
}

/// Style distance in the FPD direction plus the mirrored DRR direction.
pub fn style_loss<T: Real>(
    tape: &Tape<T>,
    extractor: &FeatureExtractor,
    weights: &ParamSet<T>,
    synthetic_fpd: &Tensor<T>,
    real_fpd: &Tensor<T>,
    synthetic_drr: &Tensor<T>,
    real_drr: &Tensor<T>,
) -> Result<Tensor<T>> {
    tape.add(
        &style_distance(tape, extractor, weights, synthetic_fpd, real_fpd)?,
        &style_distance(tape, extractor, weights, synthetic_drr, real_drr)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::FeatureExtractorSpec;

    fn logits(v: f64) -> Tensor<f64> {
        Tensor::full([2, 1, 4, 4], v)
    }

    fn value(t: &Tensor<f64>) -> f64 {
        t.item().unwrap()
    }

    #[test]
    fn adversarial_examples() {
        let tape = Tape::<f64>::inference();
        let mode = AdversarialMode::NonSaturating;
        let d = adversarial_loss(
            &tape,
            Some(&logits(0.0)),
            &logits(0.0),
            Side::Discriminator,
            mode,
        )
        .unwrap();
        assert!((value(&d) - 2.0 * 2f64.ln()).abs() < 1e-12);
        let perfect = adversarial_loss(
            &tape,
            Some(&logits(40.0)),
            &logits(-40.0),
            Side::Discriminator,
            mode,
        )
        .unwrap();
        assert!(value(&perfect) < 1e-15);
        let g = adversarial_loss(&tape, None, &logits(0.0), Side::Generator, mode).unwrap();
        assert!((value(&g) - 2f64.ln()).abs() < 1e-12);
        let lit = adversarial_loss(
            &tape,
            None,
            &logits(0.0),
            Side::Generator,
            AdversarialMode::LiteralMinimax,
        )
        .unwrap();
        assert!((value(&lit) + 2f64.ln()).abs() < 1e-12);
        assert!(adversarial_loss(&tape, None, &logits(0.0), Side::Discriminator, mode).is_err());
    }

    #[test]
    fn literal_mode_matches_log_one_minus_sigmoid() {
        let tape = Tape::<f64>::inference();
        for x in [-3.0, -0.5, 0.7, 2.5] {
            let lit = adversarial_loss(
                &tape,
                None,
                &logits(x),
                Side::Generator,
                AdversarialMode::LiteralMinimax,
            )
            .unwrap();
            let sigma = 1.0 / (1.0 + (-x as f64).exp());
            assert!((value(&lit) - (1.0 - sigma).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn cycle_and_identity_examples() {
        let tape = Tape::<f64>::inference();
        let drr = Tensor::full([1, 1, 4, 4], 0.3);
        let fpd = Tensor::full([1, 1, 4, 4], 0.6);
        let id = |x: &Tensor<f64>| Ok(x.clone());
        assert_eq!(
            value(&cycle_loss(&tape, &id, &id, &drr, &fpd).unwrap()),
            0.0
        );
        assert_eq!(
            value(&identity_loss(&tape, &id, &id, &drr, &fpd).unwrap()),
            0.0
        );
        // Round trips that drift by 0.1 in each direction.
        let up = |x: &Tensor<f64>| Ok(x.map(|v| v + 0.05));
        let c = value(&cycle_loss(&tape, &up, &up, &drr, &fpd).unwrap());
        assert!((c - 0.2).abs() < 1e-12);
        let half = |x: &Tensor<f64>| Ok(x.map(|_| 0.5));
        let drr = Tensor::full([1, 1, 4, 4], 0.3);
        let i = value(&identity_loss(&tape, &half, &half, &drr, &drr).unwrap());
        assert!((i - 0.4).abs() < 1e-12);
    }

    #[test]
    fn style_is_zero_for_identical_images() {
        let ex = FeatureExtractorSpec::toy().build().unwrap();
        let tape = Tape::<f32>::inference();
        let img = Tensor::<f32>::new(
            [1, 1, 32, 32],
            (0..1024).map(|i| (i % 17) as f32 / 16.0).collect(),
        )
        .unwrap();
        let s = style_loss(&tape, &ex, &ex.params, &img, &img, &img, &img).unwrap();
        assert_eq!(s.item().unwrap(), 0.0);
    }
}
