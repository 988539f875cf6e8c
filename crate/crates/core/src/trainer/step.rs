use serde::{Deserialize, Serialize};

use super::losses::{adversarial_loss, AdversarialMode, LossWeights, Side};
use crate::error::{Error, Result};
use crate::gradcore::{LossKind, ParamSet, Tape, Tensor};
use crate::nets::{FeatureExtractor, ModelBundle, UnetBundle};

/// Paired `[N, 1, H, W]` batches.
#[derive(Debug, Clone)]
pub struct Batch {
    pub drr: Tensor<f32>,
    pub fpd: Tensor<f32>,
}

impl Batch {
    pub fn new(drr: Tensor<f32>, fpd: Tensor<f32>) -> Result<Self> {
        if drr.shape() != fpd.shape() || drr.rank() != 4 || drr.shape()[1] != 1 {
            return Err(Error::shape(format!(
                "batch shapes {:?} and {:?}",
                drr.shape(),
                fpd.shape()
            )));
        }
        Ok(Self { drr, fpd })
    }

    pub fn len(&self) -> usize {
        self.drr.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_g: f64,
    pub adv_d_fpd: f64,
    pub adv_d_drr: f64,
    pub cycle: f64,
    pub identity: f64,
    pub style: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossBreakdown {
    pub const CSV_FIELDS: [&'static str; 8] = [
        "adv_G",
        "adv_D_FPD",
        "adv_D_DRR",
        "cycle",
        "identity",
        "style",
        "total_G",
        "total_D",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.adv_g,
            self.adv_d_fpd,
            self.adv_d_drr,
            self.cycle,
            self.identity,
            self.style,
            self.total_g,
            self.total_d,
        ]
    }

    pub fn from_values(v: [f64; 8]) -> Self {
        Self {
            adv_g: v[0],
            adv_d_fpd: v[1],
            adv_d_drr: v[2],
            cycle: v[3],
            identity: v[4],
            style: v[5],
            total_g: v[6],
            total_d: v[7],
        }
    }

    /// `adv_G + λ1·cycle + λ2·identity + λ3·style`, evaluated in `f64`.
    pub fn recombined(&self, w: &LossWeights) -> f64 {
        self.adv_g + w.lambda1 * self.cycle + w.lambda2 * self.identity + w.lambda3 * self.style
    }
}

fn scalar(name: &str, t: &Tensor<f32>) -> Result<f64> {
    let v = t.item()? as f64;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{name} loss ({v})")));
    }
    Ok(v)
}

fn discriminator_update(
    d: &crate::nets::DiscriminatorConfig,
    params: &mut ParamSet<f32>,
    opt: &mut crate::gradcore::AdamaxState<f32>,
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
    mode: AdversarialMode,
    lr: f64,
    name: &str,
) -> Result<f64> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let real_logits = d.forward(&tape, &bound, real)?;
    let fake_logits = d.forward(&tape, &bound, fake)?;
    let loss = adversarial_loss(
        &tape,
        Some(&real_logits),
        &fake_logits,
        Side::Discriminator,
        mode,
    )?;
    let value = scalar(name, &loss)?;
    let grads = bound.grads(&tape.backward(&loss)?);
    opt.step(params, &grads, lr)?;
    Ok(value)
}

/// One optimization step: `D_FPD`, then `D_DRR`, then both generators
/// jointly on `total_G`. Each update only binds its own parameters, so the
/// other networks act as constants. On error the bundle is left unchanged.
pub fn train_step(
    bundle: &mut ModelBundle,
    batch: &Batch,
    weights: &LossWeights,
    mode: AdversarialMode,
    lr: f64,
    extractor: &FeatureExtractor,
) -> Result<LossBreakdown> {
    let mut next = bundle.clone();
    let gen = &bundle.generator;
    let disc = &bundle.discriminator;

    let (fake_fpd, fake_drr) = {
        let tape = Tape::inference();
        (
            gen.forward(&tape, &bundle.g_drr2fpd, &batch.drr)?,
            gen.forward(&tape, &bundle.g_fpd2drr, &batch.fpd)?,
        )
    };
    let adv_d_fpd = discriminator_update(
        disc,
        &mut next.d_fpd,
        &mut next.opt_d_fpd,
        &batch.fpd,
        &fake_fpd,
        mode,
        lr,
        "adv_D_FPD",
    )?;
    let adv_d_drr = discriminator_update(
        disc,
        &mut next.d_drr,
        &mut next.opt_d_drr,
        &batch.drr,
        &fake_drr,
        mode,
        lr,
        "adv_D_DRR",
    )?;

    let tape = Tape::new();
    let mut pair = next.generator_pair();
    let bound = pair.bind(&tape);
    let ab = bound.strip_prefix("g_drr2fpd");
    let ba = bound.strip_prefix("g_fpd2drr");
    let fake_fpd = gen.forward(&tape, &ab, &batch.drr)?;
    let fake_drr = gen.forward(&tape, &ba, &batch.fpd)?;
    let adv = tape.add(
        &adversarial_loss(
            &tape,
            None,
            &disc.forward(&tape, &next.d_fpd, &fake_fpd)?,
            Side::Generator,
            mode,
        )?,
        &adversarial_loss(
            &tape,
            None,
            &disc.forward(&tape, &next.d_drr, &fake_drr)?,
            Side::Generator,
            mode,
        )?,
    )?;
    let cycle = tape.add(
        &tape.reduce_loss(
            &gen.forward(&tape, &ab, &fake_drr)?,
            &batch.fpd,
            LossKind::L1Mean,
        )?,
        &tape.reduce_loss(
            &gen.forward(&tape, &ba, &fake_fpd)?,
            &batch.drr,
            LossKind::L1Mean,
        )?,
    )?;
    let identity = tape.add(
        &tape.reduce_loss(
            &gen.forward(&tape, &ab, &batch.fpd)?,
            &batch.fpd,
            LossKind::L1Mean,
        )?,
        &tape.reduce_loss(
            &gen.forward(&tape, &ba, &batch.drr)?,
            &batch.drr,
            LossKind::L1Mean,
        )?,
    )?;
    let style = super::losses::style_loss(
        &tape,
        extractor,
        &extractor.params,
        &fake_fpd,
        &batch.fpd,
        &fake_drr,
        &batch.drr,
    )?;
    let total = tape.linear_combination(&[
        (&adv, 1.0),
        (&cycle, weights.lambda1),
        (&identity, weights.lambda2),
        (&style, weights.lambda3),
    ])?;
    let breakdown = LossBreakdown {
        adv_g: scalar("adv_G", &adv)?,
        adv_d_fpd,
        adv_d_drr,
        cycle: scalar("cycle", &cycle)?,
        identity: scalar("identity", &identity)?,
        style: scalar("style", &style)?,
        total_g: scalar("total_G", &total)?,
        total_d: adv_d_fpd + adv_d_drr,
    };
    let grads = bound.grads(&tape.backward(&total)?);
    next.opt_g.step(&mut pair, &grads, lr)?;
    next.set_generator_pair(&pair);
    next.step += 1;
    *bundle = next;
    Ok(breakdown)
}

/// Supervised L1 step of the U-Net baseline; returns the loss.
pub fn unet_step(bundle: &mut UnetBundle, batch: &Batch, lr: f64) -> Result<f64> {
    let tape = Tape::new();
    let bound = bundle.params.bind(&tape);
    let pred = bundle.config.forward(&tape, &bound, &batch.drr)?;
    let loss = tape.reduce_loss(&pred, &batch.fpd, LossKind::L1Mean)?;
    let value = scalar("l1", &loss)?;
    let grads = bound.grads(&tape.backward(&loss)?);
    let mut params = bundle.params.clone();
    bundle.opt.step(&mut params, &grads, lr)?;
    bundle.params = params;
    bundle.step += 1;
    Ok(value)
}
