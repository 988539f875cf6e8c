//! VGG19-style convolutional feature extractor used by the style loss and KID.
//!
//! Layers are numbered as in the Keras VGG19 model (0 is the input,
//! `block1_conv1` is 1, the first pool is 3, ...). Weights come either from a
//! fixed-seed random initialization or from a tensor archive using the names
//! `block{b}_conv{c}/w` (`[Cout, Cin, 3, 3]`) and `block{b}_conv{c}/b`.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{archive, Activation, Pad2d, ParamSet, Real, Tape, Tensor};

/// Convolutions per block and base widths of VGG19.
const BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightSource {
    Random { seed: u64 },
    Archive { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureExtractorSpec {
    pub tap_indices: Vec<usize>,
    /// Divides every VGG19 width (1 = full width).
    pub width_divisor: usize,
    pub weights: WeightSource,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        Self {
            tap_indices: vec![1, 2, 5, 10, 15, 20],
            width_divisor: 1,
            weights: WeightSource::Random { seed: 19 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    Conv {
        block: usize,
        conv: usize,
        c_in: usize,
        c_out: usize,
    },
    Pool,
}

impl Layer {
    fn name(&self) -> String {
        match self {
            Layer::Conv { block, conv, .. } => format!("block{block}_conv{conv}"),
            Layer::Pool => "pool".into(),
        }
    }
}

impl FeatureExtractorSpec {
    pub fn toy() -> Self {
        Self {
            width_divisor: 8,
            ..Self::default()
        }
    }

    /// Minimum input extent.
    pub const MIN_EXTENT: usize = 32;

    fn layers(&self) -> Vec<Layer> {
        let mut out = Vec::new();
        let mut c_in = 3;
        for (b, &(convs, width)) in BLOCKS.iter().enumerate() {
            let c_out = (width / self.width_divisor).max(1);
            for c in 0..convs {
                out.push(Layer::Conv {
                    block: b + 1,
                    conv: c + 1,
                    c_in,
                    c_out,
                });
                c_in = c_out;
            }
            out.push(Layer::Pool);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.layers();
        if self.width_divisor == 0 {
            return Err(Error::invalid("width_divisor must be positive"));
        }
        if self.tap_indices.len() != 6 {
            return Err(Error::invalid(format!(
                "extractor needs exactly six taps, got {}",
                self.tap_indices.len()
            )));
        }
        for &t in &self.tap_indices {
            if t == 0 || t > layers.len() {
                return Err(Error::invalid(format!("tap index {t} out of range")));
            }
        }
        if self.tap_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("tap indices must be strictly increasing"));
        }
        Ok(())
    }

    /// Channel count at each tap.
    pub fn tap_channels(&self) -> Vec<usize> {
        let layers = self.layers();
        self.tap_indices
            .iter()
            .map(|&t| {
                layers[..t]
                    .iter()
                    .rev()
                    .find_map(|l| match l {
                        Layer::Conv { c_out, .. } => Some(*c_out),
                        Layer::Pool => None,
                    })
                    .unwrap_or(3)
            })
            .collect()
    }

    /// Builds the extractor, loading or generating its weights.
    pub fn build(&self) -> Result<FeatureExtractor> {
        self.validate()?;
        let depth = *self.tap_indices.last().expect("validated");
        let needed: Vec<Layer> = self.layers()[..depth]
            .iter()
            .copied()
            .filter(|l| matches!(l, Layer::Conv { .. }))
            .collect();
        let params = match &self.weights {
            WeightSource::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut p = ParamSet::new();
                for l in &needed {
                    if let Layer::Conv { c_in, c_out, .. } = *l {
                        let std = (2.0 / (c_in * 9) as f64).sqrt();
                        p.insert(
                            format!("{}/w", l.name()),
                            Tensor::randn([c_out, c_in, 3, 3], 0.0, std, &mut rng),
                        );
                        let b = (0..c_out).map(|_| rng.random_range(-0.1f32..0.1)).collect();
                        p.insert(format!("{}/b", l.name()), Tensor::new([c_out], b)?);
                    }
                }
                p
            }
            WeightSource::Archive { path } => {
                let all = archive::load_archive(path)?;
                let mut p = ParamSet::new();
                for l in &needed {
                    if let Layer::Conv { c_in, c_out, .. } = *l {
                        for (suffix, shape) in [("w", vec![c_out, c_in, 3, 3]), ("b", vec![c_out])]
                        {
                            let name = format!("{}/{suffix}", l.name());
                            let t = all.get(&name)?;
                            if t.shape() != shape.as_slice() {
                                return Err(Error::format(
                                    path.display().to_string(),
                                    format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
                                ));
                            }
                            p.insert(name, t.clone());
                        }
                    }
                }
                p
            }
        };
        Ok(FeatureExtractor {
            spec: self.clone(),
            params,
        })
    }
}

/// A built extractor with frozen weights.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub spec: FeatureExtractorSpec,
    pub params: ParamSet<f32>,
}

impl FeatureExtractor {
    /// Feature maps at the six taps for a single-channel image batch.
    ///
    /// The image is replicated to three channels. Weights never join the
    /// tape, so gradients only flow to the image.
    pub fn extract<T: Real>(
        &self,
        tape: &Tape<T>,
        params: &ParamSet<T>,
        image: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let [_, c, h, w] = image.dims4()?;
        if c != 1 || h < FeatureExtractorSpec::MIN_EXTENT || w < FeatureExtractorSpec::MIN_EXTENT {
            return Err(Error::shape(format!(
                "extractor needs a 1-channel image of at least {0}x{0}, got {c}x{h}x{w}",
                FeatureExtractorSpec::MIN_EXTENT
            )));
        }
        let mut x = tape.concat_channels(&[image, image, image])?;
        let mut taps = Vec::with_capacity(6);
        let depth = *self.spec.tap_indices.last().expect("validated");
        for (i, layer) in self.spec.layers()[..depth].iter().enumerate() {
            x = match layer {
                Layer::Conv { .. } => {
                    let name = layer.name();
                    let y = tape.conv2d(
                        &x,
                        params.get(&format!("{name}/w"))?,
                        Some(params.get(&format!("{name}/b"))?),
                        (1, 1),
                        Pad2d::uniform(1),
                    )?;
                    tape.activation(&y, Activation::Relu)?
                }
                Layer::Pool => tape.max_pool2d(&x, 2)?,
            };
            if self.spec.tap_indices.contains(&(i + 1)) {
                taps.push(x.clone());
            }
        }
        Ok(taps)
    }

    /// [`extract`](Self::extract) with the stored `f32` weights.
    pub fn extract_f32(&self, tape: &Tape<f32>, image: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        self.extract(tape, &self.params, image)
    }

    /// Global-average-pooled taps concatenated into one embedding per image.
    pub fn embed(&self, images: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::inference();
        let taps = self.extract_f32(&tape, images)?;
        let n = images.shape()[0];
        let mut out = vec![Vec::new(); n];
        for t in &taps {
            let pooled = tape.global_avg_pool(t)?;
            let c = pooled.shape()[1];
            for (s, row) in out.iter_mut().enumerate() {
                row.extend(pooled.data()[s * c..(s + 1) * c].iter().map(|&v| v as f64));
            }
        }
        Ok(out)
    }
}
