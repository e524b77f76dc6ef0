//! Training objectives.
//!
//! All functions take batched `tch` tensors and return scalar tensors so
//! they can be differentiated; evaluate in `Kind::Double` for exact checks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tch::nn::{self, ConvConfig};
use tch::{Device, Kind, Tensor};

use crate::error::{Error, Result};
use crate::physics::tensor::{backscatter, ParamsTensor};

/// Weights of the generator objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_c: f64,
    pub lambda_p: f64,
    pub lambda_b: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_g: 3.0,
            lambda_c: 4.0,
            lambda_p: 0.1,
            lambda_b: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_g, self.lambda_c, self.lambda_p, self.lambda_b];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and nonnegative, got {all:?}"
            )));
        }
        Ok(())
    }
}

/// Scalar loss values of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_g: f64,
    pub l_d: f64,
    pub l_cycle: f64,
    pub l_perc: f64,
    pub l_bhat: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l_g, self.l_d, self.l_cycle, self.l_perc, self.l_bhat, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Weighted generator objective. The discriminator loss is optimized
/// separately and does not enter.
pub fn total(l_g: f64, l_cycle: f64, l_perc: f64, l_bhat: f64, w: &LossWeights) -> f64 {
    w.lambda_g * l_g + w.lambda_c * l_cycle + w.lambda_p * l_perc + w.lambda_b * l_bhat
}

/// Tensor form of [`total`].
pub fn total_t(l_g: &Tensor, l_cycle: &Tensor, l_perc: &Tensor, l_bhat: &Tensor, w: &LossWeights) -> Tensor {
    l_g * w.lambda_g + l_cycle * w.lambda_c + l_perc * w.lambda_p + l_bhat * w.lambda_b
}

fn mean_over_scales(scales: &[Tensor], f: impl Fn(&Tensor) -> Tensor) -> Tensor {
    assert!(!scales.is_empty(), "at least one score scale");
    let sum = scales
        .iter()
        .map(f)
        .reduce(|a, b| a + b)
        .expect("nonempty");
    sum / scales.len() as f64
}

/// Least-squares generator loss: mean over scales of `mean((s − 1)²)`.
pub fn adversarial_generator(fake_scores: &[Tensor]) -> Tensor {
    mean_over_scales(fake_scores, |s| (s - 1.0).square().mean(s.kind()))
}

/// Least-squares discriminator loss: mean over scales of
/// `mean((real − 1)²) + mean(fake²)`.
pub fn adversarial_discriminator(real_scores: &[Tensor], fake_scores: &[Tensor]) -> Tensor {
    assert_eq!(real_scores.len(), fake_scores.len(), "scale count mismatch");
    let terms: Vec<Tensor> = real_scores
        .iter()
        .zip(fake_scores)
        .map(|(r, f)| (r - 1.0).square().mean(r.kind()) + f.square().mean(f.kind()))
        .collect();
    mean_over_scales(&terms, |t| t.shallow_clone())
}

/// Per-pixel L1, averaged, summed over the two directions.
pub fn cycle_consistency(x: &Tensor, x_rec: &Tensor, y: &Tensor, y_rec: &Tensor) -> Tensor {
    (x_rec - x).abs().mean(x.kind()) + (y_rec - y).abs().mean(y.kind())
}

/// Mean absolute error between the image and the backscatter estimate over
/// masked pixels and all channels. The mask is detached.
///
/// `image` is `[N, 3, H, W]`, `depth` and `mask` are `[N, 1, H, W]`.
pub fn backscatter_fidelity(
    image: &Tensor,
    depth: &Tensor,
    params: &ParamsTensor,
    mask: &Tensor,
) -> Result<Tensor> {
    let mask = mask.detach();
    let selected = mask.sum(Kind::Double).double_value(&[]);
    if selected <= 0.0 {
        return Err(Error::Contract("backscatter mask selects no pixels".into()));
    }
    let est = backscatter(depth, params);
    let err = (image - est).abs() * &mask;
    Ok(err.sum(image.kind()) / (3.0 * selected))
}

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// (name, in, out) of the VGG16 convolutions up to `relu3_3`, named by
/// their index in torchvision's `features` sequence.
const VGG16_TRUNK: [(&str, i64, i64); 7] = [
    ("0", 3, 64),
    ("2", 64, 64),
    ("5", 64, 128),
    ("7", 128, 128),
    ("10", 128, 256),
    ("12", 256, 256),
    ("14", 256, 256),
];

/// Where the perceptual encoder's weights came from.
#[derive(Clone, Debug, PartialEq)]
pub enum EncoderWeights {
    File(PathBuf),
    /// Deterministic random initialization from the given seed.
    Random(u64),
}

/// Frozen VGG16 trunk up to `relu3_3`.
///
/// Weights load from a safetensors file with torchvision key names
/// (`features.0.weight`, `features.0.bias`, ... `features.14.bias`). When no
/// file is given, the trunk is randomly initialized from a fixed seed; the
/// loss then still penalizes structural differences but is no longer the
/// ImageNet-pretrained feature distance.
#[derive(Debug)]
pub struct PerceptualEncoder {
    vs: nn::VarStore,
    convs: Vec<nn::Conv2D>,
    source: EncoderWeights,
    mean: Tensor,
    std: Tensor,
}

impl PerceptualEncoder {
    pub fn new(weights: Option<&Path>, seed: u64, device: Device) -> Result<Self> {
        let mut vs = nn::VarStore::new(device);
        let features = vs.root() / "features";
        // random fallback: seed the global generator so the trunk is reproducible
        tch::manual_seed(seed as i64);
        let convs = VGG16_TRUNK
            .iter()
            .map(|(name, cin, cout)| {
                nn::conv2d(
                    &features / *name,
                    *cin,
                    *cout,
                    3,
                    ConvConfig {
                        padding: 1,
                        ..Default::default()
                    },
                )
            })
            .collect();
        let source = match weights {
            Some(path) => {
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "perceptual encoder weights not found: {}",
                        path.display()
                    )));
                }
                vs.load(path).map_err(|e| {
                    Error::Config(format!(
                        "cannot load perceptual encoder weights {}: {e}",
                        path.display()
                    ))
                })?;
                EncoderWeights::File(path.to_path_buf())
            }
            None => EncoderWeights::Random(seed),
        };
        vs.freeze();
        let mean = Tensor::from_slice(&IMAGENET_MEAN).view([1, 3, 1, 1]).to_device(device);
        let std = Tensor::from_slice(&IMAGENET_STD).view([1, 3, 1, 1]).to_device(device);
        Ok(Self {
            vs,
            convs,
            source,
            mean,
            std,
        })
    }

    pub fn source(&self) -> &EncoderWeights {
        &self.source
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    /// `relu3_3` features of a `[0, 1]` batch.
    pub fn features(&self, x: &Tensor) -> Tensor {
        let kind = x.kind();
        let mut h = (x - self.mean.to_kind(kind)) / self.std.to_kind(kind);
        for (i, c) in self.convs.iter().enumerate() {
            if i == 2 || i == 4 {
                h = h.max_pool2d([2, 2], [2, 2], [0, 0], [1, 1], false);
            }
            if c.ws.kind() != kind {
                let b = c.bs.as_ref().map(|b| b.to_kind(kind));
                h = h.conv2d(&c.ws.to_kind(kind), b.as_ref(), [1, 1], [1, 1], [1, 1], 1);
            } else {
                h = h.apply(c);
            }
            h = h.relu();
        }
        h
    }
}

/// Squared feature distance summed over channels and averaged over batch
/// and feature-map positions.
pub fn feature_distance(fa: &Tensor, fb: &Tensor) -> Tensor {
    (fa - fb).square().sum_dim_intlist([1].as_slice(), false, fa.kind()).mean(fa.kind())
}

/// Perceptual reconstruction loss between an original batch and its
/// reconstruction. The original's features carry no gradient.
pub fn perceptual(orig: &Tensor, recov: &Tensor, encoder: &PerceptualEncoder) -> Tensor {
    let fa = tch::no_grad(|| encoder.features(orig));
    let fb = encoder.features(recov);
    feature_distance(&fa, &fb)
}
