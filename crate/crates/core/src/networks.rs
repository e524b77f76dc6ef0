//! Generator sub-networks and multi-scale patch discriminators.
//!
//! A generator owns four independent sub-networks:
//!
//! * a residual encoder-decoder producing the range map `z ∈ [0, 6]`,
//! * an attenuation encoder producing `t_D ∈ (0, 1)³`,
//! * a backscatter encoder producing `t_B ∈ (0, 1)³`,
//! * a veiling-light encoder producing `B∞ ∈ (0.6, 1)³`.
//!
//! With the depth-correlation switch on, the two transmission encoders see
//! the image concatenated with the range map (four input channels).

use serde::{Deserialize, Serialize};
use tch::nn::{self, ConvConfig, ConvTransposeConfig, Init};
use tch::{Device, Kind, Tensor};

use crate::error::{Error, Result};
use crate::imaging::ImageRgb;
use crate::physics::{
    self, tensor::ParamsTensor, ChannelTriple, DegradationParams, DepthMap, ModelImage, MAX_DEPTH, VEILING_MAX,
    VEILING_MIN,
};
use crate::tensor_io;

/// Widths and depths of the sub-networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Base channel count of the range network.
    pub depth_width: i64,
    pub residual_blocks: usize,
    /// Base channel count of the coefficient and veiling encoders.
    pub encoder_width: i64,
    pub encoder_blocks: usize,
    /// Base channel count of each discriminator scale.
    pub disc_width: i64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth_width: 64,
            residual_blocks: 6,
            encoder_width: 32,
            encoder_blocks: 4,
            disc_width: 64,
        }
    }
}

const WEIGHT_STD: f64 = 0.02;

fn weight_init() -> Init {
    Init::Randn {
        mean: 0.0,
        stdev: WEIGHT_STD,
    }
}

fn conv(p: nn::Path, cin: i64, cout: i64, k: i64, stride: i64, padding: i64) -> nn::Conv2D {
    nn::conv2d(
        p,
        cin,
        cout,
        k,
        ConvConfig {
            stride,
            padding,
            ws_init: weight_init(),
            bs_init: Init::Const(0.0),
            ..Default::default()
        },
    )
}

fn batch_norm(p: nn::Path, c: i64) -> nn::BatchNorm {
    nn::batch_norm2d(
        p,
        c,
        nn::BatchNormConfig {
            ws_init: Init::Randn {
                mean: 1.0,
                stdev: WEIGHT_STD,
            },
            bs_init: Init::Const(0.0),
            ..Default::default()
        },
    )
}

fn instance_norm(x: &Tensor) -> Tensor {
    x.instance_norm(
        None::<Tensor>,
        None::<Tensor>,
        None::<Tensor>,
        None::<Tensor>,
        true,
        0.1,
        1e-5,
        false,
    )
}

/// Maps `[0, 1]` images to the `[-1, 1]` range the networks consume.
fn centre(x: &Tensor) -> Tensor {
    x * 2.0 - 1.0
}

#[derive(Debug)]
struct ResidualBlock {
    conv1: nn::Conv2D,
    conv2: nn::Conv2D,
}

impl ResidualBlock {
    fn new(p: nn::Path, c: i64) -> Self {
        Self {
            conv1: conv(&p / "conv1", c, c, 3, 1, 0),
            conv2: conv(&p / "conv2", c, c, 3, 1, 0),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let h = instance_norm(&x.reflection_pad2d([1, 1, 1, 1]).apply(&self.conv1)).relu();
        let h = instance_norm(&h.reflection_pad2d([1, 1, 1, 1]).apply(&self.conv2));
        x + h
    }
}

/// Residual encoder-decoder producing the range map.
#[derive(Debug)]
pub struct DepthNet {
    stem: nn::Conv2D,
    down: Vec<nn::Conv2D>,
    blocks: Vec<ResidualBlock>,
    up: Vec<nn::ConvTranspose2D>,
    head: nn::Conv2D,
}

impl DepthNet {
    fn new(p: nn::Path, cfg: &NetworkConfig) -> Self {
        let w = cfg.depth_width;
        let down = (0..2)
            .map(|i| conv(&p / format!("down{i}"), w << i, w << (i + 1), 3, 2, 1))
            .collect();
        let blocks = (0..cfg.residual_blocks)
            .map(|i| ResidualBlock::new(&p / format!("res{i}"), w * 4))
            .collect();
        let up = (0..2)
            .map(|i| {
                nn::conv_transpose2d(
                    &p / format!("up{i}"),
                    w << (2 - i),
                    w << (1 - i),
                    3,
                    ConvTransposeConfig {
                        stride: 2,
                        padding: 1,
                        output_padding: 1,
                        ws_init: weight_init(),
                        bs_init: Init::Const(0.0),
                        ..Default::default()
                    },
                )
            })
            .collect();
        Self {
            stem: conv(&p / "stem", 3, w, 7, 1, 0),
            down,
            blocks,
            up,
            head: conv(&p / "head", w, 1, 7, 1, 0),
        }
    }

    /// Raw (pre-range-mapping) output `u`.
    fn raw(&self, img: &Tensor) -> Tensor {
        let mut h = instance_norm(&centre(img).reflection_pad2d([3, 3, 3, 3]).apply(&self.stem)).relu();
        for d in &self.down {
            h = instance_norm(&h.apply(d)).relu();
        }
        for b in &self.blocks {
            h = b.forward(&h);
        }
        for u in &self.up {
            h = instance_norm(&h.apply(u)).relu();
        }
        // no normalisation or activation on the output layer
        h.reflection_pad2d([3, 3, 3, 3]).apply(&self.head)
    }

    /// Range map `clamp(3 + 3u, 0, 6)`.
    pub fn forward(&self, img: &Tensor) -> Tensor {
        (self.raw(img) * (MAX_DEPTH / 2.0) + MAX_DEPTH / 2.0).clamp(0.0, MAX_DEPTH)
    }

    fn head(&self) -> &nn::Conv2D {
        &self.head
    }
}

/// Strided conv-BN-ReLU trunk, global average pooling and a linear head to
/// three logits.
#[derive(Debug)]
pub struct CoeffEncoder {
    convs: Vec<nn::Conv2D>,
    norms: Vec<nn::BatchNorm>,
    head: nn::Linear,
    in_channels: i64,
}

impl CoeffEncoder {
    fn new(p: nn::Path, in_channels: i64, cfg: &NetworkConfig) -> Self {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut cin = in_channels;
        for i in 0..cfg.encoder_blocks {
            let cout = cfg.encoder_width << i.min(3);
            convs.push(conv(&p / format!("conv{i}"), cin, cout, 4, 2, 1));
            norms.push(batch_norm(&p / format!("bn{i}"), cout));
            cin = cout;
        }
        let head = nn::linear(
            &p / "head",
            cin,
            3,
            nn::LinearConfig {
                ws_init: weight_init(),
                bs_init: Some(Init::Const(0.0)),
                bias: true,
            },
        );
        Self {
            convs,
            norms,
            head,
            in_channels,
        }
    }

    /// Head logits, `[N, 3]`.
    pub fn logits(&self, x: &Tensor, train: bool) -> Tensor {
        let mut h = x.shallow_clone();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            h = h.apply(c).apply_t(n, train).relu();
        }
        h.mean_dim([2, 3].as_slice(), false, h.kind()).apply(&self.head)
    }
}

/// Per-image decomposition as tensors: depth `[N, 1, H, W]` plus coefficients.
#[derive(Debug)]
pub struct DecompositionTensor {
    pub depth: Tensor,
    pub params: ParamsTensor,
}

impl DecompositionTensor {
    pub fn detach(&self) -> Self {
        Self {
            depth: self.depth.detach(),
            params: self.params.detach(),
        }
    }

    /// Converts to per-image `f64` decompositions.
    pub fn to_decompositions(&self) -> Vec<Decomposition> {
        let depths = tensor_io::tensor_to_depths(&self.depth);
        let td = tensor_io::tensor_to_triples(&self.params.t_d);
        let tb = tensor_io::tensor_to_triples(&self.params.t_b);
        let bi = tensor_io::tensor_to_triples(&self.params.b_inf);
        depths
            .into_iter()
            .enumerate()
            .map(|(i, depth)| Decomposition {
                depth,
                params: DegradationParams {
                    t_d: td[i],
                    t_b: tb[i],
                    b_inf: bi[i],
                },
            })
            .collect()
    }
}

/// Range map plus degradation coefficients for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub depth: DepthMap,
    pub params: DegradationParams,
}

impl Decomposition {
    /// Checks the range invariants: `z ∈ [0, 6]`, `t ∈ (0, 1)`, `B∞ ∈ [0.6, 1]`.
    pub fn check(&self) -> Result<()> {
        if self.depth.data().iter().any(|v| !(0.0..=MAX_DEPTH).contains(v)) {
            return Err(Error::Contract("depth outside [0, 6]".into()));
        }
        self.params.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub network: NetworkConfig,
    /// Feed the range map to the transmission encoders.
    pub hyp1: bool,
}

/// One generator: four sub-networks in a single variable store under the
/// paths `depth`, `atten`, `backscatter` and `veiling`.
#[derive(Debug)]
pub struct Generator {
    vs: nn::VarStore,
    depth: DepthNet,
    atten: CoeffEncoder,
    backscatter: CoeffEncoder,
    veiling: CoeffEncoder,
    hyp1: bool,
}

/// Names of the four sub-module parameter groups, in a fixed order.
pub const SUBMODULES: [&str; 4] = ["depth", "atten", "backscatter", "veiling"];

impl Generator {
    pub fn new(device: Device, cfg: &GeneratorConfig) -> Self {
        let vs = nn::VarStore::new(device);
        let root = vs.root();
        let coeff_in = if cfg.hyp1 { 4 } else { 3 };
        let depth = DepthNet::new(&root / "depth", &cfg.network);
        let atten = CoeffEncoder::new(&root / "atten", coeff_in, &cfg.network);
        let backscatter = CoeffEncoder::new(&root / "backscatter", coeff_in, &cfg.network);
        let veiling = CoeffEncoder::new(&root / "veiling", 3, &cfg.network);
        Self {
            vs,
            depth,
            atten,
            backscatter,
            veiling,
            hyp1: cfg.hyp1,
        }
    }

    pub fn hyp1(&self) -> bool {
        self.hyp1
    }

    /// Smallest accepted input side; spatial sides must also be multiples
    /// of four so the range network's decoder restores the input size.
    pub fn min_side(&self) -> i64 {
        (1i64 << self.atten.convs.len()).max(16)
    }

    /// Checks that a `[N, 3, H, W]` batch fits the networks.
    pub fn check_input(&self, img: &Tensor) -> Result<()> {
        let size = img.size();
        if size.len() != 4 || size[1] != 3 {
            return Err(Error::Contract(format!(
                "expected a [N, 3, H, W] batch, got {size:?}"
            )));
        }
        let (h, w) = (size[2], size[3]);
        if h % 4 != 0 || w % 4 != 0 || h.min(w) < self.min_side() {
            return Err(Error::Contract(format!(
                "input {h}x{w} must have sides divisible by 4 and at least {}",
                self.min_side()
            )));
        }
        Ok(())
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    /// Range map for a batch, `[N, 1, H, W]`.
    pub fn depth_forward_t(&self, img: &Tensor) -> Tensor {
        self.depth.forward(img)
    }

    fn coeff_input(&self, img: &Tensor, depth: &Tensor, use_depth: bool) -> Result<Tensor> {
        let x = centre(img);
        if use_depth {
            if self.atten.in_channels != 4 {
                return Err(Error::Contract(
                    "generator was built without depth concatenation".into(),
                ));
            }
            let z = depth / (MAX_DEPTH / 2.0) - 1.0;
            Ok(Tensor::cat(&[x, z.to_kind(img.kind())], 1))
        } else {
            if self.atten.in_channels != 3 {
                return Err(Error::Contract(
                    "generator was built with depth concatenation".into(),
                ));
            }
            Ok(x)
        }
    }

    /// Attenuation and backscatter transmissions, each `[N, 3]` in `(0, 1)`.
    pub fn coeff_forward_t(
        &self,
        img: &Tensor,
        depth: &Tensor,
        use_depth: bool,
        train: bool,
    ) -> Result<(Tensor, Tensor)> {
        let x = self.coeff_input(img, depth, use_depth)?;
        let t_d = self.atten.logits(&x, train).sigmoid();
        let t_b = self.backscatter.logits(&x, train).sigmoid();
        Ok((t_d, t_b))
    }

    /// Veiling light `0.6 + 0.4·σ(logits)`, `[N, 3]`.
    pub fn veiling_forward_t(&self, img: &Tensor, train: bool) -> Tensor {
        let s = self.veiling.logits(&centre(img), train).sigmoid();
        s * (VEILING_MAX - VEILING_MIN) + VEILING_MIN
    }

    /// Runs all four sub-networks.
    pub fn decompose_t(&self, img: &Tensor, train: bool) -> DecompositionTensor {
        let depth = self.depth_forward_t(img);
        let (t_d, t_b) = self
            .coeff_forward_t(img, &depth, self.hyp1, train)
            .expect("input layout matches the generator's own switch");
        let b_inf = self.veiling_forward_t(img, train);
        DecompositionTensor {
            depth,
            params: ParamsTensor { t_d, t_b, b_inf },
        }
    }

    /// Terrestrial → underwater: decompose, then apply the forward model.
    /// Returns the unclamped synthetic image.
    pub fn generate_underwater_t(&self, x: &Tensor, train: bool) -> (Tensor, DecompositionTensor) {
        let d = self.decompose_t(x, train);
        let fake = physics::tensor::degrade(x, &d.depth, &d.params);
        (fake, d)
    }

    /// Underwater → terrestrial: decompose, then apply the inverse model.
    pub fn generate_terrestrial_t(&self, y: &Tensor, train: bool) -> (Tensor, DecompositionTensor) {
        let d = self.decompose_t(y, train);
        let fake = physics::tensor::restore(y, &d.depth, &d.params);
        (fake, d)
    }

    fn single(&self, img: &ImageRgb) -> Tensor {
        tensor_io::images_to_tensor(std::slice::from_ref(img), Kind::Float, self.vs.device())
    }

    /// Inference-mode range map for one image.
    pub fn depth_forward(&self, img: &ImageRgb) -> Result<DepthMap> {
        let t = self.single(img);
        self.check_input(&t)?;
        Ok(tch::no_grad(|| {
            tensor_io::tensor_to_depths(&self.depth_forward_t(&t)).remove(0)
        }))
    }

    /// Inference-mode transmissions `(t_D, t_B)` for one image.
    pub fn coeff_forward(
        &self,
        img: &ImageRgb,
        depth: &DepthMap,
        use_depth: bool,
    ) -> Result<(ChannelTriple, ChannelTriple)> {
        let t = self.single(img);
        self.check_input(&t)?;
        let z = tensor_io::depths_to_tensor(std::slice::from_ref(depth), Kind::Float, self.vs.device());
        tch::no_grad(|| {
            let (t_d, t_b) = self.coeff_forward_t(&t, &z, use_depth, false)?;
            Ok((
                tensor_io::tensor_to_triples(&t_d)[0],
                tensor_io::tensor_to_triples(&t_b)[0],
            ))
        })
    }

    /// Inference-mode veiling light for one image.
    pub fn veiling_forward(&self, img: &ImageRgb) -> Result<ChannelTriple> {
        let t = self.single(img);
        self.check_input(&t)?;
        Ok(tch::no_grad(|| {
            tensor_io::tensor_to_triples(&self.veiling_forward_t(&t, false))[0]
        }))
    }

    /// Inference-mode decomposition for one image.
    pub fn decompose(&self, img: &ImageRgb) -> Result<Decomposition> {
        Ok(self.decompose_batch(std::slice::from_ref(img))?.remove(0))
    }

    pub fn decompose_batch(&self, imgs: &[ImageRgb]) -> Result<Vec<Decomposition>> {
        let t = tensor_io::images_to_tensor(imgs, Kind::Float, self.vs.device());
        self.check_input(&t)?;
        Ok(tch::no_grad(|| self.decompose_t(&t, false).to_decompositions()))
    }

    /// Inference: synthetic underwater image from a terrestrial one.
    pub fn generate_underwater(&self, x: &ImageRgb) -> Result<(ModelImage, Decomposition)> {
        let d = self.decompose(x)?;
        let fake = physics::degrade(x, &d.depth, &d.params)?;
        Ok((fake, d))
    }

    /// Inference: restoration of an underwater image.
    pub fn generate_terrestrial(&self, y: &ImageRgb) -> Result<(ModelImage, Decomposition)> {
        let d = self.decompose(y)?;
        let fake = physics::restore(y, &d.depth, &d.params)?;
        Ok((fake, d))
    }

    /// Trainable variables of one sub-module, sorted by name.
    pub fn submodule_parameters(&self, submodule: &str) -> Vec<(String, Tensor)> {
        let prefix = format!("{submodule}.");
        let mut vars: Vec<(String, Tensor)> = self
            .vs
            .variables()
            .into_iter()
            .filter(|(name, t)| name.starts_with(&prefix) && t.requires_grad())
            .collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        vars
    }

    /// Zeroes the range network's output layer (weights and bias).
    pub fn zero_depth_head(&mut self) {
        tch::no_grad(|| {
            let head = self.depth.head();
            let _ = head.ws.shallow_clone().zero_();
            if let Some(b) = &head.bs {
                let _ = b.shallow_clone().zero_();
            }
        });
    }

    /// Zeroes the linear heads of the three coefficient encoders.
    pub fn zero_coefficient_heads(&mut self) {
        tch::no_grad(|| {
            for enc in [&self.atten, &self.backscatter, &self.veiling] {
                let _ = enc.head.ws.shallow_clone().zero_();
                if let Some(b) = &enc.head.bs {
                    let _ = b.shallow_clone().zero_();
                }
            }
        });
    }
}

/// Three conv-BN-ReLU blocks (stride 2) and a one-channel head.
#[derive(Debug)]
struct PatchBranch {
    convs: Vec<nn::Conv2D>,
    norms: Vec<nn::BatchNorm>,
    head: nn::Conv2D,
}

impl PatchBranch {
    fn new(p: nn::Path, width: i64) -> Self {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut cin = 3;
        for i in 0..3 {
            let cout = width << i;
            convs.push(conv(&p / format!("conv{i}"), cin, cout, 4, 2, 1));
            norms.push(batch_norm(&p / format!("bn{i}"), cout));
            cin = cout;
        }
        Self {
            convs,
            norms,
            head: conv(&p / "head", cin, 1, 3, 1, 1),
        }
    }

    fn forward(&self, x: &Tensor, train: bool) -> Tensor {
        let mut h = centre(x);
        for (c, n) in self.convs.iter().zip(&self.norms) {
            h = h.apply(c).apply_t(n, train).relu();
        }
        h.apply(&self.head)
    }
}

/// Two-scale patch discriminator: full resolution and 2× average-pooled.
#[derive(Debug)]
pub struct Discriminator {
    vs: nn::VarStore,
    branches: Vec<PatchBranch>,
}

impl Discriminator {
    pub const SCALES: usize = 2;

    pub fn new(device: Device, cfg: &NetworkConfig) -> Self {
        let vs = nn::VarStore::new(device);
        let branches = (0..Self::SCALES)
            .map(|s| PatchBranch::new(vs.root() / format!("scale{s}"), cfg.disc_width))
            .collect();
        Self { vs, branches }
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    /// One unbounded score map per scale, `[N, 1, h_s, w_s]`.
    pub fn discriminate_t(&self, img: &Tensor, train: bool) -> Vec<Tensor> {
        let mut x = img.shallow_clone();
        let mut out = Vec::with_capacity(self.branches.len());
        for (s, branch) in self.branches.iter().enumerate() {
            if s > 0 {
                x = x.avg_pool2d([2, 2], [2, 2], [0, 0], false, true, None::<i64>);
            }
            out.push(branch.forward(&x, train));
        }
        out
    }

    pub fn discriminate(&self, img: &ImageRgb) -> Vec<Tensor> {
        tch::no_grad(|| {
            let t = tensor_io::images_to_tensor(std::slice::from_ref(img), Kind::Float, self.vs.device());
            self.discriminate_t(&t, false)
        })
    }

    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut vars: Vec<(String, Tensor)> = self
            .vs
            .variables()
            .into_iter()
            .filter(|(_, t)| t.requires_grad())
            .collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        vars
    }

    /// Sets every variable (weights, biases, norm affine terms and running
    /// statistics) to zero.
    pub fn zero_all(&mut self) {
        tch::no_grad(|| {
            for (_, mut t) in self.vs.variables() {
                let _ = t.zero_();
            }
        });
    }
}

/// All variables of a store as `(name, tensor)`, sorted by name.
pub fn sorted_variables(vs: &nn::VarStore) -> Vec<(String, Tensor)> {
    let mut vars: Vec<(String, Tensor)> = vs.variables().into_iter().collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    vars
}

/// Outputs of [`restore_image`], all at the input resolution.
#[derive(Clone, Debug)]
pub struct Restoration {
    pub restored: ImageRgb,
    pub depth: DepthMap,
    pub backscatter: ImageRgb,
    /// Decomposition at the network resolution.
    pub decomposition: Decomposition,
}

/// Restores an image of any size: it is resized to `size × size` for the
/// restoring generator, and the results are resized back.
pub fn restore_image(f: &Generator, img: &ImageRgb, size: usize) -> Result<Restoration> {
    let (h, w) = (img.height(), img.width());
    let small = img.resize(size, size);
    let (restored, d) = f.generate_terrestrial(&small)?;
    let depth = d.depth.resize(h, w);
    Ok(Restoration {
        restored: restored.clamped().resize(h, w),
        backscatter: physics::estimate_backscatter(&depth, &d.params),
        depth,
        decomposition: d,
    })
}
