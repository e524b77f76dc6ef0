//! Cyclic adversarial training of the two physics generators.
//!
//! Each iteration runs one generator update on `G ∪ F`, then one update per
//! discriminator using fakes drawn from a history pool. Learning rates are
//! per parameter group (range networks, coefficient encoders,
//! discriminators) and decay linearly to zero over the second part of the
//! schedule. All mutable state, including optimizer moments and the pool,
//! round-trips through a single checkpoint file.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{Device, Kind, Tensor};

use crate::data::{EpochSampler, UnpairedDataset};
use crate::dcp::{DEFAULT_MASK_CAP, DEFAULT_MASK_FRACTION};
use crate::error::{Error, Result};
use crate::imaging::{self, DEFAULT_IMAGE_SIZE, GRID_GAP};
use crate::losses::{self, LossReport, LossWeights, PerceptualEncoder};
use crate::networks::{
    sorted_variables, DecompositionTensor, Discriminator, Generator, GeneratorConfig,
    NetworkConfig, SUBMODULES,
};
use crate::physics::{MAX_DEPTH, VEILING_MAX, VEILING_MIN};
use crate::tensor_io;

/// Training configuration. The TOML form uses these field names verbatim;
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_depth: f64,
    pub lr_coeff: f64,
    pub lr_disc: f64,
    pub decay_start_epoch: u64,
    pub total_epochs: u64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    /// Feed the range map to the transmission encoders.
    pub hyp1: bool,
    /// Anchor the backscatter estimate on the darkest pixels.
    pub hyp2: bool,
    pub seed: u64,
    /// Fake-image history size per discriminator; 0 disables the pool.
    pub pool_size: usize,
    pub underwater_dir: Option<PathBuf>,
    pub terrestrial_dir: Option<PathBuf>,
    pub image_size: usize,
    pub network: NetworkConfig,
    /// VGG16 weights (safetensors, torchvision names). Absent: seeded random trunk.
    pub perceptual_weights: Option<PathBuf>,
    /// Perceptual loss on both reconstructions; otherwise only on `F(G(x))`.
    pub perceptual_both_directions: bool,
    /// Also apply the backscatter loss to generated underwater images.
    pub bhat_on_generated: bool,
    pub mask_fraction: f64,
    pub mask_cap: usize,
    /// Write a sample restoration grid every this many iterations (0: never).
    pub sample_every: u64,
    pub use_cuda: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_depth: 2e-4,
            lr_coeff: 1e-4,
            lr_disc: 1e-4,
            decay_start_epoch: 30,
            total_epochs: 60,
            batch_size: 16,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            weights: LossWeights::default(),
            hyp1: true,
            hyp2: true,
            seed: 0,
            pool_size: 50,
            underwater_dir: None,
            terrestrial_dir: None,
            image_size: DEFAULT_IMAGE_SIZE,
            network: NetworkConfig::default(),
            perceptual_weights: None,
            perceptual_both_directions: true,
            bhat_on_generated: true,
            mask_fraction: DEFAULT_MASK_FRACTION,
            mask_cap: DEFAULT_MASK_CAP,
            sample_every: 200,
            use_cuda: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        // a zero-epoch run only writes the initial checkpoint, so the decay
        // window is irrelevant there
        if self.total_epochs > 0 && self.decay_start_epoch >= self.total_epochs {
            problems.push(format!(
                "decay_start_epoch ({}) must be below total_epochs ({})",
                self.decay_start_epoch, self.total_epochs
            ));
        }
        for (name, v) in [
            ("lr_depth", self.lr_depth),
            ("lr_coeff", self.lr_coeff),
            ("lr_disc", self.lr_disc),
        ] {
            // zero is allowed: it freezes that group while losses are still reported
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                problems.push(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".into());
        }
        if self.image_size < 16 || self.image_size % 4 != 0 {
            problems.push(format!(
                "image_size must be a multiple of 4 and at least 16, got {}",
                self.image_size
            ));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction <= 1.0) {
            problems.push(format!("mask_fraction must be in (0, 1], got {}", self.mask_fraction));
        }
        if self.mask_cap == 0 {
            problems.push("mask_cap must be positive".into());
        }
        if let Err(e) = self.weights.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn device(&self) -> Device {
        if self.use_cuda {
            Device::cuda_if_available()
        } else {
            Device::Cpu
        }
    }

    fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            network: self.network.clone(),
            hyp1: self.hyp1,
        }
    }
}

/// Learning rate for `epoch`: constant before `decay_start_epoch`, then
/// linear down to zero at `total_epochs`.
pub fn lr_at(epoch: u64, cfg: &TrainConfig, base: f64) -> f64 {
    if epoch < cfg.decay_start_epoch {
        return base;
    }
    let span = cfg.total_epochs.saturating_sub(cfg.decay_start_epoch) as f64;
    if span <= 0.0 {
        return 0.0;
    }
    let left = cfg.total_epochs.saturating_sub(epoch) as f64;
    base * left / span
}

/// Adam with exportable state.
#[derive(Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    names: Vec<String>,
    vars: Vec<Tensor>,
    groups: Vec<usize>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    /// `params` holds `(name, variable, group index)`.
    pub fn new(params: Vec<(String, Tensor, usize)>, beta1: f64, beta2: f64) -> Self {
        let mut names = Vec::new();
        let mut vars = Vec::new();
        let mut groups = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, var, group) in params {
            m.push(var.zeros_like());
            v.push(var.zeros_like());
            names.push(name);
            vars.push(var);
            groups.push(group);
        }
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            names,
            vars,
            groups,
            m,
            v,
        }
    }

    pub fn vars(&self) -> &[Tensor] {
        &self.vars
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update; `lrs[g]` is the learning rate of group `g`.
    pub fn step(&mut self, grads: &[Tensor], lrs: &[f64]) {
        assert_eq!(grads.len(), self.vars.len(), "one gradient per variable");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        tch::no_grad(|| {
            for i in 0..self.vars.len() {
                let g = &grads[i];
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                let _ = m.g_mul_scalar_(self.beta1).g_add_(&(g * (1.0 - self.beta1)));
                let _ = v.g_mul_scalar_(self.beta2).g_add_(&(g.square() * (1.0 - self.beta2)));
                let denom = (&*v / bc2).sqrt() + self.eps;
                let update = (&*m / bc1) / denom * lrs[self.groups[i]];
                let _ = self.vars[i].shallow_clone().g_sub_(&update);
            }
        });
    }

    fn export(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, name) in self.names.iter().enumerate() {
            out.push((format!("{prefix}.m.{name}"), self.m[i].shallow_clone()));
            out.push((format!("{prefix}.v.{name}"), self.v[i].shallow_clone()));
        }
    }

    fn import(&mut self, prefix: &str, step: u64, entries: &HashMap<String, Tensor>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            for (which, dst) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let key = format!("{prefix}.{which}.{name}");
                let src = entries
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing entry {key}")))?;
                tch::no_grad(|| dst.copy_(src));
            }
        }
        self.step = step;
        Ok(())
    }
}

/// History of generated images shown to a discriminator.
#[derive(Debug)]
pub struct ImagePool {
    capacity: usize,
    images: Vec<Tensor>,
    seed: u64,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PoolMeta {
    seed: u64,
    /// ChaCha word position, decimal (it is a u128).
    word_pos: String,
    len: usize,
}

impl ImagePool {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            images: Vec::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Returns a batch of the same size: while filling, the new images
    /// themselves; afterwards each slot is, with probability one half, a
    /// stored image (replaced by the new one) or the new image.
    pub fn query(&mut self, batch: &Tensor) -> Tensor {
        let batch = batch.detach();
        if self.capacity == 0 {
            return batch;
        }
        let n = batch.size()[0];
        let mut out = Vec::with_capacity(n as usize);
        for i in 0..n {
            let img = batch.get(i).copy();
            if self.images.len() < self.capacity {
                self.images.push(img.shallow_clone());
                out.push(img);
            } else if self.rng.gen::<f64>() < 0.5 {
                let k = self.rng.gen_range(0..self.capacity);
                let old = std::mem::replace(&mut self.images[k], img);
                out.push(old);
            } else {
                out.push(img);
            }
        }
        Tensor::stack(&out, 0)
    }

    fn meta(&self) -> PoolMeta {
        PoolMeta {
            seed: self.seed,
            word_pos: self.rng.get_word_pos().to_string(),
            len: self.images.len(),
        }
    }

    fn restore(&mut self, meta: &PoolMeta, stacked: Option<&Tensor>) -> Result<()> {
        let pos: u128 = meta
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad pool rng position".into()))?;
        self.seed = meta.seed;
        self.rng = ChaCha8Rng::seed_from_u64(meta.seed);
        self.rng.set_word_pos(pos);
        self.images = match stacked {
            Some(t) if meta.len > 0 => (0..meta.len as i64).map(|i| t.get(i).copy()).collect(),
            None if meta.len > 0 => return Err(Error::Checkpoint("missing pool images".into())),
            _ => Vec::new(),
        };
        Ok(())
    }
}

/// Gradient L2 norms per generator (`G`, `F`) and sub-module.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradNorms {
    pub norms: Vec<(String, f64)>,
}

impl GradNorms {
    pub fn all_nonzero(&self) -> bool {
        self.norms.iter().all(|(_, n)| *n > 0.0 && n.is_finite())
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.norms.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

/// Extremes of one batch of decompositions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeStats {
    pub depth_min: f64,
    pub depth_max: f64,
    pub depth_mean: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub b_inf_min: f64,
    pub b_inf_max: f64,
}

impl RangeStats {
    pub fn of(d: &DecompositionTensor) -> Self {
        let t = Tensor::cat(&[&d.params.t_d, &d.params.t_b], 1).detach();
        let z = d.depth.detach();
        let b = d.params.b_inf.detach();
        Self {
            depth_min: z.min().double_value(&[]),
            depth_max: z.max().double_value(&[]),
            depth_mean: z.mean(Kind::Double).double_value(&[]),
            t_min: t.min().double_value(&[]),
            t_max: t.max().double_value(&[]),
            b_inf_min: b.min().double_value(&[]),
            b_inf_max: b.max().double_value(&[]),
        }
    }

    /// Range invariants: `z ∈ [0, 6]`, `t ∈ (0, 1)`, `B∞ ∈ [0.6, 1]`.
    pub fn in_range(&self) -> bool {
        self.depth_min >= 0.0
            && self.depth_max <= MAX_DEPTH
            && self.t_min > 0.0
            && self.t_max < 1.0
            && self.b_inf_min >= VEILING_MIN
            && self.b_inf_max <= VEILING_MAX
    }
}

/// Everything one training step reports.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub report: LossReport,
    pub grad_norms: GradNorms,
    /// Decompositions of the terrestrial batch by `G`.
    pub stats_x: RangeStats,
    /// Decompositions of the underwater batch by `F`.
    pub stats_y: RangeStats,
}

/// Parameter groups of the generator optimizer.
const GROUP_DEPTH: usize = 0;
const GROUP_COEFF: usize = 1;

/// Complete mutable training state.
#[derive(Debug)]
pub struct TrainState {
    pub cfg: TrainConfig,
    pub epoch: u64,
    pub iteration: u64,
    /// Terrestrial → underwater.
    pub g: Generator,
    /// Underwater → terrestrial.
    pub f: Generator,
    pub d_underwater: Discriminator,
    pub d_terrestrial: Discriminator,
    adam_gen: Adam,
    adam_d_underwater: Adam,
    adam_d_terrestrial: Adam,
    pool_underwater: ImagePool,
    pool_terrestrial: ImagePool,
    encoder: PerceptualEncoder,
    device: Device,
}

const CHECKPOINT_FORMAT: &str = "uwrestore-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;
const META_KEY: &str = "meta.json";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    version: u32,
    epoch: u64,
    iteration: u64,
    adam_steps: [u64; 3],
    pool_underwater: PoolMeta,
    pool_terrestrial: PoolMeta,
    config: TrainConfig,
}

fn generator_params(g: &Generator, prefix: &str) -> Vec<(String, Tensor, usize)> {
    let mut out = Vec::new();
    for sub in SUBMODULES {
        let group = if sub == "depth" { GROUP_DEPTH } else { GROUP_COEFF };
        for (name, t) in g.submodule_parameters(sub) {
            out.push((format!("{prefix}.{name}"), t, group));
        }
    }
    out
}

fn disc_params(d: &Discriminator, prefix: &str) -> Vec<(String, Tensor, usize)> {
    d.parameters()
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t, 0))
        .collect()
}

impl TrainState {
    /// Fresh state. The perceptual encoder is built first (its random
    /// fallback uses its own seed), then all networks from `cfg.seed`.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let device = cfg.device();
        let encoder = PerceptualEncoder::new(
            cfg.perceptual_weights.as_deref(),
            cfg.seed.wrapping_add(0x5eed),
            device,
        )?;
        tch::manual_seed(cfg.seed as i64);
        let gcfg = cfg.generator_config();
        let g = Generator::new(device, &gcfg);
        let f = Generator::new(device, &gcfg);
        let d_underwater = Discriminator::new(device, &cfg.network);
        let d_terrestrial = Discriminator::new(device, &cfg.network);
        let mut gen_params = generator_params(&g, "G");
        gen_params.extend(generator_params(&f, "F"));
        let adam_gen = Adam::new(gen_params, cfg.adam_beta1, cfg.adam_beta2);
        let adam_d_underwater = Adam::new(disc_params(&d_underwater, "D_uw"), cfg.adam_beta1, cfg.adam_beta2);
        let adam_d_terrestrial =
            Adam::new(disc_params(&d_terrestrial, "D_terr"), cfg.adam_beta1, cfg.adam_beta2);
        let pool_underwater = ImagePool::new(cfg.pool_size, cfg.seed.wrapping_mul(2).wrapping_add(1));
        let pool_terrestrial = ImagePool::new(cfg.pool_size, cfg.seed.wrapping_mul(2).wrapping_add(2));
        Ok(Self {
            cfg,
            epoch: 0,
            iteration: 0,
            g,
            f,
            d_underwater,
            d_terrestrial,
            adam_gen,
            adam_d_underwater,
            adam_d_terrestrial,
            pool_underwater,
            pool_terrestrial,
            encoder,
            device,
        })
    }

    pub fn device(&self) -> Device {
        self.device
    }

    pub fn encoder(&self) -> &PerceptualEncoder {
        &self.encoder
    }

    /// Learning rates `(depth, coeff, disc)` for the current epoch.
    pub fn learning_rates(&self) -> (f64, f64, f64) {
        (
            lr_at(self.epoch, &self.cfg, self.cfg.lr_depth),
            lr_at(self.epoch, &self.cfg, self.cfg.lr_coeff),
            lr_at(self.epoch, &self.cfg, self.cfg.lr_disc),
        )
    }

    fn masks(&self, images: &Tensor) -> Tensor {
        tensor_io::darkest_masks(images, self.cfg.mask_fraction, self.cfg.mask_cap)
    }

    /// One generator update followed by one update of each discriminator.
    /// `x` is terrestrial, `y` underwater, both `[N, 3, H, W]` in `[0, 1]`.
    pub fn training_step(&mut self, x: &Tensor, y: &Tensor) -> Result<StepOutcome> {
        self.g.check_input(x)?;
        self.f.check_input(y)?;
        let x = x.to_kind(Kind::Float).to_device(self.device);
        let y = y.to_kind(Kind::Float).to_device(self.device);
        let cfg = self.cfg.clone();
        let (lr_depth, lr_coeff, lr_disc) = self.learning_rates();

        // forward through both cycles; clamped fakes feed the other
        // generator and the discriminators, raw values feed the losses
        let (fake_y_raw, d_x) = self.g.generate_underwater_t(&x, true);
        let (fake_x_raw, d_y) = self.f.generate_terrestrial_t(&y, true);
        let fake_y = fake_y_raw.clamp(0.0, 1.0);
        let fake_x = fake_x_raw.clamp(0.0, 1.0);
        let (x_rec, _) = self.f.generate_terrestrial_t(&fake_y, true);
        let (y_rec, _) = self.g.generate_underwater_t(&fake_x, true);

        let l_g = losses::adversarial_generator(&self.d_underwater.discriminate_t(&fake_y, true))
            + losses::adversarial_generator(&self.d_terrestrial.discriminate_t(&fake_x, true));
        let l_cycle = losses::cycle_consistency(&x, &x_rec, &y, &y_rec);
        let mut l_perc = losses::perceptual(&x, &x_rec, &self.encoder);
        if cfg.perceptual_both_directions {
            l_perc = l_perc + losses::perceptual(&y, &y_rec, &self.encoder);
        }
        let l_bhat = if cfg.hyp2 {
            let mut l = losses::backscatter_fidelity(&y, &d_y.depth, &d_y.params, &self.masks(&y))?;
            if cfg.bhat_on_generated {
                let mask = self.masks(&fake_y);
                l = l + losses::backscatter_fidelity(&fake_y_raw, &d_x.depth, &d_x.params, &mask)?;
            }
            l
        } else {
            Tensor::zeros([], (Kind::Float, self.device))
        };
        let total = losses::total_t(&l_g, &l_cycle, &l_perc, &l_bhat, &cfg.weights);

        let stats_x = RangeStats::of(&d_x);
        let stats_y = RangeStats::of(&d_y);
        let scalar = |t: &Tensor| t.double_value(&[]);
        let mut report = LossReport {
            l_g: scalar(&l_g),
            l_d: 0.0,
            l_cycle: scalar(&l_cycle),
            l_perc: scalar(&l_perc),
            l_bhat: scalar(&l_bhat),
            total: scalar(&total),
        };
        if !report.is_finite() {
            return Err(Error::NonFinite {
                iteration: self.iteration,
                diagnostics: format!("losses {report:?}; G on x {stats_x:?}; F on y {stats_y:?}"),
            });
        }

        let grads = Tensor::run_backward(&[&total], self.adam_gen.vars(), false, false);
        let grad_norms = self.grad_norms(&grads);
        self.adam_gen.step(&grads, &[lr_depth, lr_coeff]);

        // discriminators on pooled, detached fakes
        let pooled_y = self.pool_underwater.query(&fake_y);
        let pooled_x = self.pool_terrestrial.query(&fake_x);
        let l_d_uw = losses::adversarial_discriminator(
            &self.d_underwater.discriminate_t(&y, true),
            &self.d_underwater.discriminate_t(&pooled_y, true),
        );
        let l_d_terr = losses::adversarial_discriminator(
            &self.d_terrestrial.discriminate_t(&x, true),
            &self.d_terrestrial.discriminate_t(&pooled_x, true),
        );
        report.l_d = scalar(&l_d_uw) + scalar(&l_d_terr);
        if !report.l_d.is_finite() {
            return Err(Error::NonFinite {
                iteration: self.iteration,
                diagnostics: format!("discriminator loss {}", report.l_d),
            });
        }
        let g_uw = Tensor::run_backward(&[&l_d_uw], self.adam_d_underwater.vars(), false, false);
        self.adam_d_underwater.step(&g_uw, &[lr_disc]);
        let g_terr = Tensor::run_backward(&[&l_d_terr], self.adam_d_terrestrial.vars(), false, false);
        self.adam_d_terrestrial.step(&g_terr, &[lr_disc]);

        self.iteration += 1;
        Ok(StepOutcome {
            report,
            grad_norms,
            stats_x,
            stats_y,
        })
    }

    fn grad_norms(&self, grads: &[Tensor]) -> GradNorms {
        let mut sums: Vec<(String, f64)> = Vec::new();
        for net in ["G", "F"] {
            for sub in SUBMODULES {
                sums.push((format!("{net}.{sub}"), 0.0));
            }
        }
        for (name, g) in self.adam_gen.names().iter().zip(grads) {
            let sq = g.square().sum(Kind::Double).double_value(&[]);
            if let Some(slot) = sums.iter_mut().find(|(k, _)| name.starts_with(&format!("{k}."))) {
                slot.1 += sq;
            }
        }
        GradNorms {
            norms: sums.into_iter().map(|(k, s)| (k, s.sqrt())).collect(),
        }
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (prefix, vs) in [
            ("G", self.g.var_store()),
            ("F", self.f.var_store()),
            ("D_uw", self.d_underwater.var_store()),
            ("D_terr", self.d_terrestrial.var_store()),
        ] {
            for (name, t) in sorted_variables(vs) {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        self.adam_gen.export("adam.gen", &mut out);
        self.adam_d_underwater.export("adam.D_uw", &mut out);
        self.adam_d_terrestrial.export("adam.D_terr", &mut out);
        for (key, pool) in [("pool.uw", &self.pool_underwater), ("pool.terr", &self.pool_terrestrial)] {
            if !pool.is_empty() {
                out.push((key.to_string(), Tensor::stack(&pool.images, 0)));
            }
        }
        out
    }

    /// Writes the checkpoint atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            epoch: self.epoch,
            iteration: self.iteration,
            adam_steps: [
                self.adam_gen.step_count(),
                self.adam_d_underwater.step_count(),
                self.adam_d_terrestrial.step_count(),
            ],
            pool_underwater: self.pool_underwater.meta(),
            pool_terrestrial: self.pool_terrestrial.meta(),
            config: self.cfg.clone(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut entries: Vec<(String, Tensor)> = self
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.detach().to_device(Device::Cpu).contiguous()))
            .collect();
        entries.push((META_KEY.to_string(), Tensor::from_slice(&json)));
        let tmp = path.with_extension("tmp");
        Tensor::write_safetensors(&entries, &tmp)?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Restores a checkpoint. With `cfg` given it replaces the stored
    /// snapshot, but the network layout must match.
    pub fn load(path: &Path, cfg: Option<TrainConfig>) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Checkpoint(format!("not found: {}", path.display())));
        }
        let entries: HashMap<String, Tensor> = Tensor::read_safetensors(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?
            .into_iter()
            .collect();
        let meta_t = entries
            .get(META_KEY)
            .ok_or_else(|| Error::Checkpoint("missing metadata".into()))?;
        let bytes: Vec<u8> = Vec::<u8>::try_from(meta_t.to_kind(Kind::Uint8))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if meta.format != CHECKPOINT_FORMAT || meta.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                meta.format, meta.version
            )));
        }
        let cfg = match cfg {
            Some(c) => {
                if c.network != meta.config.network || c.hyp1 != meta.config.hyp1 {
                    return Err(Error::Config(
                        "config network layout differs from the checkpoint".into(),
                    ));
                }
                c
            }
            None => meta.config.clone(),
        };
        let mut state = Self::new(cfg)?;
        for (prefix, vs) in [
            ("G", state.g.var_store()),
            ("F", state.f.var_store()),
            ("D_uw", state.d_underwater.var_store()),
            ("D_terr", state.d_terrestrial.var_store()),
        ] {
            for (name, mut var) in sorted_variables(vs) {
                let key = format!("{prefix}.{name}");
                let src = entries
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing entry {key}")))?;
                if src.size() != var.size() {
                    return Err(Error::Checkpoint(format!("shape mismatch for {key}")));
                }
                tch::no_grad(|| var.copy_(src));
            }
        }
        state.adam_gen.import("adam.gen", meta.adam_steps[0], &entries)?;
        state.adam_d_underwater.import("adam.D_uw", meta.adam_steps[1], &entries)?;
        state.adam_d_terrestrial.import("adam.D_terr", meta.adam_steps[2], &entries)?;
        let dev = state.device;
        state
            .pool_underwater
            .restore(&meta.pool_underwater, entries.get("pool.uw").map(|t| t.to_device(dev)).as_ref())?;
        state
            .pool_terrestrial
            .restore(&meta.pool_terrestrial, entries.get("pool.terr").map(|t| t.to_device(dev)).as_ref())?;
        state.epoch = meta.epoch;
        state.iteration = meta.iteration;
        Ok(state)
    }
}

/// Loads only the generators of a checkpoint for inference.
pub fn load_generators(path: &Path) -> Result<(Generator, Generator, TrainConfig)> {
    let state = TrainState::load(path, None)?;
    Ok((state.g, state.f, state.cfg))
}

pub fn checkpoint_path(out_dir: &Path, epoch: u64) -> PathBuf {
    out_dir.join(format!("epoch_{epoch:03}.safetensors"))
}

const LOG_HEADER: [&str; 11] = [
    "epoch", "iteration", "l_g", "l_d", "l_cycle", "l_perc", "l_bhat", "total", "lr_depth",
    "lr_coeff", "lr_disc",
];

fn open_log(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let fresh = !path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(LOG_HEADER)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

fn write_sample_grid(state: &TrainState, y: &Tensor, path: &Path) -> Result<()> {
    let n = y.size()[0].min(4);
    let y = y.narrow(0, 0, n);
    let restored = tch::no_grad(|| state.f.generate_terrestrial_t(&y, false).0);
    let rows = vec![tensor_io::tensor_to_images(&y), tensor_io::tensor_to_images(&restored)];
    let cell = state.cfg.image_size;
    imaging::save_png(&imaging::compose_grid(&rows, cell, GRID_GAP)?, path)
}

/// Trains for the configured number of epochs, starting from `state`.
/// Writes `epoch_NNN.safetensors` after every epoch (plus the initial state
/// for a fresh run), `train_log.csv`, and sample grids under `samples/`.
/// Returns the path of the last checkpoint written.
pub fn run_from(mut state: TrainState, ds: &UnpairedDataset, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut last = checkpoint_path(out_dir, state.epoch);
    if state.iteration == 0 && state.epoch == 0 {
        state.save(&last)?;
    }
    let log_path = out_dir.join("train_log.csv");
    let mut log = open_log(&log_path)?;
    let samples = out_dir.join("samples");
    let total_epochs = state.cfg.total_epochs;
    while state.epoch < total_epochs {
        let started = Instant::now();
        let epoch = state.epoch;
        let batch_size = state.cfg.batch_size;
        let seed = state.cfg.seed;
        let mut sampler = EpochSampler::new(ds, batch_size, seed, epoch);
        let mut steps = 0u64;
        while let Some(batch) = sampler.next_batch() {
            let x = tensor_io::images_to_tensor(&batch.x, Kind::Float, state.device);
            let y = tensor_io::images_to_tensor(&batch.y, Kind::Float, state.device);
            let (lr_d, lr_c, lr_disc) = state.learning_rates();
            let out = state.training_step(&x, &y)?;
            if !out.stats_x.in_range() || !out.stats_y.in_range() {
                warn!("decomposition left its range at iteration {}", state.iteration);
            }
            let r = out.report;
            log.write_record(&[
                epoch.to_string(),
                state.iteration.to_string(),
                r.l_g.to_string(),
                r.l_d.to_string(),
                r.l_cycle.to_string(),
                r.l_perc.to_string(),
                r.l_bhat.to_string(),
                r.total.to_string(),
                lr_d.to_string(),
                lr_c.to_string(),
                lr_disc.to_string(),
            ])?;
            let every = state.cfg.sample_every;
            if every > 0 && state.iteration % every == 0 {
                std::fs::create_dir_all(&samples).map_err(|e| Error::io(&samples, e))?;
                write_sample_grid(&state, &y, &samples.join(format!("iter_{:06}.png", state.iteration)))?;
            }
            steps += 1;
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        if steps == 0 {
            warn!("epoch {epoch} produced no full batch");
        }
        state.epoch += 1;
        last = checkpoint_path(out_dir, state.epoch);
        state.save(&last)?;
        info!(
            "epoch {} done: {steps} steps in {:.1}s",
            epoch,
            started.elapsed().as_secs_f64()
        );
    }
    Ok(last)
}

/// Fresh run.
pub fn run(cfg: TrainConfig, ds: &UnpairedDataset, out_dir: &Path) -> Result<PathBuf> {
    run_from(TrainState::new(cfg)?, ds, out_dir)
}
