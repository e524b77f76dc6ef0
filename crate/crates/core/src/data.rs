//! Unpaired two-domain datasets, batch sampling, and synthetic degraded data.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, ImageGray, ImageRgb};
use crate::physics::{self, ChannelTriple, DegradationParams, DepthMap, MAX_DEPTH};

/// Sorted list of PNG/JPEG files directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && imaging::is_image_path(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Two independent image collections: underwater (`y`) and terrestrial (`x`).
#[derive(Clone, Debug, PartialEq)]
pub struct UnpairedDataset {
    pub underwater_paths: Vec<PathBuf>,
    pub terrestrial_paths: Vec<PathBuf>,
    pub image_size: usize,
}

impl UnpairedDataset {
    pub fn new(
        underwater_paths: Vec<PathBuf>,
        terrestrial_paths: Vec<PathBuf>,
        image_size: usize,
    ) -> Result<Self> {
        if underwater_paths.is_empty() || terrestrial_paths.is_empty() {
            return Err(Error::Config(format!(
                "both domains need images (underwater {}, terrestrial {})",
                underwater_paths.len(),
                terrestrial_paths.len()
            )));
        }
        if image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        Ok(Self {
            underwater_paths,
            terrestrial_paths,
            image_size,
        })
    }

    /// One directory per domain.
    pub fn from_dirs(underwater_dir: &Path, terrestrial_dir: &Path, image_size: usize) -> Result<Self> {
        for dir in [underwater_dir, terrestrial_dir] {
            if !dir.is_dir() {
                return Err(Error::Config(format!("data directory not found: {}", dir.display())));
            }
        }
        Self::new(list_images(underwater_dir)?, list_images(terrestrial_dir)?, image_size)
    }

    /// Full batches per epoch; remainders are dropped.
    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.underwater_paths.len().min(self.terrestrial_paths.len()) / batch_size
    }
}

/// Shuffled visiting order of one domain for one epoch. Each domain gets its
/// own ChaCha stream, so the two orders are independent.
pub fn epoch_order(len: usize, seed: u64, epoch: u64, domain: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_mul(2).wrapping_add(domain));
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

const TERRESTRIAL: u64 = 0;
const UNDERWATER: u64 = 1;

/// Terrestrial batch `x`, underwater batch `y` and the file indices used.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Vec<ImageRgb>,
    pub y: Vec<ImageRgb>,
    pub x_indices: Vec<usize>,
    pub y_indices: Vec<usize>,
}

/// Draws batches for one epoch without replacement within each domain.
#[derive(Debug)]
pub struct EpochSampler<'a> {
    ds: &'a UnpairedDataset,
    batch_size: usize,
    x_order: Vec<usize>,
    y_order: Vec<usize>,
    x_pos: usize,
    y_pos: usize,
    emitted: usize,
}

impl<'a> EpochSampler<'a> {
    pub fn new(ds: &'a UnpairedDataset, batch_size: usize, seed: u64, epoch: u64) -> Self {
        assert!(batch_size >= 1, "batch size must be at least 1");
        Self {
            ds,
            batch_size,
            x_order: epoch_order(ds.terrestrial_paths.len(), seed, epoch, TERRESTRIAL),
            y_order: epoch_order(ds.underwater_paths.len(), seed, epoch, UNDERWATER),
            x_pos: 0,
            y_pos: 0,
            emitted: 0,
        }
    }

    /// Loads the next `n` readable images of one domain, skipping (with a
    /// warning) files that fail to decode. `None` once the domain runs dry.
    fn take(
        paths: &[PathBuf],
        order: &[usize],
        pos: &mut usize,
        n: usize,
        size: usize,
    ) -> Option<(Vec<ImageRgb>, Vec<usize>)> {
        let mut imgs = Vec::with_capacity(n);
        let mut idx = Vec::with_capacity(n);
        while imgs.len() < n {
            let &k = order.get(*pos)?;
            *pos += 1;
            match imaging::load_image(&paths[k], size) {
                Ok(img) => {
                    imgs.push(img);
                    idx.push(k);
                }
                Err(e) => warn!("skipping unreadable image: {e}"),
            }
        }
        Some((imgs, idx))
    }

    /// Next batch, or `None` at the end of the epoch.
    pub fn next_batch(&mut self) -> Option<Batch> {
        let size = self.ds.image_size;
        let (x, x_indices) = Self::take(
            &self.ds.terrestrial_paths,
            &self.x_order,
            &mut self.x_pos,
            self.batch_size,
            size,
        )?;
        let (y, y_indices) = Self::take(
            &self.ds.underwater_paths,
            &self.y_order,
            &mut self.y_pos,
            self.batch_size,
            size,
        )?;
        self.emitted += 1;
        Some(Batch {
            x,
            y,
            x_indices,
            y_indices,
        })
    }

    pub fn batches_emitted(&self) -> usize {
        self.emitted
    }
}

impl Iterator for EpochSampler<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        self.next_batch()
    }
}

/// Seeded sampler of degradation parameters.
#[derive(Clone, Debug)]
pub struct ParamSampler {
    rng: ChaCha8Rng,
    pub t_range: (f64, f64),
    pub b_inf_range: (f64, f64),
}

impl ParamSampler {
    /// Transmissions uniform in `[0.2, 0.99]`, veiling light in `[0.6, 1]`.
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            t_range: (0.2, 0.99),
            b_inf_range: (0.6, 1.0),
        }
    }

    fn triple(&mut self, (lo, hi): (f64, f64)) -> ChannelTriple {
        ChannelTriple::new(
            self.rng.gen_range(lo..=hi),
            self.rng.gen_range(lo..=hi),
            self.rng.gen_range(lo..=hi),
        )
    }

    pub fn sample(&mut self) -> DegradationParams {
        let t_d = self.triple(self.t_range);
        let t_b = self.triple(self.t_range);
        let b_inf = self.triple(self.b_inf_range);
        DegradationParams { t_d, t_b, b_inf }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..=hi)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// How a synthetic sample's range map is produced.
#[derive(Clone, Debug, PartialEq)]
pub enum DepthSource {
    Constant(f64),
    /// Vertical ramp, `far` on the top row, `near` on the bottom row.
    Gradient { near: f64, far: f64 },
    /// Grayscale image file, 0 → 0 m and 1 → 6 m, resized to the image.
    File(PathBuf),
    Map(DepthMap),
}

impl DepthSource {
    pub fn build(&self, height: usize, width: usize) -> Result<DepthMap> {
        match self {
            DepthSource::Constant(z) => DepthMap::constant(height, width, *z),
            DepthSource::Gradient { near, far } => DepthMap::vertical_ramp(height, width, *near, *far),
            DepthSource::File(path) => {
                let img = imaging::load_image_native(path)?;
                let gray: ImageGray = imaging::rgb_to_gray(&img);
                Ok(DepthMap::from_gray(&gray)?.resize(height, width))
            }
            DepthSource::Map(m) => {
                if m.height() == height && m.width() == width {
                    Ok(m.clone())
                } else {
                    Ok(m.resize(height, width))
                }
            }
        }
    }
}

impl fmt::Display for DepthSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthSource::Constant(z) => write!(f, "constant:{z}"),
            DepthSource::Gradient { near, far } => write!(f, "gradient:{near}:{far}"),
            DepthSource::File(p) => write!(f, "file:{}", p.display()),
            DepthSource::Map(m) => write!(f, "map:{}x{}", m.height(), m.width()),
        }
    }
}

/// Parses `constant:Z`, `gradient`, `gradient:NEAR:FAR` or `file:PATH`.
impl FromStr for DepthSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad depth descriptor {s:?}"));
        let num = |v: &str| -> Result<f64> {
            let z: f64 = v.parse().map_err(|_| bad())?;
            if (0.0..=MAX_DEPTH).contains(&z) {
                Ok(z)
            } else {
                Err(Error::Config(format!("depth {z} outside [0, {MAX_DEPTH}]")))
            }
        };
        let parts: Vec<&str> = s.splitn(2, ':').collect();
        match parts.as_slice() {
            ["constant", v] => Ok(DepthSource::Constant(num(v)?)),
            ["gradient"] => Ok(DepthSource::Gradient { near: 0.5, far: 5.0 }),
            ["gradient", rest] => {
                let (near, far) = rest.split_once(':').ok_or_else(bad)?;
                Ok(DepthSource::Gradient {
                    near: num(near)?,
                    far: num(far)?,
                })
            }
            ["file", p] => Ok(DepthSource::File(PathBuf::from(p))),
            _ => Err(bad()),
        }
    }
}

/// A clean image, its range map, the parameters and the degraded result.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub clean: ImageRgb,
    pub depth: DepthMap,
    pub params: DegradationParams,
    pub degraded: ImageRgb,
}

/// Degrades `clean` with a sampled parameter set. `degraded` is clipped to
/// `[0, 1]`; bright pixels under weak attenuation and strong backscatter can
/// reach the clip.
pub fn make_synthetic(
    clean: &ImageRgb,
    depth_source: &DepthSource,
    sampler: &mut ParamSampler,
) -> Result<SyntheticSample> {
    let depth = depth_source.build(clean.height(), clean.width())?;
    let params = sampler.sample();
    params.validate()?;
    let degraded = physics::degrade(clean, &depth, &params)?.clamped();
    Ok(SyntheticSample {
        clean: clean.clone(),
        depth,
        params,
        degraded,
    })
}

/// Per-sample record written next to synthetic images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticManifest {
    /// Source file name.
    pub image: String,
    /// Depth descriptor, see [`DepthSource`].
    pub depth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub params: DegradationParams,
}

impl SyntheticManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest always serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

// Procedural scenes for the shipped sample set and the smoke tests.

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Colourful textured scene: sky and ground gradients plus random
/// rectangles, discs and striped patches.
pub fn procedural_scene(size: usize, rng: &mut impl Rng) -> ImageRgb {
    let s = size as f64;
    let horizon = rng.gen_range(0.3..0.6) * s;
    let sky = hsv(rng.gen_range(0.5..0.65), rng.gen_range(0.2..0.5), rng.gen_range(0.8..1.0));
    let ground = hsv(rng.gen_range(0.05..0.35), rng.gen_range(0.4..0.8), rng.gen_range(0.4..0.7));
    let mut data = Array3::zeros((3, size, size));
    for y in 0..size {
        let t = y as f64 / s;
        for x in 0..size {
            let base = if (y as f64) < horizon {
                sky.map(|c| c * (0.85 + 0.15 * t))
            } else {
                ground.map(|c| c * (0.7 + 0.3 * t))
            };
            for c in 0..3 {
                data[[c, y, x]] = base[c];
            }
        }
    }
    let shapes = rng.gen_range(6..12);
    for _ in 0..shapes {
        let colour = hsv(rng.gen::<f64>(), rng.gen_range(0.5..1.0), rng.gen_range(0.3..1.0));
        let alt = hsv(rng.gen::<f64>(), rng.gen_range(0.3..1.0), rng.gen_range(0.1..0.9));
        let cx = rng.gen_range(0.0..s);
        let cy = rng.gen_range(0.2 * s..s);
        let half_w = rng.gen_range(0.05..0.2) * s;
        let half_h = rng.gen_range(0.05..0.2) * s;
        let kind = rng.gen_range(0..3);
        let period = rng.gen_range(3.0..8.0);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = match kind {
                    0 => dx.abs() <= half_w && dy.abs() <= half_h,
                    1 => (dx / half_w).powi(2) + (dy / half_h).powi(2) <= 1.0,
                    _ => dx.abs() <= half_w && dy.abs() <= half_h,
                };
                if !inside {
                    continue;
                }
                let px = if kind == 2 && ((x as f64 / period) as i64 + (y as f64 / period) as i64) % 2 == 0 {
                    alt
                } else {
                    colour
                };
                for c in 0..3 {
                    data[[c, y, x]] = px[c];
                }
            }
        }
    }
    for v in data.iter_mut() {
        *v = (*v + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
    }
    ImageRgb::from_array_clamped(data)
}

/// Water-like parameters: red attenuated strongest, blue-green veiling light.
pub fn water_params(rng: &mut impl Rng) -> DegradationParams {
    DegradationParams {
        t_d: ChannelTriple::new(
            rng.gen_range(0.25..0.5),
            rng.gen_range(0.65..0.85),
            rng.gen_range(0.7..0.9),
        ),
        t_b: ChannelTriple::new(
            rng.gen_range(0.4..0.6),
            rng.gen_range(0.55..0.75),
            rng.gen_range(0.6..0.8),
        ),
        b_inf: ChannelTriple::new(
            rng.gen_range(0.6..0.68),
            rng.gen_range(0.8..0.95),
            rng.gen_range(0.75..0.95),
        ),
    }
}

/// Procedural scene degraded by water-like parameters over a vertical range
/// ramp. Returns the clean scene too.
pub fn procedural_underwater(size: usize, rng: &mut impl Rng) -> Result<SyntheticSample> {
    let clean = procedural_scene(size, rng);
    let near = rng.gen_range(0.5..2.0);
    let far = rng.gen_range(3.5..MAX_DEPTH);
    let depth = DepthMap::vertical_ramp(size, size, near, far)?;
    let params = water_params(rng);
    let degraded = physics::degrade(&clean, &depth, &params)?.clamped();
    Ok(SyntheticSample {
        clean,
        depth,
        params,
        degraded,
    })
}

/// Writes `count` terrestrial and `count` underwater procedural images as
/// `terrestrial/NNN.png` and `underwater/NNN.png` under `root`. The two
/// domains use unrelated scenes.
pub fn write_procedural_set(root: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tdir = root.join("terrestrial");
    let udir = root.join("underwater");
    for d in [&tdir, &udir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for i in 0..count {
        let scene = procedural_scene(size, &mut rng);
        imaging::save_png(&scene, tdir.join(format!("{i:03}.png")))?;
        let uw = procedural_underwater(size, &mut rng)?;
        imaging::save_png(&uw.degraded, udir.join(format!("{i:03}.png")))?;
    }
    Ok(())
}
