//! Underwater image formation model.
//!
//! Per colour channel `c` and pixel at range `z`:
//!
//! ```text
//! I_c = J_c · t_D,c^z + B∞_c · (1 − t_B,c^z)          (degradation)
//! J_c = (I_c − B∞_c · (1 − t_B,c^z)) / t_D,c^z        (restoration)
//! ```
//!
//! `t_D = e^{−β_D}` and `t_B = e^{−β_B}` are per-unit-range transmissions for
//! the direct signal and the backscatter, `B∞` is the veiling light. The
//! coefficients are per image and per channel; `z` is per pixel.
//!
//! Two code paths share the same maths: plain `f64` arrays for evaluation,
//! oracles and the CLI, and `tch` tensors (see [`tensor`]) for training.

use std::path::Path;

use ndarray::{Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{clamp_unit, ImageGray, ImageRgb};

/// Upper end of the modelled camera-to-scene range, in metres.
pub const MAX_DEPTH: f64 = 6.0;
/// Veiling light is limited to this interval.
pub const VEILING_MIN: f64 = 0.6;
pub const VEILING_MAX: f64 = 1.0;
/// Floor applied to `t_D^z` before dividing in [`restore`]. It sits below
/// `0.2^6`, so inversion stays exact for transmissions down to 0.2 over the
/// full depth range.
pub const TRANSMISSION_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelTriple {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl ChannelTriple {
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Self { r, g, b }
    }

    pub const fn splat(v: f64) -> Self {
        Self { r: v, g: v, b: v }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn get(&self, channel: usize) -> f64 {
        self.to_array()[channel]
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.r), f(self.g), f(self.b))
    }
}

/// The "style" of a water body: per-channel transmissions and veiling light.
///
/// Serializes as the flat nine-scalar document (`t_d_r` ... `b_inf_b`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "ParamsDocument", into = "ParamsDocument")]
pub struct DegradationParams {
    pub t_d: ChannelTriple,
    pub t_b: ChannelTriple,
    pub b_inf: ChannelTriple,
}

/// Flat nine-scalar form used for parameter files and manifests.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDocument {
    t_d_r: f64,
    t_d_g: f64,
    t_d_b: f64,
    t_b_r: f64,
    t_b_g: f64,
    t_b_b: f64,
    b_inf_r: f64,
    b_inf_g: f64,
    b_inf_b: f64,
}

impl From<ParamsDocument> for DegradationParams {
    fn from(d: ParamsDocument) -> Self {
        Self {
            t_d: ChannelTriple::new(d.t_d_r, d.t_d_g, d.t_d_b),
            t_b: ChannelTriple::new(d.t_b_r, d.t_b_g, d.t_b_b),
            b_inf: ChannelTriple::new(d.b_inf_r, d.b_inf_g, d.b_inf_b),
        }
    }
}

impl From<DegradationParams> for ParamsDocument {
    fn from(p: DegradationParams) -> Self {
        Self {
            t_d_r: p.t_d.r,
            t_d_g: p.t_d.g,
            t_d_b: p.t_d.b,
            t_b_r: p.t_b.r,
            t_b_g: p.t_b.g,
            t_b_b: p.t_b.b,
            b_inf_r: p.b_inf.r,
            b_inf_g: p.b_inf.g,
            b_inf_b: p.b_inf.b,
        }
    }
}

impl DegradationParams {
    /// Builds and validates a parameter set.
    pub fn new(t_d: ChannelTriple, t_b: ChannelTriple, b_inf: ChannelTriple) -> Result<Self> {
        let p = Self { t_d, t_b, b_inf };
        p.validate()?;
        Ok(p)
    }

    /// Lists every invariant violation; empty when the set is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let names = ["r", "g", "b"];
        for c in 0..3 {
            let (td, tb, bi) = (self.t_d.get(c), self.t_b.get(c), self.b_inf.get(c));
            if !(td > 0.0 && td < 1.0) {
                out.push(format!("t_d_{} = {td} not in (0, 1)", names[c]));
            }
            if !(tb > 0.0 && tb < 1.0) {
                out.push(format!("t_b_{} = {tb} not in (0, 1)", names[c]));
            }
            if !(VEILING_MIN..=VEILING_MAX).contains(&bi) {
                out.push(format!("b_inf_{} = {bi} not in [0.6, 1]", names[c]));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v))
        }
    }

    /// Attenuation coefficients `β_D = −ln t_D`.
    pub fn beta_d(&self) -> ChannelTriple {
        self.t_d.map(|t| -t.ln())
    }

    /// Backscatter coefficients `β_B = −ln t_B`.
    pub fn beta_b(&self) -> ChannelTriple {
        self.t_b.map(|t| -t.ln())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat struct always serialises")
    }

    /// Parses the nine-scalar document. Range checks are left to [`validate`](Self::validate).
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Per-pixel camera-to-scene range in metres, `H × W`, values in `[0, 6]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    z: Array2<f64>,
}

impl DepthMap {
    pub fn new(z: Array2<f64>) -> Result<Self> {
        if let Some(v) = z.iter().find(|v| !(0.0..=MAX_DEPTH).contains(*v)) {
            return Err(Error::Contract(format!("depth {v} outside [0, {MAX_DEPTH}]")));
        }
        Ok(Self { z })
    }

    pub fn constant(height: usize, width: usize, z: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), z))
    }

    /// Vertical ramp from `far` on the top row to `near` on the bottom row,
    /// the usual layout of a forward-looking seabed shot.
    pub fn vertical_ramp(height: usize, width: usize, near: f64, far: f64) -> Result<Self> {
        let denom = (height.max(2) - 1) as f64;
        let z = Array2::from_shape_fn((height, width), |(y, _)| {
            far + (near - far) * y as f64 / denom
        });
        Self::new(z)
    }

    /// Reads a grayscale depth image where 0 maps to 0 m and 1 to 6 m.
    pub fn from_gray(gray: &ImageGray) -> Result<Self> {
        Self::new(gray.data().mapv(|v| v * MAX_DEPTH))
    }

    pub fn to_gray(&self) -> ImageGray {
        ImageGray::new(self.z.mapv(|v| v / MAX_DEPTH))
    }

    pub fn height(&self) -> usize {
        self.z.nrows()
    }

    pub fn width(&self) -> usize {
        self.z.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn resize(&self, height: usize, width: usize) -> Self {
        let z = crate::imaging::resize_plane(&self.z, height, width);
        Self {
            z: z.mapv(|v| v.clamp(0.0, MAX_DEPTH)),
        }
    }
}

/// Result of applying the formation model: the raw values (which may leave
/// `[0, 1]`, especially after restoration) plus a clamped view.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelImage {
    pub raw: Array3<f64>,
}

impl ModelImage {
    /// Clamped copy suitable for display, saving, metrics and discriminators.
    pub fn clamped(&self) -> ImageRgb {
        ImageRgb::from_array_clamped(self.raw.clone())
    }
}

/// Forward model for one scalar.
#[inline]
pub fn degrade_value(j: f64, z: f64, t_d: f64, t_b: f64, b_inf: f64) -> f64 {
    j * t_d.powf(z) + b_inf * (1.0 - t_b.powf(z))
}

/// Inverse model for one scalar, with the transmission floor.
#[inline]
pub fn restore_value(i: f64, z: f64, t_d: f64, t_b: f64, b_inf: f64) -> f64 {
    (i - b_inf * (1.0 - t_b.powf(z))) / t_d.powf(z).max(TRANSMISSION_FLOOR)
}

/// Partial derivatives of a per-pixel model output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelGradient {
    pub image: f64,
    pub depth: f64,
    pub t_d: f64,
    pub t_b: f64,
    pub b_inf: f64,
}

impl PixelGradient {
    pub fn to_array(self) -> [f64; 5] {
        [self.image, self.depth, self.t_d, self.t_b, self.b_inf]
    }
}

/// Analytic gradient of [`degrade_value`].
pub fn degrade_gradient(j: f64, z: f64, t_d: f64, t_b: f64, b_inf: f64) -> PixelGradient {
    let ad = t_d.powf(z);
    let ab = t_b.powf(z);
    PixelGradient {
        image: ad,
        depth: j * ad * t_d.ln() - b_inf * ab * t_b.ln(),
        t_d: j * z * t_d.powf(z - 1.0),
        t_b: -b_inf * z * t_b.powf(z - 1.0),
        b_inf: 1.0 - ab,
    }
}

/// Analytic gradient of [`restore_value`]. Where the floor is active the
/// denominator is constant, so `depth` and `t_d` only see the numerator.
pub fn restore_gradient(i: f64, z: f64, t_d: f64, t_b: f64, b_inf: f64) -> PixelGradient {
    let ad = t_d.powf(z);
    let ab = t_b.powf(z);
    let floored = ad < TRANSMISSION_FLOOR;
    let a = ad.max(TRANSMISSION_FLOOR);
    let n = i - b_inf * (1.0 - ab);
    let dn_dz = b_inf * ab * t_b.ln();
    let (depth, dtd) = if floored {
        (dn_dz / a, 0.0)
    } else {
        (dn_dz / a - n * t_d.ln() / a, -n * z * t_d.powf(z - 1.0) / (a * a))
    };
    PixelGradient {
        image: 1.0 / a,
        depth,
        t_d: dtd,
        t_b: b_inf * z * t_b.powf(z - 1.0) / a,
        b_inf: -(1.0 - ab) / a,
    }
}

fn check_shapes(img: &ImageRgb, z: &DepthMap) -> Result<()> {
    if img.height() != z.height() || img.width() != z.width() {
        return Err(Error::Contract(format!(
            "image is {}x{} but depth map is {}x{}",
            img.height(),
            img.width(),
            z.height(),
            z.width()
        )));
    }
    Ok(())
}

fn per_channel(
    img: &ImageRgb,
    z: &DepthMap,
    p: &DegradationParams,
    f: fn(f64, f64, f64, f64, f64) -> f64,
) -> Result<ModelImage> {
    check_shapes(img, z)?;
    let mut raw = Array3::zeros((3, img.height(), img.width()));
    for c in 0..3 {
        let (td, tb, bi) = (p.t_d.get(c), p.t_b.get(c), p.b_inf.get(c));
        Zip::from(raw.index_axis_mut(Axis(0), c))
            .and(img.data().index_axis(Axis(0), c))
            .and(z.data())
            .for_each(|o, &v, &depth| *o = f(v, depth, td, tb, bi));
    }
    Ok(ModelImage { raw })
}

/// Synthesises an underwater image from a clean one.
pub fn degrade(j: &ImageRgb, z: &DepthMap, p: &DegradationParams) -> Result<ModelImage> {
    per_channel(j, z, p, degrade_value)
}

/// Removes backscatter and compensates attenuation.
pub fn restore(i: &ImageRgb, z: &DepthMap, p: &DegradationParams) -> Result<ModelImage> {
    per_channel(i, z, p, restore_value)
}

/// Backscatter estimate `B∞ · (1 − t_B^z)`, nondecreasing in `z`.
pub fn estimate_backscatter(z: &DepthMap, p: &DegradationParams) -> ImageRgb {
    let mut raw = Array3::zeros((3, z.height(), z.width()));
    for c in 0..3 {
        let (tb, bi) = (p.t_b.get(c), p.b_inf.get(c));
        Zip::from(raw.index_axis_mut(Axis(0), c))
            .and(z.data())
            .for_each(|o, &depth| *o = clamp_unit(bi * (1.0 - tb.powf(depth))));
    }
    ImageRgb::from_array_clamped(raw)
}

/// Outcome of [`fit_constant_params`].
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub params: DegradationParams,
    /// Mean squared residual over all pixels and channels.
    pub residual: f64,
    /// Depth is identically zero, so the transmissions are unidentifiable.
    pub flat_residual: bool,
    /// Some transmission ended on the closed boundary of its open interval.
    pub boundary: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub tolerance: f64,
    pub grid_steps: usize,
    pub grid_pixels: usize,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            grid_steps: 40,
            grid_pixels: 1024,
            max_iterations: 500,
        }
    }
}

const FIT_T_MIN: f64 = 1e-4;
const FIT_T_MAX: f64 = 1.0;
const BOUNDARY_EPS: f64 = 1e-6;

/// Recovers image-constant parameters from a (degraded, clean, depth) triple
/// by grid search followed by Levenberg-Marquardt refinement per channel.
/// Degraded values at 1.0 are treated as clipped and left out.
pub fn fit_constant_params(i: &ImageRgb, j: &ImageRgb, z: &DepthMap) -> Result<FitReport> {
    fit_constant_params_with(i, j, z, FitOptions::default())
}

pub fn fit_constant_params_with(
    i: &ImageRgb,
    j: &ImageRgb,
    z: &DepthMap,
    opts: FitOptions,
) -> Result<FitReport> {
    check_shapes(i, z)?;
    check_shapes(j, z)?;
    let depth: Vec<f64> = z.data().iter().copied().collect();
    let flat = depth.iter().all(|v| *v <= 1e-12);

    let mut fitted = [[0.0; 3]; 3];
    let mut sse_total = 0.0;
    let mut used = 0usize;
    for c in 0..3 {
        // observations clipped at white say nothing about the model
        let (mut zs, mut clean, mut obs) = (Vec::new(), Vec::new(), Vec::new());
        for ((&z, &jv), &iv) in depth
            .iter()
            .zip(j.data().index_axis(Axis(0), c))
            .zip(i.data().index_axis(Axis(0), c))
        {
            if iv < 1.0 {
                zs.push(z);
                clean.push(jv);
                obs.push(iv);
            }
        }
        if obs.is_empty() {
            return Err(Error::Contract(format!(
                "channel {c} is saturated everywhere; nothing to fit"
            )));
        }
        let problem = ChannelFit {
            depth: &zs,
            clean: &clean,
            observed: &obs,
        };
        let start = problem.grid_search(opts.grid_steps, opts.grid_pixels);
        let (theta, sse) = problem.refine(start, opts.max_iterations);
        fitted[c] = theta;
        sse_total += sse;
        used += obs.len();
    }
    let residual = sse_total / used as f64;
    let params = DegradationParams {
        t_d: ChannelTriple::new(fitted[0][0], fitted[1][0], fitted[2][0]),
        t_b: ChannelTriple::new(fitted[0][1], fitted[1][1], fitted[2][1]),
        b_inf: ChannelTriple::new(fitted[0][2], fitted[1][2], fitted[2][2]),
    };
    let boundary = fitted
        .iter()
        .any(|t| t[0] >= 1.0 - BOUNDARY_EPS || t[1] >= 1.0 - BOUNDARY_EPS || t[0] <= FIT_T_MIN || t[1] <= FIT_T_MIN);
    if !(residual <= opts.tolerance) {
        return Err(Error::NonConvergence {
            best_residual: residual,
        });
    }
    Ok(FitReport {
        params,
        residual,
        flat_residual: flat,
        boundary,
    })
}

struct ChannelFit<'a> {
    depth: &'a [f64],
    clean: &'a [f64],
    observed: &'a [f64],
}

impl ChannelFit<'_> {
    fn sse(&self, theta: [f64; 3]) -> f64 {
        self.depth
            .iter()
            .zip(self.clean)
            .zip(self.observed)
            .map(|((&z, &j), &i)| {
                let r = degrade_value(j, z, theta[0], theta[1], theta[2]) - i;
                r * r
            })
            .sum()
    }

    /// Coarse search over (t_D, t_B); B∞ is solved in closed form for each cell.
    fn grid_search(&self, steps: usize, max_pixels: usize) -> [f64; 3] {
        let stride = (self.depth.len() / max_pixels.max(1)).max(1);
        let idx: Vec<usize> = (0..self.depth.len()).step_by(stride).collect();
        let grid: Vec<f64> = (0..steps)
            .map(|k| 0.02 + (0.995 - 0.02) * k as f64 / (steps - 1).max(1) as f64)
            .collect();
        let mut best = ([0.5, 0.5, 0.8], f64::INFINITY);
        for &td in &grid {
            let ln_td = td.ln();
            let resid: Vec<f64> = idx
                .iter()
                .map(|&k| self.observed[k] - self.clean[k] * (self.depth[k] * ln_td).exp())
                .collect();
            for &tb in &grid {
                let ln_tb = tb.ln();
                let basis: Vec<f64> = idx
                    .iter()
                    .map(|&k| 1.0 - (self.depth[k] * ln_tb).exp())
                    .collect();
                let uu: f64 = basis.iter().map(|u| u * u).sum();
                let ru: f64 = resid.iter().zip(&basis).map(|(r, u)| r * u).sum();
                let b_inf = if uu > 0.0 { ru / uu } else { 0.8 }.clamp(VEILING_MIN, VEILING_MAX);
                let sse: f64 = resid
                    .iter()
                    .zip(&basis)
                    .map(|(r, u)| (r - b_inf * u).powi(2))
                    .sum();
                if sse < best.1 {
                    best = ([td, tb, b_inf], sse);
                }
            }
        }
        best.0
    }

    fn project(theta: [f64; 3]) -> [f64; 3] {
        [
            theta[0].clamp(FIT_T_MIN, FIT_T_MAX),
            theta[1].clamp(FIT_T_MIN, FIT_T_MAX),
            theta[2].clamp(VEILING_MIN, VEILING_MAX),
        ]
    }

    fn normal_equations(&self, theta: [f64; 3]) -> ([[f64; 3]; 3], [f64; 3]) {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for ((&z, &j), &i) in self.depth.iter().zip(self.clean).zip(self.observed) {
            let r = degrade_value(j, z, theta[0], theta[1], theta[2]) - i;
            let g = degrade_gradient(j, z, theta[0], theta[1], theta[2]);
            let row = [g.t_d, g.t_b, g.b_inf];
            for a in 0..3 {
                jtr[a] += row[a] * r;
                for b in 0..3 {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        (jtj, jtr)
    }

    fn refine(&self, start: [f64; 3], max_iterations: usize) -> ([f64; 3], f64) {
        let mut theta = Self::project(start);
        let mut sse = self.sse(theta);
        let mut lambda = 1e-3;
        for _ in 0..max_iterations {
            if sse < 1e-26 {
                break;
            }
            let (jtj, jtr) = self.normal_equations(theta);
            let mut improved = false;
            for _ in 0..20 {
                let mut a = jtj;
                for d in 0..3 {
                    a[d][d] += lambda * jtj[d][d].max(1e-12);
                }
                let Some(step) = solve3(a, [-jtr[0], -jtr[1], -jtr[2]]) else {
                    lambda *= 10.0;
                    continue;
                };
                let cand = Self::project([
                    theta[0] + step[0],
                    theta[1] + step[1],
                    theta[2] + step[2],
                ]);
                let cand_sse = self.sse(cand);
                if cand_sse < sse {
                    let gain = sse - cand_sse;
                    theta = cand;
                    sse = cand_sse;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = gain > sse * 1e-14;
                    break;
                }
                lambda *= 4.0;
            }
            if !improved {
                break;
            }
        }
        (theta, sse)
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Differentiable batched versions of the model on `tch` tensors.
///
/// Shapes: images `[N, 3, H, W]`, depth `[N, 1, H, W]`, coefficient triples
/// `[N, 3]`.
pub mod tensor {
    use tch::Tensor;

    use super::TRANSMISSION_FLOOR;

    /// Batched per-image coefficients.
    #[derive(Debug)]
    pub struct ParamsTensor {
        pub t_d: Tensor,
        pub t_b: Tensor,
        pub b_inf: Tensor,
    }

    impl ParamsTensor {
        pub fn shallow_clone(&self) -> Self {
            Self {
                t_d: self.t_d.shallow_clone(),
                t_b: self.t_b.shallow_clone(),
                b_inf: self.b_inf.shallow_clone(),
            }
        }

        pub fn detach(&self) -> Self {
            Self {
                t_d: self.t_d.detach(),
                t_b: self.t_b.detach(),
                b_inf: self.b_inf.detach(),
            }
        }
    }

    fn as_planes(t: &Tensor) -> Tensor {
        let n = t.size()[0];
        t.view([n, 3, 1, 1])
    }

    /// `t^z` with `t` broadcast over pixels and `z` over channels.
    pub fn transmission(t: &Tensor, z: &Tensor) -> Tensor {
        (z * as_planes(t).log()).exp()
    }

    pub fn backscatter(z: &Tensor, p: &ParamsTensor) -> Tensor {
        as_planes(&p.b_inf) * (1.0 - transmission(&p.t_b, z))
    }

    /// Forward model, unclamped.
    pub fn degrade(j: &Tensor, z: &Tensor, p: &ParamsTensor) -> Tensor {
        j * transmission(&p.t_d, z) + backscatter(z, p)
    }

    /// Inverse model, unclamped, with the transmission floor.
    pub fn restore(i: &Tensor, z: &Tensor, p: &ParamsTensor) -> Tensor {
        (i - backscatter(z, p)) / transmission(&p.t_d, z).clamp_min(TRANSMISSION_FLOOR)
    }
}
