//! Image quality metrics and feature counters.
//!
//! Colour statistics use CIELab (L in `[0, 100]`); contrast, Laplacian and
//! corner measures use BT.601 luma. Everything is deterministic.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{rgb_to_gray, rgb_to_lab, ImageGray, ImageRgb};
use crate::sift::{self, reflect101};

pub const UCIQE_WEIGHTS: [f64; 3] = [0.468, 0.2745, 0.2576];
/// Chroma and opponent-axis values are divided by this scale.
pub const COLOUR_SCALE: f64 = 255.0;
/// Guards the saturation ratio against black pixels.
pub const SATURATION_EPS: f64 = 1e-6;
/// Floor for degenerate colour spans.
pub const SPAN_EPS: f64 = 1e-6;
pub const HARRIS_K: f64 = 0.04;
pub const HARRIS_THRESHOLD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UciqeBreakdown {
    pub sigma_c: f64,
    pub con_l: f64,
    pub mu_s: f64,
    pub uciqe: f64,
}

impl UciqeBreakdown {
    pub fn from_parts(sigma_c: f64, con_l: f64, mu_s: f64) -> Self {
        let [w1, w2, w3] = UCIQE_WEIGHTS;
        Self {
            sigma_c,
            con_l,
            mu_s,
            uciqe: w1 * sigma_c + w2 * con_l + w3 * mu_s,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Linear-interpolated percentile of sorted data, `q ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// UCIQE: weighted chroma spread, lightness contrast and mean saturation.
///
/// * `sigma_c`: population std of chroma `√(a² + b²)`, divided by 255.
/// * `con_l`: mean of the brightest `ceil(1%)` L values minus mean of the
///   darkest `ceil(1%)`, divided by 100.
/// * `mu_s`: mean of `chroma / (L + ε)`.
pub fn uciqe(img: &ImageRgb) -> UciqeBreakdown {
    let lab = rgb_to_lab(img);
    let l: Vec<f64> = lab.l.iter().copied().collect();
    let chroma: Vec<f64> = lab
        .a
        .iter()
        .zip(lab.b.iter())
        .map(|(a, b)| a.hypot(*b))
        .collect();
    let sigma_c = std(&chroma) / COLOUR_SCALE;
    let ls = sorted(&l);
    let k = ((0.01 * ls.len() as f64).ceil() as usize).max(1);
    let con_l = (mean(&ls[ls.len() - k..]) - mean(&ls[..k])) / 100.0;
    let sat: Vec<f64> = chroma
        .iter()
        .zip(&l)
        .map(|(c, l)| c / (l + SATURATION_EPS))
        .collect();
    UciqeBreakdown::from_parts(sigma_c, con_l, mean(&sat))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LabUBreakdown {
    pub d_o: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub a_l: f64,
    pub u: f64,
    /// A span was below [`SPAN_EPS`] and was floored.
    pub degenerate: bool,
}

/// Lab colour-distribution index `U = √d_o / (a_l · d_a · d_b)`; lower is better.
///
/// `a_l` is mean L; `d_o` is the distance of the mean `(a, b)` from the
/// origin; `d_a`, `d_b` are 1st-to-99th percentile spans. `d_o`, `d_a` and
/// `d_b` are divided by 255.
pub fn lab_u_index(img: &ImageRgb) -> LabUBreakdown {
    let lab = rgb_to_lab(img);
    let a: Vec<f64> = lab.a.iter().copied().collect();
    let b: Vec<f64> = lab.b.iter().copied().collect();
    let a_l = lab.l.iter().sum::<f64>() / lab.l.len() as f64;
    let d_o = mean(&a).hypot(mean(&b)) / COLOUR_SCALE;
    let span = |v: &[f64]| {
        let s = sorted(v);
        (percentile(&s, 0.99) - percentile(&s, 0.01)) / COLOUR_SCALE
    };
    let (mut d_a, mut d_b) = (span(&a), span(&b));
    let degenerate = d_a < SPAN_EPS || d_b < SPAN_EPS;
    d_a = d_a.max(SPAN_EPS);
    d_b = d_b.max(SPAN_EPS);
    let u = if d_o == 0.0 { 0.0 } else { d_o.sqrt() / (a_l * d_a * d_b) };
    LabUBreakdown {
        d_o,
        d_a,
        d_b,
        a_l,
        u,
        degenerate,
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-region filtering with the SSIM window.
fn filter_valid(p: &Array2<f64>, k: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = p.dim();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            tmp[[y, x]] = (0..SSIM_WINDOW).map(|t| k[t] * p[[y, x + t]]).sum::<f64>();
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = (0..SSIM_WINDOW).map(|t| k[t] * tmp[[y + t, x]]).sum::<f64>();
        }
    }
    out
}

/// Single-scale SSIM on luma with an 11-tap Gaussian window (σ 1.5),
/// K1 0.01, K2 0.03 and dynamic range 1, averaged over the valid region.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Contract(format!(
            "ssim needs equal shapes, got {}x{} and {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let ga = rgb_to_gray(a).into_array();
    let gb = rgb_to_gray(b).into_array();
    let k = ssim_taps();
    let mu_a = filter_valid(&ga, &k);
    let mu_b = filter_valid(&gb, &k);
    let aa = filter_valid(&(&ga * &ga), &k);
    let bb = filter_valid(&(&gb * &gb), &k);
    let ab = filter_valid(&(&ga * &gb), &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for (((ma, mb), (saa, sbb)), sab) in mu_a
        .iter()
        .zip(mu_b.iter())
        .zip(aa.iter().zip(bb.iter()))
        .zip(ab.iter())
    {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Standard deviation of luma on the 0–255 scale.
pub fn rms_contrast(img: &ImageRgb) -> f64 {
    let g: Vec<f64> = rgb_to_gray(img).to_8bit_scale().iter().copied().collect();
    std(&g)
}

/// 4-neighbour Laplacian (centre −4) with reflect-101 borders.
pub fn laplacian(plane: &Array2<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let at = |dy: isize, dx: isize| {
            plane[[reflect101(y as isize + dy, h), reflect101(x as isize + dx, w)]]
        };
        at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1) - 4.0 * at(0, 0)
    })
}

/// Variance of the Laplacian of luma on the 0–255 scale.
pub fn laplacian_variance(img: &ImageRgb) -> f64 {
    let lap: Vec<f64> = laplacian(&rgb_to_gray(img).to_8bit_scale()).iter().copied().collect();
    let s = std(&lap);
    s * s
}

/// Harris response `det(M) − k·tr(M)²` with Sobel gradients and a 3×3 box
/// structure tensor, reflect-101 borders.
pub fn harris_response(gray: &ImageGray) -> Array2<f64> {
    let p = gray.data();
    let (h, w) = p.dim();
    let at = |y: usize, x: usize, dy: isize, dx: isize| {
        p[[reflect101(y as isize + dy, h), reflect101(x as isize + dx, w)]]
    };
    let mut ixx = Array2::zeros((h, w));
    let mut iyy = Array2::zeros((h, w));
    let mut ixy = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let gx = (at(y, x, -1, 1) + 2.0 * at(y, x, 0, 1) + at(y, x, 1, 1))
                - (at(y, x, -1, -1) + 2.0 * at(y, x, 0, -1) + at(y, x, 1, -1));
            let gy = (at(y, x, 1, -1) + 2.0 * at(y, x, 1, 0) + at(y, x, 1, 1))
                - (at(y, x, -1, -1) + 2.0 * at(y, x, -1, 0) + at(y, x, -1, 1));
            ixx[[y, x]] = gx * gx;
            iyy[[y, x]] = gy * gy;
            ixy[[y, x]] = gx * gy;
        }
    }
    let box3 = |m: &Array2<f64>, y: usize, x: usize| {
        let mut s = 0.0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                s += m[[reflect101(y as isize + dy, h), reflect101(x as isize + dx, w)]];
            }
        }
        s
    };
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (a, b, c) = (box3(&ixx, y, x), box3(&iyy, y, x), box3(&ixy, y, x));
        a * b - c * c - HARRIS_K * (a + b) * (a + b)
    })
}

/// Corners: responses above `0.01 · max` that survive 3×3 non-maximum
/// suppression. On plateaus the first pixel in row-major order wins.
pub fn harris_count(img: &ImageRgb) -> usize {
    let r = harris_response(&rgb_to_gray(img));
    let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return 0;
    }
    let thr = HARRIS_THRESHOLD * max;
    let (h, w) = r.dim();
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            let v = r[[y, x]];
            if v <= thr {
                continue;
            }
            let mut keep = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        continue;
                    }
                    let n = r[[yy as usize, xx as usize]];
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > v || (earlier && n == v) {
                        keep = false;
                        break 'nb;
                    }
                }
            }
            count += usize::from(keep);
        }
    }
    count
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FeatureCounts {
    pub sift: usize,
    pub harris: usize,
}

pub fn feature_counts(img: &ImageRgb) -> FeatureCounts {
    FeatureCounts {
        sift: sift::detect_and_describe(&rgb_to_gray(img)).len(),
        harris: harris_count(img),
    }
}

/// Ratio-test (0.75) descriptor matches from `a` to `b`.
pub fn sift_match_count(a: &ImageRgb, b: &ImageRgb) -> usize {
    let fa = sift::detect_and_describe(&rgb_to_gray(a));
    let fb = sift::detect_and_describe(&rgb_to_gray(b));
    sift::match_count(&fa, &fb, sift::DEFAULT_RATIO)
}

/// All no-reference metrics of one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub uciqe: UciqeBreakdown,
    pub u: LabUBreakdown,
    pub contrast: f64,
    pub laplacian_variance: f64,
    pub features: FeatureCounts,
}

pub fn evaluate(img: &ImageRgb) -> ImageMetrics {
    ImageMetrics {
        uciqe: uciqe(img),
        u: lab_u_index(img),
        contrast: rms_contrast(img),
        laplacian_variance: laplacian_variance(img),
        features: feature_counts(img),
    }
}
