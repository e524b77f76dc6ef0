//! Scale-invariant keypoints and 128-dimensional gradient descriptors.
//!
//! A compact implementation of Lowe's detector: Gaussian scale space with
//! three intervals per octave, difference-of-Gaussian extrema refined by a
//! quadratic fit, contrast and edge rejection, dominant orientations from a
//! 36-bin histogram, and 4×4×8 orientation-histogram descriptors. The input
//! image is not upsampled before the first octave.

use std::f64::consts::PI;

use crate::imaging::ImageGray;

const SIGMA: f64 = 1.6;
const INPUT_BLUR: f64 = 0.5;
const INTERVALS: usize = 3;
const CONTRAST_THRESHOLD: f64 = 0.04;
const EDGE_RATIO: f64 = 10.0;
const BORDER: usize = 5;
const MAX_REFINE_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_PEAK_RATIO: f64 = 0.8;
const ORI_SIGMA_FACTOR: f64 = 1.5;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const DESC_SCALE: f64 = 3.0;
const DESC_CLAMP: f64 = 0.2;

/// Ratio used by [`match_count`].
pub const DEFAULT_RATIO: f64 = 0.75;

#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.v[y * self.w + x]
    }

    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                v.push(self.at(2 * x, 2 * y));
            }
        }
        Plane { w, h, v }
    }

    fn sub(&self, other: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&other.v).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Reflect-101 index into `0..n`.
#[inline]
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn blur(p: &Plane, sigma: f64) -> Plane {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; p.v.len()];
    for y in 0..p.h {
        for x in 0..p.w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * p.at(reflect101(x as isize + t as isize - r, p.w), y);
            }
            tmp[y * p.w + x] = acc;
        }
    }
    let mut out = vec![0.0; p.v.len()];
    for y in 0..p.h {
        for x in 0..p.w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * tmp[reflect101(y as isize + t as isize - r, p.h) * p.w + x];
            }
            out[y * p.w + x] = acc;
        }
    }
    Plane { w: p.w, h: p.h, v: out }
}

/// A detected keypoint in input-image coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Blur scale in input-image pixels.
    pub sigma: f64,
    /// Dominant gradient orientation in radians, image coordinates (y down).
    pub angle: f64,
    pub octave: usize,
    pub response: f64,
}

#[derive(Clone, Debug)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: [f32; DESC_WIDTH * DESC_WIDTH * DESC_BINS],
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
}

fn scale_space(img: &ImageGray) -> Vec<Octave> {
    let (h, w) = (img.height(), img.width());
    let base = Plane {
        w,
        h,
        v: img.data().iter().copied().collect(),
    };
    let min_side = w.min(h);
    if min_side < 2 * BORDER + 3 {
        return Vec::new();
    }
    let n_oct = ((min_side as f64).log2().floor() as i64 - 3).max(1) as usize;
    let k = 2f64.powf(1.0 / INTERVALS as f64);
    let levels = INTERVALS + 3;
    // incremental blur from level i-1 to level i
    let mut inc = vec![(SIGMA * SIGMA - INPUT_BLUR * INPUT_BLUR).max(0.01).sqrt()];
    for i in 1..levels {
        let prev = SIGMA * k.powi(i as i32 - 1);
        let total = prev * k;
        inc.push((total * total - prev * prev).sqrt());
    }
    let mut octaves: Vec<Octave> = Vec::with_capacity(n_oct);
    for o in 0..n_oct {
        let first = if o == 0 {
            blur(&base, inc[0])
        } else {
            octaves[o - 1].gauss[INTERVALS].downsample()
        };
        if first.w < 2 * BORDER + 3 || first.h < 2 * BORDER + 3 {
            break;
        }
        let mut gauss = vec![first];
        for s in inc.iter().skip(1) {
            let next = blur(gauss.last().expect("nonempty"), *s);
            gauss.push(next);
        }
        let dog = gauss.windows(2).map(|p| p[1].sub(&p[0])).collect();
        octaves.push(Octave { gauss, dog });
    }
    octaves
}

fn is_extremum(dog: &[Plane], l: usize, x: usize, y: usize) -> bool {
    let v = dog[l].at(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for p in &dog[l - 1..=l + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let n = p.at(xx, yy);
                if std::ptr::eq(p, &dog[l]) && xx == x && yy == y {
                    continue;
                }
                is_max &= v > n;
                is_min &= v < n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if det.abs() < 1e-18 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        let d = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        *o = d / det;
    }
    Some(out)
}

/// Quadratic refinement with contrast and edge tests. Returns the refined
/// (x, y, layer) offsets applied to integer coordinates plus the response.
fn refine(dog: &[Plane], mut l: usize, mut x: usize, mut y: usize) -> Option<(usize, usize, usize, [f64; 3], f64)> {
    let (w, h) = (dog[0].w, dog[0].h);
    for _ in 0..MAX_REFINE_STEPS {
        let (p, c, n) = (&dog[l - 1], &dog[l], &dog[l + 1]);
        let v = c.at(x, y);
        let g = [
            0.5 * (c.at(x + 1, y) - c.at(x - 1, y)),
            0.5 * (c.at(x, y + 1) - c.at(x, y - 1)),
            0.5 * (n.at(x, y) - p.at(x, y)),
        ];
        let dxx = c.at(x + 1, y) + c.at(x - 1, y) - 2.0 * v;
        let dyy = c.at(x, y + 1) + c.at(x, y - 1) - 2.0 * v;
        let dss = n.at(x, y) + p.at(x, y) - 2.0 * v;
        let dxy = 0.25 * (c.at(x + 1, y + 1) - c.at(x - 1, y + 1) - c.at(x + 1, y - 1) + c.at(x - 1, y - 1));
        let dxs = 0.25 * (n.at(x + 1, y) - n.at(x - 1, y) - p.at(x + 1, y) + p.at(x - 1, y));
        let dys = 0.25 * (n.at(x, y + 1) - n.at(x, y - 1) - p.at(x, y + 1) + p.at(x, y - 1));
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let off = solve3(hess, [-g[0], -g[1], -g[2]])?;
        if off.iter().all(|o| o.abs() < 0.5) {
            let contrast = v + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]);
            if contrast.abs() * (INTERVALS as f64) < CONTRAST_THRESHOLD {
                return None;
            }
            let tr = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            if det <= 0.0 || tr * tr * EDGE_RATIO >= (EDGE_RATIO + 1.0).powi(2) * det {
                return None;
            }
            return Some((x, y, l, off, contrast.abs()));
        }
        if off.iter().any(|o| o.abs() > 1e6) {
            return None;
        }
        let nx = x as f64 + off[0].round();
        let ny = y as f64 + off[1].round();
        let nl = l as f64 + off[2].round();
        if nl < 1.0
            || nl > INTERVALS as f64
            || nx < BORDER as f64
            || nx >= (w - BORDER) as f64
            || ny < BORDER as f64
            || ny >= (h - BORDER) as f64
        {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        l = nl as usize;
    }
    None
}

fn gradient(p: &Plane, x: usize, y: usize) -> (f64, f64) {
    (p.at(x + 1, y) - p.at(x - 1, y), p.at(x, y + 1) - p.at(x, y - 1))
}

fn orientations(g: &Plane, x: usize, y: usize, scale: f64) -> Vec<(f64, f64)> {
    let radius = (3.0 * ORI_SIGMA_FACTOR * scale).round() as isize;
    let sigma_w = ORI_SIGMA_FACTOR * scale;
    let mut hist = [0.0f64; ORI_BINS];
    for dy in -radius..=radius {
        let yy = y as isize + dy;
        if yy <= 0 || yy >= g.h as isize - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let xx = x as isize + dx;
            if xx <= 0 || xx >= g.w as isize - 1 {
                continue;
            }
            let (gx, gy) = gradient(g, xx as usize, yy as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            let weight = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma_w * sigma_w)).exp();
            let ang = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((ang / (2.0 * PI) * ORI_BINS as f64).round() as usize) % ORI_BINS;
            hist[bin] += weight * mag;
        }
    }
    let mut smooth = [0.0f64; ORI_BINS];
    for (i, s) in smooth.iter_mut().enumerate() {
        let at = |o: isize| hist[(i as isize + o).rem_euclid(ORI_BINS as isize) as usize];
        *s = (at(-2) + at(2)) / 16.0 + 4.0 * (at(-1) + at(1)) / 16.0 + 6.0 * at(0) / 16.0;
    }
    let max = smooth.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..ORI_BINS {
        let l = smooth[(i + ORI_BINS - 1) % ORI_BINS];
        let r = smooth[(i + 1) % ORI_BINS];
        let c = smooth[i];
        if c > l && c > r && c >= ORI_PEAK_RATIO * max {
            let denom = l - 2.0 * c + r;
            let shift = if denom != 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
            let bin = (i as f64 + shift).rem_euclid(ORI_BINS as f64);
            out.push((bin * 2.0 * PI / ORI_BINS as f64, c));
        }
    }
    out
}

fn descriptor(g: &Plane, x: f64, y: f64, scale: f64, angle: f64) -> [f32; 128] {
    let d = DESC_WIDTH as f64;
    let n = DESC_BINS as f64;
    let hist_width = DESC_SCALE * scale;
    let radius = ((hist_width * std::f64::consts::SQRT_2 * (d + 1.0) * 0.5).round() as isize)
        .min(((g.w * g.w + g.h * g.h) as f64).sqrt() as isize);
    let (sin_t, cos_t) = angle.sin_cos();
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let side = DESC_WIDTH + 2;
    let mut hist = vec![0.0f64; side * side * (DESC_BINS + 2)];
    let exp_scale = -1.0 / (d * d * 0.5);
    for i in -radius..=radius {
        for j in -radius..=radius {
            // rotate the offset by -angle, then express in histogram cells
            let c_rot = (j as f64 * cos_t + i as f64 * sin_t) / hist_width;
            let r_rot = (-(j as f64) * sin_t + i as f64 * cos_t) / hist_width;
            let rbin = r_rot + d / 2.0 - 0.5;
            let cbin = c_rot + d / 2.0 - 0.5;
            let (xx, yy) = (cx + j, cy + i);
            if rbin <= -1.0
                || rbin >= d
                || cbin <= -1.0
                || cbin >= d
                || xx <= 0
                || yy <= 0
                || xx >= g.w as isize - 1
                || yy >= g.h as isize - 1
            {
                continue;
            }
            let (gx, gy) = gradient(g, xx as usize, yy as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            let weight = ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let mut obin = (gy.atan2(gx) - angle).rem_euclid(2.0 * PI) * n / (2.0 * PI);
            if obin >= n {
                obin -= n;
            }
            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            let v = mag * weight;
            for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                    for (dob, wo) in [(0, 1.0 - fo), (1, fo)] {
                        let r = (r0 as isize + 1 + dr) as usize;
                        let c = (c0 as isize + 1 + dc) as usize;
                        let o = o0 as usize + dob;
                        hist[(r * side + c) * (DESC_BINS + 2) + o] += v * wr * wc * wo;
                    }
                }
            }
        }
    }
    let mut desc = [0.0f64; 128];
    for r in 0..DESC_WIDTH {
        for c in 0..DESC_WIDTH {
            let base = ((r + 1) * side + (c + 1)) * (DESC_BINS + 2);
            for o in 0..DESC_BINS + 1 {
                desc[(r * DESC_WIDTH + c) * DESC_BINS + o % DESC_BINS] += hist[base + o];
            }
        }
    }
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let thr = DESC_CLAMP * norm;
    desc.iter_mut().for_each(|v| *v = v.min(thr));
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::EPSILON);
    desc.map(|v| (v / norm) as f32)
}

/// Detects keypoints and computes descriptors on a `[0, 1]` grayscale image.
pub fn detect_and_describe(img: &ImageGray) -> Vec<Feature> {
    let octaves = scale_space(img);
    let prelim = 0.5 * CONTRAST_THRESHOLD / INTERVALS as f64;
    let mut out = Vec::new();
    for (o, oct) in octaves.iter().enumerate() {
        let (w, h) = (oct.dog[0].w, oct.dog[0].h);
        let factor = (1usize << o) as f64;
        for l in 1..=INTERVALS {
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    let v = oct.dog[l].at(x, y);
                    if v.abs() <= prelim || !is_extremum(&oct.dog, l, x, y) {
                        continue;
                    }
                    let Some((rx, ry, rl, off, response)) = refine(&oct.dog, l, x, y) else {
                        continue;
                    };
                    let layer = rl as f64 + off[2];
                    let scale = SIGMA * 2f64.powf(layer / INTERVALS as f64);
                    let (fx, fy) = (rx as f64 + off[0], ry as f64 + off[1]);
                    let g = &oct.gauss[rl];
                    for (angle, _) in orientations(g, rx, ry, scale) {
                        out.push(Feature {
                            keypoint: Keypoint {
                                x: fx * factor,
                                y: fy * factor,
                                sigma: scale * factor,
                                angle,
                                octave: o,
                                response,
                            },
                            descriptor: descriptor(g, fx, fy, scale, angle),
                        });
                    }
                }
            }
        }
    }
    out
}

fn dist2(a: &[f32; 128], b: &[f32; 128]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum()
}

/// Number of features in `a` whose nearest neighbour in `b` passes the
/// ratio test `d1 ≤ ratio · d2`. Ties at zero distance pass, so matching a
/// set against itself accepts every feature. With a single candidate the
/// second distance is infinite and the test passes.
pub fn match_count(a: &[Feature], b: &[Feature], ratio: f64) -> usize {
    if b.is_empty() {
        return 0;
    }
    a.iter()
        .filter(|fa| {
            let mut best = f64::INFINITY;
            let mut second = f64::INFINITY;
            for fb in b {
                let d = dist2(&fa.descriptor, &fb.descriptor);
                if d < best {
                    second = best;
                    best = d;
                } else if d < second {
                    second = d;
                }
            }
            best.sqrt() <= ratio * second.sqrt()
        })
        .count()
}
