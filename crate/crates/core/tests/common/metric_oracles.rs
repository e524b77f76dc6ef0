//! Brute-force reference implementations of the image quality metrics.

use ndarray::Array2;
use uwrestore_core::imaging::{srgb_to_lab, ImageRgb};

pub fn lab_pixels(img: &ImageRgb) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            out.push(srgb_to_lab(img.pixel(y, x)));
        }
    }
    out
}

pub fn loop_mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

pub fn loop_var(v: &[f64]) -> f64 {
    let m = loop_mean(v);
    let mut s = 0.0;
    for x in v {
        s += (x - m) * (x - m);
    }
    s / v.len() as f64
}

pub fn insertion_sorted(v: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(v.len());
    for &x in v {
        let pos = out.iter().position(|&y| y > x).unwrap_or(out.len());
        out.insert(pos, x);
    }
    out
}

/// Returns (sigma_c, con_l, mu_s, uciqe).
pub fn uciqe_oracle(img: &ImageRgb) -> [f64; 4] {
    let lab = lab_pixels(img);
    let chroma: Vec<f64> = lab.iter().map(|p| (p[1] * p[1] + p[2] * p[2]).sqrt()).collect();
    let sigma_c = loop_var(&chroma).sqrt() / 255.0;
    let l = insertion_sorted(&lab.iter().map(|p| p[0]).collect::<Vec<_>>());
    let k = (l.len() + 99) / 100;
    let con_l = (loop_mean(&l[l.len() - k..]) - loop_mean(&l[..k])) / 100.0;
    let sat: Vec<f64> = lab.iter().zip(&chroma).map(|(p, c)| c / (p[0] + 1e-6)).collect();
    let mu_s = loop_mean(&sat);
    [sigma_c, con_l, mu_s, 0.4680 * sigma_c + 0.2745 * con_l + 0.2576 * mu_s]
}

/// Linear-interpolation percentile, as numpy's default method.
pub fn numpy_percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let i = h.floor() as usize;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

/// Returns (d_o, d_a, d_b, a_l, u).
pub fn u_oracle(img: &ImageRgb) -> [f64; 5] {
    let lab = lab_pixels(img);
    let a: Vec<f64> = lab.iter().map(|p| p[1]).collect();
    let b: Vec<f64> = lab.iter().map(|p| p[2]).collect();
    let a_l = loop_mean(&lab.iter().map(|p| p[0]).collect::<Vec<_>>());
    let d_o = (loop_mean(&a).powi(2) + loop_mean(&b).powi(2)).sqrt() / 255.0;
    let span = |v: &[f64]| {
        let s = insertion_sorted(v);
        ((numpy_percentile(&s, 0.99) - numpy_percentile(&s, 0.01)) / 255.0).max(1e-6)
    };
    let (d_a, d_b) = (span(&a), span(&b));
    let u = if d_o == 0.0 { 0.0 } else { d_o.sqrt() / (a_l * d_a * d_b) };
    [d_o, d_a, d_b, a_l, u]
}

pub fn luma(img: &ImageRgb) -> Array2<f64> {
    Array2::from_shape_fn((img.height(), img.width()), |(y, x)| {
        let [r, g, b] = img.pixel(y, x);
        0.299 * r + 0.587 * g + 0.114 * b
    })
}

/// Windowed SSIM evaluated window by window with an explicit 2-D kernel.
pub fn ssim_oracle(a: &ImageRgb, b: &ImageRgb) -> f64 {
    let (ga, gb) = (luma(a), luma(b));
    let mut g1 = [0.0; 11];
    for (i, v) in g1.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / 4.5).exp();
    }
    let norm: f64 = g1.iter().sum();
    let (h, w) = ga.dim();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    let wgt = g1[dy] * g1[dx] / (norm * norm);
                    let (pa, pb) = (ga[[y0 + dy, x0 + dx]], gb[[y0 + dy, x0 + dx]]);
                    ma += wgt * pa;
                    mb += wgt * pb;
                    saa += wgt * pa * pa;
                    sbb += wgt * pb * pb;
                    sab += wgt * pa * pb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

pub fn contrast_oracle(img: &ImageRgb) -> f64 {
    let v: Vec<f64> = luma(img).iter().map(|g| g * 255.0).collect();
    loop_var(&v).sqrt()
}

/// Pads by mirroring without repeating the edge, then convolves.
pub fn laplacian_variance_oracle(img: &ImageRgb) -> f64 {
    let g = luma(img).mapv(|v| v * 255.0);
    let (h, w) = g.dim();
    let mut padded = Array2::zeros((h + 2, w + 2));
    let mirror = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * n - 2 - i as usize
        } else {
            i as usize
        }
    };
    for y in 0..h + 2 {
        for x in 0..w + 2 {
            padded[[y, x]] = g[[mirror(y as isize - 1, h), mirror(x as isize - 1, w)]];
        }
    }
    let kernel = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (ky, row) in kernel.iter().enumerate() {
                for (kx, k) in row.iter().enumerate() {
                    s += k * padded[[y + ky, x + kx]];
                }
            }
            out.push(s);
        }
    }
    loop_var(&out)
}
