//! Loop-based reference values for the training losses.

pub fn lsgan_generator_oracle(scores: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for s in scores {
        let mut sum = 0.0;
        for v in s {
            sum += (v - 1.0) * (v - 1.0);
        }
        acc += sum / s.len() as f64;
    }
    acc / scores.len() as f64
}

pub fn lsgan_discriminator_oracle(real: &[Vec<f64>], fake: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for (r, f) in real.iter().zip(fake) {
        let mut sr = 0.0;
        for v in r {
            sr += (v - 1.0) * (v - 1.0);
        }
        let mut sf = 0.0;
        for v in f {
            sf += v * v;
        }
        acc += sr / r.len() as f64 + sf / f.len() as f64;
    }
    acc / real.len() as f64
}

/// Sum of the two per-direction mean absolute differences.
pub fn cycle_oracle(x: &[f64], x_rec: &[f64], y: &[f64], y_rec: &[f64]) -> f64 {
    let (mut sx, mut sy) = (0.0, 0.0);
    for i in 0..x.len() {
        sx += (x_rec[i] - x[i]).abs();
    }
    for i in 0..y.len() {
        sy += (y_rec[i] - y[i]).abs();
    }
    sx / x.len() as f64 + sy / y.len() as f64
}

/// Flat NCHW buffers of one batch for the backscatter term.
pub struct MaskedInstance<'a> {
    pub shape: (usize, usize, usize),
    pub image: &'a [f64],
    pub depth: &'a [f64],
    pub t_b: &'a [f64],
    pub b_inf: &'a [f64],
    pub mask: &'a [f64],
}

/// Mean absolute error to `B∞(1 − t_B^z)` over masked pixels and channels.
pub fn backscatter_oracle(m: &MaskedInstance) -> f64 {
    let (n, h, w) = m.shape;
    let (mut sum, mut count) = (0.0, 0usize);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let pix = (b * h + y) * w + x;
                if m.mask[pix] == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    let est = m.b_inf[b * 3 + c] * (1.0 - m.t_b[b * 3 + c].powf(m.depth[pix]));
                    sum += (m.image[((b * 3 + c) * h + y) * w + x] - est).abs();
                    count += 1;
                }
            }
        }
    }
    sum / count as f64
}

/// Squared feature distance, summed over channels and averaged over
/// feature-map positions, from flat NCHW buffers.
pub fn feature_distance_oracle(a: &[f64], b: &[f64], (n, c, h, w): (usize, usize, usize, usize)) -> f64 {
    let mut acc = 0.0;
    for bi in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut d2 = 0.0;
                for ch in 0..c {
                    let k = ((bi * c + ch) * h + y) * w + x;
                    d2 += (a[k] - b[k]) * (a[k] - b[k]);
                }
                acc += d2;
            }
        }
    }
    acc / (n * h * w) as f64
}
