#![allow(dead_code)]

pub mod loss_oracles;
pub mod metric_oracles;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uwrestore_core::imaging::ImageRgb;
use uwrestore_core::physics::{ChannelTriple, DegradationParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> ImageRgb {
    let data = Array3::from_shape_simple_fn((3, h, w), || rng.gen::<f64>());
    ImageRgb::from_array(data).unwrap()
}

/// Random image quantized to 8-bit levels, like decoded files.
pub fn random_image_8bit(rng: &mut impl Rng, h: usize, w: usize) -> ImageRgb {
    let data = Array3::from_shape_simple_fn((3, h, w), || rng.gen_range(0..=255u8) as f64 / 255.0);
    ImageRgb::from_array(data).unwrap()
}

pub fn random_params(rng: &mut impl Rng) -> DegradationParams {
    let mut t = |lo: f64, hi: f64| ChannelTriple::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi));
    let t_d = t(0.2, 0.99);
    let t_b = t(0.2, 0.99);
    let b_inf = t(0.6, 1.0);
    DegradationParams::new(t_d, t_b, b_inf).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
