//! Dark-channel map and darkest-pixel mask.
//!
//! The dark channel here is the per-pixel minimum over R, G, B (window of
//! one pixel). The darkest pixels of that map approximate pure backscatter
//! and anchor the backscatter fidelity loss.

use ndarray::{Array2, Axis, Zip};

use crate::imaging::{ImageGray, ImageRgb};

pub const DEFAULT_MASK_FRACTION: f64 = 0.01;
pub const DEFAULT_MASK_CAP: usize = 10_000;

/// Per-pixel selection mask with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    m: Array2<u8>,
}

impl BinaryMask {
    pub fn from_indices(height: usize, width: usize, indices: &[usize]) -> Self {
        let mut m = Array2::zeros((height, width));
        for &k in indices {
            m[[k / width, k % width]] = 1;
        }
        Self { m }
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.m
    }

    pub fn count(&self) -> usize {
        self.m.iter().filter(|v| **v == 1).count()
    }

    pub fn height(&self) -> usize {
        self.m.nrows()
    }

    pub fn width(&self) -> usize {
        self.m.ncols()
    }

    /// Row-major indices of the selected pixels.
    pub fn indices(&self) -> Vec<usize> {
        self.m
            .iter()
            .enumerate()
            .filter_map(|(k, v)| (*v == 1).then_some(k))
            .collect()
    }

    pub fn is_set(&self, y: usize, x: usize) -> bool {
        self.m[[y, x]] == 1
    }

    pub fn to_gray(&self) -> ImageGray {
        ImageGray::new(self.m.mapv(f64::from))
    }

    /// Keeps the RGB values of selected pixels, blacks out the rest.
    pub fn apply(&self, img: &ImageRgb) -> ImageRgb {
        let mut data = img.data().clone();
        for mut plane in data.axis_iter_mut(Axis(0)) {
            Zip::from(&mut plane)
                .and(&self.m)
                .for_each(|v, &m| *v *= f64::from(m));
        }
        ImageRgb::from_array_clamped(data)
    }
}

/// Per-pixel channel minimum.
pub fn dcp_map(img: &ImageRgb) -> ImageGray {
    let d = img.data();
    let mut out = d.index_axis(Axis(0), 0).to_owned();
    for c in 1..3 {
        Zip::from(&mut out)
            .and(d.index_axis(Axis(0), c))
            .for_each(|o, &v| *o = o.min(v));
    }
    ImageGray::new(out)
}

/// Number of pixels [`darkest_mask`] selects for an `n`-pixel image.
pub fn mask_size(n: usize, fraction: f64, cap: usize) -> usize {
    // shave representation error so that e.g. 0.07·100 counts as 7, not 8
    let raw = fraction * n as f64;
    let k = (raw - raw * 1e-12).ceil() as usize;
    k.min(cap).min(n)
}

/// Selects the `min(ceil(fraction·H·W), cap)` pixels with the lowest dark
/// channel value. Ties go to the lower row-major index.
///
/// # Panics
/// If `fraction` is not in `(0, 1]`.
pub fn darkest_mask(dcp: &ImageGray, fraction: f64, cap: usize) -> BinaryMask {
    let (h, w) = (dcp.height(), dcp.width());
    let values: Vec<f64> = dcp.data().iter().copied().collect();
    BinaryMask::from_indices(h, w, &darkest_indices(&values, fraction, cap))
}

/// Core selection over a flat row-major slice; returns the selected indices
/// in ascending order.
pub fn darkest_indices(values: &[f64], fraction: f64, cap: usize) -> Vec<usize> {
    assert!(
        fraction > 0.0 && fraction <= 1.0,
        "mask fraction must be in (0, 1], got {fraction}"
    );
    let k = mask_size(values.len(), fraction, cap);
    let mut order: Vec<usize> = (0..values.len()).collect();
    let key = |&a: &usize, &b: &usize| values[a].total_cmp(&values[b]).then(a.cmp(&b));
    if k < order.len() && k > 0 {
        order.select_nth_unstable_by(k - 1, key);
    }
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    chosen
}
