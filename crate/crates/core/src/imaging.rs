//! Image containers, colour conversions and PNG/JPEG I/O.
//!
//! Images are stored planar (`channels × height × width`) in `f64` with
//! values in `[0, 1]`. Colour conversions use the sRGB transfer curve and
//! the D65 white point.

use std::path::Path;
use std::sync::LazyLock;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};

type Rgb16Image = ImageBuffer<Rgb<u16>, Vec<u16>>;

/// Default edge length images are resized to on ingestion.
pub const DEFAULT_IMAGE_SIZE: usize = 256;

/// Three-channel RGB image, planar `3 × H × W`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRgb {
    data: Array3<f64>,
}

impl ImageRgb {
    /// Wraps a planar array after checking shape, finiteness and range.
    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        if data.shape()[0] != 3 {
            return Err(Error::Contract(format!(
                "expected 3 channels, got {}",
                data.shape()[0]
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self { data })
    }

    /// Wraps a planar array, clamping into `[0, 1]` (NaN becomes 0).
    pub fn from_array_clamped(mut data: Array3<f64>) -> Self {
        assert_eq!(data.shape()[0], 3, "expected 3 channels");
        data.mapv_inplace(clamp_unit);
        Self { data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((3, height, width)),
        }
    }

    /// Image filled with one colour.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Array3::zeros((3, height, width));
        for (c, v) in rgb.iter().enumerate() {
            data.index_axis_mut(Axis(0), c).fill(clamp_unit(*v));
        }
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [
            self.data[[0, y, x]],
            self.data[[1, y, x]],
            self.data[[2, y, x]],
        ]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        for (c, v) in rgb.iter().enumerate() {
            self.data[[c, y, x]] = clamp_unit(*v);
        }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut data = Array3::zeros((3, h as usize, w as usize));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = f64::from(px[c]) / 255.0;
            }
        }
        Self { data }
    }

    pub fn from_rgb16(img: &Rgb16Image) -> Self {
        let (w, h) = img.dimensions();
        let mut data = Array3::zeros((3, h as usize, w as usize));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = f64::from(px[c]) / 65535.0;
            }
        }
        Self { data }
    }

    pub fn to_rgb16(&self) -> Rgb16Image {
        let (h, w) = (self.height(), self.width());
        let q = |v: f64| (clamp_unit(v) * 65535.0 + 0.5).floor() as u16;
        Rgb16Image::from_fn(w as u32, h as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            Rgb([q(p[0]), q(p[1]), q(p[2])])
        })
    }

    /// Quantises to 8 bits: clamp, then round half up.
    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = (self.height(), self.width());
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            Rgb([quantize(p[0]), quantize(p[1]), quantize(p[2])])
        })
    }

    /// Bilinear resize with half-pixel centres and no antialiasing.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height() && width == self.width() {
            return self.clone();
        }
        let mut out = Array3::zeros((3, height, width));
        for c in 0..3 {
            let plane = self.data.index_axis(Axis(0), c);
            let resized = resize_plane(&plane.to_owned(), height, width);
            out.index_axis_mut(Axis(0), c).assign(&resized);
        }
        Self { data: out }
    }
}

/// Single-channel image, `H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGray {
    data: Array2<f64>,
}

impl ImageGray {
    pub fn new(data: Array2<f64>) -> Self {
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Same image on the 8-bit metric scale (`× 255`).
    pub fn to_8bit_scale(&self) -> Array2<f64> {
        self.data.mapv(|v| v * 255.0)
    }

    pub fn to_luma8(&self) -> GrayImage {
        GrayImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            Luma([quantize(self.data[[y as usize, x as usize]])])
        })
    }
}

/// CIELab planes: `l` in `[0, 100]`, `a` and `b` unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageLab {
    pub l: Array2<f64>,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

/// Loads an 8-bit raster, converts to RGB and resizes to `size × size`.
pub fn load_image(path: impl AsRef<Path>, size: usize) -> Result<ImageRgb> {
    let img = load_image_native(path)?;
    Ok(img.resize(size, size))
}

/// Loads a raster at its native resolution. 16-bit files keep their full
/// precision; everything else goes through 8-bit RGB.
pub fn load_image_native(path: impl AsRef<Path>) -> Result<ImageRgb> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    if decoded.color().bytes_per_pixel() / decoded.color().channel_count() == 2 {
        return Ok(ImageRgb::from_rgb16(&decoded.to_rgb16()));
    }
    Ok(ImageRgb::from_rgb8(&decoded.to_rgb8()))
}

/// Writes a 16-bit PNG, for outputs that feed back into numeric checks.
pub fn save_png16(img: &ImageRgb, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.to_rgb16()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })
}

pub fn save_png(img: &ImageRgb, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.to_rgb8()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })
}

pub fn save_gray_png(img: &ImageGray, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.to_luma8()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })
}

/// Spacing between grid cells, in pixels.
pub const GRID_GAP: usize = 4;

/// Lays images out row by row on a black canvas, each resized to
/// `cell × cell`, with `gap` pixels between neighbouring cells.
pub fn compose_grid(rows: &[Vec<ImageRgb>], cell: usize, gap: usize) -> Result<ImageRgb> {
    let n_rows = rows.len();
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::Contract("grid needs at least one image".into()));
    }
    let h = n_rows * cell + (n_rows - 1) * gap;
    let w = n_cols * cell + (n_cols - 1) * gap;
    let mut data = Array3::zeros((3, h, w));
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            let tile = if img.height() == cell && img.width() == cell {
                img.clone()
            } else {
                img.resize(cell, cell)
            };
            let (y0, x0) = (r * (cell + gap), c * (cell + gap));
            data.slice_mut(ndarray::s![.., y0..y0 + cell, x0..x0 + cell])
                .assign(tile.data());
        }
    }
    Ok(ImageRgb { data })
}

/// True when the extension is one of the raster formats we decode.
pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// ITU-R BT.601 luma.
pub fn rgb_to_gray(img: &ImageRgb) -> ImageGray {
    let d = img.data();
    let r = d.index_axis(Axis(0), 0);
    let g = d.index_axis(Axis(0), 1);
    let b = d.index_axis(Axis(0), 2);
    let mut out = Array2::zeros((img.height(), img.width()));
    ndarray::Zip::from(&mut out)
        .and(&r)
        .and(&g)
        .and(&b)
        .for_each(|o, &r, &g, &b| *o = 0.299 * r + 0.587 * g + 0.114 * b);
    ImageGray::new(out)
}

pub fn rgb_to_lab(img: &ImageRgb) -> ImageLab {
    let (h, w) = (img.height(), img.width());
    let mut l = Array2::zeros((h, w));
    let mut a = Array2::zeros((h, w));
    let mut b = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let lab = srgb_to_lab(img.pixel(y, x));
            l[[y, x]] = lab[0];
            a[[y, x]] = lab[1];
            b[[y, x]] = lab[2];
        }
    }
    ImageLab { l, a, b }
}

/// Inverse of [`rgb_to_lab`]; returns unclamped sRGB planes.
pub fn lab_to_rgb(lab: &ImageLab) -> Array3<f64> {
    let (h, w) = lab.l.dim();
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let rgb = lab_to_srgb([lab.l[[y, x]], lab.a[[y, x]], lab.b[[y, x]]]);
            for c in 0..3 {
                out[[c, y, x]] = rgb[c];
            }
        }
    }
    out
}

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

// White is the image of RGB (1,1,1), so white maps to L=100, a=b=0 exactly.
static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| {
    [
        RGB_TO_XYZ[0].iter().sum(),
        RGB_TO_XYZ[1].iter().sum(),
        RGB_TO_XYZ[2].iter().sum(),
    ]
});

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

const LAB_DELTA: f64 = 6.0 / 29.0;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * LAB_DELTA * LAB_DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > LAB_DELTA {
        t.powi(3)
    } else {
        3.0 * LAB_DELTA * LAB_DELTA * (t - 4.0 / 29.0)
    }
}

/// Converts one sRGB pixel to `[L, a, b]`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let white = &*WHITE;
    let mut ratio = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        ratio[i] = (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]) / white[i];
    }
    // neutral pixels are achromatic exactly, not just up to rounding
    if rgb[0] == rgb[1] && rgb[1] == rgb[2] {
        ratio = [ratio[1]; 3];
    }
    let f = ratio.map(lab_f);
    let l = (116.0 * f[1] - 16.0).clamp(0.0, 100.0);
    [l, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

/// Converts `[L, a, b]` back to (unclamped) sRGB.
pub fn lab_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let white = &*WHITE;
    let xyz = [
        white[0] * lab_f_inv(fx),
        white[1] * lab_f_inv(fy),
        white[2] * lab_f_inv(fz),
    ];
    let m = &*XYZ_TO_RGB;
    let mut out = [0.0; 3];
    for (i, row) in m.iter().enumerate() {
        out[i] = linear_to_srgb(row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]);
    }
    out
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            // cofactor of (j, i)
            let (r0, r1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            inv[i][j] = sign * minor / det;
        }
    }
    inv
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn quantize(v: f64) -> u8 {
    (clamp_unit(v) * 255.0 + 0.5).floor() as u8
}

/// Bilinear resample of one plane, half-pixel centre convention.
pub fn resize_plane(src: &Array2<f64>, height: usize, width: usize) -> Array2<f64> {
    let (sh, sw) = src.dim();
    let sy = sh as f64 / height as f64;
    let sx = sw as f64 / width as f64;
    let mut out = Array2::zeros((height, width));
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            let top = src[[y0, x0]] * (1.0 - wx) + src[[y0, x1]] * wx;
            let bottom = src[[y1, x0]] * (1.0 - wx) + src[[y1, x1]] * wx;
            out[[y, x]] = top * (1.0 - wy) + bottom * wy;
        }
    }
    out
}
