//! Conversions between the `f64` image types and batched `tch` tensors.

use ndarray::{Array2, Array3};
use tch::{Device, Kind, Tensor};

use crate::dcp;
use crate::imaging::ImageRgb;
use crate::physics::{ChannelTriple, DepthMap, MAX_DEPTH};

/// Stacks images into a `[N, 3, H, W]` tensor of the given kind.
pub fn images_to_tensor(imgs: &[ImageRgb], kind: Kind, device: Device) -> Tensor {
    let (h, w) = (imgs[0].height() as i64, imgs[0].width() as i64);
    let mut flat = Vec::with_capacity(imgs.len() * 3 * (h * w) as usize);
    for img in imgs {
        flat.extend(img.data().iter().copied());
    }
    Tensor::from_slice(&flat)
        .view([imgs.len() as i64, 3, h, w])
        .to_kind(kind)
        .to_device(device)
}

pub fn depths_to_tensor(depths: &[DepthMap], kind: Kind, device: Device) -> Tensor {
    let (h, w) = (depths[0].height() as i64, depths[0].width() as i64);
    let mut flat = Vec::with_capacity(depths.len() * (h * w) as usize);
    for d in depths {
        flat.extend(d.data().iter().copied());
    }
    Tensor::from_slice(&flat)
        .view([depths.len() as i64, 1, h, w])
        .to_kind(kind)
        .to_device(device)
}

/// Triples into an `[N, 3]` tensor.
pub fn triples_to_tensor(triples: &[ChannelTriple], kind: Kind, device: Device) -> Tensor {
    let flat: Vec<f64> = triples.iter().flat_map(|t| t.to_array()).collect();
    Tensor::from_slice(&flat)
        .view([triples.len() as i64, 3])
        .to_kind(kind)
        .to_device(device)
}

pub fn tensor_to_vec(t: &Tensor) -> Vec<f64> {
    let t = t
        .detach()
        .to_device(Device::Cpu)
        .to_kind(Kind::Double)
        .contiguous()
        .flatten(0, -1);
    let n = t.numel();
    let mut out = vec![0.0; n];
    t.copy_data(&mut out, n);
    out
}

/// Unstacks a `[N, 3, H, W]` tensor into raw planar arrays (no clamping).
pub fn tensor_to_arrays(t: &Tensor) -> Vec<Array3<f64>> {
    let size = t.size();
    let (n, c, h, w) = (size[0] as usize, size[1] as usize, size[2] as usize, size[3] as usize);
    let flat = tensor_to_vec(t);
    flat.chunks(c * h * w)
        .take(n)
        .map(|chunk| Array3::from_shape_vec((c, h, w), chunk.to_vec()).expect("shape"))
        .collect()
}

/// Unstacks and clamps into valid images.
pub fn tensor_to_images(t: &Tensor) -> Vec<ImageRgb> {
    tensor_to_arrays(t)
        .into_iter()
        .map(ImageRgb::from_array_clamped)
        .collect()
}

pub fn tensor_to_depths(t: &Tensor) -> Vec<DepthMap> {
    tensor_to_arrays(t)
        .into_iter()
        .map(|a| {
            let (_, h, w) = a.dim();
            let plane = a.into_shape_with_order((h, w)).expect("single channel");
            DepthMap::new(plane.mapv(|v| v.clamp(0.0, MAX_DEPTH))).expect("clamped")
        })
        .collect()
}

pub fn tensor_to_triples(t: &Tensor) -> Vec<ChannelTriple> {
    tensor_to_vec(t)
        .chunks(3)
        .map(|c| ChannelTriple::new(c[0], c[1], c[2]))
        .collect()
}

/// Darkest-pixel masks for each image of a `[N, 3, H, W]` batch, as a
/// detached `[N, 1, H, W]` tensor of the batch's kind.
pub fn darkest_masks(images: &Tensor, fraction: f64, cap: usize) -> Tensor {
    let size = images.size();
    let (n, h, w) = (size[0], size[2], size[3]);
    let dark = images.detach().amin([1].as_slice(), false);
    let values = tensor_to_vec(&dark);
    let per = (h * w) as usize;
    let mut mask = vec![0.0f64; values.len()];
    for (img, chunk) in values.chunks(per).enumerate() {
        for k in dcp::darkest_indices(chunk, fraction, cap) {
            mask[img * per + k] = 1.0;
        }
    }
    Tensor::from_slice(&mask)
        .view([n, 1, h, w])
        .to_kind(images.kind())
        .to_device(images.device())
}

pub fn plane_to_tensor(plane: &Array2<f64>) -> Tensor {
    let (h, w) = plane.dim();
    let flat: Vec<f64> = plane.iter().copied().collect();
    Tensor::from_slice(&flat).view([h as i64, w as i64])
}
