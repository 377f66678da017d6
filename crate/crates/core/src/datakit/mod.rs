//! Dataset plumbing: manifests, preprocessing (empty-frame filtering,
//! train/validation split, augmentation) and a synthetic corpus generator
//! for desk-scale testing.

pub mod augment;
pub mod manifest;
pub mod synth;

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, AugmentDraw, AugmentationConfig};
pub use manifest::{
    filter_empty_frames, load_manifest, save_manifest, split_train_val, DatasetManifest,
    FilterOutcome, FrameRecord, Stage, StageCounts,
};
pub use synth::synth_generate;

/// Read an RGB PNG into a `[3,H,W]` tensor with values in [0,1].
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(format!("{}: {}", path.display(), other)),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(vec![3, h, w]);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set3(c, y as usize, x as usize, p[c] as f64 / 255.0);
        }
    }
    Ok(t)
}

/// Write a `[3,H,W]` tensor (values clipped to [0,1]) as an RGB PNG.
pub fn write_image(image: &Tensor, path: &Path) -> Result<()> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(Error::contract(format!(
            "write_image expects [3,H,W], got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px: [u8; 3] = std::array::from_fn(|c| {
                (image.at3(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8
            });
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)
        .map_err(|e| Error::format(format!("{}: {}", path.display(), e)))
}
