//! Per-frame instance label maps and their PNG convention.
//!
//! 0 is background, instances are 1..N. Annotations and predictions share
//! this representation; on disk it is an 8-bit single-channel PNG.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

/// A single instance (or any region) as a binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            pixels: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|p| **p).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|p| *p)
    }
}

impl InstanceLabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::contract(format!(
                "label map: {} labels for {}x{} image",
                labels.len(),
                width,
                height
            )));
        }
        Ok(InstanceLabelMap {
            width,
            height,
            labels,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        InstanceLabelMap {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u32) {
        self.labels[y * self.width + x] = v;
    }

    /// Highest instance id present (0 when the frame is empty).
    pub fn instance_count(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn is_empty_frame(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }

    /// Binary mask of one instance id.
    pub fn instance_mask(&self, id: u32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            pixels: self.labels.iter().map(|&l| l == id).collect(),
        }
    }

    /// All instance masks in id order (1..=N).
    pub fn instance_masks(&self) -> Vec<BinaryMask> {
        (1..=self.instance_count())
            .map(|id| self.instance_mask(id))
            .collect()
    }

    /// Remap labels so the ids present become a contiguous 1..N run,
    /// preserving order. Returns the remap pairs when anything moved.
    pub fn normalize_labels(&mut self) -> Vec<(u32, u32)> {
        let mut present: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        present.sort_unstable();
        present.dedup();
        let mut remap = Vec::new();
        for (i, &old) in present.iter().enumerate() {
            let new = (i + 1) as u32;
            if old != new {
                remap.push((old, new));
            }
        }
        if !remap.is_empty() {
            let table: std::collections::HashMap<u32, u32> = present
                .iter()
                .enumerate()
                .map(|(i, &old)| (old, (i + 1) as u32))
                .collect();
            for l in &mut self.labels {
                if *l != 0 {
                    *l = table[l];
                }
            }
        }
        remap
    }
}

/// Result of reading a label map, with the relabeling applied (if any).
pub struct LabelMapRead {
    pub map: InstanceLabelMap,
    /// (old, new) pairs when the file's ids were not contiguous.
    pub remapped: Vec<(u32, u32)>,
}

/// Read an 8-bit single-channel PNG label map.
pub fn read_labelmap(path: &Path) -> Result<LabelMapRead> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(format!("{}: {}", path.display(), other)),
    })?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            // reject anything that is not grayscale-representable
            let rgb = other.to_rgb8();
            let mut gray = image::GrayImage::new(rgb.width(), rgb.height());
            for (x, y, p) in rgb.enumerate_pixels() {
                if p[0] != p[1] || p[1] != p[2] {
                    return Err(Error::format(format!(
                        "{}: label map must be single-channel grayscale",
                        path.display()
                    )));
                }
                gray.put_pixel(x, y, image::Luma([p[0]]));
            }
            gray
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let labels: Vec<u32> = gray.pixels().map(|p| p[0] as u32).collect();
    let mut map = InstanceLabelMap::new(w, h, labels)?;
    let remapped = map.normalize_labels();
    Ok(LabelMapRead { map, remapped })
}

/// Write a label map as an 8-bit single-channel PNG.
pub fn write_labelmap(map: &InstanceLabelMap, path: &Path) -> Result<()> {
    if map.instance_count() > 255 {
        return Err(Error::contract(format!(
            "label map has {} instances; 8-bit PNG supports at most 255",
            map.instance_count()
        )));
    }
    let mut img = image::GrayImage::new(map.width() as u32, map.height() as u32);
    for y in 0..map.height() {
        for x in 0..map.width() {
            img.put_pixel(x as u32, y as u32, image::Luma([map.get(x, y) as u8]));
        }
    }
    img.save(path)
        .map_err(|e| Error::format(format!("{}: {}", path.display(), e)))
}
