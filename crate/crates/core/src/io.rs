//! Raster file formats: 16-bit depth and label PNGs, 8-bit color PNGs, the
//! binary segment raster, and the pseudocolor debug renders.
//!
//! Label PNGs use the raw encoding `0 = unlabeled, v = class/instance v-1`.

use std::io::{Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::evaluate::{LabelImage, UNLABELED};
use crate::geometry::{ColorImage, DepthImage};
use crate::normals::NormalMap;
use crate::oversegment::{SegmentMap, NO_REGION};
use crate::{Error, Result};

/// Depth input must be a 16-bit single-channel PNG in raw units.
pub fn load_depth_png(path: &Path) -> Result<DepthImage> {
    match image::open(path)? {
        DynamicImage::ImageLuma16(img) => {
            let (w, h) = img.dimensions();
            DepthImage::new(w, h, img.into_raw())
        }
        other => Err(Error::InvalidInput(format!(
            "{}: depth must be 16-bit single-channel PNG, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

pub fn save_depth_png(path: &Path, depth: &DepthImage) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width, depth.height, depth.data.clone())
            .expect("depth buffer size");
    img.save(path)?;
    Ok(())
}

/// Color input is 8-bit RGB; an alpha channel is tolerated and dropped.
pub fn load_color_png(path: &Path) -> Result<ColorImage> {
    let img = image::open(path)?;
    match img {
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {}
        other => {
            return Err(Error::InvalidInput(format!(
                "{}: color must be 8-bit RGB PNG, got {:?}",
                path.display(),
                other.color()
            )))
        }
    }
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.pixels().map(|p| p.0).collect();
    ColorImage::new(w, h, data)
}

pub fn save_color_png(path: &Path, color: &ColorImage) -> Result<()> {
    let mut img = ImageBuffer::new(color.width, color.height);
    for (i, px) in color.data.iter().enumerate() {
        let (u, v) = (
            (i as u32) % color.width,
            (i as u32) / color.width,
        );
        img.put_pixel(u, v, Rgb(*px));
    }
    img.save(path)?;
    Ok(())
}

/// Raw label raster (8- or 16-bit single channel), widened to u16.
pub fn load_raw_labels_png(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    match image::open(path)? {
        DynamicImage::ImageLuma16(img) => {
            let (w, h) = img.dimensions();
            Ok((w, h, img.into_raw()))
        }
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            Ok((w, h, img.into_raw().into_iter().map(u16::from).collect()))
        }
        other => Err(Error::InvalidInput(format!(
            "{}: labels must be single-channel PNG, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Store class/instance ids in the raw encoding (`id + 1`, 0 unlabeled).
pub fn save_label_png(path: &Path, labels: &LabelImage) -> Result<()> {
    let mut data = Vec::with_capacity(labels.data.len());
    for &l in &labels.data {
        if l == UNLABELED {
            data.push(0u16);
        } else if l < u16::MAX as u32 {
            data.push((l + 1) as u16);
        } else {
            return Err(Error::InvalidInput(format!(
                "label id {l} does not fit the 16-bit raw encoding"
            )));
        }
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(labels.width, labels.height, data).expect("label buffer size");
    img.save(path)?;
    Ok(())
}

/// Inverse of [`save_label_png`].
pub fn load_label_png(path: &Path) -> Result<LabelImage> {
    let (w, h, raw) = load_raw_labels_png(path)?;
    let data = raw
        .into_iter()
        .map(|v| if v == 0 { UNLABELED } else { v as u32 - 1 })
        .collect();
    Ok(LabelImage {
        width: w,
        height: h,
        data,
    })
}

const SEGMAP_MAGIC: [u8; 8] = *b"SEGRAST1";

/// Binary segment raster: 8-byte magic, u32 width/height, then one u32
/// region id per pixel (`0xFFFFFFFF` outside every region), little-endian.
pub fn write_segmap(mut w: impl Write, seg: &SegmentMap) -> Result<()> {
    w.write_all(&SEGMAP_MAGIC)?;
    w.write_all(&seg.width.to_le_bytes())?;
    w.write_all(&seg.height.to_le_bytes())?;
    for &id in &seg.ids {
        w.write_all(&id.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_segmap(mut r: impl Read) -> Result<SegmentMap> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != SEGMAP_MAGIC {
        return Err(Error::Format("not a segment raster file".into()));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let width = u32::from_le_bytes(buf4);
    r.read_exact(&mut buf4)?;
    let height = u32::from_le_bytes(buf4);
    let n = (width as usize) * (height as usize);
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf4)?;
        ids.push(u32::from_le_bytes(buf4));
    }
    // Recover the roster; ids must already be dense.
    let mut sizes: Vec<u32> = Vec::new();
    for &id in &ids {
        if id == NO_REGION {
            continue;
        }
        if id as usize >= sizes.len() {
            sizes.resize(id as usize + 1, 0);
        }
        sizes[id as usize] += 1;
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::Format("segment raster has non-dense region ids".into()));
    }
    Ok(SegmentMap {
        width,
        height,
        ids,
        region_sizes: sizes,
    })
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic bright-ish color for an arbitrary id.
pub fn hash_color(id: u32) -> [u8; 3] {
    let h = splitmix(id as u64 + 1);
    let byte = |shift: u64| 60 + ((h >> shift) & 0xFF) as u8 % 196;
    [byte(0), byte(16), byte(32)]
}

/// Fixed palette for class renders (documented in the README); classes
/// beyond the palette wrap around.
pub const CLASS_PALETTE: [[u8; 3]; 16] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [174, 199, 232],
    [255, 187, 120],
    [152, 223, 138],
    [255, 152, 150],
    [197, 176, 213],
    [196, 156, 148],
];

pub fn pseudocolor_segments(seg: &SegmentMap) -> ColorImage {
    let data = seg
        .ids
        .iter()
        .map(|&id| {
            if id == NO_REGION {
                [0, 0, 0]
            } else {
                hash_color(id)
            }
        })
        .collect();
    ColorImage {
        width: seg.width,
        height: seg.height,
        data,
    }
}

pub fn pseudocolor_classes(labels: &LabelImage) -> ColorImage {
    let data = labels
        .data
        .iter()
        .map(|&l| {
            if l == UNLABELED {
                [0, 0, 0]
            } else {
                CLASS_PALETTE[(l as usize) % CLASS_PALETTE.len()]
            }
        })
        .collect();
    ColorImage {
        width: labels.width,
        height: labels.height,
        data,
    }
}

pub fn pseudocolor_instances(labels: &LabelImage) -> ColorImage {
    let data = labels
        .data
        .iter()
        .map(|&l| if l == UNLABELED { [0, 0, 0] } else { hash_color(l) })
        .collect();
    ColorImage {
        width: labels.width,
        height: labels.height,
        data,
    }
}

/// Debug render of a normal map: each component maps [-1, 1] to [0, 255];
/// invalid pixels are black.
pub fn normals_debug_image(nm: &NormalMap) -> ColorImage {
    let data = nm
        .normals
        .iter()
        .zip(&nm.valid)
        .map(|(n, &valid)| {
            if !valid {
                return [0, 0, 0];
            }
            let map = |x: f64| (((x + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8;
            [map(n[0]), map(n[1]), map(n[2])]
        })
        .collect();
    ColorImage {
        width: nm.width,
        height: nm.height,
        data,
    }
}
