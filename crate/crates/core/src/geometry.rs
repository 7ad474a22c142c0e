//! Pinhole back-projection of depth + RGB frames into organized point clouds.
//!
//! The cloud keeps the image grid layout: pixel `(u, v)` maps to entry
//! `v * width + u`. Pixels with missing depth (raw value 0) are flagged
//! invalid and excluded from every downstream computation.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pinhole camera parameters plus the raw-unit-to-meter depth scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Meters per raw depth unit (0.001 for millimeter sensors).
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    /// Kinect-class defaults for a given resolution: fx = fy = 525 scaled by
    /// width/640, principal point at the image center.
    pub fn kinect_default(width: u32, height: u32) -> Self {
        let scale = width as f64 / 640.0;
        CameraIntrinsics {
            fx: 525.0 * scale,
            fy: 525.0 * scale,
            cx: width as f64 / 2.0 - 0.5,
            cy: height as f64 / 2.0 - 0.5,
            depth_scale: 0.001,
        }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        if !(self.fx > 0.0) || !(self.fy > 0.0) {
            return Err(Error::InvalidParam(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.depth_scale > 0.0) {
            return Err(Error::InvalidParam(format!(
                "depth_scale must be positive ({})",
                self.depth_scale
            )));
        }
        if self.cx < 0.0 || self.cx >= width as f64 || self.cy < 0.0 || self.cy >= height as f64 {
            return Err(Error::InvalidParam(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, width, height
            )));
        }
        Ok(())
    }

    /// Back-project pixel `(u, v)` with metric depth `z` to camera space.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z]
    }

    /// Forward-project a camera-space point to pixel coordinates.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (p[0] * self.fx / p[2] + self.cx, p[1] * self.fy / p[2] + self.cy)
    }
}

/// Raw depth raster; 0 means missing.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<u16>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::DimensionMismatch(format!(
                "depth buffer has {} values for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        Ok(DepthImage { width, height, data })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        DepthImage {
            width,
            height,
            data: vec![0; (width as usize) * (height as usize)],
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> u16 {
        self.data[(v * self.width + u) as usize]
    }
}

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[u8; 3]>,
}

impl ColorImage {
    pub fn new(width: u32, height: u32, data: Vec<[u8; 3]>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::DimensionMismatch(format!(
                "color buffer has {} pixels for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        Ok(ColorImage { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        ColorImage {
            width,
            height,
            data: vec![rgb; (width as usize) * (height as usize)],
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> [u8; 3] {
        self.data[(v * self.width + u) as usize]
    }
}

/// Organized point cloud: per-pixel camera-space position, CIE Lab color,
/// and a validity flag. Invalid entries hold zeroed positions.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub width: u32,
    pub height: u32,
    pub positions: Vec<[f64; 3]>,
    pub lab: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl PointCloud {
    #[inline]
    pub fn idx(&self, u: u32, v: u32) -> usize {
        (v * self.width + u) as usize
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

// sRGB companding and the D65 conversion constants. KAPPA/EPSILON follow the
// CIE continuity convention (216/24389, 24389/27).
const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;
const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

#[inline]
fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

/// sRGB (D65) to CIE L*a*b*.
pub fn rgb_to_lab(r: u8, g: u8, b: u8) -> [f64; 3] {
    let rl = srgb_to_linear(r);
    let gl = srgb_to_linear(g);
    let bl = srgb_to_linear(b);

    let x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    let y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    let z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;

    let fx = lab_f(x / D65_WHITE[0]);
    let fy = lab_f(y / D65_WHITE[1]);
    let fz = lab_f(z / D65_WHITE[2]);

    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Back-project a depth/color pair into an organized point cloud.
///
/// Pixels with raw depth 0 become invalid entries. Depth and color must have
/// equal dimensions.
pub fn depth_to_cloud(
    depth: &DepthImage,
    color: &ColorImage,
    k: &CameraIntrinsics,
) -> Result<PointCloud> {
    if depth.width != color.width || depth.height != color.height {
        return Err(Error::DimensionMismatch(format!(
            "depth is {}x{} but color is {}x{}",
            depth.width, depth.height, color.width, color.height
        )));
    }
    k.validate(depth.width, depth.height)?;

    let n = (depth.width as usize) * (depth.height as usize);
    let mut positions = vec![[0.0; 3]; n];
    let mut lab = vec![[0.0; 3]; n];
    let mut valid = vec![false; n];

    for v in 0..depth.height {
        for u in 0..depth.width {
            let i = (v * depth.width + u) as usize;
            let d = depth.data[i];
            let [r, g, b] = color.data[i];
            lab[i] = rgb_to_lab(r, g, b);
            if d > 0 {
                let z = d as f64 * k.depth_scale;
                positions[i] = k.back_project(u as f64, v as f64, z);
                valid[i] = true;
            }
        }
    }

    Ok(PointCloud {
        width: depth.width,
        height: depth.height,
        positions,
        lab,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            depth_scale: 0.001,
        }
    }

    #[test]
    fn principal_point_projects_to_optical_axis() {
        let k = CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 4.0,
            cy: 3.0,
            depth_scale: 0.001,
        };
        let mut depth = DepthImage::zeros(9, 7);
        depth.data[(3 * 9 + 4) as usize] = 1000;
        let color = ColorImage::filled(9, 7, [10, 20, 30]);
        let cloud = depth_to_cloud(&depth, &color, &k).unwrap();
        let i = cloud.idx(4, 3);
        assert!(cloud.valid[i]);
        assert_eq!(cloud.positions[i], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn missing_depth_is_invalid() {
        let k = CameraIntrinsics::kinect_default(4, 4);
        let depth = DepthImage::zeros(4, 4);
        let color = ColorImage::filled(4, 4, [0, 0, 0]);
        let cloud = depth_to_cloud(&depth, &color, &k).unwrap();
        assert_eq!(cloud.valid_count(), 0);
    }

    #[test]
    fn one_focal_length_right_of_center_maps_to_one_meter() {
        // Closed-form pinhole check: u = cx + fx at z = 1.0 gives x = 1.0.
        let k = test_intrinsics();
        let p = k.back_project(k.cx + k.fx, k.cy, 1.0);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1].abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let k = CameraIntrinsics::kinect_default(4, 4);
        let depth = DepthImage::zeros(4, 4);
        let color = ColorImage::filled(5, 4, [0, 0, 0]);
        assert!(matches!(
            depth_to_cloud(&depth, &color, &k),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn lab_white_black_and_mid_gray() {
        let [l, a, b] = rgb_to_lab(255, 255, 255);
        assert!((l - 100.0).abs() < 0.1);
        assert!(a.abs() < 0.1 && b.abs() < 0.1);

        let [l, a, b] = rgb_to_lab(0, 0, 0);
        assert!(l.abs() < 1e-9 && a.abs() < 1e-9 && b.abs() < 1e-9);

        // Pinned against an external sRGB->XYZ->Lab reference computation.
        let [l, a, b] = rgb_to_lab(119, 119, 119);
        assert!((l - 50.0344).abs() < 0.01);
        assert!(a.abs() < 0.01 && b.abs() < 0.01);
    }

    #[test]
    fn lab_primaries_match_reference() {
        // Same external reference as above.
        let [l, a, b] = rgb_to_lab(255, 0, 0);
        assert!((l - 53.2408).abs() < 0.01);
        assert!((a - 80.0925).abs() < 0.01);
        assert!((b - 67.2032).abs() < 0.01);

        let [l, a, b] = rgb_to_lab(128, 64, 200);
        assert!((l - 41.8853).abs() < 0.01);
        assert!((a - 53.5232).abs() < 0.01);
        assert!((b - -60.3583).abs() < 0.01);
    }

    #[test]
    fn z_is_linear_in_raw_depth() {
        let k = test_intrinsics();
        let mut depth = DepthImage::zeros(640, 480);
        depth.data[0] = 500;
        depth.data[1] = 1000;
        depth.data[2] = 2000;
        let color = ColorImage::filled(640, 480, [0, 0, 0]);
        let cloud = depth_to_cloud(&depth, &color, &k).unwrap();
        assert!((cloud.positions[0][2] - 0.5).abs() < 1e-12);
        assert!((cloud.positions[1][2] - 1.0).abs() < 1e-12);
        assert!((cloud.positions[2][2] - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn back_project_then_project_round_trips(
            u in 0.0f64..640.0,
            v in 0.0f64..480.0,
            z in 0.1f64..10.0,
        ) {
            let k = test_intrinsics();
            let p = k.back_project(u, v, z);
            let (u2, v2) = k.project(p);
            prop_assert!((u2 - u).abs() < 1e-6);
            prop_assert!((v2 - v).abs() < 1e-6);
        }

        #[test]
        fn gray_pixels_are_achromatic(v in 0u8..=255) {
            let [_, a, b] = rgb_to_lab(v, v, v);
            prop_assert!(a.abs() < 0.5);
            prop_assert!(b.abs() < 0.5);
        }

        #[test]
        fn x_is_affine_monotone_in_u(z in 0.1f64..10.0, u in 0u32..639) {
            let k = test_intrinsics();
            let p0 = k.back_project(u as f64, 100.0, z);
            let p1 = k.back_project(u as f64 + 1.0, 100.0, z);
            prop_assert!(p1[0] > p0[0]);
            // Affine: unit pixel step moves x by exactly z/fx.
            prop_assert!((p1[0] - p0[0] - z / k.fx).abs() < 1e-12);
        }
    }
}
