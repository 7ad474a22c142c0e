//! Dense surface normal estimation over organized point clouds.
//!
//! Normals come from the cross product of two box-smoothed tangent vectors:
//! the horizontal and vertical central differences of window-averaged 3D
//! positions. The window averages are O(1) per pixel through integral images
//! over the x/y/z channels plus a valid-sample count. Pixels whose smoothing
//! window straddles a depth discontinuity, or that lack support, come out
//! invalid instead of wrong.

use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;
use crate::{Error, Result};

/// Per-pixel unit normals with a validity flag, camera-oriented (nz <= 0).
#[derive(Debug, Clone)]
pub struct NormalMap {
    pub width: u32,
    pub height: u32,
    pub normals: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl NormalMap {
    #[inline]
    pub fn idx(&self, u: u32, v: u32) -> usize {
        (v * self.width + u) as usize
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Summed-area table over a (width+1) x (height+1) accumulator grid.
/// `I(u, v)` holds the sum of the channel over the rectangle `[0,u) x [0,v)`,
/// so any window sum is four lookups.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    pub width: u32,
    pub height: u32,
    sums: Vec<f64>,
}

impl IntegralImage {
    fn from_fn(width: u32, height: u32, mut value: impl FnMut(u32, u32) -> f64) -> Self {
        let w1 = width as usize + 1;
        let h1 = height as usize + 1;
        let mut sums = vec![0.0; w1 * h1];
        for v in 0..height as usize {
            for u in 0..width as usize {
                let x = value(u as u32, v as u32);
                sums[(v + 1) * w1 + (u + 1)] =
                    x + sums[(v + 1) * w1 + u] + sums[v * w1 + (u + 1)] - sums[v * w1 + u];
            }
        }
        IntegralImage { width, height, sums }
    }

    /// Sum over the half-open rectangle `[u0, u1) x [v0, v1)`.
    #[inline]
    pub fn window_sum(&self, u0: u32, v0: u32, u1: u32, v1: u32) -> f64 {
        debug_assert!(u0 <= u1 && v0 <= v1 && u1 <= self.width && v1 <= self.height);
        let w1 = self.width as usize + 1;
        let (u0, v0, u1, v1) = (u0 as usize, v0 as usize, u1 as usize, v1 as usize);
        self.sums[v1 * w1 + u1] - self.sums[v0 * w1 + u1] - self.sums[v1 * w1 + u0]
            + self.sums[v0 * w1 + u0]
    }
}

/// Build the value integral and the valid-count integral of a masked scalar
/// channel. Invalid pixels contribute 0 to the sum and 0 to the count.
pub fn build_integral(
    width: u32,
    height: u32,
    values: &[f64],
    valid: &[bool],
) -> (IntegralImage, IntegralImage) {
    assert_eq!(values.len(), (width as usize) * (height as usize));
    assert_eq!(valid.len(), values.len());
    let sums = IntegralImage::from_fn(width, height, |u, v| {
        let i = (v * width + u) as usize;
        if valid[i] {
            values[i]
        } else {
            0.0
        }
    });
    let counts = IntegralImage::from_fn(width, height, |u, v| {
        let i = (v * width + u) as usize;
        if valid[i] {
            1.0
        } else {
            0.0
        }
    });
    (sums, counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    /// Smoothing window half-width in pixels.
    pub window: u32,
    /// Adjacent-pixel depth jump (meters) treated as a surface discontinuity.
    pub max_depth_gap: f64,
}

impl Default for NormalParams {
    fn default() -> Self {
        NormalParams {
            window: 5,
            max_depth_gap: 0.05,
        }
    }
}

/// Flip a normal so it satisfies the global camera-facing convention
/// (nz <= 0; ties broken by the view ray).
pub fn orient_toward_camera(n: [f64; 3], position: [f64; 3]) -> [f64; 3] {
    let flip = n[2] > 0.0
        || (n[2] == 0.0
            && n[0] * position[0] + n[1] * position[1] + n[2] * position[2] > 0.0);
    if flip {
        [-n[0], -n[1], -n[2]]
    } else {
        n
    }
}

struct WindowMeans<'a> {
    x: &'a IntegralImage,
    y: &'a IntegralImage,
    z: &'a IntegralImage,
    count: &'a IntegralImage,
    width: u32,
    height: u32,
    window: u32,
}

impl WindowMeans<'_> {
    /// Mean valid position over the clamped window centered at `(u, v)`.
    fn mean(&self, u: i64, v: i64) -> Option<[f64; 3]> {
        let w = self.window as i64;
        let u0 = (u - w).max(0) as u32;
        let v0 = (v - w).max(0) as u32;
        let u1 = ((u + w + 1).min(self.width as i64)) as u32;
        let v1 = ((v + w + 1).min(self.height as i64)) as u32;
        if u0 >= u1 || v0 >= v1 {
            return None;
        }
        let n = self.count.window_sum(u0, v0, u1, v1);
        if n < 1.0 {
            return None;
        }
        Some([
            self.x.window_sum(u0, v0, u1, v1) / n,
            self.y.window_sum(u0, v0, u1, v1) / n,
            self.z.window_sum(u0, v0, u1, v1) / n,
        ])
    }
}

/// Estimate a camera-oriented unit normal for every valid cloud pixel.
///
/// A pixel is invalid when its window holds fewer than 3 valid samples,
/// when the window straddles a depth jump larger than `max_depth_gap`,
/// or when the smoothed tangents are degenerate.
pub fn estimate_normals(cloud: &PointCloud, params: &NormalParams) -> Result<NormalMap> {
    if params.window < 1 {
        return Err(Error::InvalidParam("normal window must be >= 1".into()));
    }
    if !(params.max_depth_gap > 0.0) {
        return Err(Error::InvalidParam("max_depth_gap must be positive".into()));
    }

    let (width, height) = (cloud.width, cloud.height);
    let n_px = (width as usize) * (height as usize);

    let xs: Vec<f64> = cloud.positions.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = cloud.positions.iter().map(|p| p[1]).collect();
    let zs: Vec<f64> = cloud.positions.iter().map(|p| p[2]).collect();
    let (ix, _) = build_integral(width, height, &xs, &cloud.valid);
    let (iy, _) = build_integral(width, height, &ys, &cloud.valid);
    let (iz, counts) = build_integral(width, height, &zs, &cloud.valid);

    // Mark both endpoints of every valid horizontal/vertical neighbor pair
    // whose depth jump exceeds the gap, then integrate so "window touches a
    // discontinuity" is a single lookup.
    let mut disc = vec![0.0; n_px];
    for v in 0..height {
        for u in 0..width {
            let i = (v * width + u) as usize;
            if !cloud.valid[i] {
                continue;
            }
            if u + 1 < width {
                let j = i + 1;
                if cloud.valid[j] && (zs[i] - zs[j]).abs() > params.max_depth_gap {
                    disc[i] = 1.0;
                    disc[j] = 1.0;
                }
            }
            if v + 1 < height {
                let j = i + width as usize;
                if cloud.valid[j] && (zs[i] - zs[j]).abs() > params.max_depth_gap {
                    disc[i] = 1.0;
                    disc[j] = 1.0;
                }
            }
        }
    }
    let idisc = IntegralImage::from_fn(width, height, |u, v| disc[(v * width + u) as usize]);

    let means = WindowMeans {
        x: &ix,
        y: &iy,
        z: &iz,
        count: &counts,
        width,
        height,
        window: params.window,
    };

    let mut normals = vec![[0.0; 3]; n_px];
    let mut valid = vec![false; n_px];
    let w = params.window as i64;

    for v in 0..height as i64 {
        for u in 0..width as i64 {
            let i = (v * width as i64 + u) as usize;
            if !cloud.valid[i] {
                continue;
            }
            let u0 = (u - w).max(0) as u32;
            let v0 = (v - w).max(0) as u32;
            let u1 = ((u + w + 1).min(width as i64)) as u32;
            let v1 = ((v + w + 1).min(height as i64)) as u32;
            if counts.window_sum(u0, v0, u1, v1) < 3.0 {
                continue;
            }
            if idisc.window_sum(u0, v0, u1, v1) > 0.0 {
                continue;
            }
            let (Some(right), Some(left), Some(down), Some(up)) = (
                means.mean(u + 1, v),
                means.mean(u - 1, v),
                means.mean(u, v + 1),
                means.mean(u, v - 1),
            ) else {
                continue;
            };
            let th = [right[0] - left[0], right[1] - left[1], right[2] - left[2]];
            let tv = [down[0] - up[0], down[1] - up[1], down[2] - up[2]];
            let cross = [
                th[1] * tv[2] - th[2] * tv[1],
                th[2] * tv[0] - th[0] * tv[2],
                th[0] * tv[1] - th[1] * tv[0],
            ];
            let norm = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
            if norm <= 0.0 {
                continue;
            }
            let n = [cross[0] / norm, cross[1] / norm, cross[2] / norm];
            normals[i] = orient_toward_camera(n, cloud.positions[i]);
            valid[i] = true;
        }
    }

    Ok(NormalMap {
        width,
        height,
        normals,
        valid,
    })
}
