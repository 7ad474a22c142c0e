//! Deterministic synthetic RGBD scenes with exact ground truth.
//!
//! Scenes are ray-cast per pixel against planes, axis-aligned boxes, and
//! spheres. Depth is quantized to raw sensor units, class/instance labels
//! and analytic normals are recorded before noise, and all randomness comes
//! from the scene seed, so noise-free renders are bit-reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::evaluate::LabelImage;
use crate::geometry::{CameraIntrinsics, ColorImage, DepthImage};
use crate::normals::{orient_toward_camera, NormalMap};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Infinite plane through `point` with the given normal.
    Plane { point: [f64; 3], normal: [f64; 3] },
    /// Axis-aligned box spanning `min..max` componentwise.
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub color: [u8; 3],
    pub class_id: u32,
    pub instance_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub intrinsics: CameraIntrinsics,
    pub primitives: Vec<Primitive>,
    /// Depth noise sigma in meters, applied after ground truth is recorded.
    #[serde(default)]
    pub depth_sigma: f64,
    /// Per-channel color noise sigma in 8-bit units.
    #[serde(default)]
    pub color_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub depth: DepthImage,
    pub color: ColorImage,
    pub class_labels: LabelImage,
    pub instance_labels: LabelImage,
    /// Analytic surface normals at the (pre-noise) hit points.
    pub normals: NormalMap,
}

/// Nearest intersection of the ray `t * dir` (camera at the origin,
/// `dir.z == 1` so the parameter equals z-depth) with a shape.
fn intersect(shape: &Shape, dir: [f64; 3]) -> Option<(f64, [f64; 3])> {
    const T_MIN: f64 = 1e-9;
    match shape {
        Shape::Plane { point, normal } => {
            let denom = dot(*normal, dir);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = dot(*normal, *point) / denom;
            (t > T_MIN).then(|| (t, normalize(*normal)))
        }
        Shape::Box { min, max } => {
            let mut t_enter = f64::NEG_INFINITY;
            let mut t_exit = f64::INFINITY;
            let mut enter_axis = 0usize;
            for a in 0..3 {
                if dir[a].abs() < 1e-15 {
                    if 0.0 < min[a] || 0.0 > max[a] {
                        return None;
                    }
                    continue;
                }
                let t1 = min[a] / dir[a];
                let t2 = max[a] / dir[a];
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                if lo > t_enter {
                    t_enter = lo;
                    enter_axis = a;
                }
                t_exit = t_exit.min(hi);
            }
            if t_enter > t_exit || t_enter <= T_MIN {
                return None;
            }
            let mut n = [0.0; 3];
            n[enter_axis] = -dir[enter_axis].signum();
            Some((t_enter, n))
        }
        Shape::Sphere { center, radius } => {
            let a = dot(dir, dir);
            let b = -2.0 * dot(dir, *center);
            let c = dot(*center, *center) - radius * radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let mut t = (-b - sq) / (2.0 * a);
            if t <= T_MIN {
                t = (-b + sq) / (2.0 * a);
            }
            if t <= T_MIN {
                return None;
            }
            let hit = [t * dir[0], t * dir[1], t * dir[2]];
            Some((
                t,
                [
                    (hit[0] - center[0]) / radius,
                    (hit[1] - center[1]) / radius,
                    (hit[2] - center[2]) / radius,
                ],
            ))
        }
    }
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Ray-cast the scene. A pixel is a hit only when the quantized depth lands
/// in the raw sensor range `[1, 65535]`; everything else is missing depth
/// and unlabeled.
pub fn render(spec: &SceneSpec) -> Result<RenderedScene> {
    spec.intrinsics.validate(spec.width, spec.height)?;
    for p in &spec.primitives {
        if let Shape::Sphere { radius, .. } = p.shape {
            if !(radius > 0.0) {
                return Err(Error::InvalidParam("sphere radius must be positive".into()));
            }
        }
        if let Shape::Plane { normal, .. } = p.shape {
            if dot(normal, normal) <= 0.0 {
                return Err(Error::InvalidParam("plane normal must be nonzero".into()));
            }
        }
    }

    let (w, h) = (spec.width, spec.height);
    let k = &spec.intrinsics;
    let n_px = (w as usize) * (h as usize);

    let mut depth = DepthImage::zeros(w, h);
    let mut color = ColorImage::filled(w, h, [0, 0, 0]);
    let mut class_labels = LabelImage::unlabeled(w, h);
    let mut instance_labels = LabelImage::unlabeled(w, h);
    let mut normals = NormalMap {
        width: w,
        height: h,
        normals: vec![[0.0; 3]; n_px],
        valid: vec![false; n_px],
    };

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let depth_noise = (spec.depth_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.depth_sigma))
        .transpose()
        .map_err(|e| Error::InvalidParam(format!("depth_sigma: {e}")))?;
    let color_noise = (spec.color_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.color_sigma))
        .transpose()
        .map_err(|e| Error::InvalidParam(format!("color_sigma: {e}")))?;

    for v in 0..h {
        for u in 0..w {
            let dir = [
                (u as f64 - k.cx) / k.fx,
                (v as f64 - k.cy) / k.fy,
                1.0,
            ];
            let mut nearest: Option<(f64, usize, [f64; 3])> = None;
            for (pi, prim) in spec.primitives.iter().enumerate() {
                if let Some((t, n)) = intersect(&prim.shape, dir) {
                    if nearest.map_or(true, |(best, _, _)| t < best) {
                        nearest = Some((t, pi, n));
                    }
                }
            }
            let Some((z, pi, n)) = nearest else {
                continue;
            };
            let raw = (z / k.depth_scale).round();
            if !(1.0..=u16::MAX as f64).contains(&raw) {
                continue;
            }
            let i = (v * w + u) as usize;
            let prim = &spec.primitives[pi];

            // Ground truth first, then noise.
            class_labels.data[i] = prim.class_id;
            instance_labels.data[i] = prim.instance_id;
            let hit = [z * dir[0], z * dir[1], z * dir[2]];
            normals.normals[i] = orient_toward_camera(n, hit);
            normals.valid[i] = true;

            let noisy_raw = match &depth_noise {
                Some(dist) => ((z + dist.sample(&mut rng)) / k.depth_scale).round(),
                None => raw,
            };
            depth.data[i] = if (1.0..=u16::MAX as f64).contains(&noisy_raw) {
                noisy_raw as u16
            } else {
                0
            };
            color.data[i] = match &color_noise {
                Some(dist) => {
                    let mut px = [0u8; 3];
                    for c in 0..3 {
                        let x = prim.color[c] as f64 + dist.sample(&mut rng);
                        px[c] = x.round().clamp(0.0, 255.0) as u8;
                    }
                    px
                }
                None => prim.color,
            };
        }
    }

    Ok(RenderedScene {
        depth,
        color,
        class_labels,
        instance_labels,
        normals,
    })
}

/// Class ids used by the generated desk-scale suite.
pub const SUITE_CLASS_FLOOR: u32 = 0;
pub const SUITE_CLASS_BOX: u32 = 1;
pub const SUITE_CLASS_SPHERE: u32 = 2;
pub const SUITE_CLASSES: usize = 3;

fn jitter_color(rng: &mut ChaCha12Rng, base: [u8; 3], amount: f64) -> [u8; 3] {
    let mut out = [0u8; 3];
    for c in 0..3 {
        let x = base[c] as f64 + rand::Rng::gen_range(rng, -amount..amount);
        out[c] = x.round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// One random scene of the verification suite: a floor plane plus 1-3 boxes
/// and 0-2 spheres resting on it, each class in its own color family.
pub fn suite_scene(
    seed: u64,
    width: u32,
    height: u32,
    depth_sigma: f64,
    color_sigma: f64,
) -> SceneSpec {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let floor_y = 0.8;
    let mut primitives = Vec::new();
    let mut instance = 0u32;

    primitives.push(Primitive {
        shape: Shape::Plane {
            point: [0.0, floor_y, 0.0],
            normal: [0.0, -1.0, 0.0],
        },
        color: jitter_color(&mut rng, [120, 100, 80], 20.0),
        class_id: SUITE_CLASS_FLOOR,
        instance_id: instance,
    });
    instance += 1;

    let n_boxes = rand::Rng::gen_range(&mut rng, 1..=3usize);
    let mut box_slots = [-0.8f64, 0.0, 0.8];
    // Light shuffle so slot choice varies between scenes.
    for i in (1..box_slots.len()).rev() {
        box_slots.swap(i, rand::Rng::gen_range(&mut rng, 0..=i));
    }
    for b in 0..n_boxes {
        let cx = box_slots[b] + rand::Rng::gen_range(&mut rng, -0.12..0.12);
        let bw = rand::Rng::gen_range(&mut rng, 0.3..0.55);
        let bh = rand::Rng::gen_range(&mut rng, 0.3..0.5);
        let bd = rand::Rng::gen_range(&mut rng, 0.3..0.5);
        let z0 = rand::Rng::gen_range(&mut rng, 2.25..3.0);
        primitives.push(Primitive {
            shape: Shape::Box {
                min: [cx - bw / 2.0, floor_y - bh, z0],
                max: [cx + bw / 2.0, floor_y, z0 + bd],
            },
            color: jitter_color(&mut rng, [190, 60, 50], 35.0),
            class_id: SUITE_CLASS_BOX,
            instance_id: instance,
        });
        instance += 1;
    }

    let n_spheres = rand::Rng::gen_range(&mut rng, 0..=2usize);
    let mut sphere_slots = [-0.55f64, 0.55];
    if rand::Rng::gen_bool(&mut rng, 0.5) {
        sphere_slots.swap(0, 1);
    }
    for s in 0..n_spheres {
        let r = rand::Rng::gen_range(&mut rng, 0.13..0.2);
        let cx = sphere_slots[s] + rand::Rng::gen_range(&mut rng, -0.08..0.08);
        let cz = rand::Rng::gen_range(&mut rng, 1.85..2.05);
        primitives.push(Primitive {
            shape: Shape::Sphere {
                center: [cx, floor_y - r, cz],
                radius: r,
            },
            color: jitter_color(&mut rng, [60, 90, 190], 35.0),
            class_id: SUITE_CLASS_SPHERE,
            instance_id: instance,
        });
        instance += 1;
    }

    SceneSpec {
        width,
        height,
        intrinsics: CameraIntrinsics::kinect_default(width, height),
        primitives,
        depth_sigma,
        color_sigma,
        seed: splitmix(seed),
    }
}

/// The full verification suite: `count` scenes with per-scene seeds derived
/// from `seed`.
pub fn suite(
    seed: u64,
    count: usize,
    width: u32,
    height: u32,
    depth_sigma: f64,
    color_sigma: f64,
) -> Vec<SceneSpec> {
    (0..count)
        .map(|i| {
            suite_scene(
                splitmix(seed ^ (i as u64 + 1)),
                width,
                height,
                depth_sigma,
                color_sigma,
            )
        })
        .collect()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
