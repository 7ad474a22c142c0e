//! Voxel-graph over-segmentation.
//!
//! Valid pixels (those with both a position and a normal) become graph nodes
//! connected to their 8-neighbors. Each edge carries a single non-linear
//! weight, the max of the normal distance and the rescaled Lab color
//! distance, and the graph is merged with the Felzenszwalb-Huttenlocher
//! adaptive-threshold criterion followed by a small-component absorption
//! pass.

use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;
use crate::normals::NormalMap;
use crate::{Error, Result};

/// Region id for pixels outside every region.
pub const NO_REGION: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub weight: f64,
}

/// Pixel-indexed graph over the image grid. `valid` marks the pixels that
/// participate; every edge connects two valid 8-neighbors.
#[derive(Debug, Clone)]
pub struct VoxelGraph {
    pub width: u32,
    pub height: u32,
    pub valid: Vec<bool>,
    pub edges: Vec<Edge>,
}

impl VoxelGraph {
    pub fn node_count(&self) -> usize {
        self.valid.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FHParams {
    /// Threshold-function scale, same units as the edge weight.
    pub k: f64,
    /// Components smaller than this are absorbed into their
    /// lowest-weight-connected neighbor.
    pub min_size: usize,
}

impl Default for FHParams {
    fn default() -> Self {
        FHParams {
            k: 1.0,
            min_size: 50,
        }
    }
}

impl FHParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::InvalidParam(format!("fh k must be > 0 (got {})", self.k)));
        }
        if self.min_size < 1 {
            return Err(Error::InvalidParam("fh min_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel dense region ids plus the region roster.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMap {
    pub width: u32,
    pub height: u32,
    /// `NO_REGION` for pixels outside every region.
    pub ids: Vec<u32>,
    pub region_sizes: Vec<u32>,
}

impl SegmentMap {
    pub fn num_regions(&self) -> usize {
        self.region_sizes.len()
    }

    #[inline]
    pub fn region_of(&self, u: u32, v: u32) -> Option<u32> {
        let id = self.ids[(v * self.width + u) as usize];
        (id != NO_REGION).then_some(id)
    }

    /// Densify arbitrary per-pixel labels into region ids ordered by first
    /// row-major occurrence. `labels` entries for invalid pixels are ignored.
    pub fn from_labels(width: u32, height: u32, labels: &[u32], valid: &[bool]) -> Self {
        assert_eq!(labels.len(), (width as usize) * (height as usize));
        assert_eq!(valid.len(), labels.len());
        let mut remap: Vec<u32> = vec![NO_REGION; labels.len().max(1)];
        let mut ids = vec![NO_REGION; labels.len()];
        let mut region_sizes = Vec::new();
        for i in 0..labels.len() {
            if !valid[i] {
                continue;
            }
            let l = labels[i] as usize;
            if remap[l] == NO_REGION {
                remap[l] = region_sizes.len() as u32;
                region_sizes.push(0);
            }
            ids[i] = remap[l];
            region_sizes[remap[l] as usize] += 1;
        }
        SegmentMap {
            width,
            height,
            ids,
            region_sizes,
        }
    }
}

/// The single non-linear edge weight: max of the Euclidean normal distance
/// and the rescaled Euclidean Lab distance.
#[inline]
pub fn edge_weight(
    n1: [f64; 3],
    n2: [f64; 3],
    c1: [f64; 3],
    c2: [f64; 3],
    lab_scale: f64,
) -> f64 {
    let dn = ((n1[0] - n2[0]).powi(2) + (n1[1] - n2[1]).powi(2) + (n1[2] - n2[2]).powi(2)).sqrt();
    let dc = ((c1[0] - c2[0]).powi(2) + (c1[1] - c2[1]).powi(2) + (c1[2] - c2[2]).powi(2)).sqrt();
    dn.max(lab_scale * dc)
}

/// Build the 8-neighbor voxel graph. A pixel participates only when it has
/// both a valid position and a valid normal; pixels with invalid normals
/// contribute no edges.
pub fn build_voxel_graph(
    cloud: &PointCloud,
    normals: &NormalMap,
    lab_scale: f64,
) -> Result<VoxelGraph> {
    if cloud.width != normals.width || cloud.height != normals.height {
        return Err(Error::DimensionMismatch(format!(
            "cloud is {}x{} but normal map is {}x{}",
            cloud.width, cloud.height, normals.width, normals.height
        )));
    }
    if !(lab_scale > 0.0) {
        return Err(Error::InvalidParam("lab_scale must be positive".into()));
    }

    let (w, h) = (cloud.width as i64, cloud.height as i64);
    let valid: Vec<bool> = cloud
        .valid
        .iter()
        .zip(&normals.valid)
        .map(|(a, b)| *a && *b)
        .collect();

    // One-sided 8-neighborhood so each unordered pair appears once.
    const OFFSETS: [(i64, i64); 4] = [(1, 0), (-1, 1), (0, 1), (1, 1)];
    let mut edges = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let i = (v * w + u) as usize;
            if !valid[i] {
                continue;
            }
            for (du, dv) in OFFSETS {
                let (nu, nv) = (u + du, v + dv);
                if nu < 0 || nu >= w || nv >= h {
                    continue;
                }
                let j = (nv * w + nu) as usize;
                if !valid[j] {
                    continue;
                }
                edges.push(Edge {
                    a: i.min(j) as u32,
                    b: i.max(j) as u32,
                    weight: edge_weight(
                        normals.normals[i],
                        normals.normals[j],
                        cloud.lab[i],
                        cloud.lab[j],
                        lab_scale,
                    ),
                });
            }
        }
    }

    Ok(VoxelGraph {
        width: cloud.width,
        height: cloud.height,
        valid,
        edges,
    })
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
    /// Max weight of any edge merged inside the component.
    int_diff: Vec<f64>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            int_diff: vec![0.0; n],
        }
    }

    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    /// Union by size; ties keep the smaller root index.
    fn union(&mut self, a: u32, b: u32, edge_weight: f64) -> u32 {
        let (big, small) = if self.size[a as usize] > self.size[b as usize]
            || (self.size[a as usize] == self.size[b as usize] && a < b)
        {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        self.int_diff[big as usize] = self.int_diff[big as usize]
            .max(self.int_diff[small as usize])
            .max(edge_weight);
        big
    }
}

/// Sort edge indices by (weight, smaller node id, larger node id).
fn sorted_edge_order(edges: &[Edge]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&i, &j| {
        let (e, f) = (&edges[i], &edges[j]);
        e.weight
            .total_cmp(&f.weight)
            .then(e.a.cmp(&f.a))
            .then(e.b.cmp(&f.b))
    });
    order
}

/// Felzenszwalb-Huttenlocher merging over an arbitrary edge list.
///
/// Edges are processed in non-decreasing weight order (ties broken by node
/// ids); two components merge when the edge weight is at most
/// `min(Int(A) + k/|A|, Int(B) + k/|B|)`. A second pass over the same order
/// then absorbs every component smaller than `min_size` through its
/// lowest-weight outgoing edge, cascading until the merged component reaches
/// the size floor or runs out of edges. Returns one label per node, densified
/// by first occurrence.
pub fn fh_components(node_count: usize, edges: &[Edge], params: &FHParams) -> Result<Vec<u32>> {
    params.validate()?;
    for e in edges {
        if !e.weight.is_finite() || e.weight < 0.0 {
            return Err(Error::InvalidInput(format!(
                "edge ({}, {}) has non-finite or negative weight {}",
                e.a, e.b, e.weight
            )));
        }
        if e.a as usize >= node_count || e.b as usize >= node_count {
            return Err(Error::InvalidInput(format!(
                "edge ({}, {}) out of range for {} nodes",
                e.a, e.b, node_count
            )));
        }
    }

    let order = sorted_edge_order(edges);
    let mut uf = UnionFind::new(node_count);

    for &ei in &order {
        let e = &edges[ei];
        let ra = uf.find(e.a);
        let rb = uf.find(e.b);
        if ra == rb {
            continue;
        }
        let ta = uf.int_diff[ra as usize] + params.k / uf.size[ra as usize] as f64;
        let tb = uf.int_diff[rb as usize] + params.k / uf.size[rb as usize] as f64;
        if e.weight <= ta.min(tb) {
            uf.union(ra, rb, e.weight);
        }
    }

    if params.min_size > 1 {
        for &ei in &order {
            let e = &edges[ei];
            let ra = uf.find(e.a);
            let rb = uf.find(e.b);
            if ra == rb {
                continue;
            }
            if (uf.size[ra as usize] as usize) < params.min_size
                || (uf.size[rb as usize] as usize) < params.min_size
            {
                uf.union(ra, rb, e.weight);
            }
        }
    }

    let mut labels = vec![0u32; node_count];
    for i in 0..node_count {
        labels[i] = uf.find(i as u32);
    }
    Ok(labels)
}

/// Segment the voxel graph into a dense, deterministic region map.
pub fn segment_graph(g: &VoxelGraph, params: &FHParams) -> Result<SegmentMap> {
    let labels = fh_components(g.node_count(), &g.edges, params)?;
    Ok(SegmentMap::from_labels(g.width, g.height, &labels, &g.valid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn grid_graph(width: u32, height: u32, weight: impl Fn(usize, usize) -> f64) -> VoxelGraph {
        let n = (width * height) as usize;
        let valid = vec![true; n];
        let mut edges = Vec::new();
        const OFFSETS: [(i64, i64); 4] = [(1, 0), (-1, 1), (0, 1), (1, 1)];
        for v in 0..height as i64 {
            for u in 0..width as i64 {
                for (du, dv) in OFFSETS {
                    let (nu, nv) = (u + du, v + dv);
                    if nu < 0 || nu >= width as i64 || nv >= height as i64 {
                        continue;
                    }
                    let i = (v * width as i64 + u) as usize;
                    let j = (nv * width as i64 + nu) as usize;
                    edges.push(Edge {
                        a: i.min(j) as u32,
                        b: i.max(j) as u32,
                        weight: weight(i, j),
                    });
                }
            }
        }
        VoxelGraph {
            width,
            height,
            valid,
            edges,
        }
    }

    #[test]
    fn edge_weight_examples() {
        let n = [0.0, 0.0, -1.0];
        let c = [50.0, 10.0, -20.0];
        assert_eq!(edge_weight(n, n, c, c, 0.01), 0.0);

        let w = edge_weight([0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], c, c, 0.01);
        assert!((w - std::f64::consts::SQRT_2).abs() < 1e-12);

        let w = edge_weight(n, n, [100.0, 0.0, 0.0], [0.0, 0.0, 0.0], 0.01);
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_grid_has_six_edges() {
        let g = grid_graph(2, 2, |_, _| 0.0);
        assert_eq!(g.edges.len(), 6);
    }

    #[test]
    fn single_pixel_has_no_edges() {
        let g = grid_graph(1, 1, |_, _| 0.0);
        assert_eq!(g.edges.len(), 0);
    }

    #[test]
    fn invalid_center_drops_its_edges() {
        // A full 3x3 grid has 20 edges; the center pixel is incident to 8.
        let mut g = grid_graph(3, 3, |_, _| 0.0);
        assert_eq!(g.edges.len(), 20);
        g.valid[4] = false;
        g.edges.retain(|e| e.a != 4 && e.b != 4);
        assert_eq!(g.edges.len(), 12);
    }

    #[test]
    fn zero_weights_merge_into_connected_components() {
        let g = grid_graph(4, 4, |_, _| 0.0);
        let seg = segment_graph(
            &g,
            &FHParams {
                k: 0.001,
                min_size: 1,
            },
        )
        .unwrap();
        assert_eq!(seg.num_regions(), 1);
        assert_eq!(seg.region_sizes[0], 16);
    }

    #[test]
    fn color_jump_splits_two_patches() {
        // Two 4x4 patches; edges crossing the middle carry a large weight.
        let col = |i: usize| i % 8;
        let g = grid_graph(8, 4, |i, j| {
            let (a, b) = (col(i), col(j));
            if (a < 4) == (b < 4) {
                0.0
            } else {
                10.0
            }
        });
        let seg = segment_graph(
            &g,
            &FHParams {
                k: 0.01,
                min_size: 1,
            },
        )
        .unwrap();
        assert_eq!(seg.num_regions(), 2);
        assert_eq!(seg.region_of(0, 0), seg.region_of(3, 3));
        assert_ne!(seg.region_of(3, 0), seg.region_of(4, 0));
    }

    #[test]
    fn min_size_above_total_collapses_each_component() {
        let g = grid_graph(4, 4, |i, j| (i * 31 + j) as f64 * 1e-3 + 0.5);
        let seg = segment_graph(
            &g,
            &FHParams {
                k: 1e-9,
                min_size: 1000,
            },
        )
        .unwrap();
        assert_eq!(seg.num_regions(), 1);
    }

    #[test]
    fn region_ids_are_dense_and_sizes_add_up() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let g = grid_graph(10, 10, |_, _| 0.0);
        let mut g = g;
        for e in &mut g.edges {
            e.weight = rng.gen_range(0.0..1.0);
        }
        for i in 0..g.valid.len() {
            g.valid[i] = rng.gen_bool(0.9);
        }
        g.edges.retain(|e| g.valid[e.a as usize] && g.valid[e.b as usize]);
        let seg = segment_graph(&g, &FHParams { k: 0.3, min_size: 2 }).unwrap();
        let valid_count = g.valid.iter().filter(|v| **v).count() as u32;
        assert_eq!(seg.region_sizes.iter().sum::<u32>(), valid_count);
        // Every id below num_regions occurs; invalid pixels carry NO_REGION.
        let mut seen = vec![false; seg.num_regions()];
        for (i, &id) in seg.ids.iter().enumerate() {
            if g.valid[i] {
                seen[id as usize] = true;
            } else {
                assert_eq!(id, NO_REGION);
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn segmentation_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut g = grid_graph(12, 9, |_, _| 0.0);
        for e in &mut g.edges {
            e.weight = rng.gen_range(0.0..2.0);
        }
        let p = FHParams {
            k: 0.5,
            min_size: 4,
        };
        let a = segment_graph(&g, &p).unwrap();
        let b = segment_graph(&g, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn increasing_k_never_increases_region_count() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        for _ in 0..50 {
            let mut g = grid_graph(6, 5, |_, _| 0.0);
            for e in &mut g.edges {
                e.weight = rng.gen_range(0.0..1.0);
            }
            let mut last = usize::MAX;
            for step in 1..=20 {
                let k = step as f64 * 0.05;
                let seg = segment_graph(&g, &FHParams { k, min_size: 1 }).unwrap();
                assert!(
                    seg.num_regions() <= last,
                    "region count grew from {} to {} at k={}",
                    last,
                    seg.num_regions(),
                    k
                );
                last = seg.num_regions();
            }
        }
    }
}
