//! Region descriptors and the histogram-driven merge hierarchy.
//!
//! Each region carries nine 1-D histograms (Lab color, 3D position, surface
//! normal components) plus geometric scalars. Adjacent regions form the
//! S-graph, weighted by the sum of absolute differences between normalized
//! histograms, and greedy agglomeration over that graph yields a dendrogram
//! that a threshold cut flattens back into a segmentation.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;
use crate::normals::NormalMap;
use crate::oversegment::{SegmentMap, NO_REGION};
use crate::{Error, Result};

/// Histogram channels, in order: L, a, b, x, y, z, nx, ny, nz.
pub const NUM_CHANNELS: usize = 9;

/// Upper bound of the histogram distance: each of the nine channels is an L1
/// distance between two unit-mass histograms, so at most 2 per channel.
pub const MAX_HISTOGRAM_DISTANCE: f64 = 18.0;

pub const CHANNEL_NAMES: [&str; NUM_CHANNELS] =
    ["l", "a", "b", "x", "y", "z", "nx", "ny", "nz"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelBins {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
}

impl ChannelBins {
    /// Fixed-edge bin index with clamping to the outer bins.
    #[inline]
    pub fn bin_index(&self, value: f64) -> usize {
        let t = (value - self.min) / (self.max - self.min);
        let b = (t * self.bins as f64).floor();
        if b < 0.0 {
            0
        } else if b >= self.bins as f64 {
            self.bins - 1
        } else {
            b as usize
        }
    }
}

/// Per-channel bin ranges shared by every descriptor in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramLayout {
    pub channels: [ChannelBins; NUM_CHANNELS],
}

impl Default for HistogramLayout {
    fn default() -> Self {
        let hist20 = |min, max| ChannelBins { min, max, bins: 20 };
        let hist30 = |min, max| ChannelBins { min, max, bins: 30 };
        HistogramLayout {
            channels: [
                hist20(0.0, 100.0),   // L
                hist20(-110.0, 110.0), // a
                hist20(-110.0, 110.0), // b
                hist30(-4.0, 4.0),    // x
                hist30(-4.0, 4.0),    // y
                hist30(0.0, 8.0),     // z
                hist30(-1.0, 1.0),    // nx
                hist30(-1.0, 1.0),    // ny
                hist30(-1.0, 1.0),    // nz
            ],
        }
    }
}

impl HistogramLayout {
    pub fn validate(&self) -> Result<()> {
        for (name, ch) in CHANNEL_NAMES.iter().zip(&self.channels) {
            if !(ch.min < ch.max) || ch.bins == 0 {
                return Err(Error::InvalidParam(format!(
                    "histogram channel {name}: need min < max and bins >= 1 \
                     (min={}, max={}, bins={})",
                    ch.min, ch.max, ch.bins
                )));
            }
        }
        Ok(())
    }
}

/// Raw-count histograms plus geometric scalars for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionDescriptor {
    /// Raw (unnormalized) per-channel counts; each sums to `voxel_count`.
    pub hist: [Vec<f64>; NUM_CHANNELS],
    pub voxel_count: usize,
    /// Bounding-volume diagonal extent in meters.
    pub size_3d: f64,
    pub width_3d: f64,
    pub height_3d: f64,
    pub centroid_2d: [f64; 2],
    pub centroid_3d: [f64; 3],
    pub min_3d: [f64; 3],
    pub max_3d: [f64; 3],
}

impl RegionDescriptor {
    fn same_layout(&self, other: &RegionDescriptor) -> bool {
        self.hist
            .iter()
            .zip(&other.hist)
            .all(|(a, b)| a.len() == b.len())
    }
}

struct DescriptorAccum {
    hist: [Vec<f64>; NUM_CHANNELS],
    count: usize,
    sum_2d: [f64; 2],
    sum_3d: [f64; 3],
    min_3d: [f64; 3],
    max_3d: [f64; 3],
}

impl DescriptorAccum {
    fn new(layout: &HistogramLayout) -> Self {
        DescriptorAccum {
            hist: std::array::from_fn(|c| vec![0.0; layout.channels[c].bins]),
            count: 0,
            sum_2d: [0.0; 2],
            sum_3d: [0.0; 3],
            min_3d: [f64::INFINITY; 3],
            max_3d: [f64::NEG_INFINITY; 3],
        }
    }

    fn add(
        &mut self,
        layout: &HistogramLayout,
        pixel: (u32, u32),
        pos: [f64; 3],
        lab: [f64; 3],
        normal: [f64; 3],
    ) {
        let values = [
            lab[0], lab[1], lab[2], pos[0], pos[1], pos[2], normal[0], normal[1], normal[2],
        ];
        for c in 0..NUM_CHANNELS {
            let b = layout.channels[c].bin_index(values[c]);
            self.hist[c][b] += 1.0;
        }
        self.count += 1;
        self.sum_2d[0] += pixel.0 as f64;
        self.sum_2d[1] += pixel.1 as f64;
        for a in 0..3 {
            self.sum_3d[a] += pos[a];
            self.min_3d[a] = self.min_3d[a].min(pos[a]);
            self.max_3d[a] = self.max_3d[a].max(pos[a]);
        }
    }

    fn finish(self) -> RegionDescriptor {
        let n = self.count as f64;
        descriptor_from_parts(
            self.hist,
            self.count,
            [self.sum_2d[0] / n, self.sum_2d[1] / n],
            [self.sum_3d[0] / n, self.sum_3d[1] / n, self.sum_3d[2] / n],
            self.min_3d,
            self.max_3d,
        )
    }
}

/// Width/height/size are derived from the componentwise extents.
fn descriptor_from_parts(
    hist: [Vec<f64>; NUM_CHANNELS],
    voxel_count: usize,
    centroid_2d: [f64; 2],
    centroid_3d: [f64; 3],
    min_3d: [f64; 3],
    max_3d: [f64; 3],
) -> RegionDescriptor {
    let ext = [
        max_3d[0] - min_3d[0],
        max_3d[1] - min_3d[1],
        max_3d[2] - min_3d[2],
    ];
    RegionDescriptor {
        hist,
        voxel_count,
        size_3d: (ext[0] * ext[0] + ext[1] * ext[1] + ext[2] * ext[2]).sqrt(),
        width_3d: ext[0],
        height_3d: ext[1],
        centroid_2d,
        centroid_3d,
        min_3d,
        max_3d,
    }
}

/// Descriptor of a single region given its voxels. All slices are parallel.
pub fn region_descriptor(
    pixels: &[(u32, u32)],
    positions: &[[f64; 3]],
    labs: &[[f64; 3]],
    normals: &[[f64; 3]],
    layout: &HistogramLayout,
) -> Result<RegionDescriptor> {
    layout.validate()?;
    if pixels.is_empty() {
        return Err(Error::InvalidInput("empty region".into()));
    }
    if positions.len() != pixels.len() || labs.len() != pixels.len() || normals.len() != pixels.len()
    {
        return Err(Error::DimensionMismatch(
            "region voxel arrays have unequal lengths".into(),
        ));
    }
    let mut acc = DescriptorAccum::new(layout);
    for i in 0..pixels.len() {
        acc.add(layout, pixels[i], positions[i], labs[i], normals[i]);
    }
    Ok(acc.finish())
}

/// Descriptors for every region of a segmentation, in region-id order.
pub fn compute_descriptors(
    seg: &SegmentMap,
    cloud: &PointCloud,
    normals: &NormalMap,
    layout: &HistogramLayout,
) -> Result<Vec<RegionDescriptor>> {
    layout.validate()?;
    if seg.width != cloud.width || seg.height != cloud.height {
        return Err(Error::DimensionMismatch(format!(
            "segment map is {}x{} but cloud is {}x{}",
            seg.width, seg.height, cloud.width, cloud.height
        )));
    }
    let mut accums: Vec<DescriptorAccum> = (0..seg.num_regions())
        .map(|_| DescriptorAccum::new(layout))
        .collect();
    for v in 0..seg.height {
        for u in 0..seg.width {
            let i = (v * seg.width + u) as usize;
            let id = seg.ids[i];
            if id == NO_REGION {
                continue;
            }
            debug_assert!(cloud.valid[i] && normals.valid[i]);
            accums[id as usize].add(
                layout,
                (u, v),
                cloud.positions[i],
                cloud.lab[i],
                normals.normals[i],
            );
        }
    }
    if accums.iter().any(|a| a.count == 0) {
        return Err(Error::InvalidInput("segment map contains an empty region".into()));
    }
    Ok(accums.into_iter().map(|a| a.finish()).collect())
}

/// Sum of absolute differences between the count-normalized histograms of
/// two regions, accumulated channel-major. Symmetric, in `[0, 18]`.
pub fn histogram_distance(r: &RegionDescriptor, s: &RegionDescriptor) -> Result<f64> {
    if !r.same_layout(s) {
        return Err(Error::InvalidInput(
            "histogram distance between descriptors with different bin layouts".into(),
        ));
    }
    let rn = r.voxel_count as f64;
    let sn = s.voxel_count as f64;
    let mut acc = 0.0;
    for c in 0..NUM_CHANNELS {
        for (rv, sv) in r.hist[c].iter().zip(&s.hist[c]) {
            acc += (rv / rn - sv / sn).abs();
        }
    }
    Ok(acc)
}

/// Combine two descriptors exactly: counts add, extents take componentwise
/// min/max, centroids combine count-weighted, derived scalars recompute.
pub fn merge_descriptors(a: &RegionDescriptor, b: &RegionDescriptor) -> RegionDescriptor {
    debug_assert!(a.same_layout(b));
    let hist = std::array::from_fn(|c| {
        a.hist[c]
            .iter()
            .zip(&b.hist[c])
            .map(|(x, y)| x + y)
            .collect()
    });
    let (na, nb) = (a.voxel_count as f64, b.voxel_count as f64);
    let n = na + nb;
    let wavg2 = |x: [f64; 2], y: [f64; 2]| {
        [(x[0] * na + y[0] * nb) / n, (x[1] * na + y[1] * nb) / n]
    };
    let wavg3 = |x: [f64; 3], y: [f64; 3]| {
        [
            (x[0] * na + y[0] * nb) / n,
            (x[1] * na + y[1] * nb) / n,
            (x[2] * na + y[2] * nb) / n,
        ]
    };
    descriptor_from_parts(
        hist,
        a.voxel_count + b.voxel_count,
        wavg2(a.centroid_2d, b.centroid_2d),
        wavg3(a.centroid_3d, b.centroid_3d),
        [
            a.min_3d[0].min(b.min_3d[0]),
            a.min_3d[1].min(b.min_3d[1]),
            a.min_3d[2].min(b.min_3d[2]),
        ],
        [
            a.max_3d[0].max(b.max_3d[0]),
            a.max_3d[1].max(b.max_3d[1]),
            a.max_3d[2].max(b.max_3d[2]),
        ],
    )
}

/// Region adjacency graph: one node per region, one edge per 8-neighboring
/// region pair, weighted by the histogram distance at construction time.
#[derive(Debug, Clone)]
pub struct SGraph {
    pub descriptors: Vec<RegionDescriptor>,
    /// `(a, b, weight)` with `a < b`, in (a, b) order.
    pub edges: Vec<(u32, u32, f64)>,
}

/// Build the S-graph from a segmentation and its per-region descriptors.
pub fn build_sgraph(seg: &SegmentMap, descriptors: Vec<RegionDescriptor>) -> Result<SGraph> {
    if descriptors.len() != seg.num_regions() {
        return Err(Error::DimensionMismatch(format!(
            "{} descriptors for {} regions",
            descriptors.len(),
            seg.num_regions()
        )));
    }
    let (w, h) = (seg.width as i64, seg.height as i64);
    const OFFSETS: [(i64, i64); 4] = [(1, 0), (-1, 1), (0, 1), (1, 1)];
    let mut pairs: BTreeSet<(u32, u32)> = BTreeSet::new();
    for v in 0..h {
        for u in 0..w {
            let a = seg.ids[(v * w + u) as usize];
            if a == NO_REGION {
                continue;
            }
            for (du, dv) in OFFSETS {
                let (nu, nv) = (u + du, v + dv);
                if nu < 0 || nu >= w || nv >= h {
                    continue;
                }
                let b = seg.ids[(nv * w + nu) as usize];
                if b == NO_REGION || b == a {
                    continue;
                }
                pairs.insert((a.min(b), a.max(b)));
            }
        }
    }
    let mut edges = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let w = histogram_distance(&descriptors[a as usize], &descriptors[b as usize])?;
        edges.push((a, b, w));
    }
    Ok(SGraph { descriptors, edges })
}

/// One agglomerative merge: `left < right` are cluster ids (leaves are
/// `0..leaf_count`, merge `i` creates cluster `leaf_count + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub cost: f64,
}

/// Binary merge forest over the initial regions, in merge order.
#[derive(Debug, Clone)]
pub struct Dendrogram {
    pub leaf_count: usize,
    pub merges: Vec<Merge>,
    /// Descriptor of the cluster created by each merge.
    pub merged_descriptors: Vec<RegionDescriptor>,
}

impl Dendrogram {
    /// Number of clusters left after all merges (one per connected
    /// component of the S-graph).
    pub fn component_count(&self) -> usize {
        self.leaf_count - self.merges.len()
    }

    /// Text dump, one `merge <order> <a> <b> cost=<..>` line per merge.
    pub fn write_debug(&self, mut w: impl Write) -> std::io::Result<()> {
        for (i, m) in self.merges.iter().enumerate() {
            writeln!(w, "merge {} {} {} cost={}", i, m.left, m.right, m.cost)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    cost: f64,
    a: usize,
    b: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy agglomeration: repeatedly merge the adjacent cluster pair with the
/// minimum histogram distance (ties toward the smaller id pair), recompute
/// the merged descriptor exactly, re-target edges, and repeat until one
/// cluster per connected component remains.
pub fn build_dendrogram(g: &SGraph) -> Result<Dendrogram> {
    let n = g.descriptors.len();
    let capacity = 2 * n;
    let mut descriptors: Vec<RegionDescriptor> = Vec::with_capacity(capacity);
    descriptors.extend(g.descriptors.iter().cloned());
    let mut alive = vec![true; n];
    let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut heap: BinaryHeap<std::cmp::Reverse<HeapEntry>> = BinaryHeap::new();

    for &(a, b, w) in &g.edges {
        let (a, b) = (a as usize, b as usize);
        adjacency[a].insert(b);
        adjacency[b].insert(a);
        heap.push(std::cmp::Reverse(HeapEntry { cost: w, a, b }));
    }

    let mut merges = Vec::new();
    let mut merged_descriptors = Vec::new();

    while let Some(std::cmp::Reverse(entry)) = heap.pop() {
        // Entries referencing a dead cluster are stale; live descriptors are
        // immutable, so any entry between two live clusters is current.
        if !alive[entry.a] || !alive[entry.b] {
            continue;
        }
        let m = descriptors.len();
        let merged = merge_descriptors(&descriptors[entry.a], &descriptors[entry.b]);
        merges.push(Merge {
            left: entry.a,
            right: entry.b,
            cost: entry.cost,
        });

        let neighbors: BTreeSet<usize> = adjacency[entry.a]
            .iter()
            .chain(adjacency[entry.b].iter())
            .copied()
            .filter(|&x| x != entry.a && x != entry.b)
            .collect();
        alive[entry.a] = false;
        alive[entry.b] = false;
        adjacency[entry.a].clear();
        adjacency[entry.b].clear();

        let mut adj_m = BTreeSet::new();
        for nb in neighbors {
            adjacency[nb].remove(&entry.a);
            adjacency[nb].remove(&entry.b);
            adjacency[nb].insert(m);
            adj_m.insert(nb);
            let cost = histogram_distance(&merged, &descriptors[nb])?;
            heap.push(std::cmp::Reverse(HeapEntry { cost, a: nb, b: m }));
        }

        merged_descriptors.push(merged.clone());
        descriptors.push(merged);
        adjacency.push(adj_m);
        alive.push(true);
    }

    Ok(Dendrogram {
        leaf_count: n,
        merges,
        merged_descriptors,
    })
}

/// Replay the merge sequence, applying every merge whose recorded cost is at
/// most `cut * 18`, and return the resulting dense cluster id per leaf.
/// Skipped merges do not block later qualifying merges.
pub fn cut_assignments(d: &Dendrogram, cut: f64) -> Result<Vec<u32>> {
    if !(0.0..=1.0).contains(&cut) {
        return Err(Error::InvalidParam(format!("tree cut must be in [0,1], got {cut}")));
    }
    let threshold = cut * MAX_HISTOGRAM_DISTANCE;
    let n = d.leaf_count;

    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn find(parent: &mut [u32], x: u32) -> u32 {
        let mut root = x;
        while parent[root as usize] != root {
            root = parent[root as usize];
        }
        let mut cur = x;
        while parent[cur as usize] != root {
            let next = parent[cur as usize];
            parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    // Representative leaf of each cluster id, defined regardless of whether
    // the merge that created the cluster qualified.
    let mut rep: Vec<u32> = (0..n as u32).collect();
    for m in &d.merges {
        rep.push(rep[m.left]);
        if m.cost <= threshold {
            let ra = find(&mut parent, rep[m.left]);
            let rb = find(&mut parent, rep[m.right]);
            if ra != rb {
                parent[ra.max(rb) as usize] = ra.min(rb);
            }
        }
    }

    let mut dense: Vec<u32> = vec![NO_REGION; n];
    let mut next = 0u32;
    let mut out = vec![0u32; n];
    for leaf in 0..n {
        let root = find(&mut parent, leaf as u32) as usize;
        if dense[root] == NO_REGION {
            dense[root] = next;
            next += 1;
        }
        out[leaf] = dense[root];
    }
    Ok(out)
}

/// Flatten the dendrogram at `cut` into a segmentation of the original
/// pixels (`leaves` is the segmentation the dendrogram was built over).
pub fn cut_dendrogram(d: &Dendrogram, cut: f64, leaves: &SegmentMap) -> Result<SegmentMap> {
    if leaves.num_regions() != d.leaf_count {
        return Err(Error::DimensionMismatch(format!(
            "dendrogram has {} leaves but segment map has {} regions",
            d.leaf_count,
            leaves.num_regions()
        )));
    }
    let assign = cut_assignments(d, cut)?;
    let mut labels = vec![0u32; leaves.ids.len()];
    let mut valid = vec![false; leaves.ids.len()];
    for (i, &id) in leaves.ids.iter().enumerate() {
        if id != NO_REGION {
            labels[i] = assign[id as usize];
            valid[i] = true;
        }
    }
    Ok(SegmentMap::from_labels(
        leaves.width,
        leaves.height,
        &labels,
        &valid,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> HistogramLayout {
        HistogramLayout::default()
    }

    /// Descriptor with each channel's mass in one bin.
    fn one_hot_descriptor(bins: [usize; NUM_CHANNELS], count: usize) -> RegionDescriptor {
        let l = layout();
        let hist = std::array::from_fn(|c| {
            let mut h = vec![0.0; l.channels[c].bins];
            h[bins[c]] = count as f64;
            h
        });
        descriptor_from_parts(hist, count, [0.0, 0.0], [0.0; 3], [0.0; 3], [0.0; 3])
    }

    #[test]
    fn single_voxel_descriptor_is_one_hot() {
        let d = region_descriptor(
            &[(3, 4)],
            &[[0.5, -0.25, 2.0]],
            &[[50.0, 10.0, -10.0]],
            &[[0.0, 0.0, -1.0]],
            &layout(),
        )
        .unwrap();
        assert_eq!(d.voxel_count, 1);
        for c in 0..NUM_CHANNELS {
            assert_eq!(d.hist[c].iter().sum::<f64>(), 1.0);
            assert_eq!(d.hist[c].iter().filter(|&&x| x > 0.0).count(), 1);
        }
        assert_eq!(d.centroid_3d, [0.5, -0.25, 2.0]);
        assert_eq!(d.min_3d, d.max_3d);
        assert_eq!(d.size_3d, 0.0);
        assert_eq!(d.centroid_2d, [3.0, 4.0]);
    }

    #[test]
    fn extreme_values_clamp_to_outer_bins() {
        let d = region_descriptor(
            &[(0, 0), (1, 0)],
            &[[0.0; 3], [0.0; 3]],
            &[[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]],
            &[[0.0, 0.0, -1.0], [0.0, 0.0, -1.0]],
            &layout(),
        )
        .unwrap();
        let lh = &d.hist[0];
        assert_eq!(lh[0], 1.0);
        assert_eq!(lh[19], 1.0);
        assert_eq!(lh.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn random_region_matches_direct_binning() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let l = layout();
        let n = 50;
        let mut pixels = Vec::new();
        let mut positions = Vec::new();
        let mut labs = Vec::new();
        let mut normals = Vec::new();
        for _ in 0..n {
            pixels.push((rng.gen_range(0..64u32), rng.gen_range(0..48u32)));
            positions.push([
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-1.0..9.0),
            ]);
            labs.push([
                rng.gen_range(-10.0..110.0),
                rng.gen_range(-120.0..120.0),
                rng.gen_range(-120.0..120.0),
            ]);
            let nz: f64 = rng.gen_range(-1.0..0.0);
            let nx: f64 = rng.gen_range(-0.5..0.5);
            let ny = (1.0 - nx * nx - nz * nz).max(0.0).sqrt();
            normals.push([nx, ny, nz]);
        }
        let d = region_descriptor(&pixels, &positions, &labs, &normals, &l).unwrap();

        // Direct per-voxel binning oracle.
        for c in 0..NUM_CHANNELS {
            let mut expect = vec![0.0; l.channels[c].bins];
            for i in 0..n {
                let v = match c {
                    0..=2 => labs[i][c],
                    3..=5 => positions[i][c - 3],
                    _ => normals[i][c - 6],
                };
                expect[l.channels[c].bin_index(v)] += 1.0;
            }
            assert_eq!(d.hist[c], expect, "channel {c}");
        }
    }

    #[test]
    fn distance_zero_for_identical_and_18_for_disjoint() {
        let a = one_hot_descriptor([0; 9], 7);
        assert_eq!(histogram_distance(&a, &a).unwrap(), 0.0);

        let b = one_hot_descriptor([1; 9], 3);
        let d = histogram_distance(&a, &b).unwrap();
        assert!((d - MAX_HISTOGRAM_DISTANCE).abs() < 1e-12);
        // Symmetric.
        assert_eq!(d, histogram_distance(&b, &a).unwrap());
    }

    #[test]
    fn merged_descriptor_conserves_counts_and_extents() {
        let l = layout();
        let a = region_descriptor(
            &[(0, 0), (1, 1)],
            &[[0.0, 0.0, 1.0], [1.0, 0.5, 2.0]],
            &[[20.0, 5.0, 5.0], [80.0, -5.0, 0.0]],
            &[[0.0, 0.0, -1.0], [0.0, 0.0, -1.0]],
            &l,
        )
        .unwrap();
        let b = region_descriptor(
            &[(5, 5)],
            &[[-2.0, 1.0, 3.0]],
            &[[50.0, 0.0, 0.0]],
            &[[1.0, 0.0, 0.0]],
            &l,
        )
        .unwrap();
        let m = merge_descriptors(&a, &b);
        assert_eq!(m.voxel_count, 3);
        for c in 0..NUM_CHANNELS {
            assert_eq!(m.hist[c].iter().sum::<f64>(), 3.0);
            for i in 0..m.hist[c].len() {
                assert_eq!(m.hist[c][i], a.hist[c][i] + b.hist[c][i]);
            }
        }
        assert_eq!(m.min_3d, [-2.0, 0.0, 1.0]);
        assert_eq!(m.max_3d, [1.0, 1.0, 3.0]);
        // Count-weighted centroid.
        assert!((m.centroid_3d[0] - (0.5 * 2.0 + -2.0) / 3.0).abs() < 1e-12);
    }

    fn stripes_segmap() -> SegmentMap {
        // 6x6, three horizontal stripes of two rows each.
        let mut labels = vec![0u32; 36];
        for v in 0..6u32 {
            for u in 0..6u32 {
                labels[(v * 6 + u) as usize] = v / 2;
            }
        }
        SegmentMap::from_labels(6, 6, &labels, &vec![true; 36])
    }

    fn uniform_descriptors(n: usize) -> Vec<RegionDescriptor> {
        (0..n)
            .map(|i| one_hot_descriptor([i % 3; 9], 4))
            .collect()
    }

    #[test]
    fn checkerboard_has_one_sgraph_edge() {
        let mut labels = vec![0u32; 16];
        for v in 0..4u32 {
            for u in 0..4u32 {
                labels[(v * 4 + u) as usize] = (u + v) % 2;
            }
        }
        let seg = SegmentMap::from_labels(4, 4, &labels, &vec![true; 16]);
        let g = build_sgraph(&seg, uniform_descriptors(2)).unwrap();
        assert_eq!(g.edges.len(), 1);
    }

    #[test]
    fn stripes_have_two_sgraph_edges() {
        let seg = stripes_segmap();
        let g = build_sgraph(&seg, uniform_descriptors(3)).unwrap();
        let pairs: Vec<(u32, u32)> = g.edges.iter().map(|&(a, b, _)| (a, b)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn sgraph_adjacency_matches_pixel_pair_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(23);
        let (w, h) = (16u32, 16u32);
        // Random blocky segmentation: assign each 4x4 block a random label,
        // then densify.
        let mut labels = vec![0u32; 256];
        let block: Vec<u32> = (0..16).map(|_| rng.gen_range(0..6)).collect();
        for v in 0..h {
            for u in 0..w {
                labels[(v * w + u) as usize] = block[((v / 4) * 4 + u / 4) as usize];
            }
        }
        let seg = SegmentMap::from_labels(w, h, &labels, &vec![true; 256]);
        let g = build_sgraph(&seg, uniform_descriptors(seg.num_regions())).unwrap();

        // Brute-force: every ordered pixel pair at Chebyshev distance 1.
        let mut expect = BTreeSet::new();
        for v in 0..h as i64 {
            for u in 0..w as i64 {
                for dv in -1..=1i64 {
                    for du in -1..=1i64 {
                        if du == 0 && dv == 0 {
                            continue;
                        }
                        let (nu, nv) = (u + du, v + dv);
                        if nu < 0 || nv < 0 || nu >= w as i64 || nv >= h as i64 {
                            continue;
                        }
                        let a = seg.ids[(v * w as i64 + u) as usize];
                        let b = seg.ids[(nv * w as i64 + nu) as usize];
                        if a != b {
                            expect.insert((a.min(b), a.max(b)));
                        }
                    }
                }
            }
        }
        let got: BTreeSet<(u32, u32)> = g.edges.iter().map(|&(a, b, _)| (a, b)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn two_regions_merge_once_at_their_distance() {
        let mut labels = vec![0u32; 16];
        for i in 8..16 {
            labels[i] = 1;
        }
        let seg = SegmentMap::from_labels(4, 4, &labels, &vec![true; 16]);
        let a = one_hot_descriptor([0; 9], 8);
        let b = one_hot_descriptor([2; 9], 8);
        let expected = histogram_distance(&a, &b).unwrap();
        let g = build_sgraph(&seg, vec![a, b]).unwrap();
        let d = build_dendrogram(&g).unwrap();
        assert_eq!(d.merges.len(), 1);
        assert_eq!(d.merges[0].left, 0);
        assert_eq!(d.merges[0].right, 1);
        assert_eq!(d.merges[0].cost, expected);
        assert_eq!(d.component_count(), 1);
    }

    #[test]
    fn greedy_picks_cheapest_pair_first() {
        let seg = stripes_segmap();
        // A-B close, B-C far.
        let a = one_hot_descriptor([0; 9], 4);
        let mut b = one_hot_descriptor([0; 9], 4);
        b.hist[0] = vec![0.0; 20];
        b.hist[0][0] = 2.0;
        b.hist[0][1] = 2.0; // differs from A only in channel 0
        let c = one_hot_descriptor([5; 9], 4);
        let g = build_sgraph(&seg, vec![a, b, c]).unwrap();
        let d = build_dendrogram(&g).unwrap();
        assert_eq!(d.merges.len(), 2);
        assert_eq!((d.merges[0].left, d.merges[0].right), (0, 1));
    }

    #[test]
    fn cut_zero_keeps_leaves_and_cut_one_collapses_components() {
        let seg = stripes_segmap();
        let descs = vec![
            one_hot_descriptor([0; 9], 4),
            one_hot_descriptor([1; 9], 4),
            one_hot_descriptor([2; 9], 4),
        ];
        let g = build_sgraph(&seg, descs).unwrap();
        let d = build_dendrogram(&g).unwrap();

        let at0 = cut_dendrogram(&d, 0.0, &seg).unwrap();
        assert_eq!(at0.num_regions(), 3);
        assert_eq!(at0.ids, seg.ids);

        let at1 = cut_dendrogram(&d, 1.0, &seg).unwrap();
        assert_eq!(at1.num_regions(), 1);
    }

    #[test]
    fn skipped_merges_do_not_block_later_cheap_merges() {
        // Merge order with an inversion: expensive merge recorded before a
        // cheaper one. Replay must apply the cheaper one regardless.
        let d = Dendrogram {
            leaf_count: 3,
            merges: vec![
                Merge {
                    left: 0,
                    right: 1,
                    cost: 10.0,
                },
                Merge {
                    left: 2,
                    right: 3,
                    cost: 1.0,
                },
            ],
            merged_descriptors: vec![],
        };
        // Threshold 0.2*18 = 3.6: first merge skipped, second applies and
        // joins leaf 2 with cluster 3's representative (leaf 0).
        let assign = cut_assignments(&d, 0.2).unwrap();
        assert_eq!(assign[0], assign[2]);
        assert_ne!(assign[0], assign[1]);
    }

    #[test]
    fn region_count_monotone_in_cut() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(77);
        for _ in 0..20 {
            let n = rng.gen_range(2..10usize);
            let descs: Vec<RegionDescriptor> = (0..n)
                .map(|_| {
                    let mut bins = [0usize; 9];
                    for b in &mut bins {
                        *b = rng.gen_range(0..10);
                    }
                    one_hot_descriptor(bins, rng.gen_range(1..20))
                })
                .collect();
            // Random connected path plus extra edges.
            let mut edges = Vec::new();
            for i in 1..n {
                let j = rng.gen_range(0..i);
                let w = histogram_distance(&descs[j], &descs[i]).unwrap();
                edges.push((j as u32, i as u32, w));
            }
            let g = SGraph {
                descriptors: descs,
                edges,
            };
            let d = build_dendrogram(&g).unwrap();
            let mut last = usize::MAX;
            for step in 0..=20 {
                let cut = step as f64 / 20.0;
                let assign = cut_assignments(&d, cut).unwrap();
                let count = assign.iter().map(|&x| x as usize).max().unwrap() + 1;
                assert!(count <= last);
                last = count;
            }
        }
    }
}
