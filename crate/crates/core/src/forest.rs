//! Random forest of axis-aligned decision trees with Gini splits.
//!
//! Training is fully deterministic: each tree draws its bootstrap sample and
//! split candidates from an RNG seeded by `(rng_seed, tree index)`, so
//! parallel and serial training produce identical forests. Leaves store raw
//! class counts; prediction averages the normalized leaf histograms across
//! trees.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until purity or sample-count floors stop a branch.
    pub max_depth: Option<u32>,
    pub min_samples_leaf: usize,
    /// Split candidates per node; `None` means ceil(sqrt(d)).
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    /// Weight Gini counts by inverse class frequency.
    pub balanced: bool,
    pub rng_seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            balanced: false,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Internal {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        counts: Vec<u64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Normalized class histogram of the leaf this sample routes to.
    fn leaf_posterior(&self, v: &[f64], out: &mut [f64]) {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if v[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { counts } => {
                    let total: u64 = counts.iter().sum();
                    for (o, c) in out.iter_mut().zip(counts) {
                        *o = *c as f64 / total as f64;
                    }
                    return;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub config: ForestConfig,
    n_classes: usize,
    n_features: usize,
    trees: Vec<Tree>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn tree_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64 + 1))
}

fn bootstrap_sample(rng: &mut ChaCha12Rng, n: usize) -> Vec<u32> {
    (0..n).map(|_| rng.gen_range(0..n) as u32).collect()
}

/// Candidate features without replacement; draws nothing when m >= d.
fn sample_features(rng: &mut ChaCha12Rng, d: usize, m: usize) -> Vec<u32> {
    if m >= d {
        return (0..d as u32).collect();
    }
    let mut idx: Vec<u32> = (0..d as u32).collect();
    for i in 0..m {
        let j = rng.gen_range(i..d);
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx
}

fn weighted_gini(counts: &[f64], total: f64) -> f64 {
    let mut acc = 0.0;
    for &c in counts {
        let p = c / total;
        acc += p * p;
    }
    1.0 - acc
}

struct BestSplit {
    feature: u32,
    threshold: f64,
    decrease: f64,
}

/// Best Gini split over the candidate features; thresholds are midpoints of
/// consecutive distinct sorted values. Ties break toward the lowest feature
/// index, then the lowest threshold.
fn find_best_split(
    x: &FeatureMatrix,
    y: &[u32],
    class_weights: &[f64],
    indices: &[u32],
    candidates: &[u32],
    min_samples_leaf: usize,
    scratch: &mut Vec<(f64, u32)>,
) -> Option<BestSplit> {
    let k = class_weights.len();
    let n = indices.len();

    let mut parent_counts = vec![0.0; k];
    for &i in indices {
        parent_counts[y[i as usize] as usize] += class_weights[y[i as usize] as usize];
    }
    let parent_total: f64 = parent_counts.iter().sum();
    let parent_gini = weighted_gini(&parent_counts, parent_total);

    let mut best: Option<BestSplit> = None;
    let mut left_counts = vec![0.0; k];

    for &f in candidates {
        scratch.clear();
        scratch.extend(
            indices
                .iter()
                .map(|&i| (x.row(i as usize)[f as usize], y[i as usize])),
        );
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));

        left_counts.iter_mut().for_each(|c| *c = 0.0);
        let mut left_total = 0.0;
        let mut left_n = 0usize;
        for i in 0..n - 1 {
            let (v, label) = scratch[i];
            left_counts[label as usize] += class_weights[label as usize];
            left_total += class_weights[label as usize];
            left_n += 1;
            let next = scratch[i + 1].0;
            if !(v < next) {
                continue;
            }
            if left_n < min_samples_leaf || n - left_n < min_samples_leaf {
                continue;
            }
            let mut threshold = 0.5 * (v + next);
            // Midpoint can round up to `next`; fall back to the lower value
            // so `value <= threshold` reproduces the intended partition.
            if !(threshold < next) {
                threshold = v;
            }
            let right_total = parent_total - left_total;
            let mut right_gini = 0.0;
            {
                let mut acc = 0.0;
                for c in 0..k {
                    let p = (parent_counts[c] - left_counts[c]) / right_total;
                    acc += p * p;
                }
                right_gini += 1.0 - acc;
            }
            let left_gini = weighted_gini(&left_counts, left_total);
            let decrease = parent_gini
                - (left_total / parent_total) * left_gini
                - (right_total / parent_total) * right_gini;
            let better = match &best {
                None => decrease > 0.0,
                Some(b) => {
                    decrease > b.decrease
                        || (decrease == b.decrease
                            && (f < b.feature || (f == b.feature && threshold < b.threshold)))
                }
            };
            if better {
                best = Some(BestSplit {
                    feature: f,
                    threshold,
                    decrease,
                });
            }
        }
    }
    best
}

fn grow_tree(
    x: &FeatureMatrix,
    y: &[u32],
    class_weights: &[f64],
    cfg: &ForestConfig,
    features_per_split: usize,
    rng: &mut ChaCha12Rng,
    root_indices: Vec<u32>,
) -> Tree {
    let k = class_weights.len();
    let mut nodes: Vec<Node> = vec![Node::Leaf { counts: vec![] }];
    let mut stack: Vec<(usize, Vec<u32>, u32)> = vec![(0, root_indices, 0)];
    let mut scratch: Vec<(f64, u32)> = Vec::new();

    while let Some((node_idx, indices, depth)) = stack.pop() {
        let mut counts = vec![0u64; k];
        for &i in &indices {
            counts[y[i as usize] as usize] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = cfg.max_depth.is_some_and(|d| depth >= d);
        let too_small = indices.len() < 2 * cfg.min_samples_leaf;

        let split = if pure || depth_capped || too_small {
            None
        } else {
            let candidates = sample_features(rng, x.d, features_per_split);
            find_best_split(
                x,
                y,
                class_weights,
                &indices,
                &candidates,
                cfg.min_samples_leaf,
                &mut scratch,
            )
        };

        match split {
            None => nodes[node_idx] = Node::Leaf { counts },
            Some(s) => {
                let mut left_idx = Vec::new();
                let mut right_idx = Vec::new();
                for &i in &indices {
                    if x.row(i as usize)[s.feature as usize] <= s.threshold {
                        left_idx.push(i);
                    } else {
                        right_idx.push(i);
                    }
                }
                let left = nodes.len() as u32;
                let right = left + 1;
                nodes.push(Node::Leaf { counts: vec![] });
                nodes.push(Node::Leaf { counts: vec![] });
                nodes[node_idx] = Node::Internal {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
                // Left subtree grows first (LIFO), fixing the rng stream.
                stack.push((right as usize, right_idx, depth + 1));
                stack.push((left as usize, left_idx, depth + 1));
            }
        }
    }
    Tree { nodes }
}

fn validate_training_data(x: &FeatureMatrix, y: &[u32], n_classes: usize) -> Result<()> {
    if x.n == 0 || x.d == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if y.len() != x.n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} samples",
            y.len(),
            x.n
        )));
    }
    if n_classes == 0 {
        return Err(Error::InvalidParam("need at least one class".into()));
    }
    for (i, &label) in y.iter().enumerate() {
        if label as usize >= n_classes {
            return Err(Error::InvalidInput(format!(
                "label {} of sample {} is outside [0, {})",
                label, i, n_classes
            )));
        }
    }
    for i in 0..x.n {
        if x.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample {i} contains a non-finite feature value"
            )));
        }
    }
    Ok(())
}

/// Train a forest on `n x d` features with labels in `[0, n_classes)`.
pub fn train(
    x: &FeatureMatrix,
    y: &[u32],
    n_classes: usize,
    cfg: &ForestConfig,
) -> Result<Forest> {
    validate_training_data(x, y, n_classes)?;
    if cfg.n_trees == 0 {
        return Err(Error::InvalidParam("n_trees must be >= 1".into()));
    }
    if cfg.min_samples_leaf == 0 {
        return Err(Error::InvalidParam("min_samples_leaf must be >= 1".into()));
    }
    let features_per_split = match cfg.features_per_split {
        Some(m) => {
            if m == 0 || m > x.d {
                return Err(Error::InvalidParam(format!(
                    "features_per_split must be in [1, {}], got {m}",
                    x.d
                )));
            }
            m
        }
        None => (x.d as f64).sqrt().ceil() as usize,
    };

    let class_weights: Vec<f64> = if cfg.balanced {
        let mut counts = vec![0u64; n_classes];
        for &label in y {
            counts[label as usize] += 1;
        }
        counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    0.0
                } else {
                    y.len() as f64 / (n_classes as f64 * c as f64)
                }
            })
            .collect()
    } else {
        vec![1.0; n_classes]
    };

    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha12Rng::seed_from_u64(tree_seed(cfg.rng_seed, t));
            let indices = if cfg.bootstrap {
                bootstrap_sample(&mut rng, x.n)
            } else {
                (0..x.n as u32).collect()
            };
            grow_tree(x, y, &class_weights, cfg, features_per_split, &mut rng, indices)
        })
        .collect();

    Ok(Forest {
        config: cfg.clone(),
        n_classes,
        n_features: x.d,
        trees,
    })
}

impl Forest {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Mean of the per-tree leaf posteriors; argmax ties go to the lowest
    /// class id.
    pub fn predict(&self, v: &[f64]) -> Result<(u32, Vec<f64>)> {
        if v.len() != self.n_features {
            return Err(Error::DimensionMismatch(format!(
                "input has {} features, forest expects {}",
                v.len(),
                self.n_features
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        let mut posterior = vec![0.0; self.n_classes];
        let mut leaf = vec![0.0; self.n_classes];
        for tree in &self.trees {
            tree.leaf_posterior(v, &mut leaf);
            for (p, l) in posterior.iter_mut().zip(&leaf) {
                *p += l;
            }
        }
        let nt = self.trees.len() as f64;
        posterior.iter_mut().for_each(|p| *p /= nt);
        let class = argmax(&posterior);
        Ok((class, posterior))
    }

    /// Out-of-bag error: each sample is scored only by trees whose bootstrap
    /// excluded it. Requires the exact training set the forest was fit on.
    pub fn oob_error(&self, x: &FeatureMatrix, y: &[u32]) -> Result<f64> {
        if !self.config.bootstrap {
            return Err(Error::InvalidParam(
                "out-of-bag error requires bootstrap training".into(),
            ));
        }
        validate_training_data(x, y, self.n_classes)?;
        if x.d != self.n_features {
            return Err(Error::DimensionMismatch(format!(
                "data has {} features, forest expects {}",
                x.d, self.n_features
            )));
        }

        // Bootstrap draws are the first rng use per tree, so the in-bag
        // sets regenerate exactly from the per-tree seeds.
        let in_bag: Vec<Vec<bool>> = (0..self.trees.len())
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha12Rng::seed_from_u64(tree_seed(self.config.rng_seed, t));
                let mut mask = vec![false; x.n];
                for i in bootstrap_sample(&mut rng, x.n) {
                    mask[i as usize] = true;
                }
                mask
            })
            .collect();

        let mut wrong = 0usize;
        let mut counted = 0usize;
        let mut posterior = vec![0.0; self.n_classes];
        let mut leaf = vec![0.0; self.n_classes];
        for i in 0..x.n {
            posterior.iter_mut().for_each(|p| *p = 0.0);
            let mut votes = 0usize;
            for (t, tree) in self.trees.iter().enumerate() {
                if in_bag[t][i] {
                    continue;
                }
                tree.leaf_posterior(x.row(i), &mut leaf);
                for (p, l) in posterior.iter_mut().zip(&leaf) {
                    *p += l;
                }
                votes += 1;
            }
            if votes == 0 {
                continue;
            }
            counted += 1;
            if argmax(&posterior) != y[i] {
                wrong += 1;
            }
        }
        if counted == 0 {
            return Err(Error::InvalidInput(
                "no sample was out of bag for any tree".into(),
            ));
        }
        Ok(wrong as f64 / counted as f64)
    }
}

fn argmax(values: &[f64]) -> u32 {
    let mut best = 0usize;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best as u32
}

// ---------------------------------------------------------------------------
// Binary model format: magic, version, d, K, config, tree count, then each
// tree as a preorder node stream (internal: tag 0, feature u32, threshold
// f64; leaf: tag 1, K u64 counts). All integers little-endian.
// ---------------------------------------------------------------------------

const MAGIC: [u8; 8] = *b"RNDFORST";
const VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    Ok(read_exact::<1>(r)?[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8>(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<8>(r)?))
}

impl Forest {
    pub fn save(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        write_u32(&mut w, VERSION)?;
        write_u32(&mut w, self.n_features as u32)?;
        write_u32(&mut w, self.n_classes as u32)?;
        let c = &self.config;
        write_u32(&mut w, c.n_trees as u32)?;
        write_u32(&mut w, c.max_depth.unwrap_or(0))?;
        write_u64(&mut w, c.min_samples_leaf as u64)?;
        write_u32(&mut w, c.features_per_split.unwrap_or(0) as u32)?;
        w.write_all(&[c.bootstrap as u8, c.balanced as u8])?;
        write_u64(&mut w, c.rng_seed)?;
        write_u32(&mut w, self.trees.len() as u32)?;
        for tree in &self.trees {
            let mut stack = vec![0usize];
            while let Some(i) = stack.pop() {
                match &tree.nodes[i] {
                    Node::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        w.write_all(&[0u8])?;
                        write_u32(&mut w, *feature)?;
                        write_f64(&mut w, *threshold)?;
                        stack.push(*right as usize);
                        stack.push(*left as usize);
                    }
                    Node::Leaf { counts } => {
                        w.write_all(&[1u8])?;
                        for &c in counts {
                            write_u64(&mut w, c)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(mut r: impl Read) -> Result<Forest> {
        let magic = read_exact::<8>(&mut r)?;
        if magic != MAGIC {
            return Err(Error::Format("not a forest model file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported forest model version {version}"
            )));
        }
        let d = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)? as usize;
        let n_trees = read_u32(&mut r)? as usize;
        let max_depth = match read_u32(&mut r)? {
            0 => None,
            v => Some(v),
        };
        let min_samples_leaf = read_u64(&mut r)? as usize;
        let features_per_split = match read_u32(&mut r)? {
            0 => None,
            v => Some(v as usize),
        };
        let bootstrap = read_u8(&mut r)? != 0;
        let balanced = read_u8(&mut r)? != 0;
        let rng_seed = read_u64(&mut r)?;
        let tree_count = read_u32(&mut r)? as usize;

        enum Slot {
            Root,
            Left(usize),
            Right(usize),
        }

        let mut trees = Vec::with_capacity(tree_count);
        for _ in 0..tree_count {
            let mut nodes: Vec<Node> = Vec::new();
            let mut pending = vec![Slot::Root];
            while let Some(slot) = pending.pop() {
                let idx = nodes.len() as u32;
                match slot {
                    Slot::Root => {}
                    Slot::Left(p) => {
                        if let Node::Internal { left, .. } = &mut nodes[p] {
                            *left = idx;
                        }
                    }
                    Slot::Right(p) => {
                        if let Node::Internal { right, .. } = &mut nodes[p] {
                            *right = idx;
                        }
                    }
                }
                match read_u8(&mut r)? {
                    0 => {
                        let feature = read_u32(&mut r)?;
                        if feature as usize >= d {
                            return Err(Error::Format(format!(
                                "split feature {feature} out of range"
                            )));
                        }
                        let threshold = read_f64(&mut r)?;
                        nodes.push(Node::Internal {
                            feature,
                            threshold,
                            left: 0,
                            right: 0,
                        });
                        let p = idx as usize;
                        pending.push(Slot::Right(p));
                        pending.push(Slot::Left(p));
                    }
                    1 => {
                        let mut counts = Vec::with_capacity(k);
                        for _ in 0..k {
                            counts.push(read_u64(&mut r)?);
                        }
                        if counts.iter().sum::<u64>() == 0 {
                            return Err(Error::Format("leaf with zero total count".into()));
                        }
                        nodes.push(Node::Leaf { counts });
                    }
                    tag => {
                        return Err(Error::Format(format!("unknown node tag {tag}")));
                    }
                }
            }
            trees.push(Tree { nodes });
        }

        Ok(Forest {
            config: ForestConfig {
                n_trees,
                max_depth,
                min_samples_leaf,
                features_per_split,
                bootstrap,
                balanced,
                rng_seed,
            },
            n_classes: k,
            n_features: d,
            trees,
        })
    }
}
