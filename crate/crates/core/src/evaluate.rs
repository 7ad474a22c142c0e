//! Label transfer, confusion matrices, accuracy metrics, and the
//! per-feature ablation study.
//!
//! Evaluation is per-pixel over labeled pixels only: pixels with unlabeled
//! ground truth never count for or against, and pixels the pipeline abstains
//! on (no valid segment, hence no prediction) are likewise excluded from the
//! confusion counts.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureLayout, FeatureMatrix};
use crate::forest::{self, ForestConfig};
use crate::oversegment::{SegmentMap, NO_REGION};
use crate::{Error, Result};

/// Class id for pixels without a label.
pub const UNLABELED: u32 = u32::MAX;

/// Per-pixel class ids with a reserved unlabeled value.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u32>,
}

impl LabelImage {
    pub fn unlabeled(width: u32, height: u32) -> Self {
        LabelImage {
            width,
            height,
            data: vec![UNLABELED; (width as usize) * (height as usize)],
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> u32 {
        self.data[(v * self.width + u) as usize]
    }
}

/// A class list plus an optional mapping from raw dataset label ids.
///
/// Without an explicit map, raw value 0 is unlabeled and raw `v` in
/// `[1, K]` means class `v - 1`; anything larger is an error naming the
/// offending raw id. With an explicit map, unmapped raw ids become
/// unlabeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    pub classes: Vec<String>,
    #[serde(default)]
    pub raw_map: Option<BTreeMap<u32, u32>>,
}

impl ClassTaxonomy {
    pub fn new(classes: Vec<String>, raw_map: Option<BTreeMap<u32, u32>>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidParam("taxonomy needs at least one class".into()));
        }
        if let Some(map) = &raw_map {
            for (&raw, &class) in map {
                if class as usize >= classes.len() {
                    return Err(Error::InvalidParam(format!(
                        "taxonomy maps raw id {raw} to class {class}, but only {} classes exist",
                        classes.len()
                    )));
                }
            }
        }
        Ok(ClassTaxonomy { classes, raw_map })
    }

    /// The 4-class split: floor, structure, furniture, props.
    pub fn four_class() -> Self {
        ClassTaxonomy {
            classes: ["floor", "structure", "furniture", "props"]
                .map(String::from)
                .to_vec(),
            raw_map: None,
        }
    }

    /// The 13 most frequent indoor classes plus "other".
    pub fn fourteen_class() -> Self {
        ClassTaxonomy {
            classes: [
                "bed", "chair", "ceiling", "floor", "picture", "sofa", "table", "wall",
                "window", "books", "tv", "furniture", "objects", "other",
            ]
            .map(String::from)
            .to_vec(),
            raw_map: None,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn map_raw(&self, raw: u16) -> Result<u32> {
        let raw = raw as u32;
        match &self.raw_map {
            Some(map) => Ok(map.get(&raw).copied().unwrap_or(UNLABELED)),
            None => {
                if raw == 0 {
                    Ok(UNLABELED)
                } else if (raw as usize) <= self.classes.len() {
                    Ok(raw - 1)
                } else {
                    Err(Error::InvalidInput(format!(
                        "raw label id {raw} has no class in a {}-class taxonomy",
                        self.classes.len()
                    )))
                }
            }
        }
    }

    /// Map a raw label raster into taxonomy class ids.
    pub fn map_image(&self, width: u32, height: u32, raw: &[u16]) -> Result<LabelImage> {
        if raw.len() != (width as usize) * (height as usize) {
            return Err(Error::DimensionMismatch(format!(
                "raw label buffer has {} values for a {width}x{height} image",
                raw.len()
            )));
        }
        let mut data = Vec::with_capacity(raw.len());
        for &r in raw {
            data.push(self.map_raw(r)?);
        }
        Ok(LabelImage { width, height, data })
    }
}

/// Row-major K x K counts; entry (i, j) counts pixels with truth i
/// predicted j.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    #[inline]
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    #[inline]
    pub fn add(&mut self, truth: usize, pred: usize, count: u64) {
        self.counts[truth * self.k + pred] += count;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Accumulate another matrix of the same shape.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.k != other.k {
            return Err(Error::DimensionMismatch(format!(
                "cannot merge a {}-class matrix into a {}-class one",
                other.k, self.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Per-pixel instance ids alongside classes, with a roster.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLabeling {
    /// Instance id per pixel, `UNLABELED` outside every instance.
    pub instances: LabelImage,
    /// Class id per pixel, matching the instance's class.
    pub classes: LabelImage,
    /// Per-instance (class id, pixel count), indexed by instance id.
    pub roster: Vec<(u32, u64)>,
}

/// Majority-vote class per segment, or `None` for segments whose majority
/// share is below `min_purity` or that contain no labeled pixel. Ties break
/// toward the lowest class id.
pub fn transfer_labels(
    seg: &SegmentMap,
    gt: &LabelImage,
    min_purity: f64,
) -> Result<Vec<Option<u32>>> {
    if seg.width != gt.width || seg.height != gt.height {
        return Err(Error::DimensionMismatch(format!(
            "segment map is {}x{} but labels are {}x{}",
            seg.width, seg.height, gt.width, gt.height
        )));
    }
    if !(0.0..=1.0).contains(&min_purity) {
        return Err(Error::InvalidParam(format!(
            "min_purity must be in [0,1], got {min_purity}"
        )));
    }
    let mut votes: Vec<BTreeMap<u32, u64>> = vec![BTreeMap::new(); seg.num_regions()];
    for (i, &id) in seg.ids.iter().enumerate() {
        if id == NO_REGION {
            continue;
        }
        let label = gt.data[i];
        if label == UNLABELED {
            continue;
        }
        *votes[id as usize].entry(label).or_insert(0) += 1;
    }
    Ok(votes
        .into_iter()
        .map(|v| {
            let total: u64 = v.values().sum();
            if total == 0 {
                return None;
            }
            // BTreeMap iterates in ascending class id, so strict `>` keeps
            // the lowest id on ties.
            let (mut best_class, mut best_count) = (0u32, 0u64);
            for (class, count) in v {
                if count > best_count {
                    best_class = class;
                    best_count = count;
                }
            }
            (best_count as f64 >= min_purity * total as f64).then_some(best_class)
        })
        .collect())
}

/// Spread per-segment class predictions back to pixels; the instance id is
/// the segment id.
pub fn project_predictions(
    seg: &SegmentMap,
    predictions: &[u32],
) -> Result<(LabelImage, InstanceLabeling)> {
    if predictions.len() != seg.num_regions() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} segments",
            predictions.len(),
            seg.num_regions()
        )));
    }
    let mut classes = LabelImage::unlabeled(seg.width, seg.height);
    let mut instances = LabelImage::unlabeled(seg.width, seg.height);
    let mut roster: Vec<(u32, u64)> = predictions.iter().map(|&c| (c, 0)).collect();
    for (i, &id) in seg.ids.iter().enumerate() {
        if id == NO_REGION {
            continue;
        }
        classes.data[i] = predictions[id as usize];
        instances.data[i] = id;
        roster[id as usize].1 += 1;
    }
    let labels = classes.clone();
    Ok((
        labels,
        InstanceLabeling {
            instances,
            classes,
            roster,
        },
    ))
}

/// Confusion counts over pixels labeled in both rasters.
pub fn confusion(pred: &LabelImage, gt: &LabelImage, k: usize) -> Result<ConfusionMatrix> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut m = ConfusionMatrix::zeros(k);
    for (p, g) in pred.data.iter().zip(&gt.data) {
        if *g == UNLABELED || *p == UNLABELED {
            continue;
        }
        if *g as usize >= k || *p as usize >= k {
            return Err(Error::InvalidInput(format!(
                "class id out of range for a {k}-class matrix (truth {g}, pred {p})"
            )));
        }
        m.add(*g as usize, *p as usize, 1);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Recall per class; `None` for classes absent from the truth.
    pub per_class_recall: Vec<Option<f64>>,
    /// Mean of the defined recalls.
    pub class_accuracy: f64,
    /// trace / total.
    pub pixel_accuracy: f64,
}

pub fn metrics(m: &ConfusionMatrix) -> Result<Metrics> {
    let total = m.total();
    if total == 0 {
        return Err(Error::InvalidInput("confusion matrix is all zero".into()));
    }
    let mut per_class_recall = Vec::with_capacity(m.k);
    let mut sum = 0.0;
    let mut defined = 0usize;
    let mut trace = 0u64;
    for c in 0..m.k {
        let row: u64 = (0..m.k).map(|j| m.get(c, j)).sum();
        trace += m.get(c, c);
        if row == 0 {
            per_class_recall.push(None);
        } else {
            let r = m.get(c, c) as f64 / row as f64;
            per_class_recall.push(Some(r));
            sum += r;
            defined += 1;
        }
    }
    Ok(Metrics {
        per_class_recall,
        class_accuracy: sum / defined as f64,
        pixel_accuracy: trace as f64 / total as f64,
    })
}

/// Structured metrics report: confusion counts then the summary rows.
pub fn write_metrics_csv(
    mut w: impl Write,
    m: &ConfusionMatrix,
    taxonomy: &ClassTaxonomy,
) -> Result<()> {
    let stats = metrics(m)?;
    write!(w, "confusion_truth\\pred")?;
    for name in &taxonomy.classes {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for (i, name) in taxonomy.classes.iter().enumerate() {
        write!(w, "{name}")?;
        for j in 0..m.k {
            write!(w, ",{}", m.get(i, j))?;
        }
        writeln!(w)?;
    }
    writeln!(w)?;
    writeln!(w, "class,recall")?;
    for (name, recall) in taxonomy.classes.iter().zip(&stats.per_class_recall) {
        match recall {
            Some(r) => writeln!(w, "{name},{r}")?,
            None => writeln!(w, "{name},absent")?,
        }
    }
    writeln!(w)?;
    writeln!(w, "class_accuracy,{}", stats.class_accuracy)?;
    writeln!(w, "pixel_accuracy,{}", stats.pixel_accuracy)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub groups: Vec<String>,
    /// Class ids with rows in the matrix (present in train and validation).
    pub classes: Vec<u32>,
    /// `accuracy[class row][group column]`.
    pub accuracy: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl AblationResult {
    pub fn write_csv(&self, mut w: impl Write, taxonomy: &ClassTaxonomy) -> Result<()> {
        write!(w, "class")?;
        for g in &self.groups {
            write!(w, ",{g}")?;
        }
        writeln!(w)?;
        for (row, &class) in self.accuracy.iter().zip(&self.classes) {
            write!(w, "{}", taxonomy.classes[class as usize])?;
            for acc in row {
                write!(w, ",{acc}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// For each (feature group, class) pair: train a binary one-vs-rest forest
/// on the group's span only and record validation accuracy. Classes absent
/// from either split are excluded with a warning.
pub fn feature_ablation(
    train_x: &FeatureMatrix,
    train_y: &[u32],
    val_x: &FeatureMatrix,
    val_y: &[u32],
    groups: &[&str],
    layout: &FeatureLayout,
    n_classes: usize,
    cfg: &ForestConfig,
) -> Result<AblationResult> {
    if train_y.len() != train_x.n || val_y.len() != val_x.n {
        return Err(Error::DimensionMismatch(
            "label count does not match the feature matrix".into(),
        ));
    }
    if train_x.d != layout.len || val_x.d != layout.len {
        return Err(Error::DimensionMismatch(format!(
            "feature matrices ({} / {}) do not match the layout length {}",
            train_x.d, val_x.d, layout.len
        )));
    }
    let mut spans = Vec::with_capacity(groups.len());
    for &g in groups {
        let span = layout
            .span(g)
            .ok_or_else(|| Error::InvalidInput(format!("unknown feature group '{g}'")))?;
        spans.push(span);
    }

    let mut warnings = Vec::new();
    let mut classes = Vec::new();
    for c in 0..n_classes as u32 {
        let in_train = train_y.contains(&c);
        let in_val = val_y.contains(&c);
        if in_train && in_val {
            classes.push(c);
        } else {
            warnings.push(format!(
                "class {c} excluded from the ablation ({})",
                if in_train {
                    "absent from validation"
                } else {
                    "absent from training"
                }
            ));
        }
    }

    // Every (class, group) cell is independent; train them in parallel and
    // collect in order.
    let cells: Vec<(usize, usize)> = (0..classes.len())
        .flat_map(|ci| (0..spans.len()).map(move |gi| (ci, gi)))
        .collect();
    let results: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(ci, gi)| {
            let class = classes[ci];
            let (off, len) = spans[gi];
            let tx = train_x.slice_columns(off, len);
            let vx = val_x.slice_columns(off, len);
            let ty: Vec<u32> = train_y.iter().map(|&y| (y == class) as u32).collect();
            let forest = forest::train(&tx, &ty, 2, cfg)?;
            let mut correct = 0usize;
            for i in 0..vx.n {
                let (pred, _) = forest.predict(vx.row(i))?;
                if pred == (val_y[i] == class) as u32 {
                    correct += 1;
                }
            }
            Ok(correct as f64 / vx.n as f64)
        })
        .collect();

    let mut accuracy = vec![vec![0.0; spans.len()]; classes.len()];
    for ((ci, gi), r) in cells.into_iter().zip(results) {
        accuracy[ci][gi] = r?;
    }

    Ok(AblationResult {
        groups: groups.iter().map(|s| s.to_string()).collect(),
        classes,
        accuracy,
        warnings,
    })
}
