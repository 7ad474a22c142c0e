//! Flattening region descriptors into fixed-length classifier features.
//!
//! The layout is `[L(20), a(20), b(20), x(30), y(30), z(30), nx(30), ny(30),
//! nz(30), size, width, height, centroid_2d(2), centroid_3d(3), min_3d(3),
//! max_3d(3)]` — 254 values with default bins — with an optional opaque
//! appearance descriptor appended last. Histogram spans are normalized to
//! unit mass; scalars stay raw.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::hierarchy::{HistogramLayout, RegionDescriptor, CHANNEL_NAMES, NUM_CHANNELS};
use crate::{Error, Result};

/// Named span table: each entry is `(name, offset, length)`. Spans may
/// overlap (e.g. `centroid_3d` covers `centroid_3d_x/y/z`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub spans: Vec<(String, usize, usize)>,
    pub len: usize,
    pub appearance_len: usize,
}

impl FeatureLayout {
    /// Derive the layout from the histogram bin configuration plus the
    /// declared appearance-descriptor length (0 when unused).
    pub fn new(hist: &HistogramLayout, appearance_len: usize) -> Self {
        let mut spans = Vec::new();
        let mut off = 0;
        for c in 0..NUM_CHANNELS {
            let len = hist.channels[c].bins;
            spans.push((format!("hist_{}", CHANNEL_NAMES[c]), off, len));
            off += len;
        }
        fn scalar(spans: &mut Vec<(String, usize, usize)>, name: &str, len: usize, off: &mut usize) {
            spans.push((name.to_string(), *off, len));
            *off += len;
        }
        scalar(&mut spans, "size", 1, &mut off);
        scalar(&mut spans, "width", 1, &mut off);
        scalar(&mut spans, "height", 1, &mut off);
        let c2 = off;
        scalar(&mut spans, "centroid_2d_x", 1, &mut off);
        scalar(&mut spans, "centroid_2d_y", 1, &mut off);
        spans.push(("centroid_2d".to_string(), c2, 2));
        let c3 = off;
        scalar(&mut spans, "centroid_3d_x", 1, &mut off);
        scalar(&mut spans, "centroid_3d_y", 1, &mut off);
        scalar(&mut spans, "centroid_3d_z", 1, &mut off);
        spans.push(("centroid_3d".to_string(), c3, 3));
        scalar(&mut spans, "min_3d", 3, &mut off);
        scalar(&mut spans, "max_3d", 3, &mut off);
        if appearance_len > 0 {
            scalar(&mut spans, "appearance", appearance_len, &mut off);
        }
        spans.push(("all".to_string(), 0, off));
        FeatureLayout {
            spans,
            len: off,
            appearance_len,
        }
    }

    pub fn span(&self, name: &str) -> Option<(usize, usize)> {
        self.spans
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|&(_, off, len)| (off, len))
    }

    /// Column names for CSV export, `<span>_<index>` for multi-value spans.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.len];
        // Fill from the most specific (shortest) spans outward so scalar
        // aliases win over their covering groups.
        let mut spans: Vec<&(String, usize, usize)> = self
            .spans
            .iter()
            .filter(|(n, _, _)| n != "all")
            .collect();
        spans.sort_by_key(|(_, _, len)| std::cmp::Reverse(*len));
        for (name, off, len) in spans {
            for i in 0..*len {
                names[off + i] = if *len == 1 {
                    name.clone()
                } else {
                    format!("{name}_{i}")
                };
            }
        }
        names
    }
}

/// The Figure-4 style ablation groups: every scalar and histogram feature
/// individually, plus the combination of everything.
pub fn ablation_groups() -> Vec<&'static str> {
    vec![
        "size",
        "centroid_2d_x",
        "centroid_2d_y",
        "centroid_3d_x",
        "centroid_3d_y",
        "centroid_3d_z",
        "hist_a",
        "hist_b",
        "hist_l",
        "hist_nx",
        "hist_ny",
        "hist_nz",
        "hist_x",
        "hist_y",
        "hist_z",
        "all",
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

/// Flatten a descriptor (histograms normalized to unit mass, scalars raw)
/// into the fixed layout, appending the appearance descriptor when present.
pub fn extract_features(
    d: &RegionDescriptor,
    appearance: Option<&[f64]>,
    layout: &FeatureLayout,
) -> Result<FeatureVector> {
    let app_len = appearance.map_or(0, |a| a.len());
    if app_len != layout.appearance_len {
        return Err(Error::DimensionMismatch(format!(
            "appearance descriptor has length {} but the layout declares {}",
            app_len, layout.appearance_len
        )));
    }
    let mut values = Vec::with_capacity(layout.len);
    let n = d.voxel_count as f64;
    for c in 0..NUM_CHANNELS {
        values.extend(d.hist[c].iter().map(|x| x / n));
    }
    values.push(d.size_3d);
    values.push(d.width_3d);
    values.push(d.height_3d);
    values.extend_from_slice(&d.centroid_2d);
    values.extend_from_slice(&d.centroid_3d);
    values.extend_from_slice(&d.min_3d);
    values.extend_from_slice(&d.max_3d);
    if let Some(a) = appearance {
        values.extend_from_slice(a);
    }
    if values.len() != layout.len {
        return Err(Error::DimensionMismatch(format!(
            "descriptor produced {} values but the layout expects {}",
            values.len(),
            layout.len
        )));
    }
    Ok(FeatureVector {
        values,
        layout: layout.clone(),
    })
}

/// Restrict a feature vector to one named group.
pub fn select_spans(v: &FeatureVector, group: &str) -> Result<FeatureVector> {
    let (off, len) = v
        .layout
        .span(group)
        .ok_or_else(|| Error::InvalidInput(format!("unknown feature group '{group}'")))?;
    if group == "all" {
        return Ok(v.clone());
    }
    Ok(FeatureVector {
        values: v.values[off..off + len].to_vec(),
        layout: FeatureLayout {
            spans: vec![(group.to_string(), 0, len), ("all".to_string(), 0, len)],
            len,
            appearance_len: 0,
        },
    })
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n: usize,
    pub d: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(d: usize) -> Self {
        FeatureMatrix { n: 0, d, data: Vec::new() }
    }

    pub fn from_rows(rows: &[FeatureVector]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.values.len());
        let mut m = FeatureMatrix::new(d);
        for r in rows {
            m.push_row(&r.values)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "row has {} values, matrix expects {}",
                row.len(),
                self.d
            )));
        }
        self.data.extend_from_slice(row);
        self.n += 1;
        Ok(())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Copy out the column block `[off, off+len)` of every row.
    pub fn slice_columns(&self, off: usize, len: usize) -> FeatureMatrix {
        assert!(off + len <= self.d);
        let mut data = Vec::with_capacity(self.n * len);
        for i in 0..self.n {
            data.extend_from_slice(&self.row(i)[off..off + len]);
        }
        FeatureMatrix { n: self.n, d: len, data }
    }
}

/// CSV export: header names every column by span and index; one region per
/// row; a trailing integer label column when labels are supplied.
pub fn write_features_csv(
    mut w: impl Write,
    layout: &FeatureLayout,
    rows: &FeatureMatrix,
    labels: Option<&[u32]>,
) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != rows.n {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                l.len(),
                rows.n
            )));
        }
    }
    let mut header = layout.column_names().join(",");
    if labels.is_some() {
        header.push_str(",label");
    }
    writeln!(w, "{header}")?;
    for i in 0..rows.n {
        let mut line = rows
            .row(i)
            .iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(",");
        if let Some(l) = labels {
            line.push_str(&format!(",{}", l[i]));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::region_descriptor;

    fn sample_descriptor() -> RegionDescriptor {
        region_descriptor(
            &[(2, 3), (4, 5)],
            &[[0.1, 0.2, 1.5], [-0.3, 0.1, 2.5]],
            &[[40.0, 5.0, -5.0], [60.0, -5.0, 5.0]],
            &[[0.0, 0.0, -1.0], [1.0, 0.0, 0.0]],
            &HistogramLayout::default(),
        )
        .unwrap()
    }

    #[test]
    fn default_layout_has_254_features() {
        let layout = FeatureLayout::new(&HistogramLayout::default(), 0);
        assert_eq!(layout.len, 254);
        let v = extract_features(&sample_descriptor(), None, &layout).unwrap();
        assert_eq!(v.values.len(), 254);
    }

    #[test]
    fn appearance_slot_extends_the_vector() {
        let layout = FeatureLayout::new(&HistogramLayout::default(), 4);
        assert_eq!(layout.len, 258);
        let v =
            extract_features(&sample_descriptor(), Some(&[1.0, 2.0, 3.0, 4.0]), &layout).unwrap();
        assert_eq!(v.values.len(), 258);
        assert_eq!(&v.values[254..], &[1.0, 2.0, 3.0, 4.0]);

        // Length disagreement is rejected.
        assert!(extract_features(&sample_descriptor(), Some(&[1.0]), &layout).is_err());
        assert!(extract_features(
            &sample_descriptor(),
            None,
            &FeatureLayout::new(&HistogramLayout::default(), 4)
        )
        .is_err());
    }

    #[test]
    fn histogram_spans_sum_to_one() {
        let layout = FeatureLayout::new(&HistogramLayout::default(), 0);
        let v = extract_features(&sample_descriptor(), None, &layout).unwrap();
        for c in crate::hierarchy::CHANNEL_NAMES {
            let (off, len) = layout.span(&format!("hist_{c}")).unwrap();
            let s: f64 = v.values[off..off + len].iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "span hist_{c} sums to {s}");
        }
    }

    #[test]
    fn span_lookups_reassemble_the_histograms() {
        let d = sample_descriptor();
        let layout = FeatureLayout::new(&HistogramLayout::default(), 0);
        let v = extract_features(&d, None, &layout).unwrap();
        for (c, name) in crate::hierarchy::CHANNEL_NAMES.iter().enumerate() {
            let sub = select_spans(&v, &format!("hist_{name}")).unwrap();
            let n = d.voxel_count as f64;
            let expect: Vec<f64> = d.hist[c].iter().map(|x| x / n).collect();
            assert_eq!(sub.values, expect);
        }
    }

    #[test]
    fn named_groups_slice_correctly() {
        let d = sample_descriptor();
        let layout = FeatureLayout::new(&HistogramLayout::default(), 0);
        let v = extract_features(&d, None, &layout).unwrap();

        let l = select_spans(&v, "hist_l").unwrap();
        assert_eq!(l.values.len(), 20);

        let all = select_spans(&v, "all").unwrap();
        assert_eq!(all.values, v.values);

        let c3 = select_spans(&v, "centroid_3d").unwrap();
        assert_eq!(c3.values, d.centroid_3d.to_vec());

        assert!(select_spans(&v, "no_such_group").is_err());
    }

    #[test]
    fn single_voxel_region_has_zero_size() {
        let d = region_descriptor(
            &[(1, 1)],
            &[[0.0, 0.0, 2.0]],
            &[[50.0, 0.0, 0.0]],
            &[[0.0, 0.0, -1.0]],
            &HistogramLayout::default(),
        )
        .unwrap();
        let layout = FeatureLayout::new(&HistogramLayout::default(), 0);
        let v = extract_features(&d, None, &layout).unwrap();
        let (off, _) = layout.span("size").unwrap();
        assert_eq!(v.values[off], 0.0);
    }

    #[test]
    fn csv_export_has_header_and_label_column() {
        let layout = FeatureLayout::new(&HistogramLayout::default(), 0);
        let v = extract_features(&sample_descriptor(), None, &layout).unwrap();
        let m = FeatureMatrix::from_rows(&[v]).unwrap();
        let mut out = Vec::new();
        write_features_csv(&mut out, &layout, &m, Some(&[2])).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("hist_l_0,"));
        assert!(header.ends_with(",label"));
        assert_eq!(header.split(',').count(), 255);
        let row = lines.next().unwrap();
        assert!(row.ends_with(",2"));
    }

    #[test]
    fn column_slicing_matches_rows() {
        let layout = FeatureLayout::new(&HistogramLayout::default(), 0);
        let v = extract_features(&sample_descriptor(), None, &layout).unwrap();
        let m = FeatureMatrix::from_rows(&[v.clone()]).unwrap();
        let (off, len) = layout.span("hist_z").unwrap();
        let sub = m.slice_columns(off, len);
        assert_eq!(sub.row(0), &v.values[off..off + len]);
    }
}
