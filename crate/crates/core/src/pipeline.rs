//! End-to-end segmentation of one frame: back-projection, normals, graph
//! over-segmentation, hierarchy, tree cut, and per-region features.

use serde::{Deserialize, Serialize};

use crate::features::{extract_features, FeatureLayout, FeatureMatrix};
use crate::geometry::{depth_to_cloud, CameraIntrinsics, ColorImage, DepthImage, PointCloud};
use crate::hierarchy::{
    build_dendrogram, build_sgraph, compute_descriptors, cut_dendrogram, Dendrogram,
    HistogramLayout, RegionDescriptor,
};
use crate::normals::{estimate_normals, NormalMap, NormalParams};
use crate::oversegment::{build_voxel_graph, segment_graph, FHParams, SegmentMap};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    /// `None` falls back to Kinect-class defaults for the frame size.
    pub intrinsics: Option<CameraIntrinsics>,
    pub normals: NormalParams,
    /// Lab distance rescale inside the edge weight.
    pub lab_scale: f64,
    pub fh: FHParams,
    pub hist: HistogramLayout,
    /// Dendrogram cut as a fraction of the maximum histogram distance.
    pub tree_cut: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            intrinsics: None,
            normals: NormalParams::default(),
            lab_scale: 0.01,
            fh: FHParams::default(),
            hist: HistogramLayout::default(),
            tree_cut: 0.15,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        if self.normals.window < 1 {
            return Err(Error::InvalidParam("normal window must be >= 1".into()));
        }
        if !(self.normals.max_depth_gap > 0.0) {
            return Err(Error::InvalidParam("max_depth_gap must be positive".into()));
        }
        if !(self.lab_scale > 0.0) {
            return Err(Error::InvalidParam("lab_scale must be positive".into()));
        }
        self.fh.validate()?;
        self.hist.validate()?;
        if !(0.0..=1.0).contains(&self.tree_cut) {
            return Err(Error::InvalidParam(format!(
                "tree_cut must be in [0,1], got {}",
                self.tree_cut
            )));
        }
        Ok(())
    }

    pub fn intrinsics_for(&self, width: u32, height: u32) -> CameraIntrinsics {
        self.intrinsics
            .unwrap_or_else(|| CameraIntrinsics::kinect_default(width, height))
    }
}

/// Every intermediate of the per-frame pipeline.
#[derive(Debug, Clone)]
pub struct SegmentedFrame {
    pub cloud: PointCloud,
    pub normal_map: NormalMap,
    /// Over-segmentation (dendrogram leaves).
    pub leaves: SegmentMap,
    pub dendrogram: Dendrogram,
    /// Flat segmentation after the tree cut.
    pub segments: SegmentMap,
    /// Descriptor per final segment, recomputed from voxels.
    pub descriptors: Vec<RegionDescriptor>,
}

pub fn segment_frame(
    depth: &DepthImage,
    color: &ColorImage,
    params: &PipelineParams,
) -> Result<SegmentedFrame> {
    params.validate()?;
    let k = params.intrinsics_for(depth.width, depth.height);
    let cloud = depth_to_cloud(depth, color, &k)?;
    let normal_map = estimate_normals(&cloud, &params.normals)?;
    let graph = build_voxel_graph(&cloud, &normal_map, params.lab_scale)?;
    let leaves = segment_graph(&graph, &params.fh)?;
    let leaf_descriptors = compute_descriptors(&leaves, &cloud, &normal_map, &params.hist)?;
    let sgraph = build_sgraph(&leaves, leaf_descriptors)?;
    let dendrogram = build_dendrogram(&sgraph)?;
    let segments = cut_dendrogram(&dendrogram, params.tree_cut, &leaves)?;
    let descriptors = compute_descriptors(&segments, &cloud, &normal_map, &params.hist)?;
    Ok(SegmentedFrame {
        cloud,
        normal_map,
        leaves,
        dendrogram,
        segments,
        descriptors,
    })
}

/// Feature rows for every final segment of a frame, in region-id order.
pub fn frame_features(frame: &SegmentedFrame, layout: &FeatureLayout) -> Result<FeatureMatrix> {
    let mut m = FeatureMatrix::new(layout.len);
    for d in &frame.descriptors {
        let v = extract_features(d, None, layout)?;
        m.push_row(&v.values)?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn all_missing_depth_yields_empty_segmentation() {
        let depth = DepthImage::zeros(32, 24);
        let color = ColorImage::filled(32, 24, [0, 0, 0]);
        let frame = segment_frame(&depth, &color, &PipelineParams::default()).unwrap();
        assert_eq!(frame.segments.num_regions(), 0);
        assert_eq!(frame.dendrogram.leaf_count, 0);
    }

    #[test]
    fn plane_and_box_scene_separates_regions() {
        let spec = synthetic::SceneSpec {
            width: 96,
            height: 72,
            intrinsics: CameraIntrinsics::kinect_default(96, 72),
            primitives: vec![
                synthetic::Primitive {
                    shape: synthetic::Shape::Plane {
                        point: [0.0, 0.0, 3.0],
                        normal: [0.0, 0.0, -1.0],
                    },
                    color: [180, 180, 180],
                    class_id: 0,
                    instance_id: 0,
                },
                synthetic::Primitive {
                    shape: synthetic::Shape::Box {
                        min: [-0.4, -0.4, 2.0],
                        max: [0.4, 0.4, 2.6],
                    },
                    color: [200, 40, 40],
                    class_id: 1,
                    instance_id: 1,
                },
            ],
            depth_sigma: 0.0,
            color_sigma: 0.0,
            seed: 0,
        };
        let scene = synthetic::render(&spec).unwrap();
        let params = PipelineParams {
            normals: crate::normals::NormalParams {
                window: 1,
                max_depth_gap: 0.05,
            },
            fh: FHParams {
                k: 1.0,
                min_size: 20,
            },
            ..Default::default()
        };
        let frame = segment_frame(&scene.depth, &scene.color, &params).unwrap();
        assert!(frame.segments.num_regions() >= 2);

        // The box face and the plane must land in different segments.
        let center = frame.segments.region_of(48, 36);
        let corner = frame.segments.region_of(6, 6);
        assert!(center.is_some() && corner.is_some());
        assert_ne!(center, corner);

        let features = frame_features(
            &frame,
            &FeatureLayout::new(&params.hist, 0),
        )
        .unwrap();
        assert_eq!(features.n, frame.segments.num_regions());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let spec = synthetic::suite_scene(1234, 80, 60, 0.005, 2.0);
        let scene = synthetic::render(&spec).unwrap();
        let params = PipelineParams::default();
        let a = segment_frame(&scene.depth, &scene.color, &params).unwrap();
        let b = segment_frame(&scene.depth, &scene.color, &params).unwrap();
        assert_eq!(a.segments, b.segments);
        assert_eq!(a.leaves, b.leaves);
    }
}
