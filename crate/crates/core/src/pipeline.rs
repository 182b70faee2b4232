//! End-to-end runs over a height-normalized cloud: segmentation of the whole
//! canopy, or stratification followed by segmentation of every layer.

use crate::cloud::{prepare_surface, PointCloud, SurfacePointSet};
use crate::error::Result;
use crate::strata::{stratify_detailed, StrataConfig, Stratification};
use crate::treeseg::{segment_trees_detailed, Crown, SegConfig, Segmentation};

#[derive(Debug, Clone)]
pub struct SegmentRun {
    pub surface: SurfacePointSet,
    pub segmentation: Segmentation,
}

impl SegmentRun {
    pub fn crowns(&self) -> &[Crown] {
        &self.segmentation.crowns
    }
}

/// Segments an above-ground cloud. A cloud without points yields no crowns.
pub fn segment_cloud(cloud: &PointCloud, cfg: &SegConfig) -> Result<SegmentRun> {
    cfg.validate()?;
    if cloud.is_empty() || cloud.extent.area() <= 0.0 {
        return Ok(SegmentRun {
            surface: SurfacePointSet::from_parts(vec![], vec![], 0.0),
            segmentation: Segmentation {
                crowns: vec![],
                labels: vec![],
                crown_points: vec![],
                discarded: vec![],
            },
        });
    }
    let surface = prepare_surface(cloud, cfg.smoothing_sigma_factor)?;
    let segmentation = segment_trees_detailed(&surface, cfg);
    Ok(SegmentRun { surface, segmentation })
}

#[derive(Debug, Clone)]
pub struct LayeredRun {
    pub strata: Stratification,
    /// Per-layer runs; crown member ids refer to the input cloud.
    pub runs: Vec<SegmentRun>,
    /// All crowns, layer by layer, renumbered from 1 and tagged with their layer.
    pub crowns: Vec<Crown>,
}

/// Stratifies, then segments each layer on its own.
pub fn stratify_then_segment(cloud: &PointCloud, strata_cfg: &StrataConfig, seg_cfg: &SegConfig) -> Result<LayeredRun> {
    strata_cfg.validate()?;
    seg_cfg.validate()?;
    let strata = stratify_detailed(cloud, strata_cfg);
    let mut runs = Vec::with_capacity(strata.layers.len());
    let mut crowns = Vec::new();
    for layer in &strata.layers {
        let mut run = segment_cloud(&layer.points, seg_cfg)?;
        for id in run.surface.ids.iter_mut() {
            *id = layer.point_ids[*id];
        }
        for crown in run.segmentation.crowns.iter_mut() {
            for m in crown.members.iter_mut() {
                *m = layer.point_ids[*m];
            }
            crown.members.sort_unstable();
            crown.layer = Some(layer.index);
            let mut tagged = crown.clone();
            tagged.id = crowns.len() as u32 + 1;
            crowns.push(tagged);
        }
        runs.push(run);
    }
    Ok(LayeredRun { strata, runs, crowns })
}
