//! Point clouds and the preprocessing that turns them into smoothed LiDAR
//! surface points (LSPs).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dem::Dem;
use crate::error::{Error, Result};
use crate::grid::{Extent, GridSpec, SpatialIndex};

/// Unclassified returns lower than this (meters above ground) count as ground.
pub const GROUND_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointClass {
    Ground,
    Vegetation,
    Unclassified,
}

impl PointClass {
    /// ASPRS-style classification code.
    pub fn code(self) -> u8 {
        match self {
            PointClass::Unclassified => 0,
            PointClass::Ground => 2,
            PointClass::Vegetation => 5,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            2 => PointClass::Ground,
            3..=5 => PointClass::Vegetation,
            _ => PointClass::Unclassified,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub class: PointClass,
}

impl Point3D {
    pub const fn new(x: f64, y: f64, z: f64, class: PointClass) -> Self {
        Point3D { x, y, z, class }
    }

    pub fn vegetation(x: f64, y: f64, z: f64) -> Self {
        Point3D::new(x, y, z, PointClass::Vegetation)
    }

    pub fn xy(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeightFrame {
    Absolute,
    AboveGround,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3D>,
    pub extent: Extent,
    pub frame: HeightFrame,
}

impl PointCloud {
    /// Builds a cloud whose extent is the bounding box of its points.
    pub fn from_points(points: Vec<Point3D>, frame: HeightFrame) -> Self {
        let extent = Extent::bounding(points.iter().map(Point3D::xy))
            .unwrap_or(Extent::new(0.0, 0.0, 0.0, 0.0));
        PointCloud {
            points,
            extent,
            frame,
        }
    }

    /// Builds a cloud over an explicit extent (e.g. a tile or plot). The
    /// extent is widened if a point falls outside it.
    pub fn with_extent(points: Vec<Point3D>, extent: Extent, frame: HeightFrame) -> Self {
        let extent = match Extent::bounding(points.iter().map(Point3D::xy)) {
            Some(b) => extent.union(&b),
            None => extent,
        };
        PointCloud {
            points,
            extent,
            frame,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points per square meter over the cloud extent.
    pub fn point_density(&self) -> f64 {
        let area = self.extent.area();
        if area > 0.0 {
            self.points.len() as f64 / area
        } else {
            0.0
        }
    }

    pub fn subset(&self, ids: &[usize]) -> PointCloud {
        PointCloud {
            points: ids.iter().map(|&i| self.points[i]).collect(),
            extent: self.extent,
            frame: self.frame,
        }
    }
}

/// Average footprint: the characteristic spacing `1 / sqrt(density)`.
pub fn compute_afp(cloud: &PointCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("average footprint of an empty cloud"));
    }
    let area = cloud.extent.area();
    if area <= 0.0 {
        return Err(Error::InvalidRecord(
            "point cloud extent has zero area".into(),
        ));
    }
    Ok(1.0 / (cloud.len() as f64 / area).sqrt())
}

/// Result of height normalization.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub cloud: PointCloud,
    /// Points that lay outside the DEM extent and used the nearest cell.
    pub outside_dem: usize,
}

/// Replaces absolute elevations by heights above the DEM surface, clamping
/// negative heights to zero.
pub fn normalize_heights(cloud: &PointCloud, dem: &Dem) -> Normalized {
    let dem_extent = dem.grid.extent();
    let mut outside = 0;
    let points = cloud
        .points
        .iter()
        .map(|p| {
            if !dem_extent.contains(p.x, p.y) {
                outside += 1;
            }
            let ground = dem.elevation_at(p.x, p.y);
            Point3D {
                z: (p.z - ground).max(0.0),
                ..*p
            }
        })
        .collect();
    Normalized {
        cloud: PointCloud {
            points,
            extent: cloud.extent,
            frame: HeightFrame::AboveGround,
        },
        outside_dem: outside,
    }
}

/// Highest point per grid cell, above ground.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<Point3D>,
    /// Index of each surface point in the source cloud.
    pub ids: Vec<usize>,
    /// Unsmoothed heights; equal to `points[i].z` until smoothing.
    pub raw_z: Vec<f64>,
    pub afp: f64,
}

impl SurfacePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(Point3D::xy).collect()
    }

    pub fn from_parts(points: Vec<Point3D>, ids: Vec<usize>, afp: f64) -> Self {
        assert_eq!(points.len(), ids.len());
        let raw_z = points.iter().map(|p| p.z).collect();
        SurfacePointSet {
            points,
            ids,
            raw_z,
            afp,
        }
    }
}

pub fn is_ground(p: &Point3D) -> bool {
    p.class == PointClass::Ground
        || (p.class == PointClass::Unclassified && p.z < GROUND_EPSILON)
}

/// LSP extraction on a grid of `cell_width` anchored at the cloud extent.
pub fn extract_lsps(cloud: &PointCloud, cell_width: f64) -> Result<SurfacePointSet> {
    let spec = GridSpec::covering(&cloud.extent, cell_width);
    extract_lsps_on(cloud, &spec)
}

/// LSP extraction on an explicit grid, so tiles of one block can share the
/// block's cell alignment. Output is ordered by cell index.
pub fn extract_lsps_on(cloud: &PointCloud, spec: &GridSpec) -> Result<SurfacePointSet> {
    if !(spec.cell_width > 0.0) {
        return Err(Error::InvalidConfig("LSP cell width must be positive".into()));
    }
    let mut best: Vec<(usize, usize)> = Vec::new();
    let mut cell_best: std::collections::HashMap<usize, usize> = Default::default();
    for (i, p) in cloud.points.iter().enumerate() {
        let (c, r) = spec.cell_of_clamped(p.x, p.y);
        let cell = spec.index(c, r);
        cell_best
            .entry(cell)
            .and_modify(|j| {
                if p.z > cloud.points[*j].z {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    best.extend(cell_best);
    best.sort_unstable();

    let mut points = Vec::with_capacity(best.len());
    let mut ids = Vec::with_capacity(best.len());
    for (_, i) in best {
        let p = cloud.points[i];
        if is_ground(&p) {
            continue;
        }
        points.push(p);
        ids.push(i);
    }
    Ok(SurfacePointSet::from_parts(points, ids, spec.cell_width))
}

/// Gaussian-weighted height smoothing over neighbors within 3 sigma.
pub fn gaussian_smooth(lsps: &SurfacePointSet, sigma: f64) -> SurfacePointSet {
    assert!(sigma > 0.0, "smoothing sigma must be positive");
    let coords = lsps.coords();
    let radius = 3.0 * sigma;
    let index = SpatialIndex::new(&coords, radius);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let smoothed: Vec<f64> = (0..coords.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = coords[i];
            let (mut wsum, mut zsum) = (0.0, 0.0);
            index.for_each_candidate(x, y, radius, |j| {
                let (dx, dy) = (coords[j].0 - x, coords[j].1 - y);
                let d2 = dx * dx + dy * dy;
                if d2 <= radius * radius {
                    let w = (-d2 * inv).exp();
                    wsum += w;
                    zsum += w * lsps.points[j].z;
                }
            });
            zsum / wsum
        })
        .collect();
    let points = lsps
        .points
        .iter()
        .zip(smoothed)
        .map(|(p, z)| Point3D { z, ..*p })
        .collect();
    SurfacePointSet {
        points,
        ids: lsps.ids.clone(),
        raw_z: lsps.raw_z.clone(),
        afp: lsps.afp,
    }
}

/// Full preprocessing of a height-normalized cloud: AFP, LSPs, smoothing with
/// sigma = `sigma_factor` x AFP.
pub fn prepare_surface(cloud: &PointCloud, sigma_factor: f64) -> Result<SurfacePointSet> {
    let afp = compute_afp(cloud)?;
    let lsps = extract_lsps(cloud, afp)?;
    Ok(gaussian_smooth(&lsps, sigma_factor * afp))
}
