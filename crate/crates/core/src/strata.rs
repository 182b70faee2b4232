//! Vertical canopy stratification.
//!
//! Each pass bins the remaining points on a grid of the current AFP, builds a
//! height histogram of the circular locale around every cell, smooths it with
//! a wide Gaussian kernel and reads the canopy layers off the concave
//! stretches of the smoothed curve. Points above the threshold between the
//! top two layers form the current (top) layer and are stripped; the loop
//! repeats on the remainder.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{is_ground, PointCloud};
use crate::error::{Error, Result};
use crate::grid::{bin_points, GridSpec, SpatialIndex};

/// Second-derivative values above this count as flat.
const CONCAVITY_TOLERANCE: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrataConfig {
    /// Locale radius as a multiple of AFP.
    pub locale_radius_factor: f64,
    pub locale_radius_floor: f64,
    pub histogram_bin: f64,
    pub kernel_sigma: f64,
    /// Layers whose highest point is below this are discarded.
    pub min_layer_top: f64,
    pub min_remaining_points: usize,
    /// Stop when the remainder's AFP exceeds `locale_radius_floor` times this.
    pub max_afp_factor: f64,
}

impl Default for StrataConfig {
    fn default() -> Self {
        StrataConfig {
            locale_radius_factor: 6.0,
            locale_radius_floor: 1.5,
            histogram_bin: 0.5,
            kernel_sigma: 5.0,
            min_layer_top: 4.0,
            min_remaining_points: 50,
            max_afp_factor: 10.0,
        }
    }
}

impl StrataConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("locale_radius_factor", self.locale_radius_factor),
            ("locale_radius_floor", self.locale_radius_floor),
            ("histogram_bin", self.histogram_bin),
            ("kernel_sigma", self.kernel_sigma),
            ("min_layer_top", self.min_layer_top),
            ("max_afp_factor", self.max_afp_factor),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.min_remaining_points == 0 {
            return Err(Error::InvalidConfig("min_remaining_points must be positive".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let f = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("{key}: not a number: {value}")))
        };
        match key {
            "locale_radius_factor" => self.locale_radius_factor = f()?,
            "locale_radius_floor" => self.locale_radius_floor = f()?,
            "histogram_bin" => self.histogram_bin = f()?,
            "kernel_sigma" => self.kernel_sigma = f()?,
            "min_layer_top" => self.min_layer_top = f()?,
            "max_afp_factor" => self.max_afp_factor = f()?,
            "min_remaining_points" => {
                self.min_remaining_points = value.parse().map_err(|_| {
                    Error::InvalidConfig(format!("{key}: not a count: {value}"))
                })?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn locale_radius(&self, afp: f64) -> f64 {
        (self.locale_radius_factor * afp).max(self.locale_radius_floor)
    }
}

/// Point counts per height bin; bin `i` covers `[origin + i*bin, origin + (i+1)*bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub origin: f64,
    pub bin: f64,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn new(origin: f64, bin: f64, nbins: usize) -> Self {
        Histogram {
            origin,
            bin,
            counts: vec![0.0; nbins],
        }
    }

    pub fn add(&mut self, height: f64) {
        let i = ((height - self.origin) / self.bin).floor();
        if i >= 0.0 && (i as usize) < self.counts.len() {
            self.counts[i as usize] += 1.0;
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        self.origin + (i as f64 + 0.5) * self.bin
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Adds `margin` meters of empty bins below and above.
    pub fn padded(&self, margin: f64) -> Histogram {
        let extra = (margin / self.bin).ceil() as usize;
        let mut counts = vec![0.0; extra];
        counts.extend_from_slice(&self.counts);
        counts.extend(std::iter::repeat_n(0.0, extra));
        Histogram {
            origin: self.origin - extra as f64 * self.bin,
            bin: self.bin,
            counts,
        }
    }
}

/// Height histogram of the points within `radius` (horizontal) of `center`,
/// spanning from `min(0, lowest)` to the highest locale point.
pub fn locale_histogram(cloud: &PointCloud, center: (f64, f64), radius: f64, bin: f64) -> Histogram {
    let r2 = radius * radius;
    let heights: Vec<f64> = cloud
        .points
        .iter()
        .filter(|p| {
            let (dx, dy) = (p.x - center.0, p.y - center.1);
            dx * dx + dy * dy <= r2
        })
        .map(|p| p.z)
        .collect();
    let lo = heights.iter().copied().fold(0.0f64, f64::min);
    let hi = heights.iter().copied().fold(lo, f64::max);
    let origin = (lo / bin).floor() * bin;
    let nbins = (((hi - origin) / bin).floor() as usize) + 1;
    let mut h = Histogram::new(origin, bin, nbins);
    for z in heights {
        h.add(z);
    }
    h
}

/// A salient height range `[low, high]` (bin centers), meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightRange {
    pub low: f64,
    pub high: f64,
}

impl HeightRange {
    pub fn contains(&self, h: f64) -> bool {
        h >= self.low && h <= self.high
    }
}

/// Discrete Gaussian kernel of standard deviation `sigma` bins, truncated at
/// eight sigma. A shorter cut leaves a step at the edge of the smoothed tail
/// that reads as a concave run.
fn gaussian_kernel(sigma_bins: f64) -> Vec<f64> {
    let half = (8.0 * sigma_bins).ceil() as i64;
    (-half..=half)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma_bins * sigma_bins)).exp())
        .collect()
}

/// Convolution with weights renormalized at the array ends, so a constant
/// histogram stays constant.
fn smooth(counts: &[f64], kernel: &[f64]) -> Vec<f64> {
    let half = kernel.len() / 2;
    let n = counts.len();
    let mut out = vec![0.0; n];
    // Scatter from the occupied bins only; locale histograms are sparse.
    for (j, &c) in counts.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let lo = j.saturating_sub(half);
        let hi = (j + half).min(n - 1);
        for (i, o) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *o += kernel[i + half - j] * c;
        }
    }
    let mut prefix = Vec::with_capacity(kernel.len() + 1);
    prefix.push(0.0);
    for &k in kernel {
        prefix.push(prefix.last().unwrap() + k);
    }
    for (i, o) in out.iter_mut().enumerate() {
        // Kernel taps k with 0 <= i + k - half < n.
        let k_lo = half.saturating_sub(i);
        let k_hi = (n - 1 + half - i).min(kernel.len() - 1);
        *o /= prefix[k_hi + 1] - prefix[k_lo];
    }
    out
}

fn concave_runs(h: &Histogram, smoothed: &[f64]) -> Vec<HeightRange> {
    let n = smoothed.len();
    let mut ranges = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..n {
        let concave = i > 0
            && i + 1 < n
            && smoothed[i - 1] - 2.0 * smoothed[i] + smoothed[i + 1] < CONCAVITY_TOLERANCE;
        match (concave, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                ranges.push(HeightRange {
                    low: h.center(s),
                    high: h.center(i - 1),
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        ranges.push(HeightRange {
            low: h.center(s),
            high: h.center(n - 1),
        });
    }
    ranges.reverse();
    ranges
}

/// Height ranges where the Gaussian-smoothed histogram is strictly concave,
/// ordered from the top down.
pub fn salient_layers(hist: &Histogram, sigma: f64) -> Vec<HeightRange> {
    if hist.counts.iter().all(|&c| c == 0.0) {
        return Vec::new();
    }
    let kernel = gaussian_kernel(sigma / hist.bin);
    concave_runs(hist, &smooth(&hist.counts, &kernel))
}

/// Height separating the top layer from the one below it: the midpoint of
/// the bottom of the first range and the top of the second.
pub fn top_layer_threshold(ranges: &[HeightRange]) -> Option<f64> {
    match ranges {
        [first, second, ..] => Some(0.5 * (first.low + second.high)),
        _ => None,
    }
}

/// One stratified canopy layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CanopyLayer {
    /// 1 is the top (overstory) layer.
    pub index: u32,
    /// Ids of the member points in the input cloud.
    pub point_ids: Vec<usize>,
    pub points: PointCloud,
    pub starting_height: f64,
    pub thickness: f64,
    /// Points per square meter over the input extent.
    pub density: f64,
}

/// Per-pass diagnostics.
#[derive(Debug, Clone)]
pub struct StrataPass {
    pub afp: f64,
    pub grid: GridSpec,
    /// Threshold per grid cell (row-major); `None` for empty or single-layer cells.
    pub thresholds: Vec<Option<f64>>,
    pub moved: usize,
}

#[derive(Debug, Clone)]
pub struct Stratification {
    pub layers: Vec<CanopyLayer>,
    /// Stripped layers entirely below `min_layer_top`.
    pub discarded_low: Vec<usize>,
    /// Points left when the remainder became too small or too sparse.
    pub discarded_remainder: Vec<usize>,
    /// Ground points excluded up front.
    pub ground: Vec<usize>,
    pub passes: Vec<StrataPass>,
}

impl Stratification {
    pub fn accounted(&self) -> usize {
        self.layers.iter().map(|l| l.point_ids.len()).sum::<usize>()
            + self.discarded_low.len()
            + self.discarded_remainder.len()
            + self.ground.len()
    }
}

pub fn stratify(cloud: &PointCloud, cfg: &StrataConfig) -> Vec<CanopyLayer> {
    stratify_detailed(cloud, cfg).layers
}

struct CellOutcome {
    moved: Vec<usize>,
    threshold: Option<f64>,
    lower: f64,
    top: f64,
}

pub fn stratify_detailed(cloud: &PointCloud, cfg: &StrataConfig) -> Stratification {
    let area = cloud.extent.area();
    let (ground, mut remainder): (Vec<usize>, Vec<usize>) =
        (0..cloud.len()).partition(|&i| is_ground(&cloud.points[i]));

    let mut out = Stratification {
        layers: Vec::new(),
        discarded_low: Vec::new(),
        discarded_remainder: Vec::new(),
        ground,
        passes: Vec::new(),
    };
    if area <= 0.0 {
        out.discarded_remainder = remainder;
        return out;
    }
    let max_height = remainder
        .iter()
        .map(|&i| cloud.points[i].z)
        .fold(0.0f64, f64::max);
    let margin = 3.0 * cfg.kernel_sigma;
    let hist_origin = -((margin / cfg.histogram_bin).ceil()) * cfg.histogram_bin;
    let nbins = ((max_height + margin - hist_origin) / cfg.histogram_bin).ceil() as usize + 1;
    let kernel = gaussian_kernel(cfg.kernel_sigma / cfg.histogram_bin);

    while remainder.len() >= cfg.min_remaining_points {
        let afp = 1.0 / (remainder.len() as f64 / area).sqrt();
        if afp > cfg.locale_radius_floor * cfg.max_afp_factor {
            break;
        }
        let radius = cfg.locale_radius(afp);
        let grid = GridSpec::covering(&cloud.extent, afp);
        let coords: Vec<(f64, f64)> = remainder.iter().map(|&i| cloud.points[i].xy()).collect();
        let cells = bin_points(&grid, coords.iter().copied());
        let index = SpatialIndex::new(&coords, radius);

        let outcomes: Vec<Option<CellOutcome>> = (0..grid.len())
            .into_par_iter()
            .map(|cell| {
                let members = &cells.cells[cell];
                if members.is_empty() {
                    return None;
                }
                let (col, row) = (cell % grid.ncols, cell / grid.ncols);
                let (cx, cy) = grid.cell_center(col, row);
                let mut hist = Histogram::new(hist_origin, cfg.histogram_bin, nbins);
                for k in index.within(&coords, cx, cy, radius) {
                    hist.add(cloud.points[remainder[k]].z);
                }
                let ranges = concave_runs(&hist, &smooth(&hist.counts, &kernel));
                let threshold = top_layer_threshold(&ranges);
                let heights = members.iter().map(|&k| cloud.points[remainder[k]].z);
                let moved: Vec<usize> = match threshold {
                    Some(t) => members
                        .iter()
                        .copied()
                        .filter(|&k| cloud.points[remainder[k]].z >= t)
                        .collect(),
                    None => members.clone(),
                };
                let lowest = heights.clone().fold(f64::INFINITY, f64::min);
                let highest = heights.fold(f64::NEG_INFINITY, f64::max);
                let top = ranges.first().map_or(highest, |r| r.high);
                let lower = match threshold {
                    Some(t) => t,
                    None => ranges.last().map_or(lowest, |r| r.low).max(0.0),
                };
                Some(CellOutcome {
                    moved,
                    threshold,
                    lower,
                    top,
                })
            })
            .collect();

        let mut moved_local: Vec<usize> = Vec::new();
        let mut lowers = Vec::new();
        let mut thicknesses = Vec::new();
        let mut thresholds = vec![None; grid.len()];
        for (cell, o) in outcomes.into_iter().enumerate() {
            let Some(o) = o else { continue };
            thresholds[cell] = o.threshold;
            if !o.moved.is_empty() {
                lowers.push(o.lower);
                thicknesses.push((o.top - o.lower).max(0.0));
            }
            moved_local.extend(o.moved);
        }
        if moved_local.is_empty() {
            // Every cell sat below its threshold; take the rest as one layer.
            moved_local = (0..remainder.len()).collect();
        }
        moved_local.sort_unstable();

        let mut is_moved = vec![false; remainder.len()];
        for &k in &moved_local {
            is_moved[k] = true;
        }
        let mut layer_ids: Vec<usize> = moved_local.iter().map(|&k| remainder[k]).collect();
        layer_ids.sort_unstable();
        remainder = remainder
            .iter()
            .enumerate()
            .filter(|(k, _)| !is_moved[*k])
            .map(|(_, &i)| i)
            .collect();

        out.passes.push(StrataPass {
            afp,
            grid,
            thresholds,
            moved: layer_ids.len(),
        });

        let top = layer_ids
            .iter()
            .map(|&i| cloud.points[i].z)
            .fold(f64::NEG_INFINITY, f64::max);
        if top < cfg.min_layer_top {
            out.discarded_low.extend(layer_ids);
            continue;
        }
        let starting_height = crate::treeseg::median(&mut lowers).unwrap_or(0.0);
        let thickness = crate::treeseg::median(&mut thicknesses).unwrap_or(0.0);
        let density = layer_ids.len() as f64 / area;
        let points = cloud.subset(&layer_ids);
        out.layers.push(CanopyLayer {
            index: out.layers.len() as u32 + 1,
            point_ids: layer_ids,
            points,
            starting_height,
            thickness,
            density,
        });
    }
    out.discarded_low.sort_unstable();
    out.discarded_remainder = remainder;
    out
}

/// Summary row of a canopy layer (or of all layers together).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    /// `None` for the aggregate row.
    pub layer: Option<u32>,
    pub n_points: usize,
    pub starting_height: f64,
    pub thickness: f64,
    pub density: f64,
}

/// Per-layer rows followed by an aggregate row. The aggregate starts at the
/// lowest layer's starting height, reaches the top of layer 1 and sums the
/// densities.
pub fn layer_stats(layers: &[CanopyLayer]) -> Vec<LayerStats> {
    let mut rows: Vec<LayerStats> = layers
        .iter()
        .map(|l| LayerStats {
            layer: Some(l.index),
            n_points: l.point_ids.len(),
            starting_height: l.starting_height,
            thickness: l.thickness,
            density: l.density,
        })
        .collect();
    if let (Some(first), Some(_)) = (layers.first(), layers.last()) {
        let start = layers
            .iter()
            .map(|l| l.starting_height)
            .fold(f64::INFINITY, f64::min);
        let top = first.starting_height + first.thickness;
        rows.push(LayerStats {
            layer: None,
            n_points: layers.iter().map(|l| l.point_ids.len()).sum(),
            starting_height: start,
            thickness: (top - start).max(0.0),
            density: layers.iter().map(|l| l.density).sum(),
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{HeightFrame, Point3D};
    use crate::grid::Extent;

    fn gaussian_hist(modes: &[(f64, f64, f64)], bin: f64, top: f64) -> Histogram {
        // (mean, sd, mass)
        let n = (top / bin) as usize;
        let mut h = Histogram::new(0.0, bin, n);
        for i in 0..n {
            let x = h.center(i);
            h.counts[i] = modes
                .iter()
                .map(|&(m, s, w)| w * (-(x - m).powi(2) / (2.0 * s * s)).exp())
                .sum();
        }
        h
    }

    proptest::proptest! {
        #[test]
        fn sparse_smoothing_matches_direct_convolution(
            counts in proptest::collection::vec(proptest::prop_oneof![proptest::strategy::Just(0.0), 0.0f64..20.0], 1..120),
            sigma in 0.5f64..12.0,
        ) {
            let kernel = gaussian_kernel(sigma);
            let half = (kernel.len() / 2) as i64;
            let n = counts.len() as i64;
            let fast = smooth(&counts, &kernel);
            for i in 0..n {
                let (mut s, mut w) = (0.0, 0.0);
                for (k, &kw) in kernel.iter().enumerate() {
                    let j = i + k as i64 - half;
                    if (0..n).contains(&j) {
                        s += kw * counts[j as usize];
                        w += kw;
                    }
                }
                proptest::prop_assert!((fast[i as usize] - s / w).abs() <= 1e-9 * (1.0 + s / w));
            }
        }
    }

    #[test]
    fn constant_histogram_stays_constant() {
        let flat = smooth(&[3.0; 40], &gaussian_kernel(10.0));
        assert!(flat.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn histogram_examples() {
        let pts = (0..20)
            .map(|i| Point3D::vegetation(i as f64 * 0.1, 0.0, 10.0))
            .collect();
        let c = PointCloud::from_points(pts, HeightFrame::AboveGround);
        let h = locale_histogram(&c, (1.0, 0.0), 5.0, 0.5);
        let nonzero: Vec<usize> = (0..h.counts.len()).filter(|&i| h.counts[i] > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        let i = nonzero[0];
        assert!(h.origin + i as f64 * h.bin <= 10.0 && 10.0 < h.origin + (i + 1) as f64 * h.bin);
        assert_eq!(h.counts[i], 20.0);

        let h = locale_histogram(&c, (0.0, 0.0), 0.1, 0.5);
        assert_eq!(h.total(), 2.0); // the points at 0.0 and 0.1
        let h = locale_histogram(&c, (0.05, 0.0), 0.01, 0.5);
        assert_eq!(h.total(), 0.0);
    }

    #[test]
    fn bimodal_histogram_masses() {
        let mut pts = Vec::new();
        for i in 0..60 {
            pts.push(Point3D::vegetation(0.01 * i as f64, 0.0, 10.0));
        }
        for i in 0..40 {
            pts.push(Point3D::vegetation(0.01 * i as f64, 0.01, 25.0));
        }
        let c = PointCloud::from_points(pts, HeightFrame::AboveGround);
        let h = locale_histogram(&c, (0.3, 0.0), 2.0, 0.5);
        let total = h.total();
        let low: f64 = (0..h.counts.len()).filter(|&i| h.center(i) < 15.0).map(|i| h.counts[i]).sum();
        assert_eq!(total, 100.0);
        assert!((low / total - 0.6).abs() < 1e-12);
    }

    #[test]
    fn single_bump_one_range() {
        let h = gaussian_hist(&[(15.0, 2.0, 50.0)], 0.5, 40.0).padded(15.0);
        let r = salient_layers(&h, 5.0);
        assert_eq!(r.len(), 1);
        assert!(r[0].contains(15.0));
    }

    #[test]
    fn separated_modes_two_ranges() {
        let h = gaussian_hist(&[(25.0, 2.0, 40.0), (10.0, 1.5, 30.0)], 0.5, 45.0).padded(15.0);
        let r = salient_layers(&h, 5.0);
        assert_eq!(r.len(), 2);
        assert!(r[0].contains(25.0));
        assert!(r[1].contains(10.0));
        assert!(r[0].low > r[1].high);
    }

    #[test]
    fn uniform_histogram_no_ranges() {
        let h = Histogram {
            origin: 0.0,
            bin: 0.5,
            counts: vec![3.0; 80],
        };
        assert!(salient_layers(&h, 5.0).is_empty());
        let zero = Histogram::new(0.0, 0.5, 10);
        assert!(salient_layers(&zero, 5.0).is_empty());
    }

    #[test]
    fn threshold_examples() {
        let r = |low, high| HeightRange { low, high };
        assert_eq!(top_layer_threshold(&[r(20.0, 30.0), r(5.0, 12.0)]), Some(16.0));
        assert_eq!(top_layer_threshold(&[r(20.0, 30.0)]), None);
        assert_eq!(top_layer_threshold(&[]), None);
        assert_eq!(top_layer_threshold(&[r(14.0, 30.0), r(5.0, 14.0)]), Some(14.0));
    }

    #[test]
    fn low_cloud_has_no_layers() {
        let pts = (0..400)
            .map(|i| Point3D::vegetation((i % 20) as f64 * 0.5, (i / 20) as f64 * 0.5, 1.0 + (i % 7) as f64 * 0.3))
            .collect();
        let c = PointCloud::with_extent(pts, Extent::new(0.0, 0.0, 10.0, 10.0), HeightFrame::AboveGround);
        let s = stratify_detailed(&c, &StrataConfig::default());
        assert!(s.layers.is_empty());
        assert_eq!(s.accounted(), 400);
    }

    #[test]
    fn empty_cloud_has_no_layers() {
        let c = PointCloud::with_extent(vec![], Extent::new(0.0, 0.0, 10.0, 10.0), HeightFrame::AboveGround);
        assert!(stratify(&c, &StrataConfig::default()).is_empty());
    }

    #[test]
    fn stats_aggregate() {
        let c = PointCloud::from_points(vec![], HeightFrame::AboveGround);
        let layer = |index, start, thick, density| CanopyLayer {
            index,
            point_ids: vec![0; 3],
            points: c.clone(),
            starting_height: start,
            thickness: thick,
            density,
        };
        let one = layer_stats(&[layer(1, 18.0, 8.0, 42.0)]);
        assert_eq!(one.len(), 2);
        assert_eq!(one[1].density, one[0].density);
        assert_eq!(one[1].starting_height, 18.0);
        assert_eq!(one[1].thickness, 8.0);
        let two = layer_stats(&[layer(1, 18.0, 8.0, 42.0), layer(2, 4.0, 8.0, 5.0)]);
        assert_eq!(two[2].density, 47.0);
        assert_eq!(two[2].starting_height, 4.0);
        assert_eq!(two[2].thickness, 22.0);
    }
}
