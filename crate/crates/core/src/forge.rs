//! Synthetic forests with ground truth.
//!
//! Trees are placed per stand, each with an analytic crown surface. Pulses
//! fall uniformly over the extent; a pulse is assigned to canopy story `k`
//! with probability `p_k` and returns from the highest story-`k` crown above
//! it, or from the ground when no such crown covers it. Every story is thus
//! sampled at `p_k` times the pulse density wherever it has crowns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{HeightFrame, Point3D, PointClass, PointCloud};
use crate::dem::Dem;
use crate::error::{Error, Result};
use crate::eval::{CrownClass, StemRecord};
use crate::grid::{Extent, SpatialIndex};
use crate::occlusion::{log_series_pmf, LogSeriesModel};
use crate::strata::CanopyLayer;

const PULSE_CHUNK: usize = 1 << 16;
const PLACEMENT_ATTEMPTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrownShape {
    Cone,
    Ellipsoid,
    Hemisphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub crown_radius: f64,
    pub crown_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Poisson { count: usize },
    JitteredGrid { spacing: f64, jitter: f64 },
    Explicit { trees: Vec<TreeSpec> },
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandSpec {
    /// Canopy story, 1 for the overstory.
    #[serde(default = "one")]
    pub story: u32,
    pub placement: Placement,
    /// Placement region; the forest extent when absent.
    #[serde(default)]
    pub region: Option<Extent>,
    #[serde(default)]
    pub height: (f64, f64),
    /// Crown length as a fraction of tree height.
    #[serde(default)]
    pub crown_ratio: (f64, f64),
    #[serde(default)]
    pub crown_radius: (f64, f64),
    pub shape: CrownShape,
    /// Reject trees whose crowns would touch a same-story crown.
    #[serde(default)]
    pub non_overlapping: bool,
    /// Extra clearance between non-overlapping crowns, meters.
    #[serde(default)]
    pub min_gap: f64,
    /// Keep whole crowns inside the region.
    #[serde(default = "yes")]
    pub keep_inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerFractions {
    LogSeries { theta: f64 },
    Explicit { fractions: Vec<f64> },
}

impl LayerFractions {
    /// Share of pulses assigned to story `k` (1-based).
    pub fn fraction(&self, k: u32) -> f64 {
        match self {
            LayerFractions::LogSeries { theta } => log_series_pmf(LogSeriesModel { theta: *theta }, k),
            LayerFractions::Explicit { fractions } => {
                fractions.get(k as usize - 1).copied().unwrap_or(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terrain {
    Flat { elevation: f64 },
    Plane { z0: f64, slope_x: f64, slope_y: f64 },
    Relief { base: f64, amplitude: f64, wavelength: f64 },
}

impl Terrain {
    pub fn elevation(&self, x: f64, y: f64) -> f64 {
        match *self {
            Terrain::Flat { elevation } => elevation,
            Terrain::Plane { z0, slope_x, slope_y } => z0 + slope_x * x + slope_y * y,
            Terrain::Relief {
                base,
                amplitude,
                wavelength,
            } => {
                let k = std::f64::consts::TAU / wavelength;
                base + amplitude * (k * x).sin() * (k * y).cos()
            }
        }
    }
}

fn flat() -> Terrain {
    Terrain::Flat { elevation: 0.0 }
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSpec {
    pub extent: Extent,
    pub stands: Vec<StandSpec>,
    /// Pulses per square meter.
    pub pulse_density: f64,
    pub layer_fractions: LayerFractions,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "flat")]
    pub terrain: Terrain,
    #[serde(default = "unit")]
    pub dem_resolution: f64,
    /// Add one exact return at every tree top.
    #[serde(default = "yes")]
    pub include_apex: bool,
}

impl ForestSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecError(m));
        if !(self.extent.area() > 0.0) {
            return bad("extent must have positive area".into());
        }
        if !(self.pulse_density > 0.0) || !self.pulse_density.is_finite() {
            return bad(format!("pulse density must be positive, got {}", self.pulse_density));
        }
        if !(self.noise_sigma >= 0.0) || !(self.dem_resolution > 0.0) {
            return bad("noise sigma must be >= 0 and DEM resolution positive".into());
        }
        match &self.layer_fractions {
            LayerFractions::LogSeries { theta } => {
                if !(*theta > 0.0 && *theta < 1.0) {
                    return bad(format!("theta must lie in (0, 1), got {theta}"));
                }
            }
            LayerFractions::Explicit { fractions } => {
                if fractions.iter().any(|f| !(*f >= 0.0)) || fractions.iter().sum::<f64>() > 1.0 + 1e-9 {
                    return bad("fractions must be >= 0 and sum to at most 1".into());
                }
            }
        }
        if let Terrain::Relief { wavelength, .. } = self.terrain {
            if !(wavelength > 0.0) {
                return bad("relief wavelength must be positive".into());
            }
        }
        for (i, s) in self.stands.iter().enumerate() {
            if s.story == 0 {
                return bad(format!("stand {i}: story must be >= 1"));
            }
            if matches!(s.placement, Placement::Explicit { .. }) {
                continue;
            }
            let ranges = [("height", s.height), ("crown_ratio", s.crown_ratio), ("crown_radius", s.crown_radius)];
            for (name, (lo, hi)) in ranges {
                if !(lo > 0.0 && hi >= lo) {
                    return bad(format!("stand {i}: {name} range must be positive and ordered"));
                }
            }
            if s.crown_ratio.1 > 1.0 {
                return bad(format!("stand {i}: crown ratio above 1"));
            }
            if let Placement::JitteredGrid { spacing, jitter } = s.placement {
                if !(spacing > 0.0) || !(jitter >= 0.0) {
                    return bad(format!("stand {i}: grid spacing must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub id: u32,
    pub story: u32,
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub crown_radius: f64,
    pub crown_length: f64,
    pub shape: CrownShape,
}

impl Tree {
    pub fn crown_base(&self) -> f64 {
        self.height - self.crown_length
    }

    /// Crown surface height above ground at `(x, y)`, if the crown covers it.
    pub fn surface_at(&self, x: f64, y: f64) -> Option<f64> {
        let r = (x - self.x).hypot(y - self.y);
        if r > self.crown_radius {
            return None;
        }
        let q = r / self.crown_radius;
        let (h, l) = (self.height, self.crown_length);
        Some(match self.shape {
            CrownShape::Cone => h - l * q,
            CrownShape::Ellipsoid => h - l / 2.0 + (l / 2.0) * (1.0 - q * q).sqrt(),
            CrownShape::Hemisphere => h - l + l * (1.0 - q * q).sqrt(),
        })
    }

    pub fn crown_area(&self) -> f64 {
        std::f64::consts::PI * self.crown_radius * self.crown_radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub tree: u32,
    pub story: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub trees: Vec<Tree>,
    pub stems: Vec<StemRecord>,
    /// Per point of the generated cloud; `None` for ground returns.
    pub labels: Vec<Option<PointLabel>>,
}

impl GroundTruth {
    pub fn stories(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.trees.iter().map(|t| t.story).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    pub cloud: PointCloud,
    pub dem: Dem,
    pub truth: GroundTruth,
}

/// Stream-splitting for derived seeds.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn place_stand(
    stand: &StandSpec,
    extent: &Extent,
    seed: u64,
    first_id: u32,
    same_story: &[Tree],
) -> Result<Vec<Tree>> {
    let region = stand.region.unwrap_or(*extent);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees: Vec<Tree> = Vec::new();
    let make = |id: u32, x: f64, y: f64, rng: &mut ChaCha8Rng| {
        let height = uniform(rng, stand.height);
        let ratio = uniform(rng, stand.crown_ratio);
        let radius = uniform(rng, stand.crown_radius);
        Tree {
            id,
            story: stand.story,
            x,
            y,
            height,
            crown_radius: radius,
            crown_length: ratio * height,
            shape: stand.shape,
        }
    };
    let fits = |t: &Tree, placed: &[Tree]| {
        if stand.keep_inside {
            let r = t.crown_radius;
            if t.x - r < region.xmin || t.x + r > region.xmax || t.y - r < region.ymin || t.y + r > region.ymax {
                return false;
            }
        }
        !stand.non_overlapping
            || placed
                .iter()
                .chain(same_story)
                .filter(|o| o.story == t.story)
                .all(|o| (o.x - t.x).hypot(o.y - t.y) >= o.crown_radius + t.crown_radius + stand.min_gap)
    };

    match &stand.placement {
        Placement::Explicit { trees: specs } => {
            for (k, s) in specs.iter().enumerate() {
                if !(s.height > 0.0 && s.crown_radius > 0.0 && s.crown_length > 0.0 && s.crown_length <= s.height) {
                    return Err(Error::SpecError(format!("explicit tree {k} has invalid dimensions")));
                }
                trees.push(Tree {
                    id: first_id + k as u32,
                    story: stand.story,
                    x: s.x,
                    y: s.y,
                    height: s.height,
                    crown_radius: s.crown_radius,
                    crown_length: s.crown_length,
                    shape: stand.shape,
                });
            }
        }
        Placement::Poisson { count } => {
            let mut attempts = 0;
            while trees.len() < *count {
                attempts += 1;
                if attempts > PLACEMENT_ATTEMPTS * count.max(&1) {
                    return Err(Error::SpecError(format!(
                        "could only place {} of {count} trees in story {}",
                        trees.len(),
                        stand.story
                    )));
                }
                let x = rng.random_range(region.xmin..region.xmax);
                let y = rng.random_range(region.ymin..region.ymax);
                let t = make(first_id + trees.len() as u32, x, y, &mut rng);
                if fits(&t, &trees) {
                    trees.push(t);
                }
            }
        }
        Placement::JitteredGrid { spacing, jitter } => {
            let nx = (region.width() / spacing).floor() as usize;
            let ny = (region.height() / spacing).floor() as usize;
            let (ox, oy) = (
                region.xmin + 0.5 * (region.width() - nx as f64 * spacing),
                region.ymin + 0.5 * (region.height() - ny as f64 * spacing),
            );
            for j in 0..ny {
                for i in 0..nx {
                    let cx = ox + (i as f64 + 0.5) * spacing;
                    let cy = oy + (j as f64 + 0.5) * spacing;
                    let jx = if *jitter > 0.0 { rng.random_range(-jitter..*jitter) } else { 0.0 };
                    let jy = if *jitter > 0.0 { rng.random_range(-jitter..*jitter) } else { 0.0 };
                    let t = make(first_id + trees.len() as u32, cx + jx, cy + jy, &mut rng);
                    if fits(&t, &trees) {
                        trees.push(t);
                    }
                }
            }
        }
    }
    Ok(trees)
}

fn classify(trees: &[Tree]) -> Vec<StemRecord> {
    let mut top: Vec<f64> = trees.iter().filter(|t| t.story == 1).map(|t| t.height).collect();
    let split = crate::treeseg::median(&mut top).unwrap_or(0.0);
    trees
        .iter()
        .map(|t| StemRecord {
            id: t.id.to_string(),
            x: t.x,
            y: t.y,
            height: t.height,
            crown_class: match t.story {
                1 if t.height >= split => CrownClass::Dominant,
                1 => CrownClass::Codominant,
                2 => CrownClass::Intermediate,
                _ => CrownClass::Overtopped,
            },
            dbh: None,
        })
        .collect()
}

/// Places the trees of every stand; ids run from 1 in stand order.
pub fn place_trees(spec: &ForestSpec) -> Result<Vec<Tree>> {
    spec.validate()?;
    let mut trees: Vec<Tree> = Vec::new();
    for (k, stand) in spec.stands.iter().enumerate() {
        let placed = place_stand(
            stand,
            &spec.extent,
            derive_seed(spec.seed, 1 + k as u64),
            trees.len() as u32 + 1,
            &trees,
        )?;
        trees.extend(placed);
    }
    Ok(trees)
}

struct StoryIndex {
    trees: Vec<usize>,
    coords: Vec<(f64, f64)>,
    index: SpatialIndex,
    reach: f64,
}

pub fn generate_forest(spec: &ForestSpec) -> Result<Forest> {
    let trees = place_trees(spec)?;
    let extent = spec.extent;
    let max_story = trees.iter().map(|t| t.story).max().unwrap_or(0);

    let stories: Vec<StoryIndex> = (1..=max_story)
        .map(|s| {
            let members: Vec<usize> = (0..trees.len()).filter(|&i| trees[i].story == s).collect();
            let coords: Vec<(f64, f64)> = members.iter().map(|&i| (trees[i].x, trees[i].y)).collect();
            let reach = members.iter().map(|&i| trees[i].crown_radius).fold(0.0, f64::max);
            StoryIndex {
                index: SpatialIndex::new(&coords, reach.max(1.0)),
                trees: members,
                coords,
                reach,
            }
        })
        .collect();
    let cumulative: Vec<f64> = (1..=max_story)
        .scan(0.0, |acc, k| {
            *acc += spec.layer_fractions.fraction(k);
            Some(*acc)
        })
        .collect();

    let n_pulses = (spec.pulse_density * extent.area()).round() as usize;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::SpecError(e.to_string()))?;
    let chunks = n_pulses.div_ceil(PULSE_CHUNK);

    let generated: Vec<Vec<(Point3D, Option<PointLabel>)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1 << 32 | c as u64));
            let count = PULSE_CHUNK.min(n_pulses - c * PULSE_CHUNK);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let x = rng.random_range(extent.xmin..extent.xmax);
                let y = rng.random_range(extent.ymin..extent.ymax);
                let u: f64 = rng.random();
                let e: f64 = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let ground = spec.terrain.elevation(x, y);
                let story = cumulative.iter().position(|&c| u < c);
                let hit = story.and_then(|s| {
                    let si = &stories[s];
                    let mut best: Option<(f64, usize)> = None;
                    si.index.for_each_candidate(x, y, si.reach, |k| {
                        let (tx, ty) = si.coords[k];
                        if (tx - x).hypot(ty - y) <= si.reach {
                            let t = &trees[si.trees[k]];
                            if let Some(z) = t.surface_at(x, y) {
                                if best.is_none_or(|(bz, bk)| z > bz || (z == bz && k < bk)) {
                                    best = Some((z, k));
                                }
                            }
                        }
                    });
                    best.map(|(z, k)| (z, &trees[si.trees[k]]))
                });
                match hit {
                    Some((z, t)) => out.push((
                        Point3D::new(x, y, ground + z + e, PointClass::Vegetation),
                        Some(PointLabel {
                            tree: t.id,
                            story: t.story,
                        }),
                    )),
                    None => out.push((Point3D::new(x, y, ground + e, PointClass::Ground), None)),
                }
            }
            out
        })
        .collect();

    let mut points = Vec::with_capacity(n_pulses + trees.len());
    let mut labels = Vec::with_capacity(n_pulses + trees.len());
    for chunk in generated {
        for (p, l) in chunk {
            points.push(p);
            labels.push(l);
        }
    }
    if spec.include_apex {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 2 << 32));
        for t in &trees {
            let e: f64 = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let ground = spec.terrain.elevation(t.x, t.y);
            points.push(Point3D::new(t.x, t.y, ground + t.height + e, PointClass::Vegetation));
            labels.push(Some(PointLabel {
                tree: t.id,
                story: t.story,
            }));
        }
    }

    let terrain = spec.terrain.clone();
    let dem = Dem::from_fn(extent, spec.dem_resolution, move |x, y| terrain.elevation(x, y));
    let stems = classify(&trees);
    Ok(Forest {
        cloud: PointCloud::with_extent(points, extent, HeightFrame::Absolute),
        dem,
        truth: GroundTruth { trees, stems, labels },
    })
}

/// True story by assigned layer point counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTruthMatrix {
    pub stories: Vec<u32>,
    /// Layer indices, column order.
    pub layers: Vec<u32>,
    /// `counts[story][layer]`.
    pub counts: Vec<Vec<usize>>,
    /// Labeled points per story that ended up in no layer.
    pub unassigned: Vec<usize>,
}

impl LayerTruthMatrix {
    /// Per layer: share of its labeled points not from its majority story.
    pub fn contamination(&self) -> Vec<f64> {
        (0..self.layers.len())
            .map(|j| {
                let col: Vec<usize> = self.counts.iter().map(|r| r[j]).collect();
                let total: usize = col.iter().sum();
                let major = col.iter().copied().max().unwrap_or(0);
                if total == 0 {
                    0.0
                } else {
                    (total - major) as f64 / total as f64
                }
            })
            .collect()
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &c)| c == 0 || i == j))
    }
}

pub fn truth_layer_report(truth: &GroundTruth, layers: &[CanopyLayer]) -> LayerTruthMatrix {
    let mut stories: Vec<u32> = truth.labels.iter().flatten().map(|l| l.story).collect();
    stories.sort_unstable();
    stories.dedup();
    let row_of = |s: u32| stories.binary_search(&s).unwrap();
    let mut counts = vec![vec![0usize; layers.len()]; stories.len()];
    let mut assigned = vec![false; truth.labels.len()];
    for (j, layer) in layers.iter().enumerate() {
        for &i in &layer.point_ids {
            if let Some(Some(l)) = truth.labels.get(i) {
                counts[row_of(l.story)][j] += 1;
                assigned[i] = true;
            }
        }
    }
    let mut unassigned = vec![0usize; stories.len()];
    for (i, l) in truth.labels.iter().enumerate() {
        if let Some(l) = l {
            if !assigned[i] {
                unassigned[row_of(l.story)] += 1;
            }
        }
    }
    LayerTruthMatrix {
        stories,
        layers: layers.iter().map(|l| l.index).collect(),
        counts,
        unassigned,
    }
}

/// Ready-made stands used by the test suites and the CLI examples.
pub mod presets {
    use super::*;

    pub fn single_tree(shape: CrownShape, height: f64, radius: f64, crown_length: f64, density: f64, seed: u64) -> ForestSpec {
        let half = radius + 5.0;
        ForestSpec {
            extent: Extent::new(0.0, 0.0, 2.0 * half, 2.0 * half),
            stands: vec![StandSpec {
                story: 1,
                placement: Placement::Explicit {
                    trees: vec![TreeSpec {
                        x: half,
                        y: half,
                        height,
                        crown_radius: radius,
                        crown_length,
                    }],
                },
                region: None,
                height: (0.0, 0.0),
                crown_ratio: (0.0, 0.0),
                crown_radius: (0.0, 0.0),
                shape,
                non_overlapping: false,
                min_gap: 0.0,
                keep_inside: true,
            }],
            pulse_density: density,
            layer_fractions: LayerFractions::Explicit { fractions: vec![1.0] },
            noise_sigma: 0.0,
            seed,
            terrain: flat(),
            dem_resolution: 1.0,
            include_apex: true,
        }
    }

    /// `n` separated single-story crowns of the given shape.
    pub fn separated_stand(n: usize, shape: CrownShape, density: f64, seed: u64) -> ForestSpec {
        let side = ((n as f64) * 120.0).sqrt().max(20.0);
        ForestSpec {
            extent: Extent::new(0.0, 0.0, side, side),
            stands: vec![StandSpec {
                story: 1,
                placement: Placement::Poisson { count: n },
                region: None,
                height: (12.0, 30.0),
                crown_ratio: (0.4, 0.7),
                crown_radius: (2.0, 3.5),
                shape,
                non_overlapping: true,
                min_gap: 1.0,
                keep_inside: true,
            }],
            pulse_density: density,
            layer_fractions: LayerFractions::Explicit { fractions: vec![1.0] },
            noise_sigma: 0.0,
            seed,
            terrain: flat(),
            dem_resolution: 1.0,
            include_apex: true,
        }
    }

    /// Overstory crowns at 18-30 m over understory crowns at 4-10 m.
    pub fn two_story(side: f64, density: f64, fractions: LayerFractions, seed: u64) -> ForestSpec {
        ForestSpec {
            extent: Extent::new(0.0, 0.0, side, side),
            stands: vec![
                StandSpec {
                    story: 1,
                    placement: Placement::JitteredGrid { spacing: 8.0, jitter: 0.8 },
                    region: None,
                    height: (26.0, 30.0),
                    crown_ratio: (0.25, 0.3),
                    crown_radius: (3.3, 3.6),
                    shape: CrownShape::Ellipsoid,
                    non_overlapping: true,
                    min_gap: 0.3,
                    keep_inside: false,
                },
                StandSpec {
                    story: 2,
                    placement: Placement::JitteredGrid { spacing: 6.0, jitter: 1.0 },
                    region: None,
                    height: (8.0, 10.0),
                    crown_ratio: (0.4, 0.5),
                    crown_radius: (2.0, 2.5),
                    shape: CrownShape::Cone,
                    non_overlapping: true,
                    min_gap: 0.3,
                    keep_inside: false,
                },
            ],
            pulse_density: density,
            layer_fractions: fractions,
            noise_sigma: 0.05,
            seed,
            terrain: flat(),
            dem_resolution: 1.0,
            include_apex: true,
        }
    }

    /// `stories` flat canopy sheets 20 m apart, each covering the whole
    /// extent, so every pulse that reaches story `k` returns from it. Pulse
    /// shares follow a log series with parameter `theta`.
    pub fn occlusion_sheets(stories: u32, theta: f64, side: f64, density: f64, seed: u64) -> ForestSpec {
        let stands = (1..=stories)
            .map(|s| StandSpec {
                story: s,
                placement: Placement::Explicit {
                    trees: vec![TreeSpec {
                        x: side / 2.0,
                        y: side / 2.0,
                        height: 8.0 + 20.0 * (stories - s) as f64,
                        crown_radius: 20.0 * side,
                        crown_length: 3.0,
                    }],
                },
                region: None,
                height: (0.0, 0.0),
                crown_ratio: (0.0, 0.0),
                crown_radius: (0.0, 0.0),
                shape: CrownShape::Hemisphere,
                non_overlapping: false,
                min_gap: 0.0,
                keep_inside: false,
            })
            .collect();
        ForestSpec {
            extent: Extent::new(0.0, 0.0, side, side),
            stands,
            pulse_density: density,
            layer_fractions: LayerFractions::LogSeries { theta },
            noise_sigma: 0.1,
            seed,
            terrain: flat(),
            dem_resolution: 1.0,
            include_apex: false,
        }
    }

    /// A square block of `side` meters with crowns on a jittered 7 m grid,
    /// for runtime checks of tiled runs.
    pub fn block(side: f64, density: f64, seed: u64) -> ForestSpec {
        ForestSpec {
            extent: Extent::new(0.0, 0.0, side, side),
            stands: vec![StandSpec {
                story: 1,
                placement: Placement::JitteredGrid { spacing: 7.0, jitter: 0.5 },
                region: None,
                height: (15.0, 30.0),
                crown_ratio: (0.4, 0.6),
                crown_radius: (2.5, 3.2),
                shape: CrownShape::Cone,
                non_overlapping: false,
                min_gap: 0.0,
                keep_inside: false,
            }],
            pulse_density: density,
            layer_fractions: LayerFractions::Explicit { fractions: vec![1.0] },
            noise_sigma: 0.05,
            seed,
            terrain: Terrain::Relief { base: 200.0, amplitude: 5.0, wavelength: 400.0 },
            dem_resolution: 1.0,
            include_apex: true,
        }
    }

    /// A randomized stand with `stories` canopy stories at least 10 m apart
    /// vertically. Open stories leave gaps between crowns through which the
    /// story below is the top of the canopy; closed ones overlap their crowns
    /// so that every story covers the ground.
    pub fn layered_stand(stories: u32, closed: bool, seed: u64) -> ForestSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 77));
        let side = rng.random_range(40.0..60.0);
        let shapes = [CrownShape::Cone, CrownShape::Ellipsoid, CrownShape::Hemisphere];
        let stands = (1..=stories)
            .map(|s| {
                // Tops step down by 16 m per story; crowns stay within 5 m.
                let top = 8.0 + 16.0 * (stories - s) as f64;
                let height = (top - 1.0, top + 1.0);
                let length = rng.random_range(3.0..4.0);
                let spacing = rng.random_range(6.5..8.5);
                let radius = if closed {
                    (0.85 * spacing, 0.9 * spacing)
                } else {
                    (0.4 * spacing, 0.45 * spacing)
                };
                StandSpec {
                    story: s,
                    placement: Placement::JitteredGrid { spacing, jitter: 0.5 },
                    region: None,
                    height,
                    crown_ratio: (length / height.1, length / height.0),
                    crown_radius: radius,
                    shape: shapes[rng.random_range(0..3)],
                    non_overlapping: !closed,
                    min_gap: 0.2,
                    keep_inside: false,
                }
            })
            .collect();
        let fractions = match stories {
            1 => vec![0.95],
            2 => vec![0.65, 0.3],
            3 => vec![0.5, 0.3, 0.15],
            _ => vec![0.4, 0.27, 0.18, 0.1],
        };
        ForestSpec {
            extent: Extent::new(0.0, 0.0, side, side),
            stands,
            pulse_density: rng.random_range(12.0..20.0),
            layer_fractions: LayerFractions::Explicit { fractions },
            noise_sigma: 0.05,
            seed,
            terrain: flat(),
            dem_resolution: 1.0,
            include_apex: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;

    #[test]
    fn lone_cone_height_and_count() {
        let spec = single_tree(CrownShape::Cone, 20.0, 6.0, 12.0, 50.0, 3);
        let f = generate_forest(&spec).unwrap();
        let veg: Vec<&Point3D> = f.cloud.points.iter().filter(|p| p.class == PointClass::Vegetation).collect();
        let top = veg.iter().map(|p| p.z).fold(f64::MIN, f64::max);
        assert_eq!(top, 20.0);
        let expected = 50.0 * std::f64::consts::PI * 36.0;
        let sampled = veg.len() as f64 - 1.0;
        assert!((sampled - expected).abs() <= 0.05 * expected, "{sampled} vs {expected}");
    }

    #[test]
    fn samples_lie_on_the_crown() {
        for shape in [CrownShape::Cone, CrownShape::Ellipsoid, CrownShape::Hemisphere] {
            let f = generate_forest(&separated_stand(6, shape, 10.0, 5)).unwrap();
            let by_id = |id: u32| f.truth.trees.iter().find(|t| t.id == id).unwrap();
            for (p, l) in f.cloud.points.iter().zip(&f.truth.labels) {
                match l {
                    Some(l) => {
                        let t = by_id(l.tree);
                        let s = t.surface_at(p.x, p.y).unwrap();
                        assert!((s - p.z).abs() < 1e-9);
                        assert!(p.z <= t.height + 1e-12 && p.z >= t.crown_base() - 1e-12);
                    }
                    None => assert_eq!(p.class, PointClass::Ground),
                }
            }
        }
    }

    #[test]
    fn labels_cover_vegetation() {
        let f = generate_forest(&two_story(40.0, 10.0, LayerFractions::Explicit { fractions: vec![0.7, 0.3] }, 1)).unwrap();
        assert_eq!(f.truth.labels.len(), f.cloud.len());
        let veg = f.cloud.points.iter().filter(|p| p.class == PointClass::Vegetation).count();
        assert_eq!(f.truth.labels.iter().flatten().count(), veg);
    }

    #[test]
    fn realized_density_matches() {
        let spec = two_story(100.0, 8.0, LayerFractions::LogSeries { theta: 0.266 }, 2);
        let f = generate_forest(&spec).unwrap();
        let trees = f.truth.trees.len();
        let density = (f.cloud.len() - trees) as f64 / spec.extent.area();
        assert!((density - 8.0).abs() <= 0.02 * 8.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = two_story(30.0, 6.0, LayerFractions::Explicit { fractions: vec![0.7, 0.3] }, 9);
        let a = generate_forest(&spec).unwrap();
        let b = generate_forest(&spec).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.truth, b.truth);
        let c = generate_forest(&ForestSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.cloud, c.cloud);
    }

    #[test]
    fn non_overlapping_placement() {
        let f = generate_forest(&separated_stand(30, CrownShape::Cone, 2.0, 4)).unwrap();
        let t = &f.truth.trees;
        assert_eq!(t.len(), 30);
        for i in 0..t.len() {
            for j in i + 1..t.len() {
                assert!((t[i].x - t[j].x).hypot(t[i].y - t[j].y) >= t[i].crown_radius + t[j].crown_radius + 1.0);
            }
        }
    }

    #[test]
    fn stem_classes_follow_story() {
        let f = generate_forest(&two_story(30.0, 1.0, LayerFractions::Explicit { fractions: vec![0.7, 0.3] }, 9)).unwrap();
        for (s, t) in f.truth.stems.iter().zip(&f.truth.trees) {
            match t.story {
                1 => assert!(matches!(s.crown_class, CrownClass::Dominant | CrownClass::Codominant)),
                _ => assert_eq!(s.crown_class, CrownClass::Intermediate),
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = single_tree(CrownShape::Cone, 20.0, 3.0, 10.0, 10.0, 0);
        spec.pulse_density = 0.0;
        assert!(matches!(generate_forest(&spec), Err(Error::SpecError(_))));
        let mut spec = single_tree(CrownShape::Cone, 20.0, 3.0, 10.0, 10.0, 0);
        spec.layer_fractions = LayerFractions::Explicit { fractions: vec![0.8, 0.5] };
        assert!(generate_forest(&spec).is_err());
        let crowded = ForestSpec {
            extent: Extent::new(0.0, 0.0, 10.0, 10.0),
            ..separated_stand(50, CrownShape::Cone, 1.0, 0)
        };
        assert!(generate_forest(&crowded).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = two_story(30.0, 6.0, LayerFractions::LogSeries { theta: 0.266 }, 9);
        let text = serde_json::to_string_pretty(&spec).unwrap();
        let back: ForestSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn truth_matrix_shapes() {
        let truth = GroundTruth {
            trees: vec![],
            stems: vec![],
            labels: vec![
                Some(PointLabel { tree: 1, story: 1 }),
                Some(PointLabel { tree: 2, story: 2 }),
                None,
                Some(PointLabel { tree: 1, story: 1 }),
            ],
        };
        let empty = PointCloud::from_points(vec![], HeightFrame::AboveGround);
        let layer = |index, ids: Vec<usize>| CanopyLayer {
            index,
            point_ids: ids,
            points: empty.clone(),
            starting_height: 0.0,
            thickness: 0.0,
            density: 0.0,
        };
        let m = truth_layer_report(&truth, &[layer(1, vec![0, 3]), layer(2, vec![1])]);
        assert!(m.is_diagonal());
        assert_eq!(m.counts, vec![vec![2, 0], vec![0, 1]]);
        let m = truth_layer_report(&truth, &[layer(1, vec![0, 1, 3])]);
        assert!(!m.is_diagonal());
        assert!((m.contamination()[0] - 1.0 / 3.0).abs() < 1e-12);
    }
}
