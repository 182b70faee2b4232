//! Accuracy of segmented crowns against a field stem map.
//!
//! A crown and a stem may be paired only when their heights differ by less
//! than 30% of the stem height and the stem lies within a 15 degree cone
//! below the crown apex. Eligible pairs are scored and a maximum-score
//! one-to-one assignment decides matches (MT), omissions (OE) and
//! commissions (CE).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Polygon2D};
use crate::treeseg::Crown;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrownClass {
    Dominant,
    Codominant,
    Intermediate,
    Overtopped,
    Dead,
    Unknown,
}

impl CrownClass {
    pub const ALL: [CrownClass; 6] = [
        CrownClass::Dominant,
        CrownClass::Codominant,
        CrownClass::Intermediate,
        CrownClass::Overtopped,
        CrownClass::Dead,
        CrownClass::Unknown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CrownClass::Dominant => "dominant",
            CrownClass::Codominant => "codominant",
            CrownClass::Intermediate => "intermediate",
            CrownClass::Overtopped => "overtopped",
            CrownClass::Dead => "dead",
            CrownClass::Unknown => "unknown",
        }
    }

    /// Intermediate and overtopped trees sit below the main canopy.
    pub fn is_understory(&self) -> bool {
        matches!(self, CrownClass::Intermediate | CrownClass::Overtopped)
    }
}

impl fmt::Display for CrownClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CrownClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        CrownClass::ALL
            .into_iter()
            .find(|c| c.as_str() == t)
            .or(if t.is_empty() { Some(CrownClass::Unknown) } else { None })
            .ok_or_else(|| Error::InvalidRecord(format!("unknown crown class: {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemRecord {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub crown_class: CrownClass,
    pub dbh: Option<f64>,
}

/// A detected tree top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detected {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub height: f64,
}

impl From<&Crown> for Detected {
    fn from(c: &Crown) -> Self {
        Detected {
            id: c.id,
            x: c.apex.x,
            y: c.apex.y,
            height: c.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Largest relative height difference, exclusive.
    pub height_tolerance: f64,
    /// Largest view angle from the apex down to the stem, degrees, exclusive.
    pub max_angle_deg: f64,
    /// Weight of the height deviation in the score; the angle gets the rest.
    pub height_weight: f64,
    pub buffer: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            height_tolerance: 0.30,
            max_angle_deg: 15.0,
            height_weight: 0.5,
            buffer: 4.7,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.height_tolerance > 0.0) || !(self.max_angle_deg > 0.0 && self.max_angle_deg < 90.0) {
            return Err(Error::InvalidConfig("eligibility thresholds out of range".into()));
        }
        if !(0.0..=1.0).contains(&self.height_weight) {
            return Err(Error::InvalidConfig("height_weight must lie in [0, 1]".into()));
        }
        if !(self.buffer >= 0.0) {
            return Err(Error::InvalidConfig("buffer must be >= 0".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value
            .parse::<f64>()
            .map_err(|_| Error::InvalidConfig(format!("{key}: not a number: {value}")));
        match key {
            "height_tolerance" => self.height_tolerance = v?,
            "max_angle_deg" => self.max_angle_deg = v?,
            "height_weight" => self.height_weight = v?,
            "buffer" => self.buffer = v?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Relative height difference and view angle (degrees) of a pair.
fn deviations(crown: &Detected, stem: &StemRecord) -> Result<(f64, f64)> {
    if !(stem.height > 0.0) {
        return Err(Error::InvalidRecord(format!(
            "stem {} has non-positive height {}",
            stem.id, stem.height
        )));
    }
    let rel = (crown.height - stem.height).abs() / stem.height;
    let dist = (crown.x - stem.x).hypot(crown.y - stem.y);
    let angle = if dist == 0.0 {
        0.0
    } else {
        (dist / crown.height.max(0.0)).atan().to_degrees()
    };
    Ok((rel, angle))
}

pub fn pair_eligible(crown: &Detected, stem: &StemRecord, cfg: &EvalConfig) -> Result<bool> {
    let (rel, angle) = deviations(crown, stem)?;
    Ok(rel < cfg.height_tolerance && angle < cfg.max_angle_deg)
}

pub fn pair_score(crown: &Detected, stem: &StemRecord, cfg: &EvalConfig) -> Result<f64> {
    let (rel, angle) = deviations(crown, stem)?;
    if !(rel < cfg.height_tolerance && angle < cfg.max_angle_deg) {
        return Err(Error::NotEligible);
    }
    Ok(1.0
        - cfg.height_weight * rel / cfg.height_tolerance
        - (1.0 - cfg.height_weight) * angle / cfg.max_angle_deg)
}

/// Maximum-weight assignment on a dense `rows x cols` matrix. Returns the
/// column of every row, `None` where a row is left over (`rows > cols`).
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| weights[i][j]).collect())
            .collect();
        let mut out = vec![None; rows];
        for (j, i) in max_weight_assignment(&transposed).into_iter().enumerate() {
            if let Some(i) = i {
                out[i] = Some(j);
            }
        }
        return out;
    }
    // Shortest augmenting paths with potentials on cost = -weight, rows <= cols.
    let (n, m) = (rows, cols);
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Index into the crown list.
    pub crown: usize,
    /// Index into the stem list.
    pub stem: usize,
    pub score: f64,
}

/// Outcome of matching; all entries are indices into the inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub omissions: Vec<usize>,
    pub commissions: Vec<usize>,
    pub buffer_excluded: Vec<usize>,
}

impl MatchResult {
    pub fn total_score(&self) -> f64 {
        self.pairs.iter().map(|p| p.score).sum()
    }
}

pub fn match_trees(
    crowns: &[Detected],
    stems: &[StemRecord],
    plot: &Polygon2D,
    cfg: &EvalConfig,
) -> Result<MatchResult> {
    let mut weights = vec![vec![0.0; stems.len()]; crowns.len()];
    let mut eligible = vec![vec![false; stems.len()]; crowns.len()];
    for (i, c) in crowns.iter().enumerate() {
        for (j, s) in stems.iter().enumerate() {
            if pair_eligible(c, s, cfg)? {
                weights[i][j] = pair_score(c, s, cfg)?;
                eligible[i][j] = true;
            }
        }
    }
    let assignment = max_weight_assignment(&weights);

    let mut result = MatchResult::default();
    let mut stem_matched = vec![false; stems.len()];
    for (i, a) in assignment.into_iter().enumerate() {
        match a {
            Some(j) if eligible[i][j] => {
                stem_matched[j] = true;
                result.pairs.push(MatchedPair {
                    crown: i,
                    stem: j,
                    score: weights[i][j],
                });
            }
            _ => {
                let c = &crowns[i];
                if plot.contains(Point2::new(c.x, c.y)) {
                    result.commissions.push(i);
                } else {
                    result.buffer_excluded.push(i);
                }
            }
        }
    }
    result.omissions = (0..stems.len()).filter(|&j| !stem_matched[j]).collect();
    Ok(result)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mt: usize,
    pub oe: usize,
    pub ce: usize,
    pub recall: f64,
    pub precision: f64,
    pub f_score: f64,
}

impl Metrics {
    pub fn from_counts(mt: usize, oe: usize, ce: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let recall = ratio(mt, mt + oe);
        let precision = ratio(mt, mt + ce);
        let f_score = if recall + precision == 0.0 {
            0.0
        } else {
            2.0 * recall * precision / (recall + precision)
        };
        Metrics {
            mt,
            oe,
            ce,
            recall,
            precision,
            f_score,
        }
    }

    /// Pools counts (not ratios) of several plots.
    pub fn pooled<'a>(all: impl IntoIterator<Item = &'a Metrics>) -> Metrics {
        let (mut mt, mut oe, mut ce) = (0, 0, 0);
        for m in all {
            mt += m.mt;
            oe += m.oe;
            ce += m.ce;
        }
        Metrics::from_counts(mt, oe, ce)
    }
}

pub fn metrics(result: &MatchResult) -> Metrics {
    Metrics::from_counts(result.pairs.len(), result.omissions.len(), result.commissions.len())
}

/// Metrics restricted to stems of the given classes. Matched crowns take the
/// class of their stem; commission crowns take the class of the nearest stem.
pub fn metrics_for_classes(
    result: &MatchResult,
    crowns: &[Detected],
    stems: &[StemRecord],
    classes: &[CrownClass],
) -> Metrics {
    let wanted = |j: usize| classes.contains(&stems[j].crown_class);
    let mt = result.pairs.iter().filter(|p| wanted(p.stem)).count();
    let oe = result.omissions.iter().filter(|&&j| wanted(j)).count();
    let ce = result
        .commissions
        .iter()
        .filter(|&&i| {
            let c = &crowns[i];
            (0..stems.len())
                .min_by(|&a, &b| {
                    let da = (stems[a].x - c.x).hypot(stems[a].y - c.y);
                    let db = (stems[b].x - c.x).hypot(stems[b].y - c.y);
                    da.total_cmp(&db)
                })
                .is_some_and(wanted)
        })
        .count();
    Metrics::from_counts(mt, oe, ce)
}

/// Per-class metrics for every class present among the stems.
pub fn class_metrics(
    result: &MatchResult,
    crowns: &[Detected],
    stems: &[StemRecord],
) -> Vec<(CrownClass, Metrics)> {
    CrownClass::ALL
        .into_iter()
        .filter(|c| stems.iter().any(|s| s.crown_class == *c))
        .map(|c| (c, metrics_for_classes(result, crowns, stems, &[c])))
        .collect()
}
