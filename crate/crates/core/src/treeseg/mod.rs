//! Single-layer tree segmentation.
//!
//! Starting from the tallest unclaimed surface point, radial height profiles
//! are cast, each profile is cut at an inter-tree gap and at the first local
//! minimum that looks like a crown boundary, and all unclaimed points inside
//! the hull of the boundary points become one crown. The loop repeats until
//! every surface point is claimed.

mod boundary;
mod profile;
mod segment;

pub use boundary::{
    cone_crown_radius, identify_boundary, right_window_width, sphere_crown_radius, Boundary,
};
pub use profile::{
    chord_height, detect_gap, find_gmx, generate_profiles, profile_count_for_radius,
    profiles_for_count, Profile, ProfilePoint,
};
pub use segment::{crown_width, segment_trees, segment_trees_detailed, Crown, Segmentation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Expected slope (degrees) of a sphere-shaped crown surface.
pub const SPHERE_EXPECTED_SLOPE_DEG: f64 = 32.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegConfig {
    pub max_profile_distance: f64,
    pub initial_profiles: usize,
    /// Minimum detectable crown width; narrower clusters are noise.
    pub mdcw: f64,
    pub min_tree_height: f64,
    /// Deviation from nadir of a narrow cone's flank, degrees.
    pub epsilon_deg: f64,
    pub cl_cone: f64,
    pub cl_sphere: f64,
    pub o_cone: f64,
    pub o_sphere: f64,
    pub sphere_expected_slope_deg: f64,
    pub gap_iqr_factor: f64,
    /// A spacing along a profile longer than this many profile widths is a
    /// gap whatever the spread of the other spacings. Zero disables it.
    pub void_width_factor: f64,
    /// Profile width as a multiple of AFP.
    pub profile_width_factor: f64,
    /// Smoothing sigma as a multiple of AFP.
    pub smoothing_sigma_factor: f64,
    /// Unclaimed points within this many AFP of a crown hull are claimed with
    /// it. Zero claims strictly inside-or-on the hull.
    pub claim_tolerance_factor: f64,
    /// Boundaries that end a profile without a valley (crown rim or gap) are
    /// pushed outward by this many AFP before the hull is built.
    pub rim_extension_factor: f64,
    /// A would-be GMX with a higher, already claimed point within this many
    /// AFP sits on the flank of that point's crown and joins it instead of
    /// seeding a new crown. Zero disables the check.
    pub flank_radius_factor: f64,
    /// Upper bound on rays per GMX when doubling.
    pub max_profiles: usize,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            max_profile_distance: 20.0,
            initial_profiles: 8,
            mdcw: 1.5,
            min_tree_height: 4.0,
            epsilon_deg: 5.0,
            cl_cone: 0.8,
            cl_sphere: 0.7,
            o_cone: 2.0 / 3.0,
            o_sphere: 1.0 / 3.0,
            sphere_expected_slope_deg: SPHERE_EXPECTED_SLOPE_DEG,
            gap_iqr_factor: 6.0,
            void_width_factor: 2.0,
            profile_width_factor: 2.0,
            smoothing_sigma_factor: 2.0,
            claim_tolerance_factor: 1.0,
            rim_extension_factor: 1.0,
            flank_radius_factor: 2.0,
            max_profiles: 512,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_profile_distance", self.max_profile_distance),
            ("mdcw", self.mdcw),
            ("min_tree_height", self.min_tree_height),
            ("epsilon_deg", self.epsilon_deg),
            ("gap_iqr_factor", self.gap_iqr_factor),
            ("profile_width_factor", self.profile_width_factor),
            ("smoothing_sigma_factor", self.smoothing_sigma_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("cl_cone", self.cl_cone),
            ("cl_sphere", self.cl_sphere),
            ("o_cone", self.o_cone),
            ("o_sphere", self.o_sphere),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.epsilon_deg >= 57.3 {
            return Err(Error::InvalidConfig("epsilon_deg must be below 57.3".into()));
        }
        if 90.0 - self.epsilon_deg <= self.sphere_expected_slope_deg {
            return Err(Error::InvalidConfig(
                "cone steepness 90 - epsilon must exceed the sphere slope".into(),
            ));
        }
        if self.initial_profiles < 1 || self.max_profiles < self.initial_profiles {
            return Err(Error::InvalidConfig("profile counts out of range".into()));
        }
        if self.claim_tolerance_factor < 0.0 || self.void_width_factor < 0.0 || self.rim_extension_factor < 0.0 || self.flank_radius_factor < 0.0 {
            return Err(Error::InvalidConfig(
                "claim_tolerance_factor, void_width_factor, rim_extension_factor and flank_radius_factor must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Sets one field from its textual name and value (config files).
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let f = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("{key}: not a number: {value}")))
        };
        let n = || -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("{key}: not a count: {value}")))
        };
        match key {
            "max_profile_distance" => self.max_profile_distance = f()?,
            "initial_profiles" => self.initial_profiles = n()?,
            "mdcw" => self.mdcw = f()?,
            "min_tree_height" => self.min_tree_height = f()?,
            "epsilon_deg" => self.epsilon_deg = f()?,
            "cl_cone" => self.cl_cone = f()?,
            "cl_sphere" => self.cl_sphere = f()?,
            "o_cone" => self.o_cone = f()?,
            "o_sphere" => self.o_sphere = f()?,
            "sphere_expected_slope_deg" => self.sphere_expected_slope_deg = f()?,
            "gap_iqr_factor" => self.gap_iqr_factor = f()?,
            "void_width_factor" => self.void_width_factor = f()?,
            "profile_width_factor" => self.profile_width_factor = f()?,
            "smoothing_sigma_factor" => self.smoothing_sigma_factor = f()?,
            "claim_tolerance_factor" => self.claim_tolerance_factor = f()?,
            "rim_extension_factor" => self.rim_extension_factor = f()?,
            "flank_radius_factor" => self.flank_radius_factor = f()?,
            "max_profiles" => self.max_profiles = n()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Median of a slice (mean of the two middle values for even lengths).
pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
