use crate::cloud::SurfacePointSet;
use crate::error::{Error, Result};

use super::{boundary::identify_boundary, quantile_sorted, SegConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    /// Along-ray distance from the GMX, meters.
    pub distance: f64,
    pub height: f64,
    /// Index into the surface point set.
    pub index: usize,
}

/// A vertical profile cast from the GMX. The first point is the GMX itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub azimuth_deg: f64,
    pub width: f64,
    pub points: Vec<ProfilePoint>,
}

impl Profile {
    /// Sorts by distance; points at the same distance keep the lowest index.
    pub fn new(azimuth_deg: f64, width: f64, points: Vec<ProfilePoint>) -> Self {
        Self::merged(azimuth_deg, width, points, 0.0)
    }

    /// Like [`Profile::new`], but a point within `spacing` of the previous
    /// kept point collapses into it, keeping the higher of the two. The GMX
    /// is never replaced.
    pub fn merged(azimuth_deg: f64, width: f64, mut points: Vec<ProfilePoint>, spacing: f64) -> Self {
        points.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
        let mut kept: Vec<ProfilePoint> = Vec::with_capacity(points.len());
        for p in points {
            let n = kept.len();
            match kept.last_mut() {
                Some(last) if p.distance - last.distance <= spacing => {
                    if n > 1 && p.height > last.height {
                        *last = p;
                    }
                }
                _ => kept.push(p),
            }
        }
        let points = kept;
        Profile {
            azimuth_deg,
            width,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Index of the tallest point; ties go to the smallest `(x, y)`.
pub fn find_gmx(lsps: &SurfacePointSet) -> Result<usize> {
    let pts = &lsps.points;
    (0..pts.len())
        .min_by(|&a, &b| {
            let (p, q) = (&pts[a], &pts[b]);
            q.z.total_cmp(&p.z)
                .then(p.x.total_cmp(&q.x))
                .then(p.y.total_cmp(&q.y))
        })
        .ok_or(Error::EmptyInput("GMX of an empty surface point set"))
}

/// Sagitta between two rays of length `r` separated by `phi_deg`.
pub fn chord_height(r: f64, phi_deg: f64) -> f64 {
    r * (1.0 - (phi_deg.to_radians() / 2.0).cos())
}

/// Ray count after doubling from `initial` until the chord height at radius
/// `r` no longer exceeds `afp` (or `max` is reached).
pub fn profile_count_for_radius(r: f64, afp: f64, initial: usize, max: usize) -> usize {
    let mut count = initial;
    while count < max && chord_height(r, 360.0 / count as f64) > afp {
        count *= 2;
    }
    count
}

/// Casts `count` evenly spaced rays from `gmx` through the `candidates`
/// (indices into `lsps`, the GMX excluded or not). A point joins every ray
/// whose strip of `width` it falls in, within `max_profile_distance`.
pub fn profiles_for_count(
    gmx: usize,
    lsps: &SurfacePointSet,
    candidates: &[usize],
    count: usize,
    width: f64,
    max_distance: f64,
) -> Vec<Profile> {
    let g = lsps.points[gmx];
    let half = width / 2.0;
    let step = std::f64::consts::TAU / count as f64;
    let origin = ProfilePoint {
        distance: 0.0,
        height: g.z,
        index: gmx,
    };
    let mut rays: Vec<Vec<ProfilePoint>> = vec![vec![origin]; count];

    for &i in candidates {
        if i == gmx {
            continue;
        }
        let p = lsps.points[i];
        let (dx, dy) = (p.x - g.x, p.y - g.y);
        let dist = dx.hypot(dy);
        if dist == 0.0 || dist > max_distance + half {
            continue;
        }
        let angle = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
        // Rays with |angle - azimuth| <= spread can have perpendicular
        // distance <= half.
        let spread = if half >= dist {
            std::f64::consts::FRAC_PI_2
        } else {
            (half / dist).asin()
        };
        let k_lo = ((angle - spread) / step).ceil() as i64;
        let k_hi = ((angle + spread) / step).floor() as i64;
        for k in k_lo..=k_hi {
            let kk = k.rem_euclid(count as i64) as usize;
            let az = kk as f64 * step;
            let (ux, uy) = (az.cos(), az.sin());
            let along = dx * ux + dy * uy;
            let perp = (dx * uy - dy * ux).abs();
            if along >= 0.0 && along <= max_distance && perp <= half {
                rays[kk].push(ProfilePoint {
                    distance: along,
                    height: p.z,
                    index: i,
                });
            }
        }
    }

    // Strip neighbors at nearly the same distance make slopes meaningless.
    let spacing = width / 8.0;
    rays.into_iter()
        .enumerate()
        .map(|(k, pts)| Profile::merged(k as f64 * 360.0 / count as f64, width, pts, spacing))
        .collect()
}

/// Adaptive profile generation for a GMX over all points of `lsps`: rays
/// double while the chord height at the current maximum crown radius exceeds
/// the AFP. Returns the untrimmed profiles at the final ray count.
pub fn generate_profiles(gmx: usize, lsps: &SurfacePointSet, cfg: &SegConfig) -> Vec<Profile> {
    let all: Vec<usize> = (0..lsps.len()).collect();
    let width = cfg.profile_width_factor * lsps.afp;
    let mut count = cfg.initial_profiles;
    loop {
        let profiles =
            profiles_for_count(gmx, lsps, &all, count, width, cfg.max_profile_distance);
        let r = profiles
            .iter()
            .map(|p| {
                let mut p = p.clone();
                detect_gap(&mut p, cfg);
                identify_boundary(&p, cfg).distance
            })
            .fold(0.0, f64::max);
        if count >= cfg.max_profiles || chord_height(r, 360.0 / count as f64) <= lsps.afp {
            return profiles;
        }
        count *= 2;
    }
}

/// Flags the first inter-tree gap along a profile and drops every point past
/// it. Consecutive along-ray spacings are square-root transformed; a spacing
/// above `Q3 + gap_iqr_factor * IQR` is a gap. A spacing longer than
/// `void_width_factor` profile widths is a gap as well. Returns the index of
/// the gap spacing (between points `i` and `i + 1`).
pub fn detect_gap(profile: &mut Profile, cfg: &SegConfig) -> Option<usize> {
    let gap = match (statistical_gap(profile, cfg), void_gap(profile, cfg)) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }?;
    profile.points.truncate(gap + 1);
    Some(gap)
}

fn statistical_gap(profile: &Profile, cfg: &SegConfig) -> Option<usize> {
    let pts = &profile.points;
    if pts.len() < 9 {
        return None;
    }
    let transformed: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[1].distance - w[0].distance).sqrt())
        .collect();
    let mut sorted = transformed.clone();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    // Spacings equal up to rounding count as a zero spread.
    if iqr <= 1e-9 * q3.abs().max(1.0) {
        return None;
    }
    let threshold = q3 + cfg.gap_iqr_factor * iqr;
    transformed.iter().position(|&t| t > threshold)
}

fn void_gap(profile: &Profile, cfg: &SegConfig) -> Option<usize> {
    if cfg.void_width_factor <= 0.0 {
        return None;
    }
    let limit = cfg.void_width_factor * profile.width;
    profile
        .points
        .windows(2)
        .position(|w| w[1].distance - w[0].distance > limit)
}
