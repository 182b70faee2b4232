use super::{median, Profile, ProfilePoint, SegConfig};

/// Crown radius of a narrow cone-shaped neighbor of height `h_ad`.
pub fn cone_crown_radius(h_ad: f64, cfg: &SegConfig) -> f64 {
    let steepness = (90.0 - cfg.epsilon_deg).to_radians();
    h_ad * cfg.cl_cone / steepness.tan() * cfg.o_cone
}

/// Crown radius of a sphere-shaped neighbor of height `h_ad`.
pub fn sphere_crown_radius(h_ad: f64, cfg: &SegConfig) -> f64 {
    h_ad * cfg.cl_sphere / 2.0 * cfg.o_sphere
}

/// Right-window size: linear blend of the cone and sphere radii by the
/// steepness `s_right` (degrees), clamped to `[sphere slope, 90 - epsilon]`.
pub fn right_window_width(s_right: f64, h_ad: f64, cfg: &SegConfig) -> f64 {
    let steep = 90.0 - cfg.epsilon_deg;
    let flat = cfg.sphere_expected_slope_deg;
    let s = s_right.clamp(flat, steep);
    let t = (steep - s) / (steep - flat);
    cone_crown_radius(h_ad, cfg) * (1.0 - t) + sphere_crown_radius(h_ad, cfg) * t
}

/// The crown boundary chosen on one profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundary {
    /// Position in the profile's point list.
    pub position: usize,
    pub distance: f64,
    /// Index into the surface point set.
    pub index: usize,
    /// Whether the boundary is an accepted local minimum (vs. the last point).
    pub from_minimum: bool,
}

fn slopes(points: &[ProfilePoint]) -> Vec<f64> {
    points
        .windows(2)
        .filter_map(|w| {
            let dd = w[1].distance - w[0].distance;
            (dd != 0.0).then(|| (w[1].height - w[0].height) / dd)
        })
        .collect()
}

/// Steepness (degrees) of the surface just past a local minimum: arctan of
/// the median absolute slope over consecutive pairs within `mdcw` of it.
fn right_steepness(points: &[ProfilePoint], lm: usize, cfg: &SegConfig) -> f64 {
    let limit = points[lm].distance + cfg.mdcw;
    let end = points[lm..]
        .iter()
        .position(|p| p.distance > limit)
        .map_or(points.len(), |k| lm + k);
    let mut abs: Vec<f64> = slopes(&points[lm..end]).iter().map(|s| s.abs()).collect();
    if abs.len() < 2 {
        return cfg.sphere_expected_slope_deg;
    }
    median(&mut abs).unwrap().atan().to_degrees()
}

/// Whether the local minimum at `lm` separates the GMX crown from a neighbor:
/// the median slope from the GMX down to it is negative and the median slope
/// across the right window is positive.
pub(crate) fn accepts_minimum(points: &[ProfilePoint], lm: usize, cfg: &SegConfig) -> bool {
    let left = median(&mut slopes(&points[..=lm]));
    if !matches!(left, Some(s) if s < 0.0) {
        return false;
    }
    let s_right = right_steepness(points, lm, cfg);
    let h_ad = 0.5 * (points[0].height + points[lm].height);
    let window = right_window_width(s_right, h_ad, cfg);
    let limit = points[lm].distance + window;
    // The window always reaches the minimum's right neighbor.
    let end = points[lm + 1..]
        .iter()
        .position(|p| p.distance > limit)
        .map_or(points.len(), |k| lm + 1 + k)
        .max(lm + 2);
    matches!(median(&mut slopes(&points[lm..end])), Some(s) if s > 0.0)
}

/// Scans local minima outward from the GMX and returns the first one that
/// qualifies as a crown boundary, or the last point of the profile.
pub fn identify_boundary(profile: &Profile, cfg: &SegConfig) -> Boundary {
    let pts = &profile.points;
    let last = Boundary {
        position: pts.len() - 1,
        distance: pts[pts.len() - 1].distance,
        index: pts[pts.len() - 1].index,
        from_minimum: false,
    };
    if pts.len() < 3 {
        return last;
    }
    for i in 1..pts.len() - 1 {
        let is_minimum = pts[i].height < pts[i - 1].height && pts[i].height < pts[i + 1].height;
        if is_minimum && accepts_minimum(pts, i, cfg) {
            return Boundary {
                position: i,
                distance: pts[i].distance,
                index: pts[i].index,
                from_minimum: true,
            };
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(samples: &[(f64, f64)]) -> Profile {
        let pts = samples
            .iter()
            .enumerate()
            .map(|(i, &(d, h))| ProfilePoint {
                distance: d,
                height: h,
                index: i,
            })
            .collect();
        Profile::new(0.0, 0.3, pts)
    }

    #[test]
    fn crown_radius_examples() {
        let cfg = SegConfig::default();
        // 20 * 0.8 / tan(85 deg) * 2/3
        let cone = 20.0 * 0.8 / 85f64.to_radians().tan() * (2.0 / 3.0);
        assert!((cone_crown_radius(20.0, &cfg) - cone).abs() < 1e-12);
        assert!((cone - 0.933).abs() < 1e-3);
        assert!((sphere_crown_radius(20.0, &cfg) - 20.0 * 0.7 / 2.0 / 3.0).abs() < 1e-12);
        assert!((sphere_crown_radius(20.0, &cfg) - 2.333).abs() < 1e-3);
        assert_eq!(cone_crown_radius(0.0, &cfg), 0.0);
        assert_eq!(sphere_crown_radius(0.0, &cfg), 0.0);
        assert!((cone_crown_radius(40.0, &cfg) - 2.0 * cone_crown_radius(20.0, &cfg)).abs() < 1e-12);
        for h in [0.5, 3.0, 20.0, 45.0] {
            assert!(sphere_crown_radius(h, &cfg) > cone_crown_radius(h, &cfg));
        }
    }

    #[test]
    fn window_endpoints_and_midpoint() {
        let cfg = SegConfig::default();
        let (cone, sphere) = (cone_crown_radius(18.0, &cfg), sphere_crown_radius(18.0, &cfg));
        assert_eq!(right_window_width(32.7, 18.0, &cfg), sphere);
        assert_eq!(right_window_width(85.0, 18.0, &cfg), cone);
        let mid = right_window_width(58.85, 18.0, &cfg);
        assert!((mid - 0.5 * (cone + sphere)).abs() <= 1e-12 * mid);
        // Clamped outside the range.
        assert_eq!(right_window_width(10.0, 18.0, &cfg), sphere);
        assert_eq!(right_window_width(89.0, 18.0, &cfg), cone);
    }

    #[test]
    fn monotone_profile_ends_at_last_point() {
        let p = profile(&(0..20).map(|i| (i as f64 * 0.2, 20.0 - i as f64 * 0.5)).collect::<Vec<_>>());
        let b = identify_boundary(&p, &SegConfig::default());
        assert_eq!(b.position, 19);
        assert!(!b.from_minimum);
    }

    #[test]
    fn v_profile_boundary_at_valley() {
        // 20 m apex down to 8 m at 4 m, back up to 15 m at 8 m.
        let mut s = Vec::new();
        for i in 0..=40 {
            let d = i as f64 * 0.2;
            let h = if d <= 4.0 { 20.0 - 3.0 * d } else { 8.0 + 7.0 / 4.0 * (d - 4.0) };
            s.push((d, h));
        }
        let p = profile(&s);
        let b = identify_boundary(&p, &SegConfig::default());
        assert!(b.from_minimum);
        assert_eq!(b.position, 20);
        assert_eq!(p.points[b.position].height, 8.0);
        // Both slope conditions hold at the accepted minimum.
        let left = median(&mut slopes(&p.points[..=20])).unwrap();
        assert!(left < 0.0);
    }

    #[test]
    fn small_dip_on_descending_flank_is_rejected() {
        // Descending flank with a 0.2 m dip at 2 m that never rises again.
        let mut s = Vec::new();
        for i in 0..=40 {
            let d = i as f64 * 0.2;
            let mut h = 20.0 - 1.5 * d;
            if i == 10 {
                h -= 0.5;
            }
            if i == 11 {
                h = 20.0 - 1.5 * d + 0.2;
            }
            s.push((d, h));
        }
        let p = profile(&s);
        // Index 10 is a local minimum (lower than 9 and 11).
        assert!(p.points[10].height < p.points[9].height && p.points[10].height < p.points[11].height);
        let b = identify_boundary(&p, &SegConfig::default());
        assert_ne!(b.position, 10);
        assert_eq!(b.position, 40);
    }

    #[test]
    fn tiny_profiles_return_last_point() {
        let p = profile(&[(0.0, 10.0), (0.5, 9.0)]);
        assert_eq!(identify_boundary(&p, &SegConfig::default()).position, 1);
        let p = profile(&[(0.0, 10.0)]);
        assert_eq!(identify_boundary(&p, &SegConfig::default()).position, 0);
    }
}
