use serde::{Deserialize, Serialize};

use crate::cloud::{Point3D, SurfacePointSet};
use crate::geom::{convex_hull, Point2, Polygon2D};
use crate::grid::SpatialIndex;

use super::boundary::{identify_boundary, Boundary};
use super::profile::{chord_height, detect_gap, profiles_for_count};
use super::SegConfig;

/// A segmented tree crown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crown {
    pub id: u32,
    /// The GMX that seeded the crown, with its unsmoothed height.
    pub apex: Point3D,
    /// Smoothed surface height at the apex; non-increasing in discovery order.
    pub surface_height: f64,
    pub height: f64,
    pub hull: Polygon2D,
    /// Source point ids of the member surface points, ascending.
    pub members: Vec<usize>,
    /// Largest boundary distance over the final profile fan.
    pub max_radius: f64,
    /// Canopy layer the crown was segmented from, when stratified.
    pub layer: Option<u32>,
}

impl Crown {
    pub fn apex_xy(&self) -> Point2 {
        Point2::new(self.apex.x, self.apex.y)
    }
}

/// Crowns plus per-point bookkeeping of a segmentation run.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub crowns: Vec<Crown>,
    /// Crown id per surface point; `None` for noise and low-height discards.
    pub labels: Vec<Option<u32>>,
    /// Surface point indices of each crown, parallel to `crowns`.
    pub crown_points: Vec<Vec<usize>>,
    /// Surface points whose clusters were dropped as noise or too low.
    pub discarded: Vec<usize>,
}

/// Segments smoothed, height-normalized surface points into crowns.
pub fn segment_trees(lsps: &SurfacePointSet, cfg: &SegConfig) -> Vec<Crown> {
    segment_trees_detailed(lsps, cfg).crowns
}

struct Cluster {
    gmx: usize,
    hull: Polygon2D,
    members: Vec<usize>,
    max_radius: f64,
}

pub fn segment_trees_detailed(lsps: &SurfacePointSet, cfg: &SegConfig) -> Segmentation {
    let n = lsps.len();
    let coords = lsps.coords();
    let index = SpatialIndex::new(&coords, (cfg.max_profile_distance / 4.0).max(1.0));
    let afp = lsps.afp;
    let width = cfg.profile_width_factor * afp;
    let tolerance = cfg.claim_tolerance_factor * afp;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&lsps.points[a], &lsps.points[b]);
        q.z.total_cmp(&p.z)
            .then(p.x.total_cmp(&q.x))
            .then(p.y.total_cmp(&q.y))
    });

    let flank = cfg.flank_radius_factor * afp;
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut grown = Vec::new();

    for &g in &order {
        if owner[g].is_some() {
            continue;
        }
        let (gx, gy) = coords[g];
        if flank > 0.0 {
            // Highest claimed neighbor above the candidate apex, if any.
            let mut best: Option<usize> = None;
            index.for_each_candidate(gx, gy, flank, |i| {
                let (dx, dy) = (coords[i].0 - gx, coords[i].1 - gy);
                if owner[i].is_some()
                    && dx * dx + dy * dy <= flank * flank
                    && lsps.points[i].z > lsps.points[g].z
                    && best.is_none_or(|b| {
                        let (bz, iz) = (lsps.points[b].z, lsps.points[i].z);
                        iz > bz || (iz == bz && i < b)
                    })
                {
                    best = Some(i);
                }
            });
            if let Some(b) = best {
                let k = owner[b].unwrap();
                owner[g] = Some(k);
                clusters[k].members.push(g);
                grown.push(k);
                continue;
            }
        }
        let reach = cfg.max_profile_distance + width + tolerance + cfg.rim_extension_factor * afp;
        let candidates: Vec<usize> = index
            .within(&coords, gx, gy, reach)
            .into_iter()
            .filter(|&i| owner[i].is_none())
            .collect();

        let (boundaries, max_radius) = profile_fan(g, lsps, &candidates, cfg);
        let rim = cfg.rim_extension_factor * afp;
        let mut outline: Vec<Point2> = boundaries
            .iter()
            .map(|b| {
                let (x, y) = coords[b.index];
                let d = (x - gx).hypot(y - gy);
                if b.from_minimum || d == 0.0 {
                    Point2::new(x, y)
                } else {
                    let k = (d + rim) / d;
                    Point2::new(gx + (x - gx) * k, gy + (y - gy) * k)
                }
            })
            .collect();
        outline.push(Point2::new(gx, gy));
        let boundary_hull = convex_hull(&outline).expect("outline holds the GMX");

        let cluster = if boundary_hull.degenerate {
            let radius = cfg.mdcw / 2.0;
            let members: Vec<usize> = candidates
                .iter()
                .copied()
                .filter(|&i| (coords[i].0 - gx).hypot(coords[i].1 - gy) <= radius)
                .collect();
            let pts: Vec<Point2> = members.iter().map(|&i| Point2::new(coords[i].0, coords[i].1)).collect();
            let hull = match convex_hull(&pts) {
                Ok(h) => h,
                Err(_) => boundary_hull,
            };
            Cluster {
                gmx: g,
                hull,
                members,
                max_radius,
            }
        } else {
            let members: Vec<usize> = candidates
                .iter()
                .copied()
                .filter(|&i| {
                    let p = Point2::new(coords[i].0, coords[i].1);
                    i == g || boundary_hull.distance_to(p) <= tolerance
                })
                .collect();
            let hull = if tolerance > 0.0 {
                let pts: Vec<Point2> = members
                    .iter()
                    .map(|&i| Point2::new(coords[i].0, coords[i].1))
                    .collect();
                match convex_hull(&pts) {
                    Ok(h) if !h.degenerate => h,
                    _ => boundary_hull,
                }
            } else {
                boundary_hull
            };
            Cluster {
                gmx: g,
                hull,
                members,
                max_radius,
            }
        };
        debug_assert!(cluster.members.contains(&g));
        for &i in &cluster.members {
            owner[i] = Some(clusters.len());
        }
        clusters.push(cluster);
    }
    grown.sort_unstable();
    grown.dedup();
    for k in grown {
        let c = &mut clusters[k];
        c.members.sort_unstable();
        let pts: Vec<Point2> = c.members.iter().map(|&i| Point2::new(coords[i].0, coords[i].1)).collect();
        if let Ok(h) = convex_hull(&pts) {
            c.hull = h;
        }
    }

    let mut crowns = Vec::new();
    let mut crown_points = Vec::new();
    let mut labels = vec![None; n];
    let mut discarded = Vec::new();
    for cluster in clusters {
        let tallest = cluster
            .members
            .iter()
            .map(|&i| lsps.raw_z[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let noise = cluster.members.len() < 2
            || cluster.hull.degenerate
            || crown_width(&cluster.hull) < cfg.mdcw;
        if noise || tallest < cfg.min_tree_height {
            discarded.extend(cluster.members);
            continue;
        }
        let id = crowns.len() as u32 + 1;
        let g = cluster.gmx;
        let apex = Point3D {
            z: lsps.raw_z[g],
            ..lsps.points[g]
        };
        let mut members: Vec<usize> = cluster.members.iter().map(|&i| lsps.ids[i]).collect();
        members.sort_unstable();
        for &i in &cluster.members {
            labels[i] = Some(id);
        }
        crowns.push(Crown {
            id,
            apex,
            surface_height: lsps.points[g].z,
            height: apex.z,
            hull: cluster.hull,
            members,
            max_radius: cluster.max_radius,
            layer: None,
        });
        crown_points.push(cluster.members);
    }
    discarded.sort_unstable();

    Segmentation {
        crowns,
        labels,
        crown_points,
        discarded,
    }
}

/// Diameter of the disk with the same area as the crown hull.
pub fn crown_width(hull: &Polygon2D) -> f64 {
    2.0 * (hull.area().abs() / std::f64::consts::PI).sqrt()
}

/// Casts profiles from `gmx`, doubling the ray count while the chord height
/// at the largest boundary distance exceeds the AFP, and returns the
/// boundary of every ray in the final fan with that largest distance.
fn profile_fan(
    gmx: usize,
    lsps: &SurfacePointSet,
    candidates: &[usize],
    cfg: &SegConfig,
) -> (Vec<Boundary>, f64) {
    let width = cfg.profile_width_factor * lsps.afp;
    let mut count = cfg.initial_profiles;
    loop {
        let boundaries: Vec<Boundary> =
            profiles_for_count(gmx, lsps, candidates, count, width, cfg.max_profile_distance)
                .into_iter()
                .map(|mut p| {
                    detect_gap(&mut p, cfg);
                    identify_boundary(&p, cfg)
                })
                .collect();
        let r = boundaries.iter().map(|b| b.distance).fold(0.0, f64::max);
        if count >= cfg.max_profiles || chord_height(r, 360.0 / count as f64) <= lsps.afp {
            return (boundaries, r);
        }
        count *= 2;
    }
}
