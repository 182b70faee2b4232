use std::collections::BTreeSet;

use canopy::cloud::{compute_afp, normalize_heights, PointCloud};
use canopy::dist::{run_distributed, DistConfig, DistOutput, JobId, MessageKind};
use canopy::forge::{generate_forest, presets, CrownShape, Forest, LayerFractions, Placement, TreeSpec};
use canopy::geom::Point2;
use canopy::grid::Extent;
use canopy::pipeline::segment_cloud;
use canopy::treeseg::{Crown, SegConfig};

fn normalized(f: &Forest) -> PointCloud {
    normalize_heights(&f.cloud, &f.dem).cloud
}

fn member_sets(crowns: &[Crown]) -> BTreeSet<Vec<usize>> {
    crowns.iter().map(|c| c.members.clone()).collect()
}

/// One cone at (x, y) inside `extent`.
fn lone_cone(extent: Extent, x: f64, y: f64, seed: u64) -> PointCloud {
    let mut spec = presets::single_tree(CrownShape::Cone, 20.0, 4.0, 12.0, 10.0, seed);
    spec.extent = extent;
    spec.stands[0].placement = Placement::Explicit {
        trees: vec![TreeSpec {
            x,
            y,
            height: 20.0,
            crown_radius: 4.0,
            crown_length: 12.0,
        }],
    };
    normalized(&generate_forest(&spec).unwrap())
}

fn naive_tile_count(cloud: &PointCloud, tile: f64) -> usize {
    let cols = (cloud.extent.width() / tile).round() as usize;
    let rows = (cloud.extent.height() / tile).round() as usize;
    let afp = compute_afp(cloud).unwrap();
    let mut n = 0;
    for r in 0..rows {
        for c in 0..cols {
            let e = Extent::new(c as f64 * tile, r as f64 * tile, (c + 1) as f64 * tile, (r + 1) as f64 * tile);
            let ids: Vec<usize> = (0..cloud.len())
                .filter(|&i| {
                    let p = cloud.points[i];
                    p.x >= e.xmin && p.x < e.xmax && p.y >= e.ymin && p.y < e.ymax
                })
                .collect();
            let mut sub = cloud.subset(&ids);
            sub.extent = e;
            // Keep the block's footprint so the halves see the same grid.
            let mut seg = SegConfig::default();
            seg.smoothing_sigma_factor *= afp / compute_afp(&sub).unwrap();
            n += segment_cloud(&sub, &seg).unwrap().crowns().len();
        }
    }
    n
}

#[test]
fn cone_straddling_an_edge_is_one_crown() {
    let cloud = lone_cone(Extent::new(0.0, 0.0, 40.0, 20.0), 20.0, 10.0, 3);
    assert_eq!(naive_tile_count(&cloud, 20.0), 2);
    let out = run_distributed(&cloud, &DistConfig::new(20.0, 2)).unwrap();
    assert_eq!(out.crowns.len(), 1);
    assert_eq!(out.count(MessageKind::PB), 1);
    assert_eq!(member_sets(&out.crowns), member_sets(segment_cloud(&cloud, &SegConfig::default()).unwrap().crowns()));
}

#[test]
fn cone_straddling_a_corner_is_one_crown() {
    let cloud = lone_cone(Extent::new(0.0, 0.0, 40.0, 40.0), 20.0, 20.0, 4);
    assert_eq!(naive_tile_count(&cloud, 20.0), 4);
    let out = run_distributed(&cloud, &DistConfig::new(20.0, 3)).unwrap();
    assert_eq!(out.crowns.len(), 1);
    assert_eq!(member_sets(&out.crowns), member_sets(segment_cloud(&cloud, &SegConfig::default()).unwrap().crowns()));
}

fn stand(seed: u64) -> PointCloud {
    normalized(&generate_forest(&presets::separated_stand(30, CrownShape::Cone, 10.0, seed)).unwrap())
}

fn check_log(out: &DistOutput, workers: usize) {
    let tiles = out.map.tiles.len();
    let jobs = out.jobs_dispatched;
    assert_eq!(out.count(MessageKind::PT), tiles);
    assert_eq!(out.count(MessageKind::TC), tiles);
    assert_eq!(out.count(MessageKind::PB), jobs);
    assert_eq!(out.count(MessageKind::BC), jobs);
    assert_eq!(out.count(MessageKind::FIN), workers);
    assert_eq!(out.log.len(), 2 * tiles + 2 * jobs + workers);
    assert!(jobs <= out.map.edges.len() + out.map.corners.len());

    let field = |s: &str, key: &str| -> String {
        s.split(' ').find_map(|kv| kv.strip_prefix(key)).unwrap().to_string()
    };
    let mut assigned = BTreeSet::new();
    let mut complete = BTreeSet::new();
    let mut open_jobs = BTreeSet::new();
    let mut done_jobs = BTreeSet::new();
    for (k, r) in out.log.iter().enumerate() {
        assert_eq!(r.seq, k as u64);
        match r.kind.as_str() {
            "PT" => assert!(assigned.insert(field(&r.summary, "tile=")), "tile assigned twice"),
            "TC" => assert!(complete.insert(field(&r.summary, "tile="))),
            "PB" => {
                let job = field(&r.summary, "job=");
                let id = if let Some(e) = job.strip_prefix('E') {
                    JobId::Edge(e.parse().unwrap())
                } else {
                    JobId::Corner(job[1..].parse().unwrap())
                };
                for t in out.map.job_tiles(id) {
                    assert!(complete.contains(&out.map.tiles[t].id.to_string()), "PB {job} before TC of tile {t}");
                }
                assert!(open_jobs.insert(job), "job dispatched twice");
            }
            "BC" => {
                let job = field(&r.summary, "job=");
                assert!(open_jobs.contains(&job), "BC without PB");
                assert!(done_jobs.insert(job), "two BC for one job");
            }
            "FIN" => assert_eq!(complete.len(), tiles, "FIN before every tile completed"),
            k => panic!("unexpected record {k}"),
        }
    }
    assert_eq!(open_jobs, done_jobs);
}

#[test]
fn maps_up_to_six_by_six_terminate_with_exact_counts() {
    let cloud = stand(11);
    let side = cloud.extent.width();
    for n in 1..=6 {
        let tile = side / n as f64 + 1e-9;
        let mut reference: Option<BTreeSet<Vec<usize>>> = None;
        for workers in [1, 2, 8] {
            let out = run_distributed(&cloud, &DistConfig::new(tile, workers)).unwrap();
            assert_eq!(out.map.tiles.len(), n * n);
            check_log(&out, workers);
            assert_eq!(out.member_collisions, 0);
            let sets = member_sets(&out.crowns);
            match &reference {
                None => reference = Some(sets),
                Some(r) => assert_eq!(&sets, r, "{n}x{n}: {workers} workers changed the crowns"),
            }
        }
    }
}

#[test]
fn tiled_and_whole_differ_only_near_shared_edges() {
    for seed in 0..3 {
        let f = generate_forest(&presets::separated_stand(40, CrownShape::Ellipsoid, 10.0, 20 + seed)).unwrap();
        let cloud = normalized(&f);
        let afp = compute_afp(&cloud).unwrap();
        let (w, h) = (cloud.extent.width(), cloud.extent.height());
        let whole = segment_cloud(&cloud, &SegConfig::default()).unwrap().crowns().to_vec();
        let tiled = run_distributed(&cloud, &DistConfig::new(w / 2.0 + 1e-9, 4)).unwrap().crowns;
        let max_radius = f.truth.trees.iter().map(|t| t.crown_radius).fold(0.0, f64::max);
        let (a, b) = (member_sets(&whole), member_sets(&tiled));
        let reach = 2.0 * afp + max_radius;
        for c in whole.iter().chain(&tiled) {
            if a.contains(&c.members) && b.contains(&c.members) {
                continue;
            }
            let near = c.hull.vertices.iter().any(|v: &Point2| {
                (v.x - w / 2.0).abs() <= reach || (v.y - h / 2.0).abs() <= reach
            });
            assert!(near, "seed {seed}: crown at ({:.1}, {:.1}) differs away from the seams", c.apex.x, c.apex.y);
        }
        assert_eq!(whole.len(), tiled.len(), "seed {seed}");
    }
}

#[test]
fn failed_worker_task_is_redone() {
    let cloud = stand(5);
    let tile = cloud.extent.width() / 3.0 + 1e-9;
    let clean = run_distributed(&cloud, &DistConfig::new(tile, 3)).unwrap();
    let mut cfg = DistConfig::new(tile, 3);
    cfg.faults = vec![(1, 0), (2, 3)];
    let out = run_distributed(&cloud, &cfg).unwrap();
    assert_eq!(out.log.iter().filter(|r| r.kind == "FAIL").count(), 2);
    assert_eq!(member_sets(&out.crowns), member_sets(&clean.crowns));
    assert_eq!(out.count(MessageKind::FIN), 1);
}

#[test]
fn all_workers_failing_is_an_error() {
    let cloud = stand(6);
    let mut cfg = DistConfig::new(cloud.extent.width() / 2.0 + 1e-9, 2);
    cfg.faults = vec![(0, 0), (1, 0)];
    assert!(run_distributed(&cloud, &cfg).is_err());
}

#[test]
fn two_story_stand_runs_under_the_protocol() {
    let f = generate_forest(&presets::two_story(40.0, 12.0, LayerFractions::LogSeries { theta: 0.266 }, 2)).unwrap();
    let cloud = normalized(&f);
    let one = run_distributed(&cloud, &DistConfig::new(20.0, 1)).unwrap();
    let eight = run_distributed(&cloud, &DistConfig::new(20.0, 8)).unwrap();
    assert_eq!(member_sets(&one.crowns), member_sets(&eight.crowns));
    assert!(!one.crowns.is_empty());
}
