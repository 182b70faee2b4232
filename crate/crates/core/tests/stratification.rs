use canopy::cloud::{is_ground, normalize_heights, PointCloud};
use canopy::eval::{match_trees, metrics_for_classes, CrownClass, Detected, EvalConfig};
use canopy::forge::{generate_forest, presets, truth_layer_report, Forest, LayerFractions};
use canopy::geom::Polygon2D;
use canopy::pipeline::{segment_cloud, stratify_then_segment};
use canopy::strata::{stratify, stratify_detailed, StrataConfig};
use canopy::treeseg::SegConfig;

fn normalized(f: &Forest) -> PointCloud {
    normalize_heights(&f.cloud, &f.dem).cloud
}

fn median_height(c: &PointCloud) -> f64 {
    let mut z: Vec<f64> = c.points.iter().map(|p| p.z).collect();
    z.sort_by(f64::total_cmp);
    let n = z.len();
    if n % 2 == 1 {
        z[n / 2]
    } else {
        0.5 * (z[n / 2 - 1] + z[n / 2])
    }
}

#[test]
fn randomized_stands_partition_and_order() {
    let cfg = StrataConfig::default();
    for seed in 0..24u64 {
        let stories = 1 + (seed % 4) as u32;
        let f = generate_forest(&presets::layered_stand(stories, seed % 3 != 0, 500 + seed)).unwrap();
        let cloud = normalized(&f);
        let s = stratify_detailed(&cloud, &cfg);
        assert_eq!(s.accounted(), cloud.len(), "seed {seed}: partition");
        let mut seen = vec![false; cloud.len()];
        for id in s.layers.iter().flat_map(|l| l.point_ids.iter())
            .chain(&s.discarded_low)
            .chain(&s.discarded_remainder)
            .chain(&s.ground)
        {
            assert!(!seen[*id], "seed {seed}: point {id} placed twice");
            seen[*id] = true;
        }
        assert_eq!(s.layers.len(), stories as usize, "seed {seed}");
        for (k, l) in s.layers.iter().enumerate() {
            assert_eq!(l.index, k as u32 + 1);
            assert_eq!(l.points.len(), l.point_ids.len());
            assert!(l.thickness >= 0.0 && l.density >= 0.0);
        }
        for w in s.layers.windows(2) {
            assert!(median_height(&w[0].points) > median_height(&w[1].points), "seed {seed}: order");
        }
    }
}

#[test]
fn closed_stories_stay_apart() {
    let cfg = StrataConfig::default();
    for seed in 0..8u64 {
        let stories = 1 + (seed % 4) as u32;
        let f = generate_forest(&presets::layered_stand(stories, true, 900 + seed)).unwrap();
        let layers = stratify(&normalized(&f), &cfg);
        let m = truth_layer_report(&f.truth, &layers);
        assert!(m.unassigned.iter().all(|&u| u == 0), "seed {seed}: {:?}", m.unassigned);
        for (j, c) in m.contamination().into_iter().enumerate() {
            assert!(c < 0.05, "seed {seed}: layer {} contamination {c}", j + 1);
        }
    }
}

#[test]
fn single_story_is_one_layer_with_every_point() {
    let f = generate_forest(&presets::layered_stand(1, true, 41)).unwrap();
    let cloud = normalized(&f);
    let s = stratify_detailed(&cloud, &StrataConfig::default());
    assert_eq!(s.layers.len(), 1);
    let vegetation = cloud.points.iter().filter(|p| !is_ground(p)).count();
    assert_eq!(s.layers[0].point_ids.len(), vegetation);
}

#[test]
fn restratifying_a_layer_gives_one_layer() {
    let cfg = StrataConfig::default();
    let f = generate_forest(&presets::layered_stand(3, true, 77)).unwrap();
    let layers = stratify(&normalized(&f), &cfg);
    assert_eq!(layers.len(), 3);
    for l in &layers {
        let again = stratify_detailed(&l.points, &cfg);
        assert_eq!(again.layers.len(), 1, "layer {}", l.index);
        assert_eq!(again.accounted(), l.points.len());
    }
}

#[test]
fn neighbouring_thresholds_vary_smoothly() {
    let cfg = StrataConfig::default();
    let f = generate_forest(&presets::layered_stand(2, true, 5)).unwrap();
    let s = stratify_detailed(&normalized(&f), &cfg);
    let pass = &s.passes[0];
    let (nc, nr) = (pass.grid.ncols, pass.grid.nrows);
    let mut worst: f64 = 0.0;
    for r in 0..nr {
        for c in 0..nc {
            let Some(t) = pass.thresholds[r * nc + c] else { continue };
            for (dc, dr) in [(1, 0), (0, 1)] {
                if c + dc < nc && r + dr < nr {
                    if let Some(u) = pass.thresholds[(r + dr) * nc + c + dc] {
                        worst = worst.max((t - u).abs());
                    }
                }
            }
        }
    }
    assert!(worst <= 2.0 * cfg.kernel_sigma, "jump {worst}");
}

fn two_story(seed: u64) -> Forest {
    let fractions = LayerFractions::LogSeries { theta: 0.266 };
    generate_forest(&presets::two_story(60.0, 20.0, fractions, seed)).unwrap()
}

#[test]
fn two_story_stand_splits_into_two_clean_layers() {
    for seed in 0..3 {
        let f = two_story(seed);
        let layers = stratify(&normalized(&f), &StrataConfig::default());
        assert_eq!(layers.len(), 2);
        let m = truth_layer_report(&f.truth, &layers);
        assert!(m.contamination().iter().all(|&c| c < 0.05), "{:?}", m.contamination());
    }
}

#[test]
fn stratifying_first_raises_understory_recall() {
    let under = [CrownClass::Intermediate, CrownClass::Overtopped];
    let plot = Polygon2D::rectangle(0.0, 0.0, 60.0, 60.0);
    let eval = EvalConfig::default();
    let seg = SegConfig::default();
    for seed in 0..3 {
        let f = two_story(seed);
        let cloud = normalized(&f);
        let flat: Vec<Detected> = segment_cloud(&cloud, &seg).unwrap().crowns().iter().map(Detected::from).collect();
        let layered: Vec<Detected> = stratify_then_segment(&cloud, &StrataConfig::default(), &seg)
            .unwrap()
            .crowns
            .iter()
            .map(Detected::from)
            .collect();
        let recall = |det: &[Detected]| {
            let r = match_trees(det, &f.truth.stems, &plot, &eval).unwrap();
            metrics_for_classes(&r, det, &f.truth.stems, &under).recall
        };
        let (before, after) = (recall(&flat), recall(&layered));
        assert!(after > before, "seed {seed}: {before} -> {after}");
    }
}
