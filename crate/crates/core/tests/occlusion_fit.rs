use canopy::cloud::normalize_heights;
use canopy::forge::{generate_forest, presets};
use canopy::occlusion::{fit_log_series, layer_fractions, log_series_pmf, DensityObservation, LogSeriesModel};
use canopy::strata::{stratify, StrataConfig};

#[test]
fn exact_pmf_round_trips() {
    for theta in [0.05, 0.266, 0.5, 0.8] {
        let obs: Vec<DensityObservation> = (1..=5)
            .map(|n| DensityObservation { n, p_n: log_series_pmf(LogSeriesModel { theta }, n) })
            .collect();
        let fit = fit_log_series(&obs).unwrap();
        assert!((fit.model.theta - theta).abs() <= 0.001, "{theta}: {}", fit.model.theta);
    }
}

/// Forge, stratify, measure layer densities, fit.
#[test]
fn stratified_forge_sheets_recover_theta() {
    for (theta, seed) in [(0.266, 0), (0.266, 1), (0.266, 2), (0.15, 3), (0.4, 4)] {
        let f = generate_forest(&presets::occlusion_sheets(5, theta, 60.0, 30.0, seed)).unwrap();
        assert!(f.cloud.len() >= 10_000);
        let cloud = normalize_heights(&f.cloud, &f.dem).cloud;
        let layers = stratify(&cloud, &StrataConfig::default());
        let obs = layer_fractions(&layers, cloud.point_density()).unwrap();

        // Layers match the stories point for point.
        for (k, o) in obs.iter().enumerate().take(layers.len()) {
            let story = k as u32 + 1;
            let truth = f.truth.labels.iter().filter(|l| l.is_some_and(|l| l.story == story)).count();
            assert_eq!(layers[k].points.len(), truth, "theta {theta} layer {story}");
            assert!((o.p_n - truth as f64 / cloud.len() as f64).abs() < 1e-12);
        }

        let fit = fit_log_series(&obs).unwrap();
        assert!((fit.model.theta - theta).abs() <= 0.01, "theta {theta} seed {seed}: fitted {}", fit.model.theta);
    }
}
