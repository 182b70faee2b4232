//! Point-density budget across canopy layers.
//!
//! The fraction of returns landing in the n-th layer from the top is modeled
//! by a logarithmic-series distribution. Given the density needed to segment
//! the top layer, the density needed to reach layer n follows by dividing by
//! the mass left over for layers n and below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strata::CanopyLayer;

/// Number of layer ordinals observed per cloud; missing layers count as zero.
pub const FIT_HORIZON: u32 = 5;

pub const THETA_LOWER: f64 = 1e-6;
pub const THETA_UPPER: f64 = 1.0 - 1e-6;

const FIT_TOLERANCE: f64 = 1e-9;
const COARSE_STEPS: usize = 200;

/// Logarithmic-series model of per-layer return fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSeriesModel {
    pub theta: f64,
}

impl LogSeriesModel {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidConfig(format!("theta must lie in (0, 1), got {theta}")));
        }
        Ok(LogSeriesModel { theta })
    }

    pub fn pmf(&self, n: u32) -> f64 {
        log_series_pmf(*self, n)
    }
}

/// Observed fraction of a cloud's returns in layer `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityObservation {
    pub n: u32,
    pub p_n: f64,
}

/// Fractions of `pcd` held by each layer, padded with zeros up to the fit
/// horizon.
pub fn layer_fractions(layers: &[CanopyLayer], pcd: f64) -> Result<Vec<DensityObservation>> {
    if !(pcd > 0.0) {
        return Err(Error::InvalidConfig(format!("point density must be positive, got {pcd}")));
    }
    let densities: Vec<f64> = layers.iter().map(|l| l.density).collect();
    Ok(fractions_from_densities(&densities, pcd))
}

/// As [`layer_fractions`], from bare layer densities ordered top-down.
pub fn fractions_from_densities(densities: &[f64], pcd: f64) -> Vec<DensityObservation> {
    let horizon = (FIT_HORIZON as usize).max(densities.len());
    (0..horizon)
        .map(|k| DensityObservation {
            n: k as u32 + 1,
            p_n: densities.get(k).map_or(0.0, |d| d / pcd),
        })
        .collect()
}

pub fn log_series_pmf(model: LogSeriesModel, n: u32) -> f64 {
    let t = model.theta;
    // -ln(1 - t) via ln_1p keeps the small-theta limit exact.
    t.powi(n as i32) / (-(-t).ln_1p() * n as f64)
}

/// Result of a log-series fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSeriesFit {
    pub model: LogSeriesModel,
    pub mse: f64,
    /// The optimum sits at an end of the search interval.
    pub at_bound: bool,
}

fn mse(theta: f64, obs: &[DensityObservation]) -> f64 {
    let m = LogSeriesModel { theta };
    obs.iter()
        .map(|o| (log_series_pmf(m, o.n) - o.p_n).powi(2))
        .sum::<f64>()
        / obs.len() as f64
}

/// Least-squares fit of theta: a coarse scan brackets the minimum, then
/// golden-section search refines it.
pub fn fit_log_series(observations: &[DensityObservation]) -> Result<LogSeriesFit> {
    if observations.is_empty() {
        return Err(Error::EmptyInput("log-series fit needs observations"));
    }
    if let Some(o) = observations.iter().find(|o| o.n == 0) {
        return Err(Error::InvalidRecord(format!("layer ordinal must be >= 1, got {}", o.n)));
    }
    let f = |t: f64| mse(t, observations);

    let step = (THETA_UPPER - THETA_LOWER) / COARSE_STEPS as f64;
    let grid = |k: usize| (THETA_LOWER + k as f64 * step).min(THETA_UPPER);
    let best = (0..=COARSE_STEPS)
        .min_by(|&a, &b| f(grid(a)).total_cmp(&f(grid(b))))
        .unwrap();
    let mut lo = grid(best.saturating_sub(1));
    let mut hi = grid((best + 1).min(COARSE_STEPS));

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > FIT_TOLERANCE {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut theta = 0.5 * (lo + hi);
    for edge in [THETA_LOWER, THETA_UPPER] {
        if f(edge) < f(theta) {
            theta = edge;
        }
    }
    let at_bound = theta - THETA_LOWER <= 10.0 * FIT_TOLERANCE || THETA_UPPER - theta <= 10.0 * FIT_TOLERANCE;
    Ok(LogSeriesFit {
        model: LogSeriesModel { theta },
        mse: f(theta),
        at_bound,
    })
}

/// Density needed so that layer `n` still receives `pcd_min_top` points per
/// square meter.
pub fn pcd_min(n: u32, pcd_min_top: f64, model: LogSeriesModel) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("layer ordinal must be >= 1".into()));
    }
    if !(pcd_min_top > 0.0) {
        return Err(Error::InvalidConfig(format!("minimum density must be positive, got {pcd_min_top}")));
    }
    let above: f64 = (1..n).map(|k| log_series_pmf(model, k)).sum();
    if above >= 1.0 - 1e-12 {
        return Err(Error::DivergedDepth { depth: n });
    }
    Ok(pcd_min_top / (1.0 - above))
}

/// One row of the occlusion report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRow {
    pub n: u32,
    pub p_observed: Option<f64>,
    pub p_fitted: f64,
    pub pcd_min: Option<f64>,
}

/// Rows `n = 1..=horizon` comparing observed and modeled fractions with the
/// required density at each depth.
pub fn occlusion_rows(
    observed: &[DensityObservation],
    model: LogSeriesModel,
    pcd_min_top: f64,
    horizon: u32,
) -> Vec<OcclusionRow> {
    (1..=horizon)
        .map(|n| {
            let obs: Vec<f64> = observed.iter().filter(|o| o.n == n).map(|o| o.p_n).collect();
            OcclusionRow {
                n,
                p_observed: (!obs.is_empty()).then(|| obs.iter().sum::<f64>() / obs.len() as f64),
                p_fitted: log_series_pmf(model, n),
                pcd_min: pcd_min(n, pcd_min_top, model).ok(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(theta: f64) -> LogSeriesModel {
        LogSeriesModel::new(theta).unwrap()
    }

    /// Independent evaluation through the series definition
    /// -ln(1 - t) = sum t^k / k.
    fn pmf_oracle(theta: f64, n: u32) -> f64 {
        let norm: f64 = (1..2000).map(|k| theta.powi(k) / k as f64).sum();
        theta.powi(n as i32) / n as f64 / norm
    }

    #[test]
    fn pmf_values() {
        let p1 = log_series_pmf(m(0.266), 1);
        assert!((p1 - pmf_oracle(0.266, 1)).abs() < 1e-12);
        assert!((p1 - 0.8602).abs() < 1e-4);
        let total: f64 = (1..=200).map(|n| log_series_pmf(m(0.266), n)).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!((log_series_pmf(m(1e-12), 1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pcd_min_values() {
        let model = m(0.266);
        assert_eq!(pcd_min(1, 4.0, model).unwrap(), 4.0);
        let two = 4.0 / (1.0 - pmf_oracle(0.266, 1));
        let three = 4.0 / (1.0 - pmf_oracle(0.266, 1) - pmf_oracle(0.266, 2));
        assert!((pcd_min(2, 4.0, model).unwrap() - two).abs() < 1e-9);
        assert!((pcd_min(3, 4.0, model).unwrap() - three).abs() < 1e-9);
        assert!((two - 28.6).abs() < 0.1);
        assert!((three - 157.3).abs() < 0.5);
        assert!(matches!(pcd_min(3, 4.0, m(1e-12)), Err(Error::DivergedDepth { depth: 3 })));
    }

    #[test]
    fn fractions() {
        let f = fractions_from_densities(&[42.08, 5.02, 0.84, 0.44], 50.0);
        assert_eq!(f.len(), 5);
        let expect = [0.8416, 0.1004, 0.0168, 0.0088, 0.0];
        for (o, e) in f.iter().zip(expect) {
            assert!((o.p_n - e).abs() < 1e-12);
        }
        let single = fractions_from_densities(&[7.0], 7.0);
        assert_eq!(single[0].p_n, 1.0);
        assert!(single[1..].iter().all(|o| o.p_n == 0.0));
    }

    #[test]
    fn fit_round_trip() {
        for theta in [0.266, 0.5] {
            let obs: Vec<DensityObservation> = (1..=5)
                .map(|n| DensityObservation { n, p_n: pmf_oracle(theta, n) })
                .collect();
            let fit = fit_log_series(&obs).unwrap();
            assert!((fit.model.theta - theta).abs() < 1e-3, "{theta} -> {}", fit.model.theta);
            assert!(fit.mse < 1e-10);
            assert!(!fit.at_bound);
        }
    }

    #[test]
    fn degenerate_fit_flagged() {
        let fit = fit_log_series(&[DensityObservation { n: 1, p_n: 1.0 }]).unwrap();
        assert!(fit.at_bound);
        assert!(fit.model.theta < 1e-5);
        assert!(fit_log_series(&[]).is_err());
    }

    proptest! {
        #[test]
        fn pmf_decreasing(theta in 0.001f64..0.999, n in 1u32..40) {
            prop_assert!(log_series_pmf(m(theta), n + 1) < log_series_pmf(m(theta), n));
        }

        #[test]
        fn pcd_min_increasing(theta in 0.01f64..0.95, n in 1u32..8) {
            let model = m(theta);
            prop_assert_eq!(pcd_min(1, 4.0, model).unwrap(), 4.0);
            let b = pcd_min(n + 1, 4.0, model);
            prop_assume!(b.is_ok());
            prop_assert!(b.unwrap() > pcd_min(n, 4.0, model).unwrap());
        }
    }
}
