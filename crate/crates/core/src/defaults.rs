//! Every tunable default in one place. The experiment manifest records these
//! values so that a run can be traced back to the settings it used.

use serde::Serialize;

/// Prior used by the production platform: Beta(1, 9), mean 0.1.
pub const DATA_PRIOR_ALPHA: f64 = 1.0;
pub const DATA_PRIOR_BETA: f64 = 9.0;

/// Counterfactual TS priors may not be more exploratory than the data's prior.
pub const MAX_PRIOR_MEAN: f64 = 0.1;
/// Counterfactual UCB runs may not give entrants more impressions than observed.
pub const MAX_UCB_ENTRANT_SHARE: f64 = 0.18;
/// Slack on validity-region comparisons.
pub const VALIDITY_EPS: f64 = 1e-12;

/// Propensities below this are clipped in the IPS estimator.
pub const PROPENSITY_FLOOR: f64 = 1e-3;
/// Monte-Carlo draws per propensity estimate.
pub const MC_SAMPLES: usize = 10_000;

/// Analysis window in days; auctions per day default to horizon / 7.
pub const WINDOW_DAYS: u32 = 7;

pub const PRIOR_GRID_POINTS: usize = 13;
pub const PRIOR_GRID_MIN: f64 = 1e-4;
pub const PRIOR_GRID_MAX: f64 = 1e-1;
pub const TAU_GRID_POINTS: usize = 21;

/// Thin / thick cut points on the thickness distribution.
pub const THIN_QUANTILE: f64 = 0.25;
pub const THICK_QUANTILE: f64 = 0.75;

/// Log-spaced prior means over `[PRIOR_GRID_MIN, PRIOR_GRID_MAX]`.
pub fn prior_mean_grid() -> Vec<f64> {
    log_grid(PRIOR_GRID_MIN, PRIOR_GRID_MAX, PRIOR_GRID_POINTS)
}

pub fn tau_grid() -> Vec<f64> {
    (0..TAU_GRID_POINTS)
        .map(|i| i as f64 / (TAU_GRID_POINTS - 1) as f64)
        .collect()
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else if i == 0 {
                lo
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Snapshot of the defaults, written into every manifest.
#[derive(Debug, Clone, Serialize)]
pub struct DefaultsSnapshot {
    pub data_prior: (f64, f64),
    pub max_prior_mean: f64,
    pub max_ucb_entrant_share: f64,
    pub propensity_floor: f64,
    pub mc_samples: usize,
    pub window_days: u32,
    pub prior_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    pub thin_quantile: f64,
    pub thick_quantile: f64,
    pub beta_sampler: &'static str,
    pub rng: &'static str,
}

pub fn snapshot() -> DefaultsSnapshot {
    DefaultsSnapshot {
        data_prior: (DATA_PRIOR_ALPHA, DATA_PRIOR_BETA),
        max_prior_mean: MAX_PRIOR_MEAN,
        max_ucb_entrant_share: MAX_UCB_ENTRANT_SHARE,
        propensity_floor: PROPENSITY_FLOOR,
        mc_samples: MC_SAMPLES,
        window_days: WINDOW_DAYS,
        prior_grid: prior_mean_grid(),
        tau_grid: tau_grid(),
        thin_quantile: THIN_QUANTILE,
        thick_quantile: THICK_QUANTILE,
        beta_sampler: "rand_distr::Beta 0.5",
        rng: "ChaCha8, seed = sha256(master_seed, replication, keyword_id)",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_grid_spans_range() {
        let g = prior_mean_grid();
        assert_eq!(g.len(), 13);
        assert_eq!(g[0], 1e-4);
        assert_eq!(g[12], 0.1);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        // quarter-decade steps
        assert!((g[4] - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn tau_grid_endpoints() {
        let g = tau_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[20], 1.0);
    }
}
