//! Uniform prior sweeps, per-keyword customized priors and Pareto frontiers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::outcomes::{compute_outcomes, Estimate, OutcomeReport};
use crate::error::AnalysisError;
use crate::market::KeywordMarket;
use crate::mechanism::{BetaPrior, ExplorationPolicy, PriorOverride, TsPriors};
use crate::sim::{simulate_all, SimulationConfig};
use crate::stats::CompensatedSum;

/// One uniform-prior run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub prior_mean: f64,
    /// `beta0 = 1 / prior_mean - 1` with `alpha0 = 1`.
    pub beta: f64,
    pub outcome: OutcomeReport,
    pub outside_validity_region: bool,
}

/// One `simulate_all` per prior mean. Every grid point reuses the same master
/// seed, so all points share random numbers keyword by keyword.
pub fn prior_sweep(
    markets: &[KeywordMarket],
    prior_means: &[f64],
    config: &SimulationConfig,
) -> Result<Vec<SweepPoint>, AnalysisError> {
    if prior_means.is_empty() {
        return Err(AnalysisError::Invalid("prior grid is empty".into()));
    }
    prior_means
        .iter()
        .map(|&m| {
            if !(m > 0.0 && m < 1.0) {
                return Err(AnalysisError::Invalid(format!("prior mean {m} not in (0, 1)")));
            }
            let prior = BetaPrior::from_mean(m)
                .map_err(|e| AnalysisError::Invalid(e.to_string()))?;
            let cfg = SimulationConfig {
                policy: ExplorationPolicy::ts_uniform(prior),
                ..config.clone()
            };
            let run = simulate_all(markets, &cfg)?;
            Ok(SweepPoint {
                prior_mean: m,
                beta: prior.beta,
                outcome: compute_outcomes(&run.trajectories)?,
                outside_validity_region: run.outside_validity_region,
            })
        })
        .collect()
}

/// How revenue and efficiency enter the per-keyword objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide both by the keyword's auction count.
    #[default]
    PerImpression,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorAssignment {
    Uniform { prior_mean: f64 },
    PerKeyword { prior_means: BTreeMap<String, f64> },
}

impl PriorAssignment {
    /// The TS policy this assignment stands for.
    pub fn policy(&self) -> Result<ExplorationPolicy, AnalysisError> {
        let bad = |e: crate::error::MechanismError| AnalysisError::Invalid(e.to_string());
        Ok(match self {
            Self::Uniform { prior_mean } => {
                ExplorationPolicy::ts_uniform(BetaPrior::from_mean(*prior_mean).map_err(bad)?)
            }
            Self::PerKeyword { prior_means } => {
                let mut p = TsPriors::uniform(BetaPrior::data());
                for (k, &m) in prior_means {
                    p.overrides.push(PriorOverride {
                        keyword_id: k.clone(),
                        ad_id: None,
                        prior: BetaPrior::from_mean(m).map_err(bad)?,
                    });
                }
                ExplorationPolicy::Ts(p)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    /// Objective weight on revenue; `None` for uniform sweep points.
    pub tau: Option<f64>,
    pub prior_assignment: PriorAssignment,
    pub revenue: Estimate,
    pub efficiency: Estimate,
    #[serde(skip)]
    pub revenue_by_rep: Vec<f64>,
    #[serde(skip)]
    pub efficiency_by_rep: Vec<f64>,
}

impl ParetoPoint {
    pub fn from_sweep(p: &SweepPoint) -> Self {
        let a = &p.outcome.aggregate;
        Self {
            tau: None,
            prior_assignment: PriorAssignment::Uniform {
                prior_mean: p.prior_mean,
            },
            revenue: a.revenue,
            efficiency: a.efficiency,
            revenue_by_rep: a.revenue_by_rep.clone(),
            efficiency_by_rep: a.efficiency_by_rep.clone(),
        }
    }

    /// `self` is at least as good in both coordinates and better in one.
    pub fn dominates(&self, other: &Self) -> bool {
        let (r, e) = (self.revenue.mean, self.efficiency.mean);
        let (r2, e2) = (other.revenue.mean, other.efficiency.mean);
        r >= r2 && e >= e2 && (r > r2 || e > e2)
    }
}

/// Per keyword, the grid point maximizing `tau * revenue + (1 - tau) *
/// efficiency` (replication means); ties go to the smallest prior mean,
/// i.e. the largest `beta0`. Reuses the sweep's per-keyword replications.
pub fn customized_from_sweep(
    sweep: &[SweepPoint],
    tau: f64,
    normalization: Normalization,
) -> Result<ParetoPoint, AnalysisError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(AnalysisError::Invalid(format!("tau {tau} not in [0, 1]")));
    }
    let first = sweep
        .first()
        .ok_or_else(|| AnalysisError::Invalid("prior grid is empty".into()))?;
    let n = first.outcome.aggregate.replications;
    let mut rev = vec![CompensatedSum::new(); n];
    let mut eff = vec![CompensatedSum::new(); n];
    let mut choice = BTreeMap::new();
    for (i, kw) in first.outcome.keywords.iter().enumerate() {
        let scale = match normalization {
            Normalization::PerImpression => 1.0 / kw.auctions.max(1) as f64,
            Normalization::Raw => 1.0,
        };
        let mut best: Option<(f64, f64, usize)> = None;
        for (g, p) in sweep.iter().enumerate() {
            let k = &p.outcome.keywords[i];
            let v = tau * k.revenue.mean * scale + (1.0 - tau) * k.efficiency.mean * scale;
            let better = match best {
                None => true,
                Some((bv, bm, _)) => v > bv || (v == bv && p.prior_mean < bm),
            };
            if better {
                best = Some((v, p.prior_mean, g));
            }
        }
        let (_, m, g) = best.unwrap();
        let k = &sweep[g].outcome.keywords[i];
        for r in 0..n {
            rev[r].add(k.revenue_by_rep[r]);
            eff[r].add(k.efficiency_by_rep[r]);
        }
        choice.insert(kw.keyword_id.clone().unwrap_or_default(), m);
    }
    let revenue_by_rep: Vec<f64> = rev.iter().map(|s| s.value()).collect();
    let efficiency_by_rep: Vec<f64> = eff.iter().map(|s| s.value()).collect();
    Ok(ParetoPoint {
        tau: Some(tau),
        prior_assignment: PriorAssignment::PerKeyword {
            prior_means: choice,
        },
        revenue: Estimate::from_samples(&revenue_by_rep),
        efficiency: Estimate::from_samples(&efficiency_by_rep),
        revenue_by_rep,
        efficiency_by_rep,
    })
}

/// Sweep `prior_means` and pick customized priors for one `tau`.
pub fn optimize_customized_priors(
    markets: &[KeywordMarket],
    tau: f64,
    prior_means: &[f64],
    config: &SimulationConfig,
    normalization: Normalization,
) -> Result<ParetoPoint, AnalysisError> {
    let sweep = prior_sweep(markets, prior_means, config)?;
    customized_from_sweep(&sweep, tau, normalization)
}

/// Drop dominated points (and exact duplicates); the rest is sorted by
/// revenue ascending, so efficiency is non-increasing along it.
pub fn pareto_filter(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut keep: Vec<ParetoPoint> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let dominated = points.iter().any(|q| q.dominates(p));
        let duplicate = points[..i].iter().any(|q| {
            q.revenue.mean == p.revenue.mean && q.efficiency.mean == p.efficiency.mean
        });
        if !dominated && !duplicate {
            keep.push(p.clone());
        }
    }
    keep.sort_by(|a, b| {
        a.revenue
            .mean
            .total_cmp(&b.revenue.mean)
            .then(b.efficiency.mean.total_cmp(&a.efficiency.mean))
    });
    keep
}

/// Whether some customized point covers a uniform point in both coordinates,
/// allowing one standard error of the paired (per-replication) difference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceAnnotation {
    pub uniform_prior_mean: f64,
    pub dominated: bool,
    /// Best covering customized point, by `tau`.
    pub by_tau: Option<f64>,
    pub revenue_gap: f64,
    pub efficiency_gap: f64,
    pub revenue_gap_se: f64,
    pub efficiency_gap_se: f64,
}

fn paired_gap(a: &[f64], b: &[f64]) -> Estimate {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Estimate::from_samples(&d)
}

pub fn annotate_dominance(customized: &[ParetoPoint], uniform: &[ParetoPoint]) -> Vec<DominanceAnnotation> {
    uniform
        .iter()
        .map(|u| {
            let prior = match &u.prior_assignment {
                PriorAssignment::Uniform { prior_mean } => *prior_mean,
                PriorAssignment::PerKeyword { .. } => f64::NAN,
            };
            let mut best: Option<(f64, DominanceAnnotation)> = None;
            for c in customized {
                let dr = paired_gap(&c.revenue_by_rep, &u.revenue_by_rep);
                let de = paired_gap(&c.efficiency_by_rep, &u.efficiency_by_rep);
                let ok = dr.mean >= -dr.se && de.mean >= -de.se;
                // slack in SE units of the weaker coordinate
                let slack = (dr.mean + dr.se).min(de.mean + de.se);
                let ann = DominanceAnnotation {
                    uniform_prior_mean: prior,
                    dominated: ok,
                    by_tau: c.tau,
                    revenue_gap: dr.mean,
                    efficiency_gap: de.mean,
                    revenue_gap_se: dr.se,
                    efficiency_gap_se: de.se,
                };
                let better = match &best {
                    None => true,
                    Some((s, b)) => (ok && !b.dominated) || (ok == b.dominated && slack > *s),
                };
                if better {
                    best = Some((slack, ann));
                }
            }
            best.map(|(_, a)| a).unwrap_or(DominanceAnnotation {
                uniform_prior_mean: prior,
                dominated: false,
                by_tau: None,
                revenue_gap: f64::NAN,
                efficiency_gap: f64::NAN,
                revenue_gap_se: f64::NAN,
                efficiency_gap_se: f64::NAN,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frontier {
    /// Customized points for every tau, before filtering.
    pub customized_all: Vec<ParetoPoint>,
    pub customized: Vec<ParetoPoint>,
    pub uniform: Vec<ParetoPoint>,
    pub dominance: Vec<DominanceAnnotation>,
}

impl Frontier {
    /// True when every uniform frontier point is covered.
    pub fn customized_dominates(&self) -> bool {
        self.dominance.iter().all(|d| d.dominated)
    }
}

pub fn frontier_from_sweep(
    sweep: &[SweepPoint],
    taus: &[f64],
    normalization: Normalization,
) -> Result<Frontier, AnalysisError> {
    if taus.is_empty() {
        return Err(AnalysisError::Invalid("tau grid is empty".into()));
    }
    let customized_all = taus
        .iter()
        .map(|&t| customized_from_sweep(sweep, t, normalization))
        .collect::<Result<Vec<_>, _>>()?;
    let uniform_all: Vec<ParetoPoint> = sweep.iter().map(ParetoPoint::from_sweep).collect();
    let customized = pareto_filter(&customized_all);
    let uniform = pareto_filter(&uniform_all);
    let dominance = annotate_dominance(&customized_all, &uniform);
    Ok(Frontier {
        customized_all,
        customized,
        uniform,
        dominance,
    })
}

pub fn pareto_frontier(
    markets: &[KeywordMarket],
    taus: &[f64],
    prior_means: &[f64],
    config: &SimulationConfig,
    normalization: Normalization,
) -> Result<Frontier, AnalysisError> {
    let sweep = prior_sweep(markets, prior_means, config)?;
    frontier_from_sweep(&sweep, taus, normalization)
}

/// Frontier invariant: no emitted point dominates another.
pub fn is_pareto_consistent(points: &[ParetoPoint]) -> bool {
    points
        .iter()
        .all(|p| !points.iter().any(|q| q.dominates(p)))
        && points
            .windows(2)
            .all(|w| w[0].revenue.mean <= w[1].revenue.mean && w[0].efficiency.mean >= w[1].efficiency.mean)
}
