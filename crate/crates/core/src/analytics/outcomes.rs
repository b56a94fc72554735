//! Revenue, efficiency and their decomposition, per keyword and in aggregate.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::AnalysisError;
use crate::sim::{RevenueDecomposition, Trajectory};
use crate::stats::{self, mean_se};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let (mean, se) = mean_se(xs);
        Self { mean, se }
    }
}

/// Metrics for one keyword, or for all keywords summed per replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketOutcome {
    /// `None` for the aggregate.
    pub keyword_id: Option<String>,
    pub replications: usize,
    pub auctions: u64,
    pub revenue: Estimate,
    pub efficiency: Estimate,
    /// Mean over replications of each bucket.
    pub decomposition: RevenueDecomposition,
    pub efficient_allocation_rate: f64,
    /// Pooled second/highest score ratios: (sum, auctions).
    pub thickness_ratio: (f64, u64),
    pub revenue_by_rep: Vec<f64>,
    pub efficiency_by_rep: Vec<f64>,
}

impl MarketOutcome {
    pub fn mean_revenue(&self) -> f64 {
        self.revenue.mean
    }

    pub fn mean_efficiency(&self) -> f64 {
        self.efficiency.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeReport {
    pub keywords: Vec<MarketOutcome>,
    pub aggregate: MarketOutcome,
}

impl OutcomeReport {
    pub fn keyword(&self, id: &str) -> Option<&MarketOutcome> {
        self.keywords
            .binary_search_by(|k| k.keyword_id.as_deref().unwrap().cmp(id))
            .ok()
            .map(|i| &self.keywords[i])
    }

    /// Per-replication totals over a subset of keywords.
    pub fn subset_by_rep<'a>(
        &self,
        keywords: impl IntoIterator<Item = &'a str>,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = self.aggregate.replications;
        let mut rev = vec![stats::CompensatedSum::new(); n];
        let mut eff = vec![stats::CompensatedSum::new(); n];
        for id in keywords {
            if let Some(k) = self.keyword(id) {
                for r in 0..n {
                    rev[r].add(k.revenue_by_rep[r]);
                    eff[r].add(k.efficiency_by_rep[r]);
                }
            }
        }
        (
            rev.iter().map(|s| s.value()).collect(),
            eff.iter().map(|s| s.value()).collect(),
        )
    }
}

fn summarize(
    keyword_id: Option<String>,
    auctions: u64,
    rev: Vec<f64>,
    eff: Vec<f64>,
    dec: &[RevenueDecomposition],
    efficient: u64,
    thickness_ratio: (f64, u64),
) -> MarketOutcome {
    let n = rev.len();
    let decomposition = RevenueDecomposition {
        entrant_win: stats::sum(dec.iter().map(|d| d.entrant_win)) / n as f64,
        entrant_second: stats::sum(dec.iter().map(|d| d.entrant_second)) / n as f64,
        entrant_none: stats::sum(dec.iter().map(|d| d.entrant_none)) / n as f64,
    };
    MarketOutcome {
        keyword_id,
        replications: n,
        auctions,
        revenue: Estimate::from_samples(&rev),
        efficiency: Estimate::from_samples(&eff),
        decomposition,
        efficient_allocation_rate: if auctions == 0 {
            0.0
        } else {
            efficient as f64 / (auctions as f64 * n as f64)
        },
        thickness_ratio,
        revenue_by_rep: rev,
        efficiency_by_rep: eff,
    }
}

/// Means and standard errors over replications. Every keyword must appear
/// in the same set of replications.
pub fn compute_outcomes(trajectories: &[Trajectory]) -> Result<OutcomeReport, AnalysisError> {
    if trajectories.is_empty() {
        return Err(AnalysisError::Invalid("no trajectories".into()));
    }
    let mut by_kw: BTreeMap<&str, BTreeMap<u32, &Trajectory>> = BTreeMap::new();
    for t in trajectories {
        if by_kw
            .entry(&t.keyword_id)
            .or_default()
            .insert(t.replication, t)
            .is_some()
        {
            return Err(AnalysisError::Invalid(format!(
                "keyword `{}` replication {} appears twice",
                t.keyword_id, t.replication
            )));
        }
    }
    let reps: Vec<u32> = by_kw.values().next().unwrap().keys().copied().collect();
    let n = reps.len();
    let mut agg_eff = vec![stats::CompensatedSum::new(); n];
    let mut agg_dec = vec![[stats::CompensatedSum::new(); 3]; n];
    let mut agg_auctions = 0u64;
    let mut agg_thick = stats::CompensatedSum::new();
    let mut agg_thick_n = 0u64;
    let mut agg_efficient = 0u64;

    let mut keywords = Vec::with_capacity(by_kw.len());
    for (kw, trs) in &by_kw {
        if trs.keys().copied().ne(reps.iter().copied()) {
            return Err(AnalysisError::Invalid(format!(
                "keyword `{kw}` has a different replication set"
            )));
        }
        let trs: Vec<&Trajectory> = trs.values().copied().collect();
        let rev: Vec<f64> = trs.iter().map(|t| t.summary.revenue).collect();
        let eff: Vec<f64> = trs.iter().map(|t| t.summary.efficiency).collect();
        let dec: Vec<RevenueDecomposition> = trs.iter().map(|t| t.summary.decomposition).collect();
        let efficient: u64 = trs.iter().map(|t| t.summary.efficient_allocations as u64).sum();
        let auctions = trs[0].summary.auctions as u64;
        let thickness_ratio = (
            stats::sum(trs.iter().map(|t| t.summary.thickness_sum)),
            trs.iter().map(|t| t.summary.thickness_auctions as u64).sum(),
        );
        agg_thick.add(thickness_ratio.0);
        agg_thick_n += thickness_ratio.1;
        for r in 0..n {
            agg_eff[r].add(eff[r]);
            agg_dec[r][0].add(dec[r].entrant_win);
            agg_dec[r][1].add(dec[r].entrant_second);
            agg_dec[r][2].add(dec[r].entrant_none);
        }
        agg_auctions += auctions;
        agg_efficient += efficient;
        keywords.push(summarize(
            Some(kw.to_string()),
            auctions,
            rev,
            eff,
            &dec,
            efficient,
            thickness_ratio,
        ));
    }
    let agg_dec: Vec<RevenueDecomposition> = agg_dec
        .iter()
        .map(|d| RevenueDecomposition {
            entrant_win: d[0].value(),
            entrant_second: d[1].value(),
            entrant_none: d[2].value(),
        })
        .collect();
    // as per keyword, aggregate revenue is the sum of its buckets
    let aggregate = summarize(
        None,
        agg_auctions,
        agg_dec.iter().map(|d| d.total()).collect(),
        agg_eff.iter().map(|s| s.value()).collect(),
        &agg_dec,
        agg_efficient,
        (agg_thick.value(), agg_thick_n),
    );
    Ok(OutcomeReport {
        keywords,
        aggregate,
    })
}
