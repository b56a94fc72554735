//! Winner and non-winner bias: quality score minus true conversion rate.

use serde::Serialize;

use crate::error::AnalysisError;
use crate::market::KeywordMarket;
use crate::sim::Trajectory;
use crate::stats;

/// Per auction index, averaged over keyword trajectories. `None` where no
/// trajectory has a winner (or a non-winner) at that index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasSeries {
    pub winner_bias: Vec<Option<f64>>,
    pub nonwinner_bias: Vec<Option<f64>>,
}

impl BiasSeries {
    pub fn len(&self) -> usize {
        self.winner_bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.winner_bias.is_empty()
    }

    fn tail_mean(xs: &[Option<f64>]) -> Option<f64> {
        let start = xs.len() - xs.len() / 4;
        stats::mean(xs[start..].iter().flatten().copied())
    }

    /// Means over the last quarter of the horizon, skipping missing entries.
    pub fn final_quarter_means(&self) -> (Option<f64>, Option<f64>) {
        (
            Self::tail_mean(&self.winner_bias),
            Self::tail_mean(&self.nonwinner_bias),
        )
    }
}

/// Series pooled over all given trajectories.
pub fn bias_series(
    markets: &[KeywordMarket],
    trajectories: &[Trajectory],
) -> Result<BiasSeries, AnalysisError> {
    let refs: Vec<&Trajectory> = trajectories.iter().collect();
    series(markets, &refs)
}

/// One series per replication, in ascending replication order.
pub fn bias_series_by_replication(
    markets: &[KeywordMarket],
    trajectories: &[Trajectory],
) -> Result<Vec<BiasSeries>, AnalysisError> {
    let mut reps: Vec<u32> = trajectories.iter().map(|t| t.replication).collect();
    reps.sort_unstable();
    reps.dedup();
    reps.iter()
        .map(|&r| {
            let group: Vec<&Trajectory> =
                trajectories.iter().filter(|t| t.replication == r).collect();
            series(markets, &group)
        })
        .collect()
}

fn series(markets: &[KeywordMarket], trajectories: &[&Trajectory]) -> Result<BiasSeries, AnalysisError> {
    let horizon = trajectories
        .iter()
        .map(|t| t.summary.auctions as usize)
        .max()
        .unwrap_or(0);
    let mut w = vec![(stats::CompensatedSum::new(), 0u64); horizon];
    let mut nw = vec![(stats::CompensatedSum::new(), 0u64); horizon];
    for tr in trajectories {
        let records = tr.records.as_ref().ok_or_else(|| {
            AnalysisError::InsufficientDetail(format!(
                "keyword `{}` was simulated without per-auction records",
                tr.keyword_id
            ))
        })?;
        let m = markets
            .iter()
            .find(|m| m.keyword_id() == tr.keyword_id)
            .ok_or_else(|| AnalysisError::Invalid(format!("unknown keyword `{}`", tr.keyword_id)))?;
        for rec in records {
            let t = rec.t as usize;
            let mut others = stats::CompensatedSum::new();
            let mut n_others = 0u32;
            for b in &rec.bids {
                let gap = b.quality_score - m.ad(b.ad).true_cvr;
                if rec.result.winner == Some(b.ad) {
                    w[t].0.add(gap);
                    w[t].1 += 1;
                } else {
                    others.add(gap);
                    n_others += 1;
                }
            }
            if n_others > 0 {
                nw[t].0.add(others.value() / n_others as f64);
                nw[t].1 += 1;
            }
        }
    }
    let finish = |v: Vec<(stats::CompensatedSum, u64)>| {
        v.into_iter()
            .map(|(s, n)| (n > 0).then(|| s.value() / n as f64))
            .collect()
    };
    Ok(BiasSeries {
        winner_bias: finish(w),
        nonwinner_bias: finish(nw),
    })
}
