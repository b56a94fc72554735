//! Market thickness: mean ratio of the second-highest to the highest
//! combined score, over auctions with at least two scored bidders.

use std::collections::BTreeMap;

use serde::Serialize;

use super::OutcomeReport;
use crate::auction_log::LogRow;
use crate::defaults;
use crate::error::AnalysisError;
use crate::sim::Trajectory;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThicknessClass {
    Thin,
    Medium,
    Thick,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ThicknessReport {
    pub thickness: BTreeMap<String, f64>,
    pub class: BTreeMap<String, ThicknessClass>,
    /// Keywords without any two-bidder auction.
    pub excluded: Vec<String>,
    pub thin_cut: f64,
    pub thick_cut: f64,
}

impl ThicknessReport {
    pub fn keywords_in(&self, c: ThicknessClass) -> impl Iterator<Item = &str> {
        self.class
            .iter()
            .filter(move |(_, &k)| k == c)
            .map(|(id, _)| id.as_str())
    }

    /// Interquartile range of the thickness values.
    pub fn iqr(&self) -> f64 {
        self.thick_cut - self.thin_cut
    }
}

/// Classify given per-keyword (sum, count) pairs.
pub fn thickness_from_ratios(ratios: BTreeMap<String, (f64, u64)>) -> ThicknessReport {
    let mut report = ThicknessReport::default();
    for (kw, (sum, n)) in ratios {
        if n == 0 {
            log::warn!("keyword `{kw}` has no auction with two bidders; thickness undefined");
            report.excluded.push(kw);
        } else {
            report.thickness.insert(kw, sum / n as f64);
        }
    }
    let values: Vec<f64> = report.thickness.values().copied().collect();
    let (Some(lo), Some(hi)) = (
        stats::quantile(&values, defaults::THIN_QUANTILE),
        stats::quantile(&values, defaults::THICK_QUANTILE),
    ) else {
        return report;
    };
    report.thin_cut = lo;
    report.thick_cut = hi;
    report.class = report
        .thickness
        .iter()
        .map(|(k, &t)| {
            let c = if t <= lo {
                ThicknessClass::Thin
            } else if t >= hi {
                ThicknessClass::Thick
            } else {
                ThicknessClass::Medium
            };
            (k.clone(), c)
        })
        .collect();
    report
}

/// Thickness pooled over all replications of each keyword.
pub fn compute_thickness(trajectories: &[Trajectory]) -> ThicknessReport {
    let mut acc: BTreeMap<String, (stats::CompensatedSum, u64)> = BTreeMap::new();
    for t in trajectories {
        let e = acc.entry(t.keyword_id.clone()).or_default();
        e.0.add(t.summary.thickness_sum);
        e.1 += t.summary.thickness_auctions as u64;
    }
    thickness_from_ratios(acc.into_iter().map(|(k, (s, n))| (k, (s.value(), n))).collect())
}

/// Thickness from the pooled ratios stored in an outcome report.
pub fn thickness_from_outcomes(report: &OutcomeReport) -> ThicknessReport {
    thickness_from_ratios(
        report
            .keywords
            .iter()
            .map(|k| (k.keyword_id.clone().unwrap_or_default(), k.thickness_ratio))
            .collect(),
    )
}

/// Thickness from a log that carries `combined_score`.
pub fn compute_thickness_from_log(rows: &[LogRow]) -> Result<ThicknessReport, AnalysisError> {
    let mut auctions: BTreeMap<(&str, u32, u32), Vec<f64>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let s = r.combined_score.ok_or_else(|| {
            AnalysisError::InsufficientDetail(format!("row {} has no combined_score", i + 1))
        })?;
        auctions
            .entry((&r.keyword_id, r.replication.unwrap_or(0), r.auction_index))
            .or_default()
            .push(s);
    }
    let mut acc: BTreeMap<String, (stats::CompensatedSum, u64)> = BTreeMap::new();
    for ((kw, _, _), mut scores) in auctions {
        let e = acc.entry(kw.to_string()).or_default();
        if scores.len() < 2 {
            continue;
        }
        scores.sort_by(|a, b| b.total_cmp(a));
        if scores[0] > 0.0 {
            e.0.add(scores[1] / scores[0]);
            e.1 += 1;
        }
    }
    Ok(thickness_from_ratios(
        acc.into_iter().map(|(k, (s, n))| (k, (s.value(), n))).collect(),
    ))
}
