//! Market outcomes and the experiments built on them, plus their CSV tables.

mod bias;
mod frontier;
mod outcomes;
mod thickness;

use std::io::Write;

use serde::Serialize;

pub use bias::{bias_series, bias_series_by_replication, BiasSeries};
pub use frontier::{
    annotate_dominance, customized_from_sweep, frontier_from_sweep, is_pareto_consistent,
    optimize_customized_priors, pareto_filter, pareto_frontier, prior_sweep, DominanceAnnotation,
    Frontier, Normalization, ParetoPoint, PriorAssignment, SweepPoint,
};
pub use outcomes::{compute_outcomes, Estimate, MarketOutcome, OutcomeReport};
pub use thickness::{
    compute_thickness, compute_thickness_from_log, thickness_from_outcomes, thickness_from_ratios, ThicknessClass,
    ThicknessReport,
};

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

fn write_rows<W: Write, T: Serialize>(writer: W, rows: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()
}

#[derive(Serialize)]
struct OutcomeRow<'a> {
    keyword_id: &'a str,
    replications: usize,
    auctions: u64,
    revenue: f64,
    revenue_se: f64,
    efficiency: f64,
    efficiency_se: f64,
    entrant_win: f64,
    entrant_second: f64,
    entrant_none: f64,
    efficient_allocation_rate: f64,
}

fn outcome_row(o: &MarketOutcome) -> OutcomeRow<'_> {
    OutcomeRow {
        keyword_id: o.keyword_id.as_deref().unwrap_or("*"),
        replications: o.replications,
        auctions: o.auctions,
        revenue: o.revenue.mean,
        revenue_se: o.revenue.se,
        efficiency: o.efficiency.mean,
        efficiency_se: o.efficiency.se,
        entrant_win: o.decomposition.entrant_win,
        entrant_second: o.decomposition.entrant_second,
        entrant_none: o.decomposition.entrant_none,
        efficient_allocation_rate: o.efficient_allocation_rate,
    }
}

/// Columns: keyword_id (`*` for the aggregate, last), replications, auctions,
/// revenue, revenue_se, efficiency, efficiency_se, entrant_win,
/// entrant_second, entrant_none, efficient_allocation_rate.
pub fn write_outcomes<W: Write>(writer: W, report: &OutcomeReport) -> std::io::Result<()> {
    write_rows(
        writer,
        report
            .keywords
            .iter()
            .chain(std::iter::once(&report.aggregate))
            .map(outcome_row),
    )
}

#[derive(Serialize)]
struct SweepRow {
    prior_mean: f64,
    beta: f64,
    revenue: f64,
    revenue_se: f64,
    efficiency: f64,
    efficiency_se: f64,
    entrant_win: f64,
    entrant_second: f64,
    entrant_none: f64,
    efficient_allocation_rate: f64,
    outside_validity_region: bool,
}

/// One row per grid point with aggregate metrics.
pub fn write_sweep<W: Write>(writer: W, sweep: &[SweepPoint]) -> std::io::Result<()> {
    write_rows(
        writer,
        sweep.iter().map(|p| {
            let a = &p.outcome.aggregate;
            SweepRow {
                prior_mean: p.prior_mean,
                beta: p.beta,
                revenue: a.revenue.mean,
                revenue_se: a.revenue.se,
                efficiency: a.efficiency.mean,
                efficiency_se: a.efficiency.se,
                entrant_win: a.decomposition.entrant_win,
                entrant_second: a.decomposition.entrant_second,
                entrant_none: a.decomposition.entrant_none,
                efficient_allocation_rate: a.efficient_allocation_rate,
                outside_validity_region: p.outside_validity_region,
            }
        }),
    )
}

#[derive(Serialize)]
struct ThicknessRow<'a> {
    keyword_id: &'a str,
    thickness: f64,
    class: ThicknessClass,
}

pub fn write_thickness<W: Write>(writer: W, report: &ThicknessReport) -> std::io::Result<()> {
    write_rows(
        writer,
        report.thickness.iter().map(|(k, &t)| ThicknessRow {
            keyword_id: k,
            thickness: t,
            class: report.class[k],
        }),
    )
}

#[derive(Serialize)]
struct FrontierRow<'a> {
    curve: &'a str,
    tau: Option<f64>,
    prior_mean: Option<f64>,
    revenue: f64,
    revenue_se: f64,
    efficiency: f64,
    efficiency_se: f64,
}

/// Columns: curve (`customized` or `uniform`), tau, prior_mean (uniform
/// only), revenue, revenue_se, efficiency, efficiency_se.
pub fn write_frontier<W: Write>(writer: W, curve: &str, points: &[ParetoPoint]) -> std::io::Result<()> {
    write_rows(
        writer,
        points.iter().map(|p| FrontierRow {
            curve,
            tau: p.tau,
            prior_mean: match &p.prior_assignment {
                PriorAssignment::Uniform { prior_mean } => Some(*prior_mean),
                PriorAssignment::PerKeyword { .. } => None,
            },
            revenue: p.revenue.mean,
            revenue_se: p.revenue.se,
            efficiency: p.efficiency.mean,
            efficiency_se: p.efficiency.se,
        }),
    )
}

/// Per-keyword prior means chosen at each tau: tau, keyword_id, prior_mean.
pub fn write_assignments<W: Write>(writer: W, points: &[ParetoPoint]) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        tau: Option<f64>,
        keyword_id: &'a str,
        prior_mean: f64,
    }
    let mut rows = Vec::new();
    for p in points {
        if let PriorAssignment::PerKeyword { prior_means } = &p.prior_assignment {
            for (k, &m) in prior_means {
                rows.push(Row {
                    tau: p.tau,
                    keyword_id: k,
                    prior_mean: m,
                });
            }
        }
    }
    write_rows(writer, rows)
}

pub fn write_dominance<W: Write>(writer: W, ann: &[DominanceAnnotation]) -> std::io::Result<()> {
    write_rows(writer, ann)
}

/// Columns: t, winner_bias, nonwinner_bias (empty where undefined).
pub fn write_bias<W: Write>(writer: W, series: &BiasSeries) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Row {
        t: usize,
        winner_bias: Option<f64>,
        nonwinner_bias: Option<f64>,
    }
    write_rows(
        writer,
        (0..series.len()).map(|t| Row {
            t,
            winner_bias: series.winner_bias[t],
            nonwinner_bias: series.nonwinner_bias[t],
        }),
    )
}
