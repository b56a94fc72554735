//! Recover valuations and conversion rates from auction logs.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::auction_log::LogRow;
use crate::defaults;
use crate::error::AnalysisError;
use crate::mechanism::{allocation_probability, BetaPrior, Contender, ExplorationPolicy};
use crate::stats::{self, CompensatedSum};

/// (keyword_id, ad_id)
pub type PairKey = (String, String);

fn key(r: &LogRow) -> PairKey {
    (r.keyword_id.clone(), r.ad_id.clone())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SupportCounts {
    pub participations: u64,
    pub wins: u64,
    pub conversions: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IpsDiagnostics {
    /// Converted wins whose estimated propensity was raised to the floor.
    pub clipped_rows: u64,
    pub weighted_rows: u64,
    pub floor: f64,
    pub mc_samples: usize,
    pub clipped_by_pair: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimatedPrimitives {
    pub valuation_hat: BTreeMap<PairKey, f64>,
    pub cvr_hat: BTreeMap<PairKey, f64>,
    pub cvr_hat_ips: BTreeMap<PairKey, f64>,
    pub support_counts: BTreeMap<PairKey, SupportCounts>,
    pub ips: IpsDiagnostics,
}

/// Restrict valuation averaging to rows whose posterior variance under the
/// data prior is at most `max_posterior_variance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceFilter {
    pub prior: BetaPrior,
    pub max_posterior_variance: f64,
}

fn posterior_variance(r: &LogRow, prior: BetaPrior) -> Option<f64> {
    let (a, b) = r.belief()?.posterior(prior);
    let s = a + b;
    Some(a * b / (s * s * (s + 1.0)))
}

/// Mean bid per (keyword, ad) over the rows it appears in.
pub fn estimate_valuations(rows: &[LogRow]) -> BTreeMap<PairKey, f64> {
    estimate_valuations_filtered(rows, None)
}

pub fn estimate_valuations_filtered(
    rows: &[LogRow],
    filter: Option<VarianceFilter>,
) -> BTreeMap<PairKey, f64> {
    let mut bids: BTreeMap<PairKey, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(f) = filter {
            match posterior_variance(r, f.prior) {
                Some(v) if v <= f.max_posterior_variance => {}
                _ => continue,
            }
        }
        bids.entry(key(r)).or_default().push(r.bid);
    }
    // sorting makes the mean independent of row order
    bids.into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            (k, stats::mean(v).unwrap())
        })
        .collect()
}

pub fn support_counts(rows: &[LogRow]) -> BTreeMap<PairKey, SupportCounts> {
    let mut out: BTreeMap<PairKey, SupportCounts> = BTreeMap::new();
    for r in rows {
        let c = out.entry(key(r)).or_default();
        c.participations += 1;
        if r.won() == Some(true) {
            c.wins += 1;
            c.conversions += (r.converted() == Some(true)) as u64;
        }
    }
    out
}

fn require_outcomes(rows: &[LogRow]) -> Result<(), AnalysisError> {
    match rows.iter().position(|r| r.won.is_none() || r.converted.is_none()) {
        Some(i) => Err(AnalysisError::UnusableLog(format!(
            "row {} has no won/converted outcome",
            i + 1
        ))),
        None => Ok(()),
    }
}

/// Conversions per win; pairs that never won are absent.
pub fn estimate_cvr_sample(rows: &[LogRow]) -> Result<BTreeMap<PairKey, f64>, AnalysisError> {
    require_outcomes(rows)?;
    Ok(support_counts(rows)
        .into_iter()
        .filter(|(_, c)| c.wins > 0)
        .map(|(k, c)| (k, c.conversions as f64 / c.wins as f64))
        .collect())
}

fn auction_seed(seed: u64, keyword: &str, replication: u32, t: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"auctionbandit/propensity/v1");
    h.update(seed.to_le_bytes());
    h.update(replication.to_le_bytes());
    h.update(t.to_le_bytes());
    h.update(keyword.as_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpsConfig {
    /// The policy that produced the log.
    pub policy: ExplorationPolicy,
    pub mc_samples: usize,
    pub floor: f64,
    pub seed: u64,
}

impl IpsConfig {
    pub fn new(policy: ExplorationPolicy) -> Self {
        Self {
            policy,
            mc_samples: defaults::MC_SAMPLES,
            floor: defaults::PROPENSITY_FLOOR,
            seed: 0,
        }
    }
}

/// Inverse-propensity estimate: for each (keyword, ad), the sum over its
/// converted wins of `1 / max(pi_hat, floor)`, divided by the number of
/// auctions the ad took part in. `pi_hat` is recomputed by Monte Carlo under
/// the logging policy from the logged bids and belief counts.
pub fn estimate_cvr_ips(
    rows: &[LogRow],
    config: &IpsConfig,
) -> Result<(BTreeMap<PairKey, f64>, IpsDiagnostics), AnalysisError> {
    require_outcomes(rows)?;
    if let Some(i) = rows.iter().position(|r| r.belief().is_none()) {
        return Err(AnalysisError::UnusableLog(format!(
            "row {} lacks impressions/conversions needed to recompute propensities",
            i + 1
        )));
    }
    if config.mc_samples == 0 || !(config.floor > 0.0) {
        return Err(AnalysisError::Invalid("mc_samples and floor must be positive".into()));
    }

    // ad index within each keyword = rank of its id, as in KeywordMarket
    let mut ads_by_kw: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in rows {
        ads_by_kw.entry(&r.keyword_id).or_default().push(&r.ad_id);
    }
    for v in ads_by_kw.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
    let rules: BTreeMap<&str, _> = ads_by_kw
        .iter()
        .map(|(k, ids)| (*k, config.policy.resolve(k, ids.iter().copied())))
        .collect();

    let mut auctions: BTreeMap<(&str, u32, u32), Vec<&LogRow>> = BTreeMap::new();
    for r in rows {
        auctions
            .entry((&r.keyword_id, r.replication.unwrap_or(0), r.auction_index))
            .or_default()
            .push(r);
    }
    let work: Vec<_> = auctions
        .into_iter()
        .filter(|(_, rs)| rs.iter().any(|r| r.converted() == Some(true)))
        .collect();

    let weights = work
        .par_iter()
        .map(|((kw, rep, t), rs)| {
            let ids = &ads_by_kw[kw];
            let mut rs = rs.clone();
            rs.sort_by(|a, b| a.ad_id.cmp(&b.ad_id));
            let contenders: Vec<Contender> = rs
                .iter()
                .map(|r| Contender {
                    ad: ids.binary_search(&r.ad_id.as_str()).unwrap(),
                    bid: r.bid,
                    belief: r.belief().unwrap(),
                })
                .collect();
            let winner = rs.iter().position(|r| r.converted() == Some(true)).unwrap();
            let mut rng = ChaCha8Rng::from_seed(auction_seed(config.seed, kw, *rep, *t));
            let p = allocation_probability(
                &contenders,
                &rules[kw],
                rs[0].reserve_score,
                t + 1,
                config.mc_samples,
                &mut rng,
            )
            .map_err(|e| AnalysisError::Invalid(format!("keyword `{kw}`, auction {t}: {e}")))?;
            let pi = p.per_contender[winner];
            let clipped = pi < config.floor;
            Ok(((kw.to_string(), rs[winner].ad_id.clone()), 1.0 / pi.max(config.floor), clipped))
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;

    let counts = support_counts(rows);
    let mut sums: BTreeMap<PairKey, CompensatedSum> = BTreeMap::new();
    let mut diag = IpsDiagnostics {
        floor: config.floor,
        mc_samples: config.mc_samples,
        ..IpsDiagnostics::default()
    };
    for (k, w, clipped) in weights {
        diag.weighted_rows += 1;
        if clipped {
            diag.clipped_rows += 1;
            *diag.clipped_by_pair.entry(format!("{}/{}", k.0, k.1)).or_default() += 1;
        }
        sums.entry(k).or_default().add(w);
    }
    let est = counts
        .into_iter()
        .map(|(k, c)| {
            let s = sums.get(&k).map_or(0.0, |s| s.value());
            (k, s / c.participations as f64)
        })
        .collect();
    Ok((est, diag))
}

/// All estimators at once; IPS only when a logging policy is supplied.
pub fn estimate_all(
    rows: &[LogRow],
    ips: Option<&IpsConfig>,
    filter: Option<VarianceFilter>,
) -> Result<EstimatedPrimitives, AnalysisError> {
    let mut out = EstimatedPrimitives {
        valuation_hat: estimate_valuations_filtered(rows, filter),
        cvr_hat: estimate_cvr_sample(rows)?,
        support_counts: support_counts(rows),
        ..EstimatedPrimitives::default()
    };
    if let Some(cfg) = ips {
        let (m, d) = estimate_cvr_ips(rows, cfg)?;
        out.cvr_hat_ips = m;
        out.ips = d;
    }
    Ok(out)
}

#[derive(Serialize)]
struct EstimateRow<'a> {
    keyword_id: &'a str,
    ad_id: &'a str,
    valuation_hat: Option<f64>,
    cvr_hat: Option<f64>,
    cvr_hat_ips: Option<f64>,
    participations: u64,
    wins: u64,
    conversions: u64,
    ips_clipped_rows: u64,
}

/// Estimates file, one row per (keyword, ad).
pub fn write_estimates<W: Write>(writer: W, est: &EstimatedPrimitives) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (k, c) in &est.support_counts {
        w.serialize(EstimateRow {
            keyword_id: &k.0,
            ad_id: &k.1,
            valuation_hat: est.valuation_hat.get(k).copied(),
            cvr_hat: est.cvr_hat.get(k).copied(),
            cvr_hat_ips: est.cvr_hat_ips.get(k).copied(),
            participations: c.participations,
            wins: c.wins,
            conversions: c.conversions,
            ips_clipped_rows: est
                .ips
                .clipped_by_pair
                .get(&format!("{}/{}", k.0, k.1))
                .copied()
                .unwrap_or(0),
        })
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kw: &str, t: u32, ad: &str, bid: f64, won: bool, conv: bool) -> LogRow {
        LogRow {
            keyword_id: kw.into(),
            auction_index: t,
            ad_id: ad.into(),
            bid,
            won: Some(won as u8),
            converted: Some(conv as u8),
            impressions: Some(0),
            conversions: Some(0),
            ..LogRow::default()
        }
    }

    #[test]
    fn valuation_is_mean_bid() {
        let rows = vec![row("k", 0, "a", 4.0, false, false), row("k", 1, "a", 6.0, false, false)];
        assert_eq!(estimate_valuations(&rows)[&("k".into(), "a".into())], 5.0);
        let constant: Vec<_> = (0..9).map(|t| row("k", t, "a", 7.0, false, false)).collect();
        assert_eq!(estimate_valuations(&constant)[&("k".into(), "a".into())], 7.0);
    }

    #[test]
    fn sample_cvr() {
        let mut rows: Vec<_> = (0..10).map(|t| row("k", t, "a", 1.0, true, t < 2)).collect();
        rows.push(row("k", 10, "b", 1.0, false, false));
        let m = estimate_cvr_sample(&rows).unwrap();
        assert_eq!(m[&("k".into(), "a".into())], 0.2);
        assert!(!m.contains_key(&("k".into(), "b".into())));
        let none: Vec<_> = (0..3).map(|t| row("k", t, "a", 1.0, true, false)).collect();
        assert_eq!(estimate_cvr_sample(&none).unwrap()[&("k".into(), "a".into())], 0.0);
    }

    #[test]
    fn missing_outcomes_unusable() {
        let mut r = row("k", 0, "a", 1.0, true, true);
        r.won = None;
        assert!(matches!(estimate_cvr_sample(&[r]), Err(AnalysisError::UnusableLog(_))));
        let mut r = row("k", 0, "a", 1.0, true, true);
        r.impressions = None;
        r.conversions = None;
        let cfg = IpsConfig::new(ExplorationPolicy::ts_uniform(BetaPrior::data()));
        assert!(matches!(estimate_cvr_ips(&[r], &cfg), Err(AnalysisError::UnusableLog(_))));
    }

    #[test]
    fn single_bidder_ips_equals_sample() {
        // UCB with positive history always clears reserve 0: pi = 1
        let rows: Vec<_> = (0..20)
            .map(|t| {
                let mut r = row("k", t, "a", 2.0, true, t % 4 == 0);
                r.impressions = Some(10 + t as u64);
                r.conversions = Some(5);
                r
            })
            .collect();
        let cfg = IpsConfig::new(ExplorationPolicy::Ucb { rho: 0.0 });
        let (ips, d) = estimate_cvr_ips(&rows, &cfg).unwrap();
        let s = estimate_cvr_sample(&rows).unwrap();
        let k = ("k".to_string(), "a".to_string());
        assert_eq!(ips[&k], s[&k]);
        assert_eq!(d.clipped_rows, 0);
    }

    #[test]
    fn variance_filter_drops_uncertain_rows() {
        let mut a = row("k", 0, "a", 10.0, false, false);
        a.impressions = Some(0);
        let mut b = row("k", 1, "a", 2.0, false, false);
        b.impressions = Some(100_000);
        b.conversions = Some(1000);
        let f = VarianceFilter {
            prior: BetaPrior::data(),
            max_posterior_variance: 1e-4,
        };
        assert_eq!(
            estimate_valuations_filtered(&[a, b], Some(f))[&("k".into(), "a".into())],
            2.0
        );
    }
}
