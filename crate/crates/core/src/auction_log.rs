//! CSV auction logs: one row per (keyword, auction, bidder).
//!
//! Required columns: `keyword_id, auction_index, ad_id, bid, entrant,
//! reserve_score`. Market-definition columns (`true_cvr, entry_auction_index,
//! horizon, auctions_per_day, daily_cap, impression_cap`) and the belief
//! columns (`impressions, conversions`, counted before the auction) are
//! optional. Simulated logs add `replication, quality_score, combined_score,
//! won, converted, price_per_conversion, revenue`. Empty cells mean absent.
//! Floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::MarketError;
use crate::market::{AdvertiserProfile, KeywordMarket};
use crate::mechanism::BeliefState;
use crate::sim::Trajectory;

pub const REQUIRED_COLUMNS: [&str; 6] = [
    "keyword_id",
    "auction_index",
    "ad_id",
    "bid",
    "entrant",
    "reserve_score",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LogRow {
    pub keyword_id: String,
    pub auction_index: u32,
    pub ad_id: String,
    pub bid: f64,
    /// 1 for entrants, 0 for incumbents.
    pub entrant: u8,
    pub reserve_score: f64,
    #[serde(default)]
    pub true_cvr: Option<f64>,
    #[serde(default)]
    pub entry_auction_index: Option<u32>,
    #[serde(default)]
    pub horizon: Option<u32>,
    #[serde(default)]
    pub auctions_per_day: Option<u32>,
    #[serde(default)]
    pub daily_cap: Option<f64>,
    #[serde(default)]
    pub impression_cap: Option<u64>,
    #[serde(default)]
    pub impressions: Option<u64>,
    #[serde(default)]
    pub conversions: Option<u64>,
    #[serde(default)]
    pub replication: Option<u32>,
    #[serde(default)]
    pub quality_score: Option<f64>,
    #[serde(default)]
    pub combined_score: Option<f64>,
    #[serde(default)]
    pub won: Option<u8>,
    #[serde(default)]
    pub converted: Option<u8>,
    #[serde(default)]
    pub price_per_conversion: Option<f64>,
    #[serde(default)]
    pub revenue: Option<f64>,
}

impl LogRow {
    pub fn belief(&self) -> Option<BeliefState> {
        Some(BeliefState {
            impressions: self.impressions?,
            conversions: self.conversions?,
        })
    }

    pub fn won(&self) -> Option<bool> {
        self.won.map(|w| w != 0)
    }

    pub fn converted(&self) -> Option<bool> {
        self.converted.map(|c| c != 0)
    }
}

fn parse_err(row: u64, reason: impl Into<String>) -> MarketError {
    MarketError::Parse {
        row,
        reason: reason.into(),
    }
}

/// Parse a log. Row numbers in errors are 1-based data rows (the header is row 0).
pub fn read_log<R: Read>(reader: R) -> Result<Vec<LogRow>, MarketError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(0, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    for col in REQUIRED_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(parse_err(0, format!("missing required column `{col}`")));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<LogRow>().enumerate() {
        let row = i as u64 + 1;
        let r = rec.map_err(|e| parse_err(row, e.to_string()))?;
        if r.keyword_id.is_empty() || r.ad_id.is_empty() {
            return Err(parse_err(row, "empty keyword_id or ad_id"));
        }
        if !r.bid.is_finite() || r.bid < 0.0 {
            return Err(parse_err(row, format!("bid {} is not a finite nonnegative number", r.bid)));
        }
        if r.entrant > 1 {
            return Err(parse_err(row, "entrant must be 0 or 1"));
        }
        if r.impressions.is_some() != r.conversions.is_some() {
            return Err(parse_err(row, "impressions and conversions must be given together"));
        }
        rows.push(r);
    }
    Ok(rows)
}

pub fn read_log_file(path: &Path) -> Result<Vec<LogRow>, MarketError> {
    read_log(std::fs::File::open(path)?)
}

pub fn write_log<W: Write>(writer: W, rows: &[LogRow]) -> Result<(), MarketError> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(log_header())
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn log_header() -> Vec<&'static str> {
    vec![
        "keyword_id",
        "auction_index",
        "ad_id",
        "bid",
        "entrant",
        "reserve_score",
        "true_cvr",
        "entry_auction_index",
        "horizon",
        "auctions_per_day",
        "daily_cap",
        "impression_cap",
        "impressions",
        "conversions",
        "replication",
        "quality_score",
        "combined_score",
        "won",
        "converted",
        "price_per_conversion",
        "revenue",
    ]
}

fn definition_row(m: &KeywordMarket, t: u32, a: &AdvertiserProfile) -> LogRow {
    LogRow {
        keyword_id: m.keyword_id().to_string(),
        auction_index: t,
        ad_id: a.ad_id.clone(),
        bid: a.valuation,
        entrant: a.entrant as u8,
        reserve_score: m.reserve_score(),
        true_cvr: Some(a.true_cvr),
        entry_auction_index: Some(a.entry_auction_index),
        horizon: Some(m.horizon()),
        auctions_per_day: Some(m.auctions_per_day()),
        daily_cap: a.daily_cap,
        impression_cap: a.impression_cap,
        impressions: Some(a.history.impressions),
        conversions: Some(a.history.conversions),
        ..LogRow::default()
    }
}

/// Market definition rows; the belief columns carry each ad's starting history.
pub fn market_rows(markets: &[KeywordMarket]) -> Vec<LogRow> {
    let mut rows = Vec::new();
    for m in markets {
        for t in 0..m.horizon() {
            for &a in m.participants(t) {
                rows.push(definition_row(m, t, m.ad(a as usize)));
            }
        }
    }
    rows
}

pub fn write_market<W: Write>(writer: W, markets: &[KeywordMarket]) -> Result<(), MarketError> {
    write_log(writer, &market_rows(markets))
}

/// Per-auction rows of simulated trajectories (belief columns hold the state
/// before each auction). Trajectories without records are skipped.
pub fn trajectory_rows(markets: &[KeywordMarket], trajectories: &[Trajectory]) -> Vec<LogRow> {
    let index: BTreeMap<&str, &KeywordMarket> =
        markets.iter().map(|m| (m.keyword_id(), m)).collect();
    let mut rows = Vec::new();
    for tr in trajectories {
        let (Some(m), Some(records)) = (index.get(tr.keyword_id.as_str()), &tr.records) else {
            continue;
        };
        for rec in records {
            for b in &rec.bids {
                let a = m.ad(b.ad);
                let won = rec.result.winner == Some(b.ad);
                let mut row = definition_row(m, rec.t, a);
                row.bid = b.bid;
                row.impressions = Some(b.belief.impressions);
                row.conversions = Some(b.belief.conversions);
                row.replication = Some(tr.replication);
                row.quality_score = Some(b.quality_score);
                row.combined_score = Some(b.combined_score);
                row.won = Some(won as u8);
                row.converted = Some((won && rec.result.converted) as u8);
                row.price_per_conversion = Some(if won { rec.result.price_per_conversion } else { 0.0 });
                row.revenue = Some(if won { rec.result.revenue } else { 0.0 });
                rows.push(row);
            }
        }
    }
    rows
}

pub fn write_trajectory_log<W: Write>(
    writer: W,
    markets: &[KeywordMarket],
    trajectories: &[Trajectory],
) -> Result<(), MarketError> {
    write_log(writer, &trajectory_rows(markets, trajectories))
}

pub fn load_market<R: Read>(reader: R) -> Result<Vec<KeywordMarket>, MarketError> {
    markets_from_rows(&read_log(reader)?)
}

pub fn load_market_file(path: &Path) -> Result<Vec<KeywordMarket>, MarketError> {
    load_market(std::fs::File::open(path)?)
}

struct AdAcc {
    first_row: u64,
    first_t: u32,
    bids: Vec<f64>,
    entrant: bool,
    true_cvr: Option<f64>,
    entry: Option<u32>,
    daily_cap: Option<f64>,
    impression_cap: Option<u64>,
    history: Option<BeliefState>,
    wins: u64,
    conversions: u64,
}

#[derive(Default)]
struct KwAcc {
    reserve: Option<f64>,
    horizon: Option<u32>,
    per_day: Option<u32>,
    ads: BTreeMap<String, AdAcc>,
    auctions: BTreeMap<u32, Vec<String>>,
}

fn agree<T: PartialEq + Copy + std::fmt::Display>(
    slot: &mut Option<T>,
    v: Option<T>,
    row: u64,
    what: &str,
) -> Result<(), MarketError> {
    if let Some(v) = v {
        match *slot {
            Some(old) if old != v => {
                return Err(parse_err(row, format!("{what} {v} conflicts with earlier value {old}")))
            }
            _ => *slot = Some(v),
        }
    }
    Ok(())
}

/// Build markets from parsed rows. Only the first replication present in the
/// log is used. Valuations are the ads' mean bids; a missing `true_cvr` falls
/// back to the ad's observed conversions per win, and an ad with neither is a
/// referential error.
pub fn markets_from_rows(rows: &[LogRow]) -> Result<Vec<KeywordMarket>, MarketError> {
    let first_rep = rows.iter().filter_map(|r| r.replication).min();
    let mut kws: BTreeMap<String, KwAcc> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        if r.replication.is_some() && r.replication != first_rep {
            continue;
        }
        let row = i as u64 + 1;
        let kw = kws.entry(r.keyword_id.clone()).or_default();
        agree(&mut kw.reserve, Some(r.reserve_score), row, "reserve_score")?;
        agree(&mut kw.horizon, r.horizon, row, "horizon")?;
        agree(&mut kw.per_day, r.auctions_per_day, row, "auctions_per_day")?;
        let ad = kw.ads.entry(r.ad_id.clone()).or_insert_with(|| AdAcc {
            first_row: row,
            first_t: u32::MAX,
            bids: Vec::new(),
            entrant: r.entrant == 1,
            true_cvr: None,
            entry: None,
            daily_cap: None,
            impression_cap: None,
            history: None,
            wins: 0,
            conversions: 0,
        });
        if ad.entrant != (r.entrant == 1) {
            return Err(parse_err(row, format!("entrant flag of `{}` changes", r.ad_id)));
        }
        agree(&mut ad.true_cvr, r.true_cvr, row, "true_cvr")?;
        agree(&mut ad.entry, r.entry_auction_index, row, "entry_auction_index")?;
        agree(&mut ad.daily_cap, r.daily_cap, row, "daily_cap")?;
        agree(&mut ad.impression_cap, r.impression_cap, row, "impression_cap")?;
        // the belief before an ad's first auction is its starting history
        if r.auction_index < ad.first_t || (r.auction_index == ad.first_t && ad.history.is_none()) {
            ad.first_t = r.auction_index;
            ad.history = r.belief();
        }
        ad.bids.push(r.bid);
        if r.won() == Some(true) {
            ad.wins += 1;
            ad.conversions += (r.converted() == Some(true)) as u64;
        }
        kw.auctions.entry(r.auction_index).or_default().push(r.ad_id.clone());
    }

    let mut markets = Vec::with_capacity(kws.len());
    for (kid, kw) in kws {
        let max_t = kw.auctions.keys().next_back().copied().unwrap_or(0);
        let horizon = kw.horizon.unwrap_or(max_t + 1).max(max_t + 1);
        let ids: Vec<&String> = kw.ads.keys().collect();
        let mut advertisers = Vec::with_capacity(ids.len());
        for (id, a) in &kw.ads {
            let true_cvr = match a.true_cvr {
                Some(c) => c,
                None if a.wins > 0 => a.conversions as f64 / a.wins as f64,
                None => {
                    return Err(MarketError::Referential {
                        keyword: kid.clone(),
                        ad: id.clone(),
                        reason: format!(
                            "no true_cvr and no observed wins (first seen at row {})",
                            a.first_row
                        ),
                    })
                }
            };
            let valuation = crate::stats::mean(a.bids.iter().copied()).unwrap_or(0.0);
            let mut p = AdvertiserProfile::new(id.clone(), valuation, true_cvr);
            p.entrant = a.entrant;
            p.entry_auction_index = a
                .entry
                .unwrap_or(if a.entrant { a.first_t } else { 0 });
            p.daily_cap = a.daily_cap;
            p.impression_cap = a.impression_cap;
            if let Some(h) = a.history {
                p.history = h;
            }
            advertisers.push(p);
        }
        let mut participation = vec![Vec::new(); horizon as usize];
        for (t, list) in kw.auctions {
            participation[t as usize] = list
                .iter()
                .map(|id| ids.binary_search(&id).unwrap())
                .collect();
        }
        markets.push(KeywordMarket::new(
            kid,
            advertisers,
            kw.reserve.unwrap_or(0.0),
            kw.per_day,
            participation,
        )?);
    }
    Ok(markets)
}
