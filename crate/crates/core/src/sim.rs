//! Counterfactual trajectory simulation.
//!
//! For each auction `t` of a keyword: every eligible participant gets a
//! quality score (in ascending ad order; TS draws consume the rng, UCB does
//! not), bids equal valuations, the second-price rule with the reserve
//! pseudo-bidder picks a winner, and, if allocated, one uniform `u` is drawn
//! and the winner converts iff `u < mu`. Only the winner's belief changes.
//!
//! Seeds: every (keyword, replication) pair gets its own ChaCha8 stream seeded
//! with `sha256("auctionbandit/trajectory/v1" | master_seed | replication |
//! keyword_id)` (integers little-endian). Output is therefore independent of
//! scheduling and worker count.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::defaults;
use crate::error::{MechanismError, SimError};
use crate::market::KeywordMarket;
use crate::mechanism::{
    allocate, payment, update_belief, BeliefState, ExplorationPolicy, PriceSetter, ScoreRule,
    ScoredBid,
};
use crate::stats::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// Every ad starts with zero history.
    Cold,
    /// Ads start from the history recorded in their profile.
    #[default]
    History,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordLevel {
    #[default]
    Aggregate,
    PerAuction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub policy: ExplorationPolicy,
    pub replications: u32,
    pub master_seed: u64,
    #[serde(default)]
    pub budget_caps_enabled: bool,
    #[serde(default)]
    pub warm_start: WarmStart,
    #[serde(default)]
    pub record_level: RecordLevel,
    /// Permit policies outside the validity region; results are tagged.
    #[serde(default)]
    pub allow_exploratory: bool,
    /// Apply per-ad `impression_cap`s from the market profiles.
    #[serde(default)]
    pub impression_caps_enabled: bool,
}

impl SimulationConfig {
    pub fn new(policy: ExplorationPolicy, replications: u32, master_seed: u64) -> Self {
        Self {
            policy,
            replications,
            master_seed,
            budget_caps_enabled: false,
            warm_start: WarmStart::History,
            record_level: RecordLevel::Aggregate,
            allow_exploratory: false,
            impression_caps_enabled: false,
        }
    }

    pub fn per_auction(mut self) -> Self {
        self.record_level = RecordLevel::PerAuction;
        self
    }

    pub fn with_caps(mut self) -> Self {
        self.budget_caps_enabled = true;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.replications == 0 {
            return Err(SimError::Config("replications must be >= 1".into()));
        }
        self.policy
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        if let ExplorationPolicy::Ts(p) = &self.policy {
            let m = p.max_mean();
            if !self.allow_exploratory && m > defaults::MAX_PRIOR_MEAN + defaults::VALIDITY_EPS {
                return Err(SimError::OutsideValidityRegion(format!(
                    "TS prior mean {m} exceeds {}",
                    defaults::MAX_PRIOR_MEAN
                )));
            }
        }
        Ok(())
    }
}

/// Which revenue bucket an allocated auction falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevenueClass {
    EntrantWin,
    EntrantSecond,
    EntrantNone,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RevenueDecomposition {
    pub entrant_win: f64,
    pub entrant_second: f64,
    pub entrant_none: f64,
}

impl RevenueDecomposition {
    pub fn total(&self) -> f64 {
        self.entrant_win + self.entrant_second + self.entrant_none
    }
}

/// One participant's state and score in a recorded auction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidRecord {
    pub ad: usize,
    /// Belief before the auction.
    pub belief: BeliefState,
    pub bid: f64,
    pub quality_score: f64,
    pub combined_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionResult {
    pub winner: Option<usize>,
    /// Potential revenue per conversion; 0 when unallocated.
    pub price_per_conversion: f64,
    pub converted: bool,
    /// Amount charged (the price, truncated to the remaining budget when a cap binds).
    pub revenue: f64,
    pub efficiency: f64,
    /// Real bidders by combined score, descending (ties: ascending ad).
    pub ranking: Vec<usize>,
    /// Best 1-based rank held by an entrant.
    pub entrant_rank: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionRecord {
    pub t: u32,
    pub day: u32,
    pub result: AuctionResult,
    pub bids: Vec<BidRecord>,
    pub price_setter: Option<PriceSetter>,
    pub revenue_class: Option<RevenueClass>,
    /// Winner maximizes `v * mu` among eligible participants clearing the reserve.
    pub efficient: bool,
    /// Winner's same-day spend after this auction.
    pub winner_day_spend: Option<f64>,
    /// Ads barred by an exhausted budget or impression cap.
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub auctions: u32,
    pub allocated: u32,
    pub conversions: u32,
    pub revenue: f64,
    pub efficiency: f64,
    pub decomposition: RevenueDecomposition,
    pub efficient_allocations: u32,
    pub entrant_wins: u32,
    /// Sum and count of second/highest combined-score ratios (auctions with >= 2 bidders).
    pub thickness_sum: f64,
    pub thickness_auctions: u32,
    pub initial_beliefs: Vec<BeliefState>,
    pub final_beliefs: Vec<BeliefState>,
    /// Per ad, the largest same-day spend.
    pub max_daily_spend: Vec<f64>,
    pub cap_exclusions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub keyword_id: String,
    pub replication: u32,
    pub summary: TrajectorySummary,
    /// Present when the record level is per-auction.
    pub records: Option<Vec<AuctionRecord>>,
}

/// Output of [`simulate_all`], keyword-major: index `k * replications + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub trajectories: Vec<Trajectory>,
    pub entrant_impression_share: f64,
    pub outside_validity_region: bool,
}

impl SimulationRun {
    pub fn replication(&self, r: u32) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(move |t| t.replication == r)
    }
}

/// 32-byte ChaCha seed for one (keyword, replication).
pub fn trajectory_seed(master_seed: u64, keyword_id: &str, replication: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"auctionbandit/trajectory/v1");
    h.update(master_seed.to_le_bytes());
    h.update(replication.to_le_bytes());
    h.update(keyword_id.as_bytes());
    h.finalize().into()
}

pub fn trajectory_rng(master_seed: u64, keyword_id: &str, replication: u32) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(trajectory_seed(master_seed, keyword_id, replication))
}

fn classify(
    market: &KeywordMarket,
    winner: usize,
    setter: PriceSetter,
) -> RevenueClass {
    if market.ad(winner).entrant {
        RevenueClass::EntrantWin
    } else {
        match setter {
            PriceSetter::Bidder(a) if market.ad(a).entrant => RevenueClass::EntrantSecond,
            _ => RevenueClass::EntrantNone,
        }
    }
}

/// Simulate one keyword for one replication.
pub fn simulate_keyword(
    market: &KeywordMarket,
    config: &SimulationConfig,
    replication: u32,
) -> Result<Trajectory, SimError> {
    config.validate()?;
    let rule = config
        .policy
        .resolve(market.keyword_id(), market.advertisers().iter().map(|a| a.ad_id.as_str()));
    let mut rng = trajectory_rng(config.master_seed, market.keyword_id(), replication);
    run_trajectory(market, &rule, config, replication, &mut rng)
}

/// [`simulate_keyword`] with daily budget caps; fails if caps are disabled.
pub fn simulate_with_caps(
    market: &KeywordMarket,
    config: &SimulationConfig,
    replication: u32,
) -> Result<Trajectory, SimError> {
    if !config.budget_caps_enabled {
        return Err(SimError::Caps("budget_caps_enabled is false".into()));
    }
    simulate_keyword(market, config, replication)
}

/// The engine loop, with an explicit rule and rng.
pub fn run_trajectory<R: Rng + ?Sized>(
    market: &KeywordMarket,
    rule: &ScoreRule,
    config: &SimulationConfig,
    replication: u32,
    rng: &mut R,
) -> Result<Trajectory, SimError> {
    let ads = market.advertisers();
    let n = ads.len();
    let keep_records = config.record_level == RecordLevel::PerAuction;
    let caps_on = config.budget_caps_enabled;
    let mech = |t: u32, source: MechanismError| SimError::Mechanism {
        keyword: market.keyword_id().to_string(),
        auction: t,
        source,
    };

    let initial: Vec<BeliefState> = match config.warm_start {
        WarmStart::Cold => vec![BeliefState::default(); n],
        WarmStart::History => ads.iter().map(|a| a.history).collect(),
    };
    let mut beliefs = initial.clone();
    let mut wins = vec![0u64; n];
    let mut day_spend = vec![0.0f64; n];
    let mut max_daily_spend = vec![0.0f64; n];
    let mut exhausted = vec![false; n];
    let mut current_day = 0u32;

    let mut efficiency = CompensatedSum::new();
    let mut dec = [CompensatedSum::new(); 3];
    let mut thickness = CompensatedSum::new();
    let mut summary = TrajectorySummary {
        auctions: market.horizon(),
        allocated: 0,
        conversions: 0,
        revenue: 0.0,
        efficiency: 0.0,
        decomposition: RevenueDecomposition::default(),
        efficient_allocations: 0,
        entrant_wins: 0,
        thickness_sum: 0.0,
        thickness_auctions: 0,
        initial_beliefs: initial,
        final_beliefs: Vec::new(),
        max_daily_spend: Vec::new(),
        cap_exclusions: 0,
    };
    let mut records = keep_records.then(|| Vec::with_capacity(market.horizon() as usize));
    let mut scored: Vec<ScoredBid> = Vec::with_capacity(n);
    let mut excluded: Vec<usize> = Vec::new();

    for t in 0..market.horizon() {
        let day = market.day_of(t);
        if day != current_day {
            current_day = day;
            day_spend.iter_mut().for_each(|s| *s = 0.0);
            exhausted.iter_mut().for_each(|e| *e = false);
        }

        scored.clear();
        excluded.clear();
        for &a in market.participants(t) {
            let a = a as usize;
            let capped_out = config.impression_caps_enabled
                && ads[a].impression_cap.is_some_and(|c| wins[a] >= c);
            if exhausted[a] || capped_out {
                excluded.push(a);
                continue;
            }
            let q = rule.quality(a, &beliefs[a], t + 1, rng);
            scored.push(ScoredBid::new(a, ads[a].valuation, q));
        }

        // second / highest among real bidders
        if scored.len() >= 2 {
            let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for s in &scored {
                if s.combined_score > hi {
                    lo = hi;
                    hi = s.combined_score;
                } else if s.combined_score > lo {
                    lo = s.combined_score;
                }
            }
            if hi > 0.0 {
                thickness.add(lo / hi);
                summary.thickness_auctions += 1;
            }
        }

        let allocation = if scored.is_empty() {
            None
        } else {
            allocate(&scored, market.reserve_score()).map_err(|e| mech(t, e))?
        };

        let best_true = scored
            .iter()
            .map(|s| ads[s.ad].expected_score())
            .filter(|&s| s >= market.reserve_score())
            .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))));

        let mut result = AuctionResult {
            winner: None,
            price_per_conversion: 0.0,
            converted: false,
            revenue: 0.0,
            efficiency: 0.0,
            ranking: Vec::new(),
            entrant_rank: None,
        };
        let mut price_setter = None;
        let mut revenue_class = None;
        let mut winner_day_spend = None;

        if let Some(alloc) = allocation {
            let w = alloc.winner;
            let winner = &scored[alloc.winner_pos];
            let price = payment(alloc.runner_up_score, winner.quality_score, winner.bid)
                .map_err(|e| mech(t, e))?;
            let converted = rng.random::<f64>() < ads[w].true_cvr;
            let mut charged = 0.0;
            if converted {
                match ads[w].daily_cap.filter(|_| caps_on) {
                    Some(cap) if day_spend[w] + price > cap => {
                        charged = (cap - day_spend[w]).max(0.0);
                        day_spend[w] = cap;
                        exhausted[w] = true;
                        summary.cap_exclusions += 1;
                    }
                    _ => {
                        charged = price;
                        day_spend[w] += price;
                    }
                }
                max_daily_spend[w] = max_daily_spend[w].max(day_spend[w]);
            }
            let class = classify(market, w, alloc.price_setter);
            let value = if converted { ads[w].valuation } else { 0.0 };

            beliefs[w] = update_belief(beliefs[w], true, converted).map_err(|e| mech(t, e))?;
            wins[w] += 1;

            summary.allocated += 1;
            summary.conversions += converted as u32;
            if ads[w].entrant {
                summary.entrant_wins += 1;
            }
            efficiency.add(value);
            dec[class as usize].add(charged);

            if best_true.is_some_and(|b| ads[w].expected_score() == b) {
                summary.efficient_allocations += 1;
            }
            result.winner = Some(w);
            result.price_per_conversion = price;
            result.converted = converted;
            result.revenue = charged;
            result.efficiency = value;
            price_setter = Some(alloc.price_setter);
            revenue_class = Some(class);
            winner_day_spend = Some(day_spend[w]);
        } else if best_true.is_none() {
            summary.efficient_allocations += 1;
        }

        if let Some(records) = records.as_mut() {
            let mut ranking: Vec<&ScoredBid> = scored.iter().collect();
            ranking.sort_by(|a, b| {
                b.combined_score
                    .total_cmp(&a.combined_score)
                    .then(a.ad.cmp(&b.ad))
            });
            result.entrant_rank = ranking
                .iter()
                .position(|s| ads[s.ad].entrant)
                .map(|p| p as u32 + 1);
            result.ranking = ranking.iter().map(|s| s.ad).collect();
            let efficient = match (result.winner, best_true) {
                (None, None) => true,
                (Some(w), Some(b)) => ads[w].expected_score() == b,
                _ => false,
            };
            let bids = scored
                .iter()
                .map(|s| BidRecord {
                    ad: s.ad,
                    // the winner's belief was already advanced above
                    belief: if Some(s.ad) == result.winner {
                        BeliefState {
                            impressions: beliefs[s.ad].impressions - 1,
                            conversions: beliefs[s.ad].conversions - result.converted as u64,
                        }
                    } else {
                        beliefs[s.ad]
                    },
                    bid: s.bid,
                    quality_score: s.quality_score,
                    combined_score: s.combined_score,
                })
                .collect();
            records.push(AuctionRecord {
                t,
                day,
                result,
                bids,
                price_setter,
                revenue_class,
                efficient,
                winner_day_spend,
                excluded: excluded.clone(),
            });
        }
    }

    summary.decomposition = RevenueDecomposition {
        entrant_win: dec[RevenueClass::EntrantWin as usize].value(),
        entrant_second: dec[RevenueClass::EntrantSecond as usize].value(),
        entrant_none: dec[RevenueClass::EntrantNone as usize].value(),
    };
    // total revenue is defined as the sum of its buckets so the decomposition
    // is exact
    summary.revenue = summary.decomposition.total();
    summary.efficiency = efficiency.value();
    summary.thickness_sum = thickness.value();
    summary.final_beliefs = beliefs;
    summary.max_daily_spend = max_daily_spend;

    Ok(Trajectory {
        keyword_id: market.keyword_id().to_string(),
        replication,
        summary,
        records,
    })
}

/// Every keyword times every replication, in parallel on the current rayon pool.
pub fn simulate_all(
    markets: &[KeywordMarket],
    config: &SimulationConfig,
) -> Result<SimulationRun, SimError> {
    config.validate()?;
    let reps = config.replications;
    let tasks: Vec<(usize, u32)> = (0..markets.len())
        .flat_map(|k| (0..reps).map(move |r| (k, r)))
        .collect();
    let trajectories = tasks
        .into_par_iter()
        .map(|(k, r)| simulate_keyword(&markets[k], config, r))
        .collect::<Result<Vec<_>, _>>()?;

    let (entrant_wins, allocated) = trajectories.iter().fold((0u64, 0u64), |(e, a), t| {
        (e + t.summary.entrant_wins as u64, a + t.summary.allocated as u64)
    });
    let share = if allocated == 0 {
        0.0
    } else {
        entrant_wins as f64 / allocated as f64
    };
    let mut outside = false;
    match &config.policy {
        ExplorationPolicy::Ucb { rho } if share > defaults::MAX_UCB_ENTRANT_SHARE => {
            if !config.allow_exploratory {
                return Err(SimError::OutsideValidityRegion(format!(
                    "UCB rho={rho} gives entrants {share:.4} of impressions (max {})",
                    defaults::MAX_UCB_ENTRANT_SHARE
                )));
            }
            outside = true;
        }
        ExplorationPolicy::Ts(p) if p.max_mean() > defaults::MAX_PRIOR_MEAN + defaults::VALIDITY_EPS => {
            outside = true;
        }
        _ => {}
    }
    Ok(SimulationRun {
        trajectories,
        entrant_impression_share: share,
        outside_validity_region: outside,
    })
}

/// Derived daily caps, keyword -> ad -> cap.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivedCaps {
    pub caps: BTreeMap<String, BTreeMap<String, f64>>,
    /// (keyword, ad) pairs that never paid; their cap is 0.
    pub zero_spend: Vec<(String, String)>,
}

impl DerivedCaps {
    pub fn get(&self, keyword_id: &str, ad_id: &str) -> Option<f64> {
        self.caps.get(keyword_id)?.get(ad_id).copied()
    }

    /// Markets with caps scaled by `scale` installed.
    pub fn apply(&self, markets: &[KeywordMarket], scale: f64) -> Vec<KeywordMarket> {
        let empty = BTreeMap::new();
        markets
            .iter()
            .map(|m| m.with_caps(self.caps.get(m.keyword_id()).unwrap_or(&empty), scale))
            .collect()
    }
}

/// Cap per (ad, keyword) = largest same-day spend over the reference
/// trajectories.
pub fn derive_caps(markets: &[KeywordMarket], reference: &[Trajectory]) -> DerivedCaps {
    let index: BTreeMap<&str, &KeywordMarket> =
        markets.iter().map(|m| (m.keyword_id(), m)).collect();
    let mut out = DerivedCaps::default();
    for tr in reference {
        let Some(m) = index.get(tr.keyword_id.as_str()) else {
            continue;
        };
        let caps = out.caps.entry(tr.keyword_id.clone()).or_default();
        for (ad, &s) in m.advertisers().iter().zip(&tr.summary.max_daily_spend) {
            let c = caps.entry(ad.ad_id.clone()).or_insert(0.0);
            *c = c.max(s);
        }
    }
    for (k, caps) in &out.caps {
        for (a, &c) in caps {
            if c == 0.0 {
                out.zero_spend.push((k.clone(), a.clone()));
            }
        }
    }
    if !out.zero_spend.is_empty() {
        log::warn!(
            "{} ad/keyword pairs never paid and get a zero cap",
            out.zero_spend.len()
        );
    }
    out
}
