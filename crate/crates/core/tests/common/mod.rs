#![allow(dead_code)]

use auctionbandit::sim::{trajectory_rng, RevenueClass};
use auctionbandit::{simulate_keyword, AdvertiserProfile, ExplorationPolicy, KeywordMarket, SimulationConfig};
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// A small random market: up to `max_ads` ads, horizon up to `max_t`,
/// random entrants, histories, caps-free.
pub fn random_market<R: Rng>(rng: &mut R, id: &str, max_ads: usize, max_t: u32) -> KeywordMarket {
    let n = rng.random_range(1..=max_ads);
    let horizon = rng.random_range(1..=max_t);
    let mut ads = Vec::new();
    for i in 0..n {
        let v = rng.random_range(0.5..20.0);
        let mu = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.001..0.6) };
        let mut a = AdvertiserProfile::new(format!("ad{i}"), v, mu);
        if i > 0 && rng.random_bool(0.3) {
            a = a.entrant_at(rng.random_range(0..horizon));
        } else {
            let imp = rng.random_range(0..200);
            let conv = rng.random_range(0..=imp / 4);
            a = a.with_history(imp, conv);
        }
        ads.push(a);
    }
    let p = rng.random_range(0.3..1.0);
    let participation = (0..horizon)
        .map(|t| {
            (0..n)
                .filter(|&i| ads[i].entry_auction_index <= t && rng.random_bool(p))
                .collect()
        })
        .collect();
    let reserve = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..2.0) };
    let per_day = rng.random_range(1..=horizon);
    KeywordMarket::new(id, ads, reserve, Some(per_day), participation).unwrap()
}

/// Horizon-fixed market in which every ad bids in every auction.
pub fn full_market(id: &str, ads: Vec<AdvertiserProfile>, horizon: u32, reserve: f64) -> KeywordMarket {
    let participation = (0..horizon)
        .map(|t| (0..ads.len()).filter(|&i| ads[i].entry_auction_index <= t).collect())
        .collect();
    KeywordMarket::new(id, ads, reserve, None, participation).unwrap()
}

pub struct Outcome {
    pub winner: Option<usize>,
    pub price: f64,
    pub converted: bool,
    pub revenue: f64,
    pub class: Option<RevenueClass>,
}

/// Straight-line reference simulator: no shared code with the engine beyond the
/// market accessors and the seeding function.
pub fn straight_line(market: &KeywordMarket, policy: &ExplorationPolicy, seed: u64, rep: u32) -> (Vec<Outcome>, Vec<(u64, u64)>) {
    let ads = market.advertisers();
    let mut rng = trajectory_rng(seed, market.keyword_id(), rep);
    let mut counts: Vec<(u64, u64)> = ads.iter().map(|a| (a.history.impressions, a.history.conversions)).collect();
    let mut out = Vec::new();
    for t in 0..market.horizon() {
        let mut who: Vec<usize> = market.participants(t).iter().map(|&a| a as usize).collect();
        who.sort();
        let mut q = Vec::new();
        for &a in &who {
            let (i, c) = counts[a];
            let score = match policy {
                ExplorationPolicy::Ts(p) => {
                    let pr = p.prior_for(market.keyword_id(), &ads[a].ad_id);
                    Beta::new(pr.alpha + c as f64, pr.beta + (i - c) as f64).unwrap().sample(&mut rng)
                }
                ExplorationPolicy::Ucb { rho } => {
                    c as f64 / (i as f64 + 1.0) + rho * ((t as f64 + 2.0).ln() / (i as f64 + 1.0)).sqrt()
                }
            };
            q.push(score);
        }
        let s: Vec<f64> = who.iter().zip(&q).map(|(&a, &q)| ads[a].valuation * q).collect();
        // first index of the maximum is the smallest ad id
        let mut best: Option<usize> = None;
        for j in 0..s.len() {
            if best.is_none_or(|b| s[j] > s[b]) {
                best = Some(j);
            }
        }
        let reserve = market.reserve_score();
        let best = best.filter(|&b| s[b] >= reserve && s[b] > 0.0);
        let Some(b) = best else {
            out.push(Outcome { winner: None, price: 0.0, converted: false, revenue: 0.0, class: None });
            continue;
        };
        let mut second: Option<usize> = None;
        for j in 0..s.len() {
            if j != b && second.is_none_or(|k| s[j] > s[k]) {
                second = Some(j);
            }
        }
        let (r, setter) = match second {
            Some(k) if s[k] >= reserve => (s[k], Some(who[k])),
            _ => (reserve, None),
        };
        let w = who[b];
        let price = (r / q[b]).min(ads[w].valuation);
        let converted = rng.random::<f64>() < ads[w].true_cvr;
        counts[w].0 += 1;
        counts[w].1 += converted as u64;
        let class = if ads[w].entrant {
            RevenueClass::EntrantWin
        } else if setter.is_some_and(|k| ads[k].entrant) {
            RevenueClass::EntrantSecond
        } else {
            RevenueClass::EntrantNone
        };
        out.push(Outcome {
            winner: Some(w),
            price,
            converted,
            revenue: if converted { price } else { 0.0 },
            class: Some(class),
        });
    }
    (out, counts)
}


/// Engine vs straight-line oracle; per-auction outcomes must agree bitwise.
pub fn matches_oracle(market: &KeywordMarket, policy: &ExplorationPolicy, seed: u64, rep: u32) -> Result<(), String> {
    let cfg = SimulationConfig {
        allow_exploratory: true,
        ..SimulationConfig::new(policy.clone(), rep + 1, seed).per_auction()
    };
    let tr = simulate_keyword(market, &cfg, rep).map_err(|e| e.to_string())?;
    let (expected, counts) = straight_line(market, policy, seed, rep);
    let records = tr.records.unwrap();
    if records.len() != expected.len() {
        return Err("record count differs".into());
    }
    for (r, e) in records.iter().zip(&expected) {
        let same = r.result.winner == e.winner
            && r.result.price_per_conversion.to_bits() == e.price.to_bits()
            && r.result.converted == e.converted
            && r.result.revenue.to_bits() == e.revenue.to_bits()
            && r.revenue_class == e.class;
        if !same {
            return Err(format!("{}: auction {} differs", market.keyword_id(), r.t));
        }
    }
    let fin: Vec<(u64, u64)> = tr.summary.final_beliefs.iter().map(|b| (b.impressions, b.conversions)).collect();
    if fin != counts {
        return Err(format!("{}: final beliefs differ", market.keyword_id()));
    }
    Ok(())
}
