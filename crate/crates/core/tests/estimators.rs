mod common;

use auctionbandit::auction_log::{trajectory_rows, LogRow};
use auctionbandit::estimators::{estimate_all, estimate_cvr_ips, estimate_cvr_sample, estimate_valuations, IpsConfig};
use auctionbandit::{simulate_all, ts_quality_score, AdvertiserProfile, BeliefState, BetaPrior, ExplorationPolicy, SimulationConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logged(markets: &[auctionbandit::KeywordMarket], policy: ExplorationPolicy, reps: u32, seed: u64) -> Vec<LogRow> {
    let cfg = SimulationConfig::new(policy, reps, seed).per_auction();
    let run = simulate_all(markets, &cfg).unwrap();
    trajectory_rows(markets, &run.trajectories)
}

fn key(k: &str, a: &str) -> (String, String) {
    (k.to_string(), a.to_string())
}

#[test]
fn truthful_bids_recover_the_valuation_exactly() {
    let m = common::full_market(
        "kw",
        vec![
            AdvertiserProfile::new("a", 3.5, 0.1),
            AdvertiserProfile::new("b", 2.0, 0.3).with_history(10, 2),
        ],
        500,
        0.05,
    );
    let rows = logged(&[m], ExplorationPolicy::ts_uniform(BetaPrior::data()), 2, 1);
    let v = estimate_valuations(&rows);
    assert_eq!(v[&key("kw", "a")], 3.5);
    assert_eq!(v[&key("kw", "b")], 2.0);
}

#[test]
fn sample_analogue_concentrates_around_the_true_rate() {
    let m = common::full_market("kw", vec![AdvertiserProfile::new("a", 1.0, 0.05)], 6000, 0.0);
    let markets = [m];
    let mut hits = 0;
    for seed in 0..100 {
        let rows = logged(&markets, ExplorationPolicy::ts_uniform(BetaPrior::data()), 1, seed);
        let est = estimate_cvr_sample(&rows).unwrap()[&key("kw", "a")];
        hits += ((est - 0.05).abs() <= 0.01) as u32;
    }
    assert!(hits >= 95, "{hits}/100 within tolerance");
}

/// Two bidders with identical bids and frozen (0, 0) beliefs, allocated by
/// actual TS draws: each wins half the time.
fn symmetric_log(seed: u64, horizon: u32, mu: f64) -> Vec<LogRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = BetaPrior::data();
    let mut rows = Vec::new();
    for t in 0..horizon {
        let q: Vec<f64> = (0..2).map(|_| ts_quality_score(&BeliefState::default(), prior, &mut rng)).collect();
        let w = if q[1] > q[0] { 1 } else { 0 };
        let converted = rng.random::<f64>() < mu;
        for a in 0..2 {
            rows.push(LogRow {
                keyword_id: "kw".into(),
                auction_index: t,
                ad_id: format!("ad{a}"),
                bid: 1.0,
                reserve_score: 0.0,
                impressions: Some(0),
                conversions: Some(0),
                quality_score: Some(q[a]),
                combined_score: Some(q[a]),
                won: Some((a == w) as u8),
                converted: Some((a == w && converted) as u8),
                ..LogRow::default()
            });
        }
    }
    rows
}

#[test]
fn ips_with_symmetric_bidders_recovers_the_rate() {
    let rows = symmetric_log(3, 10_000, 0.1);
    let cfg = IpsConfig::new(ExplorationPolicy::ts_uniform(BetaPrior::data()));
    let (est, diag) = estimate_cvr_ips(&rows, &cfg).unwrap();
    assert_eq!(diag.clipped_rows, 0);
    for a in ["ad0", "ad1"] {
        let e = est[&key("kw", a)];
        assert!((e - 0.1).abs() <= 0.02, "{a}: {e}");
    }
}

#[test]
fn ips_flags_clipped_propensities() {
    // ad1's bid is so low it almost never wins; any conversion it logs is clipped
    let mut rows = symmetric_log(4, 200, 1.0);
    for r in rows.iter_mut().filter(|r| r.ad_id == "ad1") {
        r.bid = 1e-6;
    }
    let cfg = IpsConfig { mc_samples: 2000, ..IpsConfig::new(ExplorationPolicy::ts_uniform(BetaPrior::data())) };
    let (_, diag) = estimate_cvr_ips(&rows, &cfg).unwrap();
    let ad1_conversions = rows.iter().filter(|r| r.ad_id == "ad1" && r.converted == Some(1)).count() as u64;
    assert!(ad1_conversions > 0);
    assert_eq!(diag.clipped_rows, ad1_conversions);
    assert_eq!(diag.clipped_by_pair["kw/ad1"], ad1_conversions);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn estimates_do_not_depend_on_row_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let markets: Vec<_> = (0..3).map(|i| common::random_market(&mut rng, &format!("k{i}"), 4, 60)).collect();
        let mut rows = logged(&markets, ExplorationPolicy::ts_prior_mean(0.05).unwrap(), 2, seed);
        let cfg = IpsConfig { mc_samples: 300, seed, ..IpsConfig::new(ExplorationPolicy::ts_prior_mean(0.05).unwrap()) };
        let a = estimate_all(&rows, Some(&cfg), None).unwrap();
        rows.shuffle(&mut rng);
        let b = estimate_all(&rows, Some(&cfg), None).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.cvr_hat.values().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!(a.cvr_hat_ips.values().all(|&x| x >= 0.0));
        prop_assert!(a.valuation_hat.values().all(|&x| x > 0.0));
    }
}
