//! Acceptance suite: one pass/fail line per criterion. Runs without the
//! libtest harness so the lines are always printed.

mod common;

use std::path::Path;
use std::time::Instant;

use auctionbandit::analytics::{
    bias_series_by_replication, frontier_from_sweep, prior_sweep, thickness_from_outcomes,
    Normalization, SweepPoint, ThicknessClass,
};
use auctionbandit::auction_log::trajectory_rows;
use auctionbandit::estimators::{estimate_cvr_ips, estimate_cvr_sample, support_counts, IpsConfig};
use auctionbandit::experiment::{self, ExperimentSpec};
use auctionbandit::stats::{mean_se, sum};
use auctionbandit::{
    allocate, derive_caps, generate_market, payment, simulate_all, simulate_keyword, update_belief,
    AdvertiserProfile, BeliefState, BetaPrior, DistSpec, ExplorationPolicy, GeneratorConfig, KeywordMarket,
    ScoredBid, SimulationConfig, WarmStart,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ts(mean: f64) -> ExplorationPolicy {
    ExplorationPolicy::ts_prior_mean(mean).unwrap()
}

fn c1_beta_posterior() -> Verdict {
    let mut b = BeliefState::default();
    for i in 0..10_000 {
        b = update_belief(b, true, i % 50 == 0).map_err(|e| e.to_string())?;
    }
    let prior = BetaPrior::data();
    let (a, bb) = b.posterior(prior);
    let err = (b.posterior_mean(prior) - 201.0 / 10010.0).abs();
    check(
        (a, bb) == (201.0, 9809.0) && err <= 1e-12,
        format!("posterior ({a}, {bb}), mean error {err:.1e}"),
    )
}

fn c2_oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut n = 0;
    for i in 0..100u64 {
        let m = common::random_market(&mut rng, &format!("k{i}"), 5, 100);
        let policy = if i % 2 == 0 {
            ts(rng.random_range(0.001..0.1))
        } else {
            ExplorationPolicy::Ucb { rho: rng.random_range(0.0..0.2) }
        };
        common::matches_oracle(&m, &policy, i, (i % 4) as u32)?;
        n += 1;
    }
    Ok(format!("{n} random markets (TS and UCB) match bitwise"))
}

fn utility(values: &[(f64, f64)], mu: &[f64], ad: usize, bid: f64, reserve: f64) -> f64 {
    let mut s: Vec<ScoredBid> = values.iter().enumerate().map(|(i, &(v, q))| ScoredBid::new(i, v, q)).collect();
    s[ad] = ScoredBid::new(ad, bid, values[ad].1);
    match allocate(&s, reserve).unwrap() {
        Some(a) if a.winner == ad => (values[ad].0 - payment(a.runner_up_score, values[ad].1, bid).unwrap()) * mu[ad],
        _ => 0.0,
    }
}

fn c3_truthfulness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut auctions, mut deviations, mut profitable) = (0, 0, 0);
    for _ in 0..500 {
        let n = rng.random_range(1..7);
        let b: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.1..30.0), rng.random::<f64>())).collect();
        let mu: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let reserve = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..3.0) };
        for ad in 0..n {
            let truthful = utility(&b, &mu, ad, b[ad].0, reserve);
            for k in 1..=20 {
                deviations += 1;
                profitable += (utility(&b, &mu, ad, b[ad].0 * k as f64 / 10.0, reserve) > truthful) as u32;
            }
        }
        auctions += 1;
    }
    check(profitable == 0, format!("{auctions} auctions, {deviations} deviations, {profitable} profitable"))
}

fn c4_fuzz() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut auctions, mut violations, mut k) = (0u64, 0u64, 0u64);
    while auctions < 1_000_000 {
        let cfg = GeneratorConfig {
            keyword_count: 8,
            impressions_per_keyword: DistSpec::Uniform { low: 100.0, high: 4000.0 },
            bidders_per_keyword: DistSpec::Uniform { low: 1.0, high: 40.0 },
            reserve_quantile: rng.random_range(0.0..0.6),
            entrant_fraction: rng.random_range(0.0..0.6),
            seed: k,
            ..GeneratorConfig::default()
        };
        let mut markets = generate_market(&cfg).map_err(|e| e.to_string())?;
        let policy = match k % 3 {
            0 => ts(rng.random_range(1e-4..0.1)),
            1 => ts(rng.random_range(0.1..0.9)),
            _ => ExplorationPolicy::Ucb { rho: rng.random_range(0.0..0.3) },
        };
        let mut sim = SimulationConfig { allow_exploratory: true, ..SimulationConfig::new(policy, 1, k).per_auction() };
        if k % 2 == 1 {
            // random daily caps exercise the capped charge path
            markets = markets
                .iter()
                .map(|m| {
                    let caps = m.advertisers().iter().map(|a| (a.ad_id.clone(), rng.random_range(0.0..30.0))).collect();
                    m.with_caps(&caps, 1.0)
                })
                .collect();
            sim = sim.with_caps();
        }
        let counts: Vec<u64> = markets
            .par_iter()
            .map(|m| {
                let tr = simulate_keyword(m, &sim, 0).unwrap();
                let recs = tr.records.as_ref().unwrap();
                let mut bad = 0u64;
                let mut by_class = [Vec::new(), Vec::new(), Vec::new()];
                for r in recs {
                    let res = &r.result;
                    if res.revenue > res.efficiency || res.revenue < 0.0 || res.revenue > res.price_per_conversion {
                        bad += 1;
                    }
                    match (res.winner, r.revenue_class) {
                        (Some(_), Some(c)) => by_class[c as usize].push(res.revenue),
                        (None, None) if res.revenue == 0.0 => {}
                        _ => bad += 1,
                    }
                }
                let d = tr.summary.decomposition;
                let sums = by_class.map(sum);
                let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
                let parts = [d.entrant_win, d.entrant_second, d.entrant_none];
                if !sums.iter().zip(&parts).all(|(&a, &b)| close(a, b))
                    || !close(d.total(), tr.summary.revenue)
                    || tr.summary.revenue > tr.summary.efficiency
                {
                    bad += 1;
                }
                (recs.len() as u64) << 32 | bad
            })
            .collect();
        for c in counts {
            auctions += c >> 32;
            violations += c & 0xffff_ffff;
        }
        k += 1;
    }
    check(violations == 0, format!("{auctions} auctions over {} keywords, {violations} violations", k * 8))
}

fn c5_ts_convergence() -> Verdict {
    let m = KeywordMarket::new(
        "single",
        vec![AdvertiserProfile::new("a", 1.0, 0.02)],
        0.0,
        None,
        vec![vec![0]; 50_000],
    )
    .map_err(|e| e.to_string())?;
    let cfg = SimulationConfig {
        warm_start: WarmStart::Cold,
        ..SimulationConfig::new(ExplorationPolicy::ts_uniform(BetaPrior::data()), 100, 5)
    };
    let run = simulate_all(std::slice::from_ref(&m), &cfg).map_err(|e| e.to_string())?;
    let within = run
        .trajectories
        .iter()
        .filter(|t| (t.summary.final_beliefs[0].posterior_mean(BetaPrior::data()) - 0.02).abs() < 0.005)
        .count();
    check(within >= 95, format!("{within}/100 replications within 0.005 of 0.02"))
}

struct SweepStudy {
    markets: Vec<KeywordMarket>,
    sweep: Vec<SweepPoint>,
    rev_opt: usize,
    eff_opt: usize,
}

const KEYWORDS: usize = 200;
const REPLICATIONS: u32 = 50;

fn calibrated_market() -> Vec<KeywordMarket> {
    generate_market(&GeneratorConfig { keyword_count: KEYWORDS, seed: 7, ..GeneratorConfig::default() }).unwrap()
}

fn argmax(sweep: &[SweepPoint], f: impl Fn(&SweepPoint) -> f64) -> usize {
    let mut best = 0;
    for (i, p) in sweep.iter().enumerate() {
        if f(p) > f(&sweep[best]) {
            best = i;
        }
    }
    best
}

fn study(markets: Vec<KeywordMarket>) -> Result<SweepStudy, String> {
    let cfg = SimulationConfig::new(ts(0.1), REPLICATIONS, 1);
    let sweep = prior_sweep(&markets, &auctionbandit::defaults::prior_mean_grid(), &cfg).map_err(|e| e.to_string())?;
    let rev_opt = argmax(&sweep, |p| p.outcome.aggregate.revenue.mean);
    let eff_opt = argmax(&sweep, |p| p.outcome.aggregate.efficiency.mean);
    Ok(SweepStudy { markets, sweep, rev_opt, eff_opt })
}

fn tradeoff(s: &SweepStudy) -> Verdict {
    let (r, e) = (&s.sweep[s.rev_opt], &s.sweep[s.eff_opt]);
    let (rr, re) = (r.outcome.aggregate.revenue, e.outcome.aggregate.revenue);
    let se = (rr.se.powi(2) + re.se.powi(2)).sqrt();
    let margin = (rr.mean - re.mean) / se;
    check(
        e.prior_mean < r.prior_mean && margin > 2.0,
        format!(
            "efficiency-optimal prior {:.2e} < revenue-optimal {:.2e}; revenue {:.0} vs {:.0} ({margin:.1} combined SE)",
            e.prior_mean, r.prior_mean, rr.mean, re.mean
        ),
    )
}

fn c7_thin_markets(s: &SweepStudy) -> Verdict {
    let reference = s.sweep.iter().min_by(|a, b| a.prior_mean.total_cmp(&b.prior_mean)).unwrap();
    let th = thickness_from_outcomes(&reference.outcome);
    let gaps = |c: ThicknessClass| -> Vec<f64> {
        let ks: Vec<&str> = th.keywords_in(c).collect();
        let (hi, _) = s.sweep[s.rev_opt].outcome.subset_by_rep(ks.iter().copied());
        let (lo, _) = s.sweep[s.eff_opt].outcome.subset_by_rep(ks.iter().copied());
        hi.iter().zip(&lo).map(|(h, l)| h / l - 1.0).collect()
    };
    let thin = gaps(ThicknessClass::Thin);
    let medium = gaps(ThicknessClass::Medium);
    let thick = gaps(ThicknessClass::Thick);
    let z = |other: &[f64]| {
        let d: Vec<f64> = thin.iter().zip(other).map(|(a, b)| a - b).collect();
        let (m, se) = mean_se(&d);
        m / se
    };
    let (zm, zt) = (z(&medium), z(&thick));
    let pct = |x: &[f64]| 100.0 * mean_se(x).0;
    check(
        zm > 1.645 && zt > 1.645,
        format!(
            "revenue gap thin {:+.2}%, medium {:+.2}%, thick {:+.2}%; thin minus medium z={zm:.1}, thin minus thick z={zt:.1}",
            pct(&thin),
            pct(&medium),
            pct(&thick)
        ),
    )
}

fn c8_customization(s: &SweepStudy) -> Verdict {
    let f = frontier_from_sweep(&s.sweep, &auctionbandit::defaults::tau_grid(), Normalization::PerImpression)
        .map_err(|e| e.to_string())?;
    let covered = f.dominance.iter().filter(|d| d.dominated).count();
    let worst = f
        .dominance
        .iter()
        .map(|d| (d.revenue_gap / d.revenue_gap_se).min(d.efficiency_gap / d.efficiency_gap_se))
        .fold(f64::INFINITY, f64::min);
    check(
        f.customized_dominates() && !f.dominance.is_empty(),
        format!(
            "{covered}/{} uniform frontier points covered; smallest gap {worst:.1} SE",
            f.dominance.len()
        ),
    )
}

fn c9_bias() -> Verdict {
    let markets = generate_market(&GeneratorConfig {
        keyword_count: 20,
        impressions_per_keyword: DistSpec::Fixed { value: 10_000.0 },
        seed: 11,
        ..GeneratorConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let reps = 10;
    let final_quarter = |policy: ExplorationPolicy| -> Result<(Vec<f64>, Vec<f64>, f64), String> {
        let cfg = SimulationConfig::new(policy, reps, 3).per_auction();
        let (mut w, mut nw, mut shares) = (Vec::new(), Vec::new(), Vec::new());
        // one replication at a time keeps per-auction records small
        for r in 0..reps {
            let trs = markets
                .par_iter()
                .map(|m| simulate_keyword(m, &cfg, r))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let (ew, al) = trs.iter().fold((0u64, 0u64), |(e, a), t| {
                (e + t.summary.entrant_wins as u64, a + t.summary.allocated as u64)
            });
            shares.push(ew as f64 / al as f64);
            let s = bias_series_by_replication(&markets, &trs).map_err(|e| e.to_string())?;
            let (a, b) = s[0].final_quarter_means();
            w.push(a.ok_or("no winners")?);
            nw.push(b.ok_or("no non-winners")?);
        }
        Ok((w, nw, mean_se(&shares).0))
    };
    let (uw, unw, ushare) = final_quarter(ExplorationPolicy::Ucb { rho: 0.04 })?;
    let (tw, tnw, _) = final_quarter(ts(0.1))?;
    let (uw, unw, tw, tnw) = (mean_se(&uw), mean_se(&unw), mean_se(&tw), mean_se(&tnw));
    check(
        unw.0 - 1.96 * unw.1 > 0.0 && uw.0.abs() < 0.01 && tw.0.abs() < 0.01 && tnw.0.abs() < 0.01,
        format!(
            "UCB nw {:.4} (SE {:.1e}), w {:.4}; TS w {:.4}, nw {:.4}; UCB entrant share {:.3}",
            unw.0, unw.1, uw.0, tw.0, tnw.0, ushare
        ),
    )
}

fn c10_ips() -> Verdict {
    // agreement on TS-logged data
    let ads = |k: usize| {
        vec![
            AdvertiserProfile::new("a", 10.0, 0.05 + 0.01 * k as f64).with_history(200, 10),
            AdvertiserProfile::new("b", 9.0, 0.06).with_history(100, 6),
            AdvertiserProfile::new("c", 14.0, 0.035).with_history(50, 2),
            AdvertiserProfile::new("d", 20.0, 0.02).entrant_at(0),
        ]
    };
    let markets: Vec<KeywordMarket> = (0..3).map(|k| common::full_market(&format!("kw{k}"), ads(k), 30_000, 0.05)).collect();
    let policy = ExplorationPolicy::ts_uniform(BetaPrior::data());
    let run = simulate_all(&markets, &SimulationConfig::new(policy.clone(), 1, 10).per_auction())
        .map_err(|e| e.to_string())?;
    let rows = trajectory_rows(&markets, &run.trajectories);
    let sample = estimate_cvr_sample(&rows).map_err(|e| e.to_string())?;
    let (ips, diag) = estimate_cvr_ips(&rows, &IpsConfig::new(policy.clone())).map_err(|e| e.to_string())?;
    let counts = support_counts(&rows);
    let mut compared = 0;
    let mut worst = 0.0f64;
    for (k, c) in &counts {
        if c.wins >= 1000 {
            compared += 1;
            worst = worst.max((ips[k] - sample[k]).abs());
        }
    }
    let agree = compared > 0 && worst <= 0.01;

    // unbiasedness over 200 seeds on a market with known rates
    let small = common::full_market(
        "kw",
        vec![
            AdvertiserProfile::new("a", 10.0, 0.08).with_history(40, 3),
            AdvertiserProfile::new("b", 8.0, 0.1).with_history(20, 2),
            AdvertiserProfile::new("c", 12.0, 0.06).entrant_at(0),
        ],
        2000,
        0.05,
    );
    let estimates: Vec<Vec<f64>> = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = SimulationConfig::new(policy.clone(), 1, 1000 + seed).per_auction();
            let tr = simulate_keyword(&small, &cfg, 0).unwrap();
            let rows = trajectory_rows(std::slice::from_ref(&small), &[tr]);
            let ipsc = IpsConfig { seed, ..IpsConfig::new(policy.clone()) };
            let (est, _) = estimate_cvr_ips(&rows, &ipsc).unwrap();
            small.advertisers()
                .iter()
                .map(|a| est.get(&("kw".to_string(), a.ad_id.clone())).copied().unwrap_or(0.0))
                .collect()
        })
        .collect();
    let mut unbiased = true;
    let mut z = Vec::new();
    for (i, a) in small.advertisers().iter().enumerate() {
        let xs: Vec<f64> = estimates.iter().map(|e| e[i]).collect();
        let (m, se) = mean_se(&xs);
        let zi = (m - a.true_cvr) / se;
        unbiased &= zi.abs() <= 2.0;
        z.push(format!("{}={zi:+.2}", a.ad_id));
    }
    check(
        agree && unbiased,
        format!(
            "{compared} ads with >=1000 wins, max |IPS - sample| {worst:.4} ({} clipped); 200-seed bias z: {}",
            diag.clipped_rows,
            z.join(" ")
        ),
    )
}

fn c11_caps(s: &SweepStudy) -> Verdict {
    let cfg = SimulationConfig::new(ts(0.1), REPLICATIONS, 1);
    let reference = simulate_all(&s.markets, &cfg).map_err(|e| e.to_string())?;
    let caps = derive_caps(&s.markets, &reference.trajectories);
    let replay = simulate_all(&caps.apply(&s.markets, 1.0), &cfg.clone().with_caps()).map_err(|e| e.to_string())?;
    let identical = replay.trajectories == reference.trajectories;

    let tight = caps.apply(&s.markets, 0.5);
    let sweep = prior_sweep(&tight, &auctionbandit::defaults::prior_mean_grid(), &cfg.with_caps())
        .map_err(|e| e.to_string())?;
    let capped = SweepStudy {
        rev_opt: argmax(&sweep, |p| p.outcome.aggregate.revenue.mean),
        eff_opt: argmax(&sweep, |p| p.outcome.aggregate.efficiency.mean),
        markets: tight,
        sweep,
    };
    let direction = tradeoff(&capped);
    let detail = format!(
        "replay identical: {identical}; 50% caps: {}",
        match &direction {
            Ok(d) | Err(d) => d,
        }
    );
    check(identical && direction.is_ok(), detail)
}

fn c12_determinism() -> Verdict {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let spec = ExperimentSpec::load(&root.join("frontier.toml")).map_err(|e| e.to_string())?;
    let spec = ExperimentSpec { command: Some(experiment::Command::Frontier), ..spec };
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let mut dirs = Vec::new();
    for jobs in [1, 2, 4] {
        let out = tmp.path().join(format!("jobs{jobs}"));
        experiment::run(&ExperimentSpec { jobs: Some(jobs), ..spec.clone() }, &out).map_err(|e| e.to_string())?;
        dirs.push(out);
    }
    let rerun = tmp.path().join("rerun");
    experiment::rerun(&dirs[0].join(experiment::MANIFEST_FILE), &rerun, Some(3)).map_err(|e| e.to_string())?;
    dirs.push(rerun);
    let mut same = true;
    for d in &dirs[1..] {
        same &= experiment::outputs_identical(&dirs[0], d).map_err(|e| e.to_string())?;
    }
    let files = experiment::check_frontier_file(&dirs[0].join("frontier_customized.csv")).map_err(|e| e.to_string())?
        && experiment::check_frontier_file(&dirs[0].join("frontier_uniform.csv")).map_err(|e| e.to_string())?;
    check(
        same && files,
        format!("demo frontier at 1/2/4 workers and a manifest rerun at 3 workers: identical={same}, monotone frontiers={files}"),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Verdict, f64)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &v {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:>2} {tag} [{secs:6.1}s] {name}: {detail}");
        results.push((n, name, v, secs));
    };
    run(1, "beta posterior arithmetic", &mut c1_beta_posterior);
    run(2, "straight-line oracle equivalence", &mut c2_oracle_equivalence);
    run(3, "truthful bidding", &mut c3_truthfulness);
    run(4, "revenue <= efficiency and conservation fuzz", &mut c4_fuzz);
    run(5, "TS convergence", &mut c5_ts_convergence);
    let t = Instant::now();
    let study = study(calibrated_market());
    println!(
        "shared prior sweep ({KEYWORDS} keywords, {REPLICATIONS} replications): {:.1}s",
        t.elapsed().as_secs_f64()
    );
    match &study {
        Ok(s) => {
            run(6, "revenue-efficiency tradeoff", &mut || tradeoff(s));
            run(7, "thin-market amplification", &mut || c7_thin_markets(s));
            run(8, "customization dominance", &mut || c8_customization(s));
        }
        Err(e) => {
            for (n, name) in [(6, "revenue-efficiency tradeoff"), (7, "thin-market amplification"), (8, "customization dominance")] {
                run(n, name, &mut || Err(format!("sweep failed: {e}")));
            }
        }
    }
    run(9, "UCB bias signature", &mut c9_bias);
    run(10, "IPS validity", &mut c10_ips);
    match &study {
        Ok(s) => run(11, "budget-cap consistency", &mut || c11_caps(s)),
        Err(e) => run(11, "budget-cap consistency", &mut || Err(format!("sweep failed: {e}"))),
    }
    run(12, "determinism", &mut c12_determinism);
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
