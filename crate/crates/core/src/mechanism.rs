//! Quality scores, the second-price rule with a reserve pseudo-bidder, and
//! belief updating.
//!
//! Ads are referred to by their index inside a keyword market. Markets keep
//! advertisers sorted by `ad_id`, so "smallest index" and "lexicographically
//! smallest id" are the same tie-break.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::defaults;
use crate::error::MechanismError;

/// Cumulative impressions and conversions of one ad in one keyword.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BeliefState {
    pub impressions: u64,
    pub conversions: u64,
}

impl BeliefState {
    pub fn new(impressions: u64, conversions: u64) -> Result<Self, MechanismError> {
        if conversions > impressions {
            return Err(MechanismError::InvalidBelief {
                impressions,
                conversions,
            });
        }
        Ok(Self {
            impressions,
            conversions,
        })
    }

    /// Beta parameters `(alpha0 + C, beta0 + I - C)`.
    pub fn posterior(&self, prior: BetaPrior) -> (f64, f64) {
        (
            prior.alpha + self.conversions as f64,
            prior.beta + (self.impressions - self.conversions) as f64,
        )
    }

    pub fn posterior_mean(&self, prior: BetaPrior) -> f64 {
        let (a, b) = self.posterior(prior);
        a / (a + b)
    }

    pub fn is_valid(&self) -> bool {
        self.conversions <= self.impressions
    }
}

/// Beta prior on an ad's conversion rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, MechanismError> {
        let p = Self { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    /// `alpha = 1`, `beta = 1/mean - 1`.
    pub fn from_mean(mean: f64) -> Result<Self, MechanismError> {
        if !(mean > 0.0 && mean < 1.0) {
            return Err(MechanismError::InvalidPolicy(format!(
                "prior mean {mean} not in (0, 1)"
            )));
        }
        Self::new(1.0, 1.0 / mean - 1.0)
    }

    pub fn data() -> Self {
        Self {
            alpha: defaults::DATA_PRIOR_ALPHA,
            beta: defaults::DATA_PRIOR_BETA,
        }
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn validate(&self) -> Result<(), MechanismError> {
        if self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()
        {
            Ok(())
        } else {
            Err(MechanismError::InvalidPolicy(format!(
                "Beta prior ({}, {}) must have positive finite parameters",
                self.alpha, self.beta
            )))
        }
    }
}

/// Prior override for one keyword, or one ad within a keyword.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorOverride {
    pub keyword_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ad_id: Option<String>,
    pub prior: BetaPrior,
}

/// The two functions `alpha0(a, k)`, `beta0(a, k)` of a TS policy.
///
/// Lookup order: ad-level override, keyword-level override, default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsPriors {
    pub default: BetaPrior,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<PriorOverride>,
}

impl TsPriors {
    pub fn uniform(prior: BetaPrior) -> Self {
        Self {
            default: prior,
            overrides: Vec::new(),
        }
    }

    pub fn prior_for(&self, keyword_id: &str, ad_id: &str) -> BetaPrior {
        let mut keyword_level = None;
        for o in &self.overrides {
            if o.keyword_id != keyword_id {
                continue;
            }
            match &o.ad_id {
                Some(a) if a == ad_id => return o.prior,
                None => keyword_level = Some(o.prior),
                _ => {}
            }
        }
        keyword_level.unwrap_or(self.default)
    }

    fn all(&self) -> impl Iterator<Item = &BetaPrior> {
        std::iter::once(&self.default).chain(self.overrides.iter().map(|o| &o.prior))
    }

    /// Largest prior mean across default and overrides.
    pub fn max_mean(&self) -> f64 {
        self.all().map(BetaPrior::mean).fold(f64::MIN, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExplorationPolicy {
    /// Quality scores drawn from Beta posteriors.
    Ts(TsPriors),
    /// Empirical rate plus `rho * sqrt(ln(t+1) / (I+1))`.
    Ucb { rho: f64 },
}

impl ExplorationPolicy {
    pub fn ts_uniform(prior: BetaPrior) -> Self {
        Self::Ts(TsPriors::uniform(prior))
    }

    pub fn ts_prior_mean(mean: f64) -> Result<Self, MechanismError> {
        Ok(Self::ts_uniform(BetaPrior::from_mean(mean)?))
    }

    pub fn validate(&self) -> Result<(), MechanismError> {
        match self {
            Self::Ts(p) => p.all().try_for_each(BetaPrior::validate),
            Self::Ucb { rho } if *rho >= 0.0 && rho.is_finite() => Ok(()),
            Self::Ucb { rho } => Err(MechanismError::InvalidPolicy(format!(
                "UCB rho must be nonnegative, got {rho}"
            ))),
        }
    }

    /// Resolve the policy for one keyword's advertisers (in market order).
    pub fn resolve<'a>(
        &self,
        keyword_id: &str,
        ad_ids: impl IntoIterator<Item = &'a str>,
    ) -> ScoreRule {
        match self {
            Self::Ts(p) => ScoreRule::Ts(
                ad_ids
                    .into_iter()
                    .map(|a| p.prior_for(keyword_id, a))
                    .collect(),
            ),
            Self::Ucb { rho } => ScoreRule::Ucb { rho: *rho },
        }
    }
}

/// A policy resolved against one keyword: per-ad priors for TS.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreRule {
    Ts(Vec<BetaPrior>),
    Ucb { rho: f64 },
}

impl ScoreRule {
    /// Quality score for ad `ad` at keyword-local auction counter `t` (1-based).
    /// TS consumes rng state; UCB does not.
    pub fn quality<R: Rng + ?Sized>(
        &self,
        ad: usize,
        belief: &BeliefState,
        t: u32,
        rng: &mut R,
    ) -> f64 {
        match self {
            Self::Ts(priors) => ts_quality_score(belief, priors[ad], rng),
            Self::Ucb { rho } => ucb_quality_score(belief, *rho, t as u64),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Self::Ts(_))
    }
}

/// One draw from `Beta(alpha0 + C, beta0 + I - C)`.
pub fn ts_quality_score<R: Rng + ?Sized>(
    belief: &BeliefState,
    prior: BetaPrior,
    rng: &mut R,
) -> f64 {
    let (a, b) = belief.posterior(prior);
    Beta::new(a, b)
        .expect("posterior parameters are positive")
        .sample(rng)
}

pub fn ucb_quality_score(belief: &BeliefState, rho: f64, t: u64) -> f64 {
    let n = belief.impressions as f64 + 1.0;
    belief.conversions as f64 / n + rho * (((t as f64) + 1.0).ln() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBid {
    pub ad: usize,
    pub bid: f64,
    pub quality_score: f64,
    pub combined_score: f64,
}

impl ScoredBid {
    pub fn new(ad: usize, bid: f64, quality_score: f64) -> Self {
        Self {
            ad,
            bid,
            quality_score,
            combined_score: bid * quality_score,
        }
    }
}

/// Whose score sets the winner's price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriceSetter {
    Bidder(usize),
    Reserve,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    /// Winning ad.
    pub winner: usize,
    /// Position of the winner in the scored slice.
    pub winner_pos: usize,
    pub runner_up_score: f64,
    pub price_setter: PriceSetter,
}

fn beats(a: &ScoredBid, b: &ScoredBid) -> bool {
    a.combined_score > b.combined_score || (a.combined_score == b.combined_score && a.ad < b.ad)
}

/// Highest combined score wins if it clears the reserve pseudo-bidder (which
/// loses ties) and is strictly positive. Returns `None` when unallocated.
pub fn allocate(
    scored: &[ScoredBid],
    reserve_score: f64,
) -> Result<Option<Allocation>, MechanismError> {
    if scored.is_empty() {
        return Err(MechanismError::EmptyBids);
    }
    let mut best = 0;
    for (i, s) in scored.iter().enumerate().skip(1) {
        if beats(s, &scored[best]) {
            best = i;
        }
    }
    let top = &scored[best];
    if !(top.combined_score >= reserve_score && top.combined_score > 0.0) {
        return Ok(None);
    }
    let mut second: Option<usize> = None;
    for (i, s) in scored.iter().enumerate() {
        if i == best {
            continue;
        }
        if second.is_none_or(|j| beats(s, &scored[j])) {
            second = Some(i);
        }
    }
    let (runner_up_score, price_setter) = match second {
        Some(j) if scored[j].combined_score >= reserve_score => {
            (scored[j].combined_score, PriceSetter::Bidder(scored[j].ad))
        }
        _ => (reserve_score, PriceSetter::Reserve),
    };
    Ok(Some(Allocation {
        winner: top.ad,
        winner_pos: best,
        runner_up_score,
        price_setter,
    }))
}

/// Price per conversion: `runner_up_score / winner_quality`, never above the
/// winner's own bid.
pub fn payment(
    runner_up_score: f64,
    winner_quality: f64,
    winner_bid: f64,
) -> Result<f64, MechanismError> {
    if !(winner_quality > 0.0) {
        return Err(MechanismError::UndefinedPayment);
    }
    Ok((runner_up_score / winner_quality).min(winner_bid))
}

pub fn update_belief(
    belief: BeliefState,
    won: bool,
    converted: bool,
) -> Result<BeliefState, MechanismError> {
    if converted && !won {
        return Err(MechanismError::ConversionWithoutWin);
    }
    if !won {
        return Ok(belief);
    }
    Ok(BeliefState {
        impressions: belief.impressions + 1,
        conversions: belief.conversions + converted as u64,
    })
}

/// One participant as seen by the propensity estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contender {
    pub ad: usize,
    pub bid: f64,
    pub belief: BeliefState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProbabilities {
    /// Win probability per contender, in input order.
    pub per_contender: Vec<f64>,
    pub unallocated: f64,
}

impl AllocationProbabilities {
    pub fn of(&self, contenders: &[Contender], ad: usize) -> Option<f64> {
        contenders
            .iter()
            .position(|c| c.ad == ad)
            .map(|i| self.per_contender[i])
    }
}

/// Monte-Carlo estimate of the allocation distribution: the fraction of
/// `mc_samples` independent quality-score draws in which each contender wins.
pub fn allocation_probability<R: Rng + ?Sized>(
    contenders: &[Contender],
    rule: &ScoreRule,
    reserve_score: f64,
    t: u32,
    mc_samples: usize,
    rng: &mut R,
) -> Result<AllocationProbabilities, MechanismError> {
    if mc_samples == 0 {
        return Err(MechanismError::InvalidPolicy("mc_samples must be >= 1".into()));
    }
    if contenders.is_empty() {
        return Ok(AllocationProbabilities {
            per_contender: Vec::new(),
            unallocated: 1.0,
        });
    }
    // Deterministic scores need only one evaluation.
    let samples = if rule.is_stochastic() { mc_samples } else { 1 };
    let mut wins = vec![0u64; contenders.len()];
    let mut none = 0u64;
    let mut scored = Vec::with_capacity(contenders.len());
    for _ in 0..samples {
        scored.clear();
        for c in contenders {
            let q = rule.quality(c.ad, &c.belief, t, rng);
            scored.push(ScoredBid::new(c.ad, c.bid, q));
        }
        match allocate(&scored, reserve_score)? {
            Some(a) => wins[a.winner_pos] += 1,
            None => none += 1,
        }
    }
    let n = samples as f64;
    Ok(AllocationProbabilities {
        per_contender: wins.iter().map(|&w| w as f64 / n).collect(),
        unallocated: none as f64 / n,
    })
}
