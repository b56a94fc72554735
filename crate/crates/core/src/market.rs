//! Ground-truth market model: advertisers, keywords, participation schedules
//! and reserve scores, plus the synthetic market generator.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::defaults;
use crate::error::MarketError;
use crate::mechanism::BeliefState;
use crate::stats;

/// Ground truth for one ad in one keyword.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvertiserProfile {
    pub ad_id: String,
    /// Value per conversion; truthful bidders bid this.
    pub valuation: f64,
    pub true_cvr: f64,
    /// First auction index at which the ad participates.
    pub entry_auction_index: u32,
    /// Entrants start without history and count toward the entrant revenue shares.
    pub entrant: bool,
    pub daily_cap: Option<f64>,
    /// Impressions and conversions accumulated before the simulated window.
    pub history: BeliefState,
    /// Optional ceiling on impressions inside the window (opt-in filter).
    pub impression_cap: Option<u64>,
}

impl AdvertiserProfile {
    pub fn new(ad_id: impl Into<String>, valuation: f64, true_cvr: f64) -> Self {
        Self {
            ad_id: ad_id.into(),
            valuation,
            true_cvr,
            entry_auction_index: 0,
            entrant: false,
            daily_cap: None,
            history: BeliefState::default(),
            impression_cap: None,
        }
    }

    pub fn entrant_at(mut self, t: u32) -> Self {
        self.entry_auction_index = t;
        self.entrant = true;
        self
    }

    pub fn with_history(mut self, impressions: u64, conversions: u64) -> Self {
        self.history = BeliefState {
            impressions,
            conversions,
        };
        self
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.daily_cap = Some(cap);
        self
    }

    /// True score `v * mu`.
    pub fn expected_score(&self) -> f64 {
        self.valuation * self.true_cvr
    }
}

/// Per-auction participant lists in compressed-row form.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct Participation {
    offsets: Vec<u32>,
    ads: Vec<u32>,
}

impl Participation {
    fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut ads = Vec::new();
        offsets.push(0);
        for l in lists {
            ads.extend(l.iter().map(|&a| a as u32));
            offsets.push(ads.len() as u32);
        }
        Self { offsets, ads }
    }

    fn get(&self, t: usize) -> &[u32] {
        &self.ads[self.offsets[t] as usize..self.offsets[t + 1] as usize]
    }
}

/// One keyword's auctions. Advertisers are kept sorted by `ad_id`, so an
/// ad's index doubles as its tie-break rank.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordMarket {
    keyword_id: String,
    advertisers: Vec<AdvertiserProfile>,
    horizon: u32,
    reserve_score: f64,
    auctions_per_day: u32,
    participation: Participation,
}

fn invalid(keyword: &str, reason: impl Into<String>) -> MarketError {
    MarketError::Invalid {
        keyword: keyword.to_string(),
        reason: reason.into(),
    }
}

impl KeywordMarket {
    /// `participation[t]` lists indices into `advertisers` as given; they are
    /// remapped after sorting advertisers by id.
    pub fn new(
        keyword_id: impl Into<String>,
        advertisers: Vec<AdvertiserProfile>,
        reserve_score: f64,
        auctions_per_day: Option<u32>,
        participation: Vec<Vec<usize>>,
    ) -> Result<Self, MarketError> {
        let keyword_id = keyword_id.into();
        let horizon = participation.len() as u32;
        if horizon == 0 {
            return Err(invalid(&keyword_id, "horizon must be at least 1"));
        }
        if !(reserve_score >= 0.0 && reserve_score.is_finite()) {
            return Err(invalid(&keyword_id, "reserve score must be finite and >= 0"));
        }
        let mut order: Vec<usize> = (0..advertisers.len()).collect();
        order.sort_by(|&a, &b| advertisers[a].ad_id.cmp(&advertisers[b].ad_id));
        let mut remap = vec![0usize; advertisers.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let mut slots: Vec<Option<AdvertiserProfile>> = advertisers.into_iter().map(Some).collect();
        let advertisers: Vec<AdvertiserProfile> =
            order.iter().map(|&i| slots[i].take().unwrap()).collect();

        for w in advertisers.windows(2) {
            if w[0].ad_id == w[1].ad_id {
                return Err(invalid(&keyword_id, format!("duplicate ad `{}`", w[0].ad_id)));
            }
        }
        for a in &advertisers {
            let bad = |r: &str| invalid(&keyword_id, format!("ad `{}`: {r}", a.ad_id));
            if !(a.valuation > 0.0 && a.valuation.is_finite()) {
                return Err(bad("valuation must be > 0"));
            }
            if !(0.0..=1.0).contains(&a.true_cvr) {
                return Err(bad("true_cvr must be in [0, 1]"));
            }
            if let Some(c) = a.daily_cap {
                // zero is reserved for caps derived from ads that never paid
                if !(c >= 0.0) {
                    return Err(bad("daily_cap must be >= 0"));
                }
            }
            if !a.history.is_valid() {
                return Err(bad("history has more conversions than impressions"));
            }
        }

        let mut lists = Vec::with_capacity(participation.len());
        for (t, list) in participation.into_iter().enumerate() {
            let mut mapped = Vec::with_capacity(list.len());
            for old in list {
                let Some(&new) = remap.get(old) else {
                    return Err(invalid(
                        &keyword_id,
                        format!("auction {t} references unknown ad index {old}"),
                    ));
                };
                if (t as u32) < advertisers[new].entry_auction_index {
                    return Err(invalid(
                        &keyword_id,
                        format!(
                            "ad `{}` participates in auction {t} before its entry at {}",
                            advertisers[new].ad_id, advertisers[new].entry_auction_index
                        ),
                    ));
                }
                mapped.push(new);
            }
            mapped.sort_unstable();
            if mapped.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid(&keyword_id, format!("auction {t} lists an ad twice")));
            }
            lists.push(mapped);
        }

        let auctions_per_day =
            auctions_per_day.unwrap_or_else(|| (horizon / defaults::WINDOW_DAYS).max(1));
        if auctions_per_day == 0 {
            return Err(invalid(&keyword_id, "auctions_per_day must be >= 1"));
        }
        Ok(Self {
            keyword_id,
            advertisers,
            horizon,
            reserve_score,
            auctions_per_day,
            participation: Participation::from_lists(&lists),
        })
    }

    pub fn keyword_id(&self) -> &str {
        &self.keyword_id
    }

    pub fn advertisers(&self) -> &[AdvertiserProfile] {
        &self.advertisers
    }

    pub fn ad(&self, index: usize) -> &AdvertiserProfile {
        &self.advertisers[index]
    }

    pub fn ad_index(&self, ad_id: &str) -> Option<usize> {
        self.advertisers
            .binary_search_by(|a| a.ad_id.as_str().cmp(ad_id))
            .ok()
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn reserve_score(&self) -> f64 {
        self.reserve_score
    }

    pub fn auctions_per_day(&self) -> u32 {
        self.auctions_per_day
    }

    pub fn day_of(&self, t: u32) -> u32 {
        t / self.auctions_per_day
    }

    pub fn days(&self) -> u32 {
        self.day_of(self.horizon - 1) + 1
    }

    /// Participants of auction `t` (ascending ad index).
    pub fn participants(&self, t: u32) -> &[u32] {
        self.participation.get(t as usize)
    }

    pub fn participation_lists(&self) -> Vec<Vec<usize>> {
        (0..self.horizon)
            .map(|t| self.participants(t).iter().map(|&a| a as usize).collect())
            .collect()
    }

    pub fn has_entrants(&self) -> bool {
        self.advertisers.iter().any(|a| a.entrant)
    }

    /// Total (auction, participant) pairs.
    pub fn participation_count(&self) -> usize {
        self.participation.ads.len()
    }

    /// Replace every ad's daily cap; ads missing from `caps` become uncapped.
    pub fn with_caps(&self, caps: &BTreeMap<String, f64>, scale: f64) -> Self {
        let mut m = self.clone();
        for a in &mut m.advertisers {
            a.daily_cap = caps.get(&a.ad_id).map(|c| c * scale);
        }
        m
    }

    /// Copy with the reserve replaced.
    pub fn with_reserve(&self, reserve_score: f64) -> Self {
        let mut m = self.clone();
        m.reserve_score = reserve_score;
        m
    }

    pub fn with_auctions_per_day(&self, auctions_per_day: u32) -> Self {
        let mut m = self.clone();
        m.auctions_per_day = auctions_per_day.max(1);
        m
    }
}

/// Support a sampled quantity must stay inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub low: f64,
    pub high: f64,
}

impl Support {
    pub const UNIT: Support = Support {
        low: 0.0,
        high: 1.0,
    };
    pub const POSITIVE: Support = Support {
        low: 0.0,
        high: f64::INFINITY,
    };
    pub const REAL: Support = Support {
        low: f64::NEG_INFINITY,
        high: f64::INFINITY,
    };

    fn contains(&self, other: &Support) -> bool {
        other.low >= self.low && other.high <= self.high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub dist: DistSpec,
}

/// A one-dimensional distribution family with parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistSpec {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    LogNormal { median: f64, sigma: f64 },
    Beta { alpha: f64, beta: f64 },
    Clamped { dist: Box<DistSpec>, low: f64, high: f64 },
    Mixture { components: Vec<MixtureComponent> },
}

impl DistSpec {
    fn check_params(&self) -> Result<(), String> {
        let ok = match self {
            Self::Fixed { value } => value.is_finite(),
            Self::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Self::Normal { mean, sd } => mean.is_finite() && *sd >= 0.0 && sd.is_finite(),
            Self::LogNormal { median, sigma } => {
                *median > 0.0 && median.is_finite() && *sigma >= 0.0 && sigma.is_finite()
            }
            Self::Beta { alpha, beta } => *alpha > 0.0 && *beta > 0.0,
            Self::Clamped { dist, low, high } => {
                dist.check_params()?;
                low <= high && !low.is_nan() && !high.is_nan()
            }
            Self::Mixture { components } => {
                for c in components {
                    c.dist.check_params()?;
                }
                !components.is_empty()
                    && components.iter().all(|c| c.weight >= 0.0 && c.weight.is_finite())
                    && components.iter().any(|c| c.weight > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid parameters for {self:?}"))
        }
    }

    pub fn support(&self) -> Support {
        match self {
            Self::Fixed { value } => Support {
                low: *value,
                high: *value,
            },
            Self::Uniform { low, high } => Support {
                low: *low,
                high: *high,
            },
            Self::Normal { mean, sd } if *sd == 0.0 => Support {
                low: *mean,
                high: *mean,
            },
            Self::Normal { .. } => Support::REAL,
            Self::LogNormal { .. } => Support::POSITIVE,
            Self::Beta { .. } => Support::UNIT,
            Self::Clamped { dist, low, high } => {
                let s = dist.support();
                Support {
                    low: s.low.max(*low),
                    high: s.high.min(*high),
                }
            }
            Self::Mixture { components } => components
                .iter()
                .filter(|c| c.weight > 0.0)
                .map(|c| c.dist.support())
                .fold(
                    Support {
                        low: f64::INFINITY,
                        high: f64::NEG_INFINITY,
                    },
                    |a, s| Support {
                        low: a.low.min(s.low),
                        high: a.high.max(s.high),
                    },
                ),
        }
    }

    /// Check parameters and that every draw lands in `within`.
    pub fn validate(&self, field: &str, within: Support) -> Result<(), MarketError> {
        self.check_params().map_err(|reason| MarketError::Config {
            field: field.to_string(),
            reason,
        })?;
        let s = self.support();
        if !within.contains(&s) {
            return Err(MarketError::Config {
                field: field.to_string(),
                reason: format!(
                    "support [{}, {}] not within [{}, {}]",
                    s.low, s.high, within.low, within.high
                ),
            });
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Fixed { value } => *value,
            Self::Uniform { low, high } if low == high => *low,
            Self::Uniform { low, high } => Uniform::new(*low, *high).unwrap().sample(rng),
            Self::Normal { mean, sd } => Normal::new(*mean, *sd).unwrap().sample(rng),
            Self::LogNormal { median, sigma } => {
                LogNormal::new(median.ln(), *sigma).unwrap().sample(rng)
            }
            Self::Beta { alpha, beta } => Beta::new(*alpha, *beta).unwrap().sample(rng),
            Self::Clamped { dist, low, high } => dist.sample(rng).clamp(*low, *high),
            Self::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut u = rng.random::<f64>() * total;
                for c in components {
                    if u < c.weight {
                        return c.dist.sample(rng);
                    }
                    u -= c.weight;
                }
                components
                    .iter()
                    .rev()
                    .find(|c| c.weight > 0.0)
                    .unwrap()
                    .dist
                    .sample(rng)
            }
        }
    }

    fn sample_count<R: Rng + ?Sized>(&self, rng: &mut R, min: u64) -> u64 {
        (self.sample(rng).round().max(0.0) as u64).max(min)
    }
}

/// Synthetic market generator settings. Defaults follow the keyword-level
/// summary statistics of a large app-store sponsored-search market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub keyword_count: usize,
    /// Auctions per keyword (rounded, at least 1).
    pub impressions_per_keyword: DistSpec,
    /// Distinct bidders per keyword (rounded, at least 1).
    pub bidders_per_keyword: DistSpec,
    /// Per-keyword probability that an eligible ad joins a given auction.
    pub participation_rate: DistSpec,
    /// Probability that a bidder is an entrant. The default puts entrants at
    /// roughly 18% of impressions under a Beta(1, 9) prior.
    pub entrant_fraction: f64,
    /// Keyword-level base conversion rate.
    pub cvr_distribution: DistSpec,
    /// Keyword-level log-sd of ad conversion rates around the base.
    pub cvr_dispersion: DistSpec,
    /// Multiplier on entrants' conversion rates.
    pub entrant_cvr_scale: f64,
    /// Keyword-level base valuation.
    pub valuation_distribution: DistSpec,
    /// Keyword-level log-sd of valuations around the base.
    pub valuation_dispersion: DistSpec,
    /// Impressions observed for incumbents before the window.
    pub incumbent_history: DistSpec,
    /// Quantile of participants' `v * mu` used as the reserve score.
    pub reserve_quantile: f64,
    /// Overrides the horizon / 7 default.
    pub auctions_per_day: Option<u32>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            keyword_count: 200,
            impressions_per_keyword: DistSpec::Clamped {
                dist: Box::new(DistSpec::LogNormal {
                    median: 1434.0,
                    sigma: 1.18,
                }),
                low: 35.0,
                high: 99_303.0,
            },
            bidders_per_keyword: DistSpec::Clamped {
                dist: Box::new(DistSpec::Normal {
                    mean: 38.2,
                    sd: 7.7,
                }),
                low: 18.0,
                high: 74.0,
            },
            participation_rate: DistSpec::Clamped {
                dist: Box::new(DistSpec::Beta {
                    alpha: 2.2,
                    beta: 5.1,
                }),
                low: 0.03,
                high: 1.0,
            },
            entrant_fraction: 0.15,
            cvr_distribution: DistSpec::Clamped {
                dist: Box::new(DistSpec::Beta {
                    alpha: 0.35,
                    beta: 15.0,
                }),
                low: 2e-4,
                high: 0.49,
            },
            cvr_dispersion: DistSpec::Uniform {
                low: 0.3,
                high: 1.0,
            },
            entrant_cvr_scale: 0.3,
            valuation_distribution: DistSpec::LogNormal {
                median: 25.0,
                sigma: 0.8,
            },
            valuation_dispersion: DistSpec::Uniform {
                low: 0.1,
                high: 1.5,
            },
            incumbent_history: DistSpec::LogNormal {
                median: 500.0,
                sigma: 1.0,
            },
            reserve_quantile: 0.1,
            auctions_per_day: None,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), MarketError> {
        let cfg = |field: &str, reason: &str| MarketError::Config {
            field: field.into(),
            reason: reason.into(),
        };
        if self.keyword_count == 0 {
            return Err(cfg("keyword_count", "must be positive"));
        }
        self.impressions_per_keyword
            .validate("impressions_per_keyword", Support::POSITIVE)?;
        self.bidders_per_keyword
            .validate("bidders_per_keyword", Support::POSITIVE)?;
        self.participation_rate
            .validate("participation_rate", Support::UNIT)?;
        self.cvr_distribution
            .validate("cvr_distribution", Support::UNIT)?;
        self.cvr_dispersion
            .validate("cvr_dispersion", Support::POSITIVE)?;
        self.valuation_distribution
            .validate("valuation_distribution", Support::POSITIVE)?;
        self.valuation_dispersion
            .validate("valuation_dispersion", Support::POSITIVE)?;
        self.incumbent_history
            .validate("incumbent_history", Support::POSITIVE)?;
        if !(0.0..=1.0).contains(&self.entrant_fraction) {
            return Err(cfg("entrant_fraction", "must be in [0, 1]"));
        }
        if !(self.entrant_cvr_scale >= 0.0 && self.entrant_cvr_scale.is_finite()) {
            return Err(cfg("entrant_cvr_scale", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.reserve_quantile) {
            return Err(cfg("reserve_quantile", "must be in [0, 1]"));
        }
        if self.auctions_per_day == Some(0) {
            return Err(cfg("auctions_per_day", "must be >= 1"));
        }
        Ok(())
    }
}

/// Generate a market set. Each keyword draws from its own ChaCha stream, so
/// keyword `k` is identical regardless of `keyword_count`.
///
/// Entrants become eligible at a uniform index in the first half of the
/// horizon and always bid in their first eligible auction; afterwards every
/// eligible ad joins each auction with the keyword's participation rate.
/// Ads that never participate are dropped.
pub fn generate_market(config: &GeneratorConfig) -> Result<Vec<KeywordMarket>, MarketError> {
    config.validate()?;
    let width = config.keyword_count.to_string().len().max(4);
    (0..config.keyword_count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64);
            generate_keyword(config, format!("kw{k:0width$}"), &mut rng)
        })
        .collect()
}

fn generate_keyword(
    config: &GeneratorConfig,
    keyword_id: String,
    rng: &mut ChaCha8Rng,
) -> Result<KeywordMarket, MarketError> {
    let horizon = config.impressions_per_keyword.sample_count(rng, 1) as u32;
    let bidders = config.bidders_per_keyword.sample_count(rng, 1) as usize;
    let rate = config.participation_rate.sample(rng);
    let base_cvr = config.cvr_distribution.sample(rng);
    let cvr_sigma = config.cvr_dispersion.sample(rng);
    let base_value = config.valuation_distribution.sample(rng);
    let value_sigma = config.valuation_dispersion.sample(rng);
    let z = Normal::new(0.0, 1.0).unwrap();
    let width = bidders.to_string().len().max(3);
    let last_entry = (horizon / 2).max(1);

    let mut ads = Vec::with_capacity(bidders);
    for i in 0..bidders {
        let entrant = rng.random::<f64>() < config.entrant_fraction;
        let valuation = base_value * (value_sigma * z.sample(rng)).exp();
        let scale = if entrant { config.entrant_cvr_scale } else { 1.0 };
        let noise = (cvr_sigma * z.sample(rng) - 0.5 * cvr_sigma * cvr_sigma).exp();
        let true_cvr = (base_cvr * noise * scale).clamp(0.0, 1.0);
        let mut ad = AdvertiserProfile::new(format!("ad{i:0width$}"), valuation, true_cvr);
        if entrant {
            ad = ad.entrant_at(rng.random_range(1..=last_entry));
        } else {
            let n = config.incumbent_history.sample_count(rng, 0);
            let c = if n == 0 {
                0
            } else {
                Binomial::new(n, true_cvr).unwrap().sample(rng)
            };
            ad = ad.with_history(n, c);
        }
        ads.push(ad);
    }
    ads.retain(|a| a.entry_auction_index < horizon);

    let mut participation = vec![Vec::new(); horizon as usize];
    for (t, list) in participation.iter_mut().enumerate() {
        let t = t as u32;
        for (i, ad) in ads.iter().enumerate() {
            if t == ad.entry_auction_index || (t > ad.entry_auction_index && rng.random::<f64>() < rate)
            {
                list.push(i);
            }
        }
    }

    let scores: Vec<f64> = ads.iter().map(AdvertiserProfile::expected_score).collect();
    let reserve = stats::quantile(&scores, config.reserve_quantile).unwrap_or(0.0);
    KeywordMarket::new(
        keyword_id,
        ads,
        reserve,
        config.auctions_per_day,
        participation,
    )
}
