//! Monte-Carlo counterfactuals for second-price sponsored-search auctions
//! whose quality scores are learned online by Thompson Sampling or UCB.

pub mod analytics;
pub mod auction_log;
pub mod defaults;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod market;
pub mod mechanism;
pub mod sim;
pub mod stats;

pub use error::{AnalysisError, MarketError, MechanismError, SimError};
pub use market::{generate_market, AdvertiserProfile, DistSpec, GeneratorConfig, KeywordMarket};
pub use mechanism::{
    allocate, allocation_probability, payment, ts_quality_score, ucb_quality_score,
    update_belief, BeliefState, BetaPrior, ExplorationPolicy, PriceSetter, ScoreRule, ScoredBid,
    TsPriors,
};
pub use sim::{
    derive_caps, simulate_all, simulate_keyword, simulate_with_caps, RecordLevel,
    SimulationConfig, SimulationRun, Trajectory, WarmStart,
};
