use thiserror::Error;

/// Errors raised while building, loading or validating markets.
#[derive(Debug, Error)]
pub enum MarketError {
    #[error("invalid generator config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid market `{keyword}`: {reason}")]
    Invalid { keyword: String, reason: String },

    #[error("log parse error at row {row}: {reason}")]
    Parse { row: u64, reason: String },

    #[error("keyword `{keyword}` references ad `{ad}` that is never defined: {reason}")]
    Referential {
        keyword: String,
        ad: String,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Contract violations inside the auction mechanism.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MechanismError {
    #[error("allocation requires at least one bid")]
    EmptyBids,

    #[error("payment undefined for a winner with zero quality score")]
    UndefinedPayment,

    #[error("conversion reported for an ad that did not win")]
    ConversionWithoutWin,

    #[error("belief state has more conversions ({conversions}) than impressions ({impressions})")]
    InvalidBelief { impressions: u64, conversions: u64 },

    #[error("invalid exploration policy: {0}")]
    InvalidPolicy(String),
}

/// Errors from the simulation engine.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("keyword `{keyword}`, auction {auction}: {source}")]
    Mechanism {
        keyword: String,
        auction: u32,
        #[source]
        source: MechanismError,
    },

    #[error("invalid simulation config: {0}")]
    Config(String),

    #[error("policy outside the validity region: {0} (pass allow_exploratory to override)")]
    OutsideValidityRegion(String),

    #[error("budget caps requested but {0}")]
    Caps(String),
}

/// Errors from the estimators and analytics layer.
#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("unusable log: {0}")]
    UnusableLog(String),

    #[error("insufficient detail: {0}")]
    InsufficientDetail(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Sim(#[from] SimError),
}
