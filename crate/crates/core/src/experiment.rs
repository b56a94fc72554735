//! Experiment specs, pipelines and manifests behind the command-line tool.
//!
//! An experiment is one TOML file. Every run writes its artifacts plus a
//! `manifest.json` holding the resolved spec (with the market inlined when it
//! came from a generator), its hash, the seed, all module defaults and the
//! sha256 of every output. Re-running from a manifest reproduces the
//! artifacts byte for byte at any worker count.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{self, Normalization};
use crate::auction_log;
use crate::defaults;
use crate::error::{AnalysisError, MarketError, SimError};
use crate::estimators::{self, IpsConfig, VarianceFilter};
use crate::market::{generate_market, GeneratorConfig, KeywordMarket};
use crate::mechanism::{BetaPrior, ExplorationPolicy};
use crate::sim::{self, RecordLevel, SimulationConfig, WarmStart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Generate,
    Simulate,
    Sweep,
    Frontier,
    Estimate,
    Bias,
    Caps,
}

impl std::str::FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "generate" => Self::Generate,
            "simulate" => Self::Simulate,
            "sweep" => Self::Sweep,
            "frontier" => Self::Frontier,
            "estimate" => Self::Estimate,
            "bias" => Self::Bias,
            "caps" => Self::Caps,
            _ => return Err(format!("unknown command `{s}`")),
        })
    }
}

/// Exactly one of the three fields must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicySpec {
    /// Either `prior_mean` (alpha0 = 1) or both `alpha` and `beta`.
    Ts {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prior_mean: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
    },
    Ucb { rho: f64 },
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self::Ts {
            prior_mean: None,
            alpha: Some(defaults::DATA_PRIOR_ALPHA),
            beta: Some(defaults::DATA_PRIOR_BETA),
        }
    }
}

impl PolicySpec {
    pub fn resolve(&self) -> Result<ExplorationPolicy, String> {
        let p = match *self {
            Self::Ts {
                prior_mean: Some(m),
                alpha: None,
                beta: None,
            } => ExplorationPolicy::ts_prior_mean(m).map_err(|e| e.to_string())?,
            Self::Ts {
                prior_mean: None,
                alpha: Some(a),
                beta: Some(b),
            } => ExplorationPolicy::ts_uniform(BetaPrior::new(a, b).map_err(|e| e.to_string())?),
            Self::Ts { .. } => {
                return Err("give either prior_mean or both alpha and beta".into())
            }
            Self::Ucb { rho } => ExplorationPolicy::Ucb { rho },
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub replications: u32,
    pub budget_caps: bool,
    pub warm_start: WarmStart,
    pub record_level: RecordLevel,
    pub allow_exploratory: bool,
    pub impression_caps: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            replications: 1,
            budget_caps: false,
            warm_start: WarmStart::History,
            record_level: RecordLevel::Aggregate,
            allow_exploratory: false,
            impression_caps: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Defaults to 13 log-spaced means over [1e-4, 0.1].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_means: Option<Vec<f64>>,
    /// Defaults to 21 points on [0, 1].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<f64>>,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSpec {
    /// Also compute IPS estimates under `policy` as the logging policy.
    pub ips: bool,
    pub mc_samples: usize,
    pub propensity_floor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_posterior_variance: Option<f64>,
}

impl Default for EstimateSpec {
    fn default() -> Self {
        Self {
            ips: true,
            mc_samples: defaults::MC_SAMPLES,
            propensity_floor: defaults::PROPENSITY_FLOOR,
            max_posterior_variance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapsSpec {
    /// Multiplier on derived caps for the capped run.
    pub scale: f64,
    /// Also run the prior sweep under the scaled caps.
    pub sweep: bool,
}

impl Default for CapsSpec {
    fn default() -> Self {
        Self {
            scale: 1.0,
            sweep: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    pub market: MarketSource,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub grids: GridSpec,
    #[serde(default)]
    pub estimate: EstimateSpec,
    #[serde(default)]
    pub caps: CapsSpec,
    /// Not part of the spec hash.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    /// Not part of the spec hash.
    #[serde(default, skip_serializing)]
    pub jobs: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    /// Exit status 2.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    /// Exit status 1.
    #[error("{0}")]
    Runtime(String),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::InvalidSpec(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::InvalidSpec(format!("{field}: {reason}"))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Runtime(format!("cli-io: {}: {e}", path.display()))
}

impl From<SimError> for ExperimentError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::OutsideValidityRegion(_) | SimError::Config(_) | SimError::Caps(_) => {
                Self::InvalidSpec(e.to_string())
            }
            SimError::Mechanism { .. } => Self::Runtime(format!("sim-engine: {e}")),
        }
    }
}

impl From<AnalysisError> for ExperimentError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Sim(s) => s.into(),
            AnalysisError::Invalid(m) => Self::InvalidSpec(m),
            other => Self::Runtime(format!("analytics: {other}")),
        }
    }
}

impl From<MarketError> for ExperimentError {
    fn from(e: MarketError) -> Self {
        match e {
            MarketError::Config { .. } => Self::InvalidSpec(format!("market.generator: {e}")),
            other => Self::Runtime(format!("market-model: {other}")),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::InvalidSpec(e.to_string()))
    }

    /// Parse a spec file; relative market paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::InvalidSpec(format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut spec.market.generator_file, &mut spec.market.log]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let m = &self.market;
        let sources = [m.generator.is_some(), m.generator_file.is_some(), m.log.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(invalid(
                "market",
                "exactly one of generator, generator_file or log is required",
            ));
        }
        if let Some(g) = &m.generator {
            g.validate()?;
        }
        self.policy.resolve().map_err(|e| invalid("policy", e))?;
        if self.simulation.replications == 0 {
            return Err(invalid("simulation.replications", "must be >= 1"));
        }
        if let Some(g) = &self.grids.prior_means {
            if g.is_empty() || g.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
                return Err(invalid("grids.prior_means", "must be a nonempty list in (0, 1)"));
            }
            let max = g.iter().copied().fold(0.0, f64::max);
            if max > defaults::MAX_PRIOR_MEAN + defaults::VALIDITY_EPS
                && !self.simulation.allow_exploratory
            {
                return Err(invalid(
                    "grids.prior_means",
                    format!(
                        "{max} exceeds the validity bound {}; pass --allow-exploratory",
                        defaults::MAX_PRIOR_MEAN
                    ),
                ));
            }
        }
        if let Some(t) = &self.grids.taus {
            if t.is_empty() || t.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(invalid("grids.taus", "must be a nonempty list in [0, 1]"));
            }
        }
        if self.estimate.mc_samples == 0 {
            return Err(invalid("estimate.mc_samples", "must be >= 1"));
        }
        if !(self.estimate.propensity_floor > 0.0 && self.estimate.propensity_floor <= 1.0) {
            return Err(invalid("estimate.propensity_floor", "must be in (0, 1]"));
        }
        if !(self.caps.scale >= 0.0 && self.caps.scale.is_finite()) {
            return Err(invalid("caps.scale", "must be finite and >= 0"));
        }
        if self.jobs == Some(0) {
            return Err(invalid("jobs", "must be >= 1"));
        }
        match self.command {
            None => return Err(invalid("command", "missing")),
            Some(Command::Estimate) if m.log.is_none() => {
                return Err(invalid("market.log", "estimate needs a simulated auction log"))
            }
            _ => {}
        }
        Ok(())
    }

    fn prior_grid(&self) -> Vec<f64> {
        self.grids
            .prior_means
            .clone()
            .unwrap_or_else(defaults::prior_mean_grid)
    }

    fn tau_grid(&self) -> Vec<f64> {
        self.grids.taus.clone().unwrap_or_else(defaults::tau_grid)
    }

    fn sim_config(&self) -> Result<SimulationConfig, ExperimentError> {
        let s = &self.simulation;
        Ok(SimulationConfig {
            policy: self.policy.resolve().map_err(|e| invalid("policy", e))?,
            replications: s.replications,
            master_seed: self.seed,
            budget_caps_enabled: s.budget_caps,
            warm_start: s.warm_start,
            record_level: s.record_level,
            allow_exploratory: s.allow_exploratory,
            impression_caps_enabled: s.impression_caps,
        })
    }

    /// Canonical JSON of the spec (without `out`/`jobs`).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub spec_sha256: String,
    pub seed: u64,
    pub spec: ExperimentSpec,
    pub defaults: serde_json::Value,
    /// sha256 of the market log when the market was loaded from a file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market_log_sha256: Option<String>,
    pub allow_exploratory: bool,
    pub outside_validity_region: bool,
    pub outputs: Vec<OutputEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, ()>,
    outside: bool,
}

impl Outputs {
    fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>, ExperimentError> {
        self.files.insert(name.to_string(), ());
        let p = self.dir.join(name);
        fs::File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| io_err(&p, e))
    }

    fn write<F>(&mut self, name: &str, f: F) -> Result<(), ExperimentError>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    {
        let mut w = self.create(name)?;
        f(&mut w).map_err(|e| io_err(&self.dir.join(name), e))?;
        std::io::Write::flush(&mut w).map_err(|e| io_err(&self.dir.join(name), e))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), ExperimentError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            std::io::Write::write_all(w, b"\n")
        })
    }
}

fn file_sha256(path: &Path) -> Result<(String, u64), ExperimentError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn load_markets(spec: &mut ExperimentSpec) -> Result<(Vec<KeywordMarket>, Option<String>), ExperimentError> {
    if let Some(p) = spec.market.generator_file.take() {
        let text = fs::read_to_string(&p)
            .map_err(|e| invalid("market.generator_file", format!("{}: {e}", p.display())))?;
        let g: GeneratorConfig =
            toml::from_str(&text).map_err(|e| invalid("market.generator_file", e))?;
        g.validate()?;
        // inline so the manifest alone reproduces the run
        spec.market.generator = Some(g);
    }
    if let Some(g) = &spec.market.generator {
        return Ok((generate_market(g)?, None));
    }
    let p = spec.market.log.clone().unwrap();
    let (sha, _) = file_sha256(&p)?;
    Ok((auction_log::load_market_file(&p)?, Some(sha)))
}

/// Run an experiment, writing artifacts and the manifest into `out_dir`.
/// `jobs` sets the worker count (defaults to rayon's choice).
pub fn run(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunReport, ExperimentError> {
    let mut spec = spec.clone();
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| invalid("out", format!("{}: {e}", out_dir.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.unwrap_or(0))
        .build()
        .map_err(|e| ExperimentError::Runtime(format!("cli-io: worker pool: {e}")))?;
    pool.install(|| run_in_pool(&mut spec, out_dir))
}

fn run_in_pool(spec: &mut ExperimentSpec, out_dir: &Path) -> Result<RunReport, ExperimentError> {
    let command = spec.command.unwrap();
    let mut out = Outputs {
        dir: out_dir.to_path_buf(),
        files: BTreeMap::new(),
        outside: false,
    };
    let (markets, log_sha) = if command == Command::Estimate {
        let p = spec.market.log.clone().unwrap();
        (Vec::new(), Some(file_sha256(&p)?.0))
    } else {
        load_markets(spec)?
    };

    match command {
        Command::Generate => {
            out.write("market.csv", |w| {
                auction_log::write_market(w, &markets).map_err(std::io::Error::other)
            })?;
        }
        Command::Simulate => {
            let cfg = spec.sim_config()?;
            let run = sim::simulate_all(&markets, &cfg)?;
            out.outside |= run.outside_validity_region;
            let report = analytics::compute_outcomes(&run.trajectories)?;
            out.write("outcomes.csv", |w| analytics::write_outcomes(w, &report))?;
            out.write("thickness.csv", |w| {
                analytics::write_thickness(w, &analytics::compute_thickness(&run.trajectories))
            })?;
            out.json(
                "summary.json",
                &serde_json::json!({
                    "entrant_impression_share": run.entrant_impression_share,
                    "outside_validity_region": run.outside_validity_region,
                    "revenue": report.aggregate.revenue,
                    "efficiency": report.aggregate.efficiency,
                    "decomposition": report.aggregate.decomposition,
                    "efficient_allocation_rate": report.aggregate.efficient_allocation_rate,
                }),
            )?;
            if cfg.record_level == RecordLevel::PerAuction {
                out.write("auctions.csv", |w| {
                    auction_log::write_trajectory_log(w, &markets, &run.trajectories)
                        .map_err(std::io::Error::other)
                })?;
            }
        }
        Command::Sweep | Command::Frontier => {
            let cfg = spec.sim_config()?;
            let sweep = analytics::prior_sweep(&markets, &spec.prior_grid(), &cfg)?;
            out.outside |= sweep.iter().any(|p| p.outside_validity_region);
            write_sweep_outputs(&mut out, &sweep, "")?;
            if command == Command::Frontier {
                let f = analytics::frontier_from_sweep(
                    &sweep,
                    &spec.tau_grid(),
                    spec.grids.normalization,
                )?;
                if !analytics::is_pareto_consistent(&f.customized)
                    || !analytics::is_pareto_consistent(&f.uniform)
                {
                    return Err(ExperimentError::Runtime(
                        "analytics: emitted frontier is not Pareto-consistent".into(),
                    ));
                }
                out.write("frontier_customized.csv", |w| {
                    analytics::write_frontier(w, "customized", &f.customized)
                })?;
                out.write("frontier_uniform.csv", |w| {
                    analytics::write_frontier(w, "uniform", &f.uniform)
                })?;
                out.write("frontier_all_taus.csv", |w| {
                    analytics::write_frontier(w, "customized", &f.customized_all)
                })?;
                out.write("assignments.csv", |w| {
                    analytics::write_assignments(w, &f.customized_all)
                })?;
                out.write("dominance.csv", |w| analytics::write_dominance(w, &f.dominance))?;
            }
        }
        Command::Estimate => {
            let p = spec.market.log.clone().unwrap();
            let rows = auction_log::read_log_file(&p)?;
            let ips = if spec.estimate.ips {
                Some(IpsConfig {
                    policy: spec.policy.resolve().map_err(|e| invalid("policy", e))?,
                    mc_samples: spec.estimate.mc_samples,
                    floor: spec.estimate.propensity_floor,
                    seed: spec.seed,
                })
            } else {
                None
            };
            let filter = spec.estimate.max_posterior_variance.map(|v| VarianceFilter {
                prior: BetaPrior::data(),
                max_posterior_variance: v,
            });
            let est = estimators::estimate_all(&rows, ips.as_ref(), filter)?;
            out.write("estimates.csv", |w| estimators::write_estimates(w, &est))?;
            out.json("ips_diagnostics.json", &est.ips)?;
        }
        Command::Bias => {
            let mut cfg = spec.sim_config()?;
            cfg.record_level = RecordLevel::PerAuction;
            let run = sim::simulate_all(&markets, &cfg)?;
            out.outside |= run.outside_validity_region;
            let pooled = analytics::bias_series(&markets, &run.trajectories)?;
            let per_rep = analytics::bias_series_by_replication(&markets, &run.trajectories)?;
            out.write("bias.csv", |w| analytics::write_bias(w, &pooled))?;
            let fq: Vec<_> = per_rep.iter().map(|s| s.final_quarter_means()).collect();
            let w: Vec<f64> = fq.iter().filter_map(|x| x.0).collect();
            let nw: Vec<f64> = fq.iter().filter_map(|x| x.1).collect();
            out.json(
                "bias_summary.json",
                &serde_json::json!({
                    "entrant_impression_share": run.entrant_impression_share,
                    "final_quarter_winner_bias": analytics::Estimate::from_samples(&w),
                    "final_quarter_nonwinner_bias": analytics::Estimate::from_samples(&nw),
                }),
            )?;
        }
        Command::Caps => {
            let mut cfg = spec.sim_config()?;
            cfg.budget_caps_enabled = false;
            let reference = sim::simulate_all(&markets, &cfg)?;
            out.outside |= reference.outside_validity_region;
            let caps = sim::derive_caps(&markets, &reference.trajectories);
            out.write("caps.csv", |w| write_caps(w, &caps))?;
            let capped_markets = caps.apply(&markets, spec.caps.scale);
            cfg.budget_caps_enabled = true;
            let capped = sim::simulate_all(&capped_markets, &cfg)?;
            let base = analytics::compute_outcomes(&reference.trajectories)?;
            let with = analytics::compute_outcomes(&capped.trajectories)?;
            out.write("outcomes_uncapped.csv", |w| analytics::write_outcomes(w, &base))?;
            out.write("outcomes_capped.csv", |w| analytics::write_outcomes(w, &with))?;
            out.json(
                "caps_summary.json",
                &serde_json::json!({
                    "scale": spec.caps.scale,
                    "zero_spend_pairs": caps.zero_spend.len(),
                    "cap_exclusions": capped.trajectories.iter().map(|t| t.summary.cap_exclusions as u64).sum::<u64>(),
                    "identical_to_reference": capped.trajectories == reference.trajectories,
                }),
            )?;
            if spec.caps.sweep {
                let sweep = analytics::prior_sweep(&capped_markets, &spec.prior_grid(), &cfg)?;
                out.outside |= sweep.iter().any(|p| p.outside_validity_region);
                write_sweep_outputs(&mut out, &sweep, "capped_")?;
            }
        }
    }

    let mut outputs = Vec::new();
    for name in out.files.keys() {
        let (sha256, bytes) = file_sha256(&out.dir.join(name))?;
        outputs.push(OutputEntry {
            file: name.clone(),
            sha256,
            bytes,
        });
    }
    let manifest = Manifest {
        tool: "auctionbandit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        spec_sha256: spec.hash(),
        seed: spec.seed,
        spec: spec.clone(),
        defaults: serde_json::to_value(defaults::snapshot()).expect("defaults serialize"),
        market_log_sha256: log_sha,
        allow_exploratory: spec.simulation.allow_exploratory,
        outside_validity_region: out.outside,
        outputs,
    };
    let p = out.dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&p, text).map_err(|e| io_err(&p, e))?;
    Ok(RunReport {
        out_dir: out.dir,
        manifest,
    })
}

fn write_sweep_outputs(
    out: &mut Outputs,
    sweep: &[analytics::SweepPoint],
    prefix: &str,
) -> Result<(), ExperimentError> {
    out.write(&format!("{prefix}sweep.csv"), |w| analytics::write_sweep(w, sweep))?;
    // thickness under the least exploratory grid prior
    if let Some(p) = sweep.iter().min_by(|a, b| a.prior_mean.total_cmp(&b.prior_mean)) {
        let th = analytics::thickness_from_outcomes(&p.outcome);
        out.write(&format!("{prefix}thickness.csv"), |w| analytics::write_thickness(w, &th))?;
    }
    Ok(())
}

fn write_caps<W: std::io::Write>(w: W, caps: &sim::DerivedCaps) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["keyword_id", "ad_id", "daily_cap"])?;
    for (k, ads) in &caps.caps {
        for (a, c) in ads {
            w.write_record([k.as_str(), a.as_str(), &c.to_string()])?;
        }
    }
    w.flush()
}

/// Re-run the experiment recorded in `manifest_path` into `out_dir`.
pub fn rerun(manifest_path: &Path, out_dir: &Path, jobs: Option<usize>) -> Result<RunReport, ExperimentError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| ExperimentError::InvalidSpec(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| ExperimentError::InvalidSpec(format!("{}: {e}", manifest_path.display())))?;
    let mut spec = manifest.spec;
    spec.jobs = jobs;
    if let (Some(p), Some(expected)) = (&spec.market.log, &manifest.market_log_sha256) {
        let (sha, _) = file_sha256(p)?;
        if &sha != expected {
            return Err(ExperimentError::InvalidSpec(format!(
                "market.log {} changed since the manifest was written",
                p.display()
            )));
        }
    }
    run(&spec, out_dir)
}

/// Compare two run directories file by file against their manifests.
pub fn outputs_identical(a: &Path, b: &Path) -> Result<bool, ExperimentError> {
    let read = |d: &Path| -> Result<Manifest, ExperimentError> {
        let p = d.join(MANIFEST_FILE);
        let t = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        serde_json::from_str(&t).map_err(|e| io_err(&p, e))
    };
    let (ma, mb) = (read(a)?, read(b)?);
    if ma.outputs != mb.outputs {
        return Ok(false);
    }
    for o in &ma.outputs {
        let fa = fs::read(a.join(&o.file)).map_err(|e| io_err(a, e))?;
        let fb = fs::read(b.join(&o.file)).map_err(|e| io_err(b, e))?;
        if fa != fb {
            return Ok(false);
        }
    }
    Ok(fs::read(a.join(MANIFEST_FILE)).ok() == fs::read(b.join(MANIFEST_FILE)).ok())
}

/// Check an emitted frontier file: sorted by revenue with non-increasing
/// efficiency and no dominated rows.
pub fn check_frontier_file(path: &Path) -> Result<bool, ExperimentError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    let col = |n: &str| headers.iter().position(|h| h == n);
    let (Some(r), Some(e)) = (col("revenue"), col("efficiency")) else {
        return Ok(false);
    };
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let parse = |i: usize| rec[i].parse::<f64>().map_err(|e| io_err(path, e));
        pts.push((parse(r)?, parse(e)?));
    }
    Ok(pts
        .windows(2)
        .all(|w| w[0].0 <= w[1].0 && w[0].1 >= w[1].1 && w[0] != w[1]))
}
