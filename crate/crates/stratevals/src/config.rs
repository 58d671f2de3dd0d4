//! Declarative simulation configs.
//!
//! A config is one TOML file describing the generating distributions, the
//! horizon, the methods to compare, and the replication count. Ready-made
//! configs for the shipped experiments live under `configs/` at the
//! repository root.
//!
//! ```toml
//! kind = "test"
//! alpha = 0.05
//! seed = 20230
//! replications = 1000
//!
//! [design]
//! n_a = 1
//! n_b = 1
//!
//! [[strata]]
//! theta_a = 0.1
//! theta_b = 0.15
//! blocks = 40
//!
//! [[methods]]
//! name = "multiply"
//! combiner = "multiply"
//! crosstalk = "none"
//! ```

use serde::Deserialize;
use stratevals_core::confseq::StratumWeights;
use stratevals_core::eprocess::CombinerSpec;
use stratevals_core::ingest::Schedule;
use stratevals_core::learners::{BetaPrior, CrossTalkMode};
use stratevals_core::model::{BlockDesign, ThetaPair};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimKind {
    /// Global-null tests; aggregates report power.
    Test,
    /// Confidence sequences; aggregates report mean widths.
    Confseq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    RoundRobin,
    RandomUniform,
}

impl From<ScheduleKind> for Schedule {
    fn from(kind: ScheduleKind) -> Self {
        match kind {
            ScheduleKind::RoundRobin => Schedule::RoundRobin,
            ScheduleKind::RandomUniform => Schedule::RandomUniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum CombinerKind {
    #[default]
    Multiply,
    Mixture,
    PseudoBayes,
    Switch,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum CrossTalkKind {
    #[default]
    None,
    Odds,
    ControlRate,
    Mix,
}

impl From<CrossTalkKind> for CrossTalkMode {
    fn from(kind: CrossTalkKind) -> Self {
        match kind {
            CrossTalkKind::None => CrossTalkMode::None,
            CrossTalkKind::Odds => CrossTalkMode::Odds,
            CrossTalkKind::ControlRate => CrossTalkMode::ControlRate,
            CrossTalkKind::Mix => CrossTalkMode::Mix,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum TargetKind {
    PerStratum,
    Min,
    Max,
    Mean,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub n_a: u32,
    pub n_b: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumConfig {
    pub theta_a: f64,
    pub theta_b: f64,
    pub blocks: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchPriorConfig {
    pub lo: usize,
    pub hi: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    #[serde(default)]
    pub combiner: CombinerKind,
    #[serde(default)]
    pub crosstalk: CrossTalkKind,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub switch_at: Option<usize>,
    #[serde(default)]
    pub switch_prior: Option<SwitchPriorConfig>,
    /// Erase strata labels and run a single pooled e-process.
    #[serde(default)]
    pub unstratified: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfseqSection {
    pub target: TargetKind,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub split_alpha: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub kind: SimKind,
    pub alpha: f64,
    pub seed: u64,
    pub replications: u32,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub prior: Option<PriorConfig>,
    pub design: DesignConfig,
    pub strata: Vec<StratumConfig>,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub confseq: Option<ConfseqSection>,
}

fn default_grid_step() -> f64 {
    0.01
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: SimConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", "must lie in (0, 1)"));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 1.0) {
            return Err(invalid("grid_step", "must lie in (0, 1]"));
        }
        if self.design.n_a < 1 {
            return Err(invalid("design.n_a", "must be at least 1"));
        }
        if self.design.n_b < 1 {
            return Err(invalid("design.n_b", "must be at least 1"));
        }
        if self.strata.is_empty() {
            return Err(invalid("strata", "need at least one stratum"));
        }
        for (k, stratum) in self.strata.iter().enumerate() {
            for (field, value) in [("theta_a", stratum.theta_a), ("theta_b", stratum.theta_b)] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(invalid(
                        format!("strata[{k}].{field}"),
                        "must lie in [0, 1]",
                    ));
                }
            }
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "need at least one method"));
        }
        let horizon = self.horizon();
        for (i, method) in self.methods.iter().enumerate() {
            let path = format!("methods[{i}]");
            if method.name.is_empty() {
                return Err(invalid(format!("{path}.name"), "must not be empty"));
            }
            if let Some(eta) = method.eta {
                if method.combiner != CombinerKind::PseudoBayes {
                    return Err(invalid(
                        format!("{path}.eta"),
                        "only applies to the pseudo-bayes combiner",
                    ));
                }
                if eta <= 0.0 {
                    return Err(invalid(format!("{path}.eta"), "must be positive"));
                }
            }
            if method.combiner != CombinerKind::Switch
                && (method.switch_at.is_some() || method.switch_prior.is_some())
            {
                return Err(invalid(
                    format!("{path}.switch_at"),
                    "switch parameters only apply to the switch combiner",
                ));
            }
            if method.switch_at.is_some() && method.switch_prior.is_some() {
                return Err(invalid(
                    format!("{path}.switch_at"),
                    "give either switch_at or switch_prior, not both",
                ));
            }
            if let Some(sp) = method.switch_prior {
                if sp.lo < 1 || sp.lo > sp.hi {
                    return Err(invalid(
                        format!("{path}.switch_prior"),
                        "needs 1 <= lo <= hi",
                    ));
                }
            }
            if let Some(at) = method.switch_at {
                if at < 1 {
                    return Err(invalid(format!("{path}.switch_at"), "must be at least 1"));
                }
            }
            let _ = horizon;
        }
        if let Some(prior) = self.prior {
            if prior.alpha <= 0.0 || prior.beta <= 0.0 {
                return Err(invalid("prior", "pseudo-counts must be positive"));
            }
        }
        match self.kind {
            SimKind::Confseq => {
                let confseq = self
                    .confseq
                    .as_ref()
                    .ok_or_else(|| invalid("confseq", "required when kind = \"confseq\""))?;
                if confseq.target == TargetKind::Mean {
                    let weights = confseq.weights.as_ref().ok_or_else(|| {
                        invalid("confseq.weights", "required for the mean target")
                    })?;
                    validate_weights(weights, self.strata.len())?;
                } else if confseq.weights.is_some() {
                    return Err(invalid(
                        "confseq.weights",
                        "only applies to the mean target",
                    ));
                }
            }
            SimKind::Test => {
                if self.confseq.is_some() {
                    return Err(invalid("confseq", "only applies when kind = \"confseq\""));
                }
            }
        }
        Ok(())
    }

    /// Total number of blocks over all strata.
    pub fn horizon(&self) -> usize {
        self.strata.iter().map(|s| s.blocks).sum()
    }

    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn theta(&self) -> Vec<ThetaPair> {
        self.strata.iter().map(|s| ThetaPair::new(s.theta_a, s.theta_b)).collect()
    }

    pub fn blocks_per_stratum(&self) -> Vec<usize> {
        self.strata.iter().map(|s| s.blocks).collect()
    }

    pub fn block_design(&self) -> BlockDesign {
        BlockDesign::new(self.design.n_a, self.design.n_b)
    }

    pub fn beta_prior(&self) -> BetaPrior {
        match self.prior {
            Some(p) => BetaPrior::new(p.alpha, p.beta),
            None => BetaPrior::default(),
        }
    }

    pub fn stratum_weights(&self) -> Option<StratumWeights> {
        self.confseq
            .as_ref()
            .and_then(|c| c.weights.as_ref())
            .map(|w| StratumWeights::new(w.clone()))
    }
}

pub fn validate_weights(weights: &[f64], n_strata: usize) -> Result<(), ConfigError> {
    if weights.len() != n_strata {
        return Err(invalid(
            "confseq.weights",
            format!("expected {n_strata} weights, found {}", weights.len()),
        ));
    }
    if weights.iter().any(|w| *w < 0.0) {
        return Err(invalid("confseq.weights", "weights must be nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(invalid(
            "confseq.weights",
            format!("weights must sum to 1, got {total}"),
        ));
    }
    Ok(())
}

/// Resolve a method's combiner against the stratum count and horizon. A
/// switch combiner without explicit parameters defaults to a uniform prior on
/// switch times `5 ..= horizon - 5` (clamped to at least `{1}` on very short
/// horizons).
pub fn build_combiner(
    method: &MethodConfig,
    n_strata: usize,
    horizon: Option<usize>,
) -> Result<CombinerSpec, ConfigError> {
    build_combiner_parts(
        method.combiner,
        method.eta,
        method.switch_at,
        method.switch_prior.map(|sp| (sp.lo, sp.hi)),
        n_strata,
        horizon,
    )
    .map_err(|message| invalid(format!("methods.{}", method.name), message))
}

/// Combiner resolution shared with the CLI flags.
pub fn build_combiner_parts(
    kind: CombinerKind,
    eta: Option<f64>,
    switch_at: Option<usize>,
    switch_prior: Option<(usize, usize)>,
    n_strata: usize,
    horizon: Option<usize>,
) -> Result<CombinerSpec, String> {
    let spec = match kind {
        CombinerKind::Multiply => CombinerSpec::Multiply,
        CombinerKind::Mixture => CombinerSpec::mixture_uniform(n_strata),
        CombinerKind::PseudoBayes => {
            CombinerSpec::pseudo_bayes_uniform(n_strata, eta.unwrap_or(1.0))
        }
        CombinerKind::Switch => match (switch_at, switch_prior) {
            (Some(at), None) => CombinerSpec::switch_at(n_strata, at),
            (None, Some((lo, hi))) => CombinerSpec::switch_uniform_prior(n_strata, lo, hi),
            (None, None) => {
                let horizon = horizon.ok_or_else(|| {
                    "switch needs --switch-at or --switch-prior when the horizon is unknown"
                        .to_string()
                })?;
                let lo = 5.min(horizon.max(1));
                let hi = horizon.saturating_sub(5).max(lo);
                CombinerSpec::switch_uniform_prior(n_strata, lo.max(1), hi)
            }
            (Some(_), Some(_)) => {
                return Err("give either switch_at or switch_prior, not both".to_string())
            }
        },
        CombinerKind::Min => CombinerSpec::Min,
    };
    Ok(spec)
}
