//! Alternative-parameter estimation from past data.
//!
//! Each stratum's conditional e-variable needs estimates `(θ̆_a, θ̆_b)` of the
//! alternative, computed from data seen strictly before the current block.
//! The baseline estimator is the beta-posterior mean per group. Cross-talk
//! lets other strata inform the estimate without affecting validity (the
//! alternative may be chosen from the past in any way):
//!
//! * `Odds` — restrict the pair to the curve of a shared odds ratio, set to
//!   the pooled (strata-ignoring) maximum-likelihood odds ratio of all past
//!   data, and take the posterior mean along that curve.
//! * `ControlRate` — estimate the group-a rate from counts aggregated over
//!   all strata, so every stratum shares one control-rate estimate.
//! * `Mix` — not an estimator at all: it mixes the three resulting
//!   e-processes and lives in [`crate::eprocess`].

use alloc::vec::Vec;

use crate::model::ThetaPair;
use crate::numeric::{exp, ln, ln_1p};

/// Pseudo-counts of a beta prior.
///
/// The default `Beta(0.18, 0.18)` is used everywhere unless overridden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPrior {
    /// # Panics
    /// If either pseudo-count is not strictly positive.
    pub fn new(alpha: f64, beta: f64) -> Self {
        assert!(alpha > 0.0 && beta > 0.0, "beta prior parameters must be positive");
        Self { alpha, beta }
    }
}

impl Default for BetaPrior {
    fn default() -> Self {
        Self { alpha: 0.18, beta: 0.18 }
    }
}

/// Accumulated successes and failures of one group in one stratum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroupCounts {
    pub successes: u64,
    pub failures: u64,
}

impl GroupCounts {
    pub fn new(successes: u64, failures: u64) -> Self {
        Self { successes, failures }
    }

    pub fn add(&mut self, successes: u64, failures: u64) {
        self.successes += successes;
        self.failures += failures;
    }

    fn merged(counts: impl Iterator<Item = Self>) -> Self {
        let mut total = Self::default();
        for c in counts {
            total.add(c.successes, c.failures);
        }
        total
    }
}

/// How estimates in one stratum may use data from the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrossTalkMode {
    #[default]
    None,
    Odds,
    ControlRate,
    /// Pseudo-posterior mixture of the three modes above, applied at the
    /// e-process level; see [`crate::eprocess::crosstalk_mix`].
    Mix,
}

/// Errors from the odds-ratio-restricted posterior quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerError {
    /// The integrand is zero everywhere at working precision.
    NumericUnderflow,
}

impl core::fmt::Display for LearnerError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::NumericUnderflow => write!(f, "posterior integrand underflowed to zero"),
        }
    }
}

impl core::error::Error for LearnerError {}

/// Beta-posterior mean `(s + α) / (s + f + α + β)`; always strictly inside
/// `(0, 1)`.
pub fn posterior_mean(counts: GroupCounts, prior: BetaPrior) -> f64 {
    let s = counts.successes as f64;
    let f = counts.failures as f64;
    (s + prior.alpha) / (s + f + prior.alpha + prior.beta)
}

/// Point on the odds-ratio curve: `θ_b` such that `OR(θ_a, θ_b) = φ`.
pub fn odds_ratio_curve(theta_a: f64, phi: f64) -> f64 {
    phi * theta_a / (1.0 - theta_a + phi * theta_a)
}

/// Posterior mean restricted to the curve `{(θ_a, θ_b) : OR(θ_a, θ_b) = φ}`.
///
/// The curve is parametrised by `θ_a`, with posterior density proportional to
/// `beta-prior(θ_a) · lik(counts_a | θ_a) · lik(counts_b | θ_b(θ_a))`. The
/// mean of `θ_a` is computed by composite Simpson quadrature (1001 nodes on
/// `[1e-6, 1-1e-6]`, log-space integrand with max subtraction) and `θ̆_b` is
/// the curve value there, so the returned pair lies exactly on the curve.
pub fn posterior_mean_or_restricted(
    counts_a: GroupCounts,
    counts_b: GroupCounts,
    phi: f64,
    prior: BetaPrior,
) -> Result<ThetaPair, LearnerError> {
    assert!(phi > 0.0 && phi.is_finite(), "odds ratio must be positive and finite");
    const NODES: usize = 1001;
    const LO: f64 = 1e-6;
    const HI: f64 = 1.0 - 1e-6;

    let s_a = counts_a.successes as f64;
    let f_a = counts_a.failures as f64;
    let s_b = counts_b.successes as f64;
    let f_b = counts_b.failures as f64;
    let exp_a = prior.alpha - 1.0 + s_a;
    let exp_f = prior.beta - 1.0 + f_a;

    let h = (HI - LO) / (NODES - 1) as f64;
    let mut log_density = Vec::with_capacity(NODES);
    let mut thetas = Vec::with_capacity(NODES);
    let mut max_log = f64::NEG_INFINITY;
    for i in 0..NODES {
        let t = LO + h * i as f64;
        let tb = odds_ratio_curve(t, phi);
        let g = exp_a * ln(t) + exp_f * ln_1p(-t) + s_b * ln(tb) + f_b * ln_1p(-tb);
        max_log = max_log.max(g);
        log_density.push(g);
        thetas.push(t);
    }
    if !max_log.is_finite() {
        return Err(LearnerError::NumericUnderflow);
    }

    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for i in 0..NODES {
        let w = if i == 0 || i == NODES - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let density = w * exp(log_density[i] - max_log);
        numerator += density * thetas[i];
        denominator += density;
    }
    if denominator <= 0.0 || !denominator.is_finite() {
        return Err(LearnerError::NumericUnderflow);
    }

    let theta_a = numerator / denominator;
    Ok(ThetaPair::new(theta_a, odds_ratio_curve(theta_a, phi)))
}

/// Pooled maximum-likelihood odds ratio over all strata, ignoring strata:
/// `((S_b + ½)(F_a + ½)) / ((F_b + ½)(S_a + ½))` with the Haldane continuity
/// constant applied unconditionally, so zero cells never divide by zero.
pub fn pooled_or_mle(counts_by_stratum: &[(GroupCounts, GroupCounts)]) -> f64 {
    let a = GroupCounts::merged(counts_by_stratum.iter().map(|(a, _)| *a));
    let b = GroupCounts::merged(counts_by_stratum.iter().map(|(_, b)| *b));
    let (s_a, f_a) = (a.successes as f64, a.failures as f64);
    let (s_b, f_b) = (b.successes as f64, b.failures as f64);
    ((s_b + 0.5) * (f_a + 0.5)) / ((f_b + 0.5) * (s_a + 0.5))
}

/// Alternative estimates `(θ̆_a, θ̆_b)` for `stratum`, given per-stratum
/// `(group-a, group-b)` counts of all past data.
///
/// # Panics
/// If `mode` is [`CrossTalkMode::Mix`] (mixing happens at the e-process
/// level), or if the stratum index is out of range.
pub fn alternative_estimates(
    counts: &[(GroupCounts, GroupCounts)],
    mode: CrossTalkMode,
    stratum: usize,
    prior: BetaPrior,
) -> ThetaPair {
    let (own_a, own_b) = counts[stratum];
    match mode {
        CrossTalkMode::None => {
            ThetaPair::new(posterior_mean(own_a, prior), posterior_mean(own_b, prior))
        }
        CrossTalkMode::Odds => {
            let phi = pooled_or_mle(counts);
            posterior_mean_or_restricted(own_a, own_b, phi, prior)
                .expect("interior quadrature nodes cannot underflow")
        }
        CrossTalkMode::ControlRate => {
            let pooled_a = GroupCounts::merged(counts.iter().map(|(a, _)| *a));
            ThetaPair::new(posterior_mean(pooled_a, prior), posterior_mean(own_b, prior))
        }
        CrossTalkMode::Mix => panic!("Mix combines e-processes, not estimates"),
    }
}
