//! Per-stratum e-processes and their combination into a single anytime-valid
//! test.
//!
//! Each arriving block contributes a conditional e-variable for its stratum:
//! the likelihood ratio of the estimated alternative against the KL
//! projection of that estimate onto the null set. Strata not receiving the
//! block *sleep*, contributing a factor of one. Per-stratum running products
//! `E^{(m),k}` are then combined into one e-process for the compound null:
//!
//! * **Multiply** — the product over strata; fastest growth when every
//!   stratum carries signal, but pays for strata near the null.
//! * **Mixture** — a prior-weighted convex combination of the per-block
//!   factors; a convex combination of e-variables is an e-variable.
//! * **Pseudo-Bayes** — mixture weights proportional to
//!   `π(k)·(E^{(j-1),k})^η`, shifting mass to strata that have earned
//!   evidence; `η` is a learning rate.
//! * **Switch** — mixture weights up to a switch time `j*`, then all mass on
//!   the stratum with the largest accumulated e-value; optionally averaged
//!   over a prior on `j*`.
//! * **Min** — the minimum over strata, the valid choice when the null only
//!   asserts that *some* stratum is in its null set.
//!
//! These weighting schemes come from prediction with expert advice; any
//! past-measurable weights preserve the e-process property, so monitoring may
//! stop at any block with type-I error at most `α` once the process reaches
//! `1/α` (Ville's inequality).

use alloc::vec;
use alloc::vec::Vec;

use crate::ingest::Block;
use crate::learners::{
    alternative_estimates, BetaPrior, CrossTalkMode, GroupCounts,
};
use crate::model::{
    block_log_lik, project_global_null, project_halfplane, project_rd_line, BlockCounts,
    HalfPlaneSide, ThetaPair,
};
use crate::numeric::log_sum_exp;

/// Which null set a conditional e-variable tests. The risk-difference nulls
/// take `δ ∈ [-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NullSpec {
    /// `θ_a = θ_b` in every stratum.
    Global,
    /// `θ_b − θ_a = δ`.
    RdEq(f64),
    /// `θ_b − θ_a ≥ δ`.
    RdGe(f64),
    /// `θ_b − θ_a ≤ δ`.
    RdLe(f64),
}

/// When a switch combiner commits to the leading stratum.
#[derive(Debug, Clone, PartialEq)]
pub enum SwitchTime {
    /// Switch after a fixed block count `j*` (1-based).
    At(usize),
    /// Average the fixed-time processes over a prior on `j*`.
    Weighted(Vec<(usize, f64)>),
}

/// A strata-combination scheme plus its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum CombinerSpec {
    Multiply,
    Mixture { prior: Vec<f64> },
    PseudoBayes { prior: Vec<f64>, eta: f64 },
    Switch { prior: Vec<f64>, time: SwitchTime },
    Min,
}

impl CombinerSpec {
    pub fn mixture_uniform(n_strata: usize) -> Self {
        Self::Mixture { prior: uniform_weights(n_strata) }
    }

    pub fn pseudo_bayes_uniform(n_strata: usize, eta: f64) -> Self {
        assert!(eta > 0.0, "learning rate must be positive");
        Self::PseudoBayes { prior: uniform_weights(n_strata), eta }
    }

    pub fn switch_at(n_strata: usize, j_star: usize) -> Self {
        assert!(j_star >= 1, "switch time must be at least 1");
        Self::Switch { prior: uniform_weights(n_strata), time: SwitchTime::At(j_star) }
    }

    /// Uniform prior on switch times `lo ..= hi`.
    pub fn switch_uniform_prior(n_strata: usize, lo: usize, hi: usize) -> Self {
        assert!(1 <= lo && lo <= hi, "switch prior range must satisfy 1 <= lo <= hi");
        let w = 1.0 / (hi - lo + 1) as f64;
        let times = (lo..=hi).map(|j| (j, w)).collect();
        Self::Switch { prior: uniform_weights(n_strata), time: SwitchTime::Weighted(times) }
    }
}

fn uniform_weights(n: usize) -> Vec<f64> {
    assert!(n >= 1);
    vec![1.0 / n as f64; n]
}

/// Per-stratum accumulated counts and running log e-value.
#[derive(Debug, Clone, Default)]
pub struct StratumState {
    pub counts_a: GroupCounts,
    pub counts_b: GroupCounts,
    pub log_e: f64,
    pub blocks_seen: u64,
}

/// Fresh states for `n_strata` strata.
pub fn initial_states(n_strata: usize) -> Vec<StratumState> {
    (0..n_strata).map(|_| StratumState::default()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EprocessError {
    /// Per-stratum time series passed to a combiner differ in length.
    MisalignedHistories { expected: usize, got: usize },
}

impl core::fmt::Display for EprocessError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::MisalignedHistories { expected, got } => {
                write!(f, "strata histories misaligned: expected length {expected}, got {got}")
            }
        }
    }
}

impl core::error::Error for EprocessError {}

/// Log of the conditional e-value of one block: the log-likelihood of the
/// estimated alternative minus the log-likelihood of its KL projection onto
/// the null set.
///
/// Both the alternative and the projection are clamped just inside the unit
/// square before evaluation, so the result is always finite.
pub fn conditional_evalue(theta_alt: ThetaPair, null: NullSpec, counts: &BlockCounts) -> f64 {
    let design = counts.design();
    let theta_null = match null {
        NullSpec::Global => {
            let t = project_global_null(theta_alt, design);
            ThetaPair::new(t, t)
        }
        NullSpec::RdEq(delta) => project_rd_line(theta_alt, delta, design),
        NullSpec::RdGe(delta) => project_halfplane(theta_alt, delta, HalfPlaneSide::Ge, design),
        NullSpec::RdLe(delta) => project_halfplane(theta_alt, delta, HalfPlaneSide::Le, design),
    };
    if theta_null == theta_alt {
        // Alternative already lies in the null set.
        return 0.0;
    }
    let alt = theta_alt.clamped_interior();
    let null_point = theta_null.clamped_interior();
    block_log_lik(alt, counts).expect("interior parameters have positive likelihood")
        - block_log_lik(null_point, counts).expect("interior parameters have positive likelihood")
}

fn counts_view(states: &[StratumState]) -> Vec<(GroupCounts, GroupCounts)> {
    states.iter().map(|s| (s.counts_a, s.counts_b)).collect()
}

/// Process one block: estimate the alternative from data strictly before it,
/// add the conditional e-value to the matching stratum's running log, then
/// fold the block into the counts. Other strata sleep (factor 1). Returns the
/// step's log e-value.
pub fn stratum_step(
    states: &mut [StratumState],
    block: &Block,
    mode: CrossTalkMode,
    null: NullSpec,
    prior: BetaPrior,
) -> f64 {
    let view = counts_view(states);
    let theta_alt = alternative_estimates(&view, mode, block.stratum, prior);
    let log_s = conditional_evalue(theta_alt, null, &block.counts);
    let state = &mut states[block.stratum];
    state.log_e += log_s;
    state.blocks_seen += 1;
    state.counts_a.add(
        u64::from(block.counts.successes_a()),
        u64::from(block.counts.failures_a()),
    );
    state.counts_b.add(
        u64::from(block.counts.successes_b()),
        u64::from(block.counts.failures_b()),
    );
    log_s
}

/// Per-stratum log e-value factors for every block: row `k`, column `j` holds
/// `log S^k_{j+1}`, and sleeping strata hold zero. This is the aligned input
/// the combiners consume.
pub fn collect_histories(
    blocks: &[Block],
    n_strata: usize,
    mode: CrossTalkMode,
    null: NullSpec,
    prior: BetaPrior,
) -> Vec<Vec<f64>> {
    let mut states = initial_states(n_strata);
    let mut histories = vec![vec![0.0; blocks.len()]; n_strata];
    for (j, block) in blocks.iter().enumerate() {
        let log_s = stratum_step(&mut states, block, mode, null, prior);
        histories[block.stratum][j] = log_s;
    }
    histories
}

/// Combine per-stratum histories into one e-process.
///
/// `histories[k][j]` is `log S^k_{j+1}` (zero while sleeping). The output has
/// length `M + 1` with entry `m` equal to `log E^{(m)}`; entry 0 is 0.
pub fn combine(spec: &CombinerSpec, histories: &[Vec<f64>]) -> Result<Vec<f64>, EprocessError> {
    let n_strata = histories.len();
    assert!(n_strata >= 1, "need at least one stratum");
    let len = histories[0].len();
    for h in histories {
        if h.len() != len {
            return Err(EprocessError::MisalignedHistories { expected: len, got: h.len() });
        }
    }
    let series = match spec {
        CombinerSpec::Multiply => {
            let mut out = Vec::with_capacity(len + 1);
            out.push(0.0);
            let mut total = 0.0;
            for j in 0..len {
                total += histories.iter().map(|h| h[j]).sum::<f64>();
                out.push(total);
            }
            out
        }
        CombinerSpec::Mixture { prior } => mixture_series(histories, prior),
        CombinerSpec::PseudoBayes { prior, eta } => {
            let log_prior = normalized_log_weights(prior, n_strata);
            let mut cumulative = vec![0.0; n_strata];
            let mut out = Vec::with_capacity(len + 1);
            out.push(0.0);
            let mut total = 0.0;
            for j in 0..len {
                let denom = log_sum_exp(
                    (0..n_strata).map(|k| log_prior[k] + eta * cumulative[k]),
                );
                let numer = log_sum_exp(
                    (0..n_strata).map(|k| log_prior[k] + eta * cumulative[k] + histories[k][j]),
                );
                total += numer - denom;
                out.push(total);
                for k in 0..n_strata {
                    cumulative[k] += histories[k][j];
                }
            }
            out
        }
        CombinerSpec::Switch { prior, time } => {
            let mix = mixture_series(histories, prior);
            let cums = cumulative_per_stratum(histories);
            match time {
                SwitchTime::At(j_star) => switched_series(&mix, &cums, *j_star),
                SwitchTime::Weighted(times) => {
                    assert!(!times.is_empty(), "switch prior must not be empty");
                    let total_w: f64 = times.iter().map(|(_, w)| w).sum();
                    let mut out = Vec::with_capacity(len + 1);
                    out.push(0.0);
                    let per_time: Vec<(Vec<f64>, f64)> = times
                        .iter()
                        .map(|(j, w)| (switched_series(&mix, &cums, *j), w / total_w))
                        .collect();
                    for m in 1..=len {
                        let log_e = log_sum_exp(
                            per_time
                                .iter()
                                .map(|(series, w)| crate::numeric::ln(*w) + series[m]),
                        );
                        out.push(log_e);
                    }
                    out
                }
            }
        }
        CombinerSpec::Min => {
            let cums = cumulative_per_stratum(histories);
            let mut out = Vec::with_capacity(len + 1);
            for m in 0..=len {
                out.push(
                    cums.iter().map(|c| c[m]).fold(f64::INFINITY, f64::min),
                );
            }
            out[0] = 0.0;
            out
        }
    };
    Ok(series)
}

fn normalized_log_weights(prior: &[f64], n_strata: usize) -> Vec<f64> {
    assert_eq!(prior.len(), n_strata, "prior length must match number of strata");
    let total: f64 = prior.iter().sum();
    assert!(total > 0.0 && prior.iter().all(|w| *w >= 0.0), "prior weights must be nonnegative");
    prior.iter().map(|w| crate::numeric::ln(w / total)).collect()
}

fn mixture_series(histories: &[Vec<f64>], prior: &[f64]) -> Vec<f64> {
    let n_strata = histories.len();
    let len = histories[0].len();
    let log_prior = normalized_log_weights(prior, n_strata);
    let mut out = Vec::with_capacity(len + 1);
    out.push(0.0);
    let mut total = 0.0;
    for j in 0..len {
        total += log_sum_exp((0..n_strata).map(|k| log_prior[k] + histories[k][j]));
        out.push(total);
    }
    out
}

/// Per-stratum running `log E^{(m),k}` including the `m = 0` entry.
fn cumulative_per_stratum(histories: &[Vec<f64>]) -> Vec<Vec<f64>> {
    histories
        .iter()
        .map(|h| {
            let mut c = Vec::with_capacity(h.len() + 1);
            c.push(0.0);
            let mut total = 0.0;
            for v in h {
                total += v;
                c.push(total);
            }
            c
        })
        .collect()
}

/// Fixed-time switch: mixture values up to `j*`, then continue with the
/// post-switch factors of the stratum leading at `j*` (ties broken toward the
/// lowest index).
fn switched_series(mix: &[f64], cums: &[Vec<f64>], j_star: usize) -> Vec<f64> {
    let len = mix.len() - 1;
    if j_star >= len {
        return mix.to_vec();
    }
    let mut best = 0;
    for k in 1..cums.len() {
        if cums[k][j_star] > cums[best][j_star] {
            best = k;
        }
    }
    let mut out = Vec::with_capacity(len + 1);
    out.extend_from_slice(&mix[..=j_star]);
    for m in (j_star + 1)..=len {
        out.push(mix[j_star] + (cums[best][m] - cums[best][j_star]));
    }
    out
}

/// Pseudo-posterior mixture of whole e-processes, one per cross-talk mode:
/// per block, the factors `E_ρ^{(m)} / E_ρ^{(m-1)}` are mixed with weights
/// proportional to `π(ρ)·E_ρ^{(m-1)}` (learning rate 1). With these weights
/// the product telescopes, so `E_mix^{(m)} ≥ E_ρ^{(m)} / R` for each of the
/// `R` inputs.
///
/// Inputs and output are `log E` series of length `M + 1` with entry 0 = 0.
pub fn crosstalk_mix(log_e_series: &[Vec<f64>]) -> Result<Vec<f64>, EprocessError> {
    assert!(!log_e_series.is_empty());
    let len = log_e_series[0].len();
    for s in log_e_series {
        if s.len() != len {
            return Err(EprocessError::MisalignedHistories { expected: len, got: s.len() });
        }
    }
    let log_prior = -crate::numeric::ln(log_e_series.len() as f64);
    let mut out = Vec::with_capacity(len);
    out.push(0.0);
    let mut total = 0.0;
    for m in 1..len {
        let denom = log_sum_exp(log_e_series.iter().map(|s| log_prior + s[m - 1]));
        let numer = log_sum_exp(log_e_series.iter().map(|s| log_prior + s[m]));
        total += numer - denom;
        out.push(total);
    }
    Ok(out)
}

/// Configuration of the anytime-valid global-null test.
#[derive(Debug, Clone)]
pub struct TestConfig {
    pub n_strata: usize,
    pub combiner: CombinerSpec,
    pub crosstalk: CrossTalkMode,
    pub alpha: f64,
    pub prior: BetaPrior,
}

/// Outcome of streaming blocks through a combined e-process.
#[derive(Debug, Clone)]
pub struct DecisionTrace {
    /// `log E^{(m)}` for `m = 0 ..= M`.
    pub log_e: Vec<f64>,
    /// First block count at which the process reached `1/α`, if any.
    pub rejected_at: Option<usize>,
    /// `ln(1/α)`.
    pub log_threshold: f64,
}

impl DecisionTrace {
    pub fn rejected(&self) -> bool {
        self.rejected_at.is_some()
    }

    pub fn blocks(&self) -> usize {
        self.log_e.len() - 1
    }
}

/// Run the global-null test over an ordered block stream.
///
/// The decision rule `reject once E^{(m)} ≥ 1/α` is anytime-valid: monitoring
/// may stop at any block without inflating the type-I error beyond `α`.
pub fn test_global_null(blocks: &[Block], config: &TestConfig) -> Result<DecisionTrace, EprocessError> {
    assert!(config.alpha > 0.0 && config.alpha < 1.0, "alpha must lie in (0, 1)");
    let log_e = match config.crosstalk {
        CrossTalkMode::Mix => {
            let series: Vec<Vec<f64>> =
                [CrossTalkMode::None, CrossTalkMode::Odds, CrossTalkMode::ControlRate]
                    .into_iter()
                    .map(|mode| {
                        let histories = collect_histories(
                            blocks,
                            config.n_strata,
                            mode,
                            NullSpec::Global,
                            config.prior,
                        );
                        combine(&config.combiner, &histories)
                    })
                    .collect::<Result<_, _>>()?;
            crosstalk_mix(&series)?
        }
        mode => {
            let histories =
                collect_histories(blocks, config.n_strata, mode, NullSpec::Global, config.prior);
            combine(&config.combiner, &histories)?
        }
    };
    let log_threshold = -crate::numeric::ln(config.alpha);
    let rejected_at = log_e.iter().skip(1).position(|&v| v >= log_threshold).map(|i| i + 1);
    Ok(DecisionTrace { log_e, rejected_at, log_threshold })
}
