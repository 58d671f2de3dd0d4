//! Grid-based anytime-valid confidence sequences for the risk difference.
//!
//! Every sequence here inverts a family of e-processes: a candidate effect
//! `δ` stays in the confidence set until the e-process testing its null has
//! reached `1/α`. Because each e-process is anytime-valid, so is the set, and
//! the running intersection over time keeps coverage while making intervals
//! monotone.
//!
//! Variants:
//!
//! * [`cs_per_stratum`] — one two-sided sequence per stratum, from the nulls
//!   `θ_b − θ_a = δ`; other strata may still inform the estimates through
//!   cross-talk.
//! * [`cs_min_upper`] / [`cs_min_lower`] / [`cs_min_two_sided`] — one-sided
//!   bounds on the *minimum* effect over strata. The upper bound tests
//!   `∀k: θ_b − θ_a ≥ δ` with any strata combiner; the lower bound tests
//!   `∃k: θ_b − θ_a ≤ δ`, for which the minimum of the per-stratum
//!   e-processes is a valid e-variable. Maximum-effect variants follow by
//!   flipping all outcomes.
//! * [`cs_mean_effect`] — a sequence for the population-weighted mean effect
//!   `Σ_k π_k δ_k`, via universal inference: the e-value for a mean `δ*` is
//!   the minimum of `Σ_k log E^{(m),k}(δ_k)` over all per-stratum effect
//!   vectors consistent with `δ*`.
//!
//! Effects live on a uniform grid over `[-1, 1]`. Reported bounds are
//! quantized by one grid step so that grid resolution cannot silently change
//! which effects are claimed in or out.

use alloc::vec;
use alloc::vec::Vec;

use crate::eprocess::{combine, conditional_evalue, initial_states, CombinerSpec, NullSpec};
use crate::ingest::{flip_outcomes, Block};
use crate::learners::{alternative_estimates, BetaPrior, CrossTalkMode};
use crate::model::{block_log_lik, BlockCounts, ThetaPair};
use crate::numeric::{ln, log_sum_exp};

/// Which risk-difference null family a grid of e-processes indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullFamily {
    RdEq,
    RdGe,
    RdLe,
}

impl NullFamily {
    pub fn at(self, delta: f64) -> NullSpec {
        match self {
            Self::RdEq => NullSpec::RdEq(delta),
            Self::RdGe => NullSpec::RdGe(delta),
            Self::RdLe => NullSpec::RdLe(delta),
        }
    }
}

/// A uniform effect grid over `[-1, 1]`.
///
/// The requested step is snapped to `2 / round(2 / step)` so the endpoints
/// are exactly representable grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaGrid {
    intervals: usize,
    deltas: Vec<f64>,
}

impl DeltaGrid {
    /// # Panics
    /// If `step` is not in `(0, 1]`.
    pub fn with_step(step: f64) -> Self {
        assert!(step > 0.0 && step <= 1.0, "grid step must lie in (0, 1]");
        let intervals = libm::round(2.0 / step) as usize;
        let deltas = (0..=intervals)
            .map(|i| (2 * i) as f64 / intervals as f64 - 1.0)
            .collect();
        Self { intervals, deltas }
    }

    pub fn step(&self) -> f64 {
        2.0 / self.intervals as f64
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear interpolation of a per-grid-point curve at `x`, with exact
    /// lookup when `x` sits on a grid point.
    fn interp(&self, curve: &[f64], x: f64) -> f64 {
        debug_assert_eq!(curve.len(), self.deltas.len());
        let position = (x + 1.0) * self.intervals as f64 / 2.0;
        let clamped = position.max(0.0).min(self.intervals as f64);
        let nearest = libm::round(clamped);
        if crate::numeric::abs(clamped - nearest) < 1e-9 {
            return curve[nearest as usize];
        }
        let low = libm::floor(clamped) as usize;
        let frac = clamped - low as f64;
        curve[low] * (1.0 - frac) + curve[low + 1] * frac
    }
}

impl Default for DeltaGrid {
    fn default() -> Self {
        Self::with_step(0.01)
    }
}

/// A δ-grid of accumulated log e-values against one null family, for one
/// stratum. The backbone of every confidence sequence.
#[derive(Debug, Clone)]
pub struct CsGrid {
    family: NullFamily,
    grid: DeltaGrid,
    log_e: Vec<f64>,
}

impl CsGrid {
    pub fn new(family: NullFamily, grid: DeltaGrid) -> Self {
        let log_e = vec![0.0; grid.len()];
        Self { family, grid, log_e }
    }

    pub fn log_e(&self) -> &[f64] {
        &self.log_e
    }

    /// Fold one block into every per-δ e-process, using the alternative
    /// estimate computed from data strictly before the block. The alternative
    /// log-likelihood is shared across the grid; only the projection depends
    /// on δ.
    pub fn update(&mut self, theta_alt: ThetaPair, counts: &BlockCounts) {
        self.update_masked(theta_alt, counts, None);
    }

    /// [`CsGrid::update`] restricted to grid points where `active` is true;
    /// entries already rejected by a caller need no further accumulation.
    pub fn update_masked(
        &mut self,
        theta_alt: ThetaPair,
        counts: &BlockCounts,
        active: Option<&[bool]>,
    ) {
        let alt_ll = block_log_lik(theta_alt.clamped_interior(), counts)
            .expect("interior parameters have positive likelihood");
        for (i, &delta) in self.grid.deltas().iter().enumerate() {
            if active.map_or(true, |mask| mask[i]) {
                self.log_e[i] += step_log_e(self.family, delta, theta_alt, alt_ll, counts);
            }
        }
    }
}

fn step_log_e(
    family: NullFamily,
    delta: f64,
    theta_alt: ThetaPair,
    alt_ll: f64,
    counts: &BlockCounts,
) -> f64 {
    use crate::model::{project_halfplane, project_rd_line, HalfPlaneSide};
    let design = counts.design();
    let theta_null = match family {
        NullFamily::RdEq => project_rd_line(theta_alt, delta, design),
        NullFamily::RdGe => project_halfplane(theta_alt, delta, HalfPlaneSide::Ge, design),
        NullFamily::RdLe => project_halfplane(theta_alt, delta, HalfPlaneSide::Le, design),
    };
    if theta_null == theta_alt {
        return 0.0;
    }
    alt_ll
        - block_log_lik(theta_null.clamped_interior(), counts)
            .expect("interior parameters have positive likelihood")
}

/// One element of a confidence sequence. An empty set is flagged rather than
/// hidden; its bounds are the degenerate pair `(1, -1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsInterval {
    /// Block index this interval reflects (0 = no data yet).
    pub time: usize,
    pub lower: f64,
    pub upper: f64,
    pub empty: bool,
}

impl CsInterval {
    pub fn new(time: usize, lower: f64, upper: f64) -> Self {
        if lower > upper {
            Self::empty_at(time)
        } else {
            Self { time, lower, upper, empty: false }
        }
    }

    pub fn full(time: usize) -> Self {
        Self { time, lower: -1.0, upper: 1.0, empty: false }
    }

    pub fn empty_at(time: usize) -> Self {
        Self { time, lower: 1.0, upper: -1.0, empty: true }
    }

    pub fn width(&self) -> f64 {
        if self.empty {
            0.0
        } else {
            self.upper - self.lower
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        !self.empty && self.lower <= value && value <= self.upper
    }

    fn intersect(&self, other: &CsInterval) -> CsInterval {
        if self.empty || other.empty {
            return CsInterval::empty_at(other.time);
        }
        CsInterval::new(other.time, self.lower.max(other.lower), self.upper.min(other.upper))
    }
}

/// Population proportions per stratum; nonnegative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumWeights {
    pi: Vec<f64>,
}

impl StratumWeights {
    /// # Panics
    /// If weights are empty, negative, or do not sum to 1 within `1e-6`.
    pub fn new(pi: Vec<f64>) -> Self {
        assert!(!pi.is_empty(), "need at least one stratum weight");
        assert!(pi.iter().all(|w| *w >= 0.0), "stratum weights must be nonnegative");
        let total: f64 = pi.iter().sum();
        assert!(
            crate::numeric::abs(total - 1.0) <= 1e-6,
            "stratum weights must sum to 1, got {total}"
        );
        let pi = pi.iter().map(|w| w / total).collect();
        Self { pi }
    }

    pub fn uniform(n_strata: usize) -> Self {
        Self::new(vec![1.0 / n_strata as f64; n_strata])
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfseqError {
    /// No per-stratum effect vector satisfies the mean constraint.
    InfeasibleConstraint,
    /// Every grid effect was rejected; possible under model misspecification.
    EmptyConfidenceSet { at: usize },
}

impl core::fmt::Display for ConfseqError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::InfeasibleConstraint => {
                write!(f, "no effect vector satisfies the weighted mean constraint")
            }
            Self::EmptyConfidenceSet { at } => {
                write!(f, "confidence set became empty at block {at}")
            }
        }
    }
}

impl core::error::Error for ConfseqError {}

/// First time at which a sequence is empty, if ever.
pub fn first_empty(series: &[CsInterval]) -> Option<usize> {
    series.iter().find(|iv| iv.empty).map(|iv| iv.time)
}

/// Surface an empty confidence set as a typed error.
pub fn check_nonempty(series: &[CsInterval]) -> Result<(), ConfseqError> {
    match first_empty(series) {
        Some(at) => Err(ConfseqError::EmptyConfidenceSet { at }),
        None => Ok(()),
    }
}

/// Replace each interval by the intersection of all intervals up to it.
/// Output widths are non-increasing; empty sets are absorbing.
pub fn running_intersection(series: &[CsInterval]) -> Vec<CsInterval> {
    let mut out = Vec::with_capacity(series.len());
    let mut current: Option<CsInterval> = None;
    for interval in series {
        let next = match &current {
            None => *interval,
            Some(prev) => prev.intersect(interval),
        };
        current = Some(next);
        out.push(next);
    }
    out
}

fn log_threshold(alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    -ln(alpha)
}

fn counts_of(states: &[crate::eprocess::StratumState]) -> Vec<(crate::learners::GroupCounts, crate::learners::GroupCounts)> {
    states.iter().map(|s| (s.counts_a, s.counts_b)).collect()
}

fn fold_block(states: &mut [crate::eprocess::StratumState], block: &Block) {
    let state = &mut states[block.stratum];
    state.blocks_seen += 1;
    state.counts_a.add(
        u64::from(block.counts.successes_a()),
        u64::from(block.counts.failures_a()),
    );
    state.counts_b.add(
        u64::from(block.counts.successes_b()),
        u64::from(block.counts.failures_b()),
    );
}

/// Interval hull of the surviving grid points, widened by one grid step per
/// side so quantization errs toward wider sets.
fn survivor_hull(time: usize, rejected: &[bool], grid: &DeltaGrid) -> CsInterval {
    let mut low = None;
    let mut high = None;
    for (i, r) in rejected.iter().enumerate() {
        if !*r {
            if low.is_none() {
                low = Some(i);
            }
            high = Some(i);
        }
    }
    match (low, high) {
        (Some(lo), Some(hi)) => {
            let step = grid.step();
            CsInterval::new(
                time,
                (grid.deltas()[lo] - step).max(-1.0),
                (grid.deltas()[hi] + step).min(1.0),
            )
        }
        _ => CsInterval::empty_at(time),
    }
}

/// Two-sided confidence sequence for the risk difference in one stratum.
///
/// Every block updates the cross-talk counts, but only the target stratum's
/// blocks move its e-processes; the sequence is reported on the global block
/// clock, so it stays flat while other strata collect data. Element 0 is the
/// full interval. With [`CrossTalkMode::Mix`], the three cross-talk
/// e-processes are mixed per δ with uniform prior mass.
pub fn cs_per_stratum(
    blocks: &[Block],
    n_strata: usize,
    stratum: usize,
    mode: CrossTalkMode,
    prior: BetaPrior,
    alpha: f64,
    grid: &DeltaGrid,
) -> Vec<CsInterval> {
    let threshold = log_threshold(alpha);
    let modes: Vec<CrossTalkMode> = match mode {
        CrossTalkMode::Mix => {
            vec![CrossTalkMode::None, CrossTalkMode::Odds, CrossTalkMode::ControlRate]
        }
        single => vec![single],
    };
    let mut grids: Vec<CsGrid> =
        modes.iter().map(|_| CsGrid::new(NullFamily::RdEq, grid.clone())).collect();
    let mut states = initial_states(n_strata);
    let mut rejected = vec![false; grid.len()];
    let mut series = Vec::with_capacity(blocks.len() + 1);
    series.push(CsInterval::full(0));

    let log_uniform = -ln(modes.len() as f64);
    let mut active = vec![true; grid.len()];
    for (j, block) in blocks.iter().enumerate() {
        if block.stratum == stratum {
            let view = counts_of(&states);
            for (cs, m) in grids.iter_mut().zip(&modes) {
                let theta_alt = alternative_estimates(&view, *m, stratum, prior);
                cs.update_masked(theta_alt, &block.counts, Some(&active));
            }
            for i in 0..grid.len() {
                if !rejected[i] {
                    let mixed =
                        log_sum_exp(grids.iter().map(|cs| log_uniform + cs.log_e()[i]));
                    if mixed >= threshold {
                        rejected[i] = true;
                        active[i] = false;
                    }
                }
            }
        }
        fold_block(&mut states, block);
        series.push(survivor_hull(j + 1, &rejected, grid));
    }
    running_intersection(&series)
}

/// Per-δ, per-stratum log e-value factors against one null family, with
/// cross-talk-free estimates. Index order: `[grid point][stratum][block]`.
/// Shared by the min-effect bounds so several combiners can reuse one pass.
pub fn per_delta_histories(
    blocks: &[Block],
    n_strata: usize,
    family: NullFamily,
    prior: BetaPrior,
    grid: &DeltaGrid,
) -> Vec<Vec<Vec<f64>>> {
    let mut histories = vec![vec![vec![0.0; blocks.len()]; n_strata]; grid.len()];
    let mut states = initial_states(n_strata);
    for (j, block) in blocks.iter().enumerate() {
        let view = counts_of(&states);
        let theta_alt = alternative_estimates(&view, CrossTalkMode::None, block.stratum, prior);
        let alt_ll = block_log_lik(theta_alt.clamped_interior(), &block.counts)
            .expect("interior parameters have positive likelihood");
        for (i, &delta) in grid.deltas().iter().enumerate() {
            let log_s = step_log_e(family, delta, theta_alt, alt_ll, &block.counts);
            if log_s != 0.0 {
                histories[i][block.stratum][j] = log_s;
            }
        }
        fold_block(&mut states, block);
    }
    histories
}

/// First block count at which each per-δ combined e-process reaches `1/α`.
fn crossing_times(
    histories: &[Vec<Vec<f64>>],
    combiner: &CombinerSpec,
    alpha: f64,
) -> Vec<Option<usize>> {
    let threshold = log_threshold(alpha);
    histories
        .iter()
        .map(|per_stratum| {
            let series = combine(combiner, per_stratum)
                .expect("per-delta histories are aligned by construction");
            series.iter().skip(1).position(|v| *v >= threshold).map(|i| i + 1)
        })
        .collect()
}

/// Upper bounds on the minimum effect over strata, per block count.
///
/// For each grid δ, the per-stratum e-processes against `θ_b − θ_a ≥ δ` are
/// combined; the bound is one grid step below the smallest δ rejected so
/// far, or 1 while nothing is rejected. Element 0 covers `m = 0`.
pub fn cs_min_upper(
    blocks: &[Block],
    n_strata: usize,
    combiner: &CombinerSpec,
    prior: BetaPrior,
    alpha: f64,
    grid: &DeltaGrid,
) -> Vec<f64> {
    let histories = per_delta_histories(blocks, n_strata, NullFamily::RdGe, prior, grid);
    min_upper_from_histories(&histories, blocks.len(), combiner, alpha, grid)
}

/// [`cs_min_upper`] on precomputed [`per_delta_histories`] output.
pub fn min_upper_from_histories(
    histories: &[Vec<Vec<f64>>],
    n_blocks: usize,
    combiner: &CombinerSpec,
    alpha: f64,
    grid: &DeltaGrid,
) -> Vec<f64> {
    let crossings = crossing_times(histories, combiner, alpha);
    (0..=n_blocks)
        .map(|m| {
            let mut bound = 1.0;
            for (i, crossing) in crossings.iter().enumerate() {
                if crossing.map_or(false, |c| c <= m) {
                    bound = (grid.deltas()[i] - grid.step()).max(-1.0);
                    break;
                }
            }
            bound
        })
        .collect()
}

/// Lower bounds on the minimum effect over strata, per block count.
///
/// For each grid δ, the nulls are `∃k: θ_b − θ_a ≤ δ`, tested by the minimum
/// of the per-stratum e-processes; the bound is one grid step above the
/// largest δ rejected so far, or -1 while nothing is rejected.
pub fn cs_min_lower(
    blocks: &[Block],
    n_strata: usize,
    prior: BetaPrior,
    alpha: f64,
    grid: &DeltaGrid,
) -> Vec<f64> {
    let histories = per_delta_histories(blocks, n_strata, NullFamily::RdLe, prior, grid);
    let crossings = crossing_times(&histories, &CombinerSpec::Min, alpha);
    (0..=blocks.len())
        .map(|m| {
            let mut bound = -1.0;
            for (i, crossing) in crossings.iter().enumerate().rev() {
                if crossing.map_or(false, |c| c <= m) {
                    bound = (grid.deltas()[i] + grid.step()).min(1.0);
                    break;
                }
            }
            bound
        })
        .collect()
}

/// How the two one-sided sequences of a two-sided interval share the level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LevelSplit {
    /// Run both sides at level α.
    #[default]
    FullAlphaEachSide,
    /// Run both sides at α/2 for a combined level-α guarantee.
    HalfAlphaEachSide,
}

/// Two-sided confidence sequence for the minimum effect over strata: the
/// intersection of the one-sided sequences, running-intersected over time.
pub fn cs_min_two_sided(
    blocks: &[Block],
    n_strata: usize,
    combiner: &CombinerSpec,
    prior: BetaPrior,
    alpha: f64,
    grid: &DeltaGrid,
    split: LevelSplit,
) -> Vec<CsInterval> {
    let level = match split {
        LevelSplit::FullAlphaEachSide => alpha,
        LevelSplit::HalfAlphaEachSide => alpha / 2.0,
    };
    let upper = cs_min_upper(blocks, n_strata, combiner, prior, level, grid);
    let lower = cs_min_lower(blocks, n_strata, prior, level, grid);
    let series: Vec<CsInterval> = upper
        .iter()
        .zip(&lower)
        .enumerate()
        .map(|(m, (u, l))| CsInterval::new(m, *l, *u))
        .collect();
    running_intersection(&series)
}

/// Two-sided confidence sequence for the maximum effect over strata, obtained
/// by flipping all outcomes (which negates every effect) and negating the
/// minimum-effect sequence.
pub fn cs_max_two_sided(
    blocks: &[Block],
    n_strata: usize,
    combiner: &CombinerSpec,
    prior: BetaPrior,
    alpha: f64,
    grid: &DeltaGrid,
    split: LevelSplit,
) -> Vec<CsInterval> {
    let flipped = flip_outcomes(blocks);
    cs_min_two_sided(&flipped, n_strata, combiner, prior, alpha, grid, split)
        .into_iter()
        .map(|iv| {
            if iv.empty {
                iv
            } else {
                CsInterval::new(iv.time, -iv.upper, -iv.lower)
            }
        })
        .collect()
}

/// Universal-inference e-value for the weighted mean effect `δ*`: the minimum
/// of `Σ_k curve_k(δ_k)` over all `δ⃗ ∈ [-1,1]^K` with `Σ_k π_k δ_k = δ*`.
///
/// `curves[k]` holds the stratum's accumulated log e-values on the grid
/// (nulls `θ_b − θ_a = δ`); off-grid evaluations interpolate linearly. The
/// interpolated objective restricted to the constraint is piecewise linear,
/// so its minimum sits at a point where all but one coordinate lies on the
/// grid; those points are enumerated exhaustively (feasible for K ≤ 3 at the
/// default step) and a local refinement pass at a tenth of the grid step runs
/// around the best point. Strata with zero weight contribute their curve
/// minimum independently.
pub fn mean_effect_evalue(
    curves: &[&[f64]],
    grid: &DeltaGrid,
    weights: &StratumWeights,
    delta_star: f64,
) -> Result<f64, ConfseqError> {
    mean_effect_evalue_bounded(curves, grid, weights, delta_star, None)
}

/// [`mean_effect_evalue`], optionally stopping as soon as any feasible point
/// falls below `stop_below`. The return value is then only guaranteed to be
/// the exact minimum when it is `>= stop_below`; callers that just compare
/// against a threshold get the same decision either way.
fn mean_effect_evalue_bounded(
    curves: &[&[f64]],
    grid: &DeltaGrid,
    weights: &StratumWeights,
    delta_star: f64,
    stop_below: Option<f64>,
) -> Result<f64, ConfseqError> {
    let n_strata = curves.len();
    assert_eq!(n_strata, weights.len(), "one curve per stratum weight");
    for curve in curves {
        assert_eq!(curve.len(), grid.len(), "curves must live on the grid");
    }

    // Zero-weight strata are unconstrained; their optimal contribution is the
    // curve minimum (attained at a grid point for interpolated curves).
    let mut base = 0.0;
    let mut active: Vec<usize> = Vec::new();
    for (k, &w) in weights.pi().iter().enumerate() {
        if w == 0.0 {
            base += curves[k].iter().copied().fold(f64::INFINITY, f64::min);
        } else {
            active.push(k);
        }
    }
    let pi: Vec<f64> = active.iter().map(|&k| weights.pi()[k]).collect();
    let act_curves: Vec<&[f64]> = active.iter().map(|&k| curves[k]).collect();
    let n_active = active.len();

    // Objective over the active coordinates, with `solved` derived from the
    // constraint; `None` when the derived coordinate leaves the unit range.
    let eval = |coords: &mut [f64], solved: usize| -> Option<f64> {
        let partial: f64 = coords
            .iter()
            .zip(&pi)
            .enumerate()
            .filter(|(i, _)| *i != solved)
            .map(|(_, (d, w))| d * w)
            .sum();
        let value = (delta_star - partial) / pi[solved];
        if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&value) {
            return None;
        }
        coords[solved] = value.max(-1.0).min(1.0);
        let mut total = base;
        for (i, d) in coords.iter().enumerate() {
            total += grid.interp(act_curves[i], *d);
        }
        Some(total)
    };

    if n_active == 1 {
        let mut coords = [0.0];
        return eval(&mut coords, 0).ok_or(ConfseqError::InfeasibleConstraint);
    }

    // The all-equal point is always feasible; with a stop bound it often
    // settles survival before any enumeration.
    if let Some(bound) = stop_below {
        let mut equal = vec![delta_star; n_active];
        if let Some(value) = eval(&mut equal, n_active - 1) {
            if value < bound {
                return Ok(value);
            }
        }
    }

    // Vertex enumeration: every choice of solved coordinate, all grid
    // assignments of the others.
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut coords = vec![0.0; n_active];
    'search: for solved in 0..n_active {
        let free: Vec<usize> = (0..n_active).filter(|i| *i != solved).collect();
        let mut done = false;
        enumerate_grid(grid, &free, &mut coords, 0, &mut |coords: &mut [f64]| {
            if done {
                return;
            }
            if let Some(value) = eval(coords, solved) {
                if best.as_ref().map_or(true, |(b, _)| value < *b) {
                    best = Some((value, coords.to_vec()));
                    if stop_below.map_or(false, |bound| value < bound) {
                        done = true;
                    }
                }
            }
        });
        if done {
            break 'search;
        }
    }
    let (coarse_value, coarse_coords) = best.ok_or(ConfseqError::InfeasibleConstraint)?;
    if stop_below.map_or(false, |bound| coarse_value < bound) {
        return Ok(coarse_value);
    }

    // One local refinement pass at a tenth of the grid step around the best
    // point, solving the last active coordinate from the constraint.
    let fine = grid.step() / 10.0;
    let mut best_value = coarse_value;
    let mut offsets = vec![-10i32; n_active - 1];
    loop {
        let mut candidate: Vec<f64> = coarse_coords.clone();
        for (dim, o) in offsets.iter().enumerate() {
            candidate[dim] =
                (coarse_coords[dim] + fine * f64::from(*o)).max(-1.0).min(1.0);
        }
        if let Some(value) = eval(&mut candidate, n_active - 1) {
            best_value = best_value.min(value);
        }
        let mut dim = 0;
        loop {
            if dim == offsets.len() {
                return Ok(best_value);
            }
            offsets[dim] += 1;
            if offsets[dim] <= 10 {
                break;
            }
            offsets[dim] = -10;
            dim += 1;
        }
    }
}

fn enumerate_grid(
    grid: &DeltaGrid,
    free: &[usize],
    coords: &mut [f64],
    depth: usize,
    visit: &mut impl FnMut(&mut [f64]),
) {
    if depth == free.len() {
        visit(coords);
        return;
    }
    for i in 0..grid.len() {
        coords[free[depth]] = grid.deltas()[i];
        enumerate_grid(grid, free, coords, depth + 1, visit);
    }
}

/// Confidence sequence for the weighted mean effect: grid values of `δ*`
/// whose universal-inference e-value has stayed below `1/α`, hull-widened by
/// one grid step and running-intersected.
pub fn cs_mean_effect(
    blocks: &[Block],
    n_strata: usize,
    weights: &StratumWeights,
    prior: BetaPrior,
    alpha: f64,
    grid: &DeltaGrid,
) -> Vec<CsInterval> {
    assert_eq!(n_strata, weights.len());
    let threshold = log_threshold(alpha);
    let mut grids: Vec<CsGrid> =
        (0..n_strata).map(|_| CsGrid::new(NullFamily::RdEq, grid.clone())).collect();
    let mut states = initial_states(n_strata);
    let mut rejected = vec![false; grid.len()];
    let mut series = Vec::with_capacity(blocks.len() + 1);
    series.push(CsInterval::full(0));

    for (j, block) in blocks.iter().enumerate() {
        let view = counts_of(&states);
        let theta_alt =
            alternative_estimates(&view, CrossTalkMode::None, block.stratum, prior);
        grids[block.stratum].update(theta_alt, &block.counts);
        fold_block(&mut states, block);

        let curves: Vec<&[f64]> = grids.iter().map(|g| g.log_e()).collect();
        for (i, &delta_star) in grid.deltas().iter().enumerate() {
            if !rejected[i] {
                let value = mean_effect_evalue_bounded(
                    &curves,
                    grid,
                    weights,
                    delta_star,
                    Some(threshold),
                )
                .expect("grid means are always feasible");
                if value >= threshold {
                    rejected[i] = true;
                }
            }
        }
        series.push(survivor_hull(j + 1, &rejected, grid));
    }
    running_intersection(&series)
}

/// Restate a stratum's per-δ sequence membership directly from e-process
/// crossings: δ has left the set once its own e-process reached `1/α`. Used
/// by tests to check duality with [`cs_per_stratum`].
pub fn rd_eq_crossing_time(
    blocks: &[Block],
    n_strata: usize,
    stratum: usize,
    delta: f64,
    mode: CrossTalkMode,
    prior: BetaPrior,
    alpha: f64,
) -> Option<usize> {
    assert!(
        mode != CrossTalkMode::Mix,
        "mix crossing times are defined through the mixed grids"
    );
    let threshold = log_threshold(alpha);
    let mut states = initial_states(n_strata);
    for (j, block) in blocks.iter().enumerate() {
        if block.stratum == stratum {
            let view = counts_of(&states);
            let theta_alt = alternative_estimates(&view, mode, stratum, prior);
            let log_s = conditional_evalue(theta_alt, NullSpec::RdEq(delta), &block.counts);
            let state = &mut states[stratum];
            state.log_e += log_s;
        }
        // Counts always advance so cross-talk sees every stratum.
        let _ = stratum_sleep_update(&mut states, block);
        if states[stratum].log_e >= threshold {
            return Some(j + 1);
        }
    }
    None
}

fn stratum_sleep_update(states: &mut [crate::eprocess::StratumState], block: &Block) -> usize {
    fold_block(states, block);
    block.stratum
}
