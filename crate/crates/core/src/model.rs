//! Block distributions for two-group Bernoulli data and KL projections onto
//! null sets.
//!
//! A *block* is a batch of `n_a` group-a and `n_b` group-b binary outcomes,
//! all i.i.d. within their group. A block distribution is indexed by a pair
//! `(θ_a, θ_b)` of success probabilities. The KL divergence between two block
//! distributions decomposes per group:
//!
//! ```text
//! D(P_{p_a,p_b} ‖ P_{q_a,q_b}) = n_a·KL(p_a ‖ q_a) + n_b·KL(p_b ‖ q_b)
//! ```
//!
//! with `KL(p ‖ q)` the Bernoulli divergence. Conditional e-variables divide
//! the likelihood of an estimated alternative by the likelihood of its KL
//! projection onto the null set, so this module provides the three
//! projections the rest of the crate needs:
//!
//! * onto the diagonal `θ_a = θ_b` (closed form, a block-size-weighted mean),
//! * onto a risk-difference line `θ_b − θ_a = δ` (1-D convex minimisation,
//!   solved by golden-section search),
//! * onto a half-plane `θ_b − θ_a ≥ δ` or `≤ δ` (identity inside, line
//!   projection on the boundary otherwise).

use crate::numeric::{ln, ln_1p};

/// Probabilities are clamped this far inside `[0, 1]` before a projection is
/// solved or a likelihood ratio is formed, so boundary parameters never
/// produce infinite divergences. The shift is far below any reported
/// precision.
pub const INTERIOR_EPS: f64 = 1e-12;

/// Absolute parameter tolerance of the golden-section projection solver.
pub const PROJECTION_TOL: f64 = 1e-10;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Errors from likelihood and divergence evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelError {
    /// A boundary parameter (0 or 1) assigns probability zero to the
    /// observed counts.
    BoundaryLikelihoodZero,
    /// The second argument of a KL divergence puts zero mass where the first
    /// has positive mass.
    InfiniteDivergence,
}

impl core::fmt::Display for ModelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::BoundaryLikelihoodZero => {
                write!(f, "boundary parameter assigns probability zero to the observed counts")
            }
            Self::InfiniteDivergence => write!(f, "KL divergence is infinite"),
        }
    }
}

impl core::error::Error for ModelError {}

/// Number of outcomes per group in one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockDesign {
    n_a: u32,
    n_b: u32,
}

impl BlockDesign {
    /// # Panics
    /// If either group size is zero.
    pub fn new(n_a: u32, n_b: u32) -> Self {
        assert!(n_a >= 1 && n_b >= 1, "block design needs at least one outcome per group");
        Self { n_a, n_b }
    }

    /// One outcome per group, the design used throughout the simulations.
    pub fn paired() -> Self {
        Self { n_a: 1, n_b: 1 }
    }

    pub fn n_a(&self) -> u32 {
        self.n_a
    }

    pub fn n_b(&self) -> u32 {
        self.n_b
    }

    /// Total outcomes per block, `n_a + n_b`.
    pub fn n(&self) -> u32 {
        self.n_a + self.n_b
    }
}

/// A point `(θ_a, θ_b)` in the unit square; the parameters of one block
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaPair {
    pub theta_a: f64,
    pub theta_b: f64,
}

impl ThetaPair {
    /// # Panics
    /// If either component is outside `[0, 1]` or not finite.
    pub fn new(theta_a: f64, theta_b: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&theta_a) && (0.0..=1.0).contains(&theta_b),
            "theta components must lie in [0, 1]"
        );
        Self { theta_a, theta_b }
    }

    /// Risk difference `θ_b − θ_a`.
    pub fn risk_difference(&self) -> f64 {
        self.theta_b - self.theta_a
    }

    /// Both components pulled into `[INTERIOR_EPS, 1 − INTERIOR_EPS]`.
    pub fn clamped_interior(&self) -> Self {
        Self {
            theta_a: clamp_interior(self.theta_a),
            theta_b: clamp_interior(self.theta_b),
        }
    }
}

fn clamp_interior(x: f64) -> f64 {
    x.max(INTERIOR_EPS).min(1.0 - INTERIOR_EPS)
}

/// Sufficient statistic of one block: successes per group plus the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockCounts {
    successes_a: u32,
    successes_b: u32,
    design: BlockDesign,
}

impl BlockCounts {
    /// # Panics
    /// If a success count exceeds its group size.
    pub fn new(successes_a: u32, successes_b: u32, design: BlockDesign) -> Self {
        assert!(
            successes_a <= design.n_a() && successes_b <= design.n_b(),
            "successes exceed block design"
        );
        Self { successes_a, successes_b, design }
    }

    pub fn successes_a(&self) -> u32 {
        self.successes_a
    }

    pub fn successes_b(&self) -> u32 {
        self.successes_b
    }

    pub fn failures_a(&self) -> u32 {
        self.design.n_a() - self.successes_a
    }

    pub fn failures_b(&self) -> u32 {
        self.design.n_b() - self.successes_b
    }

    pub fn design(&self) -> BlockDesign {
        self.design
    }

    /// The same counts with all outcomes flipped (`s_x → n_x − s_x`), which
    /// negates the risk difference of the generating distribution.
    pub fn outcome_flipped(&self) -> Self {
        Self {
            successes_a: self.failures_a(),
            successes_b: self.failures_b(),
            design: self.design,
        }
    }
}

/// Which side of the risk-difference line a half-plane null keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfPlaneSide {
    /// `θ_b − θ_a ≥ δ`
    Ge,
    /// `θ_b − θ_a ≤ δ`
    Le,
}

/// Log-probability of the observed block counts under `P_{θ_a,θ_b}`:
/// `s_a·ln θ_a + (n_a−s_a)·ln(1−θ_a) + s_b·ln θ_b + (n_b−s_b)·ln(1−θ_b)`.
///
/// Boundary components are accepted only when they make the observed counts
/// certain; otherwise the probability is zero and an error is returned.
pub fn block_log_lik(theta: ThetaPair, counts: &BlockCounts) -> Result<f64, ModelError> {
    let a = group_log_lik(theta.theta_a, counts.successes_a(), counts.failures_a())?;
    let b = group_log_lik(theta.theta_b, counts.successes_b(), counts.failures_b())?;
    Ok(a + b)
}

fn group_log_lik(theta: f64, successes: u32, failures: u32) -> Result<f64, ModelError> {
    let mut total = 0.0;
    if successes > 0 {
        if theta == 0.0 {
            return Err(ModelError::BoundaryLikelihoodZero);
        }
        total += f64::from(successes) * ln(theta);
    }
    if failures > 0 {
        if theta == 1.0 {
            return Err(ModelError::BoundaryLikelihoodZero);
        }
        total += f64::from(failures) * ln_1p(-theta);
    }
    Ok(total)
}

/// KL divergence between two block distributions,
/// `n_a·KL(p_a ‖ q_a) + n_b·KL(p_b ‖ q_b)`.
pub fn kl_block(p: ThetaPair, q: ThetaPair, design: BlockDesign) -> Result<f64, ModelError> {
    let d = kl_block_unchecked(p, q, design);
    if d.is_finite() {
        Ok(d)
    } else {
        Err(ModelError::InfiniteDivergence)
    }
}

/// Same as [`kl_block`] but returns `+inf` instead of erroring; used by the
/// projection solvers, whose search may brush the boundary.
fn kl_block_unchecked(p: ThetaPair, q: ThetaPair, design: BlockDesign) -> f64 {
    f64::from(design.n_a()) * bernoulli_kl(p.theta_a, q.theta_a)
        + f64::from(design.n_b()) * bernoulli_kl(p.theta_b, q.theta_b)
}

/// `KL(Bern(p) ‖ Bern(q))` with the `0·ln 0 = 0` convention; `+inf` when `q`
/// is degenerate where `p` is not.
fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let mut d = 0.0;
    if p > 0.0 {
        if q == 0.0 {
            return f64::INFINITY;
        }
        d += p * (ln(p) - ln(q));
    }
    if p < 1.0 {
        if q == 1.0 {
            return f64::INFINITY;
        }
        d += (1.0 - p) * (ln_1p(-p) - ln_1p(-q));
    }
    d
}

/// KL projection of `theta` onto the diagonal `{(θ, θ)}`: the minimiser is
/// the block-size-weighted mean `(n_a·θ_a + n_b·θ_b) / n`.
pub fn project_global_null(theta: ThetaPair, design: BlockDesign) -> f64 {
    let n = f64::from(design.n());
    (f64::from(design.n_a()) * theta.theta_a + f64::from(design.n_b()) * theta.theta_b) / n
}

/// KL projection of `theta` onto the line `{θ_b − θ_a = δ} ∩ [0,1]²`.
///
/// The objective `x ↦ D(P_theta ‖ P_{x, x+δ})` is convex on the feasible
/// segment `x ∈ [max(0,−δ), min(1,1−δ)]`; golden-section search solves it to
/// an absolute parameter tolerance of [`PROJECTION_TOL`].
pub fn project_rd_line(theta: ThetaPair, delta: f64, design: BlockDesign) -> ThetaPair {
    debug_assert!((-1.0..=1.0).contains(&delta), "delta must lie in [-1, 1]");
    // A point already on the line (to float noise) is its own projection;
    // solving would only add solver noise to an exact answer.
    if (theta.risk_difference() - delta).abs() <= 1e-12 {
        return theta;
    }
    let p = theta.clamped_interior();
    let lo = (-delta).max(0.0);
    let hi = (1.0 - delta).min(1.0);
    if hi - lo <= PROJECTION_TOL {
        let x = 0.5 * (lo + hi);
        return ThetaPair::new(x, (x + delta).max(0.0).min(1.0));
    }
    // The KL objective equals this cross-entropy up to a constant in x, at
    // half the transcendental evaluations per probe.
    let n_a = f64::from(design.n_a());
    let n_b = f64::from(design.n_b());
    let objective = |x: f64| {
        -(n_a * (p.theta_a * ln(x) + (1.0 - p.theta_a) * ln_1p(-x))
            + n_b * (p.theta_b * ln(x + delta) + (1.0 - p.theta_b) * ln_1p(-x - delta)))
    };
    let x = golden_section_min(objective, lo, hi);
    ThetaPair::new(x, (x + delta).max(0.0).min(1.0))
}

/// KL projection of `theta` onto the half-plane `{θ_b − θ_a ≥ δ}` (`Ge`) or
/// `{θ_b − θ_a ≤ δ}` (`Le`), intersected with the unit square.
///
/// If `theta` already satisfies the constraint it is its own projection;
/// otherwise the convex KL objective is minimised over `theta`'s side of the
/// boundary, so the optimum lies on the line `θ_b − θ_a = δ`.
pub fn project_halfplane(
    theta: ThetaPair,
    delta: f64,
    side: HalfPlaneSide,
    design: BlockDesign,
) -> ThetaPair {
    let diff = theta.risk_difference();
    let satisfied = match side {
        HalfPlaneSide::Ge => diff >= delta,
        HalfPlaneSide::Le => diff <= delta,
    };
    if satisfied {
        theta
    } else {
        project_rd_line(theta, delta, design)
    }
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > PROJECTION_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}
