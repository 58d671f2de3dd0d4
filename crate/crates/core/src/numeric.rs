//! Small log-space helpers shared across the crate.
//!
//! The crate is `no_std`, so elementary functions come from `libm`.

pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub(crate) fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// `ln(Σ exp(x_i))` with max subtraction. Empty input yields `-inf`.
pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.map(|x| exp(x - max)).sum();
    max + ln(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let xs = [0.0_f64, ln(2.0), ln(3.0)];
        let got = log_sum_exp(xs.iter().copied());
        assert!(abs(got - ln(6.0)) < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_large_offsets() {
        let xs = [1000.0_f64, 1000.0 + ln(2.0)];
        let got = log_sum_exp(xs.iter().copied());
        assert!(abs(got - (1000.0 + ln(3.0))) < 1e-12);
    }

    #[test]
    fn log_sum_exp_empty_is_neg_inf() {
        assert_eq!(log_sum_exp(core::iter::empty()), f64::NEG_INFINITY);
    }
}
