//! Best-arm identification with top-two Bayesian allocation rules.
//!
//! The crate is organized bottom-up:
//!
//! * [`expfam`]: observation models in mean parameterization, KL divergence
//!   and the pairwise evidence rate.
//! * [`posterior`]: independent per-arm beliefs (Beta, Normal, bounded grid).
//! * [`optprob`]: probabilities of optimality and value measures, by
//!   quadrature or Monte Carlo.
//! * [`rules`]: allocation rules (TTTS, TTPS, TTVS, Thompson sampling and
//!   baselines) behind one selection interface.
//! * [`exponent`]: the optimal error exponents and allocations.
//! * [`sim`]: the trial runner, traces and metrics.
//! * [`config`] / [`cli`]: experiment configuration and the command-line
//!   front end.

pub mod cli;
pub mod config;
pub mod error;
pub mod expfam;
pub mod exponent;
pub mod optprob;
pub mod posterior;
pub mod rules;
pub mod sim;

pub use error::{Error, Result};
pub use expfam::{InstanceSpec, ObservationModel};
pub use exponent::ExponentSolution;
pub use optprob::{OptimalityEstimate, QuadratureGrid};
pub use posterior::{ArmBelief, BeliefState};
pub use rules::{RuleConfig, RuleKind, RuleSpec, SelectionOutcome};
pub use sim::{StoppingSpec, Trace};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry other than `skip`; ties go to the lowest index.
pub fn argmax_excluding(values: &[f64], skip: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in values.iter().enumerate() {
        if i == skip {
            continue;
        }
        if best == usize::MAX || v > values[best] {
            best = i;
        }
    }
    best
}

/// `ln(sum(exp(xs)))`, returning `-inf` for an empty slice or all `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5, 0.1]), 1);
        assert_eq!(argmax_excluding(&[0.2, 0.5, 0.5, 0.1], 1), 2);
        assert_eq!(argmax_excluding(&[0.0, 0.0, 0.0], 0), 1);
        assert_eq!(argmax_excluding(&[0.9, 0.1], 0), 1);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -3.0), -3.0);
    }
}
