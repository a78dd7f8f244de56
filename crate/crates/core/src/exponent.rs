//! Optimal error exponents and allocations.
//!
//! `Γ*_β` is the best achievable exponent when a fraction `β` of effort goes
//! to the best arm. At the optimum every suboptimal arm is ruled out at the
//! same rate, `C_i(β, ψ_i) = Γ*_β`, and each `C_i` is strictly increasing in
//! `ψ_i`, so the solver bisects on the common value and inverts every `C_i`
//! by an inner bisection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::InstanceSpec;

const BISECTION_TOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;
const BETA_LO: f64 = 1e-9;
const BETA_HI: f64 = 1.0 - 1e-9;
/// Default tolerance of the golden-section search over `β`.
pub const BETA_TOLERANCE: f64 = 1e-6;

/// Solution of the constrained max-min allocation problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentSolution {
    /// Exponent in nats per observation.
    pub gamma: f64,
    pub beta: f64,
    pub psi: Vec<f64>,
    /// `C_i(β, ψ_i)` for the suboptimal arms, in arm order.
    pub c_values: Vec<f64>,
    pub best: usize,
}

impl ExponentSolution {
    /// Largest pairwise difference among `c_values`.
    pub fn spread(&self) -> f64 {
        let hi = self.c_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.c_values.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in (0, 1), got {x}")))
    }
}

// Bisection for the root of an increasing function on [lo, hi], assuming
// f(lo) <= 0 <= f(hi).
fn bisect(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `min_i C_i(ψ_{I*}, ψ_i)` for an arbitrary allocation.
pub fn min_c(instance: &InstanceSpec, psi: &[f64]) -> Result<f64> {
    if psi.len() != instance.k() {
        return Err(Error::Input(format!(
            "allocation has {} entries for {} arms",
            psi.len(),
            instance.k()
        )));
    }
    let best = instance.best();
    let top = instance.means()[best];
    Ok((0..instance.k())
        .filter(|&i| i != best)
        .map(|i| {
            instance
                .model
                .c_cost_unchecked(psi[best], psi[i], top, instance.means()[i])
        })
        .fold(f64::INFINITY, f64::min))
}

/// `Γ*_β` and its equalizing allocation `ψ^β`.
pub fn solve_gamma_beta(instance: &InstanceSpec, beta: f64) -> Result<ExponentSolution> {
    check_unit("beta", beta)?;
    let model = instance.model;
    let best = instance.best();
    let top = instance.means()[best];
    let rest = 1.0 - beta;
    let others: Vec<f64> = (0..instance.k())
        .filter(|&i| i != best)
        .map(|i| instance.means()[i])
        .collect();
    let cost = |psi: f64, alt: f64| model.c_cost_unchecked(beta, psi, top, alt);

    // ψ_i(c): effort at which arm i reaches evidence rate c, capped at 1 − β.
    let invert = |c: f64, alt: f64| -> f64 {
        if cost(rest, alt) <= c {
            return rest;
        }
        bisect(0.0, rest, BISECTION_TOL * rest, |psi| cost(psi, alt) - c)
    };
    let c_hi = others
        .iter()
        .map(|&alt| cost(rest, alt))
        .fold(f64::INFINITY, f64::min);
    if !(c_hi > 0.0 && c_hi.is_finite()) {
        return Err(Error::Solver(format!(
            "cannot bracket the common evidence rate: upper end {c_hi} at beta {beta}, means {:?}",
            instance.means()
        )));
    }
    let total = |c: f64| others.iter().map(|&alt| invert(c, alt)).sum::<f64>() - rest;
    if total(c_hi) < -1e-9 {
        return Err(Error::Solver(format!(
            "bracket failure: allocations at the upper rate {c_hi} sum short of {rest}"
        )));
    }
    let c = bisect(0.0, c_hi, BISECTION_TOL * c_hi, total);

    let mut sub: Vec<f64> = others.iter().map(|&alt| invert(c, alt)).collect();
    let sum: f64 = sub.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::Solver(format!("degenerate allocation at rate {c}")));
    }
    for s in &mut sub {
        *s *= rest / sum;
    }
    let mut psi = Vec::with_capacity(instance.k());
    let mut it = sub.iter();
    for i in 0..instance.k() {
        psi.push(if i == best { beta } else { *it.next().unwrap() });
    }
    let c_values: Vec<f64> = others
        .iter()
        .zip(&sub)
        .map(|(&alt, &p)| cost(p, alt))
        .collect();
    let gamma = c_values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ExponentSolution {
        gamma,
        beta,
        psi,
        c_values,
        best,
    })
}

/// `Γ*_β` over a list of `β` values.
pub fn scan_gamma_beta(instance: &InstanceSpec, betas: &[f64]) -> Result<Vec<ExponentSolution>> {
    betas.iter().map(|&b| solve_gamma_beta(instance, b)).collect()
}

/// `Γ* = max_β Γ*_β` by golden-section search over `β`; `Γ*_β` is concave
/// in `β`, so the search converges to the unique maximizer `β*`.
pub fn solve_gamma_star(instance: &InstanceSpec) -> Result<ExponentSolution> {
    solve_gamma_star_tol(instance, BETA_TOLERANCE)
}

pub fn solve_gamma_star_tol(instance: &InstanceSpec, tol: f64) -> Result<ExponentSolution> {
    if !(tol > 0.0) {
        return Err(Error::Input(format!("tolerance must be positive, got {tol}")));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let g = |b: f64| solve_gamma_beta(instance, b).map(|s| s.gamma);
    let (mut a, mut b) = (BETA_LO, BETA_HI);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = g(x1)?;
    let mut f2 = g(x2)?;
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = g(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = g(x1)?;
        }
    }
    let (beta, _) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    solve_gamma_beta(instance, beta)
}

/// [`solve_gamma_star`] cross-checked against a grid of `points` values of
/// `β`. Fails if any grid value beats the golden-section optimum by more
/// than `slack`.
pub fn solve_gamma_star_validated(instance: &InstanceSpec, points: usize, slack: f64) -> Result<ExponentSolution> {
    let star = solve_gamma_star(instance)?;
    for j in 1..=points {
        let beta = j as f64 / (points + 1) as f64;
        let s = solve_gamma_beta(instance, beta)?;
        if s.gamma > star.gamma + slack {
            return Err(Error::Solver(format!(
                "golden-section optimum {} at beta {} is beaten by {} at beta {beta}",
                star.gamma, star.beta, s.gamma
            )));
        }
    }
    Ok(star)
}

/// Upper bound on `Γ* / Γ*_β`: `max(β*/β, (1−β*)/(1−β))`.
pub fn ratio_bound(beta: f64, beta_star: f64) -> Result<f64> {
    check_unit("beta", beta)?;
    check_unit("beta_star", beta_star)?;
    Ok((beta_star / beta).max((1.0 - beta_star) / (1.0 - beta)))
}

fn check_gaps(sigma: f64, gaps: &[f64]) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if gaps.is_empty() || gaps.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::Domain(format!("gaps must be positive, got {gaps:?}")));
    }
    Ok(())
}

/// Lower bound `1 / (16 σ² Σ Δ_i^{-2})` on `Γ*_{1/2}` for `σ`-sub-Gaussian
/// observations.
pub fn bound_subgaussian(sigma: f64, gaps: &[f64]) -> Result<f64> {
    check_gaps(sigma, gaps)?;
    let s: f64 = gaps.iter().map(|d| 1.0 / (d * d)).sum();
    Ok(1.0 / (16.0 * sigma * sigma * s))
}

/// Exponent of uniform allocation with Gaussian noise: `min Δ_i² / (4kσ²)`.
pub fn uniform_rate_gaussian(gaps: &[f64], k: usize, sigma: f64) -> Result<f64> {
    check_gaps(sigma, gaps)?;
    if k < 2 {
        return Err(Error::Domain(format!("k must be at least 2, got {k}")));
    }
    let dmin = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(dmin * dmin / (4.0 * k as f64 * sigma * sigma))
}

/// Exponent of an arbitrary fixed allocation: `min_i C_i(ψ_{I*}, ψ_i)`.
pub fn fixed_allocation_rate(instance: &InstanceSpec, psi: &[f64]) -> Result<f64> {
    min_c(instance, psi)
}

/// Reference values reported next to the solver output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBounds {
    /// `1 / (16 σ² Σ Δ^{-2})`, with `σ = 1/2` for Bernoulli observations.
    pub subgaussian: f64,
    /// Gaussian closed form `min Δ² / (4kσ²)`; absent for other models.
    pub uniform_rate_gaussian: Option<f64>,
    /// Exact exponent of the uniform allocation, `min_i C_i(1/k, 1/k)`.
    pub uniform_rate: f64,
}

pub fn reference_bounds(instance: &InstanceSpec) -> Result<ReferenceBounds> {
    let gaps = instance.suboptimal_gaps();
    let k = instance.k();
    Ok(ReferenceBounds {
        subgaussian: bound_subgaussian(instance.model.subgaussian_scale(), &gaps)?,
        uniform_rate_gaussian: match instance.model.sigma() {
            Some(sigma) => Some(uniform_rate_gaussian(&gaps, k, sigma)?),
            None => None,
        },
        uniform_rate: min_c(instance, &vec![1.0 / k as f64; k])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::ObservationModel;

    fn gaussian(means: &[f64], sigma: f64) -> InstanceSpec {
        let model = ObservationModel::gaussian(sigma, -10.0, 10.0).unwrap();
        InstanceSpec::new(model, means.to_vec()).unwrap()
    }

    fn five_arm_instance() -> InstanceSpec {
        InstanceSpec::new(ObservationModel::bernoulli(), vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap()
    }

    #[test]
    fn two_arm_gaussian() {
        let s = solve_gamma_beta(&gaussian(&[1.0, 0.0], 1.0), 0.5).unwrap();
        assert_eq!(s.best, 0);
        assert!((s.psi[0] - 0.5).abs() < 1e-12 && (s.psi[1] - 0.5).abs() < 1e-10);
        assert!((s.gamma - 0.125).abs() < 1e-10);
        for beta in [0.1, 0.3, 0.77] {
            let s = solve_gamma_beta(&gaussian(&[0.0, 2.0], 1.5), beta).unwrap();
            let want = beta * (1.0 - beta) * 4.0 / (2.0 * 2.25);
            assert!((s.gamma - want).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_suboptimal_arms_share_effort() {
        let s = solve_gamma_beta(&gaussian(&[1.0, 0.0, 1e-7], 1.0), 0.5).unwrap();
        assert!((s.psi[1] - s.psi[2]).abs() < 1e-5);
    }

    #[test]
    fn five_arm_ordering_and_equalization() {
        let s = solve_gamma_beta(&five_arm_instance(), 0.5).unwrap();
        assert!((s.psi[4] - 0.5).abs() < 1e-12);
        assert!(s.psi[3] > s.psi[2] && s.psi[2] > s.psi[1] && s.psi[1] > s.psi[0]);
        assert!((s.psi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(s.spread() < 1e-8);
        assert!((s.gamma - s.c_values[0]).abs() < 1e-8);
    }

    #[test]
    fn brute_force_three_arms() {
        let inst = InstanceSpec::new(ObservationModel::bernoulli(), vec![0.3, 0.6, 0.45]).unwrap();
        let beta = 0.4;
        let s = solve_gamma_beta(&inst, beta).unwrap();
        let mut best = 0.0f64;
        let steps = 600;
        for j in 0..=steps {
            let p = (1.0 - beta) * j as f64 / steps as f64;
            let mut psi = vec![0.0; 3];
            psi[1] = beta;
            psi[0] = p;
            psi[2] = 1.0 - beta - p;
            best = best.max(min_c(&inst, &psi).unwrap());
        }
        assert!(s.gamma >= best - 1e-12 && s.gamma - best < 1e-3, "{} {best}", s.gamma);
    }

    #[test]
    fn gamma_star_two_arms() {
        let s = solve_gamma_star(&gaussian(&[1.0, 0.0], 1.0)).unwrap();
        assert!((s.beta - 0.5).abs() < 1e-5);
        assert!((s.gamma - 0.125).abs() < 1e-10);
        let v = solve_gamma_star_validated(&five_arm_instance(), 100, 1e-12).unwrap();
        let half = solve_gamma_beta(&five_arm_instance(), 0.5).unwrap();
        assert!(v.gamma >= half.gamma && v.gamma <= 2.0 * half.gamma);
    }

    #[test]
    fn local_max_min_optimality() {
        let inst = five_arm_instance();
        let s = solve_gamma_beta(&inst, 0.5).unwrap();
        for i in 0..4 {
            for sign in [-1.0, 1.0] {
                let mut psi = s.psi.clone();
                psi[i] += sign * 0.01;
                let rest: f64 = (0..4).map(|j| psi[j]).sum();
                for p in psi.iter_mut().take(4) {
                    *p *= 0.5 / rest;
                }
                assert!(min_c(&inst, &psi).unwrap() < s.gamma);
            }
        }
    }

    #[test]
    fn reference_formulas() {
        assert!((ratio_bound(0.5, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((ratio_bound(0.25, 0.5).unwrap() - 2.0).abs() < 1e-15);
        assert!((ratio_bound(0.5, 0.3).unwrap() - 1.4).abs() < 1e-15);
        assert!(ratio_bound(0.0, 0.3).is_err());
        assert!((bound_subgaussian(1.0, &[1.0]).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        assert!((bound_subgaussian(1.0, &[1.0, 1.0]).unwrap() - 1.0 / 32.0).abs() < 1e-15);
        assert!((uniform_rate_gaussian(&[1.0, 2.0], 3, 1.0).unwrap() - 1.0 / 12.0).abs() < 1e-15);
        assert!(bound_subgaussian(1.0, &[0.0]).is_err());
    }

    #[test]
    fn uniform_rate_matches_c_cost() {
        let inst = gaussian(&[0.3, 1.2, -0.4, 0.9], 0.7);
        let b = reference_bounds(&inst).unwrap();
        assert!((b.uniform_rate_gaussian.unwrap() - b.uniform_rate).abs() < 1e-12);
    }

    #[test]
    fn invalid_beta_rejected() {
        assert!(solve_gamma_beta(&five_arm_instance(), 1.0).is_err());
        assert!(solve_gamma_beta(&five_arm_instance(), 0.0).is_err());
    }
}
