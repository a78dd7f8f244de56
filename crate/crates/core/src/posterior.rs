//! Independent per-arm posterior beliefs.
//!
//! Three representations are supported, and a [`BeliefState`] holds one
//! variant for all of its arms:
//!
//! * conjugate Beta beliefs for Bernoulli observations,
//! * conjugate Normal beliefs for Gaussian observations with known noise,
//! * bounded grid beliefs with log-space weights, usable with either model.
//!
//! Grid weights are renormalized by log-sum-exp after every update, so the
//! posterior mass of regions that have been ruled out keeps its exponent even
//! when it is far below what linear floating point can represent.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};
use crate::expfam::ObservationModel;
use crate::log_sum_exp;

/// Default number of support points of a grid belief.
pub const DEFAULT_GRID_POINTS: usize = 1001;

/// Posterior over one arm's mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArmBelief {
    /// `Beta(a, b)` over the success probability.
    Beta { a: f64, b: f64 },
    /// `N(mean, var)` over the mean, with observation noise variance
    /// `noise_var`.
    Normal { mean: f64, var: f64, noise_var: f64 },
    /// Discrete belief on strictly increasing support points with normalized
    /// log-weights.
    Grid {
        points: Vec<f64>,
        log_weights: Vec<f64>,
    },
}

impl ArmBelief {
    fn kind_name(&self) -> &'static str {
        match self {
            ArmBelief::Beta { .. } => "beta",
            ArmBelief::Normal { .. } => "normal",
            ArmBelief::Grid { .. } => "grid",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ArmBelief::Beta { a, b } => {
                if !(a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0) {
                    return Err(Error::Domain(format!(
                        "beta parameters must be positive, got ({a}, {b})"
                    )));
                }
            }
            ArmBelief::Normal {
                mean,
                var,
                noise_var,
            } => {
                if !mean.is_finite() || !(*var > 0.0 && var.is_finite()) || !(*noise_var > 0.0) {
                    return Err(Error::Domain(format!(
                        "normal belief needs finite mean and positive variances, got ({mean}, {var}, {noise_var})"
                    )));
                }
            }
            ArmBelief::Grid {
                points,
                log_weights,
            } => {
                if points.len() < 2 || points.len() != log_weights.len() {
                    return Err(Error::Input(
                        "grid belief needs at least two points and one weight per point".into(),
                    ));
                }
                if points.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::Input(
                        "grid support points must be strictly increasing".into(),
                    ));
                }
                let total = log_sum_exp(log_weights);
                if !(total.abs() <= 1e-10) {
                    return Err(Error::Input(format!(
                        "grid log-weights must be normalized, log-sum-exp is {total}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Posterior mean of the arm's mean.
    pub fn mean(&self) -> f64 {
        match self {
            ArmBelief::Beta { a, b } => a / (a + b),
            ArmBelief::Normal { mean, .. } => *mean,
            ArmBelief::Grid {
                points,
                log_weights,
            } => points
                .iter()
                .zip(log_weights)
                .map(|(x, w)| x * w.exp())
                .sum(),
        }
    }

    /// Posterior standard deviation of the arm's mean.
    pub fn sd(&self) -> f64 {
        match self {
            ArmBelief::Beta { a, b } => {
                let s = a + b;
                (a * b / (s * s * (s + 1.0))).sqrt()
            }
            ArmBelief::Normal { var, .. } => var.sqrt(),
            ArmBelief::Grid {
                points,
                log_weights,
            } => {
                let m = self.mean();
                points
                    .iter()
                    .zip(log_weights)
                    .map(|(x, w)| (x - m) * (x - m) * w.exp())
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    /// Marginal density (or point mass, for grid beliefs) and CDF at `x`.
    pub fn pdf_cdf(&self, x: f64) -> (f64, f64) {
        match *self {
            ArmBelief::Beta { a, b } => {
                if x <= 0.0 {
                    return (0.0, 0.0);
                }
                if x >= 1.0 {
                    return (0.0, 1.0);
                }
                let ln_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b);
                (ln_pdf.exp(), beta_reg(a, b, x))
            }
            ArmBelief::Normal { mean, var, .. } => {
                let sd = var.sqrt();
                let z = (x - mean) / sd;
                let pdf = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
                (pdf, ln_normal_cdf(z).exp())
            }
            ArmBelief::Grid {
                ref points,
                ref log_weights,
            } => {
                let tol = 1e-12 * (points[points.len() - 1] - points[0]);
                let mut mass = 0.0;
                let mut cdf = 0.0;
                for (p, w) in points.iter().zip(log_weights) {
                    if *p <= x + tol {
                        cdf += w.exp();
                    }
                    if (p - x).abs() <= tol {
                        mass = w.exp();
                    }
                }
                (mass, cdf.min(1.0))
            }
        }
    }
}

/// `ln Phi(z)` for the standard normal CDF, accurate far into the lower tail.
pub fn ln_normal_cdf(z: f64) -> f64 {
    if z > -37.0 {
        (0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        // asymptotic expansion of the Mills ratio
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
    }
}

/// Equispaced support strictly inside the model's domain, with the endpoints
/// excluded by half a step.
pub fn default_grid(model: &ObservationModel, points: usize) -> Vec<f64> {
    let (lo, hi) = model.domain();
    let h = (hi - lo) / points as f64;
    (0..points).map(|m| lo + (m as f64 + 0.5) * h).collect()
}

/// Joint belief over all arms: independent marginals of one common kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBeliefState")]
pub struct BeliefState {
    pub model: ObservationModel,
    arms: Vec<ArmBelief>,
    /// Number of observations absorbed so far.
    pub n: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBeliefState {
    model: ObservationModel,
    arms: Vec<ArmBelief>,
    n: u64,
}

impl TryFrom<RawBeliefState> for BeliefState {
    type Error = Error;

    fn try_from(raw: RawBeliefState) -> Result<Self> {
        let mut state = BeliefState::from_arms(raw.model, raw.arms)?;
        state.n = raw.n;
        Ok(state)
    }
}

impl BeliefState {
    /// Builds a state from explicit arm beliefs, checking that there are at
    /// least two arms, all of the same kind and compatible with `model`.
    pub fn from_arms(model: ObservationModel, arms: Vec<ArmBelief>) -> Result<Self> {
        model.validate()?;
        if arms.len() < 2 {
            return Err(Error::Input(format!(
                "a belief state needs at least two arms, got {}",
                arms.len()
            )));
        }
        let kind = arms[0].kind_name();
        for arm in &arms {
            if arm.kind_name() != kind {
                return Err(Error::Input(format!(
                    "all arms must share one belief kind, found {kind} and {}",
                    arm.kind_name()
                )));
            }
            arm.validate()?;
        }
        match (&model, &arms[0]) {
            (ObservationModel::Bernoulli, ArmBelief::Normal { .. }) => {
                return Err(Error::Input(
                    "normal beliefs require a gaussian observation model".into(),
                ))
            }
            (ObservationModel::Gaussian { .. }, ArmBelief::Beta { .. }) => {
                return Err(Error::Input(
                    "beta beliefs require a bernoulli observation model".into(),
                ))
            }
            _ => {}
        }
        if let ArmBelief::Grid { points, .. } = &arms[0] {
            for arm in &arms {
                if let ArmBelief::Grid { points: p, .. } = arm {
                    if p != points {
                        return Err(Error::Input(
                            "grid arms must share the same support points".into(),
                        ));
                    }
                }
            }
            if !points.iter().all(|&x| model.contains(x)) {
                return Err(Error::Domain(
                    "grid support points must lie strictly inside the mean domain".into(),
                ));
            }
        }
        Ok(BeliefState { model, arms, n: 0 })
    }

    /// Independent `Beta(1, 1)` priors on `k` Bernoulli arms.
    pub fn uniform_beta(k: usize) -> Result<Self> {
        Self::beta(&vec![(1.0, 1.0); k])
    }

    pub fn beta(params: &[(f64, f64)]) -> Result<Self> {
        let arms = params
            .iter()
            .map(|&(a, b)| ArmBelief::Beta { a, b })
            .collect();
        Self::from_arms(ObservationModel::Bernoulli, arms)
    }

    /// Independent `N(prior_mean, prior_var)` priors on `k` Gaussian arms.
    pub fn normal(model: ObservationModel, prior_mean: f64, prior_var: f64, k: usize) -> Result<Self> {
        let sigma = model.sigma().ok_or_else(|| {
            Error::Input("normal beliefs require a gaussian observation model".into())
        })?;
        let arm = ArmBelief::Normal {
            mean: prior_mean,
            var: prior_var,
            noise_var: sigma * sigma,
        };
        Self::from_arms(model, vec![arm; k])
    }

    /// Independent uniform priors over the default grid of `points` support
    /// points.
    pub fn uniform_grid(model: ObservationModel, k: usize, points: usize) -> Result<Self> {
        if points < 3 {
            return Err(Error::Input(format!(
                "a grid belief needs at least 3 points, got {points}"
            )));
        }
        let support = default_grid(&model, points);
        let w = -(points as f64).ln();
        let arm = ArmBelief::Grid {
            points: support,
            log_weights: vec![w; points],
        };
        Self::from_arms(model, vec![arm; k])
    }

    pub fn k(&self) -> usize {
        self.arms.len()
    }

    pub fn arms(&self) -> &[ArmBelief] {
        &self.arms
    }

    pub fn arm(&self, i: usize) -> &ArmBelief {
        &self.arms[i]
    }

    pub fn is_grid(&self) -> bool {
        matches!(self.arms[0], ArmBelief::Grid { .. })
    }

    /// Posterior means of every arm.
    pub fn posterior_means(&self) -> Vec<f64> {
        self.arms.iter().map(ArmBelief::mean).collect()
    }

    fn check_arm(&self, arm: usize) -> Result<()> {
        if arm < self.arms.len() {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "arm index {arm} out of range for {} arms",
                self.arms.len()
            )))
        }
    }

    /// Absorbs observation `y` of `arm` in place.
    pub fn update(&mut self, arm: usize, y: f64) -> Result<()> {
        self.check_arm(arm)?;
        self.model.check_observation(y)?;
        let model = self.model;
        match &mut self.arms[arm] {
            ArmBelief::Beta { a, b } => {
                *a += y;
                *b += 1.0 - y;
            }
            ArmBelief::Normal {
                mean,
                var,
                noise_var,
            } => {
                let precision = 1.0 / *var + 1.0 / *noise_var;
                let post_var = 1.0 / precision;
                *mean = post_var * (*mean / *var + y / *noise_var);
                *var = post_var;
            }
            ArmBelief::Grid {
                points,
                log_weights,
            } => {
                for (w, &x) in log_weights.iter_mut().zip(points.iter()) {
                    *w += model.log_likelihood(y, x);
                }
                let total = log_sum_exp(log_weights);
                for w in log_weights.iter_mut() {
                    *w -= total;
                }
            }
        }
        self.n += 1;
        Ok(())
    }

    /// Returns a copy of the state with observation `y` of `arm` absorbed.
    pub fn updated(&self, arm: usize, y: f64) -> Result<Self> {
        let mut next = self.clone();
        next.update(arm, y)?;
        Ok(next)
    }

    /// One independent draw of every arm's mean from its marginal posterior.
    pub fn sample_means<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        self.sampler().draw_into(rng, &mut out);
        out
    }

    /// Precomputes per-arm sampling tables for repeated joint draws from the
    /// current posterior.
    pub fn sampler(&self) -> PosteriorSampler {
        let arms = self
            .arms
            .iter()
            .map(|arm| match arm {
                ArmBelief::Beta { a, b } => ArmSampler::Beta(
                    Gamma::new(*a, 1.0).expect("validated beta parameter"),
                    Gamma::new(*b, 1.0).expect("validated beta parameter"),
                ),
                ArmBelief::Normal { mean, var, .. } => ArmSampler::Normal {
                    mean: *mean,
                    sd: var.sqrt(),
                },
                ArmBelief::Grid {
                    points,
                    log_weights,
                } => {
                    let mut acc = 0.0;
                    let cumulative = log_weights
                        .iter()
                        .map(|w| {
                            acc += w.exp();
                            acc
                        })
                        .collect();
                    ArmSampler::Grid {
                        points: points.clone(),
                        cumulative,
                    }
                }
            })
            .collect();
        PosteriorSampler { arms }
    }

    /// Marginal posterior density and CDF of `arm`'s mean at `x`. Grid
    /// beliefs report the point mass at `x` and the left-closed cumulative
    /// mass.
    pub fn marginal_pdf_cdf(&self, arm: usize, x: f64) -> Result<(f64, f64)> {
        self.check_arm(arm)?;
        self.model.check_mean(x)?;
        Ok(self.arms[arm].pdf_cdf(x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

enum ArmSampler {
    // Beta(a, b) as X / (X + Y) with X ~ Gamma(a), Y ~ Gamma(b)
    Beta(Gamma<f64>, Gamma<f64>),
    Normal { mean: f64, sd: f64 },
    Grid { points: Vec<f64>, cumulative: Vec<f64> },
}

/// Joint posterior sampler built by [`BeliefState::sampler`].
pub struct PosteriorSampler {
    arms: Vec<ArmSampler>,
}

impl PosteriorSampler {
    pub fn k(&self) -> usize {
        self.arms.len()
    }

    /// Writes one joint draw of the arm means into `out`.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (slot, arm) in out.iter_mut().zip(&self.arms) {
            *slot = match arm {
                ArmSampler::Beta(ga, gb) => {
                    let x = ga.sample(rng);
                    let y = gb.sample(rng);
                    x / (x + y)
                }
                ArmSampler::Normal { mean, sd } => {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + sd * z
                }
                ArmSampler::Grid { points, cumulative } => {
                    let total = cumulative[cumulative.len() - 1];
                    let u = rng.random::<f64>() * total;
                    let idx = cumulative.partition_point(|&c| c <= u);
                    points[idx.min(points.len() - 1)]
                }
            };
        }
    }
}
