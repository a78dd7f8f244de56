//! Probabilities of optimality and value measures.
//!
//! `alpha_i` is the posterior probability that arm `i` has the largest mean.
//! With independent beliefs it reduces to the one-dimensional integral
//! `∫ f_i(x) ∏_{j≠i} F_j(x) dx`, which [`alpha_quadrature`] evaluates as a
//! uniform Riemann sum in log space. [`sample_approx`] estimates the same
//! quantities, plus the value measure `V_i`, from joint posterior draws.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};
use crate::expfam::{ObservationModel, BERNOULLI_CLAMP};
use crate::posterior::{default_grid, ln_normal_cdf, ArmBelief, BeliefState};
use crate::{log_add_exp, log_sum_exp};

/// Beta posteriors with `a + b` above this leave the fixed grid in
/// [`AlphaEngine`]; the grid no longer resolves their density.
pub const DEFAULT_CONCENTRATION_LIMIT: f64 = 1e4;

// Normal posteriors narrower than this many grid cells leave the fixed grid.
const MIN_CELLS_PER_SD: f64 = 4.0;

// 8-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Quadrature nodes: strictly increasing points inside the mean domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    points: Vec<f64>,
}

impl QuadratureGrid {
    /// `m` equispaced points covering the model's domain, endpoints excluded
    /// by half a step.
    pub fn uniform(model: &ObservationModel, m: usize) -> Result<Self> {
        if m < 3 {
            return Err(Error::Input(format!(
                "a quadrature grid needs at least 3 points, got {m}"
            )));
        }
        Ok(QuadratureGrid {
            points: default_grid(model, m),
        })
    }

    /// Grid matching `state`: the shared support for grid beliefs, else
    /// [`QuadratureGrid::uniform`] with `m` points.
    pub fn for_state(state: &BeliefState, m: usize) -> Result<Self> {
        match state.arm(0) {
            ArmBelief::Grid { points, .. } => Ok(QuadratureGrid {
                points: points.clone(),
            }),
            _ => Self::uniform(&state.model, m),
        }
    }

    /// Validates explicit points against the model's domain. Points must be
    /// equispaced for the Riemann weights to be uniform.
    pub fn from_points(model: &ObservationModel, points: Vec<f64>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Input("a quadrature grid needs at least 3 points".into()));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Input("quadrature points must be strictly increasing".into()));
        }
        if !points.iter().all(|&x| model.contains(x)) {
            return Err(Error::Domain(
                "quadrature points must lie strictly inside the mean domain".into(),
            ));
        }
        let h = (points[points.len() - 1] - points[0]) / (points.len() - 1) as f64;
        if points
            .windows(2)
            .any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0))
        {
            return Err(Error::Input("quadrature points must be equispaced".into()));
        }
        Ok(QuadratureGrid { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.points[self.points.len() - 1] - self.points[0]) / (self.points.len() - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Quadrature,
    MonteCarlo,
}

/// Probabilities of optimality, optionally with value measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityEstimate {
    pub alpha: Vec<f64>,
    /// `ln alpha`, kept separately because quadrature resolves error masses
    /// far below `f64` range in log space.
    pub log_alpha: Vec<f64>,
    pub value: Option<Vec<f64>>,
    pub method: EstimateMethod,
    pub samples_or_points: usize,
}

impl OptimalityEstimate {
    fn from_log_alpha(log_alpha: Vec<f64>, method: EstimateMethod, n: usize) -> Result<Self> {
        let total = log_sum_exp(&log_alpha);
        if !total.is_finite() {
            return Err(Error::Solver(
                "optimality probabilities vanish on the quadrature grid; the posterior has no mass there".into(),
            ));
        }
        let log_alpha: Vec<f64> = log_alpha.iter().map(|l| l - total).collect();
        let alpha = log_alpha.iter().map(|l| l.exp()).collect();
        Ok(OptimalityEstimate {
            alpha,
            log_alpha,
            value: None,
            method,
            samples_or_points: n,
        })
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn max_alpha(&self) -> f64 {
        self.alpha.iter().copied().fold(0.0, f64::max)
    }
}

/// `Σ_{i≠best} alpha_i`: posterior mass of the event that `best` is not the
/// best arm.
pub fn posterior_error_mass(estimate: &OptimalityEstimate, best: usize) -> f64 {
    estimate
        .alpha
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, a)| a)
        .sum()
}

/// Natural log of [`posterior_error_mass`], computed from `log_alpha`.
pub fn log_posterior_error_mass(estimate: &OptimalityEstimate, best: usize) -> f64 {
    let rest: Vec<f64> = estimate
        .log_alpha
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &l)| l)
        .collect();
    log_sum_exp(&rest)
}

/// Per-arm `ln f` and `ln F` tables on a quadrature grid. Only arms whose
/// belief changed since the previous call are recomputed.
#[derive(Clone, Debug)]
pub struct QuadratureCache {
    grid: QuadratureGrid,
    snapshot: Vec<Option<ArmBelief>>,
    ln_f: Vec<Vec<f64>>,
    ln_cdf: Vec<Vec<f64>>,
    terms: Vec<f64>,
    beta_logs: Option<BetaLogs>,
}

impl QuadratureCache {
    pub fn new(grid: QuadratureGrid) -> Self {
        QuadratureCache {
            grid,
            snapshot: Vec::new(),
            ln_f: Vec::new(),
            ln_cdf: Vec::new(),
            terms: Vec::new(),
            beta_logs: None,
        }
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    fn refresh(&mut self, state: &BeliefState) -> Result<()> {
        let k = state.k();
        let m = self.grid.len();
        if self.snapshot.len() != k {
            self.snapshot = vec![None; k];
            self.ln_f = vec![vec![0.0; m]; k];
            self.ln_cdf = vec![vec![0.0; m]; k];
        }
        for i in 0..k {
            let arm = state.arm(i);
            if self.snapshot[i].as_ref() == Some(arm) {
                continue;
            }
            fill_tables(arm, &self.grid, &mut self.beta_logs, &mut self.ln_f[i], &mut self.ln_cdf[i])?;
            self.snapshot[i] = Some(arm.clone());
        }
        Ok(())
    }

    /// Quadrature estimate of `alpha` for `state`.
    pub fn estimate(&mut self, state: &BeliefState) -> Result<OptimalityEstimate> {
        self.refresh(state)?;
        let k = state.k();
        let m = self.grid.len();
        let ln_h = if state.is_grid() {
            0.0
        } else {
            self.grid.spacing().ln()
        };
        self.terms.resize(k * m, 0.0);
        let mut prefix = vec![0.0; k + 1];
        for x in 0..m {
            // Σ_{j≠i} ln F_j by prefix and suffix sums; no subtraction, so a
            // vanishing F_i never produces 0/0.
            for j in 0..k {
                prefix[j + 1] = prefix[j] + self.ln_cdf[j][x];
            }
            let mut suffix = 0.0;
            for i in (0..k).rev() {
                self.terms[i * m + x] = self.ln_f[i][x] + prefix[i] + suffix;
                suffix += self.ln_cdf[i][x];
            }
        }
        let log_alpha = (0..k)
            .map(|i| log_sum_exp(&self.terms[i * m..(i + 1) * m]) + ln_h)
            .collect();
        OptimalityEstimate::from_log_alpha(log_alpha, EstimateMethod::Quadrature, m)
    }
}

// ln x and ln(1 − x) at the grid points and at the Gauss-Legendre nodes of
// every cell, shared by all Beta arms on one grid.
#[derive(Clone, Debug)]
struct BetaLogs {
    ln_x: Vec<f64>,
    ln_1mx: Vec<f64>,
    node_ln_x: Vec<f64>,
    node_ln_1mx: Vec<f64>,
    // Gauss-Legendre weights scaled by the half cell width.
    weights: [f64; 8],
}

impl BetaLogs {
    fn new(grid: &QuadratureGrid) -> Self {
        let xs = grid.points();
        let mut node_ln_x = Vec::with_capacity(8 * xs.len());
        let mut node_ln_1mx = Vec::with_capacity(8 * xs.len());
        for w in xs.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let half = 0.5 * (w[1] - w[0]);
            for q in 0..4 {
                for t in [mid - half * GL_NODES[q], mid + half * GL_NODES[q]] {
                    node_ln_x.push(t.ln());
                    node_ln_1mx.push((-t).ln_1p());
                }
            }
        }
        let half = 0.5 * grid.spacing();
        let mut weights = [0.0; 8];
        for q in 0..4 {
            weights[2 * q] = GL_WEIGHTS[q] * half;
            weights[2 * q + 1] = GL_WEIGHTS[q] * half;
        }
        BetaLogs {
            ln_x: xs.iter().map(|x| x.ln()).collect(),
            ln_1mx: xs.iter().map(|x| (-x).ln_1p()).collect(),
            node_ln_x,
            node_ln_1mx,
            weights,
        }
    }
}

fn fill_tables(
    arm: &ArmBelief,
    grid: &QuadratureGrid,
    logs: &mut Option<BetaLogs>,
    ln_f: &mut [f64],
    ln_cdf: &mut [f64],
) -> Result<()> {
    let xs = grid.points();
    match arm {
        ArmBelief::Beta { a, b } => {
            let (a, b) = (*a, *b);
            let logs = logs.get_or_insert_with(|| BetaLogs::new(grid));
            let norm = ln_beta(a, b);
            let (ca, cb) = (a - 1.0, b - 1.0);
            for ((slot, &lx), &l1x) in ln_f.iter_mut().zip(&logs.ln_x).zip(&logs.ln_1mx) {
                *slot = ca * lx + cb * l1x - norm;
            }
            // Anchor at the first node, then add the exact mass of every cell
            // in log space so the lower tail keeps relative accuracy.
            let mut acc = beta_reg(a, b, xs[0]).ln();
            ln_cdf[0] = acc;
            let mut nodes = [0.0; 8];
            for c in 1..xs.len() {
                let base = 8 * (c - 1);
                let mut top = f64::NEG_INFINITY;
                for (q, node) in nodes.iter_mut().enumerate() {
                    *node = ca * logs.node_ln_x[base + q] + cb * logs.node_ln_1mx[base + q] - norm;
                    top = top.max(*node);
                }
                let cell = if top == f64::NEG_INFINITY {
                    top
                } else {
                    let sum: f64 = nodes
                        .iter()
                        .zip(&logs.weights)
                        .map(|(n, w)| w * (n - top).exp())
                        .sum();
                    top + sum.ln()
                };
                acc = log_add_exp(acc, cell).min(0.0);
                ln_cdf[c] = acc;
            }
        }
        ArmBelief::Normal { mean, var, .. } => {
            let sd = var.sqrt();
            let ln_norm = sd.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
            for ((f, cdf), &x) in ln_f.iter_mut().zip(ln_cdf.iter_mut()).zip(xs) {
                let z = (x - mean) / sd;
                *f = -0.5 * z * z - ln_norm;
                *cdf = ln_normal_cdf(z);
            }
        }
        ArmBelief::Grid {
            points,
            log_weights,
        } => {
            if points.as_slice() != xs {
                return Err(Error::Input(
                    "grid beliefs must be integrated on their own support points".into(),
                ));
            }
            // Mid-point CDF: strictly-below mass plus half the atom, so that
            // ties are split evenly.
            let mut below = f64::NEG_INFINITY;
            for ((f, cdf), &w) in ln_f.iter_mut().zip(ln_cdf.iter_mut()).zip(log_weights) {
                *f = w;
                *cdf = log_add_exp(below, w - std::f64::consts::LN_2).min(0.0);
                below = log_add_exp(below, w);
            }
        }
    }
    Ok(())
}

/// Probabilities of optimality by quadrature on `grid`, renormalized to sum
/// to one.
pub fn alpha_quadrature(state: &BeliefState, grid: &QuadratureGrid) -> Result<OptimalityEstimate> {
    QuadratureCache::new(grid.clone()).estimate(state)
}

/// Whether `grid` resolves every arm's posterior density.
pub fn quadrature_resolves(state: &BeliefState, grid: &QuadratureGrid, concentration_limit: f64) -> bool {
    let h = grid.spacing();
    state.arms().iter().all(|arm| match arm {
        ArmBelief::Beta { a, b } => a + b <= concentration_limit,
        ArmBelief::Normal { var, .. } => var.sqrt() >= MIN_CELLS_PER_SD * h,
        ArmBelief::Grid { .. } => true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    /// `u(mean) = mean`.
    Identity,
    /// `u(mean) = theta(mean)`, the natural parameter: the logit for Bernoulli
    /// and `mean / sigma^2` for Gaussian observations.
    Natural,
}

/// Strictly increasing utility `shift + scale * base(mean)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utility {
    pub kind: UtilityKind,
    pub scale: f64,
    pub shift: f64,
}

impl Default for Utility {
    fn default() -> Self {
        Utility::identity()
    }
}

impl Utility {
    pub fn identity() -> Self {
        Utility {
            kind: UtilityKind::Identity,
            scale: 1.0,
            shift: 0.0,
        }
    }

    pub fn natural() -> Self {
        Utility {
            kind: UtilityKind::Natural,
            ..Utility::identity()
        }
    }

    pub fn affine(self, scale: f64, shift: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && shift.is_finite()) {
            return Err(Error::Input(format!(
                "utility scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Utility {
            kind: self.kind,
            scale: self.scale * scale,
            shift: self.shift * scale + shift,
        })
    }

    pub fn eval(&self, model: &ObservationModel, mean: f64) -> f64 {
        let base = match (self.kind, model) {
            (UtilityKind::Identity, _) => mean,
            (UtilityKind::Natural, ObservationModel::Bernoulli) => {
                let p = mean.clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP);
                (p / (1.0 - p)).ln()
            }
            (UtilityKind::Natural, ObservationModel::Gaussian { sigma, .. }) => mean / (sigma * sigma),
        };
        self.shift + self.scale * base
    }
}

/// Monte Carlo estimate from `m` joint posterior draws. `alpha_i` is the
/// fraction of draws in which arm `i` is largest, with ties split uniformly
/// at random. With a utility, also returns
/// `V_i = m^{-1} Σ_{draws won by i} (u(θ_i) − max_{j≠i} u(θ_j))`.
pub fn sample_approx<R: Rng + ?Sized>(
    state: &BeliefState,
    m: usize,
    utility: Option<&Utility>,
    rng: &mut R,
) -> Result<OptimalityEstimate> {
    if m == 0 {
        return Err(Error::Input("sample_approx needs at least one draw".into()));
    }
    let k = state.k();
    let sampler = state.sampler();
    let mut draw = vec![0.0; k];
    let mut wins = vec![0u64; k];
    let mut value = vec![0.0; k];
    for _ in 0..m {
        sampler.draw_into(rng, &mut draw);
        let (winner, runner_up) = pick_winner(&draw, rng);
        wins[winner] += 1;
        if let Some(u) = utility {
            value[winner] +=
                u.eval(&state.model, draw[winner]) - u.eval(&state.model, draw[runner_up]);
        }
    }
    Ok(counts_to_estimate(&wins, utility.map(|_| value), m))
}

/// Monte Carlo estimate from draws supplied by the caller (row-major, one
/// row of `k` means per draw). Lets several utilities share a sample set.
pub fn estimate_from_draws<R: Rng + ?Sized>(
    model: &ObservationModel,
    draws: &[f64],
    k: usize,
    utility: Option<&Utility>,
    rng: &mut R,
) -> Result<OptimalityEstimate> {
    if k < 2 || draws.is_empty() || draws.len() % k != 0 {
        return Err(Error::Input(format!(
            "draws must hold a positive whole number of rows of {k} means"
        )));
    }
    let m = draws.len() / k;
    let mut wins = vec![0u64; k];
    let mut value = vec![0.0; k];
    for row in draws.chunks_exact(k) {
        let (winner, runner_up) = pick_winner(row, rng);
        wins[winner] += 1;
        if let Some(u) = utility {
            value[winner] += u.eval(model, row[winner]) - u.eval(model, row[runner_up]);
        }
    }
    Ok(counts_to_estimate(&wins, utility.map(|_| value), m))
}

/// Draws `m` joint samples from the posterior, row-major.
pub fn draw_joint<R: Rng + ?Sized>(state: &BeliefState, m: usize, rng: &mut R) -> Vec<f64> {
    let k = state.k();
    let sampler = state.sampler();
    let mut out = vec![0.0; m * k];
    for row in out.chunks_exact_mut(k) {
        sampler.draw_into(rng, row);
    }
    out
}

// Winner among tied maxima chosen uniformly; runner-up is the best of the
// rest. Utilities are strictly increasing, so the argmax of the means is the
// argmax of u.
pub(crate) fn pick_winner<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> (usize, usize) {
    let mut best = 0;
    let mut ties = 1u32;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
            ties = 1;
        } else if v == row[best] {
            ties += 1;
            if rng.random_range(0..ties) == 0 {
                best = i;
            }
        }
    }
    (best, crate::argmax_excluding(row, best))
}

fn counts_to_estimate(wins: &[u64], value: Option<Vec<f64>>, m: usize) -> OptimalityEstimate {
    let alpha: Vec<f64> = wins.iter().map(|&w| w as f64 / m as f64).collect();
    let log_alpha = alpha.iter().map(|a| a.ln()).collect();
    OptimalityEstimate {
        alpha,
        log_alpha,
        value: value.map(|v| v.into_iter().map(|s| s / m as f64).collect()),
        method: EstimateMethod::MonteCarlo,
        samples_or_points: m,
    }
}

/// Chooses how to estimate `alpha` for a sequence of related states.
///
/// Quadrature on the full-domain grid is used while it resolves every
/// posterior. Once some posterior becomes too concentrated, the engine
/// switches to [`alpha_adaptive`], which places a separate window on each
/// arm's integrand, and falls back to Monte Carlo only if that fails.
#[derive(Clone, Debug)]
pub struct AlphaEngine {
    base: QuadratureCache,
    points: usize,
    pub mc_samples: usize,
    pub concentration_limit: f64,
}

impl AlphaEngine {
    pub fn new(state: &BeliefState, quadrature_points: usize, mc_samples: usize) -> Result<Self> {
        if mc_samples == 0 {
            return Err(Error::Input("mc_samples must be positive".into()));
        }
        Ok(AlphaEngine {
            base: QuadratureCache::new(QuadratureGrid::for_state(state, quadrature_points)?),
            points: quadrature_points,
            mc_samples,
            concentration_limit: DEFAULT_CONCENTRATION_LIMIT,
        })
    }

    pub fn grid(&self) -> &QuadratureGrid {
        self.base.grid()
    }

    pub fn estimate<R: Rng + ?Sized>(&mut self, state: &BeliefState, rng: &mut R) -> Result<OptimalityEstimate> {
        if state.is_grid() || quadrature_resolves(state, self.base.grid(), self.concentration_limit) {
            return self.base.estimate(state);
        }
        match alpha_adaptive(state, self.points) {
            Ok(est) => Ok(est),
            Err(e) => {
                log::warn!("adaptive quadrature failed ({e}); estimating alpha by Monte Carlo");
                sample_approx(state, self.mc_samples, None, rng)
            }
        }
    }
}

// Integrand windows stop where the log integrand is this far below its peak.
const WINDOW_DROP: f64 = 60.0;

// Log density and log CDF of one conjugate arm, with constants hoisted.
enum LogMarginal {
    Beta { a: f64, b: f64, norm: f64 },
    Normal { mean: f64, sd: f64, norm: f64 },
}

impl LogMarginal {
    fn new(arm: &ArmBelief) -> Result<Self> {
        match *arm {
            ArmBelief::Beta { a, b } => Ok(LogMarginal::Beta { a, b, norm: ln_beta(a, b) }),
            ArmBelief::Normal { mean, var, .. } => {
                let sd = var.sqrt();
                Ok(LogMarginal::Normal {
                    mean,
                    sd,
                    norm: sd.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln(),
                })
            }
            ArmBelief::Grid { .. } => Err(Error::Input("adaptive quadrature needs Beta or normal beliefs".into())),
        }
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            LogMarginal::Beta { a, b, norm } => (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - norm,
            LogMarginal::Normal { mean, sd, norm } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - norm
            }
        }
    }

    fn ln_cdf(&self, x: f64) -> f64 {
        match *self {
            LogMarginal::Beta { a, b, .. } => beta_reg(a, b, x).ln(),
            LogMarginal::Normal { mean, sd, .. } => ln_normal_cdf((x - mean) / sd),
        }
    }
}

/// Probabilities of optimality for Beta or normal beliefs, integrating each
/// arm's term `f_i ∏_{j≠i} F_j` over its own window.
///
/// Every factor is log-concave, so each integrand is unimodal in log space:
/// its peak is found by golden-section search, the window extends until the
/// log integrand has dropped by 60, and the window is integrated with
/// composite 8-point Gauss-Legendre using about `points` nodes. Masses far
/// below `f64` range stay accurate in `log_alpha`.
pub fn alpha_adaptive(state: &BeliefState, points: usize) -> Result<OptimalityEstimate> {
    let marginals = state.arms().iter().map(LogMarginal::new).collect::<Result<Vec<_>>>()?;
    let (lo, hi) = match state.arm(0) {
        ArmBelief::Beta { .. } => (f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0),
        _ => {
            let reach = |sign: f64| {
                state
                    .arms()
                    .iter()
                    .map(|a| a.mean() + sign * 60.0 * a.sd())
                    .fold(-sign * f64::INFINITY, |acc, v| if sign > 0.0 { acc.max(v) } else { acc.min(v) })
            };
            (reach(-1.0), reach(1.0))
        }
    };
    let cells = (points / 8).max(8);
    let log_alpha = (0..state.k())
        .map(|i| {
            let g = |x: f64| {
                marginals[i].ln_pdf(x)
                    + marginals
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, m)| m.ln_cdf(x))
                        .sum::<f64>()
            };
            log_integral(&g, lo, hi, cells)
        })
        .collect::<Vec<_>>();
    if log_alpha.iter().any(|l| l.is_nan()) {
        return Err(Error::Solver("adaptive quadrature produced NaN".into()));
    }
    OptimalityEstimate::from_log_alpha(log_alpha, EstimateMethod::Quadrature, cells * 8)
}

// ln ∫ exp(g) over [lo, hi] for concave g.
fn log_integral(g: &impl Fn(f64) -> f64, lo: f64, hi: f64, cells: usize) -> f64 {
    let score = |x: f64| {
        let v = g(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let (mut x1, mut x2) = (b - r * (b - a), a + r * (b - a));
    let (mut f1, mut f2) = (score(x1), score(x2));
    for _ in 0..200 {
        if b - a <= 1e-13 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = score(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = score(x2);
        }
    }
    let (mode, peak) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    if peak == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let target = peak - WINDOW_DROP;
    // Bisect for the point between `inside` and `outside` where g hits target.
    let edge = |inside: f64, outside: f64| {
        if score(outside) >= target {
            return outside;
        }
        let (mut inn, mut out) = (inside, outside);
        for _ in 0..100 {
            let mid = 0.5 * (inn + out);
            if mid == inn || mid == out {
                break;
            }
            if score(mid) >= target {
                inn = mid;
            } else {
                out = mid;
            }
        }
        out
    };
    let (left, right) = (edge(mode, lo), edge(mode, hi));
    if !(right > left) {
        return peak;
    }
    let width = (right - left) / cells as f64;
    let half = 0.5 * width;
    let mut terms = Vec::with_capacity(8 * cells);
    for c in 0..cells {
        let mid = left + (c as f64 + 0.5) * width;
        for q in 0..4 {
            let w = (GL_WEIGHTS[q] * half).ln();
            terms.push(w + score(mid - half * GL_NODES[q]));
            terms.push(w + score(mid + half * GL_NODES[q]));
        }
    }
    log_sum_exp(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn beta_state(params: &[(f64, f64)]) -> BeliefState {
        BeliefState::beta(params).unwrap()
    }

    #[test]
    fn identical_arms_are_symmetric() {
        for k in 2..6 {
            let s = beta_state(&vec![(3.0, 5.0); k]);
            let grid = QuadratureGrid::uniform(&s.model, 1001).unwrap();
            let est = alpha_quadrature(&s, &grid).unwrap();
            for a in &est.alpha {
                assert!((a - 1.0 / k as f64).abs() < 1e-3);
            }
            assert!((est.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_two_one_vs_one_two_against_closed_form() {
        // P(X > Y) for X ~ Beta(2,1), Y ~ Beta(1,2) is ∫ 2x (2x - x^2) dx = 5/6.
        let s = beta_state(&[(2.0, 1.0), (1.0, 2.0)]);
        let grid = QuadratureGrid::uniform(&s.model, 2001).unwrap();
        let est = alpha_quadrature(&s, &grid).unwrap();
        assert!((est.alpha[0] - 5.0 / 6.0).abs() < 1e-5, "{:?}", est.alpha);
    }

    #[test]
    fn beta_cdf_table_matches_regularized_incomplete_beta() {
        let model = ObservationModel::bernoulli();
        let grid = QuadratureGrid::uniform(&model, 1001).unwrap();
        for (a, b) in [(1.0, 1.0), (3.5, 7.0), (120.0, 480.0), (4000.0, 5000.0)] {
            let arm = ArmBelief::Beta { a, b };
            let mut f = vec![0.0; grid.len()];
            let mut c = vec![0.0; grid.len()];
            fill_tables(&arm, &grid, &mut None, &mut f, &mut c).unwrap();
            for (idx, &x) in grid.points().iter().enumerate().step_by(37) {
                let exact = beta_reg(a, b, x);
                if exact > 1e-250 {
                    let rel = (c[idx].exp() - exact).abs() / exact;
                    assert!(rel < 1e-8, "a={a} b={b} x={x} rel={rel}");
                }
            }
        }
    }

    #[test]
    fn vanishing_cdf_does_not_poison_other_arms() {
        // Arm 1 has essentially no mass below 0.9, so its CDF underflows at
        // most nodes; the other arms must still get finite log-alpha.
        let s = beta_state(&[(2.0, 8.0), (9000.0, 10.0), (3.0, 7.0)]);
        let grid = QuadratureGrid::uniform(&s.model, 1001).unwrap();
        let est = alpha_quadrature(&s, &grid).unwrap();
        assert!(est.log_alpha.iter().all(|l| l.is_finite() || *l == f64::NEG_INFINITY));
        assert!(est.alpha[1] > 1.0 - 1e-12);
        // P(Beta(2,8) > ~0.9989) is of order 1e-22
        assert!(est.log_alpha[0] > -60.0 && est.log_alpha[0] < -40.0, "{}", est.log_alpha[0]);
    }

    #[test]
    fn grid_beliefs_split_ties() {
        let model = ObservationModel::bernoulli();
        let arm = ArmBelief::Grid {
            points: vec![0.25, 0.5, 0.75],
            log_weights: vec![-(3f64.ln()); 3],
        };
        let s = BeliefState::from_arms(model, vec![arm.clone(), arm]).unwrap();
        let grid = QuadratureGrid::for_state(&s, 0).unwrap();
        let est = alpha_quadrature(&s, &grid).unwrap();
        assert!((est.alpha[0] - 0.5).abs() < 1e-15);
        let wrong = QuadratureGrid::uniform(&model, 11).unwrap();
        assert!(alpha_quadrature(&s, &wrong).is_err());
    }

    #[test]
    fn grid_log_alpha_resolves_tiny_masses() {
        let model = ObservationModel::gaussian(1.0, -1.0, 2.0).unwrap();
        let mut s = BeliefState::uniform_grid(model, 2, 1001).unwrap();
        for _ in 0..2000 {
            s.update(0, 1.0).unwrap();
            s.update(1, 0.0).unwrap();
        }
        let grid = QuadratureGrid::for_state(&s, 0).unwrap();
        let est = alpha_quadrature(&s, &grid).unwrap();
        // error mass ≈ exp(-n Δ^2 / 4) with n = 2000 per arm
        let lem = log_posterior_error_mass(&est, 0);
        assert!(lem < -400.0 && lem.is_finite(), "{lem}");
        assert_eq!(posterior_error_mass(&est, 0), est.alpha[1]);
    }

    #[test]
    fn error_mass_examples() {
        let est = |alpha: Vec<f64>| OptimalityEstimate {
            log_alpha: alpha.iter().map(|a: &f64| a.ln()).collect(),
            alpha,
            value: None,
            method: EstimateMethod::MonteCarlo,
            samples_or_points: 1,
        };
        assert_eq!(posterior_error_mass(&est(vec![1.0, 0.0, 0.0]), 0), 0.0);
        assert!((posterior_error_mass(&est(vec![0.2, 0.5, 0.3]), 1) - 0.5).abs() < 1e-15);
        assert!((posterior_error_mass(&est(vec![0.2; 5]), 3) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn point_masses_give_degenerate_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ObservationModel::bernoulli();
        let point = |idx: usize| {
            let mut w = vec![f64::NEG_INFINITY; 5];
            w[idx] = 0.0;
            ArmBelief::Grid {
                points: vec![0.1, 0.3, 0.5, 0.7, 0.9],
                log_weights: w,
            }
        };
        let s = BeliefState::from_arms(model, vec![point(3), point(1), point(2)]).unwrap();
        let est = sample_approx(&s, 1000, Some(&Utility::identity()), &mut rng).unwrap();
        assert_eq!(est.alpha, vec![1.0, 0.0, 0.0]);
        let v = est.value.unwrap();
        assert!((v[0] - 0.2).abs() < 1e-12 && v[1] == 0.0 && v[2] == 0.0);
    }

    #[test]
    fn sample_alpha_is_multiple_of_one_over_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = beta_state(&[(2.0, 3.0), (3.0, 2.0), (1.0, 1.0)]);
        let est = sample_approx(&s, 777, None, &mut rng).unwrap();
        let counts: Vec<f64> = est.alpha.iter().map(|a| a * 777.0).collect();
        for c in &counts {
            assert!((c - c.round()).abs() < 1e-9);
        }
        assert_eq!(counts.iter().map(|c| c.round() as u64).sum::<u64>(), 777);
        assert!(est.value.is_none());
    }

    #[test]
    fn affine_utility_scales_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = beta_state(&[(2.0, 3.0), (3.0, 2.0), (4.0, 4.0)]);
        let draws = draw_joint(&s, 5000, &mut rng);
        let u = Utility::identity();
        let v = u.affine(2.0, 7.0).unwrap();
        let a = estimate_from_draws(&s.model, &draws, 3, Some(&u), &mut rng).unwrap();
        let b = estimate_from_draws(&s.model, &draws, 3, Some(&v), &mut rng).unwrap();
        for (x, y) in a.value.unwrap().iter().zip(b.value.unwrap()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
        assert_eq!(a.alpha, b.alpha);
    }

    #[test]
    fn natural_utility_values() {
        let g = ObservationModel::gaussian(2.0, -5.0, 5.0).unwrap();
        assert!((Utility::natural().eval(&g, 1.0) - 0.25).abs() < 1e-15);
        let b = ObservationModel::bernoulli();
        assert!(Utility::natural().eval(&b, 0.5).abs() < 1e-15);
        assert!(Utility::identity().affine(0.0, 1.0).is_err());
    }

    #[test]
    fn engine_leaves_the_grid_when_concentrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = beta_state(&[(1.0, 1.0), (1.0, 1.0)]);
        let mut engine = AlphaEngine::new(&s, 1001, 1000).unwrap();
        let est = engine.estimate(&s, &mut rng).unwrap();
        assert_eq!((est.method, est.samples_or_points), (EstimateMethod::Quadrature, 1001));
        let s = beta_state(&[(60000.0, 60000.0), (1.0, 1.0)]);
        let est = engine.estimate(&s, &mut rng).unwrap();
        assert_eq!((est.method, est.samples_or_points), (EstimateMethod::Quadrature, 1000));
        assert!((est.alpha[0] - 0.5).abs() < 1e-6, "{:?}", est.alpha);
    }

    #[test]
    fn adaptive_matches_normal_gap_formula_deep_in_the_tail() {
        // Two normal arms: alpha_2 = Φ((m2 − m1) / sqrt(v1 + v2)) exactly.
        let model = ObservationModel::gaussian(1.0, -3.0, 3.0).unwrap();
        for (gap, v1, v2) in [(0.5, 1e-2, 2e-2), (0.5, 1e-5, 3e-5), (1.0, 1e-6, 1e-6), (0.2, 4e-6, 1e-4)] {
            let arms = vec![
                ArmBelief::Normal { mean: gap, var: v1, noise_var: 1.0 },
                ArmBelief::Normal { mean: 0.0, var: v2, noise_var: 1.0 },
            ];
            let s = BeliefState::from_arms(model, arms).unwrap();
            let est = alpha_adaptive(&s, 1001).unwrap();
            let want = crate::posterior::ln_normal_cdf(-gap / (v1 + v2).sqrt());
            assert!((est.log_alpha[1] - want).abs() <= 1e-8 * want.abs().max(1.0), "{} {want}", est.log_alpha[1]);
        }
    }

    #[test]
    fn adaptive_agrees_with_grid_quadrature() {
        let s = beta_state(&[(30.0, 50.0), (45.0, 40.0), (60.0, 50.0), (3.0, 2.0)]);
        let a = alpha_adaptive(&s, 1001).unwrap();
        let q = alpha_quadrature(&s, &QuadratureGrid::uniform(&s.model, 4001).unwrap()).unwrap();
        for (x, y) in a.log_alpha.iter().zip(&q.log_alpha) {
            assert!((x - y).abs() < 1e-6, "{:?} {:?}", a.log_alpha, q.log_alpha);
        }
        // Beta gap against its normal approximation, far in the tail.
        let s = beta_state(&[(5000.0, 15000.0), (9000.0, 11000.0), (11000.0, 9000.0)]);
        let est = alpha_adaptive(&s, 1001).unwrap();
        let sd = |a: f64, b: f64| (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
        let z = -(0.55 - 0.45) / (sd(9000.0, 11000.0).powi(2) + sd(11000.0, 9000.0).powi(2)).sqrt();
        let want = crate::posterior::ln_normal_cdf(z);
        assert!((est.log_alpha[1] - want).abs() < 0.05 * want.abs(), "{} {want}", est.log_alpha[1]);
        assert!(est.log_alpha[0] < est.log_alpha[1]);
    }

    #[test]
    fn cache_refresh_matches_fresh_computation() {
        let mut s = beta_state(&[(1.0, 1.0), (2.0, 1.0), (1.0, 3.0)]);
        let grid = QuadratureGrid::uniform(&s.model, 501).unwrap();
        let mut cache = QuadratureCache::new(grid.clone());
        cache.estimate(&s).unwrap();
        for (i, y) in [(0, 1.0), (2, 0.0), (1, 1.0), (0, 1.0)] {
            s.update(i, y).unwrap();
            let cached = cache.estimate(&s).unwrap();
            let fresh = alpha_quadrature(&s, &grid).unwrap();
            assert_eq!(cached, fresh);
        }
    }
}
