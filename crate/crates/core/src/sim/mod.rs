//! Trial runner, traces and the metrics computed from them.
//!
//! A trial loops select → observe → update on a fixed instance. Every trial
//! owns three independent random streams derived from its seed (policy,
//! environment and probability-of-optimality estimation), so a trace is a
//! pure function of its inputs and seed.

mod metrics;
mod output;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{InstanceSpec, ObservationModel};
use crate::optprob::{EstimateMethod, OptimalityEstimate};
use crate::posterior::{BeliefState, DEFAULT_GRID_POINTS};
use crate::rules::{Policy, RuleSpec};

pub use metrics::{aggregate, fit_exponent, hitting_times, quantile, ExponentFit, HitSummary, Stats, Summary};
pub use output::{
    write_fig1_csv, write_fig2a_csv, write_fig2b_csv, write_summary_csv, write_trace_csv, write_trials_csv,
};

/// When a trial ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    /// Run exactly `N` steps.
    FixedHorizon(u64),
    /// Stop at the first step where `max_i alpha_i > 1 − δ`.
    Confidence(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingSpec {
    pub mode: StopMode,
    /// Hard step limit. A confidence run that reaches it is censored.
    pub cap: u64,
}

impl StoppingSpec {
    pub fn fixed_horizon(n: u64) -> Self {
        StoppingSpec {
            mode: StopMode::FixedHorizon(n),
            cap: n,
        }
    }

    pub fn confidence(delta: f64, cap: u64) -> Self {
        StoppingSpec {
            mode: StopMode::Confidence(delta),
            cap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            StopMode::FixedHorizon(n) => {
                if n < 1 {
                    return Err(Error::Input("the horizon must be at least 1".into()));
                }
                if self.cap < n {
                    return Err(Error::Input(format!("cap {} is below the horizon {n}", self.cap)));
                }
            }
            StopMode::Confidence(delta) => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(Error::Input(format!("delta must lie in (0, 1), got {delta}")));
                }
                if self.cap < 1 {
                    return Err(Error::Input("the cap must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Number of steps the trial may take.
    pub fn limit(&self) -> u64 {
        match self.mode {
            StopMode::FixedHorizon(n) => n,
            StopMode::Confidence(_) => self.cap,
        }
    }

    fn log_delta(&self) -> Option<f64> {
        match self.mode {
            StopMode::Confidence(delta) => Some(delta.ln()),
            StopMode::FixedHorizon(_) => None,
        }
    }
}

/// Family of beliefs a trial starts from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BeliefSpec {
    /// Uniform Beta priors for Bernoulli arms; for Gaussian arms a normal
    /// prior centred on the domain with standard deviation equal to its width.
    Conjugate,
    /// Uniform prior on a bounded grid; keeps every quantity in log space.
    Grid { points: usize },
}

impl Default for BeliefSpec {
    fn default() -> Self {
        BeliefSpec::Conjugate
    }
}

impl BeliefSpec {
    pub fn grid() -> Self {
        BeliefSpec::Grid {
            points: DEFAULT_GRID_POINTS,
        }
    }

    /// Prior over `k` arms under `model`.
    pub fn prior(&self, model: &ObservationModel, k: usize) -> Result<BeliefState> {
        match *self {
            BeliefSpec::Conjugate => match model {
                ObservationModel::Bernoulli => BeliefState::uniform_beta(k),
                ObservationModel::Gaussian { lo, hi, .. } => {
                    let width = hi - lo;
                    BeliefState::normal(*model, 0.5 * (lo + hi), width * width, k)
                }
            },
            BeliefSpec::Grid { points } => BeliefState::uniform_grid(*model, k, points),
        }
    }

    /// The prior a trial on `instance` starts from.
    pub fn prior_for(&self, instance: &InstanceSpec) -> Result<BeliefState> {
        self.prior(&instance.model, instance.k())
    }
}

/// Which steps are written to the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cadence {
    /// Every step up to and including this one is recorded.
    pub dense_until: u64,
    /// After that, every `every`-th step.
    pub every: u64,
}

impl Default for Cadence {
    fn default() -> Self {
        Cadence {
            dense_until: 1000,
            every: 10,
        }
    }
}

impl Cadence {
    pub fn every_step() -> Self {
        Cadence {
            dense_until: u64::MAX,
            every: 1,
        }
    }

    pub fn records(&self, n: u64) -> bool {
        n <= self.dense_until || n % self.every.max(1) == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub cadence: Cadence,
    /// Compute `alpha` at recorded steps even when neither the rule nor the
    /// stopping rule needs it.
    pub record_alpha: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            cadence: Cadence::default(),
            record_alpha: true,
        }
    }
}

/// One recorded step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub n: u64,
    pub arm: usize,
    pub y: f64,
    /// Observation counts per arm after this step; they sum to `n`.
    pub counts: Vec<u64>,
    /// Cumulative selection probabilities `Ψ_n`, when the rule reports them
    /// exactly at every step.
    pub psi_cum: Option<Vec<f64>>,
    pub log_alpha: Option<Vec<f64>>,
    pub method: Option<EstimateMethod>,
}

impl StepRecord {
    /// Empirical allocation `counts / n`.
    pub fn psi_bar(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    pub fn alpha(&self) -> Option<Vec<f64>> {
        self.log_alpha.as_ref().map(|l| l.iter().map(|x| x.exp()).collect())
    }

    /// `log10(1 / alpha_i)` per arm.
    pub fn log10_inv_alpha(&self) -> Option<Vec<f64>> {
        self.log_alpha
            .as_ref()
            .map(|l| l.iter().map(|x| -x / std::f64::consts::LN_10).collect())
    }
}

/// Everything recorded about one trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trace {
    pub rule: String,
    pub seed: u64,
    pub fingerprint: String,
    pub k: usize,
    pub best: usize,
    pub records: Vec<StepRecord>,
    /// `ln(1 − max_i alpha_{n,i})` for every step `n = 1, 2, ...`, present
    /// when alpha was computed at every step.
    pub log_residual: Option<Vec<f64>>,
    /// Steps taken.
    pub steps: u64,
    pub counts: Vec<u64>,
    /// Set when a confidence run reached its cap without stopping.
    pub censored: bool,
    /// Number of TTTS selections that fell back to the Monte Carlo runner-up.
    pub fallbacks: u64,
    pub final_state: BeliefState,
}

impl Trace {
    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("a trace has at least one step")
    }

    /// `counts / steps` at termination.
    pub fn shares(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.steps as f64).collect()
    }
}

/// `ln(1 − max_i alpha_i)`, computed from the other entries to keep precision.
pub(crate) fn log_residual(est: &OptimalityEstimate) -> f64 {
    let top = crate::argmax(&est.log_alpha);
    let rest: Vec<f64> = est
        .log_alpha
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &l)| l)
        .collect();
    crate::log_sum_exp(&rest)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Runs one trial of `rule` on `instance`.
pub fn run_trial(
    instance: &InstanceSpec,
    rule: &RuleSpec,
    belief: &BeliefSpec,
    stopping: &StoppingSpec,
    opts: &TraceOptions,
    seed: u64,
) -> Result<Trace> {
    stopping.validate()?;
    let k = instance.k();
    let mut state = belief.prior_for(instance)?;
    let limit = stopping.limit();
    let mut policy = Policy::new(rule.clone(), &state, limit)?;
    let mut engine = rule.config.alpha_engine(&state)?;
    let mut policy_rng = stream(seed, 0);
    let mut env_rng = stream(seed, 1);
    let mut alpha_rng = stream(seed, 2);

    let log_delta = stopping.log_delta();
    let every_step = log_delta.is_some() || policy.wants_alpha();
    let mut current = if every_step {
        Some(engine.estimate(&state, &mut alpha_rng)?)
    } else {
        None
    };

    let mut counts = vec![0u64; k];
    let mut psi_cum = Some(vec![0.0; k]);
    let mut residuals = every_step.then(Vec::new);
    let mut records = Vec::new();
    let mut fallbacks = 0;
    let mut stopped = false;
    let mut n = 0;
    while n < limit {
        n += 1;
        let out = policy.select(&state, current.as_ref(), &mut policy_rng)?;
        let y = instance.model.sample(instance.means()[out.chosen], &mut env_rng)?;
        state.update(out.chosen, y)?;
        counts[out.chosen] += 1;
        fallbacks += out.fallback as u64;
        psi_cum = match (psi_cum, &out.psi_n) {
            (Some(mut acc), Some(p)) => {
                acc.iter_mut().zip(p).for_each(|(a, p)| *a += p);
                Some(acc)
            }
            _ => None,
        };

        let recorded = opts.cadence.records(n) || n == limit;
        current = if every_step || (recorded && opts.record_alpha) {
            Some(engine.estimate(&state, &mut alpha_rng)?)
        } else {
            None
        };
        if let (Some(res), Some(est)) = (residuals.as_mut(), current.as_ref()) {
            let r = log_residual(est);
            res.push(r);
            if log_delta.is_some_and(|ld| r < ld) {
                stopped = true;
            }
        }
        if recorded || stopped {
            records.push(StepRecord {
                n,
                arm: out.chosen,
                y,
                counts: counts.clone(),
                psi_cum: psi_cum.clone(),
                log_alpha: current.as_ref().map(|e| e.log_alpha.clone()),
                method: current.as_ref().map(|e| e.method),
            });
        }
        if stopped {
            break;
        }
    }

    Ok(Trace {
        rule: rule.name().to_string(),
        seed,
        fingerprint: instance.fingerprint(),
        k,
        best: instance.best(),
        records,
        log_residual: residuals,
        steps: n,
        counts,
        censored: log_delta.is_some() && !stopped,
        fallbacks,
        final_state: state,
    })
}

/// Runs one trial per seed in parallel on the current rayon pool. The result
/// is ordered by seed whatever the scheduling.
pub fn run_trials(
    instance: &InstanceSpec,
    rule: &RuleSpec,
    belief: &BeliefSpec,
    stopping: &StoppingSpec,
    opts: &TraceOptions,
    seeds: &[u64],
) -> Result<Vec<Trace>> {
    let mut traces = seeds
        .par_iter()
        .map(|&s| run_trial(instance, rule, belief, stopping, opts, s))
        .collect::<Result<Vec<_>>>()?;
    traces.sort_by_key(|t| t.seed);
    Ok(traces)
}

/// `count` consecutive seeds starting at `base`.
pub fn seed_range(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}
