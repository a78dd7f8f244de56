use serde::Serialize;

use super::Trace;
use crate::error::{Error, Result};
use crate::optprob::EstimateMethod;

/// First step at which `max_i alpha_{n,i} ≥ c`, for each level `c`; `None`
/// when the trace never got there.
///
/// Exact when alpha was computed at every step. Otherwise the first recorded
/// step at or above the level is returned, which can only be later than the
/// true hitting time.
pub fn hitting_times(trace: &Trace, levels: &[f64]) -> Result<Vec<Option<u64>>> {
    for &c in levels {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::Input(format!("confidence levels must lie in (0, 1], got {c}")));
        }
    }
    // max alpha ≥ c  ⇔  1 − max alpha ≤ 1 − c, compared in log space.
    let path: Vec<(u64, f64)> = match &trace.log_residual {
        Some(res) => res.iter().enumerate().map(|(i, &r)| (i as u64 + 1, r)).collect(),
        None => {
            let mut path = Vec::new();
            for r in &trace.records {
                if let Some(la) = &r.log_alpha {
                    let top = crate::argmax(la);
                    let rest: Vec<f64> =
                        la.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, &l)| l).collect();
                    path.push((r.n, crate::log_sum_exp(&rest)));
                }
            }
            if path.is_empty() {
                return Err(Error::Input(format!(
                    "trace for seed {} recorded no probabilities of optimality",
                    trace.seed
                )));
            }
            path
        }
    };
    Ok(levels
        .iter()
        .map(|&c| {
            let bound = (-c).ln_1p();
            path.iter().find(|&&(_, r)| r <= bound).map(|&(n, _)| n)
        })
        .collect())
}

/// Least-squares fit of `−ln Π_n(best is not best)` against `n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    /// Fitted slope: the empirical convergence exponent.
    pub rate: f64,
    pub intercept: f64,
    /// Points used in the fit.
    pub points: usize,
    /// Set when the window was cut short because the error mass stopped
    /// being resolvable (a Monte Carlo estimate below its resolution, or a
    /// linear-space mass below `1e-300`).
    pub truncated: bool,
}

const LINEAR_FLOOR: f64 = 1e-300;

/// Fits the convergence exponent over the last `tail_fraction` of recorded
/// steps that carry probabilities of optimality.
pub fn fit_exponent(trace: &Trace, tail_fraction: f64) -> Result<ExponentFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Input(format!("tail_fraction must lie in (0, 1], got {tail_fraction}")));
    }
    let with_alpha: Vec<_> = trace.records.iter().filter(|r| r.log_alpha.is_some()).collect();
    let take = ((with_alpha.len() as f64 * tail_fraction).ceil() as usize).min(with_alpha.len());
    let window = &with_alpha[with_alpha.len() - take..];

    let mut xs = Vec::with_capacity(window.len());
    let mut ys = Vec::with_capacity(window.len());
    let mut truncated = false;
    for r in window {
        let la = r.log_alpha.as_ref().unwrap();
        let rest: Vec<f64> = la.iter().enumerate().filter(|&(i, _)| i != trace.best).map(|(_, &l)| l).collect();
        let log_err = crate::log_sum_exp(&rest);
        let resolvable = match r.method {
            Some(EstimateMethod::Quadrature) => log_err.is_finite(),
            _ => log_err.is_finite() && log_err.exp() >= LINEAR_FLOOR,
        };
        if !resolvable {
            truncated = true;
            break;
        }
        xs.push(r.n as f64);
        ys.push(-log_err);
    }
    if xs.len() < 3 {
        return Err(Error::Input(format!(
            "only {} resolvable points in the fit window of seed {}",
            xs.len(),
            trace.seed
        )));
    }
    let (rate, intercept) = least_squares(&xs, &ys);
    Ok(ExponentFit {
        rate,
        intercept,
        points: xs.len(),
        truncated,
    })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Linear-interpolation quantile of sorted data; `NaN` when empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Location and spread of a sample. `se` is zero for a single value and
/// everything is `NaN` for an empty sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub se: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let count = values.len();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = if count == 0 {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / count as f64
        };
        let se = match count {
            0 => f64::NAN,
            1 => 0.0,
            _ => {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            }
        };
        Stats {
            count,
            mean,
            se,
            median: quantile(&sorted, 0.5),
            q10: quantile(&sorted, 0.1),
            q90: quantile(&sorted, 0.9),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HitSummary {
    pub level: f64,
    /// Hitting times of the trials that reached the level.
    pub hit: Stats,
    pub n_censored: usize,
}

/// Summary of homogeneous traces (one rule on one instance).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub rule: String,
    pub fingerprint: String,
    pub trials: usize,
    /// Trials that reached their cap without stopping.
    pub n_censored: usize,
    /// Steps taken by uncensored trials.
    pub steps: Stats,
    pub hitting: Vec<HitSummary>,
    /// Per-arm terminal measurement share, averaged over uncensored trials.
    pub share: Vec<Stats>,
    /// Per-arm terminal count, averaged over uncensored trials.
    pub counts: Vec<Stats>,
    /// Per-arm terminal `log10(1/alpha_i)`, averaged over uncensored trials
    /// that recorded alpha at their last step.
    pub log10_inv_alpha: Option<Vec<Stats>>,
}

impl Summary {
    pub fn mean_share(&self) -> Vec<f64> {
        self.share.iter().map(|s| s.mean).collect()
    }

    pub fn mean_hit(&self, level: f64) -> Option<f64> {
        self.hitting.iter().find(|h| h.level == level).map(|h| h.hit.mean)
    }
}

/// Summarizes traces of one rule on one instance. Censored trials are left
/// out of every mean and counted instead.
pub fn aggregate(traces: &[Trace], levels: &[f64]) -> Result<Summary> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Input("cannot aggregate an empty set of traces".into()))?;
    if let Some(t) = traces.iter().find(|t| t.rule != first.rule || t.fingerprint != first.fingerprint) {
        return Err(Error::Input(format!(
            "cannot aggregate mixed traces: rule `{}` on {} vs rule `{}` on {}",
            first.rule, first.fingerprint, t.rule, t.fingerprint
        )));
    }
    let k = first.k;
    let done: Vec<&Trace> = traces.iter().filter(|t| !t.censored).collect();
    let n_censored = traces.len() - done.len();

    let mut hits: Vec<Vec<f64>> = vec![Vec::new(); levels.len()];
    let mut misses = vec![0usize; levels.len()];
    if !levels.is_empty() {
        for t in traces {
            for (j, h) in hitting_times(t, levels)?.into_iter().enumerate() {
                match h {
                    Some(n) => hits[j].push(n as f64),
                    None => misses[j] += 1,
                }
            }
        }
    }
    let hitting = levels
        .iter()
        .zip(hits.iter().zip(misses))
        .map(|(&level, (h, m))| HitSummary {
            level,
            hit: Stats::of(h),
            n_censored: m,
        })
        .collect();

    let per_arm = |f: &dyn Fn(&Trace, usize) -> f64| -> Vec<Stats> {
        (0..k)
            .map(|i| Stats::of(&done.iter().map(|t| f(t, i)).collect::<Vec<_>>()))
            .collect()
    };
    let share = per_arm(&|t, i| t.counts[i] as f64 / t.steps as f64);
    let counts = per_arm(&|t, i| t.counts[i] as f64);
    let log10_inv_alpha = done
        .iter()
        .all(|t| t.last().log_alpha.is_some())
        .then(|| per_arm(&|t, i| t.last().log10_inv_alpha().unwrap()[i]));

    Ok(Summary {
        rule: first.rule.clone(),
        fingerprint: first.fingerprint.clone(),
        trials: traces.len(),
        n_censored,
        steps: Stats::of(&done.iter().map(|t| t.steps as f64).collect::<Vec<_>>()),
        hitting,
        share,
        counts,
        log10_inv_alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{InstanceSpec, ObservationModel};
    use crate::rules::{RuleKind, RuleSpec};
    use crate::sim::{run_trial, BeliefSpec, StoppingSpec, TraceOptions};

    fn trace(rule: RuleKind, stop: StoppingSpec, seed: u64) -> Trace {
        let inst = InstanceSpec::new(ObservationModel::bernoulli(), vec![0.1, 0.2, 0.3]).unwrap();
        run_trial(&inst, &RuleSpec::new(rule), &BeliefSpec::Conjugate, &stop, &TraceOptions::default(), seed)
            .unwrap()
    }

    #[test]
    fn low_levels_hit_at_first_step() {
        let t = trace(RuleKind::Ttts, StoppingSpec::confidence(0.05, 5000), 2);
        let h = hitting_times(&t, &[0.2, 1.0 / 3.0, 0.9, 0.95, 1.0]).unwrap();
        assert_eq!(h[0], Some(1));
        assert_eq!(h[1], Some(1));
        assert!(h[2].unwrap() <= h[3].unwrap());
        assert_eq!(h[3], Some(t.steps));
        assert_eq!(h[4], None);
    }

    #[test]
    fn recorded_crossings_without_dense_path() {
        let t = trace(RuleKind::Uniform, StoppingSpec::fixed_horizon(300), 1);
        assert!(t.log_residual.is_none());
        let h = hitting_times(&t, &[0.3, 0.5]).unwrap();
        assert_eq!(h[0], Some(1));
        assert!(h[1].is_some());
        assert!(hitting_times(&t, &[0.0]).is_err());
    }

    #[test]
    fn single_trace_summary_equals_trace() {
        let t = trace(RuleKind::Ttts, StoppingSpec::confidence(0.1, 5000), 5);
        let s = aggregate(std::slice::from_ref(&t), &[0.9]).unwrap();
        assert_eq!(s.trials, 1);
        assert_eq!(s.steps.mean, t.steps as f64);
        assert_eq!(s.steps.se, 0.0);
        assert_eq!(s.mean_hit(0.9), Some(hitting_times(&t, &[0.9]).unwrap()[0].unwrap() as f64));
        assert_eq!(s.mean_share(), t.shares());
        let l10 = s.log10_inv_alpha.as_ref().unwrap();
        assert_eq!(l10[0].mean, t.last().log10_inv_alpha().unwrap()[0]);
    }

    #[test]
    fn censored_trials_are_counted_not_averaged() {
        let a = trace(RuleKind::Uniform, StoppingSpec::confidence(1e-9, 20), 1);
        let b = trace(RuleKind::Uniform, StoppingSpec::confidence(1e-9, 20), 2);
        assert!(a.censored && b.censored);
        let s = aggregate(&[a, b], &[0.999]).unwrap();
        assert_eq!(s.n_censored, 2);
        assert!(s.steps.mean.is_nan());
        assert_eq!(s.hitting[0].n_censored, 2);
    }

    #[test]
    fn mixed_rules_are_rejected() {
        let a = trace(RuleKind::Uniform, StoppingSpec::fixed_horizon(5), 1);
        let b = trace(RuleKind::Ts, StoppingSpec::fixed_horizon(5), 1);
        assert!(matches!(aggregate(&[a, b], &[]), Err(Error::Input(_))));
        assert!(aggregate(&[], &[]).is_err());
    }

    #[test]
    fn exponent_fit_on_synthetic_trace() {
        let mut t = trace(RuleKind::Uniform, StoppingSpec::fixed_horizon(50), 1);
        for r in &mut t.records {
            // error mass exp(−0.1 n − 1) on the two suboptimal arms
            let le = -0.1 * r.n as f64 - 1.0 - 2f64.ln();
            r.log_alpha = Some(vec![le, le, 0.0]);
            r.method = Some(EstimateMethod::Quadrature);
        }
        let fit = fit_exponent(&t, 0.5).unwrap();
        assert!((fit.rate - 0.1).abs() < 1e-9, "{fit:?}");
        assert!((fit.intercept - 1.0).abs() < 1e-7);
        assert!(!fit.truncated);
        assert_eq!(fit.points, 25);
    }

    #[test]
    fn exponent_fit_truncates_unresolvable_tail() {
        let mut t = trace(RuleKind::Uniform, StoppingSpec::fixed_horizon(40), 1);
        for r in &mut t.records {
            let mass: f64 = if r.n < 30 { (-0.5 * r.n as f64).exp() } else { 0.0 };
            r.log_alpha = Some(vec![(mass / 2.0).ln(), (mass / 2.0).ln(), (1.0 - mass).ln()]);
            r.method = Some(EstimateMethod::MonteCarlo);
        }
        let fit = fit_exponent(&t, 1.0).unwrap();
        assert!(fit.truncated);
        assert_eq!(fit.points, 29);
        assert!((fit.rate - 0.5).abs() < 1e-9);
    }

    #[test]
    fn quantiles_interpolate() {
        let s = Stats::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
        assert!((s.q10 - 1.3).abs() < 1e-12);
        assert!(Stats::of(&[]).mean.is_nan());
    }
}
