use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{RuleConfig, SelectionOutcome};
use crate::error::{Error, Result};
use crate::exponent::solve_gamma_star;
use crate::expfam::{InstanceSpec, ObservationModel, MIN_TOP_GAP};
use crate::posterior::{ln_normal_cdf, ArmBelief, BeliefState};

pub(crate) fn check_allocation(psi: &[f64], k: usize) -> Result<()> {
    if psi.len() != k {
        return Err(Error::Input(format!("allocation has {} entries for {k} arms", psi.len())));
    }
    if psi.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::Input(format!("allocation entries must be nonnegative, got {psi:?}")));
    }
    let total: f64 = psi.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("allocation must sum to one, got {total}")));
    }
    Ok(())
}

/// Measures every arm with probability `1/k`.
pub fn select_uniform<R: Rng + ?Sized>(k: usize, rng: &mut R) -> SelectionOutcome {
    let chosen = rng.random_range(0..k);
    SelectionOutcome::single(chosen, Some(vec![1.0 / k as f64; k]))
}

/// Measures arm `i` with probability `psi[i]`.
pub fn select_fixed<R: Rng + ?Sized>(psi: &[f64], rng: &mut R) -> Result<SelectionOutcome> {
    check_allocation(psi, psi.len())?;
    let u: f64 = rng.random::<f64>() * psi.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut chosen = None;
    for (i, &p) in psi.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        chosen = Some(i);
        if u < acc {
            break;
        }
    }
    let chosen = chosen.ok_or_else(|| Error::Input("allocation has no positive entry".into()))?;
    Ok(SelectionOutcome::single(chosen, Some(psi.to_vec())))
}

/// Two-stage plug-in rule: uniform exploration for `n0` steps, then the
/// optimal allocation computed from the posterior means at that point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStage {
    pub n0: u64,
    pub psi_hat: Option<Vec<f64>>,
}

impl TwoStage {
    /// `n0` defaults to `⌈budget^{2/3}⌉`.
    pub fn new(budget: u64, exploration: Option<u64>) -> Self {
        let n0 = exploration.unwrap_or_else(|| {
            let mut n0 = (budget as f64).powf(2.0 / 3.0).ceil() as u64;
            // guard against powf rounding just above an exact cube
            let square = budget.saturating_mul(budget);
            while n0 > 1 && (n0 - 1).saturating_pow(3) >= square {
                n0 -= 1;
            }
            while n0.saturating_pow(3) < square {
                n0 += 1;
            }
            n0
        });
        TwoStage { n0, psi_hat: None }
    }

    pub fn select<R: Rng + ?Sized>(&mut self, state: &BeliefState, _cfg: &RuleConfig, rng: &mut R) -> Result<SelectionOutcome> {
        if state.n < self.n0 {
            return Ok(select_uniform(state.k(), rng));
        }
        if self.psi_hat.is_none() {
            let instance = plug_in_instance(&state.model, &state.posterior_means())?;
            self.psi_hat = Some(solve_gamma_star(&instance)?.psi);
        }
        select_fixed(self.psi_hat.as_ref().unwrap(), rng)
    }
}

/// Free-function form of [`TwoStage::select`].
pub fn select_two_stage<R: Rng + ?Sized>(
    state: &BeliefState,
    cfg: &RuleConfig,
    schedule: &mut TwoStage,
    rng: &mut R,
) -> Result<SelectionOutcome> {
    schedule.select(state, cfg, rng)
}

/// Instance built from estimated means: clamped into the domain and with
/// ties separated by `2·MIN_TOP_GAP`, keeping the lowest index on top.
pub fn plug_in_instance(model: &ObservationModel, means: &[f64]) -> Result<InstanceSpec> {
    let (lo, hi) = model.domain();
    let margin = 1e-6 * (hi - lo);
    let mut adjusted: Vec<f64> = means.iter().map(|m| m.clamp(lo + margin, hi - margin)).collect();
    let mut order: Vec<usize> = (0..adjusted.len()).collect();
    order.sort_by(|&a, &b| adjusted[b].total_cmp(&adjusted[a]).then(a.cmp(&b)));
    let step = 2.0 * MIN_TOP_GAP;
    for w in 1..order.len() {
        let (prev, cur) = (order[w - 1], order[w]);
        if adjusted[cur] > adjusted[prev] - step {
            adjusted[cur] = adjusted[prev] - step;
        }
    }
    if adjusted.iter().any(|&m| m <= lo) {
        return Err(Error::Solver(format!(
            "cannot separate tied plug-in means {means:?} inside the domain"
        )));
    }
    InstanceSpec::new(*model, adjusted)
}

fn normal_arms(state: &BeliefState, rule: &str) -> Result<Vec<(f64, f64, f64)>> {
    state
        .arms()
        .iter()
        .map(|arm| match arm {
            ArmBelief::Normal { mean, var, noise_var } => Ok((*mean, *var, *noise_var)),
            _ => Err(Error::Input(format!("rule `{rule}` needs conjugate normal beliefs"))),
        })
        .collect()
}

// ln(φ(z) + zΦ(z)), the standardized expected improvement.
fn ln_ei_kernel(z: f64) -> f64 {
    let ln_phi = -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
    if z > -8.0 {
        (ln_phi.exp() + z * ln_normal_cdf(z).exp()).ln()
    } else {
        let z2 = z * z;
        let series = 1.0 - 3.0 / z2 + 15.0 / (z2 * z2) - 105.0 / (z2 * z2 * z2);
        ln_phi - 2.0 * (-z).ln() + series.ln()
    }
}

/// `ln EI_i` for every arm of a normal belief state, where
/// `EI_i = E[(θ_i − m*)⁺] = s_i f((m_i − m*)/s_i)`, `f(z) = φ(z) + zΦ(z)`,
/// and `m*` is the largest posterior mean. The leader scores `s φ(0)`, which
/// shrinks only polynomially, so challengers get logarithmic effort.
pub fn log_expected_improvement(state: &BeliefState) -> Result<Vec<f64>> {
    let arms = normal_arms(state, "ei")?;
    let incumbent = arms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(arms
        .iter()
        .map(|&(m, var, _)| {
            let s = var.sqrt();
            if s == 0.0 {
                (m - incumbent).max(0.0).ln()
            } else {
                s.ln() + ln_ei_kernel((m - incumbent) / s)
            }
        })
        .collect())
}

/// Expected improvement: plays the arm with the largest
/// [`log_expected_improvement`]. Deterministic; ties go to the lowest index.
pub fn select_ei(state: &BeliefState) -> Result<SelectionOutcome> {
    let ei = log_expected_improvement(state)?;
    Ok(SelectionOutcome::single(crate::argmax(&ei), None))
}

/// Top-two sampling via constrained MAP estimation for normal beliefs. The
/// leader is the arm with the largest posterior mean; the challenger is the
/// arm whose cheapest tie with the leader, `(m_I − m_j)² / (2(s_I² + s_j²))`,
/// costs the least posterior log-density.
pub fn select_map_toptwo<R: Rng + ?Sized>(state: &BeliefState, cfg: &RuleConfig, rng: &mut R) -> Result<SelectionOutcome> {
    let arms = normal_arms(state, "map_toptwo")?;
    let means: Vec<f64> = arms.iter().map(|a| a.0).collect();
    let top = crate::argmax(&means);
    let (mt, vt, _) = arms[top];
    let neg_penalty: Vec<f64> = arms
        .iter()
        .enumerate()
        .map(|(j, &(m, v, _))| {
            if j == top {
                f64::NEG_INFINITY
            } else {
                -(mt - m) * (mt - m) / (2.0 * (vt + v))
            }
        })
        .collect();
    let alt = crate::argmax_excluding(&neg_penalty, top);
    let chosen = if rng.random::<f64>() < cfg.beta { top } else { alt };
    let mut psi = vec![0.0; state.k()];
    psi[top] = cfg.beta;
    psi[alt] += 1.0 - cfg.beta;
    Ok(SelectionOutcome {
        chosen,
        top,
        alternative: Some(alt),
        psi_n: Some(psi),
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normal_state(params: &[(f64, f64)]) -> BeliefState {
        let model = ObservationModel::gaussian(1.0, -10.0, 10.0).unwrap();
        let arms = params
            .iter()
            .map(|&(mean, var)| ArmBelief::Normal {
                mean,
                var,
                noise_var: 1.0,
            })
            .collect();
        BeliefState::from_arms(model, arms).unwrap()
    }

    #[test]
    fn fixed_point_mass_always_plays_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(select_fixed(&[1.0, 0.0, 0.0], &mut rng).unwrap().chosen, 0);
            assert_eq!(select_fixed(&[0.0, 0.0, 1.0], &mut rng).unwrap().chosen, 2);
        }
        assert!(select_fixed(&[0.5, 0.6], &mut rng).is_err());
        assert!(select_fixed(&[1.5, -0.5], &mut rng).is_err());
    }

    #[test]
    fn two_stage_exploration_length() {
        assert_eq!(TwoStage::new(1000, None).n0, 100);
        assert_eq!(TwoStage::new(100_000, None).n0, 2155);
        assert_eq!(TwoStage::new(8, None).n0, 4);
        assert_eq!(TwoStage::new(100, Some(7)).n0, 7);
    }

    #[test]
    fn two_stage_with_true_means_plays_optimal_allocation() {
        let means = [0.1, 0.2, 0.3, 0.4, 0.5];
        let params: Vec<(f64, f64)> = means.iter().map(|&m| (m * 1e6, (1.0 - m) * 1e6)).collect();
        let mut state = BeliefState::beta(&params).unwrap();
        state.n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ts = TwoStage::new(100, Some(10));
        ts.select(&state, &RuleConfig::default(), &mut rng).unwrap();
        let inst = InstanceSpec::new(ObservationModel::bernoulli(), means.to_vec()).unwrap();
        let star = solve_gamma_star(&inst).unwrap();
        let plug = plug_in_instance(&state.model, &state.posterior_means()).unwrap();
        assert_eq!(plug.means(), inst.means());
        assert_eq!(ts.psi_hat.unwrap(), star.psi);
    }

    #[test]
    fn plug_in_separates_ties() {
        let model = ObservationModel::bernoulli();
        let inst = plug_in_instance(&model, &[0.5, 0.5, 0.2, 0.5]).unwrap();
        assert_eq!(inst.best(), 0);
        assert!(inst.means()[1] < 0.5 && inst.means()[3] < inst.means()[1]);
        let inst = plug_in_instance(&model, &[0.0, 1.0]).unwrap();
        assert_eq!(inst.best(), 1);
    }

    #[test]
    fn ei_ties_and_variance() {
        let s = normal_state(&[(0.0, 1.0), (0.0, 1.0)]);
        assert_eq!(select_ei(&s).unwrap().chosen, 0);
        let s = normal_state(&[(1.0, 0.01), (0.0, 0.01), (0.5, 100.0)]);
        assert_eq!(select_ei(&s).unwrap().chosen, 2);
    }

    #[test]
    fn ei_kernel_continuous_at_switch() {
        let a = ln_ei_kernel(-8.0 + 1e-9);
        let b = ln_ei_kernel(-8.0 - 1e-9);
        assert!((a - b).abs() < 1e-4, "{a} {b}");
        assert!(ln_ei_kernel(-300.0).is_finite());
        // closed form at z = 0: φ(0)
        assert!((ln_ei_kernel(0.0).exp() - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn ei_degenerate_variance() {
        let model = ObservationModel::gaussian(1.0, -10.0, 10.0).unwrap();
        let arms = vec![
            ArmBelief::Normal { mean: 1.0, var: 1e-300, noise_var: 1.0 },
            ArmBelief::Normal { mean: 0.0, var: 1e-300, noise_var: 1.0 },
        ];
        let s = BeliefState::from_arms(model, arms).unwrap();
        let ei = log_expected_improvement(&s).unwrap();
        // the leader keeps s φ(0); the settled loser has nothing left
        assert!(ei[0].is_finite() && ei[1] < -1e290, "{ei:?}");
        assert_eq!(select_ei(&s).unwrap().chosen, 0);
        let s = normal_state(&[(1.0, 1e-4), (0.0, 1e-4)]);
        assert!((log_expected_improvement(&s).unwrap()[0] - (1e-2f64 * 0.398_942_280_401_432_7).ln()).abs() < 1e-9);
    }

    #[test]
    fn map_equal_variances_picks_closest_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = normal_state(&[(0.2, 0.5), (1.0, 0.5), (0.7, 0.5), (0.4, 0.5)]);
        let out = select_map_toptwo(&s, &RuleConfig::default(), &mut rng).unwrap();
        assert_eq!((out.top, out.alternative), (1, Some(2)));
        let cfg = RuleConfig {
            beta: 1.0,
            ..RuleConfig::default()
        };
        for _ in 0..100 {
            assert_eq!(select_map_toptwo(&s, &cfg, &mut rng).unwrap().chosen, 1);
        }
    }

    #[test]
    fn map_uncertain_arm_beats_close_precise_arm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // penalties: arm 1: 0.04 / (2 * 0.002) = 10; arm 2: 1 / (2 * 1.001) ≈ 0.5
        let s = normal_state(&[(1.0, 0.001), (0.8, 0.001), (0.0, 1.0)]);
        let out = select_map_toptwo(&s, &RuleConfig::default(), &mut rng).unwrap();
        assert_eq!(out.alternative, Some(2));
        // Oracle: maximize the joint log-density over {θ_0 = θ_j = x} on a dense grid.
        let dens = |x: f64, j: usize| {
            let (m0, v0) = (1.0, 0.001);
            let (mj, vj) = [(1.0, 0.001), (0.8, 0.001), (0.0, 1.0)][j];
            -(x - m0) * (x - m0) / (2.0 * v0) - (x - mj) * (x - mj) / (2.0 * vj)
        };
        let best = |j: usize| {
            (0..=200_000)
                .map(|t| dens(-0.5 + 2.0 * t as f64 / 200_000.0, j))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        assert!(best(2) > best(1));
        assert!((best(2) + 1.0 / (2.0 * 1.001)).abs() < 1e-6);
    }
}
