use rand::Rng;

use super::{RuleConfig, SelectionOutcome};
use crate::error::{Error, Result};
use crate::log_sum_exp;
use crate::optprob::{pick_winner, sample_approx, AlphaEngine, EstimateMethod, OptimalityEstimate};
use crate::posterior::BeliefState;

/// Source of `alpha` for the TTTS direct-draw path.
pub enum AlphaHint<'a> {
    /// Estimate already computed for the current state.
    Given(&'a OptimalityEstimate),
    /// Engine to query lazily, only if the redraw loop runs long.
    Engine(&'a mut AlphaEngine),
    /// Build a throwaway engine if needed.
    None,
}

/// Leader and challenger by value, ties to the lowest index.
pub fn top_two(values: &[f64]) -> (usize, usize) {
    let top = crate::argmax(values);
    (top, crate::argmax_excluding(values, top))
}

fn coin<R: Rng + ?Sized>(top: usize, alt: usize, k: usize, beta: f64, rng: &mut R) -> SelectionOutcome {
    let chosen = if rng.random::<f64>() < beta { top } else { alt };
    let mut psi = vec![0.0; k];
    psi[top] = beta;
    psi[alt] += 1.0 - beta;
    SelectionOutcome {
        chosen,
        top,
        alternative: Some(alt),
        psi_n: Some(psi),
        fallback: false,
    }
}

/// Thompson sampling: play the argmax of one posterior draw.
pub fn select_ts<R: Rng + ?Sized>(state: &BeliefState, _cfg: &RuleConfig, rng: &mut R) -> SelectionOutcome {
    let mut draw = vec![0.0; state.k()];
    state.sampler().draw_into(rng, &mut draw);
    let (winner, _) = pick_winner(&draw, rng);
    SelectionOutcome::single(winner, None)
}

/// Top-two Thompson sampling.
pub fn select_ttts<R: Rng + ?Sized>(state: &BeliefState, cfg: &RuleConfig, rng: &mut R) -> Result<SelectionOutcome> {
    select_ttts_with(state, cfg, AlphaHint::None, rng)
}

/// Top-two Thompson sampling with a source of `alpha`.
///
/// The leader is the argmax of one posterior draw. With probability `β` it
/// is played; otherwise draws are repeated until a different arm wins. After
/// `direct_draw_above` fruitless redraws the challenger is drawn directly
/// from `alpha_j / (1 − alpha_I)`, the exit law of the loop, when a
/// quadrature estimate is available. Otherwise the loop runs on up to
/// `resample_cap` redraws and then falls back to the runner-up of a fresh
/// Monte Carlo estimate.
pub fn select_ttts_with<R: Rng + ?Sized>(
    state: &BeliefState,
    cfg: &RuleConfig,
    hint: AlphaHint<'_>,
    rng: &mut R,
) -> Result<SelectionOutcome> {
    let k = state.k();
    let sampler = state.sampler();
    let mut draw = vec![0.0; k];
    sampler.draw_into(rng, &mut draw);
    let (top, _) = pick_winner(&draw, rng);
    if rng.random::<f64>() < cfg.beta {
        return Ok(SelectionOutcome::single(top, None));
    }
    let found = |alt: usize| SelectionOutcome {
        chosen: alt,
        top,
        alternative: Some(alt),
        psi_n: None,
        fallback: false,
    };
    let literal = cfg.resample_cap.min(cfg.direct_draw_above.ceil() as u64);
    for _ in 0..literal {
        sampler.draw_into(rng, &mut draw);
        let (j, _) = pick_winner(&draw, rng);
        if j != top {
            return Ok(found(j));
        }
    }
    let owned;
    let estimate = match hint {
        AlphaHint::Given(est) => Some(est),
        AlphaHint::Engine(engine) => {
            owned = engine.estimate(state, rng)?;
            Some(&owned)
        }
        AlphaHint::None => {
            owned = cfg.alpha_engine(state)?.estimate(state, rng)?;
            Some(&owned)
        }
    };
    if let Some(est) = estimate.filter(|e| e.method == EstimateMethod::Quadrature) {
        if let Some(j) = draw_challenger(&est.log_alpha, top, rng) {
            return Ok(found(j));
        }
    } else {
        for _ in literal..cfg.resample_cap {
            sampler.draw_into(rng, &mut draw);
            let (j, _) = pick_winner(&draw, rng);
            if j != top {
                return Ok(found(j));
            }
        }
    }
    let fresh = sample_approx(state, cfg.mc_samples, None, rng)?;
    let alt = crate::argmax_excluding(&fresh.alpha, top);
    log::warn!(
        "ttts redraw loop exhausted after {} draws at n = {}; playing Monte Carlo runner-up {alt}",
        cfg.resample_cap,
        state.n
    );
    Ok(SelectionOutcome {
        fallback: true,
        ..found(alt)
    })
}

// Draws j != top with probability alpha_j / Σ_{l≠top} alpha_l.
fn draw_challenger<R: Rng + ?Sized>(log_alpha: &[f64], top: usize, rng: &mut R) -> Option<usize> {
    let rest: Vec<f64> = log_alpha
        .iter()
        .enumerate()
        .map(|(j, &l)| if j == top { f64::NEG_INFINITY } else { l })
        .collect();
    let total = log_sum_exp(&rest);
    if !total.is_finite() {
        return None;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (j, &l) in rest.iter().enumerate() {
        if l == f64::NEG_INFINITY {
            continue;
        }
        acc += (l - total).exp();
        last = Some(j);
        if u < acc {
            return Some(j);
        }
    }
    last
}

/// `ψ_i = α_i (β + (1−β) Σ_{j≠i} α_j / (1 − α_j))`, the TTTS selection
/// probabilities.
pub fn psi_ttts_formula(alpha: &[f64], beta: f64) -> Result<Vec<f64>> {
    if alpha.len() < 2 {
        return Err(Error::Input("alpha needs at least two entries".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!("beta must lie in [0, 1], got {beta}")));
    }
    if alpha.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
        return Err(Error::Input(format!("alpha entries must lie in [0, 1], got {alpha:?}")));
    }
    if (alpha.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("alpha must sum to one, got {alpha:?}")));
    }
    if alpha.iter().any(|&a| a >= 1.0) {
        return Err(Error::Domain(
            "an arm with alpha = 1 leaves the redraw loop without an exit".into(),
        ));
    }
    let odds: Vec<f64> = alpha.iter().map(|a| a / (1.0 - a)).collect();
    let total: f64 = odds.iter().sum();
    Ok(alpha
        .iter()
        .zip(&odds)
        .map(|(a, o)| a * (beta + (1.0 - beta) * (total - o)))
        .collect())
}

/// Top-two probability sampling, estimating `alpha` from scratch.
pub fn select_ttps<R: Rng + ?Sized>(state: &BeliefState, cfg: &RuleConfig, rng: &mut R) -> Result<SelectionOutcome> {
    let est = cfg.alpha_engine(state)?.estimate(state, rng)?;
    Ok(select_ttps_from(&est, cfg.beta, rng))
}

/// Top-two probability sampling on a given estimate. Leader and challenger
/// are ranked by `log_alpha`, so arms whose probabilities underflow in
/// linear space are still ordered.
pub fn select_ttps_from<R: Rng + ?Sized>(est: &OptimalityEstimate, beta: f64, rng: &mut R) -> SelectionOutcome {
    let (top, alt) = top_two(&est.log_alpha);
    coin(top, alt, est.k(), beta, rng)
}

/// Top-two value sampling with Monte Carlo value measures.
pub fn select_ttvs<R: Rng + ?Sized>(state: &BeliefState, cfg: &RuleConfig, rng: &mut R) -> Result<SelectionOutcome> {
    let est = sample_approx(state, cfg.mc_samples, Some(&cfg.utility), rng)?;
    select_ttvs_from(&est, cfg.beta, rng)
}

/// Top-two value sampling on an estimate carrying value measures.
pub fn select_ttvs_from<R: Rng + ?Sized>(est: &OptimalityEstimate, beta: f64, rng: &mut R) -> Result<SelectionOutcome> {
    let values = est
        .value
        .as_ref()
        .ok_or_else(|| Error::Input("estimate carries no value measures".into()))?;
    let (top, alt) = top_two(values);
    Ok(coin(top, alt, est.k(), beta, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::ObservationModel;
    use crate::optprob::{draw_joint, estimate_from_draws, Utility};
    use crate::posterior::ArmBelief;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn point_state(idx: &[usize]) -> BeliefState {
        let points = vec![0.1, 0.3, 0.5, 0.7, 0.9];
        let arms = idx
            .iter()
            .map(|&i| {
                let mut w = vec![f64::NEG_INFINITY; 5];
                w[i] = 0.0;
                ArmBelief::Grid {
                    points: points.clone(),
                    log_weights: w,
                }
            })
            .collect();
        BeliefState::from_arms(ObservationModel::bernoulli(), arms).unwrap()
    }

    #[test]
    fn psi_formula_examples() {
        let p = psi_ttts_formula(&[0.5, 0.5], 0.5).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        let p = psi_ttts_formula(&[0.8, 0.2], 0.5).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let p = psi_ttts_formula(&[0.5, 0.3, 0.2], 0.5).unwrap();
        assert!((p[0] - 0.419643).abs() < 1e-6);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(psi_ttts_formula(&[1.0, 0.0], 0.5), Err(Error::Domain(_))));
        assert!(psi_ttts_formula(&[0.5, 0.4], 0.5).is_err());
    }

    #[test]
    fn ts_follows_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = point_state(&[1, 0, 4]);
        for _ in 0..100 {
            assert_eq!(select_ts(&s, &RuleConfig::default(), &mut rng).chosen, 2);
        }
    }

    #[test]
    fn ttps_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let alpha = vec![0.7, 0.2, 0.1];
        let est = OptimalityEstimate {
            log_alpha: alpha.iter().map(|a: &f64| a.ln()).collect(),
            alpha,
            value: None,
            method: EstimateMethod::Quadrature,
            samples_or_points: 3,
        };
        let out = select_ttps_from(&est, 0.5, &mut rng);
        assert_eq!(out.psi_n, Some(vec![0.5, 0.5, 0.0]));
        assert_eq!((out.top, out.alternative), (0, Some(1)));
        for _ in 0..100 {
            assert_eq!(select_ttps_from(&est, 1.0, &mut rng).chosen, 0);
        }
    }

    #[test]
    fn ttvs_degenerate_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = point_state(&[1, 3, 2]);
        let cfg = RuleConfig {
            mc_samples: 100,
            ..RuleConfig::default()
        };
        let out = select_ttvs(&s, &cfg, &mut rng).unwrap();
        assert_eq!((out.top, out.alternative), (1, Some(0)));
    }

    #[test]
    fn ttvs_affine_utility_same_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = BeliefState::beta(&[(3.0, 4.0), (5.0, 3.0), (4.0, 4.0), (2.0, 2.0)]).unwrap();
        let draws = draw_joint(&s, 4000, &mut rng);
        let u = Utility::identity();
        let v = u.affine(2.0, 7.0).unwrap();
        let a = estimate_from_draws(&s.model, &draws, 4, Some(&u), &mut rng).unwrap();
        let b = estimate_from_draws(&s.model, &draws, 4, Some(&v), &mut rng).unwrap();
        assert_eq!(top_two(a.value.as_ref().unwrap()), top_two(b.value.as_ref().unwrap()));
    }

    #[test]
    fn ttts_beta_one_never_redraws() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = BeliefState::beta(&[(3.0, 4.0), (5.0, 3.0)]).unwrap();
        let cfg = RuleConfig {
            beta: 1.0,
            ..RuleConfig::default()
        };
        for _ in 0..100 {
            let out = select_ttts(&s, &cfg, &mut rng).unwrap();
            assert_eq!(out.alternative, None);
        }
    }

    #[test]
    fn ttts_two_arms_alternative_is_other_arm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = BeliefState::beta(&[(3.0, 4.0), (5.0, 3.0)]).unwrap();
        for _ in 0..200 {
            let out = select_ttts(&s, &RuleConfig::default(), &mut rng).unwrap();
            if let Some(alt) = out.alternative {
                assert_ne!(alt, out.top);
                assert_eq!(out.chosen, alt);
            }
        }
    }

    #[test]
    fn ttts_cap_falls_back() {
        // Leader is certain: the loop never exits and quadrature gives the
        // other arms no mass, so the Monte Carlo runner-up is played.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = point_state(&[4, 1, 2]);
        let cfg = RuleConfig {
            beta: 0.0001,
            resample_cap: 50,
            mc_samples: 10,
            ..RuleConfig::default()
        };
        let out = select_ttts_with(&s, &cfg, AlphaHint::None, &mut rng).unwrap();
        assert!(out.fallback);
        assert_eq!((out.top, out.chosen), (0, 1));
    }

    #[test]
    fn ttts_direct_draw_on_concentrated_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = ObservationModel::gaussian(1.0, -1.0, 2.0).unwrap();
        let mut s = BeliefState::uniform_grid(model, 3, 1001).unwrap();
        for _ in 0..400 {
            s.update(0, 1.0).unwrap();
            s.update(1, 0.5).unwrap();
            s.update(2, 0.0).unwrap();
        }
        let cfg = RuleConfig::default();
        let mut counts = [0usize; 3];
        for _ in 0..200 {
            let out = select_ttts(&s, &cfg, &mut rng).unwrap();
            assert!(!out.fallback);
            counts[out.chosen] += 1;
        }
        assert!(counts[0] > 60 && counts[1] > 60, "{counts:?}");
    }
}
