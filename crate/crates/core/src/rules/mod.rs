//! Allocation rules behind one selection interface.
//!
//! Each `select_*` function is a pure function of the belief state, the rule
//! configuration and a caller-owned random stream. [`Policy`] wraps a rule
//! for use inside a trial: it keeps quadrature tables between steps and the
//! plug-in allocation of the two-stage rule.

mod baseline;
mod toptwo;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optprob::{AlphaEngine, OptimalityEstimate, Utility, DEFAULT_CONCENTRATION_LIMIT};
use crate::posterior::{ArmBelief, BeliefState};

pub use baseline::{
    plug_in_instance, select_ei, select_fixed, select_map_toptwo, select_two_stage, select_uniform,
    TwoStage,
};
pub use toptwo::{
    psi_ttts_formula, select_ts, select_ttps, select_ttps_from, select_ttts, select_ttts_with,
    select_ttvs, select_ttvs_from, top_two, AlphaHint,
};

/// Tuning shared by all rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    /// Probability of measuring the leader in top-two rules.
    pub beta: f64,
    /// Joint posterior draws per Monte Carlo estimate.
    pub mc_samples: usize,
    pub quadrature_points: usize,
    /// Maximum redraws of the TTTS challenger loop.
    pub resample_cap: u64,
    /// Utility for TTVS value measures.
    pub utility: Utility,
    /// TTTS redraws done literally before the challenger is drawn directly
    /// from the conditional law `alpha_j / (1 − alpha_I)`, when log-space
    /// quadrature is available.
    pub direct_draw_above: f64,
    /// Beta posteriors with `a + b` above this leave the full-domain
    /// quadrature grid.
    pub concentration_limit: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            beta: 0.5,
            mc_samples: 10_000,
            quadrature_points: 1001,
            resample_cap: 1_000_000,
            utility: Utility::identity(),
            direct_draw_above: 1e3,
            concentration_limit: DEFAULT_CONCENTRATION_LIMIT,
        }
    }
}

impl RuleConfig {
    /// `beta = 1` is accepted: it degenerates top-two rules into their
    /// greedy counterparts.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Input(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if self.mc_samples == 0 {
            return Err(Error::Input("mc_samples must be positive".into()));
        }
        if self.quadrature_points < 3 {
            return Err(Error::Input(format!(
                "quadrature_points must be at least 3, got {}",
                self.quadrature_points
            )));
        }
        if self.resample_cap == 0 {
            return Err(Error::Input("resample_cap must be at least 1".into()));
        }
        if !(self.direct_draw_above >= 1.0) {
            return Err(Error::Input("direct_draw_above must be at least 1".into()));
        }
        if !(self.concentration_limit > 0.0) {
            return Err(Error::Input("concentration_limit must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn alpha_engine(&self, state: &BeliefState) -> Result<AlphaEngine> {
        let mut engine = AlphaEngine::new(state, self.quadrature_points, self.mc_samples)?;
        engine.concentration_limit = self.concentration_limit;
        Ok(engine)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Ts,
    Ttts,
    Ttps,
    Ttvs,
    Uniform,
    Fixed,
    TwoStage,
    Ei,
    MapToptwo,
}

impl RuleKind {
    pub const ALL: [RuleKind; 9] = [
        RuleKind::Ts,
        RuleKind::Ttts,
        RuleKind::Ttps,
        RuleKind::Ttvs,
        RuleKind::Uniform,
        RuleKind::Fixed,
        RuleKind::TwoStage,
        RuleKind::Ei,
        RuleKind::MapToptwo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Ts => "ts",
            RuleKind::Ttts => "ttts",
            RuleKind::Ttps => "ttps",
            RuleKind::Ttvs => "ttvs",
            RuleKind::Uniform => "uniform",
            RuleKind::Fixed => "fixed",
            RuleKind::TwoStage => "two_stage",
            RuleKind::Ei => "ei",
            RuleKind::MapToptwo => "map_toptwo",
        }
    }

    pub fn is_top_two(self) -> bool {
        matches!(
            self,
            RuleKind::Ttts | RuleKind::Ttps | RuleKind::Ttvs | RuleKind::MapToptwo
        )
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = RuleKind::ALL.iter().map(|k| k.name()).collect();
                Error::Input(format!("unknown rule `{s}`, expected one of {}", names.join(", ")))
            })
    }
}

/// A rule with its configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub kind: RuleKind,
    pub config: RuleConfig,
    /// Allocation played by `fixed`.
    pub psi: Option<Vec<f64>>,
    /// Exploration length of `two_stage`; defaults to `⌈N^{2/3}⌉`.
    pub exploration: Option<u64>,
    /// Name used in outputs; defaults to the rule kind.
    pub label: Option<String>,
}

impl RuleSpec {
    pub fn new(kind: RuleKind) -> Self {
        RuleSpec {
            kind,
            config: RuleConfig::default(),
            psi: None,
            exploration: None,
            label: None,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.config.beta = beta;
        self
    }

    pub fn fixed(psi: Vec<f64>) -> Self {
        RuleSpec {
            psi: Some(psi),
            ..RuleSpec::new(RuleKind::Fixed)
        }
    }

    pub fn name(&self) -> &str {
        self.label.as_deref().unwrap_or(self.kind.name())
    }

    /// Checks the spec on its own and against the belief state it will run on.
    pub fn validate_for(&self, state: &BeliefState) -> Result<()> {
        self.config.validate()?;
        match self.kind {
            RuleKind::Fixed => {
                let psi = self
                    .psi
                    .as_ref()
                    .ok_or_else(|| Error::Input("rule `fixed` needs an allocation `psi`".into()))?;
                baseline::check_allocation(psi, state.k())?;
            }
            RuleKind::Ei | RuleKind::MapToptwo => {
                if !matches!(state.arm(0), ArmBelief::Normal { .. }) {
                    return Err(Error::Input(format!(
                        "rule `{}` needs conjugate normal beliefs",
                        self.kind
                    )));
                }
            }
            _ => {}
        }
        if self.psi.is_some() && self.kind != RuleKind::Fixed {
            return Err(Error::Input(format!("`psi` is only meaningful for rule `fixed`, not `{}`", self.kind)));
        }
        if self.exploration.is_some() && self.kind != RuleKind::TwoStage {
            return Err(Error::Input(format!(
                "`exploration` is only meaningful for rule `two_stage`, not `{}`",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Result of one selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub chosen: usize,
    /// Leader `Î_n` (for non-top-two rules, the chosen arm).
    pub top: usize,
    /// Challenger `Ĵ_n`, when one was formed.
    pub alternative: Option<usize>,
    /// Selection probabilities, when known in closed form.
    pub psi_n: Option<Vec<f64>>,
    /// Set when the TTTS redraw loop hit its cap and fell back to the
    /// Monte Carlo runner-up.
    pub fallback: bool,
}

impl SelectionOutcome {
    pub(crate) fn single(chosen: usize, psi_n: Option<Vec<f64>>) -> Self {
        SelectionOutcome {
            chosen,
            top: chosen,
            alternative: None,
            psi_n,
            fallback: false,
        }
    }
}

/// A rule bound to a trial.
#[derive(Clone, Debug)]
pub struct Policy {
    spec: RuleSpec,
    engine: Option<AlphaEngine>,
    two_stage: Option<TwoStage>,
}

impl Policy {
    /// `budget` is the planned number of steps; only `two_stage` uses it.
    pub fn new(spec: RuleSpec, state: &BeliefState, budget: u64) -> Result<Self> {
        spec.validate_for(state)?;
        let two_stage = (spec.kind == RuleKind::TwoStage).then(|| TwoStage::new(budget, spec.exploration));
        Ok(Policy {
            spec,
            engine: None,
            two_stage,
        })
    }

    pub fn spec(&self) -> &RuleSpec {
        &self.spec
    }

    /// Whether every selection needs `alpha` for the current state.
    pub fn wants_alpha(&self) -> bool {
        self.spec.kind == RuleKind::Ttps
    }

    pub fn two_stage(&self) -> Option<&TwoStage> {
        self.two_stage.as_ref()
    }

    /// Chooses the next arm. `cached`, when given, must be the estimate for
    /// `state`.
    pub fn select<R: Rng + ?Sized>(
        &mut self,
        state: &BeliefState,
        cached: Option<&OptimalityEstimate>,
        rng: &mut R,
    ) -> Result<SelectionOutcome> {
        let cfg = &self.spec.config;
        match self.spec.kind {
            RuleKind::Ts => Ok(select_ts(state, cfg, rng)),
            RuleKind::Ttts => {
                let hint = match cached {
                    Some(est) => AlphaHint::Given(est),
                    None => {
                        if self.engine.is_none() {
                            self.engine = Some(cfg.alpha_engine(state)?);
                        }
                        AlphaHint::Engine(self.engine.as_mut().unwrap())
                    }
                };
                select_ttts_with(state, cfg, hint, rng)
            }
            RuleKind::Ttps => {
                let owned;
                let est = match cached {
                    Some(est) => est,
                    None => {
                        if self.engine.is_none() {
                            self.engine = Some(cfg.alpha_engine(state)?);
                        }
                        owned = self.engine.as_mut().unwrap().estimate(state, rng)?;
                        &owned
                    }
                };
                Ok(select_ttps_from(est, cfg.beta, rng))
            }
            RuleKind::Ttvs => select_ttvs(state, cfg, rng),
            RuleKind::Uniform => Ok(select_uniform(state.k(), rng)),
            RuleKind::Fixed => select_fixed(self.spec.psi.as_ref().unwrap(), rng),
            RuleKind::TwoStage => self.two_stage.as_mut().unwrap().select(state, cfg, rng),
            RuleKind::Ei => select_ei(state),
            RuleKind::MapToptwo => select_map_toptwo(state, cfg, rng),
        }
    }
}
