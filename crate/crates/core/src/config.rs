//! TOML experiment configuration.
//!
//! Parsing happens in two passes: serde reads the document into raw structs
//! that reject unknown keys, then [`ExperimentConfig::from_raw`] validates
//! every value and reports the offending key in dotted notation.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::expfam::{InstanceSpec, ObservationModel};
use crate::optprob::Utility;
use crate::posterior::DEFAULT_GRID_POINTS;
use crate::rules::{RuleConfig, RuleKind, RuleSpec};
use crate::sim::{BeliefSpec, Cadence, StoppingSpec, TraceOptions};

/// Confidence levels reported when the config does not list any.
pub const DEFAULT_LEVELS: [f64; 8] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    instance: RawInstance,
    #[serde(default)]
    rules: Vec<RawRule>,
    stopping: Option<RawStopping>,
    #[serde(default)]
    seeds: RawSeeds,
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    belief: RawBelief,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    model: String,
    sigma: Option<f64>,
    domain: Option<[f64; 2]>,
    means: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    name: String,
    label: Option<String>,
    beta: Option<f64>,
    mc_samples: Option<usize>,
    quadrature_points: Option<usize>,
    resample_cap: Option<u64>,
    direct_draw_above: Option<f64>,
    concentration_limit: Option<f64>,
    utility: Option<String>,
    psi: Option<Vec<f64>>,
    exploration: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStopping {
    mode: String,
    delta: Option<f64>,
    horizon: Option<u64>,
    cap: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeeds {
    #[serde(default = "one")]
    count: usize,
    #[serde(default = "one_u64")]
    base: u64,
}

impl Default for RawSeeds {
    fn default() -> Self {
        RawSeeds { count: 1, base: 1 }
    }
}

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    directory: Option<PathBuf>,
    dense_until: Option<u64>,
    every: Option<u64>,
    record_alpha: Option<bool>,
    all_traces: Option<bool>,
    levels: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    betas: Option<Vec<f64>>,
    tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBelief {
    kind: Option<String>,
    points: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedSpec {
    pub count: usize,
    pub base: u64,
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        crate::sim::seed_range(self.base, self.count)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSpec {
    pub directory: Option<PathBuf>,
    pub trace: TraceOptions,
    /// Write one trace file per seed instead of only the first seed's.
    pub all_traces: bool,
    pub levels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSpec {
    /// Values of β for which `Γ*_β` is reported.
    pub betas: Vec<f64>,
    /// Tolerance of the search over β for `Γ*`.
    pub tolerance: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            betas: vec![0.5],
            tolerance: 1e-6,
        }
    }
}

/// A validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub rules: Vec<RuleSpec>,
    /// Required by `simulate`, unused by `solve`.
    pub stopping: Option<StoppingSpec>,
    pub seeds: SeedSpec,
    pub output: OutputSpec,
    pub solver: SolverSpec,
    pub belief: BeliefSpec,
}

fn config_err(key: impl Into<String>) -> impl FnOnce(Error) -> Error {
    let key = key.into();
    move |e| match e {
        Error::Domain(m) | Error::Input(m) | Error::Solver(m) => Error::config(key, m),
        other => other,
    }
}

fn check(ok: bool, key: &str, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, msg))
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .map_or(String::new(), |l| format!(" (line {l})"));
            Error::config("config", format!("{}{line}", e.message()))
        })?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let instance = parse_instance(&raw.instance)?;
        let belief = parse_belief(&raw.belief)?;
        let prior = belief.prior_for(&instance).map_err(config_err("belief"))?;

        let mut rules = Vec::with_capacity(raw.rules.len());
        for (i, r) in raw.rules.iter().enumerate() {
            let spec = parse_rule(r, i)?;
            spec.validate_for(&prior).map_err(config_err(format!("rules[{i}]")))?;
            if rules.iter().any(|s: &RuleSpec| s.name() == spec.name()) {
                return Err(Error::config(
                    format!("rules[{i}].label"),
                    format!("rule name `{}` is used twice; give one a distinct label", spec.name()),
                ));
            }
            rules.push(spec);
        }

        let stopping = raw.stopping.as_ref().map(parse_stopping).transpose()?;
        check(raw.seeds.count >= 1, "seeds.count", "at least one seed is needed")?;

        let o = &raw.output;
        let cadence = Cadence {
            dense_until: o.dense_until.unwrap_or(Cadence::default().dense_until),
            every: o.every.unwrap_or(Cadence::default().every),
        };
        check(cadence.every >= 1, "output.every", "must be at least 1")?;
        let levels = match &o.levels {
            Some(l) => l.clone(),
            None => default_levels(stopping.as_ref()),
        };
        for &c in &levels {
            check(c > 0.0 && c <= 1.0, "output.levels", format!("levels must lie in (0, 1], got {c}"))?;
        }
        let output = OutputSpec {
            directory: o.directory.clone(),
            trace: TraceOptions {
                cadence,
                record_alpha: o.record_alpha.unwrap_or(true),
            },
            all_traces: o.all_traces.unwrap_or(false),
            levels,
        };

        let mut solver = SolverSpec::default();
        if let Some(b) = &raw.solver.betas {
            check(!b.is_empty(), "solver.betas", "list at least one value")?;
            for &x in b {
                check(x > 0.0 && x < 1.0, "solver.betas", format!("each beta must lie in (0, 1), got {x}"))?;
            }
            solver.betas = b.clone();
        }
        if let Some(t) = raw.solver.tolerance {
            check(t > 0.0 && t < 0.1, "solver.tolerance", format!("must lie in (0, 0.1), got {t}"))?;
            solver.tolerance = t;
        }

        Ok(ExperimentConfig {
            instance,
            rules,
            stopping,
            seeds: SeedSpec {
                count: raw.seeds.count,
                base: raw.seeds.base,
            },
            output,
            solver,
            belief,
        })
    }
}

/// Default levels: the standard list, cut at the stopping confidence.
pub fn default_levels(stopping: Option<&StoppingSpec>) -> Vec<f64> {
    let top = match stopping.map(|s| s.mode) {
        Some(crate::sim::StopMode::Confidence(delta)) => 1.0 - delta,
        _ => 1.0,
    };
    DEFAULT_LEVELS.iter().copied().filter(|&c| c <= top + 1e-12).collect()
}

fn parse_instance(raw: &RawInstance) -> Result<InstanceSpec> {
    let model = match raw.model.as_str() {
        "bernoulli" => {
            check(raw.sigma.is_none(), "instance.sigma", "bernoulli arms take no sigma")?;
            check(raw.domain.is_none(), "instance.domain", "bernoulli arms take no domain")?;
            ObservationModel::bernoulli()
        }
        "gaussian" => {
            let sigma = raw
                .sigma
                .ok_or_else(|| Error::config("instance.sigma", "gaussian arms need a noise level"))?;
            check(sigma > 0.0 && sigma.is_finite(), "instance.sigma", format!("must be positive, got {sigma}"))?;
            check(!raw.means.is_empty(), "instance.means", "list at least two means")?;
            let [lo, hi] = raw.domain.unwrap_or_else(|| {
                let lo = raw.means.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = raw.means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                [lo - 10.0 * sigma, hi + 10.0 * sigma]
            });
            ObservationModel::gaussian(sigma, lo, hi).map_err(config_err("instance.domain"))?
        }
        other => {
            return Err(Error::config(
                "instance.model",
                format!("unknown model `{other}`; expected `bernoulli` or `gaussian`"),
            ))
        }
    };
    InstanceSpec::new(model, raw.means.clone()).map_err(config_err("instance.means"))
}

fn parse_belief(raw: &RawBelief) -> Result<BeliefSpec> {
    match raw.kind.as_deref().unwrap_or("conjugate") {
        "conjugate" => {
            check(raw.points.is_none(), "belief.points", "only grid beliefs take a point count")?;
            Ok(BeliefSpec::Conjugate)
        }
        "grid" => {
            let points = raw.points.unwrap_or(DEFAULT_GRID_POINTS);
            check(points >= 2, "belief.points", format!("need at least 2 points, got {points}"))?;
            Ok(BeliefSpec::Grid { points })
        }
        other => Err(Error::config(
            "belief.kind",
            format!("unknown belief `{other}`; expected `conjugate` or `grid`"),
        )),
    }
}

fn parse_rule(raw: &RawRule, i: usize) -> Result<RuleSpec> {
    let key = |field: &str| format!("rules[{i}].{field}");
    let kind: RuleKind = raw.name.parse().map_err(config_err(key("name")))?;
    let d = RuleConfig::default();
    let utility = match raw.utility.as_deref() {
        None | Some("identity") => Utility::identity(),
        Some("natural") => Utility::natural(),
        Some(other) => {
            return Err(Error::config(
                key("utility"),
                format!("unknown utility `{other}`; expected `identity` or `natural`"),
            ))
        }
    };
    let config = RuleConfig {
        beta: raw.beta.unwrap_or(d.beta),
        mc_samples: raw.mc_samples.unwrap_or(d.mc_samples),
        quadrature_points: raw.quadrature_points.unwrap_or(d.quadrature_points),
        resample_cap: raw.resample_cap.unwrap_or(d.resample_cap),
        utility,
        direct_draw_above: raw.direct_draw_above.unwrap_or(d.direct_draw_above),
        concentration_limit: raw.concentration_limit.unwrap_or(d.concentration_limit),
    };
    // Every validation message starts with the name of the field it rejects.
    config.validate().map_err(|e| {
        let msg = e.to_string();
        let field = match &e {
            Error::Input(m) => m.split_whitespace().next().unwrap_or("").to_string(),
            _ => String::new(),
        };
        Error::config(key(&field), msg.trim_start_matches("invalid input: "))
    })?;
    Ok(RuleSpec {
        kind,
        config,
        psi: raw.psi.clone(),
        exploration: raw.exploration,
        label: raw.label.clone(),
    })
}

fn parse_stopping(raw: &RawStopping) -> Result<StoppingSpec> {
    let spec = match raw.mode.as_str() {
        "confidence" => {
            check(raw.horizon.is_none(), "stopping.horizon", "confidence stopping takes `delta`, not `horizon`")?;
            let delta = raw
                .delta
                .ok_or_else(|| Error::config("stopping.delta", "confidence stopping needs `delta`"))?;
            check(delta > 0.0 && delta < 1.0, "stopping.delta", format!("must lie in (0, 1), got {delta}"))?;
            StoppingSpec::confidence(delta, raw.cap.unwrap_or(100_000))
        }
        "fixed_horizon" => {
            check(raw.delta.is_none(), "stopping.delta", "fixed-horizon stopping takes `horizon`, not `delta`")?;
            let n = raw
                .horizon
                .ok_or_else(|| Error::config("stopping.horizon", "fixed-horizon stopping needs `horizon`"))?;
            StoppingSpec {
                cap: raw.cap.unwrap_or(n),
                ..StoppingSpec::fixed_horizon(n)
            }
        }
        other => {
            return Err(Error::config(
                "stopping.mode",
                format!("unknown mode `{other}`; expected `confidence` or `fixed_horizon`"),
            ))
        }
    };
    spec.validate().map_err(config_err("stopping"))?;
    Ok(spec)
}
