//! Command-line front end: `solve`, `simulate` and `reproduce`.
//!
//! Parsing, dispatch and file writing run on the calling thread; trials run
//! on a rayon pool sized by `--threads`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, OutputSpec, SeedSpec, SolverSpec, DEFAULT_LEVELS};
use crate::error::{Error, Result};
use crate::exponent::{self, ExponentSolution};
use crate::expfam::{InstanceSpec, ObservationModel};
use crate::rules::{RuleKind, RuleSpec};
use crate::sim::{self, BeliefSpec, StopMode, StoppingSpec, Summary, Trace, TraceOptions};

/// Exit status for success, including runs that only produced warnings.
pub const EXIT_OK: i32 = 0;
/// Exit status for anything not covered below (I/O failures and the like).
pub const EXIT_OTHER: i32 = 1;
/// Exit status for invalid configuration or arguments.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for numerical failures.
pub const EXIT_SOLVER: i32 = 3;

/// Environment variable that sets the output directory when `--out` is absent.
pub const OUT_ENV: &str = "TOPTWO_OUT";

#[derive(Debug, Parser)]
#[command(name = "toptwo", version, about = "Top-two allocation rules for best-arm identification")]
pub struct Cli {
    /// Output directory; overrides the config and the TOPTWO_OUT variable.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Number of seeds; overrides the config.
    #[arg(long, global = true)]
    pub seeds: Option<usize>,
    /// Worker threads for trials (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the optimal exponents and allocations; writes exponents.json.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every configured rule over every seed; writes traces and summaries.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rerun the five-arm Bernoulli experiment behind one figure.
    Reproduce {
        figure: Figure,
        /// Optional config whose [seeds] and [output] sections are honoured.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// Thompson sampling against TTTS: confidence level vs mean samples.
    Fig1a,
    /// Top-two rules against uniform allocation: confidence level vs mean samples.
    Fig1b,
    /// Mean measurements per arm at the 0.999 stopping time.
    Fig2a,
    /// Mean log10(1/alpha) per arm at the 0.999 stopping time.
    Fig2b,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig1a => "fig1a",
            Figure::Fig1b => "fig1b",
            Figure::Fig2a => "fig2a",
            Figure::Fig2b => "fig2b",
        }
    }
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Solver(_) => EXIT_SOLVER,
        _ => EXIT_OTHER,
    }
}

/// Runs the parsed command line and returns the exit status. Errors are
/// printed to stderr.
pub fn run(cli: Cli) -> i32 {
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    if cli.seeds == Some(0) {
        return Err(Error::config("--seeds", "at least one seed is needed"));
    }
    if cli.threads == Some(0) {
        return Err(Error::config("--threads", "at least one thread is needed"));
    }
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = cli.threads {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| Error::Input(format!("cannot start worker threads: {e}")))?
    };
    pool.install(|| match &cli.command {
        Command::Solve { config } => {
            let cfg = ExperimentConfig::from_path(config)?;
            let out = out_dir(cli, &cfg.output);
            cmd_solve(&cfg, &out)
        }
        Command::Simulate { config } => {
            let mut cfg = ExperimentConfig::from_path(config)?;
            if let Some(n) = cli.seeds {
                cfg.seeds.count = n;
            }
            let out = out_dir(cli, &cfg.output);
            cmd_simulate(&cfg, &out)
        }
        Command::Reproduce { figure, config } => {
            let mut cfg = figure_config(*figure)?;
            if let Some(path) = config {
                let user = ExperimentConfig::from_path(path)?;
                cfg.seeds = user.seeds;
                cfg.output.directory = user.output.directory;
            }
            if let Some(n) = cli.seeds {
                cfg.seeds.count = n;
            }
            let out = out_dir(cli, &cfg.output);
            cmd_reproduce(*figure, &cfg, &out)
        }
    })
}

fn out_dir(cli: &Cli, output: &OutputSpec) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| output.directory.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Contents of `exponents.json`. Arms are indexed from 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub model: String,
    pub sigma: Option<f64>,
    pub means: Vec<f64>,
    pub best: usize,
    pub fingerprint: String,
    pub gamma_star: f64,
    pub beta_star: f64,
    pub psi_star: Vec<f64>,
    pub by_beta: Vec<BetaEntry>,
    pub bounds: BoundsEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaEntry {
    pub beta: f64,
    pub gamma: f64,
    pub psi: Vec<f64>,
    /// `C_i(β, ψ_i)` per arm; zero at the best arm.
    pub c_values: Vec<f64>,
    /// `Γ* / Γ*_β`.
    pub ratio: f64,
    /// `max{β*/β, (1−β*)/(1−β)}`, an upper bound on `ratio`.
    pub ratio_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsEntry {
    /// `1 / (16 σ² Σ_{i≠I*} Δ_i^{-2})`, a lower bound on `Γ*_{1/2}`.
    pub subgaussian: f64,
    /// Exponent of the uniform allocation.
    pub uniform_rate: f64,
    /// `min_i Δ_i² / (4 k σ²)`, Gaussian arms only.
    pub uniform_rate_gaussian: Option<f64>,
}

fn entry(sol: &ExponentSolution, star: &ExponentSolution) -> Result<BetaEntry> {
    Ok(BetaEntry {
        beta: sol.beta,
        gamma: sol.gamma,
        psi: sol.psi.clone(),
        c_values: sol.c_values.clone(),
        ratio: star.gamma / sol.gamma,
        ratio_bound: exponent::ratio_bound(sol.beta, star.beta)?,
    })
}

/// Solves everything reported in `exponents.json`.
pub fn exponent_report(instance: &InstanceSpec, solver: &SolverSpec) -> Result<ExponentReport> {
    let star = exponent::solve_gamma_star_tol(instance, solver.tolerance)?;
    let by_beta = exponent::scan_gamma_beta(instance, &solver.betas)?
        .iter()
        .map(|s| entry(s, &star))
        .collect::<Result<Vec<_>>>()?;
    let bounds = exponent::reference_bounds(instance)?;
    Ok(ExponentReport {
        model: instance.model.name().to_string(),
        sigma: instance.model.sigma(),
        means: instance.means().to_vec(),
        best: instance.best(),
        fingerprint: instance.fingerprint(),
        gamma_star: star.gamma,
        beta_star: star.beta,
        psi_star: star.psi.clone(),
        by_beta,
        bounds: BoundsEntry {
            subgaussian: bounds.subgaussian,
            uniform_rate: bounds.uniform_rate,
            uniform_rate_gaussian: bounds.uniform_rate_gaussian,
        },
    })
}

pub fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let report = exponent_report(&cfg.instance, &cfg.solver)?;
    let path = out.join("exponents.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    println!(
        "gamma_star = {:.6e} at beta_star = {:.6}; psi_star = {}",
        report.gamma_star,
        report.beta_star,
        fmt_vec(&report.psi_star)
    );
    for e in &report.by_beta {
        println!("gamma_beta({}) = {:.6e}; psi = {}", e.beta, e.gamma, fmt_vec(&e.psi));
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Runs one rule over all seeds and writes its trace files.
fn run_rule(cfg: &ExperimentConfig, rule: &RuleSpec, stopping: &StoppingSpec, out: &Path) -> Result<Vec<Trace>> {
    let traces = sim::run_trials(
        &cfg.instance,
        rule,
        &cfg.belief,
        stopping,
        &cfg.output.trace,
        &cfg.seeds.seeds(),
    )?;
    let dir = out.join(rule.name());
    sim::write_trace_csv(create(&dir.join("trace.csv"))?, &traces[0])?;
    if cfg.output.all_traces {
        for t in &traces {
            sim::write_trace_csv(create(&dir.join(format!("trace_seed{}.csv", t.seed)))?, t)?;
        }
    }
    Ok(traces)
}

fn levels_for(cfg: &ExperimentConfig, stopping: &StoppingSpec) -> Vec<f64> {
    let alpha_known = matches!(stopping.mode, StopMode::Confidence(_)) || cfg.output.trace.record_alpha;
    if alpha_known {
        cfg.output.levels.clone()
    } else {
        Vec::new()
    }
}

fn digest(s: &Summary, stopping: &StoppingSpec) -> String {
    let what = match stopping.mode {
        StopMode::Confidence(_) => "mean_tau",
        StopMode::FixedHorizon(_) => "steps",
    };
    format!(
        "{}: trials={} censored={} {what}={:.1} psibar={}",
        s.rule,
        s.trials,
        s.n_censored,
        s.steps.mean,
        fmt_vec(&s.mean_share())
    )
}

fn warn_censoring(s: &Summary) {
    if 2 * s.n_censored > s.trials {
        println!(
            "warning: {} of {} trials of rule `{}` reached the cap without stopping; summaries exclude them",
            s.n_censored, s.trials, s.rule
        );
    }
}

/// Runs all rules and returns their traces and summaries, writing the
/// per-rule traces plus `summary.csv` and `trials.csv` under `out`.
fn simulate_all(cfg: &ExperimentConfig, stopping: &StoppingSpec, out: &Path) -> Result<Vec<Summary>> {
    if cfg.rules.is_empty() {
        return Err(Error::config("rules", "list at least one rule to simulate"));
    }
    let levels = levels_for(cfg, stopping);
    let mut summaries = Vec::new();
    let mut all = Vec::new();
    for rule in &cfg.rules {
        let traces = run_rule(cfg, rule, stopping, out)?;
        let s = sim::aggregate(&traces, &levels)?;
        println!("{}", digest(&s, stopping));
        warn_censoring(&s);
        summaries.push(s);
        all.extend(traces);
    }
    sim::write_summary_csv(create(&out.join("summary.csv"))?, &summaries)?;
    sim::write_trials_csv(create(&out.join("trials.csv"))?, &all)?;
    Ok(summaries)
}

pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let stopping = cfg
        .stopping
        .ok_or_else(|| Error::config("stopping", "simulate needs a [stopping] section"))?;
    simulate_all(cfg, &stopping, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// The five-arm Bernoulli experiment: means 0.1 to 0.5, independent uniform
/// priors, β = 1/2.
pub fn figure_config(figure: Figure) -> Result<ExperimentConfig> {
    let instance = InstanceSpec::new(ObservationModel::bernoulli(), vec![0.1, 0.2, 0.3, 0.4, 0.5])?;
    let (kinds, delta, levels, count): (&[RuleKind], f64, Vec<f64>, usize) = match figure {
        Figure::Fig1a => (&[RuleKind::Ts, RuleKind::Ttts], 0.01, DEFAULT_LEVELS[..7].to_vec(), 100),
        Figure::Fig1b | Figure::Fig2a | Figure::Fig2b => (
            &[RuleKind::Ttts, RuleKind::Ttps, RuleKind::Ttvs, RuleKind::Uniform],
            0.001,
            DEFAULT_LEVELS.to_vec(),
            500,
        ),
    };
    Ok(ExperimentConfig {
        instance,
        rules: kinds.iter().map(|&k| RuleSpec::new(k).with_beta(0.5)).collect(),
        stopping: Some(StoppingSpec::confidence(delta, 1_000_000)),
        seeds: SeedSpec { count, base: 1 },
        output: OutputSpec {
            directory: None,
            trace: TraceOptions::default(),
            all_traces: false,
            levels,
        },
        solver: SolverSpec::default(),
        belief: BeliefSpec::Conjugate,
    })
}

pub fn cmd_reproduce(figure: Figure, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let stopping = cfg.stopping.expect("figure configs always stop on confidence");
    let summaries = simulate_all(cfg, &stopping, out)?;
    let path = out.join(format!("{}.csv", figure.name()));
    let w = create(&path)?;
    match figure {
        Figure::Fig1a | Figure::Fig1b => sim::write_fig1_csv(w, &summaries)?,
        Figure::Fig2a => sim::write_fig2a_csv(w, &summaries)?,
        Figure::Fig2b => sim::write_fig2b_csv(w, &summaries)?,
    }
    println!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags_and_subcommands() {
        let cli = Cli::try_parse_from(["toptwo", "reproduce", "fig2a", "--seeds", "3", "--out", "/tmp/x"]).unwrap();
        assert_eq!(cli.seeds, Some(3));
        assert_eq!(cli.out, Some(PathBuf::from("/tmp/x")));
        assert!(matches!(cli.command, Command::Reproduce { figure: Figure::Fig2a, .. }));
        assert!(Cli::try_parse_from(["toptwo", "reproduce", "fig3"]).is_err());
        assert!(Cli::try_parse_from(["toptwo", "solve"]).is_err());
    }

    #[test]
    fn exit_codes_follow_error_kinds() {
        assert_eq!(exit_code(&Error::config("a", "b")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Solver("x".into())), EXIT_SOLVER);
        assert_eq!(exit_code(&Error::Input("x".into())), EXIT_OTHER);
    }

    #[test]
    fn figure_configs_are_valid() {
        for f in [Figure::Fig1a, Figure::Fig1b, Figure::Fig2a, Figure::Fig2b] {
            let cfg = figure_config(f).unwrap();
            let prior = cfg.belief.prior_for(&cfg.instance).unwrap();
            for r in &cfg.rules {
                r.validate_for(&prior).unwrap();
            }
            let top = match cfg.stopping.unwrap().mode {
                StopMode::Confidence(d) => 1.0 - d,
                StopMode::FixedHorizon(_) => unreachable!(),
            };
            assert!(cfg.output.levels.iter().all(|&c| c <= top + 1e-12));
        }
    }

    #[test]
    fn report_for_two_gaussian_arms() {
        let inst = InstanceSpec::new(ObservationModel::gaussian(1.0, -5.0, 5.0).unwrap(), vec![0.0, 1.0]).unwrap();
        let r = exponent_report(&inst, &SolverSpec::default()).unwrap();
        assert!((r.gamma_star - 0.125).abs() < 1e-9);
        assert!((r.beta_star - 0.5).abs() < 1e-5);
        let text = serde_json::to_string(&r).unwrap();
        let back: ExponentReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }
}
