//! CSV emission. Column layouts are fixed; floats use Rust's shortest
//! round-trip formatting so identical runs give identical bytes.

use std::io::Write;

use super::{Summary, Trace};
use crate::error::Result;

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn numbered(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (1..=k).map(move |i| format!("{prefix}_{i}"))
}

/// `n,arm,y,alpha_1..alpha_k,psibar_1..psibar_k`, one row per recorded step.
/// Arms are numbered from 1; alpha cells are empty at steps where it was not
/// computed.
pub fn write_trace_csv<W: Write>(w: W, trace: &Trace) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["n".to_string(), "arm".into(), "y".into()];
    header.extend(numbered("alpha", trace.k));
    header.extend(numbered("psibar", trace.k));
    out.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![r.n.to_string(), (r.arm + 1).to_string(), fmt(r.y)];
        match r.alpha() {
            Some(a) => row.extend(a.into_iter().map(fmt)),
            None => row.extend(std::iter::repeat_n(String::new(), trace.k)),
        }
        row.extend(r.psi_bar().into_iter().map(fmt));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// `rule,level,mean_hit,se_hit,n_censored`, one row per rule and level.
pub fn write_summary_csv<W: Write>(w: W, summaries: &[Summary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rule", "level", "mean_hit", "se_hit", "n_censored"])?;
    for s in summaries {
        for h in &s.hitting {
            out.write_record([
                s.rule.clone(),
                fmt(h.level),
                fmt(h.hit.mean),
                fmt(h.hit.se),
                h.n_censored.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `rule,seed,steps,censored,count_1..k,log10_inv_alpha_1..k`, one row per
/// trial.
pub fn write_trials_csv<W: Write>(w: W, traces: &[Trace]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let k = traces.first().map_or(0, |t| t.k);
    let mut header = vec!["rule".to_string(), "seed".into(), "steps".into(), "censored".into()];
    header.extend(numbered("count", k));
    header.extend(numbered("log10_inv_alpha", k));
    out.write_record(&header)?;
    for t in traces {
        let mut row = vec![t.rule.clone(), t.seed.to_string(), t.steps.to_string(), t.censored.to_string()];
        row.extend(t.counts.iter().map(|c| c.to_string()));
        match t.last().log10_inv_alpha() {
            Some(v) => row.extend(v.into_iter().map(fmt)),
            None => row.extend(std::iter::repeat_n(String::new(), k)),
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Confidence level against mean measurements:
/// `rule,level,mean_samples,se_samples,n_censored,trials`.
pub fn write_fig1_csv<W: Write>(w: W, summaries: &[Summary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rule", "level", "mean_samples", "se_samples", "n_censored", "trials"])?;
    for s in summaries {
        for h in &s.hitting {
            out.write_record([
                s.rule.clone(),
                fmt(h.level),
                fmt(h.hit.mean),
                fmt(h.hit.se),
                h.n_censored.to_string(),
                s.trials.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Terminal measurements per arm: `rule,arm,mean_count,mean_share,se_share`.
pub fn write_fig2a_csv<W: Write>(w: W, summaries: &[Summary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rule", "arm", "mean_count", "mean_share", "se_share"])?;
    for s in summaries {
        for (i, (c, sh)) in s.counts.iter().zip(&s.share).enumerate() {
            out.write_record([
                s.rule.clone(),
                (i + 1).to_string(),
                fmt(c.mean),
                fmt(sh.mean),
                fmt(sh.se),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Terminal evidence per arm: `rule,arm,mean_log10_inv_alpha,se`.
pub fn write_fig2b_csv<W: Write>(w: W, summaries: &[Summary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rule", "arm", "mean_log10_inv_alpha", "se"])?;
    for s in summaries {
        if let Some(l) = &s.log10_inv_alpha {
            for (i, st) in l.iter().enumerate() {
                out.write_record([s.rule.clone(), (i + 1).to_string(), fmt(st.mean), fmt(st.se)])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{InstanceSpec, ObservationModel};
    use crate::rules::{RuleKind, RuleSpec};
    use crate::sim::{aggregate, run_trial, BeliefSpec, StoppingSpec, TraceOptions};

    #[test]
    fn trace_csv_shape() {
        let inst = InstanceSpec::new(ObservationModel::bernoulli(), vec![0.2, 0.5, 0.4]).unwrap();
        let t = run_trial(
            &inst,
            &RuleSpec::new(RuleKind::Ttts),
            &BeliefSpec::Conjugate,
            &StoppingSpec::fixed_horizon(10),
            &TraceOptions::default(),
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[0], "n,arm,y,alpha_1,alpha_2,alpha_3,psibar_1,psibar_2,psibar_3");
        assert!(lines.iter().all(|l| l.split(',').count() == 9));

        let s = aggregate(std::slice::from_ref(&t), &[0.5]).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, std::slice::from_ref(&s)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().all(|l| l.split(',').count() == 5));
    }
}
