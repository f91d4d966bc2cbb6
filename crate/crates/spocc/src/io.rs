//! Draw, acceptance, summary and matrix files.
//!
//! Numbers are written in Rust's shortest round-trip form, so a file read
//! back reproduces every draw bit for bit and reruns are byte-identical.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use spocc_core::metrics::CommunityMetrics;
use spocc_core::posterior::SummaryReport;
use spocc_core::sampler::{ChainDraws, ModelKind, Parameter, PosteriorDraws};
use spocc_core::{StateSpace, TransitionMatrix};

use crate::error::{CliError, Result};

/// CSV column name of a parameter: `p_2_1`, `phi_1`, `e`, `sigma1`, ...
pub fn column_name(p: Parameter) -> String {
    match p {
        Parameter::Transition { to, from } => format!("p_{}_{}", to + 1, from + 1),
        Parameter::Initial(s) => format!("phi_{}", s + 1),
        other => other.name(),
    }
}

pub fn parse_column_name(name: &str) -> Option<Parameter> {
    let index = |s: &str| s.parse::<usize>().ok().filter(|&v| v >= 1).map(|v| v - 1);
    if let Some(rest) = name.strip_prefix("p_") {
        let (a, b) = rest.split_once('_')?;
        return Some(Parameter::Transition { to: index(a)?, from: index(b)? });
    }
    if let Some(rest) = name.strip_prefix("phi_") {
        return Some(Parameter::Initial(index(rest)?));
    }
    Parameter::parse(name)
}

fn writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(std::io::BufWriter::new(file)))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.position() {
        Some(p) => CliError::Parse { path: path.to_path_buf(), line: p.line(), message: e.to_string() },
        None => CliError::Config { path: path.to_path_buf(), message: e.to_string() },
    }
}

/// One row per retained draw: `chain,iteration,p_j_k...,e,phi_s...` and,
/// for the spatial model, `sigma1,sigma2,rho`. Transition entries are in
/// row-major order of `P[to][from]`.
pub fn write_draws(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut w = writer(path)?;
    let params = draws.parameters();
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(params.iter().map(|&p| column_name(p)));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let s = draws.states;
    for c in &draws.chains {
        let series: Vec<Vec<f64>> = params.iter().map(|&p| c.series(p, s)).collect();
        for (k, it) in c.iterations.iter().enumerate() {
            let mut row = vec![c.chain.to_string(), it.to_string()];
            row.extend(series.iter().map(|v| v[k].to_string()));
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_draws(path: &Path) -> Result<PosteriorDraws> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let bad = |m: String| CliError::Config { path: path.to_path_buf(), message: m };
    if headers.get(0) != Some("chain") || headers.get(1) != Some("iteration") {
        return Err(bad("draws file must start with chain,iteration".into()));
    }
    let params: Vec<Parameter> = headers
        .iter()
        .skip(2)
        .map(|h| parse_column_name(h).ok_or_else(|| bad(format!("unknown column {h:?}"))))
        .collect::<Result<_>>()?;
    let entries = params.iter().filter(|p| matches!(p, Parameter::Transition { .. })).count();
    let s = (entries as f64).sqrt().round() as usize;
    let model = if params.contains(&Parameter::Sigma1) { ModelKind::Spatial } else { ModelKind::NonSpatial };
    if s == 0 || s * s != entries || params != Parameter::all(model, s) {
        return Err(bad("columns do not match a draws file layout".into()));
    }

    let mut chains: Vec<ChainDraws> = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |m: String| CliError::Parse { path: path.to_path_buf(), line, message: m };
        let chain: usize = record[0].parse().map_err(|_| parse_err(format!("bad chain {:?}", &record[0])))?;
        let iteration: usize = record[1].parse().map_err(|_| parse_err(format!("bad iteration {:?}", &record[1])))?;
        let values: Vec<f64> = record
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| parse_err(format!("bad number {v:?}"))))
            .collect::<Result<_>>()?;
        if chains.last().is_none_or(|c| c.chain != chain) {
            if chains.iter().any(|c| c.chain == chain) {
                return Err(parse_err(format!("rows of chain {chain} are not contiguous")));
            }
            chains.push(ChainDraws { chain, ..ChainDraws::default() });
        }
        let c = chains.last_mut().expect("chain pushed");
        c.iterations.push(iteration);
        let (p, rest) = values.split_at(s * s);
        c.transitions.extend_from_slice(p);
        c.error_rate.push(rest[0]);
        c.initial.extend_from_slice(&rest[1..1 + s]);
        if model == ModelKind::Spatial {
            c.sigma1.push(rest[1 + s]);
            c.sigma2.push(rest[2 + s]);
            c.rho.push(rest[3 + s]);
        }
    }
    Ok(PosteriorDraws { model, states: s, chains })
}

/// Metropolis proposal counts per chain and kernel parameter.
pub fn write_acceptance(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "chain",
        "parameter",
        "burn_in_proposed",
        "burn_in_accepted",
        "proposed",
        "accepted",
        "rate",
        "final_step",
    ])
    .map_err(|e| csv_error(path, e))?;
    for c in &draws.chains {
        for (p, a) in &c.acceptance {
            let rate = a.rate().map_or(String::new(), |r| r.to_string());
            w.write_record([
                c.chain.to_string(),
                p.name(),
                a.burn_in_proposed.to_string(),
                a.burn_in_accepted.to_string(),
                a.proposed.to_string(),
                a.accepted.to_string(),
                rate,
                a.final_step.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Per-chain acceptance rows as read back: `(chain, parameter, rate)`.
pub fn read_acceptance(path: &Path) -> Result<Vec<(usize, String, Option<f64>)>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let chain = record.get(0).and_then(|v| v.parse().ok()).unwrap_or(0);
        let name = record.get(1).unwrap_or("").to_string();
        let rate = record.get(6).and_then(|v| v.parse().ok());
        out.push((chain, name, rate));
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn write_summary(path: &Path, report: &SummaryReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["parameter", "estimate", "lower", "upper", "rhat", "ess", "unconverged"])
        .map_err(|e| csv_error(path, e))?;
    for p in &report.parameters {
        w.write_record([
            column_name(p.parameter),
            p.estimate.to_string(),
            p.lower.to_string(),
            p.upper.to_string(),
            opt(p.rhat),
            p.effective_draws.to_string(),
            p.unconverged().to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Point-estimate-only summary (naive estimator).
pub fn write_point_summary(path: &Path, p: &TransitionMatrix, unobserved: &[usize]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["parameter", "estimate", "lower", "upper", "rhat", "ess", "unconverged"])
        .map_err(|e| csv_error(path, e))?;
    let s = p.states();
    for to in 0..s {
        for from in 0..s {
            let name = column_name(Parameter::Transition { to, from });
            let value = if unobserved.contains(&from) { String::new() } else { p.get(to, from).to_string() };
            w.write_record([name, value, String::new(), String::new(), String::new(), String::new(), "false".into()])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn matrix_text(out: &mut String, p: &TransitionMatrix, states: &StateSpace) {
    let s = p.states();
    let width = states.labels().iter().map(String::len).max().unwrap_or(1).max(6);
    let _ = write!(out, "  {:>width$}", "to\\from");
    for k in 0..s {
        let _ = write!(out, " {:>width$}", states.label(k));
    }
    out.push('\n');
    for j in 0..s {
        let _ = write!(out, "  {:>width$}", states.label(j));
        for k in 0..s {
            let _ = write!(out, " {:>width$.3}", p.get(j, k));
        }
        out.push('\n');
    }
}

/// Human-readable report printed by `spocc fit`.
pub fn summary_text(report: &SummaryReport, states: &StateSpace) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "model {}: {} chain(s), {} draws, {:.0}% intervals",
        report.model.name(),
        report.chains,
        report.draws,
        report.level * 100.0
    );
    out.push_str("transition matrix (spatial median of columns):\n");
    matrix_text(&mut out, &report.transitions, states);
    let _ = writeln!(out, "error rate (mode): {:.4}", report.error_rate);
    if let Some(bw) = report.bandwidth {
        let _ =
            writeln!(out, "kernel (mode): sigma1 {:.4}, sigma2 {:.4}, rho {:.4}", bw.sigma1(), bw.sigma2(), bw.rho());
    }
    let _ = writeln!(
        out,
        "{:<10} {:>10} {:>10} {:>10} {:>8} {:>9}",
        "parameter", "estimate", "lower", "upper", "rhat", "ess"
    );
    for p in &report.parameters {
        let rhat = p.rhat.map_or("-".to_string(), |r| format!("{r:.3}"));
        let flag = if p.unconverged() { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>8} {:>9.0}{flag}",
            p.parameter.name(),
            p.estimate,
            p.lower,
            p.upper,
            rhat,
            p.effective_draws
        );
    }
    let unconverged = report.unconverged();
    if !unconverged.is_empty() {
        let _ = writeln!(
            out,
            "* R-hat above {} for {} parameter(s)",
            spocc_core::posterior::RHAT_THRESHOLD,
            unconverged.len()
        );
    }
    out
}

pub fn naive_text(p: &TransitionMatrix, unobserved: &[usize], states: &StateSpace) -> String {
    let mut out = String::from("model naive: count-based point estimate\n");
    matrix_text(&mut out, p, states);
    for &k in unobserved {
        let _ = writeln!(out, "column {} has no observed transitions (uniform placeholder)", states.label(k));
    }
    out
}

/// Reads a transition matrix from either a summary file (`parameter`
/// header, `p_j_k` rows) or a plain CSV of `S` rows of `S` numbers, rows
/// indexed by the destination state. Column sums may deviate from one by
/// up to `rounding` and are then renormalised.
pub fn read_matrix(path: &Path, rounding: f64) -> Result<TransitionMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |line: u64, m: String| CliError::Parse { path: path.to_path_buf(), line, message: m };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let lines: Vec<(u64, &str)> = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k as u64 + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    if lines.first().is_some_and(|(_, l)| l.starts_with("parameter")) {
        let mut entries = Vec::new();
        for &(line, l) in &lines[1..] {
            let mut fields = l.split(',');
            let name = fields.next().unwrap_or("");
            if let Some(Parameter::Transition { to, from }) = parse_column_name(name) {
                let v = fields.next().unwrap_or("");
                let v: f64 = v.parse().map_err(|_| bad(line, format!("{name} has no numeric estimate")))?;
                entries.push((to, from, v));
            }
        }
        let s = entries.iter().map(|e| e.0.max(e.1) + 1).max().unwrap_or(0);
        if s == 0 || entries.len() != s * s {
            return Err(bad(0, "summary does not hold a full transition matrix".into()));
        }
        rows = vec![vec![0.0; s]; s];
        for (to, from, v) in entries {
            rows[to][from] = v;
        }
    } else {
        for &(line, l) in &lines {
            let row: Vec<f64> = l
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad(line, format!("bad number {v:?}"))))
                .collect::<Result<_>>()?;
            rows.push(row);
        }
    }
    let p = if rounding > 0.0 {
        TransitionMatrix::from_rounded_rows(&rows, rounding)
    } else {
        TransitionMatrix::from_rows(&rows)
    };
    p.map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })
}

pub fn write_metrics<W: Write>(mut out: W, label: &str, m: &CommunityMetrics) -> std::io::Result<()> {
    let damping = if m.damping.is_finite() { m.damping.to_string() } else { "inf".to_string() };
    let w: Vec<String> = m.w.iter().map(f64::to_string).collect();
    writeln!(out, "{label},{},{damping},{}", m.turnover, w.join(","))
}

pub fn write_matrix<W: Write>(mut out: W, p: &TransitionMatrix) -> std::io::Result<()> {
    for row in p.rows() {
        let row: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_names_round_trip() {
        for p in Parameter::all(ModelKind::Spatial, 3) {
            assert_eq!(parse_column_name(&column_name(p)), Some(p));
        }
        assert_eq!(column_name(Parameter::Transition { to: 1, from: 0 }), "p_2_1");
        assert_eq!(parse_column_name("p_0_1"), None);
    }
}
