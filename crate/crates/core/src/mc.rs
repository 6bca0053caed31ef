//! Monte Carlo study: repeated simulate-then-fit at the true parameter, with
//! per-(n, parameter) summaries:
//! (a) mean estimate, (b) mean estimated standard error, (c) sample standard
//! deviation of the estimates, (d) percentage of 5% Wald rejections of the
//! true value.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::estimate::{fit, wald_test, FitOptions};
use crate::model::TdVarmaModel;
use crate::simulate::{replication_stream, simulate, SimPlan};

pub const DEFAULT_N_LIST: [usize; 5] = [25, 50, 100, 200, 400];
pub const DEFAULT_REPLICATIONS: usize = 1000;
/// Share of non-converged fits above which a cell is flagged.
pub const NONCONVERGENCE_FLAG: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct McPlan<'a> {
    pub model: &'a TdVarmaModel,
    pub theta0: Vec<f64>,
    pub n_list: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub fit: FitOptions,
    /// Null values of the Wald tests; the true parameter by default.
    pub h0: Vec<f64>,
}

impl<'a> McPlan<'a> {
    pub fn new(model: &'a TdVarmaModel, seed: u64, fit: FitOptions) -> Result<Self> {
        let theta0 = model.layout().theta0()?.to_vec();
        Ok(Self {
            model,
            h0: theta0.clone(),
            theta0,
            n_list: DEFAULT_N_LIST.to_vec(),
            replications: DEFAULT_REPLICATIONS,
            seed,
            fit,
        })
    }

    /// Plan from a config's run block; unset fields take the defaults.
    pub fn from_config(cfg: &ConfigFile, model: &'a TdVarmaModel) -> Result<Self> {
        let mut plan = Self::new(model, cfg.run.seed.unwrap_or(0), cfg.fit_options(model)?)?;
        if let Some(v) = &cfg.run.n_list {
            plan.n_list = v.clone();
        }
        if let Some(r) = cfg.run.replications {
            plan.replications = r;
        }
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.model.m();
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        if self.n_list.is_empty() {
            return Err(Error::config("n_list", "must not be empty"));
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n < m || n == 0) {
            return Err(Error::config("n_list", format!("length {n} is below the {m} parameters")));
        }
        if self.h0.len() != m || self.theta0.len() != m {
            return Err(Error::contract("θ⁰ and h0 must have one entry per parameter"));
        }
        Ok(())
    }
}

/// One replication's outcome.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationRecord {
    pub n: usize,
    pub rep: usize,
    pub estimate: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub converged: bool,
    /// Wald rejection per parameter; `None` without standard errors.
    pub reject: Option<Vec<bool>>,
    /// Set when simulation or fitting raised an error.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Line {
    A,
    B,
    C,
    D,
}

impl Line {
    pub const ALL: [Line; 4] = [Line::A, Line::B, Line::C, Line::D];
}

impl fmt::Display for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Line::A => "a",
            Line::B => "b",
            Line::C => "c",
            Line::D => "d",
        })
    }
}

impl FromStr for Line {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Line::A),
            "b" => Ok(Line::B),
            "c" => Ok(Line::C),
            "d" => Ok(Line::D),
            other => Err(Error::config("line", format!("unknown summary line `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCell {
    pub n: usize,
    pub param: String,
    pub line: Line,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McDiagnostics {
    pub n: usize,
    pub replications: usize,
    /// Converged fits, which feed lines (a) to (d).
    pub used: usize,
    pub non_converged: usize,
    pub errors: usize,
    /// Converged fits without standard errors, left out of lines (b) and (d).
    pub without_se: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub params: Vec<String>,
    pub cells: Vec<McCell>,
    pub diagnostics: Vec<McDiagnostics>,
}

impl McSummary {
    pub fn get(&self, n: usize, param: &str, line: Line) -> Option<f64> {
        self.cells.iter().find(|c| c.n == n && c.param == param && c.line == line).map(|c| c.value)
    }

    /// Line values for every parameter at `n`, in parameter order.
    pub fn line(&self, n: usize, line: Line) -> Vec<f64> {
        self.params.iter().map(|p| self.get(n, p, line).unwrap_or(f64::NAN)).collect()
    }

    pub fn diagnostics_for(&self, n: usize) -> Option<&McDiagnostics> {
        self.diagnostics.iter().find(|d| d.n == n)
    }

    pub fn flagged(&self) -> bool {
        self.diagnostics.iter().any(|d| d.flagged)
    }
}

#[derive(Debug, Clone)]
pub struct McOutput {
    pub summary: McSummary,
    /// `records[i]` in `(n, rep)` order.
    pub records: Vec<ReplicationRecord>,
}

fn run_one(plan: &McPlan, n: usize, rep: usize) -> ReplicationRecord {
    let sim = SimPlan {
        model: plan.model,
        theta: plan.theta0.clone(),
        n,
        seed: plan.seed,
        stream: replication_stream(n, rep),
    };
    let outcome = simulate(&sim).and_then(|x| fit(plan.model, &x, &plan.fit));
    match outcome {
        Ok(f) => {
            let reject = f.se.as_ref().map(|_| {
                (0..plan.h0.len())
                    .map(|i| wald_test(&f, i, plan.h0[i]).map(|(_, r)| r).unwrap_or(false))
                    .collect()
            });
            ReplicationRecord { n, rep, estimate: f.theta, se: f.se, converged: f.converged, reject, error: None }
        }
        Err(e) => ReplicationRecord {
            n,
            rep,
            estimate: vec![f64::NAN; plan.theta0.len()],
            se: None,
            converged: false,
            reject: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every `(n, rep)` pair on the rayon pool. Each pair draws from its
/// own stream, and aggregation runs over replications in index order, so the
/// output depends only on the plan.
pub fn run_mc(plan: &McPlan) -> Result<McOutput> {
    plan.validate()?;
    let jobs: Vec<(usize, usize)> =
        plan.n_list.iter().flat_map(|&n| (0..plan.replications).map(move |rep| (n, rep))).collect();
    let records: Vec<ReplicationRecord> = jobs.par_iter().map(|&(n, rep)| run_one(plan, n, rep)).collect();
    let summary = summarize(plan.model.layout().names.clone(), &plan.n_list, &records);
    Ok(McOutput { summary, records })
}

/// Aggregates records into lines (a) to (d); non-converged fits are excluded.
pub fn summarize(params: Vec<String>, n_list: &[usize], records: &[ReplicationRecord]) -> McSummary {
    let mut cells = Vec::new();
    let mut diagnostics = Vec::new();
    for &n in n_list {
        let at_n: Vec<&ReplicationRecord> = records.iter().filter(|r| r.n == n).collect();
        let used: Vec<&&ReplicationRecord> = at_n.iter().filter(|r| r.converged).collect();
        let with_se: Vec<&&&ReplicationRecord> = used.iter().filter(|r| r.se.is_some()).collect();
        let errors = at_n.iter().filter(|r| r.error.is_some()).count();
        let non_converged = at_n.len() - used.len();
        diagnostics.push(McDiagnostics {
            n,
            replications: at_n.len(),
            used: used.len(),
            non_converged,
            errors,
            without_se: used.len() - with_se.len(),
            flagged: at_n.is_empty() || non_converged as f64 > NONCONVERGENCE_FLAG * at_n.len() as f64,
        });
        for (i, name) in params.iter().enumerate() {
            let est: Vec<f64> = used.iter().map(|r| r.estimate[i]).collect();
            let se: Vec<f64> = with_se.iter().map(|r| r.se.as_ref().expect("filtered")[i]).collect();
            let rej = with_se.iter().filter(|r| r.reject.as_ref().is_some_and(|v| v[i])).count();
            let mean_est = mean(&est);
            let values = [
                (Line::A, mean_est),
                (Line::B, mean(&se)),
                (Line::C, sample_sd(&est, mean_est)),
                (
                    Line::D,
                    if with_se.is_empty() { f64::NAN } else { 100.0 * rej as f64 / with_se.len() as f64 },
                ),
            ];
            for (line, value) in values {
                cells.push(McCell { n, param: name.clone(), line, value });
            }
        }
    }
    McSummary { params, cells, diagnostics }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub const SUMMARY_HEADER: [&str; 4] = ["n", "param", "line", "value"];
pub const ESTIMATES_HEADER: [&str; 6] = ["n", "rep", "param", "estimate", "se", "converged"];

/// `n,param,line,value`, one row per cell; floats in shortest round-trip form.
pub fn summary_to_csv(s: &McSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for c in &s.cells {
        w.write_record([c.n.to_string(), c.param.clone(), c.line.to_string(), c.value.to_string()])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Inverse of [`summary_to_csv`] for the cell rows.
pub fn parse_summary_csv(text: &str) -> Result<Vec<McCell>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers()?.clone();
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(Error::config("header", format!("expected {}", SUMMARY_HEADER.join(","))));
    }
    let mut cells = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let key = |col: &str| format!("line {}, column {col}", row + 2);
        cells.push(McCell {
            n: field(0).parse().map_err(|_| Error::config(key("n"), "not an integer"))?,
            param: field(1).to_string(),
            line: field(2).parse()?,
            value: field(3).parse().map_err(|_| Error::config(key("value"), "not a number"))?,
        });
    }
    Ok(cells)
}

/// Per-replication estimates: `n,rep,param,estimate,se,converged`; the `se`
/// field is empty when unavailable.
pub fn estimates_to_csv(params: &[String], records: &[ReplicationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ESTIMATES_HEADER)?;
    for r in records {
        for (i, p) in params.iter().enumerate() {
            let se = r.se.as_ref().map_or(String::new(), |s| s[i].to_string());
            w.write_record([
                r.n.to_string(),
                r.rep.to_string(),
                p.clone(),
                r.estimate[i].to_string(),
                se,
                r.converged.to_string(),
            ])?;
        }
    }
    finish(w)
}
