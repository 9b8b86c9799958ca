//! Result serialization: CSV with a stable column order, or JSON.
//!
//! Rendering is a pure function of the data, so re-emitting the same result
//! produces byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::amp::AmpRecord;
use crate::error::{Error, Result};
use crate::harness::{CompareReport, ConcentrationReport, ExperimentResult, SummaryRow};
use crate::multiproc::StepRecord;
use crate::scalar::Real;
use crate::se::SeTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format '{other}'"))),
        }
    }
}

/// Anything the CLI can write out.
pub trait Report {
    fn to_csv(&self) -> String;
    fn to_json(&self) -> String;
}

pub fn render<R: Report>(report: &R, format: Format) -> String {
    match format {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json(),
    }
}

/// Writes the rendered report; identical inputs produce identical bytes.
pub fn emit_results<R: Report>(report: &R, format: Format, path: &Path) -> Result<()> {
    std::fs::write(path, render(report, format))?;
    Ok(())
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn push_opt(line: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(line, ",{v}");
    } else {
        line.push(',');
    }
}

/// Multiprocessor trajectory: one row per `(s, k, p)`.
#[derive(Debug, Serialize)]
pub struct CmpTrajectoryReport {
    pub loss_names: Vec<String>,
    pub records: Vec<StepRecord>,
}

impl Report for CmpTrajectoryReport {
    fn to_csv(&self) -> String {
        let mut out = String::from("s,k,p,mse_p,tau_hat_p,tau_se_p");
        for name in &self.loss_names {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for r in &self.records {
            let mut line = format!("{},{},{},{},{}", r.s, r.k, r.p, r.mse, r.tau_hat);
            push_opt(&mut line, r.tau_se);
            for &v in &r.losses {
                let _ = write!(line, ",{v}");
            }
            line.push('\n');
            out.push_str(&line);
        }
        out
    }

    fn to_json(&self) -> String {
        json(self)
    }
}

/// Centralized trajectory: one row per iteration.
#[derive(Debug, Serialize)]
pub struct AmpTrajectoryReport {
    pub loss_names: Vec<String>,
    pub records: Vec<AmpRecord>,
}

impl Report for AmpTrajectoryReport {
    fn to_csv(&self) -> String {
        let mut out = String::from("t,mse,tau_hat,tau_se");
        for name in &self.loss_names {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for r in &self.records {
            let mut line = format!("{},{},{}", r.t, r.mse, r.tau_hat);
            push_opt(&mut line, r.tau_se);
            for &v in &r.losses {
                let _ = write!(line, ",{v}");
            }
            line.push('\n');
            out.push_str(&line);
        }
        out
    }

    fn to_json(&self) -> String {
        json(self)
    }
}

impl<T: Real + Serialize> Report for SeTrajectory<T> {
    fn to_csv(&self) -> String {
        let mut out = String::from("s,k,p,sigma_sq,tau_sq\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{},{}", e.s, e.k, e.p, e.sigma_sq, e.tau_sq);
        }
        out
    }

    fn to_json(&self) -> String {
        json(self)
    }
}

impl Report for CompareReport {
    fn to_csv(&self) -> String {
        let mut out = String::from("s,k,p,empirical_loss_mean,se_prediction,abs_gap\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.s, r.k, r.p, r.empirical_mean, r.se_prediction, r.abs_gap
            );
        }
        out
    }

    fn to_json(&self) -> String {
        json(self)
    }
}

impl Report for ConcentrationReport {
    fn to_csv(&self) -> String {
        let mut out = String::from("n,trials,deviation_rate,mean_abs_deviation\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.n, r.trials, r.deviation_rate, r.mean_abs_deviation
            );
        }
        out
    }

    fn to_json(&self) -> String {
        json(self)
    }
}

/// Trial summary table of an experiment.
#[derive(Debug, Serialize)]
pub struct SummaryReport {
    pub loss_names: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

impl SummaryReport {
    pub fn from_result(result: &ExperimentResult) -> Self {
        Self {
            loss_names: result.loss_names.clone(),
            rows: result.summary.clone(),
        }
    }
}

impl Report for SummaryReport {
    fn to_csv(&self) -> String {
        let mut out = String::from("s,k,p,mse_mean,mse_std");
        for name in &self.loss_names {
            let _ = write!(out, ",{name}_mean,{name}_std");
        }
        out.push('\n');
        for r in &self.rows {
            let mut line = format!(
                "{},{},{},{},{}",
                r.s, r.k, r.p, r.mse_mean, r.mse_std
            );
            for (m, s) in r.loss_means.iter().zip(&r.loss_stds) {
                let _ = write!(line, ",{m},{s}");
            }
            line.push('\n');
            out.push_str(&line);
        }
        out
    }

    fn to_json(&self) -> String {
        json(self)
    }
}
