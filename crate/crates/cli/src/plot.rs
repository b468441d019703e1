//! CSV series for plotting, pulled out of stage reports.

use crate::config::Stage;
use crate::pipeline::Report;
use crate::CliError;
use serde_json::Value;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    LambdaN,
    L2VsLeaf,
    FailureVsRho,
    HitFractionVsResolution,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::LambdaN, PlotKind::L2VsLeaf, PlotKind::FailureVsRho, PlotKind::HitFractionVsResolution];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::LambdaN => "lambda_n",
            PlotKind::L2VsLeaf => "l2-vs-leaf",
            PlotKind::FailureVsRho => "failure-vs-rho",
            PlotKind::HitFractionVsResolution => "hit-fraction-vs-resolution",
        }
    }

    pub fn stage(self) -> Stage {
        match self {
            PlotKind::LambdaN => Stage::Dim,
            PlotKind::L2VsLeaf => Stage::Marstrand,
            PlotKind::FailureVsRho => Stage::Mc,
            PlotKind::HitFractionVsResolution => Stage::Project,
        }
    }

    fn series(self) -> (&'static str, &'static [&'static str]) {
        match self {
            PlotKind::LambdaN => ("lambda_table", &["n", "lambda_n", "tilde_lambda_n"]),
            PlotKind::L2VsLeaf => ("scores", &["block", "weight", "l2_squared", "l2_norm"]),
            PlotKind::FailureVsRho => ("runs", &["rho", "trials", "cells", "max_failure_rate", "failing_cells"]),
            PlotKind::HitFractionVsResolution => ("runs", &["tilt", "resolution", "hit_fraction", "longest_run"]),
        }
    }
}

impl FromStr for PlotKind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        PlotKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = PlotKind::ALL.iter().map(|k| k.name()).collect();
            CliError::UnknownPlotKind { kind: s.to_string(), known: names.join(", ") }
        })
    }
}

fn cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(a)) => a.iter().map(|x| cell(Some(x))).collect::<Vec<_>>().join(" "),
        Some(x) => x.to_string(),
    }
}

/// Header plus one row per series entry; an empty series gives the header only.
pub fn emit_plotdata(report: &Report, kind: PlotKind) -> Result<String, CliError> {
    let (key, cols) = kind.series();
    if report.stage != kind.stage() {
        return Err(CliError::MissingSeries { kind: kind.name().into(), stage: report.stage.name().into() });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(cols)?;
    if let Some(Value::Array(rows)) = report.result.get(key) {
        for r in rows {
            w.write_record(cols.iter().map(|c| cell(r.get(*c))))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
