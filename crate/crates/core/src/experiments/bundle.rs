use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::CurvePoint;

pub const SUMMARY_FILE: &str = "summary.json";
pub const PER_TRIAL_FILE: &str = "per_trial.csv";
pub const PLOT_FILE: &str = "plot.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub population: f64,
    pub empirical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub software_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; the only field that varies between reruns.
    pub timestamp: u64,
    pub radius: Option<f64>,
    pub confidence: Option<f64>,
    pub coverage: Option<CoverageSummary>,
    pub verdicts: BTreeMap<String, bool>,
    pub ingredients: serde_json::Value,
    pub report: serde_json::Value,
}

impl Summary {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Summary {
            command: command.to_string(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seed,
            timestamp,
            radius: None,
            confidence: None,
            coverage: None,
            verdicts: BTreeMap::new(),
            ingredients: serde_json::Value::Null,
            report: serde_json::Value::Null,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.values().all(|v| *v)
    }
}

/// One observation of a coverage-vs-n sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub confidence: f64,
    pub coverage_pop: f64,
    pub coverage_emp: f64,
    pub radius_pop: f64,
    pub mean_radius_emp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Contraction,
    CoverageSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlotData {
    Contraction(Vec<CurvePoint>),
    CoverageSweep(Vec<SweepPoint>),
}

impl PlotData {
    pub fn kind(&self) -> PlotKind {
        match self {
            PlotData::Contraction(_) => PlotKind::Contraction,
            PlotData::CoverageSweep(_) => PlotKind::CoverageSweep,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub summary: Summary,
    /// CSV text, one row per trial, ordered by trial index.
    pub per_trial: String,
    pub rows: usize,
    pub plot: Option<PlotData>,
    /// Additional `(file name, contents)` pairs, e.g. a trajectory.
    pub extra: Vec<(String, String)>,
}

impl ResultBundle {
    pub fn new<T: Serialize>(summary: Summary, rows: &[T]) -> Result<Self> {
        Ok(ResultBundle {
            summary,
            per_trial: to_csv(rows)?,
            rows: rows.len(),
            plot: None,
            extra: Vec::new(),
        })
    }

    /// A bundle with no trials that carries plot data of `kind` with no rows.
    pub fn empty(summary: Summary, kind: PlotKind) -> Self {
        let plot = match kind {
            PlotKind::Contraction => PlotData::Contraction(Vec::new()),
            PlotKind::CoverageSweep => PlotData::CoverageSweep(Vec::new()),
        };
        ResultBundle {
            summary,
            per_trial: String::new(),
            rows: 0,
            plot: Some(plot),
            extra: Vec::new(),
        }
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)? + "\n")
    }

    /// Writes the summary, the per-trial CSV, plot data and extra files.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(SUMMARY_FILE), self.summary_json()?)?;
        std::fs::write(dir.join(PER_TRIAL_FILE), &self.per_trial)?;
        if let Some(plot) = &self.plot {
            std::fs::write(dir.join(PLOT_FILE), emit_plot_data(self, plot.kind())?)?;
        }
        for (name, contents) in &self.extra {
            std::fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }
}

pub(crate) fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn header_csv(fields: &[&str]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Tidy CSV for external plotting: `(n, w1)` for contraction curves and one
/// row per `n` for coverage sweeps. Empty data gives a header-only CSV.
pub fn emit_plot_data(bundle: &ResultBundle, kind: PlotKind) -> Result<String> {
    let plot = bundle.plot.as_ref().ok_or_else(|| {
        Error::invalid(format!("bundle carries no plot data, requested {kind:?}"))
    })?;
    if plot.kind() != kind {
        return Err(Error::invalid(format!(
            "bundle holds {:?} data, requested {kind:?}",
            plot.kind()
        )));
    }
    match plot {
        PlotData::Contraction(rows) if rows.is_empty() => header_csv(&["n", "w1"]),
        PlotData::Contraction(rows) => to_csv(rows),
        PlotData::CoverageSweep(rows) if rows.is_empty() => header_csv(&[
            "n",
            "confidence",
            "coverage_pop",
            "coverage_emp",
            "radius_pop",
            "mean_radius_emp",
        ]),
        PlotData::CoverageSweep(rows) => to_csv(rows),
    }
}
