//! Output directories: CSV tables, CG traces, probes and a JSON manifest.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Duration;

use heatsource::experiments::{write_probes_csv, Coupling, EocRow, EocTable, ErrorNorms, LevelOutcome, LevelParams};
use heatsource::inverse::StopReason;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentSpec;

#[derive(Debug)]
pub struct ReportError {
    pub path: PathBuf,
    pub msg: String,
}

impl std::fmt::Display for ReportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.msg)
    }
}

impl std::error::Error for ReportError {}

fn err(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError { path: path.to_path_buf(), msg: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
}

#[derive(Debug, Serialize)]
pub struct LevelManifest {
    #[serde(flatten)]
    pub params: LevelParams,
    pub seed: u64,
    pub iterations: Option<usize>,
    pub restarts: Option<usize>,
    pub stop: Option<StopReason>,
    pub final_grad_norm: Option<f64>,
    pub threshold: Option<f64>,
    pub elapsed_s: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub name: String,
    pub format: Format,
    /// The config as parsed, defaults filled; feeding it back reproduces the run.
    pub spec: String,
    pub seed: u64,
    pub couplings: Coupling,
    pub jobs: usize,
    pub levels: Vec<LevelManifest>,
    pub files: Vec<String>,
    pub total_elapsed_s: f64,
}

impl Manifest {
    pub fn new(command: &str, spec: &ExperimentSpec, format: Format) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            name: spec.name.clone(),
            format,
            spec: spec.emit(),
            seed: spec.seed,
            couplings: spec.numerics.coupling,
            jobs: spec.numerics.jobs,
            levels: Vec::new(),
            files: Vec::new(),
            total_elapsed_s: 0.0,
        }
    }

    pub fn push_level(&mut self, params: LevelParams, seed: u64, outcome: Result<&LevelOutcome, String>) {
        let ok = outcome.as_ref().ok();
        self.levels.push(LevelManifest {
            params,
            seed,
            iterations: ok.map(|o| o.report.iterations),
            restarts: ok.map(|o| o.report.restarts()),
            stop: ok.map(|o| o.report.stop),
            final_grad_norm: ok.map(|o| o.report.final_grad_norm()),
            threshold: ok.map(|o| o.report.threshold),
            elapsed_s: ok.map(|o| o.elapsed.as_secs_f64()),
            failure: outcome.err(),
        });
    }
}

fn create(dir: &Path, name: &str, files: &mut Vec<String>) -> Result<BufWriter<File>, ReportError> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| err(&path, e))?;
    files.push(name.to_string());
    Ok(BufWriter::new(f))
}

/// Writes `table.csv`, `eoc.csv`, `trace_<level>.csv` for every successful
/// level, `probes.csv` for the finest successful level, and `manifest.json`.
pub fn emit_report(
    dir: &Path,
    table: &EocTable,
    outcomes: &[&LevelOutcome],
    mut manifest: Manifest,
    elapsed: Duration,
) -> Result<Manifest, ReportError> {
    fs::create_dir_all(dir).map_err(|e| err(dir, e))?;
    let mut files = Vec::new();
    let wrap = |path: PathBuf| move |e: heatsource::Error| err(&path, e);

    table.write_table_csv(create(dir, "table.csv", &mut files)?).map_err(wrap(dir.join("table.csv")))?;
    if table.rows.len() > 1 {
        table.write_eoc_csv(create(dir, "eoc.csv", &mut files)?).map_err(wrap(dir.join("eoc.csv")))?;
    }
    for o in outcomes {
        let name = format!("trace_{}.csv", o.params.level);
        o.report.write_trace_csv(create(dir, &name, &mut files)?).map_err(wrap(dir.join(&name)))?;
    }
    if let Some(finest) = outcomes.iter().max_by_key(|o| o.params.cells) {
        write_probes_csv(&finest.probes, create(dir, "probes.csv", &mut files)?).map_err(wrap(dir.join("probes.csv")))?;
    }
    files.push("manifest.json".into());
    manifest.files = files;
    manifest.total_elapsed_s = elapsed.as_secs_f64();
    let path = dir.join("manifest.json");
    let out = File::create(&path).map_err(|e| err(&path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(out), &manifest).map_err(|e| err(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Deserialize)]
struct TableRecord {
    level: usize,
    h: f64,
    delta: f64,
    rho: f64,
    state_l2: Option<f64>,
    state_sigma: Option<f64>,
    source_l2: Option<f64>,
    iterations: Option<usize>,
    status: String,
}

/// Reads a `table.csv` written by [`emit_report`].
pub fn read_table_csv(path: &Path) -> Result<EocTable, ReportError> {
    let file = File::open(path).map_err(|e| err(path, e))?;
    read_table(file).map_err(|e| err(path, e))
}

pub fn read_table(input: impl io::Read) -> Result<EocTable, csv::Error> {
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(input).deserialize() {
        let r: TableRecord = rec?;
        let errors = match (r.state_l2, r.state_sigma, r.source_l2) {
            (Some(state_l2), Some(state_sigma), Some(source_l2)) => Some(ErrorNorms { state_l2, state_sigma, source_l2 }),
            _ => None,
        };
        let failure = (r.status != "ok").then_some(r.status);
        rows.push(EocRow { level: r.level, h: r.h, delta: r.delta, rho: r.rho, errors, iterations: r.iterations, failure });
    }
    Ok(EocTable::from_rows(rows))
}
