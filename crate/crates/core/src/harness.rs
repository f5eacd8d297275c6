//! Parameter sweeps over scenarios: run every (value, protocol, seed)
//! combination, average across seeds and write CSV and plot-data files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{apply_lines, Protocol, ScenarioConfig, KEYS};
use crate::error::{ConfigError, SimError};
use crate::metrics::{fmt_opt, MetricRow};
use crate::sim::{run_scenario, RunReport};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run {axis}={value} protocol={protocol} seed={seed} failed: {source}")]
    Run {
        axis: String,
        value: String,
        protocol: Protocol,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub name: String,
    pub base: ScenarioConfig,
    /// Scenario key varied across points, e.g. `traffic.senders`.
    pub axis: String,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    pub protocols: Vec<Protocol>,
}

impl SweepSpec {
    pub fn new(base: ScenarioConfig, axis: &str, values: &[&str]) -> Self {
        SweepSpec {
            name: base.name.clone(),
            base,
            axis: axis.to_string(),
            values: values.iter().map(|v| v.to_string()).collect(),
            seeds: vec![1, 2, 3, 4, 5],
            protocols: vec![Protocol::Dsr, Protocol::Bcast],
        }
    }

    /// Scenario keys plus `sweep.name`, `sweep.axis`, `sweep.values`,
    /// `sweep.seeds` and `sweep.protocols`.
    pub fn parse(text: &str) -> Result<Self, SweepError> {
        let mut base = ScenarioConfig::default();
        let mut name = None;
        let mut axis = None;
        let mut values = None;
        let mut seeds = vec![1, 2, 3, 4, 5];
        let mut protocols = vec![Protocol::Dsr, Protocol::Bcast];
        apply_lines(text, |line, k, v| {
            let at = |e: ConfigError| ConfigError::AtLine {
                line,
                source: Box::new(e),
            };
            let list = || v.split(',').map(str::trim).filter(|s| !s.is_empty());
            match k {
                "sweep.name" => name = Some(v.to_string()),
                "sweep.axis" => {
                    if !KEYS.contains(&v) {
                        return Err(at(ConfigError::invalid(k, v, "not a scenario key")));
                    }
                    axis = Some(v.to_string());
                }
                "sweep.values" => values = Some(list().map(String::from).collect::<Vec<_>>()),
                "sweep.seeds" => {
                    seeds = parse_seeds(v).map_err(|e| at(ConfigError::invalid(k, v, e)))?;
                }
                "sweep.protocols" => {
                    protocols = list()
                        .map(|p| p.parse::<Protocol>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| at(ConfigError::invalid(k, v, e)))?;
                }
                _ => base.set(k, v).map_err(at)?,
            }
            Ok(())
        })?;
        let axis = axis.ok_or_else(|| SweepError::Invalid("missing `sweep.axis`".into()))?;
        let values = values.ok_or_else(|| SweepError::Invalid("missing `sweep.values`".into()))?;
        let spec = SweepSpec {
            name: name.unwrap_or_else(|| base.name.clone()),
            base,
            axis,
            values,
            seeds,
            protocols,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.values.is_empty() || self.seeds.is_empty() || self.protocols.is_empty() {
            return Err(SweepError::Invalid(
                "a sweep needs at least one value, seed and protocol".into(),
            ));
        }
        for v in &self.values {
            self.scenario(v, self.protocols[0], self.seeds[0])?;
        }
        Ok(())
    }

    /// The fully resolved scenario for one grid cell.
    pub fn scenario(&self, value: &str, protocol: Protocol, seed: u64) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = self.base.clone();
        cfg.set(&self.axis, value)?;
        cfg.protocol = protocol;
        cfg.seed = seed;
        cfg.name = format!("{}/{}={}/{}", self.name, self.axis, value, protocol);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn run_count(&self) -> usize {
        self.values.len() * self.protocols.len() * self.seeds.len()
    }
}

pub fn parse_seeds(v: &str) -> Result<Vec<u64>, String> {
    let seeds = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().map_err(|e| format!("bad seed `{s}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

/// One run of the grid.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub value: String,
    pub protocol: Protocol,
    pub seed: u64,
    pub report: RunReport,
}

/// One averaged point: mean and sample standard deviation over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRow {
    pub value: String,
    pub protocol: Protocol,
    pub runs: usize,
    pub mean: MetricRow,
    pub std: MetricRow,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub spec: SweepSpec,
    /// Canonical order: value, then protocol, then seed.
    pub runs: Vec<RunRecord>,
    /// Canonical order: value, then protocol.
    pub points: Vec<PointRow>,
}

/// Per-metric mean over the runs where the metric is defined.
pub fn mean_row(rows: &[MetricRow]) -> MetricRow {
    let mut out = [None; 5];
    for (m, slot) in out.iter_mut().enumerate() {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.values()[m]).collect();
        if !vals.is_empty() {
            *slot = Some(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    MetricRow::from_values(out)
}

/// Per-metric sample standard deviation; absent with fewer than two values.
pub fn std_row(rows: &[MetricRow]) -> MetricRow {
    let mut out = [None; 5];
    for (m, slot) in out.iter_mut().enumerate() {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.values()[m]).collect();
        if vals.len() >= 2 {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            *slot = Some(var.sqrt());
        }
    }
    MetricRow::from_values(out)
}

/// Runs the whole grid on `jobs` threads (0 = rayon's default).
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<SweepResult, SweepError> {
    spec.validate()?;
    let mut grid = Vec::with_capacity(spec.run_count());
    for v in &spec.values {
        for p in &spec.protocols {
            for s in &spec.seeds {
                grid.push((v.clone(), *p, *s));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SweepError::Invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunRecord, SweepError>> = pool.install(|| {
        grid.par_iter()
            .map(|(value, protocol, seed)| {
                let fail = |source: SimError| SweepError::Run {
                    axis: spec.axis.clone(),
                    value: value.clone(),
                    protocol: *protocol,
                    seed: *seed,
                    source,
                };
                let cfg = spec.scenario(value, *protocol, *seed)?;
                let report = run_scenario(cfg).map_err(fail)?;
                Ok(RunRecord {
                    value: value.clone(),
                    protocol: *protocol,
                    seed: *seed,
                    report,
                })
            })
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let points = aggregate(spec, &runs);
    Ok(SweepResult {
        spec: spec.clone(),
        runs,
        points,
    })
}

fn aggregate(spec: &SweepSpec, runs: &[RunRecord]) -> Vec<PointRow> {
    let mut points = Vec::new();
    for v in &spec.values {
        for p in &spec.protocols {
            let rows: Vec<MetricRow> = runs
                .iter()
                .filter(|r| &r.value == v && r.protocol == *p)
                .map(|r| r.report.metrics)
                .collect();
            points.push(PointRow {
                value: v.clone(),
                protocol: *p,
                runs: rows.len(),
                mean: mean_row(&rows),
                std: std_row(&rows),
            });
        }
    }
    points
}

/// Metrics whose plots read better on a logarithmic y axis.
fn log_hint(metric: &str) -> &'static str {
    match metric {
        "pdr" => "linear",
        _ => "log",
    }
}

fn write(path: PathBuf, text: &str) -> Result<(), SweepError> {
    fs::write(&path, text).map_err(|source| SweepError::Output { path, source })
}

pub const RESULTS_HEADER: &str = "axis,value,protocol,runs,pdr,pdr_std,latency_avg,latency_avg_std,nrl,nrl_std,nml,nml_std,throughput,throughput_std";

impl SweepResult {
    pub fn results_csv(&self) -> String {
        let mut s = String::from(RESULTS_HEADER);
        s.push('\n');
        for p in &self.points {
            let _ = write!(s, "{},{},{},{}", self.spec.axis, p.value, p.protocol, p.runs);
            for (m, sd) in p.mean.values().iter().zip(p.std.values()) {
                let _ = write!(s, ",{},{}", fmt_opt(*m), fmt_opt(sd));
            }
            s.push('\n');
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from(MetricRow::CSV_HEADER);
        s.push('\n');
        for r in &self.runs {
            s.push_str(&r.report.metrics.csv_row(&r.report.scenario, r.seed));
            s.push('\n');
        }
        s
    }

    /// Plot data for one metric: x, then mean and std per protocol.
    pub fn plot_data(&self, metric_index: usize) -> String {
        let name = MetricRow::NAMES[metric_index];
        let mut s = format!(
            "# metric = {name}\n# x = {}\n# yscale = {}\n# x",
            self.spec.axis,
            log_hint(name)
        );
        for p in &self.spec.protocols {
            let _ = write!(s, "\t{p}\t{p}_std");
        }
        s.push('\n');
        for v in &self.spec.values {
            s.push_str(v);
            for p in &self.spec.protocols {
                let row = self
                    .points
                    .iter()
                    .find(|r| &r.value == v && r.protocol == *p)
                    .expect("every cell aggregated");
                let _ = write!(
                    s,
                    "\t{}\t{}",
                    fmt_opt(row.mean.values()[metric_index]),
                    fmt_opt(row.std.values()[metric_index])
                );
            }
            s.push('\n');
        }
        s
    }

    /// Writes results.csv, runs.csv, one .dat file per metric, the resolved
    /// base scenario and one ledger file per run.
    pub fn emit_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>, SweepError> {
        if self.points.is_empty() {
            return Err(SweepError::Invalid("nothing to write".into()));
        }
        let io = |path: &Path| {
            let p = path.to_path_buf();
            move |source| SweepError::Output { path: p, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let ledgers = dir.join("ledgers");
        fs::create_dir_all(&ledgers).map_err(io(&ledgers))?;
        let mut written = Vec::new();
        let mut put = |path: PathBuf, text: String| -> Result<(), SweepError> {
            write(path.clone(), &text)?;
            written.push(path);
            Ok(())
        };
        put(dir.join("results.csv"), self.results_csv())?;
        put(dir.join("runs.csv"), self.runs_csv())?;
        for (i, name) in MetricRow::NAMES.iter().enumerate() {
            let file = if *name == "latency_avg" { "latency" } else { name };
            put(dir.join(format!("{file}.dat")), self.plot_data(i))?;
        }
        put(dir.join("scenario.cfg"), self.spec.base.echo())?;
        for r in &self.runs {
            let file = format!("{}_{}_seed{}.ledger", sanitize(&r.value), r.protocol, r.seed);
            put(ledgers.join(file), r.report.ledger.to_kv())?;
        }
        Ok(written)
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}
