//! Replicated parameter sweeps and their CSV output.
//!
//! A sweep takes a base scenario, one axis, a list of values and a number of
//! replications. Replication `r` always runs with seed
//! `derive_seed(base.seed, r)`, whatever the axis value, so points share
//! common random numbers and adding replications leaves earlier ones alone.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig, ValidationIssue};
use crate::engine::run_simulation;
use crate::metrics::{summarize, RunMetrics};
use crate::resource::ResourceVector;
use crate::workload::{derive_seed, PatternSpec};

pub const DEFAULT_REPLICATIONS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Mean inter-arrival time q of every user.
    MeanInterarrival,
    /// Every user's pattern becomes `{C=beta, N=1; C=1, N=beta}`.
    Beta,
    /// Every user's pattern becomes `{C=alpha, N=alpha}`.
    Alpha,
    /// Users 2..G get user 1's pattern scaled by the value.
    SizeRatio,
    /// Number of centers, each a copy of the first base center. Every
    /// user's q is rescaled so the offered load per center stays fixed.
    Centers,
    /// Two centers splitting the base total capacity; the value is the
    /// fraction given to the first.
    CapacityShare,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::MeanInterarrival => "mean_interarrival",
            Axis::Beta => "beta",
            Axis::Alpha => "alpha",
            Axis::SizeRatio => "size_ratio",
            Axis::Centers => "centers",
            Axis::CapacityShare => "capacity_share",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(&self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig, ConfigError> {
        let invalid = |message: String| {
            ConfigError::Invalid(vec![ValidationIssue {
                field: format!("axis {}", self.name()),
                message,
            }])
        };
        let mut config = base.clone();
        match self {
            Axis::MeanInterarrival => config
                .users
                .iter_mut()
                .for_each(|u| u.mean_interarrival = value),
            Axis::Beta | Axis::Alpha => {
                let pattern = match self {
                    Axis::Beta => PatternSpec::anti_phase(value),
                    _ => PatternSpec::in_phase(value),
                }
                .map_err(|e| invalid(e.to_string()))?;
                config
                    .users
                    .iter_mut()
                    .for_each(|u| u.pattern = pattern.clone());
            }
            Axis::SizeRatio => {
                let first = config
                    .users
                    .first()
                    .ok_or_else(|| invalid("no users".into()))?;
                let scaled = first
                    .pattern
                    .scaled(value)
                    .map_err(|e| invalid(e.to_string()))?;
                config
                    .users
                    .iter_mut()
                    .skip(1)
                    .for_each(|u| u.pattern = scaled.clone());
            }
            Axis::Centers => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(invalid(format!(
                        "center count must be a positive integer, got {value}"
                    )));
                }
                let template = *config
                    .centers
                    .first()
                    .ok_or_else(|| invalid("no base center".into()))?;
                let base_k = config.centers.len() as f64;
                config.centers = vec![template; value as usize];
                config
                    .users
                    .iter_mut()
                    .for_each(|u| u.mean_interarrival *= base_k / value);
            }
            Axis::CapacityShare => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(invalid(format!("share must lie in [0, 1], got {value}")));
                }
                let total: ResourceVector = config.centers.iter().copied().sum();
                config.centers = vec![total * value, total * (1.0 - value)];
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub axis: Axis,
    pub values: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: u32,
}

fn default_replications() -> u32 {
    DEFAULT_REPLICATIONS
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot parse sweep spec: {0}")]
    Parse(String),
    #[error("invalid sweep spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self, SweepError> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| SweepError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.values.is_empty() {
            return Err(SweepError::Invalid(
                "values: at least one axis value is required".into(),
            ));
        }
        if self.replications == 0 {
            return Err(SweepError::Invalid(
                "replications: must be at least 1".into(),
            ));
        }
        self.base.validate()?;
        Ok(())
    }
}

pub fn load_sweep(path: impl AsRef<Path>) -> Result<SweepSpec, SweepError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SweepError::Io {
        path: path.display().to_string(),
        source,
    })?;
    SweepSpec::from_json(&text)
}

/// Sample mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                sd: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd, n }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        self.sd / (self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub loss: Stat,
    pub utilization: Stat,
    pub f: Stat,
    pub f1: Stat,
    pub ratios: Vec<f64>,
    /// Per-replication results, in replication order.
    pub runs: Vec<RunMetrics>,
}

impl SweepRow {
    pub fn from_runs(axis_value: f64, runs: Vec<RunMetrics>) -> Self {
        let users = runs.first().map_or(0, |r| r.allocation_ratio.len());
        let ratios = (0..users)
            .map(|g| Stat::of(runs.iter().map(|r| r.allocation_ratio[g])).mean)
            .collect();
        Self {
            axis_value,
            loss: Stat::of(runs.iter().map(|r| r.loss_probability)),
            utilization: Stat::of(runs.iter().map(|r| r.utilization)),
            f: Stat::of(runs.iter().map(|r| r.f)),
            f1: Stat::of(runs.iter().map(|r| r.f1)),
            ratios,
            runs,
        }
    }

    pub fn replications(&self) -> usize {
        self.runs.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub scenario: String,
    pub method: String,
    pub axis: String,
    pub users: usize,
    /// Ordered by axis value.
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub axis_value: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub table: SweepTable,
    pub failures: Vec<PointFailure>,
}

fn run_replication(config: &ScenarioConfig, replication: u32) -> Result<RunMetrics, String> {
    let mut config = config.clone();
    config.seed = derive_seed(config.seed, u64::from(replication));
    let trace = run_simulation(&config).map_err(|e| e.to_string())?;
    summarize(&trace).map_err(|e| e.to_string())
}

/// Runs every axis value × replication on at most `jobs` threads (all cores
/// when `None`). Points whose configuration or run fails are reported in
/// `failures` and left out of the table.
pub fn run_sweep(spec: &SweepSpec, jobs: Option<usize>) -> Result<SweepOutcome, SweepError> {
    spec.validate()?;
    let mut points: Vec<(usize, f64)> = spec.values.iter().copied().enumerate().collect();
    points.sort_by(|a, b| a.1.total_cmp(&b.1));

    let configs: Vec<Result<ScenarioConfig, String>> = points
        .iter()
        .map(|&(_, v)| spec.axis.apply(&spec.base, v).map_err(|e| e.to_string()))
        .collect();
    let tasks: Vec<(usize, u32)> = configs
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_ok())
        .flat_map(|(p, _)| (0..spec.replications).map(move |r| (p, r)))
        .collect();

    let run_all = || -> Vec<Result<RunMetrics, String>> {
        tasks
            .par_iter()
            .map(|&(p, r)| run_replication(configs[p].as_ref().expect("filtered"), r))
            .collect()
    };
    let results = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| SweepError::Invalid(format!("cannot start worker pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };

    let mut per_point: Vec<Vec<Result<RunMetrics, String>>> = vec![Vec::new(); points.len()];
    for (&(p, _), result) in tasks.iter().zip(results) {
        per_point[p].push(result);
    }

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (p, &(_, value)) in points.iter().enumerate() {
        if let Err(message) = &configs[p] {
            failures.push(PointFailure {
                axis_value: value,
                message: message.clone(),
            });
            continue;
        }
        match per_point[p].drain(..).collect::<Result<Vec<_>, _>>() {
            Ok(runs) => rows.push(SweepRow::from_runs(value, runs)),
            Err(message) => failures.push(PointFailure {
                axis_value: value,
                message,
            }),
        }
    }

    Ok(SweepOutcome {
        table: SweepTable {
            scenario: spec.base.name.clone(),
            method: spec.base.method.to_string(),
            axis: spec.axis.name().to_owned(),
            users: spec.base.users.len(),
            rows,
        },
        failures,
    })
}

/// A one-row table for a single run of `config`.
pub fn single_run_table(config: &ScenarioConfig) -> Result<SweepTable, String> {
    let trace = run_simulation(config).map_err(|e| e.to_string())?;
    let metrics = summarize(&trace).map_err(|e| e.to_string())?;
    Ok(SweepTable {
        scenario: config.name.clone(),
        method: config.method.to_string(),
        axis: "none".into(),
        users: config.users.len(),
        rows: vec![SweepRow::from_runs(0.0, vec![metrics])],
    })
}

/// Decimal rendering with at least nine significant digits.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).clamp(0, 20) as usize;
    format!("{x:.decimals$}")
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_owned()
    }
}

/// Writes the table as CSV: a header plus one row per axis value.
pub fn write_csv<W: Write>(table: &SweepTable, mut out: W) -> io::Result<()> {
    let mut header = String::from(
        "scenario,method,axis,axis_value,replications,loss_prob_mean,loss_prob_sd,\
         util_mean,util_sd,F_mean,F_sd,F1_mean,F1_sd",
    );
    for g in 1..=table.users {
        write!(header, ",ratio_user_{g}").expect("string write");
    }
    writeln!(out, "{header}")?;
    for row in &table.rows {
        let mut line = format!(
            "{},{},{},{},{}",
            csv_escape(&table.scenario),
            csv_escape(&table.method),
            csv_escape(&table.axis),
            format_number(row.axis_value),
            row.replications()
        );
        for stat in [row.loss, row.utilization, row.f, row.f1] {
            write!(
                line,
                ",{},{}",
                format_number(stat.mean),
                format_number(stat.sd)
            )
            .expect("string write");
        }
        for g in 0..table.users {
            let ratio = row.ratios.get(g).copied().unwrap_or(0.0);
            write!(line, ",{}", format_number(ratio)).expect("string write");
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Writes the table to `path`. Refuses an empty table.
pub fn emit_csv(table: &SweepTable, path: impl AsRef<Path>) -> io::Result<()> {
    if table.rows.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "no rows to write",
        ));
    }
    let file = std::fs::File::create(path)?;
    let mut out = io::BufWriter::new(file);
    write_csv(table, &mut out)?;
    out.flush()
}
