//! Evaluation quantities computed from a finished [`Trace`].
//!
//! Everything here is restricted to the trace's measurement window: requests
//! arriving inside it, utilization integrated over it, and time blocks lying
//! entirely within it.

use serde::Serialize;
use thiserror::Error;

use crate::resource::{AllocationOutcome, Request, ResourceType, ResourceVector, Time};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no requests arrived inside the measurement window")]
    EmptyTrace,
}

/// The type whose requested total is the larger fraction of that type's
/// capacity. Equal fractions go to bandwidth.
pub fn key_resource_of(requested: ResourceVector, capacities: ResourceVector) -> ResourceType {
    if requested.cpu / capacities.cpu > requested.bw / capacities.bw {
        ResourceType::Processing
    } else {
        ResourceType::Bandwidth
    }
}

/// Mean over blocks of the per-block imbalance sum. `imbalance[j][g]` is
/// user g's imbalance in block j.
pub fn fairness_f(imbalance: &[Vec<f64>]) -> f64 {
    if imbalance.is_empty() {
        return 0.0;
    }
    let total: f64 = imbalance.iter().flatten().sum();
    total / imbalance.len() as f64
}

/// Per-user mean imbalance across blocks.
pub fn mean_imbalance(imbalance: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = imbalance.first() else {
        return Vec::new();
    };
    let s = imbalance.len() as f64;
    (0..first.len())
        .map(|g| imbalance.iter().map(|row| row[g]).sum::<f64>() / s)
        .collect()
}

/// Mean over blocks of the squared deviation of each user's imbalance from
/// that user's own mean.
pub fn fairness_f1(imbalance: &[Vec<f64>]) -> f64 {
    if imbalance.is_empty() {
        return 0.0;
    }
    let ave = mean_imbalance(imbalance);
    let total: f64 = imbalance
        .iter()
        .map(|row| {
            row.iter()
                .zip(&ave)
                .map(|(n, a)| (n - a).powi(2))
                .sum::<f64>()
        })
        .sum();
    total / imbalance.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub f: f64,
    pub f1: f64,
    /// Blocks × users.
    pub imbalance: Vec<Vec<f64>>,
    pub mean_imbalance: Vec<f64>,
}

impl FairnessReport {
    pub fn from_imbalance(imbalance: Vec<Vec<f64>>) -> Self {
        Self {
            f: fairness_f(&imbalance),
            f1: fairness_f1(&imbalance),
            mean_imbalance: mean_imbalance(&imbalance),
            imbalance,
        }
    }

    pub fn blocks(&self) -> usize {
        self.imbalance.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RequestRecord {
    pub request: Request,
    pub outcome: AllocationOutcome,
}

/// One user's accounting for one time block.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UserBlockRecord {
    /// Demands of requests arriving in the block.
    pub requested: ResourceVector,
    /// Demands of requests starting service in the block.
    pub allocated: ResourceVector,
    /// Requests arriving in the block that were finally rejected.
    pub rejected: u32,
    pub key: Option<ResourceType>,
    /// Normalized allocated key resource.
    pub v: f64,
    /// Imbalance against the best-served user.
    pub n: f64,
    /// Delayed-allocation totals granted during the block.
    pub fill_cpu: f64,
    pub fill_bw: f64,
    /// Delayed-allocation allowance in effect during the block.
    pub fill_target: f64,
}

impl UserBlockRecord {
    pub fn allocated_key(&self) -> f64 {
        self.key.map_or(0.0, |k| self.allocated.get(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRecord {
    pub index: usize,
    pub start: Time,
    pub end: Time,
    pub users: Vec<UserBlockRecord>,
}

/// Per-center in-use snapshots, one per allocation or release. Each snapshot
/// holds until the next one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UtilizationSeries {
    centers: usize,
    times: Vec<Time>,
    in_use: Vec<ResourceVector>,
}

impl UtilizationSeries {
    pub fn new(centers: usize) -> Self {
        Self {
            centers,
            times: Vec::new(),
            in_use: Vec::new(),
        }
    }

    pub fn push(&mut self, time: Time, in_use: impl IntoIterator<Item = ResourceVector>) {
        let before = self.in_use.len();
        self.in_use.extend(in_use);
        assert_eq!(
            self.in_use.len() - before,
            self.centers,
            "one snapshot per center"
        );
        self.times.push(time);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn sample(&self, i: usize) -> (Time, &[ResourceVector]) {
        (
            self.times[i],
            &self.in_use[i * self.centers..(i + 1) * self.centers],
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = (Time, &[ResourceVector])> {
        (0..self.len()).map(|i| self.sample(i))
    }
}

/// Interval over which statistics are collected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasurementWindow {
    pub start: Time,
    pub end: Time,
}

impl MeasurementWindow {
    pub fn contains(&self, t: Time) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn duration(&self) -> Time {
        self.end - self.start
    }
}

/// Everything a simulation run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub capacities: Vec<ResourceVector>,
    pub weights: Vec<f64>,
    pub block_length: Time,
    /// Ordered by request id.
    pub records: Vec<RequestRecord>,
    pub blocks: Vec<BlockRecord>,
    pub utilization: UtilizationSeries,
    pub window: MeasurementWindow,
}

impl Trace {
    pub fn users(&self) -> usize {
        self.weights.len()
    }

    pub fn total_capacity(&self) -> ResourceVector {
        self.capacities.iter().copied().sum()
    }

    pub fn measured_records(&self) -> impl Iterator<Item = &RequestRecord> {
        self.records
            .iter()
            .filter(|r| self.window.contains(r.request.arrival))
    }

    /// Complete blocks lying inside the measurement window.
    pub fn measured_blocks(&self) -> impl Iterator<Item = &BlockRecord> {
        self.blocks
            .iter()
            .filter(|b| b.start >= self.window.start && b.end <= self.window.end)
    }
}

/// Fraction of measured requests that were finally rejected.
pub fn loss_probability(trace: &Trace) -> Result<f64, MetricsError> {
    let (total, lost) = trace.measured_records().fold((0u64, 0u64), |(t, l), r| {
        (t + 1, l + u64::from(!r.outcome.is_served()))
    });
    if total == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    Ok(lost as f64 / total as f64)
}

/// Time-weighted mean over the window of the average of the CPU and
/// bandwidth utilization of the whole system. Zero for an empty window.
pub fn avg_utilization(trace: &Trace) -> f64 {
    let MeasurementWindow { start, end } = trace.window;
    if end <= start {
        return 0.0;
    }
    let cap = trace.total_capacity();
    let level = |in_use: &[ResourceVector]| {
        let used: ResourceVector = in_use.iter().copied().sum();
        0.5 * (used.cpu / cap.cpu + used.bw / cap.bw)
    };

    let mut integral = 0.0;
    let mut current = 0.0;
    let mut since = start;
    for (t, in_use) in trace.utilization.iter() {
        if t >= end {
            break;
        }
        if t > since {
            integral += current * (t - since);
            since = t;
        }
        current = level(in_use);
    }
    integral += current * (end - since);
    integral / (end - start)
}

/// Per-block imbalance matrix over measured blocks, and F/F1 from it.
pub fn fairness(trace: &Trace) -> FairnessReport {
    let imbalance = trace
        .measured_blocks()
        .map(|b| b.users.iter().map(|u| u.n).collect())
        .collect();
    FairnessReport::from_imbalance(imbalance)
}

/// Each user's share of the allocated key resource over measured blocks.
/// All zeros when nothing was allocated.
pub fn allocation_ratio(trace: &Trace) -> Vec<f64> {
    let mut totals = vec![0.0; trace.users()];
    for block in trace.measured_blocks() {
        for (total, user) in totals.iter_mut().zip(&block.users) {
            *total += user.allocated_key();
        }
    }
    let sum: f64 = totals.iter().sum();
    if sum > 0.0 {
        totals.iter().map(|t| t / sum).collect()
    } else {
        totals
    }
}

/// The headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub loss_probability: f64,
    pub utilization: f64,
    pub f: f64,
    pub f1: f64,
    pub allocation_ratio: Vec<f64>,
    pub delayed: u64,
    pub measured_requests: u64,
}

pub fn summarize(trace: &Trace) -> Result<RunMetrics, MetricsError> {
    let report = fairness(trace);
    let (measured, delayed) = trace.measured_records().fold((0, 0), |(m, d), r| {
        (
            m + 1,
            d + u64::from(matches!(
                r.outcome,
                AllocationOutcome::DelayedAccepted { .. }
            )),
        )
    });
    Ok(RunMetrics {
        loss_probability: loss_probability(trace)?,
        utilization: avg_utilization(trace),
        f: report.f,
        f1: report.f1,
        allocation_ratio: allocation_ratio(trace),
        delayed,
        measured_requests: measured,
    })
}
