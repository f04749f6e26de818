//! Discrete-event simulation loop.
//!
//! Events at the same instant are processed releases first, then block
//! boundaries, then delayed starts, then arrivals; remaining ties go by
//! insertion order.
//!
//! Time is cut into blocks of length L. At the end of each block every
//! user's allocated key resource is normalized by its weight, and users
//! that both fell behind the best-served user and suffered a rejection get
//! an imbalance N. Under Method III that imbalance becomes an allowance for
//! the next block: when such a user's request cannot be placed immediately,
//! it is instead booked at the earliest future time some center can host it,
//! provided it still completes within T of its arrival.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::metrics::{
    key_resource_of, BlockRecord, MeasurementWindow, RequestRecord, Trace, UserBlockRecord,
    UtilizationSeries,
};
use crate::policy::{
    identified_resource, least_available, select_center_cpu_best_fit, select_center_method1,
    select_center_method2, Method, NormalizationBasis, RoundRobinCursor,
};
use crate::resource::{
    AllocationOutcome, CapacityError, Center, CenterId, RejectReason, Request, RequestId,
    ResourceVector, Time, UserId,
};
use crate::timeline::{AvailabilityTimeline, TimelineError};
use crate::workload::{substream, RequestStream, ENGINE_STREAM};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid scripted request {id}: {message}")]
    BadRequest { id: u64, message: String },
    #[error("engine invariant violated: {0}")]
    Capacity(#[from] CapacityError),
    #[error("engine invariant violated: {0}")]
    Timeline(#[from] TimelineError),
    #[error("engine invariant violated: release of unknown request {0:?}")]
    UnknownRequest(RequestId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Release(RequestId),
    BlockBoundary(usize),
    DelayedStart(RequestId),
    Arrival(Request),
}

impl EventKind {
    fn priority(&self) -> u8 {
        match self {
            EventKind::Release(_) => 0,
            EventKind::BlockBoundary(_) => 1,
            EventKind::DelayedStart(_) => 2,
            EventKind::Arrival(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: Time,
    pub kind: EventKind,
    pub seq: u64,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we want the earliest event.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.kind.priority().cmp(&self.kind.priority()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: Time, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent { time, kind, seq });
    }

    fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiveAllocation {
    pub user: UserId,
    pub center: CenterId,
    pub demand: ResourceVector,
    pub start: Time,
    pub release: Time,
}

#[derive(Debug, Clone, Copy)]
struct PendingStart {
    request: Request,
    center: CenterId,
}

/// Fills in `key`, `v` and `n` for one finished block.
///
/// The user with the largest normalized allocation (smallest index on ties)
/// sets the reference; every other user's imbalance is the gap to it, and is
/// forced to zero for users with no rejection in the block.
pub fn finalize_block(users: &mut [UserBlockRecord], weights: &[f64], capacity: ResourceVector) {
    debug_assert_eq!(users.len(), weights.len());
    for (u, &r) in users.iter_mut().zip(weights) {
        let key = key_resource_of(u.requested, capacity);
        u.key = Some(key);
        u.v = u.allocated.get(key) * r;
    }
    let top = users
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |best, (g, u)| match best {
            Some((_, v)) if v >= u.v => best,
            _ => Some((g, u.v)),
        });
    let Some((top, v_top)) = top else { return };
    for (g, u) in users.iter_mut().enumerate() {
        u.n = if g == top || u.rejected == 0 {
            0.0
        } else {
            v_top - u.v
        };
    }
}

enum Arrivals {
    Generated(Vec<RequestStream>),
    Scripted,
}

/// Mutable state of one simulation run.
pub struct Simulation {
    method: Method,
    basis: NormalizationBasis,
    weights: Vec<f64>,
    block_length: Time,
    max_completion: Time,
    total_capacity: ResourceVector,
    warmup_fraction: f64,
    horizon: u64,
    end_time: Option<Time>,

    clock: Time,
    centers: Vec<Center>,
    timeline: AvailabilityTimeline,
    queue: EventQueue,
    cursor: RoundRobinCursor,
    rng: ChaCha8Rng,
    live: BTreeMap<RequestId, LiveAllocation>,
    live_per_center: Vec<usize>,
    pending: BTreeMap<RequestId, PendingStart>,

    arrivals: Arrivals,
    arrivals_open: bool,
    arrivals_pending: usize,
    arrived: u64,
    last_arrival: Time,

    current_block: usize,
    ledger: Vec<UserBlockRecord>,
    blocks: Vec<BlockRecord>,
    records: Vec<RequestRecord>,
    utilization: UtilizationSeries,
}

impl Simulation {
    fn from_config(config: &ScenarioConfig, arrivals: Arrivals) -> Result<Self, ConfigError> {
        let resolved = config.resolve()?;
        let centers: Vec<Center> = config
            .centers
            .iter()
            .enumerate()
            .map(|(i, &cap)| Center::new(CenterId(i), cap))
            .collect();
        let k = centers.len();
        let users = config.users.len();
        let mut sim = Self {
            method: config.method,
            basis: resolved.basis,
            weights: resolved.weights,
            block_length: resolved.block_length,
            max_completion: resolved.max_completion,
            total_capacity: config.total_capacity(),
            warmup_fraction: config.warmup_fraction,
            horizon: config.horizon,
            end_time: config.end_time,
            clock: 0.0,
            timeline: AvailabilityTimeline::new(config.centers.iter().copied()),
            centers,
            queue: EventQueue::default(),
            cursor: RoundRobinCursor::new(k),
            rng: substream(config.seed, ENGINE_STREAM),
            live: BTreeMap::new(),
            live_per_center: vec![0; k],
            pending: BTreeMap::new(),
            arrivals,
            arrivals_open: config.horizon > 0,
            arrivals_pending: 0,
            arrived: 0,
            last_arrival: 0.0,
            current_block: 0,
            ledger: vec![UserBlockRecord::default(); users],
            blocks: Vec::new(),
            records: Vec::new(),
            utilization: UtilizationSeries::new(k),
        };
        sim.queue
            .push(sim.block_length, EventKind::BlockBoundary(0));
        Ok(sim)
    }

    /// A simulation whose arrivals come from the configured user workloads.
    pub fn new(config: &ScenarioConfig) -> Result<Self, ConfigError> {
        let streams = config
            .users
            .iter()
            .enumerate()
            .map(|(g, w)| RequestStream::new(UserId(g), w.clone(), config.seed))
            .collect();
        let mut sim = Self::from_config(config, Arrivals::Generated(streams))?;
        if sim.arrivals_open {
            if let Arrivals::Generated(streams) = &mut sim.arrivals {
                for stream in streams.iter_mut() {
                    let request = stream.next_request();
                    if sim.end_time.is_none_or(|end| request.arrival <= end) {
                        sim.queue.push(request.arrival, EventKind::Arrival(request));
                        sim.arrivals_pending += 1;
                    }
                }
            }
        }
        sim.arrivals_open &= sim.arrivals_pending > 0;
        Ok(sim)
    }

    /// A simulation driven by an explicit request list; the configured
    /// workloads only define the users and their weights. Requests are
    /// renumbered in arrival order.
    pub fn scripted(
        config: &ScenarioConfig,
        requests: &[Request],
    ) -> Result<Self, SimulationError> {
        let mut sim = Self::from_config(config, Arrivals::Scripted)?;
        for r in requests {
            if !r.is_well_formed() || r.arrival < 0.0 {
                return Err(SimulationError::BadRequest {
                    id: r.id.0,
                    message: "malformed demand, hold or arrival".into(),
                });
            }
            if r.user.0 >= sim.weights.len() {
                return Err(SimulationError::BadRequest {
                    id: r.id.0,
                    message: format!("unknown user {}", r.user.0),
                });
            }
        }
        sim.horizon = sim.horizon.min(requests.len() as u64);
        sim.arrivals_open = sim.horizon > 0;
        for r in requests.iter().take(sim.horizon as usize) {
            sim.queue.push(r.arrival, EventKind::Arrival(*r));
            sim.arrivals_pending += 1;
        }
        Ok(sim)
    }

    pub fn clock(&self) -> Time {
        self.clock
    }

    pub fn centers(&self) -> &[Center] {
        &self.centers
    }

    pub fn timeline(&self) -> &AvailabilityTimeline {
        &self.timeline
    }

    pub fn live_allocations(&self) -> impl Iterator<Item = (&RequestId, &LiveAllocation)> {
        self.live.iter()
    }

    pub fn records(&self) -> &[RequestRecord] {
        &self.records
    }

    /// Processes the next event. Returns `false` once the queue is empty.
    pub fn step(&mut self) -> Result<bool, SimulationError> {
        let Some(event) = self.queue.pop() else {
            return Ok(false);
        };
        debug_assert!(event.time >= self.clock);
        self.clock = event.time;
        match event.kind {
            EventKind::Release(id) => self.handle_release(id)?,
            EventKind::BlockBoundary(j) => {
                if self.arrivals_open {
                    self.handle_block_boundary(j);
                }
            }
            EventKind::DelayedStart(id) => self.handle_delayed_start(id)?,
            EventKind::Arrival(request) => {
                self.arrivals_pending -= 1;
                if self.arrivals_open {
                    self.handle_arrival(request)?;
                }
                if self.arrivals_pending == 0 {
                    self.arrivals_open = false;
                }
            }
        }
        Ok(true)
    }

    pub fn run(mut self) -> Result<Trace, SimulationError> {
        while self.step()? {}
        Ok(self.into_trace())
    }

    fn into_trace(self) -> Trace {
        let end = self.last_arrival;
        Trace {
            capacities: self.centers.iter().map(Center::capacity).collect(),
            weights: self.weights,
            block_length: self.block_length,
            records: self.records,
            blocks: self.blocks,
            utilization: self.utilization,
            window: MeasurementWindow {
                start: self.warmup_fraction * end,
                end,
            },
        }
    }

    fn handle_arrival(
        &mut self,
        mut request: Request,
    ) -> Result<AllocationOutcome, SimulationError> {
        request.id = RequestId(self.arrived);
        request.arrival = self.clock;
        self.arrived += 1;
        self.last_arrival = self.clock;
        if self.arrived >= self.horizon {
            self.arrivals_open = false;
        } else if let Arrivals::Generated(streams) = &mut self.arrivals {
            let next = streams[request.user.0].next_request();
            if self.end_time.is_none_or(|end| next.arrival <= end) {
                self.queue.push(next.arrival, EventKind::Arrival(next));
                self.arrivals_pending += 1;
            }
        }

        let user = request.user.0;
        self.ledger[user].requested += request.demand;

        let demand = request.demand;
        let chosen = match self.method {
            Method::Method1 => select_center_method1(&self.centers, demand, &mut self.cursor),
            Method::Method2 => {
                select_center_method2(&self.centers, demand, self.basis, &mut self.rng)
            }
            Method::CpuBestFit => select_center_cpu_best_fit(&self.centers, demand, &mut self.rng),
            Method::Method3 => {
                // Capacity reserved for delayed starts is off limits too.
                let kind = identified_resource(demand, self.basis);
                let timeline = &self.timeline;
                let candidates = self
                    .centers
                    .iter()
                    .filter(|c| {
                        c.fits(&demand)
                            && timeline.can_host(c.id(), demand, self.clock, request.hold)
                    })
                    .map(|c| (c.id(), c.available()));
                least_available(candidates, kind, &mut self.rng)
            }
        };

        let outcome = match chosen {
            Some(center) => {
                self.timeline
                    .commit(center, request.id, self.clock, request.hold, demand)?;
                self.start_service(&request, center)?;
                AllocationOutcome::Accepted {
                    center,
                    start: self.clock,
                }
            }
            None if self.method == Method::Method3 => self.try_delayed_allocation(&request)?,
            None => AllocationOutcome::Rejected {
                reason: RejectReason::NoCapacity,
            },
        };
        if !outcome.is_served() {
            self.ledger[user].rejected += 1;
        }
        self.records.push(RequestRecord { request, outcome });
        Ok(outcome)
    }

    fn try_delayed_allocation(
        &mut self,
        request: &Request,
    ) -> Result<AllocationOutcome, SimulationError> {
        let acc = &self.ledger[request.user.0];
        let target = acc.fill_target;
        if !(target > 0.0) || acc.fill_cpu > target || acc.fill_bw > target {
            return Ok(AllocationOutcome::Rejected {
                reason: RejectReason::NotEligibleForDelay,
            });
        }
        let latest_start = request.arrival + self.max_completion - request.hold;
        let slot = self.timeline.earliest_start(
            request.demand,
            request.hold,
            self.clock,
            latest_start,
            self.basis,
            &mut self.rng,
        );
        let Some((center, start)) = slot else {
            return Ok(AllocationOutcome::Rejected {
                reason: RejectReason::DeadlineUnreachable,
            });
        };
        self.timeline
            .commit(center, request.id, start, request.hold, request.demand)?;
        self.pending.insert(
            request.id,
            PendingStart {
                request: *request,
                center,
            },
        );
        self.queue.push(start, EventKind::DelayedStart(request.id));
        let acc = &mut self.ledger[request.user.0];
        acc.fill_cpu += request.demand.cpu;
        acc.fill_bw += request.demand.bw;
        Ok(AllocationOutcome::DelayedAccepted { center, start })
    }

    /// Allocates on `center` now; the timeline booking must already exist.
    fn start_service(
        &mut self,
        request: &Request,
        center: CenterId,
    ) -> Result<(), SimulationError> {
        let c = center.0;
        if let Err(err) = self.centers[c].allocate(request.demand) {
            // Rounding drift between the running total and the bookings can
            // reject an exact fit; recount from live allocations and retry.
            self.resync_center(center);
            self.centers[c].allocate(request.demand).map_err(|_| err)?;
        }
        let release = self.clock + request.hold;
        self.live.insert(
            request.id,
            LiveAllocation {
                user: request.user,
                center,
                demand: request.demand,
                start: self.clock,
                release,
            },
        );
        self.live_per_center[c] += 1;
        self.ledger[request.user.0].allocated += request.demand;
        self.queue.push(release, EventKind::Release(request.id));
        self.sample_utilization();
        Ok(())
    }

    fn handle_delayed_start(&mut self, id: RequestId) -> Result<(), SimulationError> {
        let pending = self
            .pending
            .remove(&id)
            .ok_or(SimulationError::UnknownRequest(id))?;
        self.start_service(&pending.request, pending.center)
    }

    fn handle_release(&mut self, id: RequestId) -> Result<(), SimulationError> {
        let live = self
            .live
            .remove(&id)
            .ok_or(SimulationError::UnknownRequest(id))?;
        let c = live.center.0;
        self.centers[c].release(live.demand)?;
        self.live_per_center[c] -= 1;
        if self.live_per_center[c] == 0 {
            self.centers[c].resync(ResourceVector::ZERO);
        }
        self.timeline.retire(live.center, id);
        self.sample_utilization();
        Ok(())
    }

    fn handle_block_boundary(&mut self, j: usize) {
        debug_assert_eq!(j, self.current_block);
        finalize_block(&mut self.ledger, &self.weights, self.total_capacity);
        let next: Vec<UserBlockRecord> = self
            .ledger
            .iter()
            .zip(&self.weights)
            .map(|(u, r)| UserBlockRecord {
                fill_target: u.n / r,
                ..Default::default()
            })
            .collect();
        let users = std::mem::replace(&mut self.ledger, next);
        self.blocks.push(BlockRecord {
            index: j,
            start: j as f64 * self.block_length,
            end: (j + 1) as f64 * self.block_length,
            users,
        });
        self.current_block = j + 1;
        self.queue.push(
            (j + 2) as f64 * self.block_length,
            EventKind::BlockBoundary(j + 1),
        );
    }

    fn resync_center(&mut self, center: CenterId) {
        let in_use = self
            .live
            .values()
            .filter(|l| l.center == center)
            .map(|l| l.demand)
            .sum();
        self.centers[center.0].resync(in_use);
    }

    fn sample_utilization(&mut self) {
        self.utilization
            .push(self.clock, self.centers.iter().map(Center::in_use));
    }

    /// Checks that every center's in-use total matches its live allocations
    /// and stays within capacity.
    pub fn check_conservation(&self) -> Result<(), String> {
        for center in &self.centers {
            let live: ResourceVector = self
                .live
                .values()
                .filter(|l| l.center == center.id())
                .map(|l| l.demand)
                .sum();
            let in_use = center.in_use();
            let tol = 1e-9 * (1.0 + center.capacity().cpu.max(center.capacity().bw));
            if (live.cpu - in_use.cpu).abs() > tol || (live.bw - in_use.bw).abs() > tol {
                return Err(format!(
                    "{}: live sum {live} != in use {in_use}",
                    center.id()
                ));
            }
            if !in_use.is_non_negative() || !in_use.fits_within(&center.capacity()) {
                return Err(format!(
                    "{}: in use {in_use} outside [0, {}]",
                    center.id(),
                    center.capacity()
                ));
            }
        }
        Ok(())
    }
}

/// Runs a configured scenario to completion.
pub fn run_simulation(config: &ScenarioConfig) -> Result<Trace, SimulationError> {
    Simulation::new(config)?.run()
}

/// Runs the given requests through the configured centers and policy.
pub fn run_scripted(
    config: &ScenarioConfig,
    requests: &[Request],
) -> Result<Trace, SimulationError> {
    Simulation::scripted(config, requests)?.run()
}
