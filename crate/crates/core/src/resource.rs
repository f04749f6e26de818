//! Resources, centers and requests.
//!
//! A request is always served by exactly one center, and both of its
//! resource components are taken and given back together. [`Center`] enforces
//! `0 <= in_use <= capacity` on every transition.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time, in abstract time units.
pub type Time = f64;

/// A (processing ability, bandwidth) quantity pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu: f64,
    pub bw: f64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector { cpu: 0.0, bw: 0.0 };

    pub const fn new(cpu: f64, bw: f64) -> Self {
        Self { cpu, bw }
    }

    /// Componentwise `self <= other`.
    pub fn fits_within(&self, other: &ResourceVector) -> bool {
        self.cpu <= other.cpu && self.bw <= other.bw
    }

    pub fn is_non_negative(&self) -> bool {
        self.cpu >= 0.0 && self.bw >= 0.0
    }

    pub fn get(&self, kind: ResourceType) -> f64 {
        match kind {
            ResourceType::Processing => self.cpu,
            ResourceType::Bandwidth => self.bw,
        }
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.cpu + rhs.cpu, self.bw + rhs.bw)
    }
}

impl AddAssign for ResourceVector {
    fn add_assign(&mut self, rhs: Self) {
        self.cpu += rhs.cpu;
        self.bw += rhs.bw;
    }
}

impl Sub for ResourceVector {
    type Output = ResourceVector;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.cpu - rhs.cpu, self.bw - rhs.bw)
    }
}

impl SubAssign for ResourceVector {
    fn sub_assign(&mut self, rhs: Self) {
        self.cpu -= rhs.cpu;
        self.bw -= rhs.bw;
    }
}

impl Mul<f64> for ResourceVector {
    type Output = ResourceVector;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.cpu * rhs, self.bw * rhs)
    }
}

impl std::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |acc, v| acc + v)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(cpu={}, bw={})", self.cpu, self.bw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceType {
    Processing,
    Bandwidth,
}

/// Zero-based center index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CenterId(pub usize);

/// Zero-based user index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestId(pub u64);

impl fmt::Display for CenterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "center {}", self.0 + 1)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CapacityError {
    #[error("{center}: allocating {demand} exceeds available {available}")]
    CapacityExceeded {
        center: CenterId,
        demand: ResourceVector,
        available: ResourceVector,
    },
    #[error("{center}: releasing {demand} underflows in-use {in_use}")]
    Underflow {
        center: CenterId,
        demand: ResourceVector,
        in_use: ResourceVector,
    },
}

/// Relative slack tolerated on release, to absorb rounding from summing
/// non-integral demands in a different order than they were added.
const RELEASE_SLACK: f64 = 1e-9;

/// One facility holding a fixed pool of both resource types.
#[derive(Debug, Clone, PartialEq)]
pub struct Center {
    id: CenterId,
    capacity: ResourceVector,
    in_use: ResourceVector,
}

impl Center {
    pub fn new(id: CenterId, capacity: ResourceVector) -> Self {
        Self {
            id,
            capacity,
            in_use: ResourceVector::ZERO,
        }
    }

    /// Builds a center with some capacity already taken. Fails if `in_use`
    /// is negative or larger than `capacity`.
    pub fn with_usage(
        id: CenterId,
        capacity: ResourceVector,
        in_use: ResourceVector,
    ) -> Result<Self, CapacityError> {
        let mut center = Self::new(id, capacity);
        center.allocate(in_use)?;
        Ok(center)
    }

    pub fn id(&self) -> CenterId {
        self.id
    }

    pub fn capacity(&self) -> ResourceVector {
        self.capacity
    }

    pub fn in_use(&self) -> ResourceVector {
        self.in_use
    }

    pub fn available(&self) -> ResourceVector {
        self.capacity - self.in_use
    }

    /// True iff both components of `demand` fit in what is left.
    pub fn fits(&self, demand: &ResourceVector) -> bool {
        demand.fits_within(&self.available())
    }

    /// Takes `demand` from the center, both components at once.
    pub fn allocate(&mut self, demand: ResourceVector) -> Result<(), CapacityError> {
        if !demand.is_non_negative() || !self.fits(&demand) {
            return Err(CapacityError::CapacityExceeded {
                center: self.id,
                demand,
                available: self.available(),
            });
        }
        self.in_use += demand;
        Ok(())
    }

    /// Gives `demand` back to the center, both components at once.
    pub fn release(&mut self, demand: ResourceVector) -> Result<(), CapacityError> {
        let slack = self.capacity * RELEASE_SLACK;
        if !demand.is_non_negative()
            || demand.cpu > self.in_use.cpu + slack.cpu
            || demand.bw > self.in_use.bw + slack.bw
        {
            return Err(CapacityError::Underflow {
                center: self.id,
                demand,
                in_use: self.in_use,
            });
        }
        self.in_use -= demand;
        self.in_use.cpu = self.in_use.cpu.max(0.0);
        self.in_use.bw = self.in_use.bw.max(0.0);
        Ok(())
    }

    /// Overwrites `in_use` with an externally reconciled total, e.g. the sum
    /// of live allocations. Used to shed accumulated rounding error.
    pub(crate) fn resync(&mut self, in_use: ResourceVector) {
        debug_assert!(in_use.is_non_negative());
        self.in_use = in_use;
    }
}

/// One service demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub user: UserId,
    pub arrival: Time,
    pub demand: ResourceVector,
    pub hold: Time,
}

impl Request {
    /// Checks the per-request invariants: a positive component and a
    /// positive holding time.
    pub fn is_well_formed(&self) -> bool {
        self.demand.is_non_negative()
            && (self.demand.cpu > 0.0 || self.demand.bw > 0.0)
            && self.hold > 0.0
            && self.arrival.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// No center could take both components at arrival.
    NoCapacity,
    /// Delayed allocation was tried but no slot met the completion deadline.
    DeadlineUnreachable,
    /// Immediate allocation failed and the user had no fill-up allowance left.
    NotEligibleForDelay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum AllocationOutcome {
    Accepted { center: CenterId, start: Time },
    Rejected { reason: RejectReason },
    DelayedAccepted { center: CenterId, start: Time },
}

impl AllocationOutcome {
    pub fn is_served(&self) -> bool {
        !matches!(self, AllocationOutcome::Rejected { .. })
    }

    pub fn placement(&self) -> Option<(CenterId, Time)> {
        match *self {
            AllocationOutcome::Accepted { center, start }
            | AllocationOutcome::DelayedAccepted { center, start } => Some((center, start)),
            AllocationOutcome::Rejected { .. } => None,
        }
    }
}
