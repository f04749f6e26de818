//! Center selection.
//!
//! * Method I checks centers round-robin and takes the first that fits.
//! * Method II normalizes the demand by the smallest per-type capacity,
//!   picks the dominant ("identified") type, and best-fits on it: the
//!   feasible center with the least available amount of that type wins.
//! * Method III uses Method II at arrival time (see [`crate::engine`]).
//!
//! [`select_center_cpu_best_fit`] is a baseline that best-fits on processing
//! ability alone, ignoring which type dominates.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::resource::{Center, CenterId, ResourceType, ResourceVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Round-robin first-fit.
    Method1,
    /// Best-fit on the identified resource.
    Method2,
    /// Method II plus delayed fill-up of the previous block's imbalance.
    Method3,
    /// Best-fit on processing ability only.
    CpuBestFit,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Method1 => "method1",
            Method::Method2 => "method2",
            Method::Method3 => "method3",
            Method::CpuBestFit => "cpu_best_fit",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "method1" => Ok(Method::Method1),
            "method2" => Ok(Method::Method2),
            "method3" => Ok(Method::Method3),
            "cpu_best_fit" => Ok(Method::CpuBestFit),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

/// Per-type normalizers: the smallest center capacity of each type.
///
/// Centers with zero capacity of a type are skipped, since they can never
/// host a request anyway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationBasis {
    pub xc0: f64,
    pub xn0: f64,
}

impl NormalizationBasis {
    pub fn new(xc0: f64, xn0: f64) -> Self {
        assert!(xc0 > 0.0 && xn0 > 0.0, "normalizers must be positive");
        Self { xc0, xn0 }
    }

    /// Returns `None` if no center has a positive capacity of some type.
    pub fn from_capacities<I>(capacities: I) -> Option<Self>
    where
        I: IntoIterator<Item = ResourceVector>,
    {
        let (mut xc0, mut xn0) = (f64::INFINITY, f64::INFINITY);
        for cap in capacities {
            if cap.cpu > 0.0 {
                xc0 = xc0.min(cap.cpu);
            }
            if cap.bw > 0.0 {
                xn0 = xn0.min(cap.bw);
            }
        }
        (xc0.is_finite() && xn0.is_finite()).then_some(Self { xc0, xn0 })
    }

    pub fn from_centers(centers: &[Center]) -> Option<Self> {
        Self::from_capacities(centers.iter().map(Center::capacity))
    }
}

/// Processing iff `cpu/xc0 > bw/xn0`; equality goes to bandwidth.
pub fn identified_resource(demand: ResourceVector, basis: NormalizationBasis) -> ResourceType {
    let x_c = demand.cpu / basis.xc0;
    let x_n = demand.bw / basis.xn0;
    if x_c > x_n {
        ResourceType::Processing
    } else {
        ResourceType::Bandwidth
    }
}

/// Among `(center, available)` candidates, the one with the least available
/// `kind`. Exact ties are broken uniformly with `rng`; the rng is only
/// touched when a tie exists.
pub fn least_available<R, I>(candidates: I, kind: ResourceType, rng: &mut R) -> Option<CenterId>
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = (CenterId, ResourceVector)>,
{
    let mut best = f64::INFINITY;
    let mut tied: Vec<CenterId> = Vec::new();
    for (id, avail) in candidates {
        let amount = avail.get(kind);
        if amount < best {
            best = amount;
            tied.clear();
            tied.push(id);
        } else if amount == best {
            tied.push(id);
        }
    }
    match tied.len() {
        0 => None,
        1 => Some(tied[0]),
        n => Some(tied[rng.random_range(0..n)]),
    }
}

/// Method II: best fit on the identified resource among feasible centers.
pub fn select_center_method2<R: Rng + ?Sized>(
    centers: &[Center],
    demand: ResourceVector,
    basis: NormalizationBasis,
    rng: &mut R,
) -> Option<CenterId> {
    let kind = identified_resource(demand, basis);
    least_available(
        centers
            .iter()
            .filter(|c| c.fits(&demand))
            .map(|c| (c.id(), c.available())),
        kind,
        rng,
    )
}

/// Best fit on processing ability alone; still requires both types to fit.
pub fn select_center_cpu_best_fit<R: Rng + ?Sized>(
    centers: &[Center],
    demand: ResourceVector,
    rng: &mut R,
) -> Option<CenterId> {
    least_available(
        centers
            .iter()
            .filter(|c| c.fits(&demand))
            .map(|c| (c.id(), c.available())),
        ResourceType::Processing,
        rng,
    )
}

/// Which center Method I probes first for the next request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundRobinCursor {
    next_first_check: usize,
    centers: usize,
}

impl RoundRobinCursor {
    pub fn new(centers: usize) -> Self {
        assert!(centers > 0, "round robin over zero centers");
        Self {
            next_first_check: 0,
            centers,
        }
    }

    pub fn starting_at(first: CenterId, centers: usize) -> Self {
        assert!(first.0 < centers);
        Self {
            next_first_check: first.0,
            centers,
        }
    }

    pub fn next_first_check(&self) -> CenterId {
        CenterId(self.next_first_check)
    }
}

/// Method I. The cursor moves on by one per request whatever the outcome.
pub fn select_center_method1(
    centers: &[Center],
    demand: ResourceVector,
    cursor: &mut RoundRobinCursor,
) -> Option<CenterId> {
    let k = cursor.centers;
    debug_assert_eq!(k, centers.len());
    let first = cursor.next_first_check;
    cursor.next_first_check = (first + 1) % k;
    (0..k)
        .map(|offset| &centers[(first + offset) % k])
        .find(|c| c.fits(&demand))
        .map(Center::id)
}
