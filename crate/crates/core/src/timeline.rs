//! Committed future free capacity, per center.
//!
//! Every running allocation and every reservation for a delayed start is a
//! booking `[start, end)` of some demand. Free capacity at time `t` is the
//! center capacity minus all bookings covering `t`, which makes it a step
//! function with breakpoints only at booking starts and ends.

use rand::Rng;
use thiserror::Error;

use crate::policy::{identified_resource, least_available, NormalizationBasis};
use crate::resource::{CenterId, RequestId, ResourceVector, Time};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimelineError {
    #[error("{center}: booking {demand} over [{start}, {end}) exceeds free capacity {free}")]
    Infeasible {
        center: CenterId,
        start: Time,
        end: Time,
        demand: ResourceVector,
        free: ResourceVector,
    },
    #[error("{0} does not exist")]
    UnknownCenter(CenterId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Booking {
    pub request: RequestId,
    pub start: Time,
    pub end: Time,
    pub demand: ResourceVector,
}

impl Booking {
    fn covers(&self, t: Time) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CenterTimeline {
    capacity: ResourceVector,
    bookings: Vec<Booking>,
}

impl CenterTimeline {
    fn free_at(&self, t: Time) -> ResourceVector {
        self.capacity
            - self
                .bookings
                .iter()
                .filter(|b| b.covers(t))
                .map(|b| b.demand)
                .sum()
    }

    /// Componentwise minimum of free capacity over `[from, to)`.
    fn min_free(&self, from: Time, to: Time) -> ResourceVector {
        let mut min = self.free_at(from);
        for b in &self.bookings {
            if b.start > from && b.start < to {
                let f = self.free_at(b.start);
                min.cpu = min.cpu.min(f.cpu);
                min.bw = min.bw.min(f.bw);
            }
        }
        min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvailabilityTimeline {
    centers: Vec<CenterTimeline>,
}

impl AvailabilityTimeline {
    pub fn new<I>(capacities: I) -> Self
    where
        I: IntoIterator<Item = ResourceVector>,
    {
        Self {
            centers: capacities
                .into_iter()
                .map(|capacity| CenterTimeline {
                    capacity,
                    bookings: Vec::new(),
                })
                .collect(),
        }
    }

    pub fn centers(&self) -> usize {
        self.centers.len()
    }

    pub fn bookings(&self, center: CenterId) -> &[Booking] {
        &self.centers[center.0].bookings
    }

    pub fn free_at(&self, center: CenterId, t: Time) -> ResourceVector {
        self.centers[center.0].free_at(t)
    }

    /// True iff `demand` fits in `center` at every instant of `[start, start + hold)`.
    pub fn can_host(
        &self,
        center: CenterId,
        demand: ResourceVector,
        start: Time,
        hold: Time,
    ) -> bool {
        demand.fits_within(&self.centers[center.0].min_free(start, start + hold))
    }

    /// The free-capacity step function of `center` from `from` on, as
    /// `(time, free)` pairs; each value holds until the next pair's time.
    pub fn steps(&self, center: CenterId, from: Time) -> Vec<(Time, ResourceVector)> {
        let tl = &self.centers[center.0];
        let mut times: Vec<Time> = std::iter::once(from)
            .chain(tl.bookings.iter().flat_map(|b| [b.start, b.end]))
            .filter(|&t| t >= from)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut steps: Vec<(Time, ResourceVector)> = Vec::with_capacity(times.len());
        for t in times {
            let free = tl.free_at(t);
            if steps.last().is_none_or(|&(_, prev)| prev != free) {
                steps.push((t, free));
            }
        }
        steps
    }

    /// Earliest `t` in `[not_before, latest_start]` at which some center can
    /// host `demand` for `hold`. When several centers can, the one with the
    /// least free capacity of the identified resource at `t` is chosen, with
    /// exact ties broken by `rng`.
    pub fn earliest_start<R: Rng + ?Sized>(
        &self,
        demand: ResourceVector,
        hold: Time,
        not_before: Time,
        latest_start: Time,
        basis: NormalizationBasis,
        rng: &mut R,
    ) -> Option<(CenterId, Time)> {
        if not_before > latest_start {
            return None;
        }
        // Free capacity only rises at booking ends, so the earliest feasible
        // start is either `not_before` or one of those ends.
        let mut candidates: Vec<Time> = std::iter::once(not_before)
            .chain(
                self.centers
                    .iter()
                    .flat_map(|c| c.bookings.iter().map(|b| b.end))
                    .filter(|&t| t > not_before && t <= latest_start),
            )
            .collect();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();

        let kind = identified_resource(demand, basis);
        candidates.into_iter().find_map(|t| {
            let feasible = (0..self.centers.len())
                .map(CenterId)
                .filter(|&c| self.can_host(c, demand, t, hold))
                .map(|c| (c, self.free_at(c, t)));
            least_available(feasible, kind, rng).map(|c| (c, t))
        })
    }

    /// Books `demand` on `center` over `[start, start + hold)`.
    pub fn commit(
        &mut self,
        center: CenterId,
        request: RequestId,
        start: Time,
        hold: Time,
        demand: ResourceVector,
    ) -> Result<(), TimelineError> {
        let tl = self
            .centers
            .get_mut(center.0)
            .ok_or(TimelineError::UnknownCenter(center))?;
        let end = start + hold;
        let free = tl.min_free(start, end);
        if !demand.fits_within(&free) {
            return Err(TimelineError::Infeasible {
                center,
                start,
                end,
                demand,
                free,
            });
        }
        tl.bookings.push(Booking {
            request,
            start,
            end,
            demand,
        });
        Ok(())
    }

    /// Drops the booking of `request` on `center`, returning it.
    pub fn retire(&mut self, center: CenterId, request: RequestId) -> Option<Booking> {
        let bookings = &mut self.centers.get_mut(center.0)?.bookings;
        let pos = bookings.iter().position(|b| b.request == request)?;
        Some(bookings.swap_remove(pos))
    }
}
