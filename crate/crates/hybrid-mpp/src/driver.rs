//! Lazy realization of the driving Poisson measure.
//!
//! The simulator's source of randomness is a Poisson measure on
//! `time x type x height` with unit rate in the height direction. It is
//! never materialized: between bound refreshes, its atoms under the
//! per-type strips `[0, weight(e) * B(e))` are exactly a homogeneous
//! candidate stream, and that stream is what [`DriverState`] produces.
//!
//! Concretely, with strips `s_e = weight(e) * B(e)` and total `S`:
//! inter-candidate gaps are `Exp(S)`, the type is chosen with probability
//! `s_e / S`, and the height is uniform on `[0, s_e)`. A candidate
//! `(t, e, u)` is an event of a process with intensity `lambda_bar`
//! exactly when `u < weight(e) * lambda_bar(e | history at t)`, which is
//! the thinning step the simulator applies.
//!
//! Draw order per candidate is fixed (gap, type, height) so replay is
//! bit-exact.

use thiserror::Error;

use crate::rng::SimRng;
use crate::types::EventIndex;

#[derive(Debug, Error, PartialEq)]
pub enum DriverError {
    /// All strips are zero: no further candidates can ever be produced
    /// until the caller refreshes the bounds. With a zero constant rate
    /// this correctly means the process is extinct.
    #[error("total majorant is zero; candidate stream is empty")]
    ZeroMajorant,
    #[error("majorant produced a non-finite strip")]
    NonFiniteMajorant,
}

/// Per-type candidate strips `weight(e) * B(e)` with their cumulative sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Majorant {
    strips: Vec<f64>,
    total: f64,
}

impl Majorant {
    /// Build strips from per-type bounds and event weights.
    pub fn new(bounds: &[f64], weights: &[f64]) -> Result<Self, DriverError> {
        debug_assert_eq!(bounds.len(), weights.len());
        let strips: Vec<f64> = bounds
            .iter()
            .zip(weights)
            .map(|(b, w)| b * w)
            .collect();
        if strips.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(DriverError::NonFiniteMajorant);
        }
        let total = strips.iter().sum();
        Ok(Self { strips, total })
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn strip(&self, e: EventIndex) -> f64 {
        self.strips[e]
    }
}

/// Candidate atom of the driving measure under the active strips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub time: f64,
    pub event: EventIndex,
    /// Height within the chosen type's strip, uniform on
    /// `[0, weight(e) * B(e))`.
    pub height: f64,
}

/// Single-consumer candidate stream. The cursor only moves forward;
/// identical seeds yield identical streams.
#[derive(Debug, Clone)]
pub struct DriverState {
    rng: SimRng,
    cursor: f64,
    draws: u64,
}

impl DriverState {
    pub fn new(seed_stream: SimRng) -> Self {
        Self {
            rng: seed_stream,
            cursor: 0.0,
            draws: 0,
        }
    }

    pub fn cursor(&self) -> f64 {
        self.cursor
    }

    /// Number of candidates drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Next candidate under the given strips; advances the cursor.
    pub fn next_candidate(&mut self, majorant: &Majorant) -> Result<Candidate, DriverError> {
        if !(majorant.total > 0.0) {
            return Err(DriverError::ZeroMajorant);
        }
        let gap = self.rng.exponential(majorant.total);
        self.cursor += gap;
        let r = self.rng.uniform() * majorant.total;
        let mut acc = 0.0;
        let mut event = majorant.strips.len() - 1;
        for (e, s) in majorant.strips.iter().enumerate() {
            acc += s;
            if r < acc {
                event = e;
                break;
            }
        }
        let height = self.rng.uniform() * majorant.strips[event];
        self.draws += 1;
        Ok(Candidate {
            time: self.cursor,
            event,
            height,
        })
    }

    /// Turn a fresh driver into a candidate source shared by the two
    /// consumers of a domination coupling. Both consumers must be driven
    /// in lockstep from one loop: each candidate is drawn once, under the
    /// dominating model's strips, and presented to both.
    ///
    /// Requires a fresh driver (cursor at zero) because a coupling is only
    /// meaningful when both consumers observe the whole stream.
    pub fn fork_for_coupling(self) -> SharedCandidates {
        assert_eq!(
            self.cursor, 0.0,
            "coupling requires a fresh driver; candidates were already consumed"
        );
        SharedCandidates { driver: self }
    }
}

/// Candidate source consumed in lockstep by both sides of a coupling.
///
/// Produces exactly the stream the underlying driver would produce, so a
/// single consumer sees no difference from an unforked run.
#[derive(Debug, Clone)]
pub struct SharedCandidates {
    driver: DriverState,
}

impl SharedCandidates {
    pub fn next_candidate(&mut self, majorant: &Majorant) -> Result<Candidate, DriverError> {
        self.driver.next_candidate(majorant)
    }

    pub fn cursor(&self) -> f64 {
        self.driver.cursor()
    }

    pub fn draws(&self) -> u64 {
        self.driver.draws()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn driver(seed: u64) -> DriverState {
        DriverState::new(SimRng::new(seed))
    }

    #[test]
    fn mean_gap_matches_total_rate() {
        let majorant = Majorant::new(&[1.0], &[1.0]).unwrap();
        let mut drv = driver(3);
        let n = 1_000_000u64;
        let mut prev = 0.0;
        let mut sum = 0.0;
        for _ in 0..n {
            let c = drv.next_candidate(&majorant).unwrap();
            sum += c.time - prev;
            prev = c.time;
        }
        let mean = sum / n as f64;
        // 5 sigma band for the mean of Exp(1) gaps.
        assert!((mean - 1.0).abs() < 0.005, "mean gap {mean}");
    }

    #[test]
    fn type_frequencies_follow_strips() {
        let majorant = Majorant::new(&[1.0, 3.0], &[1.0, 1.0]).unwrap();
        let mut drv = driver(17);
        let n = 100_000;
        let mut type0 = 0;
        for _ in 0..n {
            let c = drv.next_candidate(&majorant).unwrap();
            assert!(c.height < majorant.strip(c.event));
            if c.event == 0 {
                type0 += 1;
            }
        }
        let freq = type0 as f64 / n as f64;
        assert!((freq - 0.25).abs() < 0.01, "type-0 freq {freq}");
    }

    #[test]
    fn replay_is_bit_identical() {
        let majorant = Majorant::new(&[0.7, 2.1], &[1.0, 0.5]).unwrap();
        let mut a = driver(42);
        let mut b = driver(42);
        for _ in 0..10_000 {
            assert_eq!(
                a.next_candidate(&majorant).unwrap(),
                b.next_candidate(&majorant).unwrap()
            );
        }
    }

    #[test]
    fn zero_majorant_is_an_error() {
        let majorant = Majorant::new(&[0.0], &[1.0]).unwrap();
        assert_eq!(
            driver(1).next_candidate(&majorant).unwrap_err(),
            DriverError::ZeroMajorant
        );
    }

    #[test]
    fn forked_source_reproduces_the_unforked_stream() {
        let majorant = Majorant::new(&[1.5], &[1.0]).unwrap();
        let mut plain = driver(7);
        let mut forked = driver(7).fork_for_coupling();
        for _ in 0..1000 {
            assert_eq!(
                plain.next_candidate(&majorant).unwrap(),
                forked.next_candidate(&majorant).unwrap()
            );
        }
    }

    #[test]
    fn thinning_fixed_rate_yields_poisson_rate() {
        // Accept candidates with height < lambda for a constant lambda
        // below the bound: accepted points form a Poisson process of rate
        // lambda * weight.
        let weight = 2.0;
        let bound = 3.0;
        let lambda = 1.3;
        let majorant = Majorant::new(&[bound], &[weight]).unwrap();
        let mut drv = driver(99);
        let horizon = 20_000.0;
        let mut accepted = 0u64;
        loop {
            let c = drv.next_candidate(&majorant).unwrap();
            if c.time > horizon {
                break;
            }
            if c.height < weight * lambda {
                accepted += 1;
            }
        }
        let rate = accepted as f64 / horizon;
        let expect = lambda * weight;
        let sigma = (expect / horizon).sqrt();
        assert!(
            (rate - expect).abs() < 3.0 * sigma,
            "rate {rate}, expected {expect}"
        );
    }
}
