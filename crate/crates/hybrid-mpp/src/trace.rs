//! Trace files: one header block, one record per line.
//!
//! ```text
//! #hmpp-trace v1
//! #model_hash 3f5a...
//! #seed 42
//! #rng splitmix64-v1
//! #horizon 1000
//! #status completed
//! #origin 0
//! #fields time event state segment
//! -1 0 1 initial
//! 0.5235092839021 0 1 event
//! ```
//!
//! Times and continuous states are written with the shortest decimal
//! representation that parses back to the identical binary value, so a
//! parsed trace reproduces the trajectory bit for bit. Continuous states
//! always carry a decimal point or exponent, which is how they are told
//! apart from discrete state indices on read.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::RNG_ID;
use crate::simulator::{SimResult, SimStatus};
use crate::types::{EventRecord, Mark, StateValue, Trajectory, TrajectoryError};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing header field {0}")]
    MissingHeader(&'static str),
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    /// The trace was produced by a different model than the one provided.
    #[error("model hash mismatch: trace has {trace_hash}, config gives {config_hash}")]
    HashMismatch {
        trace_hash: String,
        config_hash: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub version: u32,
    pub model_hash: String,
    pub seed: u64,
    pub rng_id: String,
    pub horizon: f64,
    pub status: SimStatus,
}

impl TraceHeader {
    pub fn for_result(result: &SimResult, model_hash: String) -> Self {
        Self {
            version: TRACE_VERSION,
            model_hash,
            seed: result.seed,
            rng_id: RNG_ID.to_string(),
            horizon: result.horizon,
            status: result.status,
        }
    }

    /// Fail unless the trace was produced by the model with this hash.
    pub fn verify_hash(&self, config_hash: &str) -> Result<(), TraceError> {
        if self.model_hash != config_hash {
            return Err(TraceError::HashMismatch {
                trace_hash: self.model_hash.clone(),
                config_hash: config_hash.to_string(),
            });
        }
        Ok(())
    }
}

fn status_from_str(s: &str) -> Option<SimStatus> {
    match s {
        "completed" => Some(SimStatus::Completed),
        "explosion-suspected" => Some(SimStatus::ExplosionSuspected),
        "candidate-budget-exhausted" => Some(SimStatus::CandidateBudgetExhausted),
        _ => None,
    }
}

/// Render a trajectory with its header as a trace document.
pub fn trace_to_string(header: &TraceHeader, traj: &Trajectory) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#hmpp-trace v{}", header.version);
    let _ = writeln!(out, "#model_hash {}", header.model_hash);
    let _ = writeln!(out, "#seed {}", header.seed);
    let _ = writeln!(out, "#rng {}", header.rng_id);
    let _ = writeln!(out, "#horizon {}", header.horizon);
    let _ = writeln!(out, "#status {}", header.status.as_str());
    let _ = writeln!(out, "#origin {}", traj.origin_state());
    let _ = writeln!(out, "#fields time event state segment");
    for rec in traj.initial() {
        let _ = writeln!(out, "{} {} {} initial", rec.time, rec.mark.event, rec.mark.state);
    }
    for rec in traj.events() {
        let _ = writeln!(out, "{} {} {} event", rec.time, rec.mark.event, rec.mark.state);
    }
    out
}

fn parse_state(token: &str, line: usize) -> Result<StateValue, TraceError> {
    let parse_err = |message: String| TraceError::Parse { line, message };
    if token.contains(['.', 'e', 'E']) || token == "inf" || token == "-inf" || token == "NaN" {
        let v = f64::from_str(token)
            .map_err(|e| parse_err(format!("bad continuous state {token:?}: {e}")))?;
        Ok(StateValue::Continuous(v))
    } else {
        let i = usize::from_str(token)
            .map_err(|e| parse_err(format!("bad state index {token:?}: {e}")))?;
        Ok(StateValue::Discrete(i))
    }
}

/// Parse a trace document back into its header and trajectory.
pub fn trace_from_str(text: &str) -> Result<(TraceHeader, Trajectory), TraceError> {
    let mut version = None;
    let mut model_hash = None;
    let mut seed = None;
    let mut rng_id = None;
    let mut horizon = None;
    let mut status = None;
    let mut origin = None;
    let mut initial = Vec::new();
    let mut events = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| TraceError::Parse {
            line: line_no,
            message,
        };
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.splitn(2, ' ');
            let key = parts.next().unwrap_or("");
            let value = parts.next().unwrap_or("").trim();
            match key {
                "hmpp-trace" => {
                    let v = value
                        .strip_prefix('v')
                        .and_then(|v| u32::from_str(v).ok())
                        .ok_or_else(|| TraceError::UnsupportedVersion(value.to_string()))?;
                    if v != TRACE_VERSION {
                        return Err(TraceError::UnsupportedVersion(value.to_string()));
                    }
                    version = Some(v);
                }
                "model_hash" => model_hash = Some(value.to_string()),
                "seed" => {
                    seed = Some(
                        u64::from_str(value)
                            .map_err(|e| parse_err(format!("bad seed: {e}")))?,
                    )
                }
                "rng" => rng_id = Some(value.to_string()),
                "horizon" => {
                    horizon = Some(
                        f64::from_str(value)
                            .map_err(|e| parse_err(format!("bad horizon: {e}")))?,
                    )
                }
                "status" => {
                    status = Some(
                        status_from_str(value)
                            .ok_or_else(|| parse_err(format!("unknown status {value:?}")))?,
                    )
                }
                "origin" => origin = Some(parse_state(value, line_no)?),
                "fields" => {}
                other => return Err(parse_err(format!("unknown header key {other:?}"))),
            }
            continue;
        }
        let mut fields = line.split_whitespace();
        let time = fields
            .next()
            .and_then(|t| f64::from_str(t).ok())
            .ok_or_else(|| parse_err("bad or missing time field".into()))?;
        let event = fields
            .next()
            .and_then(|t| usize::from_str(t).ok())
            .ok_or_else(|| parse_err("bad or missing event field".into()))?;
        let state = parse_state(
            fields
                .next()
                .ok_or_else(|| parse_err("missing state field".into()))?,
            line_no,
        )?;
        let segment = fields
            .next()
            .ok_or_else(|| parse_err("missing segment field".into()))?;
        if fields.next().is_some() {
            return Err(parse_err("trailing fields on record line".into()));
        }
        let rec = EventRecord::new(time, Mark::new(event, state));
        match segment {
            "initial" => initial.push(rec),
            "event" => events.push(rec),
            other => return Err(parse_err(format!("unknown segment {other:?}"))),
        }
    }

    version.ok_or(TraceError::MissingHeader("hmpp-trace"))?;
    let header = TraceHeader {
        version: TRACE_VERSION,
        model_hash: model_hash.ok_or(TraceError::MissingHeader("model_hash"))?,
        seed: seed.ok_or(TraceError::MissingHeader("seed"))?,
        rng_id: rng_id.ok_or(TraceError::MissingHeader("rng"))?,
        horizon: horizon.ok_or(TraceError::MissingHeader("horizon"))?,
        status: status.ok_or(TraceError::MissingHeader("status"))?,
    };
    let origin = origin.ok_or(TraceError::MissingHeader("origin"))?;
    let traj = Trajectory::new(initial, events, origin)?;
    Ok((header, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header() -> TraceHeader {
        TraceHeader {
            version: TRACE_VERSION,
            model_hash: "abc123".into(),
            seed: 42,
            rng_id: RNG_ID.into(),
            horizon: 1000.0,
            status: SimStatus::Completed,
        }
    }

    #[test]
    fn round_trip_simple() {
        let traj = Trajectory::new(
            vec![EventRecord::new(-1.0, Mark::new(0, StateValue::Discrete(1)))],
            vec![EventRecord::new(
                0.523_509_283_902_1,
                Mark::new(1, StateValue::Discrete(0)),
            )],
            StateValue::Discrete(0),
        )
        .unwrap();
        let text = trace_to_string(&header(), &traj);
        let (h, t) = trace_from_str(&text).unwrap();
        assert_eq!(h, header());
        assert_eq!(t, traj);
    }

    #[test]
    fn continuous_states_round_trip() {
        let traj = Trajectory::new(
            vec![],
            vec![
                EventRecord::new(1.0, Mark::new(0, StateValue::Continuous(3.0))),
                EventRecord::new(2.0, Mark::new(0, StateValue::Continuous(-1.25e-7))),
            ],
            StateValue::Continuous(0.0),
        )
        .unwrap();
        let text = trace_to_string(&header(), &traj);
        let (_, t) = trace_from_str(&text).unwrap();
        assert_eq!(t, traj);
    }

    #[test]
    fn hash_mismatch_detected() {
        let h = header();
        assert!(h.verify_hash("abc123").is_ok());
        assert!(matches!(
            h.verify_hash("other"),
            Err(TraceError::HashMismatch { .. })
        ));
    }

    #[test]
    fn corrupted_segment_rejected() {
        let traj = Trajectory::empty(StateValue::Discrete(0));
        let mut text = trace_to_string(&header(), &traj);
        text.push_str("1.0 0 0 bogus\n");
        assert!(matches!(
            trace_from_str(&text),
            Err(TraceError::Parse { .. })
        ));
    }

    #[test]
    fn unordered_times_rejected() {
        let text = "\
#hmpp-trace v1
#model_hash x
#seed 1
#rng splitmix64-v1
#horizon 10
#status completed
#origin 0
#fields time event state segment
2.0 0 0 event
1.0 0 0 event
";
        assert!(matches!(
            trace_from_str(text),
            Err(TraceError::Trajectory(_))
        ));
    }

    proptest! {
        // Full-precision round trip: arbitrary finite times and states
        // survive the decimal representation bit for bit.
        #[test]
        fn round_trip_preserves_bits(
            times in proptest::collection::vec(-1e12f64..1e12, 1..40),
            states in proptest::collection::vec(proptest::num::f64::NORMAL, 1..40),
        ) {
            let mut times = times;
            times.sort_by(f64::total_cmp);
            times.dedup();
            let records: Vec<EventRecord> = times
                .iter()
                .zip(states.iter().cycle())
                .map(|(t, x)| EventRecord::new(*t, Mark::new(0, StateValue::Continuous(*x))))
                .collect();
            let split = records.partition_point(|r| r.time <= 0.0);
            let traj = Trajectory::new(
                records[..split].to_vec(),
                records[split..].to_vec(),
                StateValue::Continuous(0.0),
            )
            .unwrap();
            let text = trace_to_string(&header(), &traj);
            let (_, parsed) = trace_from_str(&text).unwrap();
            prop_assert_eq!(parsed, traj);
        }
    }
}
