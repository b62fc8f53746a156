//! Trajectories, marks, and histories.
//!
//! A marked point process realization is stored as a [`Trajectory`]: a
//! time-ordered list of event records on `(-inf, 0]` (the initial
//! condition) and `(0, T]` (simulated events), with a strictly increasing
//! ground sequence of times. Two events can never share a time; the
//! constructors reject ties instead of merging them, because a tie
//! signals corrupted input or a replay bug, never a legitimate sample.
//!
//! A [`HistoryView`] is a read-only window onto a trajectory up to a cut
//! time. The state of the system at the cut is the state coordinate of
//! the most recent record before it ([`HistoryView::state_functional`]).
//!
//! ```
//! use hybrid_mpp::types::{EventRecord, Mark, StateValue, Trajectory};
//!
//! let traj = Trajectory::new(
//!     vec![EventRecord::new(-1.0, Mark::new(0, StateValue::Discrete(1)))],
//!     vec![EventRecord::new(0.5, Mark::new(1, StateValue::Discrete(0)))],
//!     StateValue::Discrete(0),
//! )
//! .unwrap();
//!
//! // Before any record the state is the origin state.
//! assert_eq!(traj.history(-2.0).state_functional(), StateValue::Discrete(0));
//! // The cut excludes a record at exactly the cut time.
//! assert_eq!(traj.history(0.5).state_functional(), StateValue::Discrete(1));
//! assert_eq!(traj.history(0.6).state_functional(), StateValue::Discrete(0));
//! ```

use thiserror::Error;

/// Index of an event type in `[0, d)`.
pub type EventIndex = usize;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    /// Record times must be strictly increasing; equal times violate
    /// ground-measure simpleness.
    #[error("record times are not strictly increasing at index {index} (time {time})")]
    NonIncreasingTimes { index: usize, time: f64 },
    #[error("non-finite record time at index {index}")]
    NonFiniteTime { index: usize },
    #[error("initial-condition record at positive time {time}")]
    InitialRecordPositive { time: f64 },
    #[error("event record at non-positive time {time}")]
    EventRecordNonPositive { time: f64 },
    #[error("non-finite continuous state value")]
    NonFiniteState,
}

/// System state: an index into a finite state space, or a real value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateValue {
    Discrete(usize),
    Continuous(f64),
}

impl StateValue {
    pub fn is_finite(&self) -> bool {
        match self {
            StateValue::Discrete(_) => true,
            StateValue::Continuous(x) => x.is_finite(),
        }
    }

    /// Discrete index, if this is a discrete state.
    pub fn discrete(&self) -> Option<usize> {
        match self {
            StateValue::Discrete(i) => Some(*i),
            StateValue::Continuous(_) => None,
        }
    }

    /// Real value, if this is a continuous state.
    pub fn continuous(&self) -> Option<f64> {
        match self {
            StateValue::Discrete(_) => None,
            StateValue::Continuous(x) => Some(*x),
        }
    }
}

impl std::fmt::Display for StateValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateValue::Discrete(i) => write!(f, "{i}"),
            // Debug formatting keeps a decimal point or exponent, which is
            // what distinguishes a continuous state from a discrete index
            // when a trace is parsed back.
            StateValue::Continuous(x) => write!(f, "{x:?}"),
        }
    }
}

/// Mark of an event: the event type together with the post-event state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mark {
    pub event: EventIndex,
    pub state: StateValue,
}

impl Mark {
    pub fn new(event: EventIndex, state: StateValue) -> Self {
        Self { event, state }
    }
}

/// A single atom `(t, m)` of a realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub mark: Mark,
}

impl EventRecord {
    pub fn new(time: f64, mark: Mark) -> Self {
        Self { time, mark }
    }
}

/// A realization of a marked point process: finitely many records on
/// `(-inf, 0]` and on `(0, T]`, strictly increasing in time across both
/// segments, plus the origin state used before any record exists.
///
/// Immutable after construction; shared freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    initial: Vec<EventRecord>,
    events: Vec<EventRecord>,
    origin_state: StateValue,
}

fn check_ordered(records: &[EventRecord], prev: &mut f64) -> Result<(), TrajectoryError> {
    for (index, rec) in records.iter().enumerate() {
        if !rec.time.is_finite() {
            return Err(TrajectoryError::NonFiniteTime { index });
        }
        if !rec.mark.state.is_finite() {
            return Err(TrajectoryError::NonFiniteState);
        }
        if rec.time <= *prev {
            return Err(TrajectoryError::NonIncreasingTimes {
                index,
                time: rec.time,
            });
        }
        *prev = rec.time;
    }
    Ok(())
}

impl Trajectory {
    /// Build a trajectory, validating ordering and the split at time zero.
    pub fn new(
        initial: Vec<EventRecord>,
        events: Vec<EventRecord>,
        origin_state: StateValue,
    ) -> Result<Self, TrajectoryError> {
        if let Some(rec) = initial.iter().find(|r| r.time > 0.0) {
            return Err(TrajectoryError::InitialRecordPositive { time: rec.time });
        }
        if let Some(rec) = events.iter().find(|r| r.time <= 0.0) {
            return Err(TrajectoryError::EventRecordNonPositive { time: rec.time });
        }
        if !origin_state.is_finite() {
            return Err(TrajectoryError::NonFiniteState);
        }
        let mut prev = f64::NEG_INFINITY;
        check_ordered(&initial, &mut prev)?;
        check_ordered(&events, &mut prev)?;
        Ok(Self {
            initial,
            events,
            origin_state,
        })
    }

    /// Empty trajectory with the given origin state.
    pub fn empty(origin_state: StateValue) -> Self {
        Self {
            initial: Vec::new(),
            events: Vec::new(),
            origin_state,
        }
    }

    /// Rebuild a trajectory from an enumeration `(t_n, m_n)`, splitting at
    /// time zero. Fails on non-increasing times (ground simpleness).
    pub fn from_enumeration(
        pairs: Vec<(f64, Mark)>,
        origin_state: StateValue,
    ) -> Result<Self, TrajectoryError> {
        let split = pairs.partition_point(|(t, _)| *t <= 0.0);
        let (neg, pos) = pairs.split_at(split);
        let to_rec = |(t, m): &(f64, Mark)| EventRecord::new(*t, *m);
        Trajectory::new(
            neg.iter().map(to_rec).collect(),
            pos.iter().map(to_rec).collect(),
            origin_state,
        )
    }

    /// The enumeration `(t_n, m_n)` of all records in time order.
    pub fn to_enumeration(&self) -> Vec<(f64, Mark)> {
        self.records().map(|r| (r.time, r.mark)).collect()
    }

    /// Records on `(-inf, 0]`, the initial condition.
    pub fn initial(&self) -> &[EventRecord] {
        &self.initial
    }

    /// Records on `(0, T]`, the simulated segment.
    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn origin_state(&self) -> StateValue {
        self.origin_state
    }

    /// All records in time order.
    pub fn records(&self) -> impl Iterator<Item = &EventRecord> {
        self.initial.iter().chain(self.events.iter())
    }

    pub fn len(&self) -> usize {
        self.initial.len() + self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial.is_empty() && self.events.is_empty()
    }

    /// History strictly before `cut`: a record at exactly `cut` is
    /// excluded.
    pub fn history(&self, cut: f64) -> HistoryView<'_> {
        HistoryView::strictly_before(&self.initial, &self.events, self.origin_state, cut)
    }

    /// History through `cut`: a record at exactly `cut` is included. Used
    /// when a bound must account for an event that just fired.
    pub fn history_through(&self, cut: f64) -> HistoryView<'_> {
        HistoryView::through(&self.initial, &self.events, self.origin_state, cut)
    }

    /// Full history (cut at +inf).
    pub fn full_history(&self) -> HistoryView<'_> {
        self.history(f64::INFINITY)
    }
}

/// Read-only window onto trajectory records before a cut time.
///
/// Borrowing raw slices rather than a `Trajectory` lets the simulator
/// build views over its working buffers while a run is still growing.
#[derive(Debug, Clone, Copy)]
pub struct HistoryView<'a> {
    initial: &'a [EventRecord],
    events: &'a [EventRecord],
    origin_state: StateValue,
    cut: f64,
    include_cut: bool,
}

impl<'a> HistoryView<'a> {
    /// View of all records with `time < cut`.
    pub fn strictly_before(
        initial: &'a [EventRecord],
        events: &'a [EventRecord],
        origin_state: StateValue,
        cut: f64,
    ) -> Self {
        Self {
            initial,
            events,
            origin_state,
            cut,
            include_cut: false,
        }
    }

    /// View of all records with `time <= cut`.
    pub fn through(
        initial: &'a [EventRecord],
        events: &'a [EventRecord],
        origin_state: StateValue,
        cut: f64,
    ) -> Self {
        Self {
            initial,
            events,
            origin_state,
            cut,
            include_cut: true,
        }
    }

    pub fn cut(&self) -> f64 {
        self.cut
    }

    pub fn origin_state(&self) -> StateValue {
        self.origin_state
    }

    #[inline]
    fn admits(&self, time: f64) -> bool {
        if self.include_cut {
            time <= self.cut
        } else {
            time < self.cut
        }
    }

    /// Records inside the view, in time order.
    pub fn records(&self) -> impl Iterator<Item = &'a EventRecord> + '_ {
        self.initial
            .iter()
            .chain(self.events.iter())
            .take_while(|r| self.admits(r.time))
    }

    /// Most recent record inside the view.
    pub fn last_record(&self) -> Option<&'a EventRecord> {
        let in_events = self.events.partition_point(|r| self.admits(r.time));
        if in_events > 0 {
            return Some(&self.events[in_events - 1]);
        }
        let in_initial = self.initial.partition_point(|r| self.admits(r.time));
        if in_initial > 0 {
            return Some(&self.initial[in_initial - 1]);
        }
        None
    }

    /// The state functional: the state coordinate of the most recent
    /// record before the cut, or the origin state when none exists. Total
    /// and left-continuous in the cut time.
    pub fn state_functional(&self) -> StateValue {
        self.last_record()
            .map(|r| r.mark.state)
            .unwrap_or(self.origin_state)
    }

    /// Number of records in `window ∩ view`, where the window is the
    /// half-open interval `(window.0, window.1]`, optionally restricted to
    /// the given event types.
    pub fn count_events(&self, window: (f64, f64), event_filter: Option<&[EventIndex]>) -> usize {
        debug_assert!(window.0 <= window.1, "window bounds out of order");
        self.records()
            .filter(|r| r.time > window.0 && r.time <= window.1)
            .filter(|r| match event_filter {
                Some(set) => set.contains(&r.mark.event),
                None => true,
            })
            .count()
    }

    /// Total number of records in the view.
    pub fn count(&self) -> usize {
        self.records().count()
    }
}
