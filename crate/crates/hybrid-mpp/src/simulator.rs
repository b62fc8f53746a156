//! The event loop: exact simulation by thinning.
//!
//! A run iterates candidate atoms of the driving measure under per-type
//! bounds, accepts a candidate `(t, e, u)` exactly when
//! `u < weight(e) * lambda_bar(e | history at t)`, samples the post-event
//! state from the transition function, and appends the record. Bounds are
//! refreshed only at accepted events; for monotone-decaying kernels the
//! intensity between events only decays, so the refreshed bound stays
//! valid for the whole inter-event interval and no candidate volume is
//! wasted re-bounding.
//!
//! The state coordinate of a mark is never drawn by the driver. Because
//! the transition function integrates to one in the state variable,
//! drawing the event type by thinning against `weight(e) * lambda_bar`
//! and then the state from `phi(. | e, current state)` reproduces the
//! product-form mark intensity exactly; this disintegration is the
//! correctness core of the whole loop.
//!
//! Identical `(model, config, seed)` produce bit-identical trajectories:
//! the candidate stream, the acceptance tests, and the state draws are
//! all deterministic functions of the seed.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::driver::{Candidate, DriverError, DriverState, Majorant};
use crate::functionals::{
    AlphaTensor, BirthRate, EventFunctional, FunctionalError, Kernel, ModelSpec, StateRates,
};
use crate::rng::SimRng;
use crate::types::{
    EventIndex, EventRecord, HistoryView, Mark, StateValue, Trajectory, TrajectoryError,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] FunctionalError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    /// The exact intensity exceeded the declared bound mid-interval: the
    /// model's majorant declaration is wrong. Aborting is the only honest
    /// response, since every accepted event after this point would be
    /// drawn from the wrong law.
    #[error(
        "intensity {intensity} exceeds declared bound {bound} for type {event} at time {time}"
    )]
    MajorantViolation {
        time: f64,
        event: EventIndex,
        intensity: f64,
        bound: f64,
    },
    /// A candidate collided with an existing event time at the bit level.
    /// Under a continuous driver this has probability zero; seeing it
    /// means the generator or a replay went wrong.
    #[error("candidate time {time} collides with an existing event time")]
    TimeCollision { time: f64 },
    /// The dominated process accepted a candidate the dominating process
    /// rejected; the declared domination does not actually hold.
    #[error("domination breach at time {time}, event type {event}: {detail}")]
    DominationBreach {
        time: f64,
        event: EventIndex,
        detail: String,
    },
    #[error("coupled models have incompatible spaces: {0}")]
    IncompatibleSpaces(String),
}

/// Run parameters. Horizon and caps keep a desk run finite even when the
/// model explodes.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub horizon: f64,
    pub max_events: usize,
    pub max_candidates: u64,
    pub seed: u64,
    pub record_diagnostics: bool,
}

impl SimConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            max_events: 10_000_000,
            max_candidates: 1_000_000_000,
            seed,
            record_diagnostics: false,
        }
    }

    fn validate(&self) -> Result<(), FunctionalError> {
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(FunctionalError::InvalidModel(
                "horizon must be positive and finite".into(),
            ));
        }
        if self.max_events == 0 || self.max_candidates == 0 {
            return Err(FunctionalError::InvalidModel(
                "event and candidate caps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimStatus {
    /// The horizon was reached.
    Completed,
    /// The event cap was hit before the horizon.
    ExplosionSuspected,
    /// The candidate cap was hit before the horizon.
    CandidateBudgetExhausted,
}

impl SimStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SimStatus::Completed => "completed",
            SimStatus::ExplosionSuspected => "explosion-suspected",
            SimStatus::CandidateBudgetExhausted => "candidate-budget-exhausted",
        }
    }
}

/// One thinning decision, kept only in diagnostic mode.
#[derive(Debug, Clone, Copy)]
pub struct AcceptanceRecord {
    pub time: f64,
    pub event: EventIndex,
    pub height: f64,
    /// The exact acceptance threshold `weight(e) * lambda_bar(e | history)`.
    pub threshold: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub candidates_drawn: u64,
    pub accepted_events: u64,
    pub per_type_counts: Vec<u64>,
    pub acceptance_rate: f64,
    pub final_total_intensity: f64,
    pub wall_time: Duration,
    pub acceptance_log: Option<Vec<AcceptanceRecord>>,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub trajectory: Trajectory,
    pub status: SimStatus,
    pub horizon: f64,
    pub seed: u64,
    pub diagnostics: Diagnostics,
}

/// Incremental intensity evaluation along a run.
///
/// For exponential kernels the per-target excitation decays by a common
/// factor between events, so the intensity is carried as a per-target
/// scalar and updated in O(d) per candidate instead of re-summing the
/// whole history. The recursion evaluates the same closed form as direct
/// summation. Everything else falls back to direct evaluation.
enum Engine<'m> {
    Constant {
        nu: &'m [f64],
    },
    Markov {
        rates: &'m StateRates,
        relative: &'m [f64],
    },
    HawkesExp {
        nu: &'m [f64],
        alpha: &'m AlphaTensor,
        beta: f64,
        /// Excess intensity per target type at time `at`, including the
        /// jump of any event at exactly `at`.
        excess: Vec<f64>,
        at: f64,
    },
    Direct {
        functional: &'m EventFunctional,
    },
    Count {
        rate: BirthRate,
        count: u64,
    },
}

impl<'m> Engine<'m> {
    fn new(model: &'m ModelSpec) -> Self {
        match &model.functional {
            EventFunctional::ConstantRate { nu } => Engine::Constant { nu },
            EventFunctional::MarkovRate { rates, relative } => Engine::Markov { rates, relative },
            EventFunctional::StateDependentHawkes {
                nu,
                kernel: Kernel::Exponential { alpha, beta },
            } => {
                let d = nu.len();
                let mut excess = vec![0.0; d];
                for rec in model.initial.initial() {
                    let decay = (*beta * rec.time).exp(); // time <= 0
                    for (e, x) in excess.iter_mut().enumerate() {
                        *x += alpha.coefficient(&rec.mark, e) * beta * decay;
                    }
                }
                Engine::HawkesExp {
                    nu,
                    alpha,
                    beta: *beta,
                    excess,
                    at: 0.0,
                }
            }
            f @ EventFunctional::StateDependentHawkes { .. } => Engine::Direct { functional: f },
            EventFunctional::CountDominated { rate, .. } => Engine::Count {
                rate: rate.clone(),
                count: model.initial.initial().len() as u64,
            },
        }
    }

    /// Decay internal state forward to time `t`.
    fn advance(&mut self, t: f64) {
        if let Engine::HawkesExp { excess, at, beta, .. } = self {
            let factor = (-*beta * (t - *at)).exp();
            for x in excess.iter_mut() {
                *x *= factor;
            }
            *at = t;
        }
    }

    /// `lambda_bar(e | history strictly before t)` with the engine
    /// advanced to `t` and `current` the state just before `t`.
    fn lambda(
        &self,
        e: EventIndex,
        t: f64,
        current: &StateValue,
        view: HistoryView<'_>,
    ) -> Result<f64, FunctionalError> {
        let value = match self {
            Engine::Constant { nu } => nu[e],
            Engine::Markov { rates, relative } => rates.eval(current) * relative[e],
            Engine::HawkesExp { nu, excess, at, .. } => {
                debug_assert_eq!(*at, t);
                nu[e] + excess[e]
            }
            Engine::Direct { functional } => functional.intensity(e, &view)?,
            Engine::Count { rate, count } => rate.eval(*count),
        };
        if !value.is_finite() {
            return Err(FunctionalError::NonFiniteIntensity { event: e });
        }
        Ok(value)
    }

    /// Register an accepted event (the engine must already be advanced to
    /// the event time).
    fn on_event(&mut self, rec: &EventRecord) {
        match self {
            Engine::HawkesExp {
                alpha,
                beta,
                excess,
                at,
                ..
            } => {
                debug_assert_eq!(*at, rec.time);
                for (e, x) in excess.iter_mut().enumerate() {
                    *x += alpha.coefficient(&rec.mark, e) * *beta;
                }
            }
            Engine::Count { count, .. } => *count += 1,
            _ => {}
        }
    }

    /// Per-type bounds valid from `at_time` until the next accepted event,
    /// including the jump of an event at exactly `at_time`.
    fn bounds(
        &self,
        d: usize,
        at_time: f64,
        current: &StateValue,
        view_through: HistoryView<'_>,
        functional: &EventFunctional,
    ) -> Result<Vec<f64>, FunctionalError> {
        match self {
            Engine::Constant { nu } => Ok(nu.to_vec()),
            Engine::Markov { rates, relative } => {
                let c = rates.eval(current);
                Ok(relative.iter().map(|r| c * r).collect())
            }
            Engine::HawkesExp { nu, excess, at, .. } => {
                debug_assert_eq!(*at, at_time);
                Ok((0..d).map(|e| nu[e] + excess[e]).collect())
            }
            Engine::Direct { .. } => functional.upper_bounds(&view_through, at_time),
            Engine::Count { rate, count } => Ok(vec![rate.eval(*count); d]),
        }
    }
}

/// One process being built: its engine, working record buffer, bounds,
/// state sampler, and counters.
struct Consumer<'m> {
    model: &'m ModelSpec,
    engine: Engine<'m>,
    events: Vec<EventRecord>,
    current_state: StateValue,
    state_rng: SimRng,
    bounds: Vec<f64>,
    per_type: Vec<u64>,
    log: Option<Vec<AcceptanceRecord>>,
}

impl<'m> Consumer<'m> {
    fn new(model: &'m ModelSpec, state_rng: SimRng, diagnostics: bool) -> Result<Self, SimError> {
        let d = model.events.len();
        let current_state = model
            .initial
            .initial()
            .last()
            .map(|r| r.mark.state)
            .unwrap_or(model.origin_state());
        let mut consumer = Self {
            model,
            engine: Engine::new(model),
            events: Vec::new(),
            current_state,
            state_rng,
            bounds: Vec::new(),
            per_type: vec![0; d],
            log: diagnostics.then(Vec::new),
        };
        consumer.refresh_bounds(0.0)?;
        Ok(consumer)
    }

    fn view_before(&self, t: f64) -> HistoryView<'_> {
        HistoryView::strictly_before(
            self.model.initial.initial(),
            &self.events,
            self.model.origin_state(),
            t,
        )
    }

    fn view_through(&self, t: f64) -> HistoryView<'_> {
        HistoryView::through(
            self.model.initial.initial(),
            &self.events,
            self.model.origin_state(),
            t,
        )
    }

    fn refresh_bounds(&mut self, at_time: f64) -> Result<(), SimError> {
        self.bounds = self.engine.bounds(
            self.model.events.len(),
            at_time,
            &self.current_state,
            self.view_through(at_time),
            &self.model.functional,
        )?;
        Ok(())
    }

    fn majorant(&self) -> Result<Majorant, DriverError> {
        Majorant::new(&self.bounds, self.model.events.weights())
    }

    /// Exact intensity of `e` just before `cand.time` (engine already
    /// advanced there).
    fn lambda(&self, cand: &Candidate) -> Result<f64, FunctionalError> {
        self.engine.lambda(
            cand.event,
            cand.time,
            &self.current_state,
            self.view_before(cand.time),
        )
    }

    /// Apply the thinning decision for a candidate; returns whether it was
    /// accepted. `check_bound` guards against the exact intensity
    /// escaping this consumer's declared bound.
    fn offer(&mut self, cand: &Candidate, check_bound: bool) -> Result<bool, SimError> {
        self.engine.advance(cand.time);
        let lam = self.lambda(cand)?;
        if check_bound {
            let bound = self.bounds[cand.event];
            if lam > bound * (1.0 + 1e-9) + 1e-300 {
                return Err(SimError::MajorantViolation {
                    time: cand.time,
                    event: cand.event,
                    intensity: lam,
                    bound,
                });
            }
        }
        let threshold = self.model.events.weight(cand.event) * lam;
        let accepted = cand.height < threshold;
        if accepted {
            if let Some(last) = self.events.last() {
                if cand.time <= last.time {
                    return Err(SimError::TimeCollision { time: cand.time });
                }
            }
            let next_state =
                self.model
                    .transition
                    .sample(cand.event, &self.current_state, &mut self.state_rng);
            let rec = EventRecord::new(cand.time, Mark::new(cand.event, next_state));
            self.events.push(rec);
            self.engine.on_event(&rec);
            self.current_state = next_state;
            self.per_type[cand.event] += 1;
            self.refresh_bounds(cand.time)?;
        }
        if let Some(log) = &mut self.log {
            log.push(AcceptanceRecord {
                time: cand.time,
                event: cand.event,
                height: cand.height,
                threshold,
                accepted,
            });
        }
        Ok(accepted)
    }

    fn into_result(
        self,
        status: SimStatus,
        cfg: &SimConfig,
        candidates_drawn: u64,
        started: Instant,
    ) -> Result<SimResult, SimError> {
        let trajectory = Trajectory::new(
            self.model.initial.initial().to_vec(),
            self.events,
            self.model.origin_state(),
        )?;
        let final_total_intensity = self
            .model
            .total_event_rate(&trajectory.history_through(cfg.horizon))
            .unwrap_or(f64::NAN);
        let accepted_events = self.per_type.iter().sum();
        Ok(SimResult {
            trajectory,
            status,
            horizon: cfg.horizon,
            seed: cfg.seed,
            diagnostics: Diagnostics {
                candidates_drawn,
                accepted_events,
                per_type_counts: self.per_type,
                acceptance_rate: if candidates_drawn > 0 {
                    accepted_events as f64 / candidates_drawn as f64
                } else {
                    0.0
                },
                final_total_intensity,
                wall_time: started.elapsed(),
                acceptance_log: self.log,
            },
        })
    }
}

/// Derive the candidate and state streams of a run from its seed.
fn streams(seed: u64) -> (SimRng, SimRng) {
    let mut root = SimRng::new(seed);
    let candidates = root.derive();
    let states = root.derive();
    (candidates, states)
}

/// Simulate a single trajectory of the model on `(0, horizon]`, starting
/// from its initial condition.
pub fn simulate(model: &ModelSpec, cfg: &SimConfig) -> Result<SimResult, SimError> {
    let started = Instant::now();
    model.validate()?;
    cfg.validate()?;
    let (candidate_stream, state_stream) = streams(cfg.seed);
    let mut driver = DriverState::new(candidate_stream);
    let mut consumer = Consumer::new(model, state_stream, cfg.record_diagnostics)?;
    let mut status = SimStatus::Completed;
    loop {
        let majorant = consumer.majorant()?;
        if majorant.total() <= 0.0 {
            // Extinct: nothing can ever fire again.
            break;
        }
        let cand = driver.next_candidate(&majorant)?;
        if driver.draws() > cfg.max_candidates {
            status = SimStatus::CandidateBudgetExhausted;
            break;
        }
        if cand.time > cfg.horizon {
            break;
        }
        if consumer.offer(&cand, true)? && consumer.events.len() >= cfg.max_events {
            status = SimStatus::ExplosionSuspected;
            break;
        }
    }
    consumer.into_result(status, cfg, driver.draws(), started)
}

/// Canned histories used to spot-check a declared domination before a
/// coupled run starts.
fn domination_spot_check(model: &ModelSpec, dominating: &ModelSpec) -> Result<(), SimError> {
    let d = model.events.len();
    let state_for = |i: usize| match &model.states {
        crate::functionals::StateSpace::Discrete { weights } => {
            StateValue::Discrete(i % weights.len())
        }
        crate::functionals::StateSpace::Continuous => StateValue::Continuous(i as f64 * 0.5),
    };
    let mut histories = vec![Trajectory::empty(model.origin_state())];
    for variant in 0..3usize {
        let mut recs = Vec::new();
        for i in 0..6 {
            let t = 0.3 * (i + 1) as f64 + 0.05 * variant as f64;
            recs.push(EventRecord::new(
                t,
                Mark::new((i + variant) % d, state_for(i + variant)),
            ));
        }
        histories.push(Trajectory::new(vec![], recs, model.origin_state())?);
    }
    for traj in &histories {
        for cut in [0.5, 2.0, 5.0] {
            let h = traj.history(cut);
            for e in 0..d {
                let lam = model.functional.intensity(e, &h)?;
                let lam_dom = dominating.functional.intensity(e, &h)?;
                if lam > lam_dom * (1.0 + 1e-12) + 1e-300 {
                    return Err(SimError::DominationBreach {
                        time: cut,
                        event: e,
                        detail: format!(
                            "spot check: dominated intensity {lam} exceeds dominating {lam_dom} \
                             on a synthetic history"
                        ),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Simulate the model and a dominating model against one shared candidate
/// stream. Every event accepted by the dominated process is also an event
/// of the dominating one; a violation aborts with
/// [`SimError::DominationBreach`].
///
/// Candidates are generated under the dominating model's bounds, which by
/// monotonicity of both functionals in the history also dominate the
/// dominated model's intensity at all times.
pub fn simulate_coupled(
    model: &ModelSpec,
    dominating: &ModelSpec,
    cfg: &SimConfig,
) -> Result<(SimResult, SimResult), SimError> {
    let started = Instant::now();
    model.validate()?;
    dominating.validate()?;
    cfg.validate()?;
    if model.events.len() != dominating.events.len() {
        return Err(SimError::IncompatibleSpaces(
            "event spaces differ in size".into(),
        ));
    }
    if model.states.size() != dominating.states.size() {
        return Err(SimError::IncompatibleSpaces(
            "state spaces differ in size".into(),
        ));
    }
    if model.events.weights() != dominating.events.weights() {
        return Err(SimError::IncompatibleSpaces(
            "event weights differ".into(),
        ));
    }
    domination_spot_check(model, dominating)?;

    let (candidate_stream, state_stream) = streams(cfg.seed);
    let mut shared = DriverState::new(candidate_stream).fork_for_coupling();
    // Both consumers draw states from identically seeded streams, so equal
    // models produce identical trajectories, not just identical event sets.
    let mut lower = Consumer::new(model, state_stream.clone(), cfg.record_diagnostics)?;
    let mut upper = Consumer::new(dominating, state_stream, cfg.record_diagnostics)?;
    let mut lower_status = SimStatus::Completed;
    let mut upper_status = SimStatus::Completed;
    loop {
        let majorant = upper.majorant()?;
        if majorant.total() <= 0.0 {
            break;
        }
        let cand = shared.next_candidate(&majorant)?;
        if shared.draws() > cfg.max_candidates {
            lower_status = SimStatus::CandidateBudgetExhausted;
            upper_status = SimStatus::CandidateBudgetExhausted;
            break;
        }
        if cand.time > cfg.horizon {
            break;
        }
        let accepted_upper = upper.offer(&cand, true)?;
        let accepted_lower = lower.offer(&cand, false)?;
        if accepted_lower && !accepted_upper {
            return Err(SimError::DominationBreach {
                time: cand.time,
                event: cand.event,
                detail: "dominated process accepted a candidate the dominating process rejected"
                    .into(),
            });
        }
        let mut stop = false;
        if accepted_upper && upper.events.len() >= cfg.max_events {
            upper_status = SimStatus::ExplosionSuspected;
            stop = true;
        }
        if accepted_lower && lower.events.len() >= cfg.max_events {
            lower_status = SimStatus::ExplosionSuspected;
            stop = true;
        }
        if stop {
            break;
        }
    }
    let drawn = shared.draws();
    Ok((
        lower.into_result(lower_status, cfg, drawn, started)?,
        upper.into_result(upper_status, cfg, drawn, started)?,
    ))
}

/// Evaluate the per-type event intensity along a sorted grid of times.
/// Each value is the exact functional applied to the history strictly
/// before the grid point; nothing is interpolated.
pub fn intensity_path(
    model: &ModelSpec,
    traj: &Trajectory,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>, FunctionalError> {
    debug_assert!(grid.windows(2).all(|w| w[0] <= w[1]), "grid must be sorted");
    let d = model.events.len();
    grid.iter()
        .map(|t| {
            let h = traj.history(*t);
            (0..d)
                .map(|e| model.functional.intensity(e, &h))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExplosionClassification {
    NonExplosive,
    SuspectedExplosive { estimated_t_inf: f64 },
}

/// Classify a finished run. A run is suspected explosive when it hit the
/// event cap and its final ten percent of inter-event gaps together span
/// less than `1e-6` of the horizon; the explosion time is estimated by
/// the last event time.
pub fn detect_explosion(result: &SimResult) -> ExplosionClassification {
    if result.status != SimStatus::ExplosionSuspected {
        return ExplosionClassification::NonExplosive;
    }
    let events = result.trajectory.events();
    let n = events.len();
    if n < 10 {
        return ExplosionClassification::NonExplosive;
    }
    let tail_gaps = (n / 10).max(1);
    let span = events[n - 1].time - events[n - 1 - tail_gaps].time;
    if span < 1e-6 * result.horizon {
        ExplosionClassification::SuspectedExplosive {
            estimated_t_inf: events[n - 1].time,
        }
    } else {
        ExplosionClassification::NonExplosive
    }
}
