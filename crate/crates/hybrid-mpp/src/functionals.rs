//! Intensity functionals and transition functions.
//!
//! A model's intensity over marks `m = (e, x)` factorizes as
//!
//! ```text
//! psi((e, x) | xi) = phi(x | e, F(xi)) * lambda_bar(e | xi)
//! ```
//!
//! where `lambda_bar` is the [`EventFunctional`] (rate of type-`e` events
//! given the history), `phi` is the [`TransitionFunction`] (distribution of
//! the next state given the event type and the current state), and `F` is
//! the state functional. Integrating the state variable out of `psi`
//! recovers `lambda_bar` exactly, which is what lets the simulator draw
//! the event type first and the post-event state second.
//!
//! ```
//! use hybrid_mpp::functionals::{AlphaTensor, EventFunctional, Kernel};
//! use hybrid_mpp::types::{EventRecord, Mark, StateValue, Trajectory};
//!
//! // One-type Hawkes: rate 1.0 plus 0.5 * beta * exp(-beta * lag) per past event.
//! let f = EventFunctional::StateDependentHawkes {
//!     nu: vec![1.0],
//!     kernel: Kernel::Exponential { alpha: AlphaTensor::scalar(0.5), beta: 1.0 },
//! };
//! let traj = Trajectory::new(
//!     vec![],
//!     vec![EventRecord::new(1.0, Mark::new(0, StateValue::Discrete(0)))],
//!     StateValue::Discrete(0),
//! )
//! .unwrap();
//! let lambda = f.intensity(0, &traj.history(2.0)).unwrap();
//! assert!((lambda - (1.0 + 0.5 * (-1.0f64).exp())).abs() < 1e-15);
//! ```

use std::sync::Arc;

use thiserror::Error;

use crate::rng::SimRng;
use crate::types::{EventIndex, HistoryView, Mark, StateValue, Trajectory};

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("intensity for event type {event} evaluated to a non-finite value")]
    NonFiniteIntensity { event: EventIndex },
    #[error("discrete state index {index} out of range (state space size {size})")]
    OutOfSupport { index: usize, size: usize },
    #[error("no valid majorant: custom kernel is not monotone and declares no envelope")]
    NoValidBound,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Finite event space with a positive reference weight per type.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSpace {
    weights: Vec<f64>,
}

impl EventSpace {
    /// `d` types, each with weight 1.
    pub fn uniform(d: usize) -> Self {
        Self {
            weights: vec![1.0; d],
        }
    }

    pub fn with_weights(weights: Vec<f64>) -> Result<Self, FunctionalError> {
        if weights.is_empty() {
            return Err(FunctionalError::InvalidModel(
                "event space must contain at least one type".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(FunctionalError::InvalidModel(
                "event weights must be positive and finite".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, e: EventIndex) -> f64 {
        self.weights[e]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total reference mass of the event space.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// State space descriptor.
#[derive(Debug, Clone, PartialEq)]
pub enum StateSpace {
    /// Finite state space with a positive reference weight per state.
    Discrete { weights: Vec<f64> },
    /// Real line with Lebesgue reference measure.
    Continuous,
}

impl StateSpace {
    pub fn discrete(size: usize) -> Self {
        StateSpace::Discrete {
            weights: vec![1.0; size],
        }
    }

    pub fn size(&self) -> Option<usize> {
        match self {
            StateSpace::Discrete { weights } => Some(weights.len()),
            StateSpace::Continuous => None,
        }
    }

    pub fn contains(&self, x: &StateValue) -> bool {
        match (self, x) {
            (StateSpace::Discrete { weights }, StateValue::Discrete(i)) => *i < weights.len(),
            (StateSpace::Continuous, StateValue::Continuous(v)) => v.is_finite(),
            _ => false,
        }
    }

    pub fn state_weight(&self, x: &StateValue) -> f64 {
        match (self, x) {
            (StateSpace::Discrete { weights }, StateValue::Discrete(i)) => weights[*i],
            _ => 1.0,
        }
    }
}

/// Row-stochastic transition table `probs[x][e][x']`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTable {
    probs: Vec<Vec<Vec<f64>>>,
}

/// Row sums may deviate from 1 by at most this much before the table is
/// rejected; accepted rows are renormalized exactly so that inverse-CDF
/// sampling cannot drift.
pub const TABLE_ROW_TOLERANCE: f64 = 1e-12;

impl DiscreteTable {
    pub fn new(mut probs: Vec<Vec<Vec<f64>>>) -> Result<Self, FunctionalError> {
        for (x, per_event) in probs.iter_mut().enumerate() {
            for (e, row) in per_event.iter_mut().enumerate() {
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(FunctionalError::InvalidModel(format!(
                        "transition row (state {x}, event {e}) has a negative or non-finite entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > TABLE_ROW_TOLERANCE {
                    return Err(FunctionalError::InvalidModel(format!(
                        "transition row (state {x}, event {e}) sums to {sum}, not 1"
                    )));
                }
                for p in row.iter_mut() {
                    *p /= sum;
                }
            }
        }
        Ok(Self { probs })
    }

    /// Identity transitions on `size` states for `d` event types.
    pub fn identity(size: usize, d: usize) -> Self {
        let probs = (0..size)
            .map(|x| {
                (0..d)
                    .map(|_| (0..size).map(|y| if y == x { 1.0 } else { 0.0 }).collect())
                    .collect()
            })
            .collect();
        Self { probs }
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn num_events(&self) -> usize {
        self.probs.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn row(&self, x: usize, e: EventIndex) -> &[f64] {
        &self.probs[x][e]
    }

    pub fn prob(&self, x: usize, e: EventIndex, x_next: usize) -> f64 {
        self.probs[x][e][x_next]
    }
}

/// User-supplied density/sampler pair for continuous state spaces.
///
/// The density must integrate to 1 over the declared support; this is
/// checked by quadrature when a model is validated.
#[derive(Clone)]
pub struct ContinuousFamily {
    /// `density(x_next, e, x)`, a probability density in `x_next`.
    pub density: Arc<dyn Fn(f64, EventIndex, f64) -> f64 + Send + Sync>,
    /// `sampler(e, x, rng)` draws `x_next` from the density.
    pub sampler: Arc<dyn Fn(EventIndex, f64, &mut SimRng) -> f64 + Send + Sync>,
    /// Support of the increment `x_next - x`, used for the load-time
    /// normalization check.
    pub support: (f64, f64),
    /// Declared sup of the density, used by the existence-constraint check.
    pub sup_density: f64,
}

impl std::fmt::Debug for ContinuousFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContinuousFamily")
            .field("support", &self.support)
            .field("sup_density", &self.sup_density)
            .finish_non_exhaustive()
    }
}

/// Gaussian increment family: `x_next = x + N(mean, sigma^2)`.
pub fn gaussian_increment_family(mean: f64, sigma: f64) -> ContinuousFamily {
    let inv_norm = 1.0 / (sigma * (std::f64::consts::TAU).sqrt());
    ContinuousFamily {
        density: Arc::new(move |x_next, _e, x| {
            let z = (x_next - x - mean) / sigma;
            inv_norm * (-0.5 * z * z).exp()
        }),
        sampler: Arc::new(move |_e, x, rng| x + mean + sigma * rng.standard_normal()),
        support: (mean - 10.0 * sigma, mean + 10.0 * sigma),
        sup_density: inv_norm,
    }
}

/// Transition function `phi(x_next | e, x)`.
#[derive(Debug, Clone)]
pub enum TransitionFunction {
    DiscreteTable(DiscreteTable),
    ContinuousFamily(ContinuousFamily),
}

impl TransitionFunction {
    /// Draw the post-event state. Discrete tables use inverse-CDF over the
    /// row; continuous families call their sampler.
    pub fn sample(&self, e: EventIndex, x: &StateValue, rng: &mut SimRng) -> StateValue {
        match (self, x) {
            (TransitionFunction::DiscreteTable(table), StateValue::Discrete(xi)) => {
                let row = table.row(*xi, e);
                let u = rng.uniform();
                let mut acc = 0.0;
                for (x_next, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return StateValue::Discrete(x_next);
                    }
                }
                // Floating-point leftover mass lands on the last state.
                StateValue::Discrete(row.len() - 1)
            }
            (TransitionFunction::ContinuousFamily(fam), StateValue::Continuous(xv)) => {
                StateValue::Continuous((fam.sampler)(e, *xv, rng))
            }
            _ => panic!("transition function and state value kinds disagree"),
        }
    }

    /// Probability mass (discrete) or density value (continuous) of
    /// `x_next` given the event type and current state.
    pub fn density(
        &self,
        x_next: &StateValue,
        e: EventIndex,
        x: &StateValue,
    ) -> Result<f64, FunctionalError> {
        match (self, x_next, x) {
            (TransitionFunction::DiscreteTable(t), StateValue::Discrete(n), StateValue::Discrete(c)) => {
                let size = t.num_states();
                if *n >= size {
                    return Err(FunctionalError::OutOfSupport { index: *n, size });
                }
                if *c >= size {
                    return Err(FunctionalError::OutOfSupport { index: *c, size });
                }
                Ok(t.prob(*c, e, *n))
            }
            (
                TransitionFunction::ContinuousFamily(fam),
                StateValue::Continuous(n),
                StateValue::Continuous(c),
            ) => Ok((fam.density)(*n, e, *c)),
            _ => Err(FunctionalError::InvalidModel(
                "transition function and state value kinds disagree".into(),
            )),
        }
    }

    /// Sup of the transition density relative to the state reference
    /// measure.
    pub fn sup_density(&self, states: &StateSpace) -> f64 {
        match self {
            TransitionFunction::DiscreteTable(t) => {
                let mut sup: f64 = 0.0;
                for x in 0..t.num_states() {
                    for e in 0..t.num_events() {
                        for (x_next, p) in t.row(x, e).iter().enumerate() {
                            let w = states.state_weight(&StateValue::Discrete(x_next));
                            sup = sup.max(p / w);
                        }
                    }
                }
                sup
            }
            TransitionFunction::ContinuousFamily(fam) => fam.sup_density,
        }
    }
}

/// Excitation coefficients indexed `[source event][source state][target event]`.
///
/// A source-state dimension of 1 means the kernel ignores the past state,
/// which is the plain multivariate-Hawkes case.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTensor {
    values: Vec<f64>,
    source_events: usize,
    source_states: usize,
    targets: usize,
}

impl AlphaTensor {
    pub fn new(values: Vec<Vec<Vec<f64>>>) -> Result<Self, FunctionalError> {
        let source_events = values.len();
        let source_states = values.first().map(|v| v.len()).unwrap_or(0);
        let targets = values
            .first()
            .and_then(|v| v.first())
            .map(|v| v.len())
            .unwrap_or(0);
        if source_events == 0 || source_states == 0 || targets == 0 {
            return Err(FunctionalError::InvalidModel(
                "excitation tensor has an empty dimension".into(),
            ));
        }
        let mut flat = Vec::with_capacity(source_events * source_states * targets);
        for per_state in &values {
            if per_state.len() != source_states {
                return Err(FunctionalError::InvalidModel(
                    "ragged excitation tensor".into(),
                ));
            }
            for row in per_state {
                if row.len() != targets {
                    return Err(FunctionalError::InvalidModel(
                        "ragged excitation tensor".into(),
                    ));
                }
                for v in row {
                    if !v.is_finite() || *v < 0.0 {
                        return Err(FunctionalError::InvalidModel(
                            "excitation coefficients must be non-negative and finite".into(),
                        ));
                    }
                    flat.push(*v);
                }
            }
        }
        Ok(Self {
            values: flat,
            source_events,
            source_states,
            targets,
        })
    }

    /// Single-type, state-independent coefficient.
    pub fn scalar(value: f64) -> Self {
        Self {
            values: vec![value],
            source_events: 1,
            source_states: 1,
            targets: 1,
        }
    }

    /// State-independent matrix `m[source event][target event]`.
    pub fn from_event_matrix(m: Vec<Vec<f64>>) -> Result<Self, FunctionalError> {
        AlphaTensor::new(m.into_iter().map(|row| vec![row]).collect())
    }

    pub fn source_events(&self) -> usize {
        self.source_events
    }

    pub fn source_states(&self) -> usize {
        self.source_states
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    #[inline]
    pub fn get(&self, e_src: EventIndex, x_src: usize, e_tgt: EventIndex) -> f64 {
        self.values[(e_src * self.source_states + x_src) * self.targets + e_tgt]
    }

    /// Coefficient for a realized past mark. Continuous states require a
    /// state-independent tensor (source-state dimension 1).
    #[inline]
    pub fn coefficient(&self, mark: &Mark, target: EventIndex) -> f64 {
        let x_src = if self.source_states == 1 {
            0
        } else {
            match mark.state {
                StateValue::Discrete(i) => i,
                StateValue::Continuous(_) => {
                    panic!("state-dependent excitation tensor applied to a continuous state")
                }
            }
        };
        self.get(mark.event, x_src, target)
    }

    /// Maximum coefficient over source states, the state-collapsed
    /// dominating tensor.
    pub fn state_max(&self, e_src: EventIndex, e_tgt: EventIndex) -> f64 {
        (0..self.source_states)
            .map(|x| self.get(e_src, x, e_tgt))
            .fold(0.0, f64::max)
    }

    /// State-independent copy holding the state-wise maxima.
    pub fn state_maximized(&self) -> AlphaTensor {
        let mut values = Vec::with_capacity(self.source_events * self.targets);
        for e_src in 0..self.source_events {
            for e_tgt in 0..self.targets {
                values.push(self.state_max(e_src, e_tgt));
            }
        }
        AlphaTensor {
            values,
            source_events: self.source_events,
            source_states: 1,
            targets: self.targets,
        }
    }
}

/// User-supplied kernel with declared analytic facts.
#[derive(Clone)]
pub struct CustomKernel {
    /// `eval(lag, past mark, target type)`, non-negative.
    pub eval: Arc<dyn Fn(f64, &Mark, EventIndex) -> f64 + Send + Sync>,
    /// Declared value of the full time integral per `(mark, target)`.
    pub declared_integral: Option<Arc<dyn Fn(&Mark, EventIndex) -> f64 + Send + Sync>>,
    /// Whether the kernel is non-increasing in the lag.
    pub monotone_decreasing: bool,
    /// Declared envelope `sup_{s >= lag} eval(s, mark, target)`, required
    /// for a majorant when the kernel is not monotone.
    pub envelope: Option<Arc<dyn Fn(f64, &Mark, EventIndex) -> f64 + Send + Sync>>,
}

impl std::fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CustomKernel")
            .field("monotone_decreasing", &self.monotone_decreasing)
            .field("has_declared_integral", &self.declared_integral.is_some())
            .field("has_envelope", &self.envelope.is_some())
            .finish()
    }
}

/// Excitation kernel `k(lag, past mark, target type)`.
#[derive(Debug, Clone)]
pub enum Kernel {
    /// `alpha * beta * exp(-beta * lag)`; full time integral `alpha`.
    Exponential { alpha: AlphaTensor, beta: f64 },
    /// `alpha * (lag + cutoff)^(-exponent)` with `exponent > 1`; full time
    /// integral `alpha * cutoff^(1 - exponent) / (exponent - 1)`.
    PowerLaw {
        alpha: AlphaTensor,
        exponent: f64,
        cutoff: f64,
    },
    Custom(CustomKernel),
}

impl Kernel {
    /// Kernel value at a non-negative lag.
    pub fn evaluate(&self, lag: f64, mark: &Mark, target: EventIndex) -> f64 {
        debug_assert!(lag >= 0.0);
        match self {
            Kernel::Exponential { alpha, beta } => {
                alpha.coefficient(mark, target) * beta * (-beta * lag).exp()
            }
            Kernel::PowerLaw {
                alpha,
                exponent,
                cutoff,
            } => alpha.coefficient(mark, target) * (lag + cutoff).powf(-exponent),
            Kernel::Custom(custom) => (custom.eval)(lag, mark, target),
        }
    }

    /// Full time integral, when known analytically.
    pub fn declared_integral(&self, mark: &Mark, target: EventIndex) -> Option<f64> {
        match self {
            Kernel::Exponential { alpha, .. } => Some(alpha.coefficient(mark, target)),
            Kernel::PowerLaw {
                alpha,
                exponent,
                cutoff,
            } => Some(
                alpha.coefficient(mark, target) * cutoff.powf(1.0 - exponent) / (exponent - 1.0),
            ),
            Kernel::Custom(custom) => custom
                .declared_integral
                .as_ref()
                .map(|f| f(mark, target)),
        }
    }

    /// Integral of the kernel over the lag interval `[from, to]`. Closed
    /// form for the built-in kernels, adaptive quadrature otherwise.
    pub fn integral_range(&self, from: f64, to: f64, mark: &Mark, target: EventIndex) -> f64 {
        debug_assert!(0.0 <= from && from <= to);
        match self {
            Kernel::Exponential { alpha, beta } => {
                alpha.coefficient(mark, target) * ((-beta * from).exp() - (-beta * to).exp())
            }
            Kernel::PowerLaw {
                alpha,
                exponent,
                cutoff,
            } => {
                let a = alpha.coefficient(mark, target);
                a / (exponent - 1.0)
                    * ((from + cutoff).powf(1.0 - exponent) - (to + cutoff).powf(1.0 - exponent))
            }
            Kernel::Custom(custom) => {
                let f = |s: f64| (custom.eval)(s, mark, target);
                crate::numeric::adaptive_simpson(&f, from, to, 1e-10)
            }
        }
    }

    /// Whether the kernel value is non-increasing in the lag, so that the
    /// intensity right after an event bounds it until the next one.
    pub fn monotone_decaying(&self) -> bool {
        match self {
            Kernel::Exponential { .. } | Kernel::PowerLaw { .. } => true,
            Kernel::Custom(custom) => custom.monotone_decreasing,
        }
    }

    /// Upper envelope `sup_{s >= lag} k(s, mark, target)`.
    pub fn envelope(
        &self,
        lag: f64,
        mark: &Mark,
        target: EventIndex,
    ) -> Result<f64, FunctionalError> {
        if self.monotone_decaying() {
            return Ok(self.evaluate(lag, mark, target));
        }
        match self {
            Kernel::Custom(custom) => custom
                .envelope
                .as_ref()
                .map(|f| f(lag, mark, target))
                .ok_or(FunctionalError::NoValidBound),
            _ => unreachable!("built-in kernels are monotone"),
        }
    }

    pub fn source_events(&self) -> Option<usize> {
        match self {
            Kernel::Exponential { alpha, .. } | Kernel::PowerLaw { alpha, .. } => {
                Some(alpha.source_events())
            }
            Kernel::Custom(_) => None,
        }
    }

    pub fn targets(&self) -> Option<usize> {
        match self {
            Kernel::Exponential { alpha, .. } | Kernel::PowerLaw { alpha, .. } => {
                Some(alpha.targets())
            }
            Kernel::Custom(_) => None,
        }
    }
}

/// Per-state event rate for Markov-rate functionals.
#[derive(Clone)]
pub enum StateRates {
    /// Rate per discrete state index.
    PerState(Vec<f64>),
    /// Arbitrary positive rate function of the state.
    Function(Arc<dyn Fn(&StateValue) -> f64 + Send + Sync>),
}

impl StateRates {
    pub fn eval(&self, x: &StateValue) -> f64 {
        match (self, x) {
            (StateRates::PerState(rates), StateValue::Discrete(i)) => rates[*i],
            (StateRates::Function(f), x) => f(x),
            _ => panic!("per-state rates applied to a continuous state"),
        }
    }
}

impl std::fmt::Debug for StateRates {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateRates::PerState(r) => f.debug_tuple("PerState").field(r).finish(),
            StateRates::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Count-dominated rate family `a(n)`, a non-decreasing function of the
/// total number of past events.
#[derive(Clone)]
pub enum BirthRate {
    Constant(f64),
    /// `a(n) = scale * (1 + n)^exponent`.
    Power { scale: f64, exponent: f64 },
    /// Arbitrary rate function with a user declaration about whether
    /// `sum 1/a(n)` diverges (no finite computation can decide it).
    Custom {
        eval: Arc<dyn Fn(u64) -> f64 + Send + Sync>,
        declared_divergent: bool,
    },
}

impl BirthRate {
    pub fn eval(&self, n: u64) -> f64 {
        match self {
            BirthRate::Constant(c) => *c,
            BirthRate::Power { scale, exponent } => scale * (1.0 + n as f64).powf(*exponent),
            BirthRate::Custom { eval, .. } => eval(n),
        }
    }

    /// Whether the reciprocal series `sum 1/a(n)` diverges; divergence is
    /// what rules out explosion. Known analytically for the built-in
    /// families, declared by the user otherwise.
    pub fn reciprocal_series_diverges(&self) -> bool {
        match self {
            BirthRate::Constant(_) => true,
            BirthRate::Power { exponent, .. } => *exponent <= 1.0,
            BirthRate::Custom {
                declared_divergent, ..
            } => *declared_divergent,
        }
    }
}

impl std::fmt::Debug for BirthRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BirthRate::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            BirthRate::Power { scale, exponent } => f
                .debug_struct("Power")
                .field("scale", scale)
                .field("exponent", exponent)
                .finish(),
            BirthRate::Custom {
                declared_divergent, ..
            } => f
                .debug_struct("Custom")
                .field("declared_divergent", declared_divergent)
                .finish_non_exhaustive(),
        }
    }
}

/// The event functional `lambda_bar(e | xi)`.
#[derive(Debug, Clone)]
pub enum EventFunctional {
    /// Homogeneous rate per type.
    ConstantRate { nu: Vec<f64> },
    /// Rate `c(current state) * relative[e]`, the Markov-chain case.
    MarkovRate {
        rates: StateRates,
        relative: Vec<f64>,
    },
    /// Linear self-excitation: `nu[e] + sum_i k(t - t_i, m_i, e)`.
    StateDependentHawkes { nu: Vec<f64>, kernel: Kernel },
    /// Rate `a(number of past events)`, identical for every type.
    CountDominated { rate: BirthRate, num_types: usize },
}

impl EventFunctional {
    pub fn num_types(&self) -> usize {
        match self {
            EventFunctional::ConstantRate { nu } => nu.len(),
            EventFunctional::MarkovRate { relative, .. } => relative.len(),
            EventFunctional::StateDependentHawkes { nu, .. } => nu.len(),
            EventFunctional::CountDominated { num_types, .. } => *num_types,
        }
    }

    /// `lambda_bar(e | h)` by direct summation over the history records.
    pub fn intensity(&self, e: EventIndex, h: &HistoryView<'_>) -> Result<f64, FunctionalError> {
        let value = match self {
            EventFunctional::ConstantRate { nu } => nu[e],
            EventFunctional::MarkovRate { rates, relative } => {
                rates.eval(&h.state_functional()) * relative[e]
            }
            EventFunctional::StateDependentHawkes { nu, kernel } => {
                let cut = h.cut();
                let mut acc = nu[e];
                for rec in h.records() {
                    acc += kernel.evaluate(cut - rec.time, &rec.mark, e);
                }
                acc
            }
            EventFunctional::CountDominated { rate, .. } => rate.eval(h.count() as u64),
        };
        if !value.is_finite() || value < 0.0 {
            return Err(FunctionalError::NonFiniteIntensity { event: e });
        }
        Ok(value)
    }

    /// Per-type majorant valid from `from_time` until the next accepted
    /// event: `B(e) >= lambda_bar(e | history at s)` for every `s >=
    /// from_time`, as long as no event is appended.
    ///
    /// For monotone-decaying kernels the bound is the intensity evaluated
    /// at `from_time` itself; everything later only decays. For the
    /// count-dominated family the count cannot change between events, and
    /// for non-monotone custom kernels the declared envelope is summed.
    pub fn upper_bounds(
        &self,
        h: &HistoryView<'_>,
        from_time: f64,
    ) -> Result<Vec<f64>, FunctionalError> {
        debug_assert!(from_time >= h.cut() || h.cut().is_infinite());
        let d = self.num_types();
        match self {
            EventFunctional::ConstantRate { nu } => Ok(nu.clone()),
            EventFunctional::MarkovRate { rates, relative } => {
                let c = rates.eval(&h.state_functional());
                Ok(relative.iter().map(|r| c * r).collect())
            }
            EventFunctional::StateDependentHawkes { nu, kernel } => {
                let mut bounds = nu.clone();
                for rec in h.records() {
                    let lag = from_time - rec.time;
                    for (e, b) in bounds.iter_mut().enumerate() {
                        *b += kernel.envelope(lag, &rec.mark, e)?;
                    }
                }
                for (e, b) in bounds.iter_mut().enumerate() {
                    if !b.is_finite() {
                        return Err(FunctionalError::NonFiniteIntensity { event: e });
                    }
                }
                Ok(bounds)
            }
            EventFunctional::CountDominated { rate, .. } => {
                Ok(vec![rate.eval(h.count() as u64); d])
            }
        }
    }
}

/// Complete model: spaces, transition function, event functional, and the
/// initial condition on `(-inf, 0]`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub events: EventSpace,
    pub states: StateSpace,
    pub transition: TransitionFunction,
    pub functional: EventFunctional,
    pub initial: Trajectory,
}

impl ModelSpec {
    /// Check that every component is internally consistent and that the
    /// dimensions agree across components.
    pub fn validate(&self) -> Result<(), FunctionalError> {
        let d = self.events.len();
        if self.functional.num_types() != d {
            return Err(FunctionalError::InvalidModel(format!(
                "event functional covers {} types but the event space has {d}",
                self.functional.num_types()
            )));
        }
        match &self.functional {
            EventFunctional::ConstantRate { nu } | EventFunctional::StateDependentHawkes { nu, .. } => {
                if nu.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(FunctionalError::InvalidModel(
                        "base rates must be non-negative and finite".into(),
                    ));
                }
            }
            EventFunctional::MarkovRate { rates, relative } => {
                if relative.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(FunctionalError::InvalidModel(
                        "relative type weights must be non-negative and finite".into(),
                    ));
                }
                if let (StateRates::PerState(r), StateSpace::Discrete { weights }) =
                    (rates, &self.states)
                {
                    if r.len() != weights.len() {
                        return Err(FunctionalError::InvalidModel(
                            "per-state rates do not match the state space size".into(),
                        ));
                    }
                    if r.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                        return Err(FunctionalError::InvalidModel(
                            "per-state rates must be positive".into(),
                        ));
                    }
                }
            }
            EventFunctional::CountDominated { rate, .. } => match rate {
                BirthRate::Constant(c) if *c <= 0.0 || !c.is_finite() => {
                    return Err(FunctionalError::InvalidModel(
                        "count-dominated rate must be positive".into(),
                    ));
                }
                BirthRate::Power { scale, exponent }
                    if *scale <= 0.0 || !scale.is_finite() || !exponent.is_finite() || *exponent < 0.0 =>
                {
                    return Err(FunctionalError::InvalidModel(
                        "count-dominated rate family must be positive and non-decreasing".into(),
                    ));
                }
                _ => {}
            },
        }
        if let EventFunctional::StateDependentHawkes { kernel, .. } = &self.functional {
            match kernel {
                Kernel::Exponential { alpha, beta } => {
                    if !beta.is_finite() || *beta <= 0.0 {
                        return Err(FunctionalError::InvalidModel(
                            "exponential decay rate must be positive".into(),
                        ));
                    }
                    self.check_alpha_dims(alpha)?;
                }
                Kernel::PowerLaw {
                    alpha,
                    exponent,
                    cutoff,
                } => {
                    if !(*exponent > 1.0) || !(*cutoff > 0.0) {
                        return Err(FunctionalError::InvalidModel(
                            "power-law kernel needs exponent > 1 and cutoff > 0".into(),
                        ));
                    }
                    self.check_alpha_dims(alpha)?;
                }
                Kernel::Custom(_) => {}
            }
        }
        match (&self.transition, &self.states) {
            (TransitionFunction::DiscreteTable(t), StateSpace::Discrete { weights }) => {
                if t.num_states() != weights.len() {
                    return Err(FunctionalError::InvalidModel(format!(
                        "transition table covers {} states but the state space has {}",
                        t.num_states(),
                        weights.len()
                    )));
                }
                if t.num_events() != d {
                    return Err(FunctionalError::InvalidModel(format!(
                        "transition table covers {} event types but the event space has {d}",
                        t.num_events()
                    )));
                }
            }
            (TransitionFunction::ContinuousFamily(fam), StateSpace::Continuous) => {
                for e in 0..d {
                    let mass = crate::numeric::adaptive_simpson(
                        &|y| (fam.density)(y, e, 0.0),
                        fam.support.0,
                        fam.support.1,
                        1e-9,
                    );
                    if (mass - 1.0).abs() > 1e-6 {
                        return Err(FunctionalError::InvalidModel(format!(
                            "transition density for event type {e} integrates to {mass} over its declared support"
                        )));
                    }
                }
            }
            _ => {
                return Err(FunctionalError::InvalidModel(
                    "transition function kind does not match the state space kind".into(),
                ));
            }
        }
        if !self.initial.events().is_empty() {
            return Err(FunctionalError::InvalidModel(
                "initial condition contains records at positive times".into(),
            ));
        }
        if !self.states.contains(&self.initial.origin_state()) {
            return Err(FunctionalError::InvalidModel(
                "origin state lies outside the state space".into(),
            ));
        }
        for rec in self.initial.initial() {
            if rec.mark.event >= d {
                return Err(FunctionalError::InvalidModel(format!(
                    "initial record at {} has event index {} outside the event space",
                    rec.time, rec.mark.event
                )));
            }
            if !self.states.contains(&rec.mark.state) {
                return Err(FunctionalError::InvalidModel(format!(
                    "initial record at {} has a state outside the state space",
                    rec.time
                )));
            }
        }
        Ok(())
    }

    fn check_alpha_dims(&self, alpha: &AlphaTensor) -> Result<(), FunctionalError> {
        let d = self.events.len();
        if alpha.source_events() != d || alpha.targets() != d {
            return Err(FunctionalError::InvalidModel(format!(
                "excitation tensor is {}x{}x{} but the event space has {d} types",
                alpha.source_events(),
                alpha.source_states(),
                alpha.targets()
            )));
        }
        if let Some(size) = self.states.size() {
            if alpha.source_states() != 1 && alpha.source_states() != size {
                return Err(FunctionalError::InvalidModel(format!(
                    "excitation tensor has {} source states but the state space has {size}",
                    alpha.source_states()
                )));
            }
        } else if alpha.source_states() != 1 {
            return Err(FunctionalError::InvalidModel(
                "state-dependent excitation tensor over a continuous state space".into(),
            ));
        }
        Ok(())
    }

    /// Aggregated event rate `sum_e weight(e) * lambda_bar(e | h)`, the
    /// absolute rate of events of any type.
    pub fn total_event_rate(&self, h: &HistoryView<'_>) -> Result<f64, FunctionalError> {
        let mut total = 0.0;
        for e in 0..self.events.len() {
            total += self.events.weight(e) * self.functional.intensity(e, h)?;
        }
        Ok(total)
    }

    /// Full mark intensity `psi((e, x) | h)` relative to the product
    /// reference measure: transition density times event intensity.
    pub fn mark_intensity(&self, mark: &Mark, h: &HistoryView<'_>) -> Result<f64, FunctionalError> {
        let current = h.state_functional();
        let phi = self.transition.density(&mark.state, mark.event, &current)?;
        let phi_density = phi / self.states.state_weight(&mark.state);
        Ok(phi_density * self.functional.intensity(mark.event, h)?)
    }

    pub fn origin_state(&self) -> StateValue {
        self.initial.origin_state()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::EventRecord;
    use proptest::prelude::*;

    fn rec(t: f64, e: EventIndex, x: usize) -> EventRecord {
        EventRecord::new(t, Mark::new(e, StateValue::Discrete(x)))
    }

    fn single_type_hawkes(alpha: f64, beta: f64, nu: f64) -> EventFunctional {
        EventFunctional::StateDependentHawkes {
            nu: vec![nu],
            kernel: Kernel::Exponential {
                alpha: AlphaTensor::scalar(alpha),
                beta,
            },
        }
    }

    #[test]
    fn constant_rate_ignores_history() {
        let f = EventFunctional::ConstantRate { nu: vec![2.0] };
        let traj = Trajectory::new(
            vec![rec(-1.0, 0, 0)],
            vec![rec(1.0, 0, 0)],
            StateValue::Discrete(0),
        )
        .unwrap();
        assert_eq!(f.intensity(0, &traj.history(5.0)).unwrap(), 2.0);
        assert_eq!(f.intensity(0, &traj.history(-5.0)).unwrap(), 2.0);
    }

    #[test]
    fn hawkes_single_event_lag_one() {
        // nu + alpha * beta * exp(-beta * 1) with alpha=0.5, beta=1.
        let f = single_type_hawkes(0.5, 1.0, 1.0);
        let traj =
            Trajectory::new(vec![], vec![rec(1.0, 0, 0)], StateValue::Discrete(0)).unwrap();
        let lambda = f.intensity(0, &traj.history(2.0)).unwrap();
        let expected = 1.0 + 0.5 * (-1.0f64).exp();
        assert!((lambda - expected).abs() < 1e-15);
        assert!((expected - 1.183_939_720_585_721_2).abs() < 1e-15);
    }

    #[test]
    fn count_dominated_squared() {
        let f = EventFunctional::CountDominated {
            rate: BirthRate::Power {
                scale: 1.0,
                exponent: 2.0,
            },
            num_types: 1,
        };
        let traj = Trajectory::new(
            vec![],
            vec![rec(0.1, 0, 0), rec(0.2, 0, 0), rec(0.3, 0, 0)],
            StateValue::Discrete(0),
        )
        .unwrap();
        assert_eq!(f.intensity(0, &traj.full_history()).unwrap(), 16.0);
        // Bound equals the same value: the count only changes at events.
        let b = f.upper_bounds(&traj.full_history(), 1.0).unwrap();
        assert_eq!(b, vec![16.0]);
    }

    #[test]
    fn total_rate_sums_weighted_types() {
        let model = ModelSpec {
            events: EventSpace::uniform(2),
            states: StateSpace::discrete(1),
            transition: TransitionFunction::DiscreteTable(DiscreteTable::identity(1, 2)),
            functional: EventFunctional::ConstantRate { nu: vec![1.0, 2.0] },
            initial: Trajectory::empty(StateValue::Discrete(0)),
        };
        let traj = Trajectory::empty(StateValue::Discrete(0));
        assert_eq!(model.total_event_rate(&traj.history(0.0)).unwrap(), 3.0);

        let weighted = ModelSpec {
            events: EventSpace::with_weights(vec![2.0]).unwrap(),
            states: StateSpace::discrete(1),
            transition: TransitionFunction::DiscreteTable(DiscreteTable::identity(1, 1)),
            functional: EventFunctional::ConstantRate { nu: vec![1.5] },
            initial: Trajectory::empty(StateValue::Discrete(0)),
        };
        assert_eq!(weighted.total_event_rate(&traj.history(0.0)).unwrap(), 3.0);
    }

    #[test]
    fn total_rate_matches_bruteforce_on_random_hawkes() {
        // Independent oracle: re-derive the weighted sum with explicit
        // exponential-kernel arithmetic, no Kernel involved.
        let mut rng = SimRng::new(2024);
        for _ in 0..50 {
            let d = 1 + (rng.next_u64() % 3) as usize;
            let beta = 0.5 + rng.uniform() * 2.0;
            let alpha: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..d).map(|_| rng.uniform() * 0.4).collect())
                .collect();
            let nu: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
            let weights: Vec<f64> = (0..d).map(|_| 0.5 + rng.uniform()).collect();
            let f = EventFunctional::StateDependentHawkes {
                nu: nu.clone(),
                kernel: Kernel::Exponential {
                    alpha: AlphaTensor::from_event_matrix(alpha.clone()).unwrap(),
                    beta,
                },
            };
            let model = ModelSpec {
                events: EventSpace::with_weights(weights.clone()).unwrap(),
                states: StateSpace::discrete(1),
                transition: TransitionFunction::DiscreteTable(DiscreteTable::identity(1, d)),
                functional: f,
                initial: Trajectory::empty(StateValue::Discrete(0)),
            };
            let mut t = 0.0;
            let mut recs = Vec::new();
            for _ in 0..20 {
                t += rng.uniform_open();
                recs.push(rec(t, (rng.next_u64() % d as u64) as usize, 0));
            }
            let traj = Trajectory::new(vec![], recs.clone(), StateValue::Discrete(0)).unwrap();
            let cut = t + 1.0;
            let got = model.total_event_rate(&traj.history(cut)).unwrap();
            let mut expected = 0.0;
            for e in 0..d {
                let mut lam = nu[e];
                for r in &recs {
                    lam += alpha[r.mark.event][e] * beta * (-beta * (cut - r.time)).exp();
                }
                expected += weights[e] * lam;
            }
            assert!(
                (got - expected).abs() <= 1e-12 * expected.max(1.0),
                "got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn transition_sample_deterministic_rows() {
        let table = DiscreteTable::new(vec![
            vec![vec![0.0, 1.0]], // state 0 -> state 1
            vec![vec![0.0, 1.0]],
        ])
        .unwrap();
        let phi = TransitionFunction::DiscreteTable(table);
        let mut rng = SimRng::new(1);
        for _ in 0..100 {
            assert_eq!(
                phi.sample(0, &StateValue::Discrete(0), &mut rng),
                StateValue::Discrete(1)
            );
        }
        let id = TransitionFunction::DiscreteTable(DiscreteTable::identity(3, 1));
        for x in 0..3 {
            assert_eq!(
                id.sample(0, &StateValue::Discrete(x), &mut rng),
                StateValue::Discrete(x)
            );
        }
    }

    #[test]
    fn transition_sample_frequencies() {
        let table = DiscreteTable::new(vec![vec![vec![0.25, 0.75]], vec![vec![0.25, 0.75]]])
            .unwrap();
        let phi = TransitionFunction::DiscreteTable(table);
        let mut rng = SimRng::new(7);
        let n = 100_000;
        let mut ones = 0;
        for _ in 0..n {
            if phi.sample(0, &StateValue::Discrete(0), &mut rng) == StateValue::Discrete(1) {
                ones += 1;
            }
        }
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn transition_density_lookup_and_gaussian() {
        let id = TransitionFunction::DiscreteTable(DiscreteTable::identity(2, 1));
        let x0 = StateValue::Discrete(0);
        let x1 = StateValue::Discrete(1);
        assert_eq!(id.density(&x0, 0, &x0).unwrap(), 1.0);
        assert_eq!(id.density(&x1, 0, &x0).unwrap(), 0.0);
        assert!(matches!(
            id.density(&StateValue::Discrete(5), 0, &x0),
            Err(FunctionalError::OutOfSupport { .. })
        ));

        let fam = TransitionFunction::ContinuousFamily(gaussian_increment_family(0.0, 1.0));
        let v = fam
            .density(&StateValue::Continuous(2.0), 0, &StateValue::Continuous(2.0))
            .unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn table_row_tolerance_enforced() {
        let bad = DiscreteTable::new(vec![vec![vec![0.5, 0.5 + 1e-9]]]);
        assert!(bad.is_err());
        let ok = DiscreteTable::new(vec![vec![vec![0.5, 0.5 + 1e-13]]]).unwrap();
        let s: f64 = ok.row(0, 0).iter().sum();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn upper_bound_constant_and_exponential() {
        let f = EventFunctional::ConstantRate { nu: vec![2.0] };
        let traj = Trajectory::empty(StateValue::Discrete(0));
        assert_eq!(f.upper_bounds(&traj.history(0.0), 0.0).unwrap(), vec![2.0]);

        // Exponential kernel: bound at from_time dominates the intensity
        // on a fine grid until the next event.
        let mut rng = SimRng::new(11);
        for _ in 0..20 {
            let alpha = rng.uniform() * 0.8;
            let beta = 0.2 + rng.uniform() * 3.0;
            let f = single_type_hawkes(alpha, beta, rng.uniform());
            let mut t = 0.0;
            let mut recs = Vec::new();
            for _ in 0..10 {
                t += rng.uniform_open() * 2.0;
                recs.push(rec(t, 0, 0));
            }
            let traj = Trajectory::new(vec![], recs, StateValue::Discrete(0)).unwrap();
            let from = t + 0.1;
            let bound = f.upper_bounds(&traj.history(from), from).unwrap()[0];
            let gap_to_next = 5.0;
            for i in 0..1000 {
                let s = from + gap_to_next * i as f64 / 999.0;
                let lam = f.intensity(0, &traj.history(s)).unwrap();
                assert!(
                    lam <= bound * (1.0 + 1e-12),
                    "intensity {lam} exceeds bound {bound} at offset {i}"
                );
            }
        }
    }

    #[test]
    fn custom_kernel_without_envelope_has_no_bound() {
        let f = EventFunctional::StateDependentHawkes {
            nu: vec![1.0],
            kernel: Kernel::Custom(CustomKernel {
                eval: Arc::new(|s, _, _| if s < 1.0 { 0.0 } else { 0.5 }),
                declared_integral: None,
                monotone_decreasing: false,
                envelope: None,
            }),
        };
        let traj =
            Trajectory::new(vec![], vec![rec(1.0, 0, 0)], StateValue::Discrete(0)).unwrap();
        assert!(matches!(
            f.upper_bounds(&traj.history(2.0), 2.0),
            Err(FunctionalError::NoValidBound)
        ));
    }

    #[test]
    fn product_form_marginalizes_to_event_intensity() {
        let table = DiscreteTable::new(vec![
            vec![vec![0.3, 0.7], vec![0.6, 0.4]],
            vec![vec![0.8, 0.2], vec![0.25, 0.75]],
        ])
        .unwrap();
        let model = ModelSpec {
            events: EventSpace::uniform(2),
            states: StateSpace::discrete(2),
            transition: TransitionFunction::DiscreteTable(table),
            functional: EventFunctional::ConstantRate { nu: vec![1.3, 0.4] },
            initial: Trajectory::empty(StateValue::Discrete(0)),
        };
        let traj = Trajectory::new(
            vec![],
            vec![rec(0.5, 1, 1)],
            StateValue::Discrete(0),
        )
        .unwrap();
        let h = traj.history(1.0);
        for e in 0..2 {
            let lambda = model.functional.intensity(e, &h).unwrap();
            let mut sum = 0.0;
            for x_next in 0..2 {
                let m = Mark::new(e, StateValue::Discrete(x_next));
                sum += model.states.state_weight(&m.state) * model.mark_intensity(&m, &h).unwrap();
            }
            assert!((sum - lambda).abs() <= 1e-12 * lambda.max(1.0));
        }
    }

    #[test]
    fn power_law_integral_closed_form() {
        let k = Kernel::PowerLaw {
            alpha: AlphaTensor::scalar(0.5),
            exponent: 2.0,
            cutoff: 1.0,
        };
        let m = Mark::new(0, StateValue::Discrete(0));
        // integral of 0.5 * (s+1)^-2 over [0, inf) = 0.5.
        assert!((k.declared_integral(&m, 0).unwrap() - 0.5).abs() < 1e-15);
        // range [0, 1]: 0.5 * (1 - 1/2) = 0.25.
        assert!((k.integral_range(0.0, 1.0, &m, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn model_validation_catches_dimension_mismatches() {
        let model = ModelSpec {
            events: EventSpace::uniform(2),
            states: StateSpace::discrete(1),
            transition: TransitionFunction::DiscreteTable(DiscreteTable::identity(1, 1)),
            functional: EventFunctional::ConstantRate { nu: vec![1.0, 1.0] },
            initial: Trajectory::empty(StateValue::Discrete(0)),
        };
        assert!(model.validate().is_err());
    }

    proptest! {
        // Adding events to the history never decreases a linear Hawkes
        // intensity with a non-negative kernel; this monotonicity is what
        // the domination coupling relies on.
        #[test]
        fn hawkes_intensity_monotone_in_history(
            base_times in proptest::collection::vec(0.01f64..50.0, 0..12),
            extra_times in proptest::collection::vec(0.01f64..50.0, 1..6),
            alpha in 0.0f64..1.0,
            beta in 0.1f64..3.0,
        ) {
            let f = single_type_hawkes(alpha, beta, 0.3);
            let mut base: Vec<f64> = base_times;
            base.sort_by(f64::total_cmp);
            base.dedup();
            let mut extended = base.clone();
            extended.extend(extra_times);
            extended.sort_by(f64::total_cmp);
            extended.dedup();
            let to_traj = |times: &[f64]| {
                Trajectory::new(
                    vec![],
                    times.iter().map(|t| rec(*t, 0, 0)).collect(),
                    StateValue::Discrete(0),
                )
                .unwrap()
            };
            let t1 = to_traj(&base);
            let t2 = to_traj(&extended);
            let cut = 60.0;
            let a = f.intensity(0, &t1.history(cut)).unwrap();
            let b = f.intensity(0, &t2.history(cut)).unwrap();
            prop_assert!(b >= a - 1e-12);
        }
    }
}
