//! Simulation and statistical validation of hybrid marked point
//! processes: marked point processes on an event-type x state mark space
//! whose intensity factorizes into an event functional and a
//! state-transition function,
//!
//! ```text
//! psi((e, x) | history) = phi(x | e, current state) * lambda_bar(e | history)
//! ```
//!
//! The crate simulates such processes exactly (no discretization) by
//! thinning a lazily realized driving Poisson measure, checks the
//! stability assumptions that rule out explosion, and verifies simulated
//! output against the dynamics the factorization implies: time-rescaled
//! inter-event residuals are unit exponentials per event type, and next
//! states given (event type, current state) follow the transition
//! function.
//!
//! Start with [`functionals::ModelSpec`] to describe a model,
//! [`simulator::simulate`] to run it, [`assumptions::check_model`] to
//! audit stability, and [`validation`] to test output. The `hmpp` binary
//! exposes the same pipeline on the command line; the book under `book/`
//! walks through the concepts chapter by chapter.
//!
//! ```
//! use hybrid_mpp::functionals::{
//!     DiscreteTable, EventFunctional, EventSpace, ModelSpec, StateSpace, TransitionFunction,
//! };
//! use hybrid_mpp::simulator::{simulate, SimConfig, SimStatus};
//! use hybrid_mpp::types::{StateValue, Trajectory};
//!
//! // A rate-2 Poisson process: one event type, one state.
//! let model = ModelSpec {
//!     events: EventSpace::uniform(1),
//!     states: StateSpace::discrete(1),
//!     transition: TransitionFunction::DiscreteTable(DiscreteTable::identity(1, 1)),
//!     functional: EventFunctional::ConstantRate { nu: vec![2.0] },
//!     initial: Trajectory::empty(StateValue::Discrete(0)),
//! };
//! let result = simulate(&model, &SimConfig::new(100.0, 42)).unwrap();
//! assert_eq!(result.status, SimStatus::Completed);
//! let rate = result.trajectory.events().len() as f64 / 100.0;
//! assert!((rate - 2.0).abs() < 0.7);
//! ```

pub mod assumptions;
pub mod config;
pub mod driver;
pub mod functionals;
pub mod numeric;
pub mod rng;
pub mod simulator;
pub mod trace;
pub mod types;
pub mod validation;
