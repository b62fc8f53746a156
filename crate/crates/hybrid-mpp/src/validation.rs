//! Statistical verification of simulated output.
//!
//! Two empirical consequences of the factorized intensity are testable
//! from a single trajectory:
//!
//! * time rescaling: for each event type `e`, the compensator increments
//!   between consecutive type-`e` events are i.i.d. unit exponentials
//!   when the model that generated the trajectory is the model under
//!   test ([`rescaled_residuals`], [`ks_exp1`]);
//! * next-state frequencies: given the event type and the current state,
//!   post-event states follow the transition function
//!   ([`transition_frequency_test`]).
//!
//! Closed-form oracles for the classical special cases (stationary
//! occupancy of a finite-state chain, first moment of a stable
//! self-exciting process, compound-sum moments) live in the same module;
//! they give independent numbers to hold simulations against.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::assumptions::{branching_ratio, dominating_kernel_integral, AssumptionError};
use crate::functionals::{
    AlphaTensor, BirthRate, EventFunctional, FunctionalError, Kernel, ModelSpec, StateRates,
    TransitionFunction,
};
use crate::numeric::solve_linear;
use crate::types::{EventIndex, EventRecord, StateValue, Trajectory};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("insufficient events for type {event}: {got} (need at least {need})")]
    InsufficientEvents {
        event: EventIndex,
        got: usize,
        need: usize,
    },
    #[error("balance system is singular; the chain is reducible")]
    SingularSystem,
    #[error("unstable model: branching ratio {rho} >= 1")]
    UnstableModel { rho: f64 },
    #[error("test requires a discrete state space and transition table")]
    DiscreteStateRequired,
    #[error("unsupported significance level {0}; supported levels are 0.01 and 0.05")]
    UnsupportedLevel(f64),
    #[error(transparent)]
    Model(#[from] FunctionalError),
    #[error(transparent)]
    Assumption(#[from] AssumptionError),
}

/// Minimum number of events per type before a residual test is considered
/// reliable; below this the asymptotic critical values are not trusted.
pub const MIN_EVENTS_PER_TYPE: usize = 50;

/// One-sample Kolmogorov-Smirnov outcome against the unit exponential.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KsOutcome {
    pub n: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn ks_constant(level: f64) -> Result<f64, ValidationError> {
    // Asymptotic critical constants c(level) for D_n * sqrt(n).
    if (level - 0.01).abs() < 1e-12 {
        Ok(1.63)
    } else if (level - 0.05).abs() < 1e-12 {
        Ok(1.36)
    } else {
        Err(ValidationError::UnsupportedLevel(level))
    }
}

/// One-sample KS test of non-negative values against `1 - exp(-x)`.
pub fn ks_exp1(values: &[f64], level: f64) -> Result<KsOutcome, ValidationError> {
    assert!(!values.is_empty(), "ks_exp1 requires at least one value");
    let c = ks_constant(level)?;
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut statistic: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let cdf = 1.0 - (-x).exp();
        let upper = (i + 1) as f64 / nf - cdf;
        let lower = cdf - i as f64 / nf;
        statistic = statistic.max(upper).max(lower);
    }
    let threshold = c / nf.sqrt();
    Ok(KsOutcome {
        n,
        statistic,
        threshold,
        pass: statistic < threshold,
    })
}

/// Exact compensator accumulation along a trajectory. Between events the
/// intensity is analytic, so each segment integral is closed form for the
/// built-in functionals and adaptive quadrature only for custom kernels.
struct Compensator<'m> {
    model: &'m ModelSpec,
    kind: CompKind<'m>,
    current_state: StateValue,
}

enum CompKind<'m> {
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
        excess: Vec<f64>,
        at: f64,
    },
    HawkesGeneric {
        nu: &'m [f64],
        kernel: &'m Kernel,
        seen: Vec<EventRecord>,
    },
    Count {
        rate: BirthRate,
        count: u64,
    },
}

impl<'m> Compensator<'m> {
    fn new(model: &'m ModelSpec) -> Self {
        let current_state = model
            .initial
            .initial()
            .last()
            .map(|r| r.mark.state)
            .unwrap_or(model.origin_state());
        let kind = match &model.functional {
            EventFunctional::ConstantRate { nu } => CompKind::Constant { nu },
            EventFunctional::MarkovRate { rates, relative } => CompKind::Markov { rates, relative },
            EventFunctional::StateDependentHawkes {
                nu,
                kernel: Kernel::Exponential { alpha, beta },
            } => {
                let mut excess = vec![0.0; nu.len()];
                for rec in model.initial.initial() {
                    let decay = (*beta * rec.time).exp();
                    for (e, x) in excess.iter_mut().enumerate() {
                        *x += alpha.coefficient(&rec.mark, e) * beta * decay;
                    }
                }
                CompKind::HawkesExp {
                    nu,
                    alpha,
                    beta: *beta,
                    excess,
                    at: 0.0,
                }
            }
            EventFunctional::StateDependentHawkes { nu, kernel } => CompKind::HawkesGeneric {
                nu,
                kernel,
                seen: model.initial.initial().to_vec(),
            },
            EventFunctional::CountDominated { rate, .. } => CompKind::Count {
                rate: rate.clone(),
                count: model.initial.initial().len() as u64,
            },
        };
        Self {
            model,
            kind,
            current_state,
        }
    }

    /// Add `integral of weight(e) * lambda_bar(e | s) ds` over `(from, to)`
    /// (no events inside) into `out[e]`.
    fn integrate_segment(&mut self, from: f64, to: f64, out: &mut [f64]) {
        debug_assert!(to >= from);
        let dt = to - from;
        let d = out.len();
        match &mut self.kind {
            CompKind::Constant { nu } => {
                for e in 0..d {
                    out[e] += self.model.events.weight(e) * nu[e] * dt;
                }
            }
            CompKind::Markov { rates, relative } => {
                let c = rates.eval(&self.current_state);
                for e in 0..d {
                    out[e] += self.model.events.weight(e) * c * relative[e] * dt;
                }
            }
            CompKind::HawkesExp {
                nu,
                beta,
                excess,
                at,
                ..
            } => {
                debug_assert_eq!(*at, from);
                let decay = (-*beta * dt).exp();
                for e in 0..d {
                    let seg = nu[e] * dt + excess[e] * (1.0 - decay) / *beta;
                    out[e] += self.model.events.weight(e) * seg;
                    excess[e] *= decay;
                }
                *at = to;
            }
            CompKind::HawkesGeneric { nu, kernel, seen } => {
                for e in 0..d {
                    let mut seg = nu[e] * dt;
                    for rec in seen.iter() {
                        seg += kernel.integral_range(from - rec.time, to - rec.time, &rec.mark, e);
                    }
                    out[e] += self.model.events.weight(e) * seg;
                }
            }
            CompKind::Count { rate, count } => {
                let a = rate.eval(*count);
                for e in 0..d {
                    out[e] += self.model.events.weight(e) * a * dt;
                }
            }
        }
    }

    /// Advance past a segment without recording its integral.
    fn skip_segment(&mut self, from: f64, to: f64, scratch: &mut [f64]) {
        scratch.iter_mut().for_each(|v| *v = 0.0);
        self.integrate_segment(from, to, scratch);
        scratch.iter_mut().for_each(|v| *v = 0.0);
    }

    fn on_event(&mut self, rec: &EventRecord) {
        self.current_state = rec.mark.state;
        match &mut self.kind {
            CompKind::HawkesExp {
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
            CompKind::HawkesGeneric { seen, .. } => seen.push(*rec),
            CompKind::Count { count, .. } => *count += 1,
            _ => {}
        }
    }
}

/// Exact compensator increment `integral of weight(e) * lambda_bar(e | s) ds`
/// over `(from, to]` for one event type. Additive across adjacent
/// intervals by construction.
pub fn compensator_increment(
    model: &ModelSpec,
    traj: &Trajectory,
    event: EventIndex,
    from: f64,
    to: f64,
) -> Result<f64, ValidationError> {
    assert!(from >= 0.0 && to >= from, "interval must lie in [0, inf)");
    model.validate()?;
    let d = model.events.len();
    let mut comp = Compensator::new(model);
    let mut out = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut cursor = 0.0;
    for rec in traj.events() {
        if rec.time > to {
            break;
        }
        let lo = cursor;
        let hi = rec.time;
        if hi <= from {
            comp.skip_segment(lo, hi, &mut scratch);
        } else if lo < from {
            comp.skip_segment(lo, from, &mut scratch);
            comp.integrate_segment(from, hi, &mut out);
        } else {
            comp.integrate_segment(lo, hi, &mut out);
        }
        comp.on_event(rec);
        cursor = rec.time;
    }
    if cursor < to {
        if cursor < from {
            comp.skip_segment(cursor, from, &mut scratch);
            cursor = from;
        }
        comp.integrate_segment(cursor, to, &mut out);
    }
    Ok(out[event])
}

/// Residuals for one event type.
#[derive(Debug, Clone, Serialize)]
pub struct TypeResiduals {
    pub event: EventIndex,
    pub residuals: Vec<f64>,
    pub ks: Option<KsOutcome>,
    /// False when the type saw fewer than [`MIN_EVENTS_PER_TYPE`] events;
    /// the KS verdict is then reported but not trusted.
    pub reliable: bool,
}

/// Per-type time-rescaling residuals with their KS verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualSet {
    pub level: f64,
    pub per_type: Vec<TypeResiduals>,
}

impl ResidualSet {
    /// `Some(pass)` when every type is reliable; `None` when any type is
    /// unreliable (inconclusive).
    pub fn verdict(&self) -> Option<bool> {
        if self.per_type.iter().any(|t| !t.reliable) {
            return None;
        }
        Some(
            self.per_type
                .iter()
                .all(|t| t.ks.map(|k| k.pass).unwrap_or(false)),
        )
    }
}

/// Time-rescaling residuals of a trajectory under a model: for each type
/// `e`, the compensator increments between consecutive type-`e` events.
/// Under the generating model these are i.i.d. unit exponentials.
pub fn rescaled_residuals(
    traj: &Trajectory,
    model: &ModelSpec,
    level: f64,
) -> Result<ResidualSet, ValidationError> {
    model.validate()?;
    ks_constant(level)?;
    let d = model.events.len();
    let mut comp = Compensator::new(model);
    let mut acc = vec![0.0; d];
    let mut seen = vec![false; d];
    let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut counts = vec![0usize; d];
    let mut cursor = 0.0;
    for rec in traj.events() {
        comp.integrate_segment(cursor, rec.time, &mut acc);
        let e = rec.mark.event;
        counts[e] += 1;
        if seen[e] {
            residuals[e].push(acc[e]);
        }
        acc[e] = 0.0;
        seen[e] = true;
        comp.on_event(rec);
        cursor = rec.time;
    }
    let per_type = residuals
        .into_iter()
        .enumerate()
        .map(|(e, values)| {
            let reliable = counts[e] >= MIN_EVENTS_PER_TYPE;
            let ks = if values.is_empty() {
                None
            } else {
                Some(ks_exp1(&values, level)?)
            };
            Ok(TypeResiduals {
                event: e,
                residuals: values,
                ks,
                reliable,
            })
        })
        .collect::<Result<Vec<_>, ValidationError>>()?;
    Ok(ResidualSet { level, per_type })
}

/// Chi-square report for one `(state, event)` conditioning cell.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionCellReport {
    pub state: usize,
    pub event: EventIndex,
    pub n: usize,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
    pub statistic: f64,
    pub dof: usize,
    /// True when the cell had too few observations to form two pooled
    /// buckets and was excluded from the aggregate.
    pub skipped: bool,
}

/// Aggregate chi-square test of next-state frequencies against the
/// transition table.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionTestReport {
    pub level: f64,
    pub cells: Vec<TransitionCellReport>,
    pub statistic: f64,
    pub dof: usize,
    pub threshold: f64,
    pub pass: bool,
}

/// Minimum expected count per pooled chi-square bucket.
const MIN_EXPECTED: f64 = 5.0;

fn cell_chi_square(observed: &[u64], expected: &[f64]) -> (f64, usize, bool) {
    // Drop impossible states with no observations; an observation in an
    // impossible state is an immediate, infinitely strong rejection.
    let mut buckets: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    for (o, e) in observed.iter().zip(expected) {
        if *e == 0.0 {
            if *o > 0 {
                return (f64::INFINITY, 1, false);
            }
            continue;
        }
        buckets.push((*o as f64, *e));
    }
    // Pool smallest-expected buckets until all meet the minimum.
    buckets.sort_by(|a, b| a.1.total_cmp(&b.1));
    while buckets.len() >= 2 && buckets[0].1 < MIN_EXPECTED {
        let (o0, e0) = buckets.remove(0);
        buckets[0].0 += o0;
        buckets[0].1 += e0;
        buckets.sort_by(|a, b| a.1.total_cmp(&b.1));
    }
    if buckets.len() < 2 {
        // Deterministic row or not enough mass to test: no degrees of
        // freedom; skipped unless the single bucket holds real mass.
        let skipped = buckets.first().map(|b| b.1 < MIN_EXPECTED).unwrap_or(true);
        return (0.0, 0, skipped);
    }
    let statistic = buckets
        .iter()
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum::<f64>();
    (statistic, buckets.len() - 1, false)
}

/// Count empirical `(state before, event, state after)` triples over the
/// simulated segment and test them against the transition table.
pub fn transition_frequency_test(
    traj: &Trajectory,
    model: &ModelSpec,
    level: f64,
) -> Result<TransitionTestReport, ValidationError> {
    model.validate()?;
    ks_constant(level)?;
    let table = match &model.transition {
        TransitionFunction::DiscreteTable(t) => t,
        TransitionFunction::ContinuousFamily(_) => {
            return Err(ValidationError::DiscreteStateRequired)
        }
    };
    let num_states = table.num_states();
    let d = model.events.len();
    let mut counts = vec![vec![vec![0u64; num_states]; d]; num_states];
    let mut current = traj
        .initial()
        .last()
        .map(|r| r.mark.state)
        .unwrap_or(traj.origin_state());
    for rec in traj.events() {
        let x = current
            .discrete()
            .ok_or(ValidationError::DiscreteStateRequired)?;
        let x_next = rec
            .mark
            .state
            .discrete()
            .ok_or(ValidationError::DiscreteStateRequired)?;
        counts[x][rec.mark.event][x_next] += 1;
        current = rec.mark.state;
    }
    let mut cells = Vec::new();
    let mut statistic = 0.0;
    let mut dof = 0;
    for x in 0..num_states {
        for e in 0..d {
            let observed = &counts[x][e];
            let n: u64 = observed.iter().sum();
            if n == 0 {
                continue;
            }
            let expected: Vec<f64> = table.row(x, e).iter().map(|p| p * n as f64).collect();
            let (cell_stat, cell_dof, skipped) = cell_chi_square(observed, &expected);
            if !skipped {
                statistic += cell_stat;
                dof += cell_dof;
            }
            cells.push(TransitionCellReport {
                state: x,
                event: e,
                n: n as usize,
                observed: observed.clone(),
                expected,
                statistic: cell_stat,
                dof: cell_dof,
                skipped,
            });
        }
    }
    let (threshold, pass) = if dof == 0 {
        (0.0, statistic == 0.0)
    } else {
        let dist = ChiSquared::new(dof as f64).expect("positive dof");
        let threshold = dist.inverse_cdf(1.0 - level);
        (threshold, statistic <= threshold)
    };
    Ok(TransitionTestReport {
        level,
        cells,
        statistic,
        dof,
        threshold,
        pass,
    })
}

/// Stationary distribution of the finite-state chain with per-state exit
/// rates `c(x)` and single-event transition rows `rows[x][x']`: solves the
/// global balance equations with the normalization constraint.
pub fn ctmc_stationary_oracle(
    rates: &[f64],
    rows: &[Vec<f64>],
) -> Result<Vec<f64>, ValidationError> {
    let s = rates.len();
    assert!(s > 0 && rows.len() == s && rows.iter().all(|r| r.len() == s));
    // A[y][x] = Q(x, y); the last balance row is replaced by sum(pi) = 1.
    let mut a = vec![vec![0.0; s]; s];
    for x in 0..s {
        for y in 0..s {
            a[y][x] = if x == y {
                -rates[x] * (1.0 - rows[x][x])
            } else {
                rates[x] * rows[x][y]
            };
        }
    }
    for x in 0..s {
        a[s - 1][x] = 1.0;
    }
    let mut b = vec![0.0; s];
    b[s - 1] = 1.0;
    let pi = solve_linear(a, b).ok_or(ValidationError::SingularSystem)?;
    if pi.iter().any(|p| *p < -1e-9) {
        return Err(ValidationError::SingularSystem);
    }
    Ok(pi.into_iter().map(|p| p.max(0.0)).collect())
}

/// Expected stationary per-type intensities of a stable self-exciting
/// model with a state-independent kernel: solves `m = nu + K^T m` with
/// `K(e', e) = weight(e') * integral of k(., e', e)`.
pub fn hawkes_mean_rate_oracle(
    nu: &[f64],
    kernel: &Kernel,
    model: &ModelSpec,
) -> Result<Vec<f64>, ValidationError> {
    if let Kernel::Exponential { alpha, .. } | Kernel::PowerLaw { alpha, .. } = kernel {
        if alpha.source_states() != 1 {
            return Err(ValidationError::Model(FunctionalError::InvalidModel(
                "first-moment oracle requires a state-independent kernel".into(),
            )));
        }
    }
    let branching = branching_ratio(kernel, &model.events, &model.states)?;
    if branching.rho >= 1.0 {
        return Err(ValidationError::UnstableModel { rho: branching.rho });
    }
    let d = nu.len();
    // (I - K^T) m = nu.
    let mut a = vec![vec![0.0; d]; d];
    for target in 0..d {
        for source in 0..d {
            let k = model.events.weight(source)
                * dominating_kernel_integral(kernel, &model.states, source, target)?;
            a[target][source] = if source == target { 1.0 - k } else { -k };
        }
    }
    solve_linear(a, nu.to_vec()).ok_or(ValidationError::SingularSystem)
}

/// Moment comparison for a compound-sum state process: `X_T - X_0` has
/// mean `nu * T * E[J]` and variance `nu * T * E[J^2]`.
#[derive(Debug, Clone, Serialize)]
pub struct CompoundPoissonReport {
    pub runs: usize,
    pub expected_mean: f64,
    pub expected_var: f64,
    pub empirical_mean: f64,
    pub empirical_var: f64,
    /// Standardized deviation of the empirical mean (zero when the
    /// expected variance is zero).
    pub mean_z: f64,
    /// Ratio of empirical to expected variance (one when both are zero).
    pub var_ratio: f64,
}

pub fn compound_poisson_check(
    increments: &[f64],
    nu: f64,
    jump_mean: f64,
    jump_var: f64,
    horizon: f64,
) -> CompoundPoissonReport {
    let n = increments.len();
    assert!(n >= 2, "need at least two runs");
    let expected_mean = nu * horizon * jump_mean;
    let expected_var = nu * horizon * (jump_var + jump_mean * jump_mean);
    let empirical_mean = increments.iter().sum::<f64>() / n as f64;
    let empirical_var = increments
        .iter()
        .map(|x| (x - empirical_mean) * (x - empirical_mean))
        .sum::<f64>()
        / (n - 1) as f64;
    let mean_z = if expected_var > 0.0 {
        (empirical_mean - expected_mean) / (expected_var / n as f64).sqrt()
    } else {
        0.0
    };
    let var_ratio = if expected_var > 0.0 {
        empirical_var / expected_var
    } else if empirical_var == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    CompoundPoissonReport {
        runs: n,
        expected_mean,
        expected_var,
        empirical_mean,
        empirical_var,
        mean_z,
        var_ratio,
    }
}

/// Time-weighted fraction of `(0, horizon]` spent in each discrete state.
pub fn state_occupancy(traj: &Trajectory, num_states: usize, horizon: f64) -> Vec<f64> {
    let mut occupancy = vec![0.0; num_states];
    let mut current = traj
        .initial()
        .last()
        .map(|r| r.mark.state)
        .unwrap_or(traj.origin_state());
    let mut cursor = 0.0;
    for rec in traj.events() {
        if rec.time > horizon {
            break;
        }
        if let Some(x) = current.discrete() {
            occupancy[x] += rec.time - cursor;
        }
        current = rec.mark.state;
        cursor = rec.time;
    }
    if let Some(x) = current.discrete() {
        occupancy[x] += horizon - cursor;
    }
    occupancy.iter_mut().for_each(|o| *o /= horizon);
    occupancy
}

/// `X_horizon - X_0` for a continuous-state trajectory.
pub fn state_increment(traj: &Trajectory) -> Option<f64> {
    let x0 = traj
        .initial()
        .last()
        .map(|r| r.mark.state)
        .unwrap_or(traj.origin_state())
        .continuous()?;
    let x_t = traj
        .events()
        .last()
        .map(|r| r.mark.state)
        .unwrap_or(StateValue::Continuous(x0))
        .continuous()?;
    Some(x_t - x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{DiscreteTable, EventSpace, StateSpace};
    use crate::rng::SimRng;
    use crate::simulator::{simulate, SimConfig};
    use crate::types::Mark;

    fn constant_model(nu: Vec<f64>) -> ModelSpec {
        let d = nu.len();
        ModelSpec {
            events: EventSpace::uniform(d),
            states: StateSpace::discrete(1),
            transition: TransitionFunction::DiscreteTable(DiscreteTable::identity(1, d)),
            functional: EventFunctional::ConstantRate { nu },
            initial: Trajectory::empty(StateValue::Discrete(0)),
        }
    }

    #[test]
    fn constant_rate_residuals_scale_gaps() {
        let model = constant_model(vec![1.7]);
        let times = [0.4, 1.1, 1.35, 2.0, 3.25];
        let traj = Trajectory::new(
            vec![],
            times
                .iter()
                .map(|t| EventRecord::new(*t, Mark::new(0, StateValue::Discrete(0))))
                .collect(),
            StateValue::Discrete(0),
        )
        .unwrap();
        let set = rescaled_residuals(&traj, &model, 0.05).unwrap();
        let got = &set.per_type[0].residuals;
        assert_eq!(got.len(), times.len() - 1);
        for (i, r) in got.iter().enumerate() {
            let expected = 1.7 * (times[i + 1] - times[i]);
            assert!((r - expected).abs() < 1e-12);
        }
        assert!(!set.per_type[0].reliable); // far fewer than 50 events
        assert_eq!(set.verdict(), None);
    }

    #[test]
    fn residual_counts_conserved_per_type() {
        let model = constant_model(vec![1.0, 2.0]);
        let result = simulate(&model, &SimConfig::new(200.0, 8)).unwrap();
        let set = rescaled_residuals(&result.trajectory, &model, 0.01).unwrap();
        for t in &set.per_type {
            let events_of_type = result
                .trajectory
                .events()
                .iter()
                .filter(|r| r.mark.event == t.event)
                .count();
            assert_eq!(t.residuals.len(), events_of_type.saturating_sub(1));
        }
    }

    #[test]
    fn ks_accepts_unit_exponentials() {
        let mut rng = SimRng::new(12);
        let mut passes = 0;
        let reps = 200;
        for _ in 0..reps {
            let values: Vec<f64> = (0..10_000).map(|_| rng.exponential(1.0)).collect();
            if ks_exp1(&values, 0.01).unwrap().pass {
                passes += 1;
            }
        }
        // True pass rate is 99%; 191 is five sigma below.
        assert!(passes >= 191, "pass rate {passes}/200");
    }

    #[test]
    fn ks_rejects_wrong_rate() {
        let mut rng = SimRng::new(13);
        for _ in 0..200 {
            let values: Vec<f64> = (0..10_000).map(|_| rng.exponential(2.0)).collect();
            assert!(!ks_exp1(&values, 0.01).unwrap().pass);
        }
    }

    #[test]
    fn ks_degenerate_zeros_fail() {
        let outcome = ks_exp1(&[0.0, 0.0, 0.0], 0.05).unwrap();
        assert!((outcome.statistic - 1.0).abs() < 1e-15);
        assert!(!outcome.pass);
    }

    #[test]
    fn unsupported_level_rejected() {
        assert!(matches!(
            ks_exp1(&[1.0], 0.10),
            Err(ValidationError::UnsupportedLevel(_))
        ));
    }

    #[test]
    fn compensator_additive_across_splits() {
        let model = ModelSpec {
            functional: EventFunctional::StateDependentHawkes {
                nu: vec![0.8],
                kernel: Kernel::Exponential {
                    alpha: AlphaTensor::scalar(0.5),
                    beta: 1.3,
                },
            },
            ..constant_model(vec![0.0])
        };
        let result = simulate(&model, &SimConfig::new(50.0, 3)).unwrap();
        let traj = &result.trajectory;
        for (a, b, c) in [(0.0, 10.0, 50.0), (5.0, 25.5, 40.0), (0.0, 0.5, 1.0)] {
            let whole = compensator_increment(&model, traj, 0, a, c).unwrap();
            let left = compensator_increment(&model, traj, 0, a, b).unwrap();
            let right = compensator_increment(&model, traj, 0, b, c).unwrap();
            assert!(
                (whole - (left + right)).abs() <= 1e-10 * whole.max(1.0),
                "{whole} vs {left} + {right}"
            );
        }
    }

    #[test]
    fn deterministic_rows_give_zero_statistic() {
        // Flip chain: always moves to the other state.
        let flip = DiscreteTable::new(vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]]).unwrap();
        let model = ModelSpec {
            events: EventSpace::uniform(1),
            states: StateSpace::discrete(2),
            transition: TransitionFunction::DiscreteTable(flip),
            functional: EventFunctional::ConstantRate { nu: vec![1.0] },
            initial: Trajectory::empty(StateValue::Discrete(0)),
        };
        let result = simulate(&model, &SimConfig::new(100.0, 5)).unwrap();
        let report = transition_frequency_test(&result.trajectory, &model, 0.01).unwrap();
        assert_eq!(report.statistic, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn swapped_rows_rejected() {
        let table =
            DiscreteTable::new(vec![vec![vec![0.3, 0.7]], vec![vec![0.8, 0.2]]]).unwrap();
        let model = ModelSpec {
            events: EventSpace::uniform(1),
            states: StateSpace::discrete(2),
            transition: TransitionFunction::DiscreteTable(table),
            functional: EventFunctional::ConstantRate { nu: vec![2.0] },
            initial: Trajectory::empty(StateValue::Discrete(0)),
        };
        let result = simulate(&model, &SimConfig::new(2000.0, 17)).unwrap();
        // Matched table passes.
        let matched = transition_frequency_test(&result.trajectory, &model, 0.01).unwrap();
        assert!(matched.pass, "statistic {}", matched.statistic);
        // Swapped rows fail hard.
        let swapped = ModelSpec {
            transition: TransitionFunction::DiscreteTable(
                DiscreteTable::new(vec![vec![vec![0.8, 0.2]], vec![vec![0.3, 0.7]]]).unwrap(),
            ),
            ..model
        };
        let report = transition_frequency_test(&result.trajectory, &swapped, 0.01).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn ctmc_oracle_two_state() {
        // pi_0 * c_0 = pi_1 * c_1 for the flip chain.
        let flip = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let pi = ctmc_stationary_oracle(&[1.0, 2.0], &flip).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-12);
        let sym = ctmc_stationary_oracle(&[1.0, 1.0], &flip).unwrap();
        assert!((sym[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ctmc_oracle_reducible_chain_is_singular() {
        // Two absorbing states never communicate.
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            ctmc_stationary_oracle(&[1.0, 1.0], &id),
            Err(ValidationError::SingularSystem)
        ));
    }

    #[test]
    fn hawkes_oracle_one_and_two_types() {
        let model1 = constant_model(vec![0.0]);
        let kernel1 = Kernel::Exponential {
            alpha: AlphaTensor::scalar(0.5),
            beta: 1.0,
        };
        let m = hawkes_mean_rate_oracle(&[1.0], &kernel1, &model1).unwrap();
        assert!((m[0] - 2.0).abs() < 1e-12);

        let zero = Kernel::Exponential {
            alpha: AlphaTensor::scalar(0.0),
            beta: 1.0,
        };
        let m = hawkes_mean_rate_oracle(&[1.3], &zero, &model1).unwrap();
        assert!((m[0] - 1.3).abs() < 1e-12);

        // Two types, alpha [[0.2, 0.3], [0.4, 0.1]], nu = (1, 1).
        // Solving m = nu + K^T m by hand:
        //   0.8 m0 - 0.4 m1 = 1 and -0.3 m0 + 0.9 m1 = 1
        // gives m = (13/6, 11/6).
        let model2 = constant_model(vec![0.0, 0.0]);
        let kernel2 = Kernel::Exponential {
            alpha: AlphaTensor::from_event_matrix(vec![vec![0.2, 0.3], vec![0.4, 0.1]]).unwrap(),
            beta: 2.0,
        };
        let m = hawkes_mean_rate_oracle(&[1.0, 1.0], &kernel2, &model2).unwrap();
        assert!((m[0] - 13.0 / 6.0).abs() < 1e-12);
        assert!((m[1] - 11.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn hawkes_oracle_unstable_detected() {
        let model = constant_model(vec![0.0]);
        let kernel = Kernel::Exponential {
            alpha: AlphaTensor::scalar(1.2),
            beta: 1.0,
        };
        assert!(matches!(
            hawkes_mean_rate_oracle(&[1.0], &kernel, &model),
            Err(ValidationError::UnstableModel { .. })
        ));
    }

    #[test]
    fn compound_report_zero_rate_and_moments() {
        let report = compound_poisson_check(&[0.0, 0.0, 0.0], 0.0, 1.0, 1.0, 10.0);
        assert_eq!(report.empirical_mean, 0.0);
        assert_eq!(report.expected_mean, 0.0);
        assert_eq!(report.var_ratio, 1.0);

        let report = compound_poisson_check(&[1.0, 3.0, 2.0, 2.0], 2.0, 0.0, 1.0, 1.0);
        assert!((report.expected_var - 2.0).abs() < 1e-12);
        assert!((report.empirical_mean - 2.0).abs() < 1e-12);
    }

    #[test]
    fn occupancy_sums_to_one() {
        let flip = DiscreteTable::new(vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]]).unwrap();
        let model = ModelSpec {
            events: EventSpace::uniform(1),
            states: StateSpace::discrete(2),
            transition: TransitionFunction::DiscreteTable(flip),
            functional: EventFunctional::MarkovRate {
                rates: StateRates::PerState(vec![1.0, 2.0]),
                relative: vec![1.0],
            },
            initial: Trajectory::empty(StateValue::Discrete(0)),
        };
        let result = simulate(&model, &SimConfig::new(500.0, 11)).unwrap();
        let occ = state_occupancy(&result.trajectory, 2, 500.0);
        assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Rough agreement with the balance oracle at this short horizon.
        assert!((occ[0] - 2.0 / 3.0).abs() < 0.1, "occupancy {occ:?}");
    }
}
