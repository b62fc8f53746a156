//! Model configuration documents.
//!
//! A config is a single TOML document with a `[model]` section (spaces,
//! functional, transition, initial condition) and optional `[run]` and
//! `[validate]` sections. Unknown keys are rejected with the path of the
//! offending key. The model hash recorded in trace headers is a SHA-256
//! digest of the re-serialized (hence key-order-independent) model
//! section.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::functionals::{
    gaussian_increment_family, AlphaTensor, BirthRate, DiscreteTable, EventFunctional, EventSpace,
    FunctionalError, Kernel, ModelSpec, StateRates, StateSpace, TransitionFunction,
};
use crate::types::{EventRecord, Mark, StateValue, Trajectory, TrajectoryError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] FunctionalError),
    #[error("invalid initial condition: {0}")]
    Initial(#[from] TrajectoryError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub model: ModelSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub validate: ValidateSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub events: EventsSection,
    pub state: StateSection,
    pub functional: FunctionalSection,
    pub transition: TransitionSection,
    #[serde(default)]
    pub initial: InitialSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventsSection {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSection {
    pub kind: SpaceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub origin: StateLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceKind {
    Discrete,
    Continuous,
}

/// A state in config or trace notation: an index for discrete spaces, a
/// real value for continuous ones.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateLiteral {
    Index(u64),
    Value(f64),
}

impl StateLiteral {
    fn to_state(self, kind: SpaceKind, context: &str) -> Result<StateValue, ConfigError> {
        match (kind, self) {
            (SpaceKind::Discrete, StateLiteral::Index(i)) => Ok(StateValue::Discrete(i as usize)),
            (SpaceKind::Discrete, StateLiteral::Value(_)) => Err(invalid(format!(
                "{context}: discrete state must be an integer index"
            ))),
            (SpaceKind::Continuous, StateLiteral::Value(v)) => Ok(StateValue::Continuous(v)),
            (SpaceKind::Continuous, StateLiteral::Index(i)) => {
                Ok(StateValue::Continuous(i as f64))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalSection {
    pub kind: FunctionalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub birth: Option<BirthSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionalKind {
    Constant,
    MarkovRate,
    Hawkes,
    CountDominated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub kind: KernelKind,
    pub alpha: AlphaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Exponential,
    PowerLaw,
}

/// Excitation coefficients in any of three shapes: a scalar (one type,
/// state-independent), a matrix `[source event][target event]`, or the
/// full tensor `[source event][source state][target event]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
    Tensor(Vec<Vec<Vec<f64>>>),
}

impl AlphaSpec {
    fn to_tensor(&self) -> Result<AlphaTensor, ConfigError> {
        Ok(match self {
            AlphaSpec::Scalar(v) => {
                if !v.is_finite() || *v < 0.0 {
                    return Err(invalid(
                        "model.functional.kernel.alpha must be non-negative and finite",
                    ));
                }
                AlphaTensor::scalar(*v)
            }
            AlphaSpec::Matrix(m) => AlphaTensor::from_event_matrix(m.clone())?,
            AlphaSpec::Tensor(t) => AlphaTensor::new(t.clone())?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirthSection {
    pub kind: BirthKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BirthKind {
    Constant,
    Power,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSection {
    pub kind: TransitionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionKind {
    Table,
    GaussianIncrement,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub records: Vec<RecordSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSpec {
    pub time: f64,
    pub event: usize,
    pub state: StateLiteral,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub seed_range: Option<String>,
    #[serde(default)]
    pub max_events: Option<usize>,
    #[serde(default)]
    pub max_candidates: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default = "default_tests")]
    pub tests: Vec<ValidateTest>,
    #[serde(default = "default_level")]
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidateTest {
    Residuals,
    Transitions,
}

fn default_tests() -> Vec<ValidateTest> {
    vec![ValidateTest::Residuals, ValidateTest::Transitions]
}

fn default_level() -> f64 {
    0.01
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            tests: default_tests(),
            level: default_level(),
        }
    }
}

/// Parse a config document from TOML text.
pub fn parse_config(text: &str) -> Result<ConfigDocument, ConfigError> {
    Ok(toml::from_str(text)?)
}

/// Load a config document from a file.
pub fn load_config(path: &Path) -> Result<ConfigDocument, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// Inclusive seed range in `A..B` notation.
pub fn parse_seed_range(text: &str) -> Result<Vec<u64>, ConfigError> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| invalid(format!("seed range {text:?} is not of the form A..B")))?;
    let a: u64 = a
        .trim()
        .parse()
        .map_err(|_| invalid(format!("bad seed range start {a:?}")))?;
    let b: u64 = b
        .trim()
        .parse()
        .map_err(|_| invalid(format!("bad seed range end {b:?}")))?;
    if b < a {
        return Err(invalid(format!("empty seed range {text:?}")));
    }
    Ok((a..=b).collect())
}

impl ConfigDocument {
    /// Seeds requested by the run section (`seed`, `seeds`, `seed_range`);
    /// defaults to the single seed 0.
    pub fn seeds(&self) -> Result<Vec<u64>, ConfigError> {
        let mut out = Vec::new();
        if let Some(s) = self.run.seed {
            out.push(s);
        }
        if let Some(list) = &self.run.seeds {
            out.extend(list);
        }
        if let Some(range) = &self.run.seed_range {
            out.extend(parse_seed_range(range)?);
        }
        if out.is_empty() {
            out.push(0);
        }
        Ok(out)
    }
}

/// SHA-256 digest of the canonically re-serialized model section. Key
/// order in the source document does not affect the digest.
pub fn model_hash(doc: &ConfigDocument) -> String {
    let canonical =
        toml::to_string(&doc.model).expect("model section re-serialization cannot fail");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Build a validated [`ModelSpec`] from the model section.
pub fn build_model(doc: &ConfigDocument) -> Result<ModelSpec, ConfigError> {
    let m = &doc.model;
    let d = m.events.count;
    if d == 0 {
        return Err(invalid("model.events.count must be at least 1"));
    }
    let events = match &m.events.weights {
        Some(w) => {
            if w.len() != d {
                return Err(invalid(format!(
                    "model.events.weights has {} entries for {d} types",
                    w.len()
                )));
            }
            EventSpace::with_weights(w.clone())?
        }
        None => EventSpace::uniform(d),
    };

    let states = match m.state.kind {
        SpaceKind::Discrete => {
            let size = m
                .state
                .size
                .ok_or_else(|| invalid("model.state.size is required for discrete state spaces"))?;
            if size == 0 {
                return Err(invalid("model.state.size must be at least 1"));
            }
            match &m.state.weights {
                Some(w) => {
                    if w.len() != size {
                        return Err(invalid(format!(
                            "model.state.weights has {} entries for {size} states",
                            w.len()
                        )));
                    }
                    if w.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                        return Err(invalid("model.state.weights must be positive"));
                    }
                    StateSpace::Discrete { weights: w.clone() }
                }
                None => StateSpace::discrete(size),
            }
        }
        SpaceKind::Continuous => {
            if m.state.size.is_some() || m.state.weights.is_some() {
                return Err(invalid(
                    "model.state.size/weights do not apply to continuous state spaces",
                ));
            }
            StateSpace::Continuous
        }
    };
    let origin = m.state.origin.to_state(m.state.kind, "model.state.origin")?;

    let f = &m.functional;
    let require_absent = |present: bool, field: &str, kind: &str| {
        if present {
            Err(invalid(format!(
                "model.functional.{field} does not apply to kind {kind:?}"
            )))
        } else {
            Ok(())
        }
    };
    let check_nu = |nu: &Vec<f64>| {
        if nu.len() != d {
            return Err(invalid(format!(
                "model.functional.nu has {} entries for {d} types",
                nu.len()
            )));
        }
        if nu.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("model.functional.nu must be non-negative"));
        }
        Ok(())
    };
    let functional = match f.kind {
        FunctionalKind::Constant => {
            require_absent(f.rates.is_some(), "rates", "constant")?;
            require_absent(f.relative.is_some(), "relative", "constant")?;
            require_absent(f.kernel.is_some(), "kernel", "constant")?;
            require_absent(f.birth.is_some(), "birth", "constant")?;
            let nu = f
                .nu
                .clone()
                .ok_or_else(|| invalid("model.functional.nu is required for kind \"constant\""))?;
            check_nu(&nu)?;
            EventFunctional::ConstantRate { nu }
        }
        FunctionalKind::MarkovRate => {
            require_absent(f.nu.is_some(), "nu", "markov-rate")?;
            require_absent(f.kernel.is_some(), "kernel", "markov-rate")?;
            require_absent(f.birth.is_some(), "birth", "markov-rate")?;
            let rates = f.rates.clone().ok_or_else(|| {
                invalid("model.functional.rates is required for kind \"markov-rate\"")
            })?;
            if rates.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(invalid("model.functional.rates must be positive"));
            }
            let relative = f.relative.clone().unwrap_or_else(|| vec![1.0; d]);
            if relative.len() != d {
                return Err(invalid(format!(
                    "model.functional.relative has {} entries for {d} types",
                    relative.len()
                )));
            }
            EventFunctional::MarkovRate {
                rates: StateRates::PerState(rates),
                relative,
            }
        }
        FunctionalKind::Hawkes => {
            require_absent(f.rates.is_some(), "rates", "hawkes")?;
            require_absent(f.relative.is_some(), "relative", "hawkes")?;
            require_absent(f.birth.is_some(), "birth", "hawkes")?;
            let nu = f
                .nu
                .clone()
                .ok_or_else(|| invalid("model.functional.nu is required for kind \"hawkes\""))?;
            check_nu(&nu)?;
            let k = f.kernel.as_ref().ok_or_else(|| {
                invalid("model.functional.kernel is required for kind \"hawkes\"")
            })?;
            let alpha = k.alpha.to_tensor()?;
            let kernel = match k.kind {
                KernelKind::Exponential => {
                    if k.exponent.is_some() || k.cutoff.is_some() {
                        return Err(invalid(
                            "model.functional.kernel.exponent/cutoff do not apply to kind \
                             \"exponential\"",
                        ));
                    }
                    let beta = k.beta.ok_or_else(|| {
                        invalid("model.functional.kernel.beta is required for kind \"exponential\"")
                    })?;
                    Kernel::Exponential { alpha, beta }
                }
                KernelKind::PowerLaw => {
                    if k.beta.is_some() {
                        return Err(invalid(
                            "model.functional.kernel.beta does not apply to kind \"power-law\"",
                        ));
                    }
                    let exponent = k.exponent.ok_or_else(|| {
                        invalid("model.functional.kernel.exponent is required for kind \"power-law\"")
                    })?;
                    let cutoff = k.cutoff.ok_or_else(|| {
                        invalid("model.functional.kernel.cutoff is required for kind \"power-law\"")
                    })?;
                    Kernel::PowerLaw {
                        alpha,
                        exponent,
                        cutoff,
                    }
                }
            };
            EventFunctional::StateDependentHawkes { nu, kernel }
        }
        FunctionalKind::CountDominated => {
            require_absent(f.nu.is_some(), "nu", "count-dominated")?;
            require_absent(f.rates.is_some(), "rates", "count-dominated")?;
            require_absent(f.relative.is_some(), "relative", "count-dominated")?;
            require_absent(f.kernel.is_some(), "kernel", "count-dominated")?;
            let b = f.birth.as_ref().ok_or_else(|| {
                invalid("model.functional.birth is required for kind \"count-dominated\"")
            })?;
            let rate = match b.kind {
                BirthKind::Constant => {
                    if b.scale.is_some() || b.exponent.is_some() {
                        return Err(invalid(
                            "model.functional.birth.scale/exponent do not apply to kind \
                             \"constant\"",
                        ));
                    }
                    BirthRate::Constant(b.value.ok_or_else(|| {
                        invalid("model.functional.birth.value is required for kind \"constant\"")
                    })?)
                }
                BirthKind::Power => {
                    if b.value.is_some() {
                        return Err(invalid(
                            "model.functional.birth.value does not apply to kind \"power\"",
                        ));
                    }
                    BirthRate::Power {
                        scale: b.scale.unwrap_or(1.0),
                        exponent: b.exponent.ok_or_else(|| {
                            invalid(
                                "model.functional.birth.exponent is required for kind \"power\"",
                            )
                        })?,
                    }
                }
            };
            EventFunctional::CountDominated { rate, num_types: d }
        }
    };

    let transition = match m.transition.kind {
        TransitionKind::Table => {
            if m.transition.mean.is_some() || m.transition.sigma.is_some() {
                return Err(invalid(
                    "model.transition.mean/sigma do not apply to kind \"table\"",
                ));
            }
            let probs = m.transition.probs.clone().ok_or_else(|| {
                invalid("model.transition.probs is required for kind \"table\"")
            })?;
            TransitionFunction::DiscreteTable(DiscreteTable::new(probs)?)
        }
        TransitionKind::GaussianIncrement => {
            if m.transition.probs.is_some() {
                return Err(invalid(
                    "model.transition.probs does not apply to kind \"gaussian-increment\"",
                ));
            }
            let mean = m.transition.mean.unwrap_or(0.0);
            let sigma = m.transition.sigma.ok_or_else(|| {
                invalid("model.transition.sigma is required for kind \"gaussian-increment\"")
            })?;
            if !sigma.is_finite() || sigma <= 0.0 {
                return Err(invalid("model.transition.sigma must be positive"));
            }
            TransitionFunction::ContinuousFamily(gaussian_increment_family(mean, sigma))
        }
    };

    let mut initial_records = Vec::with_capacity(m.initial.records.len());
    for (i, rec) in m.initial.records.iter().enumerate() {
        let state = rec
            .state
            .to_state(m.state.kind, &format!("model.initial.records[{i}].state"))?;
        initial_records.push(EventRecord::new(rec.time, Mark::new(rec.event, state)));
    }
    let initial = Trajectory::new(initial_records, Vec::new(), origin)?;

    let model = ModelSpec {
        events,
        states,
        transition,
        functional,
        initial,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    const POISSON: &str = r#"
[model]
[model.events]
count = 1

[model.state]
kind = "discrete"
size = 1
origin = 0

[model.functional]
kind = "constant"
nu = [2.0]

[model.transition]
kind = "table"
probs = [[[1.0]]]

[run]
horizon = 1000.0
seed = 42
"#;

    #[test]
    fn parses_and_builds_poisson() {
        let doc = parse_config(POISSON).unwrap();
        let model = build_model(&doc).unwrap();
        assert_eq!(model.events.len(), 1);
        assert_eq!(doc.seeds().unwrap(), vec![42]);
        assert_eq!(doc.run.horizon, Some(1000.0));
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let text = POISSON.replace("nu = [2.0]", "nu = [2.0]\nbogus_key = 1");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn negative_rate_names_the_field() {
        let text = POISSON.replace("nu = [2.0]", "nu = [-2.0]");
        let doc = parse_config(&text).unwrap();
        let err = build_model(&doc).unwrap_err();
        assert!(err.to_string().contains("functional.nu"), "{err}");
    }

    #[test]
    fn hash_stable_under_key_reordering() {
        let reordered = r#"
[model]
[model.state]
origin = 0
size = 1
kind = "discrete"

[model.events]
count = 1

[model.functional]
nu = [2.0]
kind = "constant"

[model.transition]
probs = [[[1.0]]]
kind = "table"

[run]
seed = 42
horizon = 1000.0
"#;
        let a = model_hash(&parse_config(POISSON).unwrap());
        let b = model_hash(&parse_config(reordered).unwrap());
        assert_eq!(a, b);
        // Run-section changes never affect the model hash.
        let different_run = POISSON.replace("seed = 42", "seed = 7");
        assert_eq!(a, model_hash(&parse_config(&different_run).unwrap()));
        // Model changes do.
        let different_model = POISSON.replace("nu = [2.0]", "nu = [3.0]");
        assert_ne!(a, model_hash(&parse_config(&different_model).unwrap()));
    }

    #[test]
    fn seed_range_parsing() {
        assert_eq!(parse_seed_range("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert!(parse_seed_range("4..1").is_err());
        assert!(parse_seed_range("x").is_err());
    }

    #[test]
    fn hawkes_with_tensor_alpha_builds() {
        let text = r#"
[model]
[model.events]
count = 2

[model.state]
kind = "discrete"
size = 2
origin = 0

[model.functional]
kind = "hawkes"
nu = [0.5, 0.5]

[model.functional.kernel]
kind = "exponential"
alpha = [[[0.3, 0.1], [0.1, 0.2]], [[0.3, 0.1], [0.1, 0.2]]]
beta = 2.0

[model.transition]
kind = "table"
probs = [
    [[0.3, 0.7], [0.6, 0.4]],
    [[0.8, 0.2], [0.25, 0.75]],
]

[model.initial]
records = [{ time = -1.0, event = 0, state = 1 }]
"#;
        let doc = parse_config(text).unwrap();
        let model = build_model(&doc).unwrap();
        assert_eq!(model.initial.initial().len(), 1);
        assert_eq!(model.states.size(), Some(2));
    }

    #[test]
    fn gaussian_increment_builds() {
        let text = r#"
[model]
[model.events]
count = 1

[model.state]
kind = "continuous"
origin = 0.0

[model.functional]
kind = "constant"
nu = [2.0]

[model.transition]
kind = "gaussian-increment"
mean = 0.0
sigma = 1.0
"#;
        let doc = parse_config(text).unwrap();
        build_model(&doc).unwrap();
    }

    #[test]
    fn field_kind_mismatch_rejected() {
        let text = POISSON.replace(
            "kind = \"constant\"\nnu = [2.0]",
            "kind = \"constant\"\nnu = [2.0]\nrates = [1.0]",
        );
        let doc = parse_config(&text).unwrap();
        let err = build_model(&doc).unwrap_err();
        assert!(err.to_string().contains("rates"), "{err}");
    }
}
