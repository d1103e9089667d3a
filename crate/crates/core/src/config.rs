//! JSON experiment configuration.
//!
//! Every block rejects unknown keys. Parse errors carry the JSON path of the
//! offending value (down to the enclosing `kind`-tagged block); semantic errors
//! are prefixed with the block they came from.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bernstein::BernsteinSpec;
use crate::coupling::CouplingOptions;
use crate::error::Error;
use crate::gruschin::{Clocks, Drift, GruschinModel, Sigma, StatePoint, StepFunction};
use crate::harnack::{ScalingExample, ScalingParams, SweepSpec, TestFunction};
use crate::subordinator::SamplerOptions;
use crate::timechange::{Interpolation, TimeChange};

pub const MIN_STEPS: usize = 16;

#[derive(Debug, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: impl Into<String>, e: impl std::fmt::Display) -> Self {
        Self {
            path: path.into(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    Identity {},
    Constant { matrix: Vec<Vec<f64>> },
    Piecewise { starts: Vec<f64>, matrices: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    Zero {},
    /// Row-major `d x d` matrix.
    Linear { matrix: Vec<f64> },
    Cubic { linear: f64, cubic: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub starts: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepSpec {
    fn constant(v: f64) -> Self {
        Self {
            starts: vec![0.0],
            values: vec![v],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub m: usize,
    pub d: usize,
    pub l: f64,
    #[serde(default = "identity_sigma")]
    pub sigma: SigmaSpec,
    #[serde(default = "unit_step")]
    pub lambda: StepSpec,
    #[serde(default = "zero_drift")]
    pub drift: DriftSpec,
    #[serde(default = "zero_step")]
    pub k: StepSpec,
}

fn identity_sigma() -> SigmaSpec {
    SigmaSpec::Identity {}
}
fn unit_step() -> StepSpec {
    StepSpec::constant(1.0)
}
fn zero_step() -> StepSpec {
    StepSpec::constant(0.0)
}
fn zero_drift() -> DriftSpec {
    DriftSpec::Zero {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeChangeSpec {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClockSpec {
    Subordinated {
        phi1: BernsteinSpec,
        phi2: BernsteinSpec,
        /// Moving-average regularization window; `null` uses raw increments.
        #[serde(default)]
        eps: Option<f64>,
        #[serde(default)]
        sampler: SamplerOptions,
    },
    Deterministic {
        ell1: TimeChangeSpec,
        ell2: TimeChangeSpec,
    },
    /// `ℓ1(t) = ℓ2(t) = t`.
    Identity {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    /// Mandatory, either here or via `--seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_floor")]
    pub eps_floor: f64,
    #[serde(default)]
    pub qmc: bool,
}

fn default_floor() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsConfig {
    pub x: StatePoint,
    pub y: StatePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionConfig {
    pub a: f64,
    pub w: f64,
    pub z0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub example: ScalingExample,
    pub alpha: f64,
    #[serde(default = "one")]
    pub c1: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default = "one")]
    pub rho: f64,
    pub l: f64,
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<f64>,
}

impl ScalingConfig {
    pub fn params(&self) -> ScalingParams {
        ScalingParams {
            alpha: self.alpha,
            c1: self.c1,
            beta: self.beta,
            c2: self.c2,
            rho: self.rho,
            l: self.l,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub m: usize,
    pub theta: f64,
    pub sigma2: f64,
    pub n_samples: usize,
    /// Shifts at which the analytic bound is checked (the origin is always included).
    #[serde(default)]
    pub mu_grid: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubordinatorConfig {
    pub phi: BernsteinSpec,
    #[serde(default)]
    pub sampler: SamplerOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub clocks: ClockSpec,
    pub run: RunConfig,
    pub points: PointsConfig,
    pub f: TestFunctionConfig,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub scaling: Option<ScalingConfig>,
    #[serde(default)]
    pub moments: Option<MomentsConfig>,
    /// Subordinator for `sample-subordinator`; defaults to the first clock.
    #[serde(default)]
    pub subordinator: Option<SubordinatorConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::at(if path == "." { "config".to_string() } else { path }, e.inner())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::at(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.run
            .seed
            .ok_or_else(|| ConfigError::at("run.seed", "a seed is mandatory (set run.seed or pass --seed)"))
    }

    /// Checks everything that does not depend on the subcommand.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.seed()?;
        let r = &self.run;
        if r.n_steps < MIN_STEPS {
            return Err(ConfigError::at("run.n_steps", format!("must be >= {MIN_STEPS}, got {}", r.n_steps)));
        }
        if r.n_paths == 0 {
            return Err(ConfigError::at("run.n_paths", "must be >= 1"));
        }
        if !(r.horizon > 0.0 && r.horizon.is_finite()) {
            return Err(ConfigError::at("run.T", format!("must be positive, got {}", r.horizon)));
        }
        if !(r.eps_floor > 0.0) {
            return Err(ConfigError::at("run.eps_floor", "must be positive"));
        }
        let model = self.model()?;
        model
            .check_step(r.horizon / r.n_steps as f64)
            .map_err(|e| ConfigError::at("run.n_steps", e))?;
        for (name, p) in [("points.x", &self.points.x), ("points.y", &self.points.y)] {
            model.check_point(p).map_err(|e| ConfigError::at(name, e))?;
        }
        self.clocks(r.horizon)?;
        self.test_function()?;
        Ok(())
    }

    pub fn model(&self) -> Result<GruschinModel, ConfigError> {
        let c = &self.model;
        let sigma = match &c.sigma {
            SigmaSpec::Identity {} => Ok(Sigma::identity(c.m)),
            SigmaSpec::Constant { matrix } => Sigma::constant(matrix),
            SigmaSpec::Piecewise { starts, matrices } => Sigma::piecewise(starts.clone(), matrices.clone()),
        }
        .map_err(|e| ConfigError::at("model.sigma", e))?;
        let step = |name: &str, s: &StepSpec| {
            StepFunction::new(s.starts.clone(), s.values.clone()).map_err(|e| ConfigError::at(format!("model.{name}"), e))
        };
        let drift = match &c.drift {
            DriftSpec::Zero {} => Drift::Zero,
            DriftSpec::Linear { matrix } => Drift::Linear { matrix: matrix.clone() },
            DriftSpec::Cubic { linear, cubic } => Drift::Cubic {
                linear: *linear,
                cubic: *cubic,
            },
        };
        GruschinModel::new(c.m, c.d, c.l, sigma, step("lambda", &c.lambda)?, drift, step("k", &c.k)?)
            .map_err(|e| ConfigError::at("model", e))
    }

    /// Clocks valid on `[0, 2 horizon]`.
    pub fn clocks(&self, horizon: f64) -> Result<Clocks, ConfigError> {
        match &self.clocks {
            ClockSpec::Subordinated { phi1, phi2, eps, sampler } => {
                if let Some(e) = eps {
                    if !(*e > 0.0) {
                        return Err(ConfigError::at("clocks.eps", "must be positive or null"));
                    }
                }
                Ok(Clocks::Subordinated {
                    phi1: phi1.build().map_err(|e| ConfigError::at("clocks.phi1", e))?,
                    phi2: phi2.build().map_err(|e| ConfigError::at("clocks.phi2", e))?,
                    eps: *eps,
                    sampler: *sampler,
                })
            }
            ClockSpec::Deterministic { ell1, ell2 } => {
                let tc = |name: &str, s: &TimeChangeSpec| {
                    let t = TimeChange::new(s.times.clone(), s.values.clone(), s.interpolation)
                        .map_err(|e| ConfigError::at(format!("clocks.{name}"), e))?;
                    if t.start() > 0.0 || t.end() < 2.0 * horizon {
                        return Err(ConfigError::at(
                            format!("clocks.{name}"),
                            format!("must cover [0, 2T] = [0, {}]", 2.0 * horizon),
                        ));
                    }
                    Ok(t)
                };
                Ok(Clocks::Deterministic {
                    ell1: tc("ell1", ell1)?,
                    ell2: tc("ell2", ell2)?,
                })
            }
            ClockSpec::Identity {} => Ok(Clocks::identity(2.0 * horizon, 1)),
        }
    }

    pub fn test_function(&self) -> Result<TestFunction, ConfigError> {
        let f = &self.f;
        if f.z0.len() != self.model.m + self.model.d {
            return Err(ConfigError::at("f.z0", format!("must have length m + d = {}", self.model.m + self.model.d)));
        }
        TestFunction::bump(f.a, f.w, f.z0.clone()).map_err(|e| ConfigError::at("f", e))
    }

    pub fn coupling_options(&self) -> CouplingOptions {
        CouplingOptions {
            eps_floor: self.run.eps_floor,
            record_paths: false,
        }
    }
}

/// Whether an error means the inputs were unacceptable rather than that a
/// numerical procedure broke down.
pub fn is_input_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter { .. }
            | Error::NonIntegrableLevy(_)
            | Error::Hypothesis { .. }
            | Error::TestFunctionBelowOne(_)
            | Error::DomainExtension(_)
            | Error::NotStrictlyIncreasing { .. }
            | Error::OutOfDomain { .. }
            | Error::TooFewSamples { .. }
            | Error::InfiniteMean(_)
    )
}
