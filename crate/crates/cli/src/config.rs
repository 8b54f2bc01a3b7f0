//! Experiment description read from a TOML document.

use std::collections::BTreeMap;
use std::fmt;

use circlekam_core::dynamics::{make_arnold_family, AlmostPeriodicPath, CircleLift, Displacement, DrivingSystem};
use circlekam_core::fourier::{FlatSeries, FourierSeries, VectorSeries};
use circlekam_core::kam::KamConfig;
use circlekam_core::rotation::{OdeField, PlanarFn, TimePath};
use serde::{Deserialize, Serialize};

/// A configuration problem, with the dotted path of the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

type Checked<T = ()> = Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    RotnoMap,
    RotnoOde,
    Compose,
    Kam,
    Dioph,
    Sweep,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RotnoMap => "rotno-map",
            Self::RotnoOde => "rotno-ode",
            Self::Compose => "compose",
            Self::Kam => "kam",
            Self::Dioph => "dioph",
            Self::Sweep => "sweep",
        }
    }

    fn section(self) -> &'static str {
        match self {
            Self::RotnoMap => "map",
            Self::RotnoOde => "ode",
            Self::Compose => "compose",
            Self::Kam => "kam",
            Self::Dioph => "dioph",
            Self::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<String>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: OutputSpec,
    pub map: Option<MapSpec>,
    pub driver: Option<DriverSpec>,
    pub estimate: Option<EstimateSpec>,
    pub ode: Option<OdeSpec>,
    pub compose: Option<ComposeSpec>,
    pub kam: Option<KamSpec>,
    pub dioph: Option<DiophSpec>,
    pub sweep: Option<SweepSpec>,
}

/// A circle lift, either a named family or explicit coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    /// `x + 2πρ`
    Rotation { rho: f64 },
    /// `x + 2πΩ + ε sin x`
    Arnold { omega: f64, eps: f64 },
    /// `g⁻¹ ∘ R_ρ ∘ g` with `g(x) = x + a sin x`
    ConjugatedRotation { rho: f64, a: f64 },
    /// `x + 2πΩ + ε sin x + b sin(x - ω₁)` over a torus driver
    ForcedArnold { omega: f64, eps: f64, forcing: f64 },
    /// `x + 2πρ₀ + Re h(x, ω)` from a flat coefficient record
    Fourier { rho0: f64, series: FlatSeries },
}

impl MapSpec {
    pub fn build(&self, path: &str) -> Checked<CircleLift> {
        let core = |e: circlekam_core::Error| ConfigError::new(path, e.to_string());
        match self {
            Self::Rotation { rho } => Ok(CircleLift::rotation(*rho)),
            Self::Arnold { omega, eps } => make_arnold_family(*omega, *eps).map_err(core),
            Self::ConjugatedRotation { rho, a } => CircleLift::conjugated_rotation(*rho, *a).map_err(core),
            Self::ForcedArnold { omega, eps, forcing } => {
                if eps.abs() + forcing.abs() >= 1.0 {
                    return Err(ConfigError::new(
                        path,
                        "need |eps| + |forcing| < 1 for an invertible map",
                    ));
                }
                let (eps, b) = (*eps, *forcing);
                Ok(CircleLift::driven(*omega, move |x, w| {
                    eps * x.sin() + b * (x - w[0]).sin()
                }))
            }
            Self::Fourier { rho0, series } => {
                let v = VectorSeries::from_record(series).map_err(core)?;
                if v.value_dim() != 1 {
                    return Err(ConfigError::new(
                        format!("{path}.series.value_dim"),
                        "a lift needs value_dim = 1",
                    ));
                }
                Ok(CircleLift::fourier(*rho0, v.component(0).clone()))
            }
        }
    }

    /// Base dimension the map reads from its driver.
    pub fn driver_dim(&self) -> usize {
        match self {
            Self::ForcedArnold { .. } => 1,
            Self::Fourier { series, .. } => series.dim.saturating_sub(1),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverSpec {
    Trivial,
    Torus { alpha: Vec<f64> },
}

impl DriverSpec {
    pub fn build(&self) -> DrivingSystem {
        match self {
            Self::Trivial => DrivingSystem::Trivial,
            Self::Torus { alpha } => DrivingSystem::torus(alpha.clone()),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Self::Trivial => 0,
            Self::Torus { alpha } => alpha.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapMethod {
    /// `(Fⁿ(x₀) - x₀)/(2πn)`, with a rigorous bracket when there is no driver
    #[default]
    Plain,
    /// smoothly weighted ergodic average
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSpec {
    #[serde(default = "default_n")]
    pub n: u64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub method: MapMethod,
}

impl Default for EstimateSpec {
    fn default() -> Self {
        Self {
            n: default_n(),
            x0: 0.0,
            method: MapMethod::Plain,
        }
    }
}

fn default_n() -> u64 {
    100_000
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `ẋ = a + b cos x`
    OffsetCosine { a: f64, b: f64 },
    /// `ẋ = a + b cos x + c u₁(t) sin x`, `u_j = cos(ν_j t)`
    Forced {
        a: f64,
        b: f64,
        c: f64,
        frequencies: Vec<f64>,
    },
    /// angle of `ẋ = (β + γ u₁(t)) J x` in the plane
    Planar {
        beta: f64,
        gamma: f64,
        frequencies: Vec<f64>,
    },
}

/// The field, its time path, and whether it is a planar angular equation.
pub struct BuiltField {
    pub field: Option<OdeField>,
    pub planar: Option<(PlanarFn, f64)>,
    pub path: TimePath,
}

impl FieldSpec {
    pub fn build(&self) -> BuiltField {
        match self {
            Self::OffsetCosine { a, b } => {
                let (a, b) = (*a, *b);
                BuiltField {
                    field: Some(OdeField::autonomous(b.abs(), move |x| a + b * x.cos())),
                    planar: None,
                    path: TimePath::Autonomous,
                }
            }
            Self::Forced { a, b, c, frequencies } => {
                let (a, b, c) = (*a, *b, *c);
                BuiltField {
                    field: Some(OdeField::new(b.abs() + c.abs(), move |x, u| {
                        a + b * x.cos() + c * u[0] * x.sin()
                    })),
                    planar: None,
                    path: TimePath::AlmostPeriodic(AlmostPeriodicPath::cosines(frequencies.clone())),
                }
            }
            Self::Planar {
                beta,
                gamma,
                frequencies,
            } => {
                let (beta, gamma) = (*beta, *gamma);
                let a: PlanarFn = std::sync::Arc::new(move |x: [f64; 2], u: &[f64]| {
                    let w = beta + gamma * u[0];
                    [-w * x[1], w * x[0]]
                });
                BuiltField {
                    field: None,
                    planar: Some((a, beta.abs() + gamma.abs())),
                    path: TimePath::AlmostPeriodic(AlmostPeriodicPath::cosines(frequencies.clone())),
                }
            }
        }
    }

    fn frequencies(&self) -> Option<&[f64]> {
        match self {
            Self::OffsetCosine { .. } => None,
            Self::Forced { frequencies, .. } | Self::Planar { frequencies, .. } => Some(frequencies),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OdeMethod {
    /// `(x(T) - x₀)/T`
    #[default]
    Plain,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSpec {
    pub field: FieldSpec,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_x0s")]
    pub x0: Vec<f64>,
    #[serde(default)]
    pub method: OdeMethod,
}

fn default_x0s() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeSpec {
    pub rhos: Vec<f64>,
    pub probs: Vec<f64>,
    /// Shared conjugacy `g(x) = x + a sin x`; 0 gives plain rotations.
    #[serde(default)]
    pub a: f64,
    #[serde(default = "default_n")]
    pub n: u64,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
}

fn default_ensemble() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KamProblem {
    /// `x + c + ε sin(kx)` with `c` matched to rotation number `mu`
    Circle {
        mu: f64,
        eps: f64,
        #[serde(default = "one")]
        mode: i64,
        #[serde(default = "yes")]
        matched: bool,
    },
    /// `x + c + ε sin(<k, (x, ω)>)` over `ω ↦ ω + 2πα`
    Skew {
        rho: f64,
        alpha: Vec<f64>,
        eps: f64,
        mode: Vec<i64>,
        #[serde(default = "yes")]
        matched: bool,
    },
    /// `z + 2πμ + p(z)` with explicit coefficients
    Torus { mu: Vec<f64>, perturbation: FlatSeries },
}

fn one() -> i64 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KamSpec {
    pub problem: KamProblem,
    /// Overrides on top of the defaults for the problem's dimension.
    pub settings: Option<toml::Table>,
    /// Iterations of the weighted average used to refine the matched
    /// parameter; 0 keeps the enclosure match only.
    #[serde(default = "default_refine")]
    pub refine_n: u64,
}

fn default_refine() -> u64 {
    40_000
}

impl KamSpec {
    pub fn dim(&self) -> usize {
        match &self.problem {
            KamProblem::Circle { .. } => 1,
            KamProblem::Skew { alpha, .. } => 1 + alpha.len(),
            KamProblem::Torus { mu, .. } => mu.len(),
        }
    }

    pub fn settings(&self) -> Checked<KamConfig> {
        let base = KamConfig::for_dim(self.dim());
        let Some(overrides) = &self.settings else {
            return Ok(base);
        };
        let mut table = match toml::Value::try_from(base) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("iteration settings serialize to a table"),
        };
        table.extend(overrides.clone());
        deserialize_at(toml::Value::Table(table), "kam.settings")
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiophSpec {
    pub mu: Vec<f64>,
    #[serde(default = "default_nu")]
    pub nu: f64,
    pub k: usize,
    pub budget: Option<u64>,
}

fn default_nu() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl AxisSpec {
    /// `count` evenly spaced values with both ends included.
    pub fn values(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    self.hi
                } else {
                    self.lo + step * i as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Map family with its fixed parameters; axis names override entries.
    pub map: toml::Table,
    pub axis1: AxisSpec,
    pub axis2: Option<AxisSpec>,
    #[serde(default = "default_n")]
    pub n: u64,
    #[serde(default)]
    pub x0: f64,
}

impl SweepSpec {
    pub fn axes(&self) -> Vec<&AxisSpec> {
        std::iter::once(&self.axis1).chain(self.axis2.as_ref()).collect()
    }

    /// Map at one grid point; `values` follows [`Self::axes`].
    pub fn map_at(&self, values: &[f64]) -> Checked<MapSpec> {
        let mut table = self.map.clone();
        for (axis, v) in self.axes().into_iter().zip(values) {
            table.insert(axis.name.clone(), toml::Value::Float(*v));
        }
        deserialize_at::<MapSpec>(toml::Value::Table(table), "sweep.map")
    }
}

fn deserialize_at<T: serde::de::DeserializeOwned>(value: toml::Value, prefix: &str) -> Checked<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." || inner.is_empty() {
            prefix.to_string()
        } else if prefix.is_empty() {
            inner
        } else {
            format!("{prefix}.{inner}")
        };
        ConfigError::new(path, e.into_inner().message().trim().to_string())
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Checked<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "document".into());
            ConfigError::new(at, msg)
        })?;
        deserialize_at(toml::Value::Table(table), "")
    }

    /// Checks the sections needed by `command` and returns it.
    pub fn validate(&self, command: Option<Command>) -> Checked<Command> {
        let command = match (command, self.command) {
            (Some(a), Some(b)) if a != b => {
                return Err(ConfigError::new(
                    "command",
                    format!("config is for `{}` but `{}` was requested", b.as_str(), a.as_str()),
                ))
            }
            (Some(a), _) => a,
            (None, Some(b)) => b,
            (None, None) => return Err(ConfigError::new("command", "no command given")),
        };
        let missing = || {
            ConfigError::new(
                command.section(),
                format!("section is required for `{}`", command.as_str()),
            )
        };
        match command {
            Command::RotnoMap => {
                let map = self.map.as_ref().ok_or_else(missing)?;
                map.build("map")?;
                let est = self.estimate.clone().unwrap_or_default();
                positive_count("estimate.n", est.n, 2)?;
                finite("estimate.x0", est.x0)?;
                let driver_dim = self.driver.as_ref().map_or(0, DriverSpec::dim);
                if map.driver_dim() > driver_dim {
                    return Err(ConfigError::new(
                        "driver",
                        format!(
                            "map reads {} base angles but the driver provides {driver_dim}",
                            map.driver_dim()
                        ),
                    ));
                }
                if let Some(DriverSpec::Torus { alpha }) = &self.driver {
                    all_finite("driver.alpha", alpha)?;
                }
            }
            Command::RotnoOde => {
                let ode = self.ode.as_ref().ok_or_else(missing)?;
                positive("ode.horizon", ode.horizon)?;
                positive("ode.dt", ode.dt)?;
                if ode.x0.is_empty() {
                    return Err(ConfigError::new("ode.x0", "need at least one initial value"));
                }
                all_finite("ode.x0", &ode.x0)?;
                if let Some(f) = ode.field.frequencies() {
                    if f.is_empty() {
                        return Err(ConfigError::new("ode.field.frequencies", "need at least one frequency"));
                    }
                    all_finite("ode.field.frequencies", f)?;
                }
            }
            Command::Compose => {
                let c = self.compose.as_ref().ok_or_else(missing)?;
                if c.rhos.is_empty() || c.rhos.len() != c.probs.len() {
                    return Err(ConfigError::new(
                        "compose.probs",
                        "need one probability per rotation number",
                    ));
                }
                all_finite("compose.rhos", &c.rhos)?;
                if c.probs.iter().any(|p| !(*p >= 0.0)) || (c.probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(ConfigError::new(
                        "compose.probs",
                        "probabilities must be nonnegative and sum to 1",
                    ));
                }
                if !(c.a.abs() < 1.0) {
                    return Err(ConfigError::new("compose.a", "need |a| < 1"));
                }
                positive_count("compose.n", c.n, 2)?;
                positive_count("compose.ensemble", c.ensemble as u64, 1)?;
                if self.seed.is_none() {
                    return Err(ConfigError::new("seed", "a seed is required for random compositions"));
                }
            }
            Command::Kam => {
                let k = self.kam.as_ref().ok_or_else(missing)?;
                k.settings()?.validate().map_err(|e| {
                    let msg = e.to_string();
                    let field = msg
                        .split("kam.")
                        .nth(1)
                        .and_then(|s| s.split(':').next())
                        .unwrap_or("")
                        .to_string();
                    ConfigError::new(format!("kam.settings.{field}"), msg)
                })?;
                match &k.problem {
                    KamProblem::Circle { mu, eps, mode, .. } => {
                        finite("kam.problem.mu", *mu)?;
                        finite("kam.problem.eps", *eps)?;
                        if *mode < 1 {
                            return Err(ConfigError::new("kam.problem.mode", "mode must be positive"));
                        }
                    }
                    KamProblem::Skew {
                        rho, alpha, eps, mode, ..
                    } => {
                        finite("kam.problem.rho", *rho)?;
                        finite("kam.problem.eps", *eps)?;
                        if alpha.is_empty() {
                            return Err(ConfigError::new(
                                "kam.problem.alpha",
                                "need at least one base frequency",
                            ));
                        }
                        all_finite("kam.problem.alpha", alpha)?;
                        if mode.len() != 1 + alpha.len() || mode[0] == 0 {
                            return Err(ConfigError::new(
                                "kam.problem.mode",
                                "mode needs 1 + len(alpha) entries with a nonzero fiber index",
                            ));
                        }
                    }
                    KamProblem::Torus { mu, perturbation } => {
                        all_finite("kam.problem.mu", mu)?;
                        let v = VectorSeries::from_record(perturbation)
                            .map_err(|e| ConfigError::new("kam.problem.perturbation", e.to_string()))?;
                        if v.dim() != mu.len() || v.value_dim() != mu.len() {
                            return Err(ConfigError::new(
                                "kam.problem.perturbation",
                                "perturbation must have dim = value_dim = len(mu)",
                            ));
                        }
                    }
                }
            }
            Command::Dioph => {
                let d = self.dioph.as_ref().ok_or_else(missing)?;
                if d.mu.is_empty() {
                    return Err(ConfigError::new("dioph.mu", "frequency vector is empty"));
                }
                all_finite("dioph.mu", &d.mu)?;
                positive("dioph.nu", d.nu)?;
                positive_count("dioph.k", d.k as u64, 1)?;
            }
            Command::Sweep => {
                let s = self.sweep.as_ref().ok_or_else(missing)?;
                positive_count("sweep.n", s.n, 2)?;
                for (i, axis) in s.axes().into_iter().enumerate() {
                    let p = format!("sweep.axis{}", i + 1);
                    finite(&format!("{p}.lo"), axis.lo)?;
                    finite(&format!("{p}.hi"), axis.hi)?;
                    if !(axis.lo < axis.hi) {
                        return Err(ConfigError::new(format!("{p}.hi"), "need lo < hi"));
                    }
                    if axis.count < 2 {
                        return Err(ConfigError::new(format!("{p}.count"), "need at least 2 points"));
                    }
                    if !s.map.contains_key(&axis.name) || axis.name == "family" {
                        return Err(ConfigError::new(
                            format!("{p}.name"),
                            format!("`{}` is not a parameter set in sweep.map", axis.name),
                        ));
                    }
                }
                if s.axis2.as_ref().is_some_and(|a| a.name == s.axis1.name) {
                    return Err(ConfigError::new(
                        "sweep.axis2.name",
                        "axes must sweep different parameters",
                    ));
                }
                let first: Vec<f64> = s.axes().iter().map(|a| a.lo).collect();
                let map = s.map_at(&first)?;
                if map.driver_dim() > self.driver.as_ref().map_or(0, DriverSpec::dim) {
                    return Err(ConfigError::new(
                        "driver",
                        "map reads base angles the driver does not provide",
                    ));
                }
            }
        }
        Ok(command)
    }
}

fn finite(path: &str, v: f64) -> Checked {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be finite, got {v}")))
    }
}

fn all_finite(path: &str, v: &[f64]) -> Checked {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(ConfigError::new(format!("{path}[{i}]"), "must be finite")),
    }
}

fn positive(path: &str, v: f64) -> Checked {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be positive, got {v}")))
    }
}

fn positive_count(path: &str, v: u64, min: u64) -> Checked {
    if v >= min {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be at least {min}, got {v}")))
    }
}

/// Named displacement used by the skew KAM problem: `sin(<k, (x, ω)>)`.
pub fn mode_sine(mode: &[i64]) -> (FourierSeries, Displacement) {
    let order = mode.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(1).max(1);
    let series = FourierSeries::sine(mode.len(), order, mode, 1.0);
    let k = mode.to_vec();
    let rule = Displacement::Driven(std::sync::Arc::new(move |x: f64, w: &[f64]| {
        let phase = k[0] as f64 * x + k[1..].iter().zip(w).map(|(a, b)| *a as f64 * b).sum::<f64>();
        phase.sin()
    }));
    (series, rule)
}

/// Parameters of a [`MapSpec`] as name → value, for report headers.
pub fn map_params(spec: &MapSpec) -> BTreeMap<&'static str, f64> {
    match spec {
        MapSpec::Rotation { rho } => [("rho", *rho)].into(),
        MapSpec::Arnold { omega, eps } => [("omega", *omega), ("eps", *eps)].into(),
        MapSpec::ConjugatedRotation { rho, a } => [("rho", *rho), ("a", *a)].into(),
        MapSpec::ForcedArnold { omega, eps, forcing } => {
            [("omega", *omega), ("eps", *eps), ("forcing", *forcing)].into()
        }
        MapSpec::Fourier { rho0, .. } => [("rho0", *rho0)].into(),
    }
}
