//! Dispatch from a validated configuration to the numerical routines.

use std::f64::consts::TAU;
use std::fmt;

use circlekam_core::diophantine::{certify, certify_with_budget, resonance_screen, DEFAULT_WORK_BUDGET};
use circlekam_core::dynamics::{CircleLift, Displacement, DrivingSystem, SkewProduct};
use circlekam_core::fourier::{FourierSeries, VectorSeries};
use circlekam_core::kam::{
    conjugate_circle_family, conjugate_skew_product, refine_rotation_parameter, run_kam, ConjugacyResult,
    ParameterFamily, TorusMap,
};
use circlekam_core::rotation::{
    deterministic_enclosure, estimate_iid_composition, estimate_map, estimate_ode, estimate_ode_weighted,
    estimate_planar_homogeneous, estimate_weighted, predicted_iid_rotation, RotationEstimate,
};
use circlekam_core::Error;
use rayon::prelude::*;

use crate::config::{mode_sine, Command, ConfigError, ExperimentConfig, KamProblem, KamSpec, MapMethod, OdeMethod};
use crate::output::{fmt_num, join_ints, join_nums, Cell, Report, Table};

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Config(ConfigError),
    Core(Error),
    Io { path: String, message: String },
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Core(e)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(e) => write!(f, "{e}"),
            Self::Core(e) => write!(f, "{e}"),
            Self::Io { path, message } => write!(f, "{path}: {message}"),
        }
    }
}

impl Failure {
    /// 2 for invalid input, 3 for numerical divergence or resonance, 4 for an
    /// exhausted work budget.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } => 2,
            Self::Core(e) => match e {
                Error::Budget { .. } => 4,
                Error::Resonance { .. }
                | Error::Divergence { .. }
                | Error::Unsolvable { .. }
                | Error::Inversion(_)
                | Error::Iteration(_)
                | Error::Evaluation(_) => 3,
                _ => 2,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Core(e) => match e {
                Error::Config(_) => "config",
                Error::Validation(_) => "validation",
                Error::Degenerate(_) => "degenerate",
                Error::Evaluation(_) => "evaluation",
                Error::NonInvertible(_) => "non_invertible",
                Error::Unsupported(_) => "unsupported",
                Error::Unsolvable { .. } => "unsolvable",
                Error::Resonance { .. } => "resonance",
                Error::Inversion(_) => "inversion",
                Error::Iteration(_) => "iteration",
                Error::Divergence { .. } => "divergence",
                Error::Budget { .. } => "budget",
                Error::Lookup(_) => "lookup",
                Error::Range(_) => "range",
            },
        }
    }

    /// Single-line `key=value` diagnostic.
    pub fn diagnostic(&self) -> String {
        let mut fields = vec![
            ("level", "error".to_string()),
            ("exit", self.exit_code().to_string()),
            ("kind", self.kind().to_string()),
        ];
        match self {
            Self::Config(e) => fields.push(("path", e.path.clone())),
            Self::Io { path, .. } => fields.push(("path", path.clone())),
            Self::Core(Error::Resonance { k, divisor }) => {
                fields.push(("k", k.iter().map(i64::to_string).collect::<Vec<_>>().join(",")));
                fields.push(("divisor", fmt_num(*divisor)));
            }
            Self::Core(Error::Divergence { stage, .. }) => fields.push(("stage", stage.to_string())),
            Self::Core(Error::Budget { largest_completed }) => {
                fields.push(("largest_completed", largest_completed.to_string()))
            }
            Self::Core(_) => {}
        }
        let message = match self {
            Self::Config(e) => e.message.clone(),
            other => other.to_string(),
        };
        fields.push(("message", message));
        logfmt(&fields)
    }
}

/// `key=value` pairs, quoting values with spaces, quotes or `=`.
pub fn logfmt(fields: &[(&str, String)]) -> String {
    fields
        .iter()
        .map(|(k, v)| {
            let flat = v.replace('\n', " ");
            if flat.is_empty() || flat.contains([' ', '"', '=']) {
                format!("{k}=\"{}\"", flat.replace('\\', "\\\\").replace('"', "\\\""))
            } else {
                format!("{k}={flat}")
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub verbose: bool,
}

/// Validates the configuration, runs the command and collects its tables.
/// Progress lines go to `log` when `verbose` is set.
pub fn run(config: &ExperimentConfig, opts: &Options, log: &mut dyn FnMut(String)) -> Result<Report, Failure> {
    let mut config = config.clone();
    if opts.seed.is_some() {
        config.seed = opts.seed;
    }
    let command = config.validate(opts.command)?;
    let mut note = |fields: &[(&str, String)]| {
        if opts.verbose {
            let mut all = vec![("level", "info".to_string()), ("command", command.as_str().to_string())];
            all.extend_from_slice(fields);
            log(logfmt(&all));
        }
    };
    note(&[("event", "start".into())]);
    let report = match command {
        Command::RotnoMap => rotno_map(&config)?,
        Command::RotnoOde => rotno_ode(&config)?,
        Command::Compose => compose(&config)?,
        Command::Kam => kam(config.kam.as_ref().expect("validated"), &mut note)?,
        Command::Dioph => dioph(&config)?,
        Command::Sweep => sweep(&config)?,
    };
    note(&[("event", "done".into()), ("tables", report.tables.len().to_string())]);
    Ok(report)
}

fn checkpoint_table(est: &RotationEstimate) -> Table {
    let mut t = Table::new("checkpoints", &["at", "value"]);
    for c in &est.checkpoints {
        t.push(vec![c.at.into(), c.value.into()]);
    }
    t
}

fn rotno_map(cfg: &ExperimentConfig) -> Result<Report, Failure> {
    let spec = cfg.map.as_ref().expect("validated");
    let lift = spec.build("map")?;
    let est_spec = cfg.estimate.clone().unwrap_or_default();
    let driver = cfg.driver.as_ref().map_or(DrivingSystem::Trivial, |d| d.build());
    let deterministic = matches!(driver, DrivingSystem::Trivial) && !lift.depends_on_driver();
    let system = SkewProduct::new(vec![lift], driver)?;
    let omega0 = system.initial_state();
    let n = est_spec.n;
    let est = match est_spec.method {
        MapMethod::Plain => estimate_map(&system, est_spec.x0, &omega0, n)?,
        MapMethod::Weighted => estimate_weighted(&system, est_spec.x0, &omega0, n)?,
    };
    // the bracket F^n(x)/(2πn) ± 1/n holds from any starting point
    let (lo, hi) = if deterministic && est_spec.method == MapMethod::Plain {
        let plain = est.value;
        (Some(plain - 1.0 / n as f64), Some(plain + 1.0 / n as f64))
    } else {
        (None, None)
    };
    let mut t = Table::new(
        "rotation",
        &["x0", "n", "method", "value", "lo", "hi", "cauchy_gap", "status"],
    );
    let method = match est_spec.method {
        MapMethod::Plain => "plain",
        MapMethod::Weighted => "weighted",
    };
    t.push(vec![
        est_spec.x0.into(),
        n.into(),
        method.into(),
        est.value.into(),
        lo.into(),
        hi.into(),
        est.cauchy_gap().into(),
        "ok".into(),
    ]);
    Ok(Report {
        tables: vec![t, checkpoint_table(&est)],
    })
}

fn rotno_ode(cfg: &ExperimentConfig) -> Result<Report, Failure> {
    let ode = cfg.ode.as_ref().expect("validated");
    let built = ode.field.build();
    let mut t = Table::new("rotation", &["x0", "horizon", "dt", "method", "value", "status"]);
    let mut values = Vec::new();
    let method = match ode.method {
        OdeMethod::Plain => "plain",
        OdeMethod::Weighted => "weighted",
    };
    for &x0 in &ode.x0 {
        let est = match (&built.field, &built.planar, ode.method) {
            (Some(f), _, OdeMethod::Plain) => estimate_ode(f, &built.path, x0, ode.horizon, ode.dt)?,
            (Some(f), _, OdeMethod::Weighted) => estimate_ode_weighted(f, &built.path, x0, ode.horizon, ode.dt)?,
            (None, Some((a, lip)), _) => {
                estimate_planar_homogeneous(a.clone(), *lip, &built.path, x0, ode.horizon, ode.dt)?
            }
            (None, None, _) => unreachable!("field builder returns one of the two forms"),
        };
        values.push(est.value);
        t.push(vec![
            x0.into(),
            est.horizon.into(),
            ode.dt.into(),
            method.into(),
            est.value.into(),
            "ok".into(),
        ]);
    }
    let spread =
        values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - values.iter().cloned().fold(f64::INFINITY, f64::min);
    let bound = TAU / ode.horizon;
    let mut s = Table::new("independence", &["initial_values", "spread", "bound", "within_bound"]);
    s.push(vec![
        values.len().into(),
        spread.into(),
        bound.into(),
        (spread <= bound).into(),
    ]);
    Ok(Report { tables: vec![t, s] })
}

fn compose(cfg: &ExperimentConfig) -> Result<Report, Failure> {
    let c = cfg.compose.as_ref().expect("validated");
    let seed = cfg.seed.expect("validated");
    let maps = c
        .rhos
        .iter()
        .map(|&rho| {
            if c.a == 0.0 {
                Ok(CircleLift::rotation(rho))
            } else {
                CircleLift::conjugated_rotation(rho, c.a)
            }
        })
        .collect::<circlekam_core::Result<Vec<_>>>()?;
    let ens = estimate_iid_composition(&maps, &c.probs, seed, c.n, c.ensemble)?;
    let predicted = predicted_iid_rotation(&c.rhos, &c.probs)?;
    let mut t = Table::new(
        "composition",
        &["n", "ensemble", "seed", "value", "std_dev", "predicted", "status"],
    );
    t.push(vec![
        c.n.into(),
        c.ensemble.into(),
        Cell::Text(seed.to_string()),
        ens.estimate.value.into(),
        ens.std_dev.into(),
        predicted.into(),
        "ok".into(),
    ]);
    let mut m = Table::new("members", &["member", "value"]);
    for (i, v) in ens.members.iter().enumerate() {
        m.push(vec![i.into(), (*v).into()]);
    }
    Ok(Report {
        tables: vec![t, m, checkpoint_table(&ens.estimate)],
    })
}

/// Receives `key=value` fields of a progress line.
type Note<'a> = dyn FnMut(&[(&str, String)]) + 'a;

fn kam(spec: &KamSpec, note: &mut Note) -> Result<Report, Failure> {
    let settings = spec.settings()?;
    let (kind, parameter, base_leak, result): (&str, f64, Option<f64>, ConjugacyResult) = match &spec.problem {
        KamProblem::Circle { mu, eps, mode, matched } => {
            let q = FourierSeries::sine(1, *mode as usize, &[*mode], 1.0);
            if *matched {
                let fam = ParameterFamily::circle(*eps, Displacement::Fourier(q));
                let (c, res) = conjugate_circle_family(&fam, *mu, &settings, spec.refine_n)?;
                ("circle", c, None, res)
            } else {
                let map = TorusMap::circle(*mu, q.scale(*eps))?;
                let cert = certify(&[*mu], 1.0, settings.order_cap.max(*mode as usize))?;
                ("circle", TAU * mu, None, run_kam(&map, &settings, &cert)?)
            }
        }
        KamProblem::Skew {
            rho,
            alpha,
            eps,
            mode,
            matched,
        } => {
            let (series, rule) = mode_sine(mode);
            let rho0 = if *matched {
                let fam = ParameterFamily::skew(*eps, rule, alpha.clone());
                let c = refine_rotation_parameter(&fam, *rho, fam.bracket(*rho), spec.refine_n.max(2))?;
                c / TAU
            } else {
                *rho
            };
            let phi = CircleLift::new(rho0, Displacement::Fourier(series.scale(*eps)));
            let out = conjugate_skew_product(&phi, alpha, *rho, &settings)?;
            ("skew", TAU * rho0, Some(out.base_leak), out.result)
        }
        KamProblem::Torus { mu, perturbation } => {
            let p = VectorSeries::from_record(perturbation)?;
            let m = mu.len();
            let map = TorusMap::new(mu.clone(), p)?;
            let cert = certify(mu, m as f64, m * settings.order_cap.max(map.p.order()))?;
            ("torus", f64::NAN, None, run_kam(&map, &settings, &cert)?)
        }
    };
    for r in &result.records {
        note(&[
            ("event", "stage".into()),
            ("stage", r.stage.to_string()),
            ("order", r.order.to_string()),
            ("residual_in", fmt_num(r.residual_in)),
            ("residual_out", fmt_num(r.residual_out)),
        ]);
    }
    let mut summary = Table::new(
        "summary",
        &[
            "kind",
            "status",
            "stages",
            "defect",
            "defect_grid",
            "parameter",
            "base_leak",
        ],
    );
    summary.push(vec![
        kind.into(),
        result.status.as_str().into(),
        result.stages.into(),
        result.defect.into(),
        result.defect_grid.into(),
        if parameter.is_nan() {
            Cell::Empty
        } else {
            parameter.into()
        },
        base_leak.into(),
    ]);
    let mut residuals = Table::new(
        "residuals",
        &[
            "stage",
            "order",
            "radius",
            "delta",
            "residual_in",
            "residual_out",
            "mean",
            "h_norm",
            "jacobian",
            "homological_residual",
            "gamma_eff",
            "rotation",
        ],
    );
    for r in &result.records {
        residuals.push(vec![
            r.stage.into(),
            r.order.into(),
            r.radius.into(),
            r.delta.into(),
            r.residual_in.into(),
            r.residual_out.into(),
            r.mean.into(),
            r.h_norm.into(),
            r.jacobian.into(),
            r.homological_residual.into(),
            r.gamma_eff.into(),
            r.rotation.into(),
        ]);
    }
    let cert = &result.certificate;
    let mut ct = Table::new("certificate", &["mu", "nu", "k_checked", "c_best", "worst_k"]);
    ct.push(vec![
        join_nums(&cert.mu),
        cert.nu.into(),
        cert.k_checked.into(),
        cert.c_best.into(),
        join_ints(&cert.worst_k),
    ]);
    let rec = result.h.to_record();
    let mut h = Table::new("conjugacy", &["dim", "order", "value_dim", "coeffs"]);
    let tokens = rec.to_tokens();
    h.push(vec![
        rec.dim.into(),
        rec.order.into(),
        rec.value_dim.into(),
        tokens[3..].join(" ").into(),
    ]);
    Ok(Report {
        tables: vec![summary, residuals, ct, h],
    })
}

fn dioph(cfg: &ExperimentConfig) -> Result<Report, Failure> {
    let d = cfg.dioph.as_ref().expect("validated");
    let cert = certify_with_budget(&d.mu, d.nu, d.k, d.budget.unwrap_or(DEFAULT_WORK_BUDGET))?;
    let mut t = Table::new(
        "certificate",
        &["mu", "nu", "k_checked", "c_best", "worst_k", "resonant"],
    );
    t.push(vec![
        join_nums(&cert.mu),
        cert.nu.into(),
        cert.k_checked.into(),
        cert.c_best.into(),
        join_ints(&cert.worst_k),
        cert.is_resonant().into(),
    ]);
    let mut r = Table::new("resonances", &["k"]);
    for k in resonance_screen(&d.mu, d.k)? {
        r.push(vec![join_ints(&k)]);
    }
    Ok(Report { tables: vec![t, r] })
}

fn sweep(cfg: &ExperimentConfig) -> Result<Report, Failure> {
    let s = cfg.sweep.as_ref().expect("validated");
    let driver = cfg.driver.as_ref().map_or(DrivingSystem::Trivial, |d| d.build());
    let v1 = s.axis1.values();
    let v2 = s.axis2.as_ref().map(|a| a.values());
    let outer = v2.as_ref().map_or(1, Vec::len);
    let total = v1.len() * outer;
    let rows: Vec<Vec<Cell>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let (i2, i1) = (idx / v1.len(), idx % v1.len());
            let mut point = vec![v1[i1]];
            if let Some(v2) = &v2 {
                point.push(v2[i2]);
            }
            let outcome = sweep_point(s, &driver, &point);
            let (value, lo, hi, status) = match outcome {
                Ok((v, l, h)) => (Cell::from(v), Cell::from(l), Cell::from(h), Cell::from("ok")),
                Err(e) => (Cell::Empty, Cell::Empty, Cell::Empty, Cell::from(format!("error: {e}"))),
            };
            vec![
                i1.into(),
                v2.as_ref().map(|_| i2).into(),
                v1[i1].into(),
                v2.as_ref().map(|v| v[i2]).into(),
                value,
                lo,
                hi,
                status,
            ]
        })
        .collect();
    let mut axes = Table::new("axes", &["axis", "name", "lo", "hi", "count"]);
    for (i, a) in s.axes().into_iter().enumerate() {
        axes.push(vec![
            (i + 1).into(),
            a.name.clone().into(),
            a.lo.into(),
            a.hi.into(),
            a.count.into(),
        ]);
    }
    let mut points = Table::new("sweep", &["i1", "i2", "x1", "x2", "rho", "lo", "hi", "status"]);
    for row in rows {
        points.push(row);
    }
    Ok(Report {
        tables: vec![axes, points],
    })
}

fn sweep_point(
    s: &crate::config::SweepSpec,
    driver: &DrivingSystem,
    point: &[f64],
) -> Result<(f64, Option<f64>, Option<f64>), Failure> {
    let lift = s.map_at(point)?.build("sweep.map")?;
    if matches!(driver, DrivingSystem::Trivial) && !lift.depends_on_driver() && s.x0 == 0.0 {
        let e = deterministic_enclosure(&lift, s.n)?;
        let (lo, hi) = e.enclosure.expect("deterministic enclosure carries a bracket");
        return Ok((e.value, Some(lo), Some(hi)));
    }
    let system = SkewProduct::new(vec![lift], driver.clone())?;
    let e = estimate_map(&system, s.x0, &system.initial_state(), s.n)?;
    Ok((e.value, None, None))
}
