//! Rotation-number estimators.
//!
//! Two conventions coexist. Maps report winding per step in turns,
//! `lim φ(n,ω)x / (2πn)`. Flows report radians per unit time,
//! `lim (x(T) - x₀) / T`. [`RotationEstimate`] carries the convention so
//! the two cannot be mixed silently.

use std::f64::consts::TAU;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    make_arnold_family, validate_probs, AlmostPeriodicPath, CircleLift, DriverState, DrivingSystem, LiftValue,
    SkewProduct,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Map,
    Ode,
}

impl Convention {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Map => "map",
            Self::Ode => "ode",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Iteration count or elapsed time.
    pub at: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    pub value: f64,
    /// Iterations (map) or time horizon (ODE) behind `value`.
    pub horizon: f64,
    pub enclosure: Option<(f64, f64)>,
    pub convention: Convention,
    /// Partial estimates at dyadic checkpoints; the last entry is `value`.
    pub checkpoints: Vec<Checkpoint>,
}

impl RotationEstimate {
    /// Difference of the last two checkpoints, a heuristic error indicator.
    pub fn cauchy_gap(&self) -> f64 {
        match self.checkpoints.as_slice() {
            [.., a, b] => (b.value - a.value).abs(),
            _ => f64::INFINITY,
        }
    }

    pub fn width(&self) -> Option<f64> {
        self.enclosure.map(|(lo, hi)| hi - lo)
    }
}

fn is_checkpoint(i: u64, n: u64) -> bool {
    i == n || (i >= 2 && i.is_power_of_two())
}

/// `(φ(n,ω)x₀ - x₀) / (2πn)` with dyadic convergence checkpoints.
pub fn estimate_map(system: &SkewProduct, x0: f64, omega0: &DriverState, n: u64) -> Result<RotationEstimate> {
    if n < 2 {
        return Err(Error::Config(format!("estimator needs n ≥ 2, got {n}")));
    }
    let mut checkpoints = Vec::new();
    let traj = system.iterate_with(x0, omega0, n, |i, d| {
        if is_checkpoint(i, n) {
            checkpoints.push(Checkpoint {
                at: i as f64,
                value: d / (TAU * i as f64),
            });
        }
    });
    let value = traj.displacement() / (TAU * n as f64);
    check_finite(value)?;
    Ok(RotationEstimate {
        value,
        horizon: n as f64,
        enclosure: None,
        convention: Convention::Map,
        checkpoints,
    })
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Evaluation("rotation estimate is not finite".into()))
    }
}

/// Rigorous bracket `[(Fⁿ(0) - 2π)/(2πn), (Fⁿ(0) + 2π)/(2πn)]` for a map
/// without driver dependence.
pub fn deterministic_enclosure(lift: &CircleLift, n: u64) -> Result<RotationEstimate> {
    if lift.depends_on_driver() {
        return Err(Error::Unsupported(
            "enclosures are only available for maps without driver dependence".into(),
        ));
    }
    let mut est = estimate_map(&SkewProduct::deterministic(lift.clone()), 0.0, &DriverState::Trivial, n)?;
    let half = 1.0 / n as f64;
    est.enclosure = Some((est.value - half, est.value + half));
    Ok(est)
}

/// Smoothly weighted ergodic average of the per-step displacement, with
/// weight `exp(-1/(t(1-t)))`. For quasi-periodic orbits the error decays
/// faster than any power of `n`; no bracket is attached.
pub fn estimate_weighted(system: &SkewProduct, x0: f64, omega0: &DriverState, n: u64) -> Result<RotationEstimate> {
    if n < 2 {
        return Err(Error::Config(format!("estimator needs n ≥ 2, got {n}")));
    }
    let nf = n as f64;
    let weight = |i: u64| {
        let t = (i as f64 + 0.5) / nf;
        (-1.0 / (t * (1.0 - t))).exp()
    };
    let mut prev = 0.0;
    let (mut num, mut den) = (0.0, 0.0);
    let (mut num_c, mut den_c) = (0.0, 0.0);
    let mut checkpoints = Vec::new();
    system.iterate_with(x0, omega0, n, |i, d| {
        let w = weight(i - 1);
        let step = d - prev;
        prev = d;
        // Kahan sums; the weights span many orders of magnitude
        let y = w * step - num_c;
        let t = num + y;
        num_c = (t - num) - y;
        num = t;
        let y = w - den_c;
        let t = den + y;
        den_c = (t - den) - y;
        den = t;
        if is_checkpoint(i, n) {
            checkpoints.push(Checkpoint {
                at: i as f64,
                value: d / (TAU * i as f64),
            });
        }
    });
    let value = num / den / TAU;
    check_finite(value)?;
    if let Some(last) = checkpoints.last_mut() {
        last.value = value;
    }
    Ok(RotationEstimate {
        value,
        horizon: nf,
        enclosure: None,
        convention: Convention::Map,
        checkpoints,
    })
}

/// `Σ pᵢ ρᵢ`.
pub fn predicted_iid_rotation(rhos: &[f64], probs: &[f64]) -> Result<f64> {
    if rhos.len() != probs.len() {
        return Err(Error::Validation(format!(
            "{} rotation numbers for {} probabilities",
            rhos.len(),
            probs.len()
        )));
    }
    validate_probs(probs)?;
    Ok(rhos.iter().zip(probs).map(|(r, p)| r * p).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEstimate {
    /// Ensemble mean; checkpoints are averaged member-wise.
    pub estimate: RotationEstimate,
    /// Sample standard deviation of the member estimates.
    pub std_dev: f64,
    pub members: Vec<f64>,
}

/// Random composition of `maps` with i.i.d. symbols drawn from `probs`.
/// Member `i` of the ensemble reads symbol sub-stream `i` of `seed`.
///
/// The maps are expected to share an invariant measure; that hypothesis is
/// not checked.
pub fn estimate_iid_composition(
    maps: &[CircleLift],
    probs: &[f64],
    seed: u64,
    n: u64,
    ensemble: usize,
) -> Result<EnsembleEstimate> {
    if ensemble == 0 {
        return Err(Error::Config("ensemble must have at least one member".into()));
    }
    if n < 2 {
        return Err(Error::Config(format!("estimator needs n ≥ 2, got {n}")));
    }
    let system = SkewProduct::new(maps.to_vec(), DrivingSystem::bernoulli(probs.to_vec(), seed)?)?;
    let run = |member: usize| {
        let omega = DriverState::Symbols {
            stream: member as u64,
            index: 0,
        };
        estimate_map(&system, 0.0, &omega, n)
    };
    let members: Vec<RotationEstimate> = par_map(ensemble, run).into_iter().collect::<Result<_>>()?;
    Ok(summarize(members))
}

fn summarize(members: Vec<RotationEstimate>) -> EnsembleEstimate {
    let k = members.len() as f64;
    let values: Vec<f64> = members.iter().map(|m| m.value).collect();
    let mean = values.iter().sum::<f64>() / k;
    let std_dev = if members.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let checkpoints = members[0]
        .checkpoints
        .iter()
        .enumerate()
        .map(|(j, c)| Checkpoint {
            at: c.at,
            value: members.iter().map(|m| m.checkpoints[j].value).sum::<f64>() / k,
        })
        .collect();
    EnsembleEstimate {
        estimate: RotationEstimate {
            value: mean,
            horizon: members[0].horizon,
            enclosure: None,
            convention: Convention::Map,
            checkpoints,
        },
        std_dev,
        members: values,
    }
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send>(count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Send>(count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..count).map(f).collect()
}

pub type FieldFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Scalar field `f(x, u)` on the circle, driven by a path sample `u`.
#[derive(Clone)]
pub struct OdeField {
    rule: FieldFn,
    lipschitz: f64,
}

impl std::fmt::Debug for OdeField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OdeField")
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

impl OdeField {
    pub fn new(lipschitz: f64, rule: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            rule: Arc::new(rule),
            lipschitz,
        }
    }

    pub fn autonomous(lipschitz: f64, rule: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(lipschitz, move |x, _| rule(x))
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    #[inline]
    pub fn eval(&self, x: f64, u: &[f64]) -> f64 {
        (self.rule)(x, u)
    }

    /// Time-`tau` map of an autonomous field, integrated with the same
    /// fixed-step scheme as [`estimate_ode`].
    pub fn time_map(&self, tau: f64, dt: f64) -> CircleLift {
        let field = self.clone();
        let steps = (tau / dt).round().max(1.0) as u64;
        let h = tau / steps as f64;
        CircleLift::custom(0.0, move |x, _| {
            let mut y = x;
            for _ in 0..steps {
                y += rk4_increment(&|x| field.eval(x, &[]), y, h);
            }
            y - x
        })
    }
}

#[inline]
fn rk4_increment(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let k1 = f(x);
    let k2 = f(x + 0.5 * h * k1);
    let k3 = f(x + 0.5 * h * k2);
    let k4 = f(x + h * k3);
    h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Driving signal for a random ODE.
#[derive(Debug, Clone, PartialEq)]
pub enum TimePath {
    Autonomous,
    AlmostPeriodic(AlmostPeriodicPath),
}

impl TimePath {
    pub fn dim(&self) -> usize {
        match self {
            Self::Autonomous => 0,
            Self::AlmostPeriodic(p) => p.dim(),
        }
    }

    fn sample_into(&self, t: f64, out: &mut [f64]) {
        if let Self::AlmostPeriodic(p) = self {
            p.sample_into(t, out);
        }
    }
}

/// `(x(T) - x₀)/T` for `ẋ = f(x, u(t))`, classical fourth-order
/// Runge–Kutta with fixed step `dt`.
pub fn estimate_ode(field: &OdeField, path: &TimePath, x0: f64, horizon: f64, dt: f64) -> Result<RotationEstimate> {
    let mut checkpoints = Vec::new();
    let (start, end, steps) = integrate(field, path, x0, horizon, dt, |i, steps, x, start, _| {
        if is_checkpoint(i, steps) {
            let elapsed = i as f64 * dt;
            checkpoints.push(Checkpoint {
                at: elapsed,
                value: x.minus(start) / elapsed,
            });
        }
    })?;
    let elapsed = steps as f64 * dt;
    let value = end.minus(&start) / elapsed;
    check_finite(value)?;
    Ok(RotationEstimate {
        value,
        horizon: elapsed,
        enclosure: None,
        convention: Convention::Ode,
        checkpoints,
    })
}

/// Like [`estimate_ode`] but averages the increments with the smooth weight
/// `exp(-1/(t(1-t)))` over `[0, T]`. For quasi-periodic solutions the error
/// decays faster than any power of `T`, where the plain quotient only
/// reaches `O(1/T)`.
pub fn estimate_ode_weighted(
    field: &OdeField,
    path: &TimePath,
    x0: f64,
    horizon: f64,
    dt: f64,
) -> Result<RotationEstimate> {
    let steps_f = (horizon / dt).round();
    let (mut num, mut den) = (0.0, 0.0);
    let mut checkpoints = Vec::new();
    let (_, _, steps) = integrate(field, path, x0, horizon, dt, |i, steps, x, start, inc| {
        let t = (i as f64 - 0.5) / steps_f;
        let w = (-1.0 / (t * (1.0 - t))).exp();
        num += w * inc;
        den += w;
        if is_checkpoint(i, steps) {
            let elapsed = i as f64 * dt;
            checkpoints.push(Checkpoint {
                at: elapsed,
                value: x.minus(start) / elapsed,
            });
        }
    })?;
    let value = num / (den * dt);
    check_finite(value)?;
    if let Some(last) = checkpoints.last_mut() {
        last.value = value;
    }
    Ok(RotationEstimate {
        value,
        horizon: steps as f64 * dt,
        enclosure: None,
        convention: Convention::Ode,
        checkpoints,
    })
}

/// RK4 on the lift; `observe(i, steps, x_i, x_0, increment_i)` runs after
/// every step.
fn integrate(
    field: &OdeField,
    path: &TimePath,
    x0: f64,
    horizon: f64,
    dt: f64,
    mut observe: impl FnMut(u64, u64, &LiftValue, &LiftValue, f64),
) -> Result<(LiftValue, LiftValue, u64)> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {dt}")));
    }
    if field.lipschitz > 0.0 && dt > 0.1 / field.lipschitz {
        return Err(Error::Config(format!(
            "step {dt} exceeds the stability bound 0.1/{}",
            field.lipschitz
        )));
    }
    if !(horizon >= 10.0 * dt) {
        return Err(Error::Config(format!(
            "horizon {horizon} is shorter than ten steps of {dt}"
        )));
    }
    check_periodic(field, path)?;
    let steps = (horizon / dt).round() as u64;
    let mut u = [vec![0.0; path.dim()], vec![0.0; path.dim()], vec![0.0; path.dim()]];
    let start = LiftValue::new(x0);
    let mut x = start;
    for i in 0..steps {
        let t = i as f64 * dt;
        path.sample_into(t, &mut u[0]);
        path.sample_into(t + 0.5 * dt, &mut u[1]);
        path.sample_into(t + dt, &mut u[2]);
        let y = x.angle();
        let k1 = field.eval(y, &u[0]);
        let k2 = field.eval(y + 0.5 * dt * k1, &u[1]);
        let k3 = field.eval(y + 0.5 * dt * k2, &u[1]);
        let k4 = field.eval(y + dt * k3, &u[2]);
        let inc = dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !inc.is_finite() {
            return Err(Error::Evaluation(format!("field is not finite near x = {y}, t = {t}")));
        }
        x.advance(inc);
        observe(i + 1, steps, &x, &start, inc);
    }
    Ok((start, x, steps))
}

fn check_periodic(field: &OdeField, path: &TimePath) -> Result<()> {
    let mut u = vec![0.0; path.dim()];
    for t in [0.0, 1.7] {
        path.sample_into(t, &mut u);
        for j in 0..16 {
            let x = 0.39 * j as f64;
            let (a, b) = (field.eval(x, &u), field.eval(x + TAU, &u));
            if (a - b).abs() > 1e-10 * (1.0 + a.abs()) {
                return Err(Error::Validation(format!(
                    "field is not 2π-periodic at x = {x}: {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

pub type PlanarFn = Arc<dyn Fn([f64; 2], &[f64]) -> [f64; 2] + Send + Sync>;

/// Angular growth rate of `ẋ = A(x, u(t))` in the plane, for `A` positively
/// homogeneous of degree one in `x`. Integrates
/// `α̇ = <A(w, u), v>` with `w = (cos α, sin α)`, `v = (-sin α, cos α)`.
pub fn estimate_planar_homogeneous(
    a: PlanarFn,
    lipschitz: f64,
    path: &TimePath,
    angle0: f64,
    horizon: f64,
    dt: f64,
) -> Result<RotationEstimate> {
    let field = OdeField::new(lipschitz, move |alpha, u| {
        let (s, c) = alpha.sin_cos();
        let out = a([c, s], u);
        -out[0] * s + out[1] * c
    });
    estimate_ode(&field, path, angle0, horizon, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityProbe {
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub delta: f64,
}

/// Estimates `ρ(s₀)` and `ρ(s₀ + ds)` for a family of cocycles that is
/// monotone in `s`, and checks the estimates are ordered within `2/n`.
pub fn continuity_probe(
    family: &dyn Fn(f64) -> Result<SkewProduct>,
    s0: f64,
    ds: f64,
    n: u64,
) -> Result<ContinuityProbe> {
    if !(ds >= 0.0) {
        return Err(Error::Validation(format!("ds must be nonnegative, got {ds}")));
    }
    let lo = family(s0)?;
    let rho_lo = estimate_map(&lo, 0.0, &lo.initial_state(), n)?.value;
    if ds == 0.0 {
        return Ok(ContinuityProbe {
            rho_lo,
            rho_hi: rho_lo,
            delta: 0.0,
        });
    }
    let hi = family(s0 + ds)?;
    check_ordered(&lo, &hi)?;
    let rho_hi = estimate_map(&hi, 0.0, &hi.initial_state(), n)?.value;
    if rho_lo > rho_hi + 2.0 / n as f64 {
        return Err(Error::Validation(format!(
            "rotation number decreased from {rho_lo} to {rho_hi} along a monotone family"
        )));
    }
    Ok(ContinuityProbe {
        rho_lo,
        rho_hi,
        delta: rho_hi - rho_lo,
    })
}

fn check_ordered(lo: &SkewProduct, hi: &SkewProduct) -> Result<()> {
    if lo.maps().len() != hi.maps().len() {
        return Err(Error::Validation("family members have different shapes".into()));
    }
    let omega = match lo.driver() {
        DrivingSystem::TorusRotation { alpha } => lo.initial_state().angles(alpha),
        _ => Vec::new(),
    };
    for (f, g) in lo.maps().iter().zip(hi.maps()) {
        for j in 0..256 {
            let x = TAU * j as f64 / 256.0;
            if f.apply(x, &omega) > g.apply(x, &omega) + 1e-12 {
                return Err(Error::Validation(format!("family is not monotone at x = {x}")));
            }
        }
    }
    Ok(())
}

/// Enclosures of `ρ(Ω)` for the Arnold family `x + 2πΩ + ε sin x`.
pub fn arnold_staircase(eps: f64, omegas: &[f64], n: u64) -> Result<Vec<RotationEstimate>> {
    let lifts = omegas
        .iter()
        .map(|&w| make_arnold_family(w, eps))
        .collect::<Result<Vec<_>>>()?;
    par_map(lifts.len(), |i| deterministic_enclosure(&lifts[i], n))
        .into_iter()
        .collect()
}

/// Rotation numbers on an `(ε, Ω)` grid; row `i` belongs to `epss[i]`.
pub fn tongue_grid(omegas: &[f64], epss: &[f64], n: u64) -> Result<Vec<Vec<f64>>> {
    epss.iter()
        .map(|&e| Ok(arnold_staircase(e, omegas, n)?.into_iter().map(|r| r.value).collect()))
        .collect()
}

/// Longest run of consecutive sweep points whose enclosure contains
/// `value`, as `(first, last)` indices.
pub fn longest_plateau(estimates: &[RotationEstimate], value: f64) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, e) in estimates.iter().enumerate() {
        let (lo, hi) = e.enclosure.unwrap_or((e.value, e.value));
        if lo <= value && value <= hi {
            let s = *start.get_or_insert(i);
            if best.is_none_or(|(a, b)| i - s > b - a) {
                best = Some((s, i));
            }
        } else {
            start = None;
        }
    }
    best
}

/// Largest drop `ρ_i - ρ_{i+1}` along a sweep; monotone families give a
/// value below the estimator resolution.
pub fn max_decrease(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::make_arnold_family;

    const GOLDEN: f64 = 0.6180339887498949;

    fn det(lift: CircleLift) -> SkewProduct {
        SkewProduct::deterministic(lift)
    }

    #[test]
    fn pure_rotation_is_exact() {
        for &rho in &[0.25, GOLDEN] {
            for &n in &[2u64, 3, 100, 12_345] {
                for &x0 in &[0.0, 1.3, -7.0] {
                    let e = estimate_map(&det(CircleLift::rotation(rho)), x0, &DriverState::Trivial, n).unwrap();
                    assert!((e.value - rho).abs() < 1e-14, "rho {rho} n {n} x0 {x0}: {}", e.value);
                    assert_eq!(e.checkpoints.last().unwrap().value, e.value);
                    assert!(!e.checkpoints.is_empty());
                }
            }
        }
    }

    #[test]
    fn period_two_map_has_rotation_half() {
        let e = estimate_map(
            &det(make_arnold_family(0.5, 0.5).unwrap()),
            0.0,
            &DriverState::Trivial,
            1 << 16,
        )
        .unwrap();
        assert!((e.value - 0.5).abs() < 1e-4);
        assert!(e.checkpoints.len() >= 2);
    }

    #[test]
    fn rejects_short_runs() {
        let sys = det(CircleLift::rotation(0.1));
        assert!(matches!(
            estimate_map(&sys, 0.0, &DriverState::Trivial, 1),
            Err(Error::Config(_))
        ));
        assert!(estimate_iid_composition(&[CircleLift::rotation(0.1)], &[1.0], 1, 0, 1).is_err());
    }

    #[test]
    fn enclosure_examples() {
        let e = deterministic_enclosure(&CircleLift::rotation(0.3), 100).unwrap();
        let (lo, hi) = e.enclosure.unwrap();
        assert!(lo <= 0.3 && 0.3 <= hi);
        assert!((lo - 0.29).abs() < 1e-14 && (hi - 0.31).abs() < 1e-14);

        let e = deterministic_enclosure(&make_arnold_family(0.5, 0.5).unwrap(), 1000).unwrap();
        let (lo, hi) = e.enclosure.unwrap();
        assert!((hi - lo - 0.002).abs() < 1e-15);
        assert!(lo <= 0.5 && 0.5 <= hi);
    }

    #[test]
    fn enclosure_rejects_driven_lifts() {
        let f = CircleLift::driven(0.1, |x, w| 0.1 * (x + w[0]).sin());
        assert!(matches!(deterministic_enclosure(&f, 10), Err(Error::Unsupported(_))));
    }

    #[test]
    fn predicted_average() {
        assert!((predicted_iid_rotation(&[0.1, 0.2], &[0.3, 0.7]).unwrap() - 0.17).abs() < 1e-15);
        assert_eq!(predicted_iid_rotation(&[0.42], &[1.0]).unwrap(), 0.42);
        let v = predicted_iid_rotation(&[0.5; 3], &[0.2, 0.3, 0.5]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(predicted_iid_rotation(&[0.1], &[0.5, 0.5]).is_err());
        assert!(predicted_iid_rotation(&[0.1, 0.2], &[0.5, 0.6]).is_err());
    }

    #[test]
    fn commuting_rotations_average() {
        let maps = [CircleLift::rotation(0.1), CircleLift::rotation(0.2)];
        let e = estimate_iid_composition(&maps, &[0.5, 0.5], 3, 100_000, 8).unwrap();
        assert!((e.estimate.value - 0.15).abs() < 2e-3);
        assert_eq!(e.members.len(), 8);
    }

    #[test]
    fn constant_field() {
        let f = OdeField::autonomous(0.0, |_| 1.25);
        let e = estimate_ode(&f, &TimePath::Autonomous, 0.3, 50.0, 0.01).unwrap();
        assert!((e.value - 1.25).abs() < 1e-12);
        assert_eq!(e.convention, Convention::Ode);
    }

    #[test]
    fn ode_step_guards() {
        let f = OdeField::autonomous(1.0, |x| 2.0 + x.cos());
        assert!(matches!(
            estimate_ode(&f, &TimePath::Autonomous, 0.0, 100.0, 0.5),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            estimate_ode(&f, &TimePath::Autonomous, 0.0, 0.05, 0.01),
            Err(Error::Config(_))
        ));
        let aperiodic = OdeField::autonomous(0.0, |x| x);
        assert!(matches!(
            estimate_ode(&aperiodic, &TimePath::Autonomous, 0.0, 1.0, 0.01),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn conventions_differ_by_two_pi() {
        let c = 0.37;
        let f = OdeField::autonomous(0.0, move |_| TAU * c);
        let ode = estimate_ode(&f, &TimePath::Autonomous, 0.0, 20.0, 0.01).unwrap();
        assert!((ode.value - TAU * c).abs() < 1e-12);
        let time_one = f.time_map(1.0, 0.01);
        let map = estimate_map(&det(time_one), 0.0, &DriverState::Trivial, 100).unwrap();
        assert!((map.value - c).abs() < 1e-12);
        assert_eq!(map.convention, Convention::Map);
    }

    #[test]
    fn planar_rotation_field() {
        let beta = 0.8;
        let a: PlanarFn = Arc::new(move |x, _| [-beta * x[1], beta * x[0]]);
        let e = estimate_planar_homogeneous(a, beta, &TimePath::Autonomous, 0.0, 100.0, 0.01).unwrap();
        assert!((e.value - beta).abs() < 1e-12);

        let bad: PlanarFn = Arc::new(|_, _| [f64::NAN, 0.0]);
        assert!(matches!(
            estimate_planar_homogeneous(bad, 1.0, &TimePath::Autonomous, 0.0, 1.0, 0.01),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn continuity_examples() {
        let rot = |s: f64| Ok(det(CircleLift::rotation(s)));
        let p = continuity_probe(&rot, 0.2, 0.01, 1000).unwrap();
        assert!((p.delta - 0.01).abs() < 1e-12);
        let p = continuity_probe(&rot, 0.2, 0.0, 1000).unwrap();
        assert_eq!(p.delta, 0.0);

        let arnold = |s: f64| Ok(det(make_arnold_family(s, 0.3)?));
        let p = continuity_probe(&arnold, 0.31, 1e-3, 100_000).unwrap();
        assert!(p.delta >= 0.0 && p.delta <= 0.05);

        let decreasing = |s: f64| Ok(det(CircleLift::rotation(-s)));
        assert!(matches!(
            continuity_probe(&decreasing, 0.2, 0.01, 100),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn weighted_average_converges_fast() {
        let sys = det(make_arnold_family(0.2, 0.3).unwrap());
        let a = estimate_weighted(&sys, 0.0, &DriverState::Trivial, 20_000).unwrap();
        let b = estimate_weighted(&sys, 0.0, &DriverState::Trivial, 80_000).unwrap();
        let enc = deterministic_enclosure(&make_arnold_family(0.2, 0.3).unwrap(), 100_000).unwrap();
        let (lo, hi) = enc.enclosure.unwrap();
        assert!(lo <= b.value && b.value <= hi);
        assert!((a.value - b.value).abs() < 1e-10, "{} vs {}", a.value, b.value);
    }
}
