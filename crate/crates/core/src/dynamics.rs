//! Circle lifts, driving systems and cocycle iteration.
//!
//! A lift is `φ(x, ω) = x + 2πρ₀ + h(x, ω)` with `h` 2π-periodic in `x`.
//! Iterates are tracked as a whole number of turns plus a reduced angle with
//! a compensation term, so a trajectory of 10⁹ steps keeps the angle used
//! for evaluation accurate to rounding.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fourier::FourierSeries;

pub type DisplacementFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Periodic part `h(x, ω)` of a lift.
#[derive(Clone)]
pub enum Displacement {
    Zero,
    /// `amplitude · sin x`
    Sine {
        amplitude: f64,
    },
    /// Series in `(x, ω₁, …, ω_d)`; its real part is used.
    Fourier(FourierSeries),
    /// Closed-form rule `h(x)`; the driver argument is empty.
    Custom(DisplacementFn),
    /// Closed-form rule `h(x, ω)` reading the base angles.
    Driven(DisplacementFn),
}

impl fmt::Debug for Displacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Sine { amplitude } => write!(f, "Sine {{ amplitude: {amplitude} }}"),
            Self::Fourier(s) => write!(f, "Fourier(dim {}, order {})", s.dim(), s.order()),
            Self::Custom(_) => write!(f, "Custom(..)"),
            Self::Driven(_) => write!(f, "Driven(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CircleLift {
    rho0: f64,
    displacement: Displacement,
}

impl CircleLift {
    pub fn new(rho0: f64, displacement: Displacement) -> Self {
        Self { rho0, displacement }
    }

    pub fn rotation(rho: f64) -> Self {
        Self::new(rho, Displacement::Zero)
    }

    pub fn custom(rho0: f64, h: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(rho0, Displacement::Custom(Arc::new(h)))
    }

    pub fn driven(rho0: f64, h: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(rho0, Displacement::Driven(Arc::new(h)))
    }

    /// Lift whose displacement is the real part of a Fourier series in
    /// `(x, ω)`.
    pub fn fourier(rho0: f64, series: FourierSeries) -> Self {
        Self::new(rho0, Displacement::Fourier(series))
    }

    /// `g⁻¹ ∘ R_ρ ∘ g` with `g(x) = x + a sin x`, `|a| < 1`. Every member of
    /// this family preserves the push-forward of Lebesgue measure under
    /// `g⁻¹`, so different `ρ` share an invariant measure.
    pub fn conjugated_rotation(rho: f64, a: f64) -> Result<Self> {
        if !(a.abs() < 1.0) {
            return Err(Error::NonInvertible(format!(
                "conjugating map x + a sin x needs |a| < 1, got {a}"
            )));
        }
        let shift = TAU * rho;
        Ok(Self::custom(rho, move |x, _| {
            let y = invert_sine_shear(x + a * x.sin() + shift, a);
            y - x - shift
        }))
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn displacement(&self) -> &Displacement {
        &self.displacement
    }

    pub fn is_pure_rotation(&self) -> bool {
        match &self.displacement {
            Displacement::Zero => true,
            Displacement::Sine { amplitude } => *amplitude == 0.0,
            Displacement::Fourier(s) => s.is_zero(),
            Displacement::Custom(_) | Displacement::Driven(_) => false,
        }
    }

    /// Whether `h` reads the driver state.
    pub fn depends_on_driver(&self) -> bool {
        match &self.displacement {
            Displacement::Fourier(s) => s.dim() > 1,
            Displacement::Driven(_) => true,
            _ => false,
        }
    }

    #[inline]
    pub fn displacement_at(&self, x: f64, omega: &[f64]) -> f64 {
        match &self.displacement {
            Displacement::Zero => 0.0,
            Displacement::Sine { amplitude } => amplitude * x.sin(),
            Displacement::Fourier(s) => {
                if s.dim() == 1 {
                    s.eval_real(&[x])
                } else {
                    let mut z = Vec::with_capacity(s.dim());
                    z.push(x);
                    z.extend_from_slice(&omega[..s.dim() - 1]);
                    s.eval_real(&z)
                }
            }
            Displacement::Custom(f) | Displacement::Driven(f) => f(x, omega),
        }
    }

    /// Full increment `φ(x, ω) - x`.
    #[inline]
    pub fn increment(&self, x: f64, omega: &[f64]) -> f64 {
        TAU * self.rho0 + self.displacement_at(x, omega)
    }

    pub fn apply(&self, x: f64, omega: &[f64]) -> f64 {
        x + self.increment(x, omega)
    }

    /// Checks `φ(x+2π) = φ(x) + 2π` and monotonicity on a grid of `grid`
    /// points.
    pub fn validate(&self, omega: &[f64], grid: usize) -> Result<()> {
        let xs: Vec<f64> = (0..=grid).map(|j| TAU * j as f64 / grid as f64).collect();
        let mut prev = f64::NEG_INFINITY;
        for &x in &xs {
            let y = self.apply(x, omega);
            if !y.is_finite() {
                return Err(Error::Evaluation(format!("lift is not finite at x = {x}")));
            }
            let shifted = self.apply(x + TAU, omega);
            if (shifted - y - TAU).abs() > 1e-10 {
                return Err(Error::Validation(format!(
                    "lift is not degree one at x = {x}: φ(x+2π) - φ(x) = {}",
                    shifted - y
                )));
            }
            if y < prev {
                return Err(Error::Validation(format!("lift decreases near x = {x}")));
            }
            prev = y;
        }
        Ok(())
    }
}

/// Solves `y + a sin y = t` for `|a| < 1`.
pub(crate) fn invert_sine_shear(t: f64, a: f64) -> f64 {
    if a == 0.0 {
        return t;
    }
    let (mut lo, mut hi) = (t - a.abs(), t + a.abs());
    let mut y = t;
    for _ in 0..60 {
        let f = y + a * y.sin() - t;
        if f == 0.0 {
            return y;
        }
        if f > 0.0 {
            hi = hi.min(y);
        } else {
            lo = lo.max(y);
        }
        let mut next = y - f / (1.0 + a * y.cos());
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 1e-16 * (1.0 + y.abs()) {
            return next;
        }
        y = next;
    }
    y
}

/// Product measure on symbol sequences with independent draws from
/// `probs`, realized by a counter-based ChaCha stream.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliShift {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    seed: u64,
}

impl BernoulliShift {
    pub fn new(probs: Vec<f64>, seed: u64) -> Result<Self> {
        validate_probs(&probs)?;
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            probs,
            cumulative,
            seed,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Symbol stream positioned at `index` on sub-stream `stream`.
    pub fn symbols(&self, stream: u64, index: u64) -> SymbolStream<'_> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.set_word_pos(2 * index as u128);
        SymbolStream { shift: self, rng }
    }

    pub fn symbol_at(&self, stream: u64, index: u64) -> usize {
        self.symbols(stream, index).next_symbol()
    }

    fn symbol_for(&self, word: u64) -> usize {
        let u = (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.probs.len() - 1)
    }
}

pub struct SymbolStream<'a> {
    shift: &'a BernoulliShift,
    rng: ChaCha8Rng,
}

impl SymbolStream<'_> {
    pub fn next_symbol(&mut self) -> usize {
        self.shift.symbol_for(self.rng.next_u64())
    }
}

pub(crate) fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Validation("probability vector is empty".into()));
    }
    if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::Validation(format!(
            "probabilities must be strictly positive, got {probs:?}"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Validation(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// Quasi-periodic path `u_j(t) = cos(ν_j t + φ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmostPeriodicPath {
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

impl AlmostPeriodicPath {
    pub fn new(frequencies: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        if frequencies.len() != phases.len() {
            return Err(Error::Validation("path needs one phase per frequency".into()));
        }
        Ok(Self { frequencies, phases })
    }

    pub fn cosines(frequencies: Vec<f64>) -> Self {
        let phases = vec![0.0; frequencies.len()];
        Self { frequencies, phases }
    }

    pub fn dim(&self) -> usize {
        self.frequencies.len()
    }

    pub fn sample_into(&self, t: f64, out: &mut [f64]) {
        for ((o, &nu), &ph) in out.iter_mut().zip(&self.frequencies).zip(&self.phases) {
            *o = (nu * t + ph).cos();
        }
    }
}

/// Base dynamics `θ`.
#[derive(Debug, Clone, PartialEq)]
pub enum DrivingSystem {
    /// No base: a single deterministic map.
    Trivial,
    /// `ω ↦ ω + 2πα` on the (m-1)-torus.
    TorusRotation {
        alpha: Vec<f64>,
    },
    Bernoulli(BernoulliShift),
}

impl DrivingSystem {
    pub fn torus(alpha: Vec<f64>) -> Self {
        Self::TorusRotation { alpha }
    }

    pub fn bernoulli(probs: Vec<f64>, seed: u64) -> Result<Self> {
        Ok(Self::Bernoulli(BernoulliShift::new(probs, seed)?))
    }

    pub fn base_dim(&self) -> usize {
        match self {
            Self::TorusRotation { alpha } => alpha.len(),
            _ => 0,
        }
    }

    pub fn initial_state(&self) -> DriverState {
        match self {
            Self::Trivial => DriverState::Trivial,
            Self::TorusRotation { alpha } => DriverState::Torus {
                origin: vec![0.0; alpha.len()],
                steps: 0,
            },
            Self::Bernoulli(_) => DriverState::Symbols { stream: 0, index: 0 },
        }
    }
}

/// Point `ω` of the base.
#[derive(Debug, Clone, PartialEq)]
pub enum DriverState {
    Trivial,
    /// `θ^steps` applied to `origin`.
    Torus {
        origin: Vec<f64>,
        steps: u64,
    },
    /// Position `index` in symbol sub-stream `stream`.
    Symbols {
        stream: u64,
        index: u64,
    },
}

impl DriverState {
    pub fn torus_at(origin: Vec<f64>) -> Self {
        Self::Torus { origin, steps: 0 }
    }

    /// Base angles of a torus state, reduced to `[0, 2π)`.
    pub fn angles(&self, alpha: &[f64]) -> Vec<f64> {
        match self {
            Self::Torus { origin, steps } => origin
                .iter()
                .zip(alpha)
                .map(|(&o, &a)| (o + TAU * frac_of_product(*steps, a)).rem_euclid(TAU))
                .collect(),
            _ => Vec::new(),
        }
    }

    fn advanced(&self, n: u64) -> Self {
        match self {
            Self::Trivial => Self::Trivial,
            Self::Torus { origin, steps } => Self::Torus {
                origin: origin.clone(),
                steps: steps + n,
            },
            Self::Symbols { stream, index } => Self::Symbols {
                stream: *stream,
                index: index + n,
            },
        }
    }
}

/// Fractional part of `n·a` computed from the exact product.
pub(crate) fn frac_of_product(n: u64, a: f64) -> f64 {
    let nf = n as f64;
    let hi = nf * a;
    let lo = nf.mul_add(a, -hi);
    let f = (hi - hi.floor()) + lo;
    f - f.floor()
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Unreduced lift value stored as `turns · 2π + angle + comp`, with
/// `angle ∈ [0, 2π)` and `comp` the accumulated rounding error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftValue {
    turns: i64,
    angle: f64,
    comp: f64,
}

impl LiftValue {
    pub fn new(x: f64) -> Self {
        let turns = (x / TAU).floor();
        let (angle, err) = two_sum(x, -turns * TAU);
        let mut v = Self {
            turns: turns as i64,
            angle,
            comp: err,
        };
        v.normalize();
        v
    }

    fn normalize(&mut self) {
        while self.angle >= TAU {
            let (a, e) = two_sum(self.angle, -TAU);
            self.angle = a;
            self.comp += e;
            self.turns += 1;
        }
        while self.angle < 0.0 {
            let (a, e) = two_sum(self.angle, TAU);
            self.angle = a;
            self.comp += e;
            self.turns -= 1;
        }
    }

    /// Angle used for evaluating periodic functions.
    #[inline]
    pub fn angle(&self) -> f64 {
        self.angle + self.comp
    }

    pub fn turns(&self) -> i64 {
        self.turns
    }

    #[inline]
    pub fn advance(&mut self, increment: f64) {
        let (a, e) = two_sum(self.angle, increment);
        self.angle = a;
        self.comp += e;
        if !(0.0..TAU).contains(&self.angle) {
            self.normalize();
        }
        if self.comp.abs() > 1e-9 {
            let (a, e) = two_sum(self.angle, self.comp);
            self.angle = a;
            self.comp = e;
            self.normalize();
        }
    }

    pub fn value(&self) -> f64 {
        self.turns as f64 * TAU + self.angle + self.comp
    }

    /// `self - earlier`, keeping the turn count exact.
    pub fn minus(&self, earlier: &Self) -> f64 {
        (self.turns - earlier.turns) as f64 * TAU + ((self.angle - earlier.angle) + (self.comp - earlier.comp))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CocycleTrajectory {
    pub n: u64,
    pub start: LiftValue,
    pub x: LiftValue,
    pub omega: DriverState,
}

impl CocycleTrajectory {
    /// `φ(n, ω)x₀ - x₀`.
    pub fn displacement(&self) -> f64 {
        self.x.minus(&self.start)
    }
}

/// Cocycle `φ(n, ω)` generated by one lift per base state (or one lift per
/// symbol for a Bernoulli base).
#[derive(Debug, Clone)]
pub struct SkewProduct {
    maps: Vec<CircleLift>,
    driver: DrivingSystem,
}

impl SkewProduct {
    pub fn new(maps: Vec<CircleLift>, driver: DrivingSystem) -> Result<Self> {
        match &driver {
            DrivingSystem::Bernoulli(b) if b.probs().len() != maps.len() => {
                return Err(Error::Validation(format!(
                    "{} maps for {} symbols",
                    maps.len(),
                    b.probs().len()
                )))
            }
            DrivingSystem::Bernoulli(_) => {}
            _ if maps.len() != 1 => {
                return Err(Error::Validation(
                    "exactly one lift is needed for a non-symbolic driver".into(),
                ))
            }
            _ => {}
        }
        let base = driver.base_dim();
        for m in &maps {
            if let Displacement::Fourier(s) = m.displacement() {
                if s.dim() != 1 + base {
                    return Err(Error::Validation(format!(
                        "displacement series has dimension {}, driver needs {}",
                        s.dim(),
                        1 + base
                    )));
                }
            }
        }
        Ok(Self { maps, driver })
    }

    pub fn deterministic(lift: CircleLift) -> Self {
        Self {
            maps: vec![lift],
            driver: DrivingSystem::Trivial,
        }
    }

    pub fn maps(&self) -> &[CircleLift] {
        &self.maps
    }

    pub fn driver(&self) -> &DrivingSystem {
        &self.driver
    }

    pub fn initial_state(&self) -> DriverState {
        self.driver.initial_state()
    }

    /// One step of the skew product `(x, ω) ↦ (φ(x, ω), θω)`.
    pub fn step(&self, x: f64, omega: &DriverState) -> Result<(f64, DriverState)> {
        let (lift, angles) = self.fiber(omega);
        let x_next = lift.apply(x, &angles);
        if !x_next.is_finite() {
            return Err(Error::Evaluation(format!("lift evaluation is not finite at x = {x}")));
        }
        Ok((x_next, omega.advanced(1)))
    }

    fn fiber(&self, omega: &DriverState) -> (&CircleLift, Vec<f64>) {
        match (&self.driver, omega) {
            (DrivingSystem::Bernoulli(b), DriverState::Symbols { stream, index }) => {
                (&self.maps[b.symbol_at(*stream, *index)], Vec::new())
            }
            (DrivingSystem::TorusRotation { alpha }, s) => (&self.maps[0], s.angles(alpha)),
            _ => (&self.maps[0], Vec::new()),
        }
    }

    /// Applies `n` steps from `(x0, ω0)`.
    pub fn iterate(&self, x0: f64, omega0: &DriverState, n: u64) -> CocycleTrajectory {
        self.iterate_with(x0, omega0, n, |_, _| {})
    }

    /// [`iterate`](Self::iterate) calling `observe(i, displacement)` after
    /// every step `i = 1..=n`.
    pub fn iterate_with(
        &self,
        x0: f64,
        omega0: &DriverState,
        n: u64,
        observe: impl FnMut(u64, f64),
    ) -> CocycleTrajectory {
        let start = LiftValue::new(x0);
        let x = self.run(start, start, omega0, n, observe);
        CocycleTrajectory {
            n,
            start,
            x,
            omega: omega0.advanced(n),
        }
    }

    /// Continues a trajectory by `n` more steps.
    pub fn resume(&self, traj: &CocycleTrajectory, n: u64) -> CocycleTrajectory {
        let x = self.run(traj.start, traj.x, &traj.omega, n, |_, _| {});
        CocycleTrajectory {
            n: traj.n + n,
            start: traj.start,
            x,
            omega: traj.omega.advanced(n),
        }
    }

    fn run(
        &self,
        start: LiftValue,
        mut x: LiftValue,
        omega0: &DriverState,
        n: u64,
        mut observe: impl FnMut(u64, f64),
    ) -> LiftValue {
        match (&self.driver, omega0) {
            (DrivingSystem::Bernoulli(b), DriverState::Symbols { stream, index }) => {
                let mut symbols = b.symbols(*stream, *index);
                for i in 1..=n {
                    let lift = &self.maps[symbols.next_symbol()];
                    x.advance(lift.increment(x.angle(), &[]));
                    observe(i, x.minus(&start));
                }
            }
            (DrivingSystem::TorusRotation { alpha }, DriverState::Torus { origin, steps }) => {
                let lift = &self.maps[0];
                let mut w = vec![0.0; alpha.len()];
                for i in 1..=n {
                    let at = steps + i - 1;
                    for ((wj, &o), &a) in w.iter_mut().zip(origin).zip(alpha) {
                        *wj = (o + TAU * frac_of_product(at, a)).rem_euclid(TAU);
                    }
                    x.advance(lift.increment(x.angle(), &w));
                    observe(i, x.minus(&start));
                }
            }
            _ => {
                let lift = &self.maps[0];
                for i in 1..=n {
                    x.advance(lift.increment(x.angle(), &[]));
                    observe(i, x.minus(&start));
                }
            }
        }
        x
    }

    /// Extremes `(sup, inf)` of `φ(n, ω)x - x` over `grid` equally spaced
    /// points of `[0, 2π)`.
    pub fn displacement_spread(&self, omega: &DriverState, n: u64, grid: usize) -> Result<(f64, f64)> {
        if grid < 16 {
            return Err(Error::Config(format!("spread grid needs ≥ 16 points, got {grid}")));
        }
        let mut sup = f64::NEG_INFINITY;
        let mut inf = f64::INFINITY;
        for j in 0..grid {
            let x = TAU * j as f64 / grid as f64;
            let d = self.iterate(x, omega, n).displacement();
            sup = sup.max(d);
            inf = inf.min(d);
        }
        Ok((sup, inf))
    }
}

/// `x + 2πΩ + ε sin x`.
pub fn make_arnold_family(omega: f64, eps: f64) -> Result<CircleLift> {
    if !(eps.abs() < 1.0) {
        return Err(Error::NonInvertible(format!("Arnold map needs |eps| < 1, got {eps}")));
    }
    Ok(CircleLift::new(omega, Displacement::Sine { amplitude: eps }))
}
