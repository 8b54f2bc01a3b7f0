//! Truncated Fourier series on the m-torus.
//!
//! Coefficients are stored densely over the cube `{-K..K}^m` in row-major
//! order (axis 0 slowest). The variable on every axis has period `2π`, so a
//! mode `k` contributes `c_k e^{i<k,z>}`.
//!
//! Strip norms are the coefficient majorant `Σ |c_k| e^{r|k|₁}`, which
//! dominates the supremum of the series on the complex strip
//! `{|Im z_j| ≤ r}`.

use std::f64::consts::{E, TAU};

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default oversampling used for compositions: the grid carries
/// `2 * OVERSAMPLE * K` nodes per axis.
pub const DEFAULT_OVERSAMPLE: usize = 4;

/// Relative floor under which coefficients are treated as numerical noise
/// by [`FourierSeries::decay_fit`].
const DECAY_NOISE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct FourierSeries {
    dim: usize,
    order: usize,
    coeffs: Vec<Complex64>,
}

/// Coefficient majorant of a series on a strip of half-width `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripNorm {
    pub radius: f64,
    pub value: f64,
}

/// Exponential envelope `|c_k| ≤ bound · e^{-rate |k|₁}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub bound: f64,
    pub rate: f64,
}

fn side(order: usize) -> usize {
    2 * order + 1
}

/// Number of grid nodes per axis used for a composition at `order`.
pub fn grid_size_for(order: usize, oversample: usize) -> usize {
    (2 * oversample * order).max(2 * oversample)
}

/// Calls `f(flat_index, k)` for every mode of the cube `{-K..K}^dim`.
pub(crate) fn for_each_mode(dim: usize, order: usize, mut f: impl FnMut(usize, &[i64])) {
    let k_max = order as i64;
    let mut k = vec![-k_max; dim];
    let total = side(order).pow(dim as u32);
    for idx in 0..total {
        f(idx, &k);
        for axis in (0..dim).rev() {
            if k[axis] < k_max {
                k[axis] += 1;
                break;
            }
            k[axis] = -k_max;
        }
    }
}

/// Calls `f(flat_index, node)` for every node of the regular `n^dim` grid.
pub(crate) fn for_each_node(dim: usize, n: usize, mut f: impl FnMut(usize, &[f64])) {
    let h = TAU / n as f64;
    let mut j = vec![0usize; dim];
    let mut z = vec![0.0; dim];
    let total = n.pow(dim as u32);
    for idx in 0..total {
        for (zi, &ji) in z.iter_mut().zip(&j) {
            *zi = h * ji as f64;
        }
        f(idx, &z);
        for axis in (0..dim).rev() {
            if j[axis] + 1 < n {
                j[axis] += 1;
                break;
            }
            j[axis] = 0;
        }
    }
}

fn fft_nd(data: &mut [Complex64], n: usize, dim: usize, direction: FftDirection) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft(n, direction);
    let mut line = vec![Complex64::default(); n];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        let outer = n.pow(axis as u32);
        for o in 0..outer {
            for i in 0..stride {
                let base = o * n * stride + i;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = data[base + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }
}

impl FourierSeries {
    pub fn zeros(dim: usize, order: usize) -> Self {
        assert!(dim > 0, "torus dimension must be positive");
        Self {
            dim,
            order,
            coeffs: vec![Complex64::default(); side(order).pow(dim as u32)],
        }
    }

    pub fn from_coeffs(dim: usize, order: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("torus dimension must be positive".into()));
        }
        let expected = side(order).pow(dim as u32);
        if coeffs.len() != expected {
            return Err(Error::Config(format!(
                "expected {expected} coefficients for dim {dim}, order {order}, got {}",
                coeffs.len()
            )));
        }
        Ok(Self { dim, order, coeffs })
    }

    /// Series `amp · e^{i<k,z>}`.
    pub fn single_mode(dim: usize, order: usize, k: &[i64], amp: Complex64) -> Self {
        let mut s = Self::zeros(dim, order);
        s.set(k, amp);
        s
    }

    /// Constant function.
    pub fn constant(dim: usize, order: usize, value: f64) -> Self {
        let mut s = Self::zeros(dim, order);
        s.set(&vec![0; dim], Complex64::new(value, 0.0));
        s
    }

    /// `amp · sin(<k,z>)`.
    pub fn sine(dim: usize, order: usize, k: &[i64], amp: f64) -> Self {
        let mut s = Self::zeros(dim, order);
        let neg: Vec<i64> = k.iter().map(|v| -v).collect();
        s.set(k, Complex64::new(0.0, -amp / 2.0));
        s.set(&neg, Complex64::new(0.0, amp / 2.0));
        s
    }

    /// `amp · cos(<k,z>)`.
    pub fn cosine(dim: usize, order: usize, k: &[i64], amp: f64) -> Self {
        let mut s = Self::zeros(dim, order);
        let neg: Vec<i64> = k.iter().map(|v| -v).collect();
        s.add_at(k, Complex64::new(amp / 2.0, 0.0));
        s.add_at(&neg, Complex64::new(amp / 2.0, 0.0));
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    fn index(&self, k: &[i64]) -> Option<usize> {
        if k.len() != self.dim {
            return None;
        }
        let k_max = self.order as i64;
        let w = side(self.order);
        let mut idx = 0usize;
        for &kj in k {
            if kj.abs() > k_max {
                return None;
            }
            idx = idx * w + (kj + k_max) as usize;
        }
        Some(idx)
    }

    /// Coefficient of mode `k`; zero for modes outside the retained cube.
    pub fn get(&self, k: &[i64]) -> Complex64 {
        self.index(k).map_or(Complex64::default(), |i| self.coeffs[i])
    }

    /// Sets the coefficient of `k`. Panics if `k` is outside the cube.
    pub fn set(&mut self, k: &[i64], value: Complex64) {
        let i = self.index(k).expect("mode outside retained cube");
        self.coeffs[i] = value;
    }

    fn add_at(&mut self, k: &[i64], value: Complex64) {
        let i = self.index(k).expect("mode outside retained cube");
        self.coeffs[i] += value;
    }

    /// Samples on a regular `n^dim` grid, nodes `z_j = 2π j / n`, are
    /// projected onto the modes `|k_j| ≤ order`.
    pub fn from_grid(samples: &[Complex64], n: usize, dim: usize, order: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("torus dimension must be positive".into()));
        }
        if !n.is_multiple_of(2) || n < 4 * order.max(1) {
            return Err(Error::Config(format!(
                "grid of {n} nodes per axis cannot resolve order {order} (need an even size ≥ {})",
                4 * order.max(1)
            )));
        }
        let total = n.pow(dim as u32);
        if samples.len() != total {
            return Err(Error::Config(format!(
                "expected {total} samples on a {n}^{dim} grid, got {}",
                samples.len()
            )));
        }
        let mut data = samples.to_vec();
        fft_nd(&mut data, n, dim, FftDirection::Forward);
        let scale = 1.0 / total as f64;
        let mut out = Self::zeros(dim, order);
        for_each_mode(dim, order, |idx, k| {
            let mut bin = 0usize;
            for &kj in k {
                bin = bin * n + kj.rem_euclid(n as i64) as usize;
            }
            out.coeffs[idx] = data[bin] * scale;
        });
        Ok(out)
    }

    /// Like [`from_grid`](Self::from_grid) for real samples; the result is
    /// made exactly real-symmetric.
    pub fn from_real_grid(samples: &[f64], n: usize, dim: usize, order: usize) -> Result<Self> {
        let c: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut s = Self::from_grid(&c, n, dim, order)?;
        s.symmetrize();
        Ok(s)
    }

    /// Values at the nodes of the regular `n^dim` grid. Modes that do not
    /// fit on the grid are aliased.
    pub fn to_grid(&self, n: usize) -> Vec<Complex64> {
        assert!(n > 0, "grid size must be positive");
        let total = n.pow(self.dim as u32);
        let mut data = vec![Complex64::default(); total];
        for_each_mode(self.dim, self.order, |idx, k| {
            let mut bin = 0usize;
            for &kj in k {
                bin = bin * n + kj.rem_euclid(n as i64) as usize;
            }
            data[bin] += self.coeffs[idx];
        });
        fft_nd(&mut data, n, self.dim, FftDirection::Inverse);
        data
    }

    pub fn to_real_grid(&self, n: usize) -> Vec<f64> {
        self.to_grid(n).into_iter().map(|v| v.re).collect()
    }

    /// Direct evaluation at a single point.
    pub fn eval(&self, z: &[f64]) -> Complex64 {
        PointEvaluator::new(self).eval(z)
    }

    pub fn eval_real(&self, z: &[f64]) -> f64 {
        self.eval(z).re
    }

    pub fn majorant_norm(&self, r: f64) -> StripNorm {
        assert!(r >= 0.0, "strip radius must be nonnegative");
        let mut value = 0.0;
        for_each_mode(self.dim, self.order, |idx, k| {
            let c = self.coeffs[idx];
            if c != Complex64::default() {
                value += c.norm() * (r * l1(k) as f64).exp();
            }
        });
        StripNorm { radius: r, value }
    }

    /// Least-squares fit of `ln|c_k|` against `-|k|₁`, with the bound then
    /// raised so the envelope dominates every coefficient used in the fit.
    /// Coefficients below `1e-13 · max|c_k|` are rounding noise and are
    /// excluded.
    pub fn decay_fit(&self) -> Result<DecayFit> {
        let max = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if max == 0.0 {
            return Err(Error::Degenerate("all coefficients are zero".into()));
        }
        let floor = max * DECAY_NOISE_FLOOR;
        let mut pts = Vec::new();
        for_each_mode(self.dim, self.order, |idx, k| {
            let a = self.coeffs[idx].norm();
            if a > floor {
                pts.push((l1(k) as f64, a.ln()));
            }
        });
        let first = pts[0].0;
        if pts.iter().all(|p| p.0 == first) {
            return Err(Error::Degenerate(
                "need nonzero coefficients on at least two shells".into(),
            ));
        }
        let n = pts.len() as f64;
        let sx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let sy = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - sx) * (p.1 - sy)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - sx) * (p.0 - sx)).sum();
        let rate = -sxy / sxx;
        let log_bound = pts.iter().map(|p| p.1 + rate * p.0).fold(f64::NEG_INFINITY, f64::max);
        Ok(DecayFit {
            bound: log_bound.exp(),
            rate,
        })
    }

    pub fn mean(&self) -> Complex64 {
        self.get(&vec![0; self.dim])
    }

    pub fn remove_mean(&self) -> Self {
        let mut out = self.clone();
        out.set(&vec![0; self.dim], Complex64::default());
        out
    }

    /// Partial derivative along `axis`: `c_k ↦ i k_axis c_k`.
    pub fn derivative(&self, axis: usize) -> Self {
        assert!(axis < self.dim, "axis out of range");
        let mut out = self.clone();
        for_each_mode(self.dim, self.order, |idx, k| {
            out.coeffs[idx] *= Complex64::new(0.0, k[axis] as f64);
        });
        out
    }

    /// Translation `f(z + shift)`, exact in coefficient space.
    pub fn translate(&self, shift: &[f64]) -> Self {
        assert_eq!(shift.len(), self.dim, "shift dimension mismatch");
        let mut out = self.clone();
        for_each_mode(self.dim, self.order, |idx, k| {
            let phase: f64 = k.iter().zip(shift).map(|(&kj, &s)| kj as f64 * s).sum();
            out.coeffs[idx] *= Complex64::from_polar(1.0, phase);
        });
        out
    }

    /// Truncates or zero-pads to `order`.
    pub fn with_order(&self, order: usize) -> Self {
        if order == self.order {
            return self.clone();
        }
        let mut out = Self::zeros(self.dim, order);
        for_each_mode(self.dim, self.order, |idx, k| {
            if let Some(j) = out.index(k) {
                out.coeffs[j] = self.coeffs[idx];
            }
        });
        out
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= a);
        out
    }

    /// Sum of two series; the result carries the larger order.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let order = self.order.max(other.order);
        let mut out = self.with_order(order);
        for_each_mode(other.dim, other.order, |idx, k| {
            out.add_at(k, other.coeffs[idx]);
        });
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == Complex64::default())
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest `|c_{-k} - conj(c_k)|` over the retained modes.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.coeffs.len();
        (0..n)
            .map(|i| (self.coeffs[n - 1 - i] - self.coeffs[i].conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_real_symmetric(&self, tol: f64) -> bool {
        self.symmetry_defect() <= tol
    }

    /// Projects onto real-valued functions: `c_k ← (c_k + conj(c_{-k}))/2`.
    pub fn symmetrize(&mut self) {
        let n = self.coeffs.len();
        for i in 0..=n / 2 {
            let j = n - 1 - i;
            let v = (self.coeffs[i] + self.coeffs[j].conj()) * 0.5;
            self.coeffs[i] = v;
            self.coeffs[j] = v.conj();
        }
    }

    /// `p(z + shift + h(z))`, evaluated on a grid oversampled by
    /// [`DEFAULT_OVERSAMPLE`] and projected back to the larger of the two
    /// orders.
    pub fn compose_displacement(&self, h: &VectorSeries, shift: &[f64]) -> Self {
        let order = self.order.max(h.order());
        self.compose_with(h, shift, order, DEFAULT_OVERSAMPLE)
    }

    /// Composition with explicit output order and oversampling factor.
    pub fn compose_with(&self, h: &VectorSeries, shift: &[f64], order: usize, oversample: usize) -> Self {
        assert_eq!(h.value_dim(), self.dim, "displacement must have one component per axis");
        assert_eq!(h.dim(), self.dim, "displacement lives on a different torus");
        assert_eq!(shift.len(), self.dim, "shift dimension mismatch");
        assert!(oversample >= 2, "oversampling factor must be at least 2");
        if self.is_zero() {
            return Self::zeros(self.dim, order);
        }
        if h.is_zero() {
            let moved = if shift.iter().all(|&s| s == 0.0) {
                self.clone()
            } else {
                self.translate(shift)
            };
            return moved.with_order(order);
        }
        let n = grid_size_for(order, oversample);
        let disp: Vec<Vec<f64>> = h.components().iter().map(|c| c.to_real_grid(n)).collect();
        let mut eval = PointEvaluator::new(self);
        let total = n.pow(self.dim as u32);
        let mut values = vec![Complex64::default(); total];
        let mut w = vec![0.0; self.dim];
        for_each_node(self.dim, n, |idx, z| {
            for a in 0..self.dim {
                w[a] = z[a] + shift[a] + disp[a][idx];
            }
            values[idx] = eval.eval(&w);
        });
        let was_real = self.is_real_symmetric(1e-14 * self.max_coeff().max(1e-300));
        let mut out = Self::from_grid(&values, n, self.dim, order).expect("composition grid sized for its order");
        if was_real {
            out.symmetrize();
        }
        out
    }

    /// Values of the series on an `n^dim` grid, computed by direct summation
    /// at nodes offset by `offset` on every axis.
    pub fn eval_on_offset_grid(&self, n: usize, offset: f64) -> Vec<Complex64> {
        let mut eval = PointEvaluator::new(self);
        let mut out = Vec::with_capacity(n.pow(self.dim as u32));
        let mut w = vec![0.0; self.dim];
        for_each_node(self.dim, n, |_, z| {
            for (wi, zi) in w.iter_mut().zip(z) {
                *wi = zi + offset;
            }
            out.push(eval.eval(&w));
        });
        out
    }
}

pub(crate) fn l1(k: &[i64]) -> i64 {
    k.iter().map(|v| v.abs()).sum()
}

/// Reusable workspace for evaluating one series at many points.
pub struct PointEvaluator<'a> {
    series: &'a FourierSeries,
    table: Vec<Complex64>,
    partial: Vec<Complex64>,
}

impl<'a> PointEvaluator<'a> {
    pub fn new(series: &'a FourierSeries) -> Self {
        let w = side(series.order);
        Self {
            series,
            table: vec![Complex64::default(); series.dim * w],
            partial: vec![Complex64::default(); series.coeffs.len() / w],
        }
    }

    pub fn eval(&mut self, z: &[f64]) -> Complex64 {
        let s = self.series;
        debug_assert_eq!(z.len(), s.dim);
        let k_max = s.order;
        let w = side(k_max);
        for (axis, &za) in z.iter().enumerate() {
            let row = &mut self.table[axis * w..(axis + 1) * w];
            row[k_max] = Complex64::new(1.0, 0.0);
            let step = Complex64::from_polar(1.0, za);
            let mut acc = Complex64::new(1.0, 0.0);
            for j in 1..=k_max {
                // refresh every 16 powers to keep the recurrence accurate
                acc = if j % 16 == 0 {
                    Complex64::from_polar(1.0, za * j as f64)
                } else {
                    acc * step
                };
                row[k_max + j] = acc;
                row[k_max - j] = acc.conj();
            }
        }
        // contract the last axis first
        let last = &self.table[(s.dim - 1) * w..s.dim * w];
        let rows = s.coeffs.len() / w;
        if s.dim == 1 {
            return dot(&s.coeffs, last);
        }
        for r in 0..rows {
            self.partial[r] = dot(&s.coeffs[r * w..(r + 1) * w], last);
        }
        let mut len = rows;
        for axis in (0..s.dim - 1).rev() {
            let row = &self.table[axis * w..(axis + 1) * w];
            let next = len / w;
            for r in 0..next {
                let v = dot(&self.partial[r * w..(r + 1) * w], row);
                self.partial[r] = v;
            }
            len = next;
        }
        self.partial[0]
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re - x.im * y.im;
        im += x.re * y.im + x.im * y.re;
    }
    Complex64::new(re, im)
}

/// Vector-valued series on the m-torus, one scalar series per component.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSeries {
    components: Vec<FourierSeries>,
}

impl VectorSeries {
    pub fn new(components: Vec<FourierSeries>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Config("vector series needs at least one component".into()))?;
        let (dim, order) = (first.dim, first.order);
        if components.iter().any(|c| c.dim != dim || c.order != order) {
            return Err(Error::Config("all components must share dimension and order".into()));
        }
        Ok(Self { components })
    }

    pub fn zeros(dim: usize, value_dim: usize, order: usize) -> Self {
        Self {
            components: vec![FourierSeries::zeros(dim, order); value_dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim
    }

    pub fn order(&self) -> usize {
        self.components[0].order
    }

    pub fn value_dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[FourierSeries] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &FourierSeries {
        &self.components[j]
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(FourierSeries::is_zero)
    }

    /// Maximum of the component majorants.
    pub fn majorant_norm(&self, r: f64) -> StripNorm {
        let value = self
            .components
            .iter()
            .map(|c| c.majorant_norm(r).value)
            .fold(0.0, f64::max);
        StripNorm { radius: r, value }
    }

    pub fn mean(&self) -> Vec<Complex64> {
        self.components.iter().map(FourierSeries::mean).collect()
    }

    pub fn map(&self, f: impl Fn(&FourierSeries) -> FourierSeries) -> Self {
        Self::new(self.components.iter().map(f).collect()).expect("map preserves shape")
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(&FourierSeries, &FourierSeries) -> FourierSeries) -> Self {
        assert_eq!(self.value_dim(), other.value_dim(), "value dimension mismatch");
        let comps = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| f(a, b))
            .collect();
        Self::new(comps).expect("zip_map preserves shape")
    }

    pub fn remove_mean(&self) -> Self {
        self.map(FourierSeries::remove_mean)
    }

    pub fn with_order(&self, order: usize) -> Self {
        self.map(|c| c.with_order(order))
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, FourierSeries::add)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, FourierSeries::sub)
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|c| c.scale(a))
    }

    pub fn translate(&self, shift: &[f64]) -> Self {
        self.map(|c| c.translate(shift))
    }

    pub fn compose_with(&self, h: &VectorSeries, shift: &[f64], order: usize, oversample: usize) -> Self {
        self.map(|c| c.compose_with(h, shift, order, oversample))
    }

    pub fn symmetry_defect(&self) -> f64 {
        self.components
            .iter()
            .map(FourierSeries::symmetry_defect)
            .fold(0.0, f64::max)
    }

    /// Flat record: dim, order, value_dim, then `re, im` pairs per
    /// coefficient, component after component.
    pub fn to_record(&self) -> FlatSeries {
        FlatSeries {
            dim: self.dim(),
            order: self.order(),
            value_dim: self.value_dim(),
            coeffs: self
                .components
                .iter()
                .flat_map(|c| c.coeffs.iter().map(|v| [v.re, v.im]))
                .collect(),
        }
    }

    pub fn from_record(rec: &FlatSeries) -> Result<Self> {
        let per = side(rec.order).pow(rec.dim as u32);
        if rec.value_dim == 0 || rec.coeffs.len() != per * rec.value_dim {
            return Err(Error::Config(format!(
                "flat series has {} coefficients, expected {} × {per}",
                rec.coeffs.len(),
                rec.value_dim
            )));
        }
        let comps = rec
            .coeffs
            .chunks(per)
            .map(|chunk| {
                FourierSeries::from_coeffs(
                    rec.dim,
                    rec.order,
                    chunk.iter().map(|p| Complex64::new(p[0], p[1])).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }
}

impl From<FourierSeries> for VectorSeries {
    fn from(s: FourierSeries) -> Self {
        Self { components: vec![s] }
    }
}

/// Serialized form of a (vector) series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatSeries {
    pub dim: usize,
    pub order: usize,
    pub value_dim: usize,
    pub coeffs: Vec<[f64; 2]>,
}

impl FlatSeries {
    /// Comma-free token list `dim order value_dim re im re im ...`.
    pub fn to_tokens(&self) -> Vec<String> {
        let mut out = vec![self.dim.to_string(), self.order.to_string(), self.value_dim.to_string()];
        for c in &self.coeffs {
            out.push(format!("{:e}", c[0]));
            out.push(format!("{:e}", c[1]));
        }
        out
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("malformed flat series: {what}"));
        if tokens.len() < 3 {
            return Err(bad("missing header"));
        }
        let int = |s: &S| s.as_ref().trim().parse::<usize>().map_err(|_| bad("header"));
        let (dim, order, value_dim) = (int(&tokens[0])?, int(&tokens[1])?, int(&tokens[2])?);
        let rest = &tokens[3..];
        if !rest.len().is_multiple_of(2) {
            return Err(bad("odd number of coefficient values"));
        }
        let coeffs = rest
            .chunks(2)
            .map(|p| {
                let re = p[0].as_ref().trim().parse::<f64>().map_err(|_| bad("re"))?;
                let im = p[1].as_ref().trim().parse::<f64>().map_err(|_| bad("im"))?;
                Ok([re, im])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim,
            order,
            value_dim,
            coeffs,
        })
    }
}

/// Right-hand side of the reconstruction bound: a coefficient envelope
/// `M e^{-|k|r}` gives `‖f‖_{r-δ} ≤ 8((4m-4)/e)^{m-1} M δ^{-m}` for
/// `0 < δ < min(1, r)`.
pub fn reconstruction_bound(m: usize, envelope: f64, delta: f64) -> f64 {
    let base = (4.0 * m as f64 - 4.0) / E;
    8.0 * base.powi(m as i32 - 1) * envelope * delta.powi(-(m as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn grid_1d(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|j| f(TAU * j as f64 / n as f64)).collect()
    }

    #[test]
    fn zero_samples_give_zero_series() {
        let s = FourierSeries::from_real_grid(&[0.0; 16], 16, 1, 4).unwrap();
        assert!(s.is_zero());
        assert!(s.to_grid(8).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn single_mode_resolved_exactly() {
        let samples: Vec<Complex64> = (0..8)
            .map(|j| Complex64::from_polar(1.0, TAU * j as f64 / 8.0))
            .collect();
        let s = FourierSeries::from_grid(&samples, 8, 1, 2).unwrap();
        for k in -2..=2 {
            let want = if k == 1 { c(1.0, 0.0) } else { c(0.0, 0.0) };
            assert!((s.get(&[k]) - want).norm() < 1e-15, "k={k}");
        }
    }

    #[test]
    fn sine_coefficients() {
        let s = FourierSeries::from_real_grid(&grid_1d(16, f64::sin), 16, 1, 4).unwrap();
        assert!((s.get(&[1]) - c(0.0, -0.5)).norm() < 1e-15);
        assert!((s.get(&[-1]) - c(0.0, 0.5)).norm() < 1e-15);
        assert!(s.get(&[2]).norm() < 1e-15);
    }

    #[test]
    fn grid_too_small_is_rejected() {
        let err = FourierSeries::from_real_grid(&[0.0; 8], 8, 1, 4).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(FourierSeries::from_real_grid(&[0.0; 15], 16, 1, 4).is_err());
    }

    #[test]
    fn inverse_transform_of_unit_mode() {
        let s = FourierSeries::single_mode(1, 3, &[1], c(1.0, 0.0));
        for (j, v) in s.to_grid(12).iter().enumerate() {
            let x = TAU * j as f64 / 12.0;
            assert!((v - Complex64::from_polar(1.0, x)).norm() < 1e-15);
        }
    }

    #[test]
    fn majorant_examples() {
        assert_eq!(FourierSeries::zeros(2, 3).majorant_norm(0.7).value, 0.0);
        let a = c(0.3, -0.4);
        let s = FourierSeries::single_mode(2, 3, &[2, -1], a);
        let want = 0.5 * (0.8f64 * 3.0).exp();
        assert!((s.majorant_norm(0.8).value - want).abs() < 1e-15);
        let sin = FourierSeries::sine(1, 4, &[1], 1.0);
        assert!((sin.majorant_norm(0.5).value - 0.5f64.exp()).abs() < 1e-15);
        assert!((sin.majorant_norm(0.5).value - 1.64872).abs() < 1e-5);
    }

    #[test]
    fn decay_fit_exact_profile() {
        let coeffs = (-10i64..=10).map(|k| c((-(k.abs() as f64)).exp(), 0.0)).collect();
        let s = FourierSeries::from_coeffs(1, 10, coeffs).unwrap();
        let fit = s.decay_fit().unwrap();
        assert!((fit.bound - 1.0).abs() < 1e-9);
        assert!((fit.rate - 1.0).abs() < 1e-9);
    }

    #[test]
    fn decay_fit_rejects_degenerate() {
        assert!(matches!(
            FourierSeries::zeros(1, 5).decay_fit(),
            Err(Error::Degenerate(_))
        ));
        // one shell only
        let s = FourierSeries::cosine(1, 5, &[2], 1.0);
        assert!(matches!(s.decay_fit(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn decay_fit_of_poisson_type_kernel() {
        // oracle: coefficients of 1/(2 - cos x) by a 4096-node trapezoid sum
        let oracle = |k: i64| {
            let n = 4096;
            (0..n)
                .map(|j| {
                    let x = TAU * j as f64 / n as f64;
                    (k as f64 * x).cos() / (2.0 - x.cos())
                })
                .sum::<f64>()
                / n as f64
        };
        let r_true = (2.0 + 3f64.sqrt()).ln();
        for k in 0..6 {
            let closed = (-(r_true) * k as f64).exp() / 3f64.sqrt();
            assert!((oracle(k) - closed).abs() < 1e-12);
        }
        let s = FourierSeries::from_real_grid(&grid_1d(128, |x| 1.0 / (2.0 - x.cos())), 128, 1, 32).unwrap();
        for k in 0..6 {
            assert!((s.get(&[k]).re - oracle(k)).abs() < 1e-12);
        }
        let fit = s.decay_fit().unwrap();
        assert!((fit.rate - r_true).abs() < 0.1 * r_true, "rate {}", fit.rate);
    }

    #[test]
    fn compose_identity_and_shift() {
        let p = FourierSeries::sine(1, 8, &[1], 1.0).add(&FourierSeries::cosine(1, 8, &[3], 0.2));
        let zero = VectorSeries::zeros(1, 1, 8);
        assert_eq!(p.compose_displacement(&zero, &[0.0]), p);

        let mu = 0.3819660112501051;
        let e = FourierSeries::single_mode(1, 4, &[1], c(1.0, 0.0));
        let shifted = e.compose_displacement(&VectorSeries::zeros(1, 1, 4), &[TAU * mu]);
        let want = Complex64::from_polar(1.0, TAU * mu);
        assert!((shifted.get(&[1]) - want).norm() < 1e-15);
    }

    #[test]
    fn compose_matches_pointwise_oracle() {
        let p = FourierSeries::sine(1, 32, &[1], 1.0);
        let h = VectorSeries::from(FourierSeries::sine(1, 32, &[1], 0.1));
        let q = p.compose_displacement(&h, &[0.0]);
        assert!(q.symmetry_defect() == 0.0);
        let vals = q.eval_on_offset_grid(256, 0.0);
        for (j, v) in vals.iter().enumerate() {
            let x = TAU * j as f64 / 256.0;
            let want = (x + 0.1 * x.sin()).sin();
            assert!((v.re - want).abs() < 1e-10, "node {j}");
            assert!(v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn mean_and_derivative() {
        let f = FourierSeries::constant(1, 4, 3.0).add(&FourierSeries::sine(1, 4, &[1], 1.0));
        assert_eq!(f.mean(), c(3.0, 0.0));
        assert_eq!(f.remove_mean(), FourierSeries::sine(1, 4, &[1], 1.0));
        let d = FourierSeries::sine(1, 4, &[1], 1.0).derivative(0);
        assert_eq!(d, FourierSeries::cosine(1, 4, &[1], 1.0));

        let e = FourierSeries::single_mode(2, 3, &[2, -1], c(1.0, 0.0));
        let d0 = e.derivative(0);
        assert_eq!(d0.get(&[2, -1]), c(0.0, 2.0));
        assert_eq!(d0.get(&[1, -1]), c(0.0, 0.0));
    }

    #[test]
    fn eval_matches_grid_in_two_dims() {
        let mut f = FourierSeries::sine(2, 3, &[1, 2], 0.7);
        f = f.add(&FourierSeries::cosine(2, 3, &[-3, 1], 0.2));
        let g = f.to_grid(16);
        let direct = f.eval_on_offset_grid(16, 0.0);
        for (a, b) in g.iter().zip(&direct) {
            assert!((a - b).norm() < 1e-14);
        }
        let z: [f64; 2] = [0.3, -1.1];
        let want = 0.7 * (z[0] + 2.0 * z[1]).sin() + 0.2 * (-3.0 * z[0] + z[1]).cos();
        assert!((f.eval_real(&z) - want).abs() < 1e-14);
    }

    #[test]
    fn flat_record_round_trip() {
        let f = VectorSeries::new(vec![
            FourierSeries::sine(2, 2, &[1, 0], 0.1),
            FourierSeries::cosine(2, 2, &[1, -1], 1.0 / 3.0),
        ])
        .unwrap();
        let rec = f.to_record();
        assert_eq!(rec.coeffs.len(), 2 * 25);
        let back = FlatSeries::from_tokens(&rec.to_tokens()).unwrap();
        assert_eq!(VectorSeries::from_record(&back).unwrap(), f);
        assert!(FlatSeries::from_tokens(&["1", "2"]).is_err());
    }

    #[test]
    fn reconstruction_bound_one_dim_convention() {
        assert!((reconstruction_bound(1, 2.0, 0.5) - 32.0).abs() < 1e-12);
    }
}
