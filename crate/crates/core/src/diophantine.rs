//! Finite-range certification of small divisors.
//!
//! A frequency vector `μ` is of type `(C, ν)` when
//! `|e^{2πi<μ,k>} - 1| > C / |k|₁^ν` for every nonzero integer `k`. Only a
//! finite range `|k|₁ ≤ K` can be scanned, so a certificate is evidence up
//! to `K`, not a proof.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Divisors below this are treated as exact resonances.
pub const RESONANCE_TOL: f64 = 1e-14;

/// Default cap on `m · (2K + 1)^m` lattice points visited by [`certify`].
pub const DEFAULT_WORK_BUDGET: u64 = 1_000_000_000;

/// Distance to the nearest integer under which [`resonance_screen`] flags a
/// mode.
pub const SCREEN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiophantineCertificate {
    pub mu: Vec<f64>,
    pub nu: f64,
    pub k_checked: usize,
    /// `min |e^{2πi<μ,k>} - 1| · |k|₁^ν` over `0 < |k|₁ ≤ k_checked`.
    pub c_best: f64,
    pub worst_k: Vec<i64>,
}

impl DiophantineCertificate {
    pub fn is_resonant(&self) -> bool {
        divisor(&self.mu, &self.worst_k) < RESONANCE_TOL
    }

    /// Whether every mode with `|k|₁ ≤ l1` was scanned.
    pub fn covers(&self, l1: usize) -> bool {
        self.k_checked >= l1
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Signed distance of `<μ, k>` to the nearest integer, from a compensated
/// dot product.
pub fn phase_residue(mu: &[f64], k: &[i64]) -> f64 {
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for (&m, &kj) in mu.iter().zip(k) {
        let kf = kj as f64;
        let p = m * kf;
        let pe = m.mul_add(kf, -p);
        let (s, e) = two_sum(hi, p);
        hi = s;
        lo += e + pe;
    }
    let r = (hi - hi.round()) + lo;
    r - r.round()
}

/// `|e^{2πi<μ,k>} - 1|`, evaluated as the chord `2|sin(π r)|`.
pub fn divisor(mu: &[f64], k: &[i64]) -> f64 {
    2.0 * (std::f64::consts::PI * phase_residue(mu, k)).sin().abs()
}

fn l1(k: &[i64]) -> i64 {
    k.iter().map(|v| v.abs()).sum()
}

/// Visits one representative of each pair `±k` with `0 < |k|₁ ≤ max_l1`:
/// the one whose first nonzero entry is positive. Order is lexicographic.
fn for_each_half_mode(m: usize, max_l1: usize, mut f: impl FnMut(&[i64])) {
    let kmax = max_l1 as i64;
    let mut k = vec![-kmax; m];
    loop {
        let first = k.iter().find(|&&v| v != 0);
        if matches!(first, Some(&v) if v > 0) && l1(&k) <= kmax {
            f(&k);
        }
        let mut axis = m;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if k[axis] < kmax {
                k[axis] += 1;
                break;
            }
            k[axis] = -kmax;
        }
    }
}

fn work(m: usize, k: usize) -> f64 {
    m as f64 * (2.0 * k as f64 + 1.0).powi(m as i32)
}

/// Exhaustive scan of `0 < |k|₁ ≤ max_l1` with the default work budget.
pub fn certify(mu: &[f64], nu: f64, max_l1: usize) -> Result<DiophantineCertificate> {
    certify_with_budget(mu, nu, max_l1, DEFAULT_WORK_BUDGET)
}

pub fn certify_with_budget(mu: &[f64], nu: f64, max_l1: usize, budget: u64) -> Result<DiophantineCertificate> {
    if mu.is_empty() {
        return Err(Error::Config("frequency vector is empty".into()));
    }
    if max_l1 == 0 {
        return Err(Error::Config("scan range K must be at least 1".into()));
    }
    if !(nu > 0.0) {
        return Err(Error::Config(format!("exponent nu must be positive, got {nu}")));
    }
    let m = mu.len();
    if work(m, max_l1) > budget as f64 {
        let largest_completed = (0..max_l1).rev().find(|&k| work(m, k) <= budget as f64).unwrap_or(0);
        return Err(Error::Budget { largest_completed });
    }
    let mut best = f64::INFINITY;
    let mut worst_k = Vec::new();
    for_each_half_mode(m, max_l1, |k| {
        let scaled = divisor(mu, k) * (l1(k) as f64).powf(nu);
        // strict comparison keeps the lexicographically first minimizer
        if scaled < best {
            best = scaled;
            worst_k = k.to_vec();
        }
    });
    Ok(DiophantineCertificate {
        mu: mu.to_vec(),
        nu,
        k_checked: max_l1,
        c_best: best,
        worst_k,
    })
}

/// All `k` (one of each `±k` pair) with `0 < |k|₁ ≤ max_l1` and
/// `dist(<α,k>, ℤ) < 1e-9`. An empty list certifies non-resonance up to
/// `max_l1`.
pub fn resonance_screen(alpha: &[f64], max_l1: usize) -> Result<Vec<Vec<i64>>> {
    if max_l1 == 0 {
        return Err(Error::Config("scan range K must be at least 1".into()));
    }
    let mut out = Vec::new();
    for_each_half_mode(alpha.len(), max_l1, |k| {
        if phase_residue(alpha, k).abs() < SCREEN_TOL {
            out.push(k.to_vec());
        }
    });
    Ok(out)
}

const CATALOG: [(f64, &str); 6] = [
    (0.6180339887498949, "(√5-1)/2"),
    (0.41421356237309503, "√2-1"),
    (0.7320508075688772, "√3-1"),
    (0.30277563773199456, "(√13-3)/2"),
    (0.2360679774997897, "√5-2"),
    (0.1622776601683795, "√10-3"),
];

/// Badly approximable test frequencies: index 0 is `(√5-1)/2`, index 1 is
/// `√2-1`.
pub fn suggest_quadratic_irrational(index: usize) -> Result<f64> {
    CATALOG
        .get(index)
        .map(|e| e.0)
        .ok_or_else(|| Error::Lookup(format!("no quadratic irrational with index {index}")))
}

pub fn quadratic_irrational_name(index: usize) -> Option<&'static str> {
    CATALOG.get(index).map(|e| e.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fibonacci_up_to(n: i64) -> Vec<i64> {
        let mut f = vec![1, 2];
        while *f.last().unwrap() <= n {
            let k = f.len();
            f.push(f[k - 1] + f[k - 2]);
        }
        f
    }

    #[test]
    fn exact_resonances() {
        let c = certify(&[0.5], 1.0, 4).unwrap();
        assert_eq!(c.c_best, 0.0);
        assert_eq!(c.worst_k, vec![2]);
        assert!(c.is_resonant());

        let c = certify(&[0.0], 1.0, 1).unwrap();
        assert_eq!(c.c_best, 0.0);
        assert_eq!(c.worst_k, vec![1]);
    }

    #[test]
    fn golden_worst_mode_is_fibonacci() {
        let g = suggest_quadratic_irrational(0).unwrap();
        let c = certify(&[g], 1.0, 1000).unwrap();
        assert!(c.c_best > 0.0 && !c.is_resonant());
        assert!(fibonacci_up_to(1000).contains(&c.worst_k[0]), "{:?}", c.worst_k);
        // brute-force oracle with the exponential form
        let brute = (1..=1000)
            .map(|k| {
                let z = num_complex::Complex64::from_polar(1.0, std::f64::consts::TAU * g * k as f64);
                (z - 1.0).norm() * k as f64
            })
            .fold(f64::INFINITY, f64::min);
        assert!((brute - c.c_best).abs() < 1e-10);
    }

    #[test]
    fn budget_reports_largest_completed_range() {
        let err = certify_with_budget(&[0.1, 0.2], 2.0, 100, 2 * 41 * 41).unwrap_err();
        assert_eq!(err, Error::Budget { largest_completed: 20 });
        assert!(certify(&[0.3], 0.0, 3).is_err());
        assert!(certify(&[0.3], 1.0, 0).is_err());
    }

    #[test]
    fn screens() {
        let hits = resonance_screen(&[1.0 / 3.0], 5).unwrap();
        assert_eq!(hits, vec![vec![3]]);
        let sqrt2 = suggest_quadratic_irrational(1).unwrap();
        assert!(resonance_screen(&[sqrt2], 1000).unwrap().is_empty());
        let hits = resonance_screen(&[0.25, 0.75], 4).unwrap();
        assert!(hits.contains(&vec![2, 2]));
        assert!(hits.contains(&vec![1, 1]));
        assert!(!hits.contains(&vec![1, -1]));
    }

    #[test]
    fn catalog() {
        assert!((suggest_quadratic_irrational(0).unwrap() - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-16);
        assert!((suggest_quadratic_irrational(1).unwrap() - 0.4142135624).abs() < 1e-10);
        assert!(matches!(suggest_quadratic_irrational(99), Err(Error::Lookup(_))));
    }

    #[test]
    fn half_modes_cover_each_pair_once() {
        let mut count = 0;
        for_each_half_mode(2, 3, |k| {
            assert!(l1(k) > 0 && l1(k) <= 3);
            count += 1;
        });
        // |k|₁ ≤ 3 in Z² has 25 points; minus the origin, halved
        assert_eq!(count, 12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn chord_matches_exponential(theta in 0.0f64..1.0) {
            let z = num_complex::Complex64::from_polar(1.0, std::f64::consts::TAU * theta);
            let chord = divisor(&[theta], &[1]);
            prop_assert!(((z - 1.0).norm() - chord).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn certify_monotone_in_range(a in 0.0f64..1.0, b in 0.0f64..1.0, k1 in 1usize..15, extra in 0usize..15) {
            let c1 = certify(&[a, b], 2.0, k1).unwrap();
            let c2 = certify(&[a, b], 2.0, k1 + extra).unwrap();
            prop_assert!(c2.c_best <= c1.c_best);
        }

        #[test]
        fn worst_mode_symmetric(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let c = certify(&[a, b], 2.0, 8).unwrap();
            let neg: Vec<i64> = c.worst_k.iter().map(|v| -v).collect();
            let scaled = divisor(&[a, b], &neg) * (l1(&neg) as f64).powf(2.0);
            prop_assert_eq!(scaled, c.c_best);
            prop_assert!(c.c_best <= divisor(&[a, b], &c.worst_k) * (l1(&c.worst_k) as f64).powf(2.0));
        }
    }
}
