//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export has a plain Rust counterpart so the numerics can be tested
//! natively; the wrappers only translate errors into JS exceptions.

use circlekam_core::dynamics::Displacement;
use circlekam_core::fourier::FourierSeries;
use circlekam_core::kam::{conjugate_circle_family, KamConfig, ParameterFamily};
use circlekam_core::rotation::{arnold_staircase, longest_plateau, tongue_grid};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest iteration count accepted from the page; keeps a click responsive.
pub const MAX_ITERATES: u64 = 200_000;
pub const MAX_POINTS: usize = 4_000;

fn check(count: usize, n: u64) -> Result<(), String> {
    if count == 0 || count > MAX_POINTS {
        return Err(format!("point count must be in 1..={MAX_POINTS}, got {count}"));
    }
    if n == 0 || n > MAX_ITERATES {
        return Err(format!("iterations must be in 1..={MAX_ITERATES}, got {n}"));
    }
    Ok(())
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Rotation numbers of `x + 2πΩ + eps sin x` for `count` values of Ω in
/// [0, 1].
pub fn staircase_values(eps: f64, count: usize, n: u64) -> Result<Vec<f64>, String> {
    check(count, n)?;
    let est = arnold_staircase(eps, &linspace(0.0, 1.0, count), n).map_err(|e| e.to_string())?;
    Ok(est.into_iter().map(|e| e.value).collect())
}

/// Row-major grid of rotation numbers, eps rows from 0 to `eps_max`.
pub fn tongue_values(omega_count: usize, eps_count: usize, eps_max: f64, n: u64) -> Result<Vec<f64>, String> {
    check(omega_count * eps_count, n)?;
    if !(0.0..1.0).contains(&eps_max) {
        return Err(format!("eps_max must lie in [0, 1), got {eps_max}"));
    }
    let grid = tongue_grid(&linspace(0.0, 1.0, omega_count), &linspace(0.0, eps_max, eps_count), n)
        .map_err(|e| e.to_string())?;
    Ok(grid.concat())
}

/// Width in Ω of the mode-locked interval at rotation number p/q.
pub fn plateau_width(eps: f64, p: u32, q: u32, count: usize, n: u64) -> Result<f64, String> {
    check(count, n)?;
    if q == 0 {
        return Err("denominator must be positive".into());
    }
    let omegas = linspace(0.0, 1.0, count);
    let est = arnold_staircase(eps, &omegas, n).map_err(|e| e.to_string())?;
    Ok(longest_plateau(&est, p as f64 / q as f64).map_or(0.0, |(a, b)| omegas[b] - omegas[a]))
}

#[derive(Debug, Serialize)]
pub struct Stage {
    pub order: usize,
    pub residual_in: f64,
    pub residual_out: f64,
}

#[derive(Debug, Serialize)]
pub struct KamDemo {
    pub status: String,
    /// Constant term 2πc of the matched map `x + c + eps sin(mode x)`.
    pub parameter: f64,
    pub defect: f64,
    pub stages: Vec<Stage>,
    /// Conjugacy `h` sampled at `2πj/samples`.
    pub h: Vec<f64>,
}

/// Conjugates `x + c + eps sin(mode x)` to the rotation by `2πμ`, choosing
/// `c` so the rotation number is `μ`.
pub fn kam_demo(mu: f64, eps: f64, mode: u32, samples: usize) -> Result<KamDemo, String> {
    if !(1..=8).contains(&mode) {
        return Err(format!("mode must be in 1..=8, got {mode}"));
    }
    if samples == 0 || samples > MAX_POINTS {
        return Err(format!("samples must be in 1..={MAX_POINTS}, got {samples}"));
    }
    let q = FourierSeries::sine(1, mode as usize, &[mode as i64], 1.0);
    let family = ParameterFamily::circle(eps, Displacement::Fourier(q));
    let (c, res) = conjugate_circle_family(&family, mu, &KamConfig::for_dim(1), 40_000).map_err(|e| e.to_string())?;
    Ok(KamDemo {
        status: res.status.as_str().to_string(),
        parameter: c,
        defect: res.defect,
        stages: res
            .records
            .iter()
            .map(|r| Stage {
                order: r.order,
                residual_in: r.residual_in,
                residual_out: r.residual_out,
            })
            .collect(),
        h: res.h.components()[0].to_real_grid(samples),
    })
}

#[wasm_bindgen]
pub fn staircase(eps: f64, count: usize, n: u32) -> Result<Vec<f64>, JsError> {
    staircase_values(eps, count, n as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn tongues(omega_count: usize, eps_count: usize, eps_max: f64, n: u32) -> Result<Vec<f64>, JsError> {
    tongue_values(omega_count, eps_count, eps_max, n as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn plateau(eps: f64, p: u32, q: u32, count: usize, n: u32) -> Result<f64, JsError> {
    plateau_width(eps, p, q, count, n as u64).map_err(|e| JsError::new(&e))
}

/// JSON text of a [`KamDemo`].
#[wasm_bindgen]
pub fn kam(mu: f64, eps: f64, mode: u32, samples: usize) -> Result<String, JsError> {
    let demo = kam_demo(mu, eps, mode, samples).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&demo).map_err(|e| JsError::new(&e.to_string()))
}
