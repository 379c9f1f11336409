//! Weak-probe response of the cavity at the upper sideband.
//!
//! The probe at detuning δ from the pump drives the mechanical pair through
//! the beat note. The mechanical susceptibility of the Coulomb-coupled pair
//! is
//!
//! ```text
//! A(δ) = m₁(ω₁² − δ² − iδγ₁) − ħ²λ² / (m₂(ω₂² − δ² − iδγ₂))
//! ```
//!
//! the counter-rotating (lower) sideband enters through
//!
//! ```text
//! B(δ) = 1 + iħg²n / (A [κ − i(Δ + δ)])
//! ```
//!
//! and the intracavity sideband amplitude is
//!
//! ```text
//! a₊ = 1 / (κ + i(Δ − δ) − iħg²n / (A B))
//! ```
//!
//! The reflected quadrature is ε_R = 2κ a₊; its real part is absorption,
//! its imaginary part dispersion.

use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelParams, HBAR};
use crate::output::{content_hash, num};
use crate::steady_state::SteadyState;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Clone, Debug, PartialEq, Error, Serialize, Deserialize)]
pub enum ResponseError {
    #[error("second resonator susceptibility vanishes at δ = {delta:e}")]
    PolePassage { delta: f64 },
    #[error("mechanical susceptibility A underflows at δ = {delta:e}")]
    SingularA { delta: f64 },
    #[error("sideband denominator {re:e}{im:+e}i is singular at δ = {delta:e}")]
    SingularDenominator { delta: f64, re: f64, im: f64 },
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GridError {
    #[error("grid needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("grid is not strictly increasing at index {0}")]
    NotIncreasing(usize),
    #[error("grid value at index {0} is not finite")]
    NonFinite(usize),
    #[error("cannot parse grid `{0}`; expected start:stop:count")]
    Malformed(String),
}

/// Strictly increasing probe detunings, rad/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaGrid(Vec<f64>);

impl DeltaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() < 2 {
            return Err(GridError::TooFewPoints(values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(GridError::NotIncreasing(i + 1));
        }
        Ok(DeltaGrid(values))
    }

    /// `count` evenly spaced points from `start·ω₁` to `stop·ω₁`.
    pub fn in_omega1_units(omega1: f64, start: f64, stop: f64, count: usize) -> Result<Self, GridError> {
        Self::linspace(start * omega1, stop * omega1, count)
    }

    pub fn linspace(start: f64, stop: f64, count: usize) -> Result<Self, GridError> {
        if count < 2 {
            return Err(GridError::TooFewPoints(count));
        }
        let step = (stop - start) / (count - 1) as f64;
        let values = (0..count).map(|i| if i + 1 == count { stop } else { start + step * i as f64 }).collect();
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Grid spec as accepted on the command line: `start:stop:count`, with
/// start and stop in units of ω₁.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn to_grid(self, omega1: f64) -> Result<DeltaGrid, GridError> {
        DeltaGrid::in_omega1_units(omega1, self.start, self.stop, self.count)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { start: 0.9, stop: 1.1, count: 4001 }
    }
}

impl std::str::FromStr for GridSpec {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GridError::Malformed(s.to_string());
        let mut parts = s.split(':');
        let (Some(a), Some(b), Some(c), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        Ok(GridSpec {
            start: a.trim().parse().map_err(|_| bad())?,
            stop: b.trim().parse().map_err(|_| bad())?,
            count: c.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// Mechanical susceptibility A(δ) of the Coulomb-coupled pair.
pub fn chi_a(p: &ModelParams, delta: f64) -> Result<Complex64, ResponseError> {
    let own = p.m1 * Complex64::new(p.omega1 * p.omega1 - delta * delta, -delta * p.gamma1);
    let partner = p.m2 * Complex64::new(p.omega2 * p.omega2 - delta * delta, -delta * p.gamma2);
    if partner.norm() == 0.0 {
        return Err(ResponseError::PolePassage { delta });
    }
    // the hybridization term is formed on its own before the subtraction
    let coupling = HBAR * HBAR * p.coulomb_lambda * p.coulomb_lambda;
    let hybrid = Complex64::new(coupling, 0.0) / partner;
    if !hybrid.is_finite() {
        return Err(ResponseError::PolePassage { delta });
    }
    Ok(own - hybrid)
}

/// ħg²|a_s|², the optomechanical coupling weight.
fn pressure_weight(p: &ModelParams, s: &SteadyState) -> f64 {
    HBAR * p.g * p.g * s.n_cav
}

fn factor_b_with(p: &ModelParams, s: &SteadyState, delta: f64, a: Complex64) -> Result<Complex64, ResponseError> {
    if a.norm() < 1e-30 * p.m1 * p.omega1 * p.omega1 {
        return Err(ResponseError::SingularA { delta });
    }
    let lower = Complex64::new(p.kappa, -(s.delta_eff + delta));
    Ok(1.0 + I * pressure_weight(p, s) / (a * lower))
}

/// Lower-sideband correction B(δ).
pub fn factor_b(p: &ModelParams, s: &SteadyState, delta: f64) -> Result<Complex64, ResponseError> {
    let a = chi_a(p, delta)?;
    factor_b_with(p, s, delta, a)
}

/// Denominator of a₊, i.e. 1/a₊.
pub fn a_plus_denominator(p: &ModelParams, s: &SteadyState, delta: f64) -> Result<Complex64, ResponseError> {
    let a = chi_a(p, delta)?;
    let b = factor_b_with(p, s, delta, a)?;
    Ok(Complex64::new(p.kappa, s.delta_eff - delta) - I * pressure_weight(p, s) / (a * b))
}

/// Upper-sideband intracavity amplitude a₊(δ).
pub fn a_plus(p: &ModelParams, s: &SteadyState, delta: f64) -> Result<Complex64, ResponseError> {
    let den = a_plus_denominator(p, s, delta)?;
    let value = 1.0 / den;
    if den.norm() == 0.0 || !value.is_finite() {
        return Err(ResponseError::SingularDenominator { delta, re: den.re, im: den.im });
    }
    Ok(value)
}

/// Reflected probe quadrature ε_R = 2κ a₊.
pub fn epsilon_r(p: &ModelParams, s: &SteadyState, delta: f64) -> Result<Complex64, ResponseError> {
    Ok(2.0 * p.kappa * a_plus(p, s, delta)?)
}

/// Output-field sideband ε_out+ = ε_R − 1.
pub fn epsilon_out_plus(p: &ModelParams, s: &SteadyState, delta: f64) -> Result<Complex64, ResponseError> {
    Ok(epsilon_r(p, s, delta)? - 1.0)
}

/// Closed-form dε_R/dδ, by differentiating the a₊ denominator.
pub fn d_epsilon_r(p: &ModelParams, s: &SteadyState, delta: f64) -> Result<Complex64, ResponseError> {
    let a = chi_a(p, delta)?;
    let b = factor_b_with(p, s, delta, a)?;
    let w = pressure_weight(p, s);
    let partner = p.m2 * Complex64::new(p.omega2 * p.omega2 - delta * delta, -delta * p.gamma2);
    let d_partner = p.m2 * Complex64::new(-2.0 * delta, -p.gamma2);
    let coupling = HBAR * HBAR * p.coulomb_lambda * p.coulomb_lambda;
    let d_a = p.m1 * Complex64::new(-2.0 * delta, -p.gamma1) + coupling * d_partner / (partner * partner);

    // A·B = A + iw/(κ − i(Δ + δ))
    let lower = Complex64::new(p.kappa, -(s.delta_eff + delta));
    let ab = a * b;
    let d_ab = d_a + I * w * I / (lower * lower);
    let den = Complex64::new(p.kappa, s.delta_eff - delta) - I * w / ab;
    let d_den = -I + I * w * d_ab / (ab * ab);
    let value = -2.0 * p.kappa * d_den / (den * den);
    if !value.is_finite() {
        return Err(ResponseError::SingularDenominator { delta, re: den.re, im: den.im });
    }
    Ok(value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponsePoint {
    pub delta: f64,
    pub a_plus: Complex64,
    pub eps_r: Complex64,
    pub absorption: f64,
    pub dispersion: f64,
}

impl ResponsePoint {
    pub fn eps_out_plus(&self) -> Complex64 {
        self.eps_r - 1.0
    }
}

pub fn response_point(p: &ModelParams, s: &SteadyState, delta: f64) -> Result<ResponsePoint, ResponseError> {
    let a_plus = a_plus(p, s, delta)?;
    let eps_r = 2.0 * p.kappa * a_plus;
    Ok(ResponsePoint { delta, a_plus, eps_r, absorption: eps_r.re, dispersion: eps_r.im })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub index: usize,
    pub delta: f64,
    pub error: ResponseError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Hash of the parameters and steady state the spectrum was computed for.
    pub params_hash: String,
    pub omega1: f64,
    pub points: Vec<ResponsePoint>,
    pub failures: Vec<PointFailure>,
}

pub const SPECTRUM_CSV_HEADER: &str = "delta_rad_s,delta_over_omega1_minus_1,re_eps_R,im_eps_R,re_a_plus,im_a_plus";

impl Spectrum {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{SPECTRUM_CSV_HEADER}")?;
        for pt in &self.points {
            writeln!(out, "{}", spectrum_csv_row(pt, self.omega1))?;
        }
        Ok(())
    }

    /// Interior local minima of the absorption trace, as point indices.
    pub fn absorption_minima(&self) -> Vec<usize> {
        local_minima(&self.points.iter().map(|p| p.absorption).collect::<Vec<_>>())
    }
}

pub fn spectrum_csv_row(pt: &ResponsePoint, omega1: f64) -> String {
    format!(
        "{},{},{},{},{},{}",
        num(pt.delta),
        num((pt.delta - omega1) / omega1),
        num(pt.eps_r.re),
        num(pt.eps_r.im),
        num(pt.a_plus.re),
        num(pt.a_plus.im)
    )
}

/// Indices i with v[i-1] > v[i] < v[i+1].
pub fn local_minima(v: &[f64]) -> Vec<usize> {
    (1..v.len().saturating_sub(1)).filter(|&i| v[i] < v[i - 1] && v[i] < v[i + 1]).collect()
}

pub fn spectrum_hash(p: &ModelParams, s: &SteadyState) -> String {
    content_hash(&(p, s))
}

/// ε_R over a grid. Failing points are recorded, not fatal.
pub fn spectrum(p: &ModelParams, s: &SteadyState, grid: &DeltaGrid) -> Spectrum {
    let results: Vec<Result<ResponsePoint, ResponseError>> =
        grid.values().par_iter().map(|&delta| response_point(p, s, delta)).collect();
    let mut points = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (index, (result, &delta)) in results.into_iter().zip(grid.values()).enumerate() {
        match result {
            Ok(pt) => points.push(pt),
            Err(error) => failures.push(PointFailure { index, delta, error }),
        }
    }
    Spectrum { params_hash: spectrum_hash(p, s), omega1: p.omega1, points, failures }
}
