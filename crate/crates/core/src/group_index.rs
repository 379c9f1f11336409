//! Dispersion slopes, transparency points and the group-velocity metric.
//!
//! The group index is only known up to a constant factor from the reflected
//! field, so the primary output is the unnormalized metric Im[dε_R/dδ]
//! (seconds). Negative means anomalous dispersion (fast light), positive
//! normal dispersion (slow light).

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{build_params, ModelError, ModelParams};
use crate::output::num;
use crate::response::{d_epsilon_r, epsilon_r, ResponseError};
use crate::steady_state::{solve_direct, SteadyError, SteadyState};

#[derive(Clone, Debug, PartialEq, Error, Serialize, Deserialize)]
pub enum SlopeError {
    #[error("finite-difference step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("Richardson estimates disagree by {disagreement:e} at step {h:e}; shrink the step")]
    StepTooLarge { h: f64, disagreement: f64 },
    #[error(transparent)]
    Response(#[from] ResponseError),
}

#[derive(Clone, Debug, PartialEq, Error, Serialize, Deserialize)]
pub enum TransparencyError {
    #[error("invalid search window [{0:e}, {1:e}]")]
    BadWindow(f64, f64),
    #[error("no absorption minimum below {threshold} (found {} candidate minima)", candidates.len())]
    NoTransparencyWindow {
        threshold: f64,
        /// (δ, Re ε_R) of every refined local minimum, above threshold.
        candidates: Vec<(f64, f64)>,
    },
    #[error(transparent)]
    Response(#[from] ResponseError),
    #[error(transparent)]
    Slope(#[from] SlopeError),
}

/// Maximum relative disagreement between the two Richardson levels.
pub const RICHARDSON_TOLERANCE: f64 = 1e-4;

/// Default step for [`dispersion_slope`]: 1e-6 ω₁.
pub fn default_step(p: &ModelParams) -> f64 {
    1e-6 * p.omega1
}

fn central_im(p: &ModelParams, s: &SteadyState, delta: f64, h: f64) -> Result<f64, ResponseError> {
    let up = epsilon_r(p, s, delta + h)?;
    let down = epsilon_r(p, s, delta - h)?;
    Ok((up.im - down.im) / (2.0 * h))
}

/// Im[dε_R/dδ] by central differences with one Richardson step (h, h/2).
pub fn dispersion_slope(p: &ModelParams, s: &SteadyState, delta: f64, h: f64) -> Result<f64, SlopeError> {
    if h.is_nan() || h <= 0.0 {
        return Err(SlopeError::NonPositiveStep(h));
    }
    let coarse = central_im(p, s, delta, h)?;
    let fine = central_im(p, s, delta, 0.5 * h)?;
    let extrapolated = (4.0 * fine - coarse) / 3.0;
    let scale = extrapolated.abs().max(f64::MIN_POSITIVE);
    let disagreement = (extrapolated - fine).abs() / scale;
    if disagreement > RICHARDSON_TOLERANCE {
        return Err(SlopeError::StepTooLarge { h, disagreement });
    }
    Ok(extrapolated)
}

/// [`dispersion_slope`], shrinking the step tenfold (up to four times) when
/// the structure is under-resolved.
pub fn dispersion_slope_adaptive(p: &ModelParams, s: &SteadyState, delta: f64) -> Result<f64, SlopeError> {
    let mut h = default_step(p);
    let mut last = None;
    for _ in 0..5 {
        match dispersion_slope(p, s, delta, h) {
            Err(e @ SlopeError::StepTooLarge { .. }) => {
                last = Some(e);
                h *= 0.1;
            }
            other => return other,
        }
    }
    Err(last.expect("at least one attempt"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Fast,
    Slow,
}

impl Regime {
    pub fn from_slope(slope: f64) -> Regime {
        if slope < 0.0 {
            Regime::Fast
        } else {
            Regime::Slow
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransparencyPoint {
    /// Probe detuning δ at the absorption minimum (rad/s).
    pub omega: f64,
    pub absorption: f64,
    /// Im[dε_R/dδ] at the minimum (s).
    pub slope: f64,
    pub regime: Regime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransparencyReport {
    /// Ascending in `omega`.
    pub points: Vec<TransparencyPoint>,
    pub window: (f64, f64),
    pub threshold: f64,
}

impl TransparencyReport {
    /// Lower window, when two or more were found.
    pub fn minus(&self) -> Option<&TransparencyPoint> {
        (self.points.len() >= 2).then(|| &self.points[0])
    }

    /// Upper window, when two or more were found.
    pub fn plus(&self) -> Option<&TransparencyPoint> {
        (self.points.len() >= 2).then(|| self.points.last().unwrap())
    }

    pub fn omega_minus(&self) -> Option<f64> {
        self.minus().map(|p| p.omega)
    }

    pub fn omega_plus(&self) -> Option<f64> {
        self.plus().map(|p| p.omega)
    }

    /// ω₊ − ω₋.
    pub fn gap(&self) -> Option<f64> {
        Some(self.omega_plus()? - self.omega_minus()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransparencyOptions {
    /// Search interval in δ (rad/s); `None` selects [`default_window`].
    pub window: Option<(f64, f64)>,
    pub min_coarse_points: usize,
    /// Absorption below which a minimum counts as a transparency window.
    pub threshold: f64,
}

impl Default for TransparencyOptions {
    fn default() -> Self {
        TransparencyOptions { window: None, min_coarse_points: 2000, threshold: 0.1 }
    }
}

/// ω₁ ± min(10κ, ω₁/2).
///
/// The half-width is capped at ω₁/2 so the window stays on the δ > 0 side;
/// the response has mirror features near δ = −ω₁ that are not probe
/// transparency windows at the upper sideband.
pub fn default_window(p: &ModelParams) -> (f64, f64) {
    let half = (10.0 * p.kappa).min(0.5 * p.omega1);
    (p.omega1 - half, p.omega1 + half)
}

/// Locate the zero-absorption minima of Re[ε_R] inside a window.
pub fn find_transparency_points(
    p: &ModelParams,
    s: &SteadyState,
    opts: &TransparencyOptions,
) -> Result<TransparencyReport, TransparencyError> {
    let (lo, hi) = opts.window.unwrap_or_else(|| default_window(p));
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(TransparencyError::BadWindow(lo, hi));
    }
    // resolve features down to a quarter of the narrowest mechanical linewidth
    let resolution = 0.25 * p.gamma1.min(p.gamma2);
    let wanted = ((hi - lo) / resolution).ceil() as usize + 1;
    let count = wanted.clamp(opts.min_coarse_points, 2_000_000);
    let step = (hi - lo) / (count - 1) as f64;
    let deltas: Vec<f64> = (0..count).map(|i| lo + step * i as f64).collect();
    let absorption: Vec<f64> =
        deltas.par_iter().map(|&d| epsilon_r(p, s, d).map(|e| e.re)).collect::<Result<_, _>>()?;

    let mut points = Vec::new();
    let mut candidates = Vec::new();
    for i in crate::response::local_minima(&absorption) {
        let omega = refine_minimum(p, s, deltas[i - 1], deltas[i + 1])?;
        let value = epsilon_r(p, s, omega)?.re;
        if value < opts.threshold {
            let slope = dispersion_slope_adaptive(p, s, omega)?;
            points.push(TransparencyPoint { omega, absorption: value, slope, regime: Regime::from_slope(slope) });
        } else {
            candidates.push((omega, value));
        }
    }
    if points.is_empty() {
        return Err(TransparencyError::NoTransparencyWindow { threshold: opts.threshold, candidates });
    }
    Ok(TransparencyReport { points, window: (lo, hi), threshold: opts.threshold })
}

/// Bisection on the sign of dRe[ε_R]/dδ inside a bracketing interval.
fn refine_minimum(p: &ModelParams, s: &SteadyState, mut lo: f64, mut hi: f64) -> Result<f64, ResponseError> {
    let tolerance = 1e-12 * 2.0 / p.kappa;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let slope = d_epsilon_r(p, s, mid)?.re;
        if slope.abs() < tolerance {
            return Ok(mid);
        }
        if slope < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Minus,
    Plus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetricPoint {
    pub pump_power: f64,
    pub side: Side,
    pub delta_eval: f64,
    /// Im[dε_R/dδ] (s).
    pub metric: f64,
    /// 1 + scale·metric, only when a scale constant was supplied.
    pub ng_scaled: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Error, Serialize, Deserialize)]
pub enum SweepPointError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("steady state: {0}")]
    Steady(String),
    #[error(transparent)]
    Transparency(#[from] TransparencyError),
    #[error("expected two transparency windows, found {0}")]
    NotDoubleWindow(usize),
}

impl From<SteadyError> for SweepPointError {
    fn from(e: SteadyError) -> Self {
        SweepPointError::Steady(e.to_string())
    }
}

/// One power of a group-metric sweep: both windows, or the captured error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetricRow {
    pub pump_power: f64,
    pub result: Result<[GroupMetricPoint; 2], SweepPointError>,
}

impl GroupMetricRow {
    /// "Fast", "Slow", "Mixed", or "None" for a failed point.
    pub fn regime_label(&self) -> &'static str {
        match &self.result {
            Err(_) => "None",
            Ok([m, p]) => match (Regime::from_slope(m.metric), Regime::from_slope(p.metric)) {
                (Regime::Fast, Regime::Fast) => "Fast",
                (Regime::Slow, Regime::Slow) => "Slow",
                _ => "Mixed",
            },
        }
    }
}

pub const GROUP_METRIC_CSV_HEADER: &str =
    "power_W,omega_minus_rad_s,omega_plus_rad_s,metric_minus_s,metric_plus_s,regime";

/// CSV fields for one row, without a trailing newline. Failed points leave
/// the numeric fields empty.
pub fn group_metric_csv_fields(row: &GroupMetricRow) -> String {
    match &row.result {
        Ok([m, p]) => format!(
            "{},{},{},{},{},{}",
            num(row.pump_power),
            num(m.delta_eval),
            num(p.delta_eval),
            num(m.metric),
            num(p.metric),
            row.regime_label()
        ),
        Err(_) => format!("{},,,,,{}", num(row.pump_power), row.regime_label()),
    }
}

pub fn write_group_metric_csv<W: Write>(rows: &[GroupMetricRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{GROUP_METRIC_CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", group_metric_csv_fields(row))?;
    }
    Ok(())
}

/// Group metric at both windows for one parameter set at effective detuning
/// `detuning`. The windows are relocated for this parameter set.
pub fn group_metric_at(
    p: &ModelParams,
    detuning: f64,
    scale: Option<f64>,
) -> Result<[GroupMetricPoint; 2], SweepPointError> {
    let s = solve_direct(p, detuning)?;
    let report = find_transparency_points(p, &s, &TransparencyOptions::default())?;
    let (Some(minus), Some(plus)) = (report.minus(), report.plus()) else {
        return Err(SweepPointError::NotDoubleWindow(report.points.len()));
    };
    let point = |side, tp: &TransparencyPoint| GroupMetricPoint {
        pump_power: p.pump_power,
        side,
        delta_eval: tp.omega,
        metric: tp.slope,
        ng_scaled: scale.map(|c| 1.0 + c * tp.slope),
    };
    Ok([point(Side::Minus, minus), point(Side::Plus, plus)])
}

/// Rebuild the steady state and windows for every pump power and report the
/// metric at ω₋ and ω₊. Output order follows `powers`.
pub fn group_metric_sweep(p: &ModelParams, detuning: f64, powers: &[f64], scale: Option<f64>) -> Vec<GroupMetricRow> {
    powers
        .par_iter()
        .map(|&power| {
            let mut raw = p.raw();
            raw.pump_power = power;
            let result =
                build_params(&raw).map_err(SweepPointError::from).and_then(|q| group_metric_at(&q, detuning, scale));
            GroupMetricRow { pump_power: power, result }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RawConfig;
    use crate::steady_state::direct_unchecked;

    fn reference_at(detuning_in_omega1: f64) -> (ModelParams, SteadyState) {
        let p = build_params(&RawConfig::reference()).unwrap();
        let s = solve_direct(&p, detuning_in_omega1 * p.omega1).unwrap();
        (p, s)
    }

    #[test]
    fn bare_cavity_slope_is_two_over_kappa() {
        let (mut p, _) = reference_at(1.0);
        p.g = 0.0;
        let s = direct_unchecked(&p, p.omega1);
        let slope = dispersion_slope(&p, &s, s.delta_eff, default_step(&p)).unwrap();
        let exact = 2.0 / p.kappa;
        assert!((slope - exact).abs() / exact < 1e-9, "{slope} vs {exact}");
    }

    #[test]
    fn slope_rejects_bad_step() {
        let (p, s) = reference_at(1.0);
        assert!(matches!(dispersion_slope(&p, &s, p.omega1, 0.0), Err(SlopeError::NonPositiveStep(_))));
        // a step of ω₁/10 straddles the whole double-window structure
        assert!(matches!(dispersion_slope(&p, &s, p.omega1, 0.1 * p.omega1), Err(SlopeError::StepTooLarge { .. })));
    }

    fn five_point(p: &ModelParams, s: &SteadyState, d: f64, h: f64) -> f64 {
        let f = |x: f64| epsilon_r(p, s, x).unwrap().im;
        (f(d - 2.0 * h) - 8.0 * f(d - h) + 8.0 * f(d + h) - f(d + 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn richardson_agrees_with_five_point_stencil() {
        let (p, s) = reference_at(1.0);
        for x in [0.95, 0.98, 0.995, 1.0, 1.003, 1.02, 1.06] {
            let d = x * p.omega1;
            let h = default_step(&p);
            let a = dispersion_slope(&p, &s, d, h).unwrap();
            let b = five_point(&p, &s, d, h);
            assert!((a - b).abs() / a.abs() < 1e-6, "x = {x}: {a} vs {b}");
            let exact = d_epsilon_r(&p, &s, d).unwrap().im;
            assert!((a - exact).abs() / exact.abs() < 1e-6);
        }
    }

    #[test]
    fn two_fast_windows_at_red_detuning() {
        let (p, s) = reference_at(1.0);
        let report = find_transparency_points(&p, &s, &TransparencyOptions::default()).unwrap();
        assert_eq!(report.points.len(), 2);
        let (minus, plus) = (report.minus().unwrap(), report.plus().unwrap());
        assert!(minus.omega < p.omega1 && p.omega1 < plus.omega);
        for tp in &report.points {
            assert!(tp.absorption < 0.05);
            assert!(tp.slope < 0.0);
            assert_eq!(tp.regime, Regime::Fast);
            let d_re = d_epsilon_r(&p, &s, tp.omega).unwrap().re;
            assert!(d_re.abs() < 1e-12 * 2.0 / p.kappa || d_re.abs() < 1e-9 * tp.slope.abs());
        }
        // idempotent
        let again = find_transparency_points(&p, &s, &TransparencyOptions::default()).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn two_slow_windows_at_blue_detuning() {
        let (p, s) = reference_at(-1.0);
        let report = find_transparency_points(&p, &s, &TransparencyOptions::default()).unwrap();
        assert_eq!(report.points.len(), 2);
        assert!(report.points.iter().all(|tp| tp.slope > 0.0 && tp.regime == Regime::Slow));
    }

    #[test]
    fn single_window_without_coupling() {
        let mut cfg = RawConfig::reference();
        cfg.coulomb_lambda = 0.0;
        let p = build_params(&cfg).unwrap();
        let s = solve_direct(&p, p.omega1).unwrap();
        let report = find_transparency_points(&p, &s, &TransparencyOptions::default()).unwrap();
        assert_eq!(report.points.len(), 1);
        assert!((report.points[0].omega - p.omega1).abs() / p.omega1 < 0.01);
        assert_eq!(report.gap(), None);
    }

    #[test]
    fn weak_pump_has_no_window() {
        let mut cfg = RawConfig::reference();
        cfg.pump_power = 1e-8;
        let p = build_params(&cfg).unwrap();
        let s = solve_direct(&p, p.omega1).unwrap();
        let err = find_transparency_points(&p, &s, &TransparencyOptions::default()).unwrap_err();
        let TransparencyError::NoTransparencyWindow { candidates, .. } = err else { panic!("unexpected {err:?}") };
        assert!(candidates.iter().all(|&(_, a)| a >= 0.1));
    }

    #[test]
    fn metric_vanishes_smoothly_without_pump() {
        // no OMIT feature: the slope at ω₁ tends to the bare Lorentzian value
        let mut cfg = RawConfig::reference();
        let mut last = f64::INFINITY;
        let p0 = build_params(&cfg).unwrap();
        let bare = {
            let mut q = p0.clone();
            q.g = 0.0;
            let s = direct_unchecked(&q, q.omega1);
            dispersion_slope(&q, &s, 1.0078 * q.omega1, default_step(&q)).unwrap()
        };
        for power in [1e-6, 1e-8, 1e-10, 1e-12] {
            cfg.pump_power = power;
            let p = build_params(&cfg).unwrap();
            let s = solve_direct(&p, p.omega1).unwrap();
            let m = dispersion_slope_adaptive(&p, &s, 1.0078 * p.omega1).unwrap();
            let dev = (m - bare).abs();
            assert!(dev < last);
            last = dev;
        }
        assert!(last / bare.abs() < 1e-3);
    }

    #[test]
    fn sweep_keeps_power_order_and_sign() {
        let p = build_params(&RawConfig::reference()).unwrap();
        let powers = [0.5e-3, 1e-3, 2e-3, 4e-3];
        let fast = group_metric_sweep(&p, p.omega1, &powers, None);
        let slow = group_metric_sweep(&p, -p.omega1, &powers, Some(1e3));
        for (row, &power) in fast.iter().zip(&powers) {
            assert_eq!(row.pump_power, power);
            let [m, pl] = row.result.as_ref().unwrap();
            assert!(m.metric < 0.0 && pl.metric < 0.0);
            assert!(m.delta_eval < pl.delta_eval);
            assert_eq!(m.ng_scaled, None);
            assert_eq!(row.regime_label(), "Fast");
        }
        for row in &slow {
            let [m, pl] = row.result.as_ref().unwrap();
            assert!(m.metric > 0.0 && pl.metric > 0.0);
            assert_eq!(m.ng_scaled, Some(1.0 + 1e3 * m.metric));
            assert_eq!(row.regime_label(), "Slow");
        }
        let mut buf = Vec::new();
        write_group_metric_csv(&fast, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("power_W,omega_minus_rad_s,omega_plus_rad_s,metric_minus_s,metric_plus_s,regime\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn sweep_captures_failures_per_point() {
        let p = build_params(&RawConfig::reference()).unwrap();
        let rows = group_metric_sweep(&p, p.omega1, &[-1.0, 2e-3], None);
        assert!(matches!(rows[0].result, Err(SweepPointError::Model(_))));
        assert!(rows[1].result.is_ok());
        assert!(group_metric_csv_fields(&rows[0]).ends_with(",,,,,None"));
    }
}
