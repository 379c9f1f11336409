//! Time-domain check of the analytic sideband response.
//!
//! The five mean-value equations of motion are integrated directly, with
//! the pump and the probe both on, and the upper-sideband amplitude is read
//! off the intracavity field by lock-in style demodulation at the beat
//! frequency δ. Nothing here evaluates the linearized response formulas.

pub mod integrator;

use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelParams, HBAR};
use crate::output::num;
use crate::response::{a_plus, ResponseError};
use crate::steady_state::direct_unchecked;
use integrator::{Dopri5, StepError};

#[derive(Clone, Debug, PartialEq, Error, Serialize, Deserialize)]
pub enum OracleError {
    #[error("integrator step failure: {0}")]
    StepFailure(String),
    #[error("trajectory diverged at t = {t:e} (component {component})")]
    Divergence { t: f64, component: usize },
    #[error("trajectory covers {available:e} s after the transient cut, {needed:e} s required")]
    InsufficientSpan { needed: f64, available: f64 },
    #[error("probe detuning must be non-zero and finite, got {0}")]
    BadDetuning(f64),
    #[error(transparent)]
    Response(#[from] ResponseError),
}

impl From<StepError> for OracleError {
    fn from(e: StepError) -> Self {
        OracleError::StepFailure(e.to_string())
    }
}

/// Instantaneous mean values ⟨q₁⟩, ⟨p₁⟩, ⟨q₂⟩, ⟨p₂⟩, ⟨a⟩.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanState {
    pub q1: f64,
    pub p1: f64,
    pub q2: f64,
    pub p2: f64,
    pub a: Complex64,
}

impl MeanState {
    fn to_array(self) -> [f64; 6] {
        [self.q1, self.p1, self.q2, self.p2, self.a.re, self.a.im]
    }

    fn from_array(y: &[f64; 6]) -> Self {
        MeanState { q1: y[0], p1: y[1], q2: y[2], p2: y[3], a: Complex64::new(y[4], y[5]) }
    }
}

/// Drive configuration of the equations of motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drive {
    /// Bare pump-cavity detuning Δ_a.
    pub delta_a: f64,
    pub eps_l: f64,
    pub eps_s: f64,
    /// Probe-pump detuning δ.
    pub delta: f64,
}

/// Right-hand side of the mean-value equations, with the radiation
/// pressure taken as ħg|⟨a⟩|².
fn rhs(p: &ModelParams, drive: &Drive, t: f64, y: &[f64; 6]) -> [f64; 6] {
    let s = MeanState::from_array(y);
    let dq1 = s.p1 / p.m1;
    let dp1 = -p.m1 * p.omega1 * p.omega1 * s.q1 - HBAR * p.coulomb_lambda * s.q2 + HBAR * p.g * s.a.norm_sqr()
        - p.gamma1 * s.p1;
    let dq2 = s.p2 / p.m2;
    let dp2 = -p.m2 * p.omega2 * p.omega2 * s.q2 - HBAR * p.coulomb_lambda * s.q1 - p.gamma2 * s.p2;
    let (sin, cos) = (drive.delta * t).sin_cos();
    let probe = drive.eps_s * Complex64::new(cos, -sin);
    let da = -Complex64::new(p.kappa, drive.delta_a - p.g * s.q1) * s.a + drive.eps_l + probe;
    [dq1, dp1, dq2, dp2, da.re, da.im]
}

/// How to record the trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sampling {
    /// Every `stride`-th accepted integrator step (plus the initial point).
    Steps { stride: usize },
    /// Uniform samples `start + k·step` up to the end time; the integrator
    /// lands on each sample exactly.
    Uniform { start: f64, step: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOptions {
    pub rtol: f64,
    pub sampling: Sampling,
    pub max_steps: usize,
    /// A component further than this many scale units from the origin
    /// counts as divergence.
    pub divergence_factor: f64,
    /// Largest step as a fraction of the shortest oscillation period in the
    /// system (mechanical, detuning or beat).
    pub max_step_fraction: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            rtol: 1e-10,
            sampling: Sampling::Steps { stride: 1 },
            max_steps: 50_000_000,
            divergence_factor: 1e6,
            max_step_fraction: 1.0 / 16.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evals: usize,
    pub rtol: f64,
    /// Absolute tolerance per real component (q₁, p₁, q₂, p₂, Re a, Im a).
    pub atol: [f64; 6],
    pub drive: Drive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub q1: Vec<f64>,
    pub p1: Vec<f64>,
    pub q2: Vec<f64>,
    pub p2: Vec<f64>,
    pub a: Vec<Complex64>,
    pub meta: TrajectoryMeta,
}

pub const TRAJECTORY_CSV_HEADER: &str = "t_s,q1_m,p1_kgms,q2_m,p2_kgms,re_a,im_a";

impl Trajectory {
    fn empty(meta: TrajectoryMeta) -> Self {
        Trajectory { t: vec![], q1: vec![], p1: vec![], q2: vec![], p2: vec![], a: vec![], meta }
    }

    fn push(&mut self, t: f64, y: &[f64; 6]) {
        self.t.push(t);
        self.q1.push(y[0]);
        self.p1.push(y[1]);
        self.q2.push(y[2]);
        self.p2.push(y[3]);
        self.a.push(Complex64::new(y[4], y[5]));
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn state(&self, i: usize) -> MeanState {
        MeanState { q1: self.q1[i], p1: self.p1[i], q2: self.q2[i], p2: self.p2[i], a: self.a[i] }
    }

    /// Every `stride`-th sample as CSV.
    pub fn write_csv<W: Write>(&self, mut out: W, stride: usize) -> io::Result<()> {
        writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
        for i in (0..self.len()).step_by(stride.max(1)) {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                num(self.t[i]),
                num(self.q1[i]),
                num(self.p1[i]),
                num(self.q2[i]),
                num(self.p2[i]),
                num(self.a[i].re),
                num(self.a[i].im)
            )?;
        }
        Ok(())
    }
}

/// Characteristic size of each component, used for absolute tolerances and
/// the divergence test. Falls back to the initial state, then to unit scale,
/// for components that vanish at the steady state.
fn component_scales(p: &ModelParams, reference: &MeanState, initial: &MeanState) -> [f64; 6] {
    let pick = |a: f64, b: f64| {
        if a != 0.0 {
            a.abs()
        } else if b != 0.0 {
            b.abs()
        } else {
            0.0
        }
    };
    let mut q1 = pick(reference.q1, initial.q1);
    let mut q2 = pick(reference.q2, initial.q2);
    if q1 == 0.0 && q2 == 0.0 {
        q1 = 1e-15;
    }
    if q1 == 0.0 {
        q1 = q2;
    }
    if q2 == 0.0 {
        q2 = q1;
    }
    let p1 = pick(p.m1 * p.omega1 * q1, initial.p1);
    let p2 = pick(p.m2 * p.omega2 * q2, initial.p2);
    let mut a = pick(reference.a.norm(), initial.a.norm());
    if a == 0.0 {
        a = 1.0;
    }
    [q1, p1, q2, p2, a, a]
}

/// Integrate the mean-value equations from an arbitrary initial state.
pub fn integrate_from(
    p: &ModelParams,
    drive: Drive,
    initial: MeanState,
    reference: &MeanState,
    t_end: f64,
    opts: &IntegrationOptions,
) -> Result<Trajectory, OracleError> {
    let scales = component_scales(p, reference, &initial);
    let atol = scales.map(|s| opts.rtol * s);
    let f = |t: f64, y: &[f64; 6]| rhs(p, &drive, t, y);

    let fastest = p.omega1.max(p.omega2).max(p.kappa).max(drive.delta.abs()).max(drive.delta_a.abs());
    let h0 = 1e-3 / fastest;
    let h_max = opts.max_step_fraction * std::f64::consts::TAU / fastest;
    let mut ode =
        Dopri5::new(0.0, initial.to_array(), opts.rtol, atol, h0.min(h_max), opts.max_steps).with_max_step(h_max);

    let mut traj = Trajectory::empty(TrajectoryMeta {
        accepted_steps: 0,
        rejected_steps: 0,
        rhs_evals: 0,
        rtol: opts.rtol,
        atol,
        drive,
    });

    let limit = scales.map(|s| s * opts.divergence_factor);
    let diverged = |t: f64, y: &[f64; 6]| -> Option<OracleError> {
        y.iter()
            .zip(&limit)
            .position(|(v, l)| v.is_nan() || v.abs() > *l)
            .map(|component| OracleError::Divergence { t, component })
    };

    let mut failure = None;
    match opts.sampling {
        Sampling::Steps { stride } => {
            traj.push(0.0, &ode.y);
            let stride = stride.max(1);
            let mut count = 0usize;
            let mut last = 0.0;
            ode.advance_to(&f, t_end, |t, y| {
                count += 1;
                if failure.is_none() {
                    failure = diverged(t, y);
                }
                if count.is_multiple_of(stride) {
                    traj.push(t, y);
                    last = t;
                }
            })?;
            if last < ode.t {
                traj.push(ode.t, &ode.y);
            }
        }
        Sampling::Uniform { start, step } => {
            assert!(step > 0.0, "sample step must be positive");
            let mut k = 0usize;
            loop {
                let ts = start + step * k as f64;
                if ts > t_end * (1.0 + 4.0 * f64::EPSILON) || failure.is_some() {
                    break;
                }
                if ts >= ode.t {
                    ode.advance_to(&f, ts, |t, y| {
                        if failure.is_none() {
                            failure = diverged(t, y);
                        }
                    })?;
                    traj.push(ts, &ode.y);
                }
                k += 1;
            }
        }
    }
    if let Some(err) = failure {
        return Err(err);
    }
    traj.meta.accepted_steps = ode.stats.accepted;
    traj.meta.rejected_steps = ode.stats.rejected;
    traj.meta.rhs_evals = ode.stats.rhs_evals;
    Ok(traj)
}

/// Integrate the driven equations from the analytic steady state at
/// effective detuning `delta_eff`, with a probe of amplitude `eps_s` at
/// detuning `delta`.
///
/// The bare detuning in the cavity equation is set to Δ + g q₁s so that the
/// dynamics sit on the same branch as the analytic steady state.
pub fn integrate_mean_dynamics(
    p: &ModelParams,
    delta_eff: f64,
    eps_s: f64,
    delta: f64,
    t_end: f64,
    opts: &IntegrationOptions,
) -> Result<Trajectory, OracleError> {
    let (initial, drive) = steady_start(p, delta_eff, eps_s, delta);
    integrate_from(p, drive, initial, &initial, t_end, opts)
}

fn steady_start(p: &ModelParams, delta_eff: f64, eps_s: f64, delta: f64) -> (MeanState, Drive) {
    let s = direct_unchecked(p, delta_eff);
    let initial = MeanState { q1: s.q1s, p1: 0.0, q2: s.q2s, p2: 0.0, a: s.a_s };
    let drive = Drive { delta_a: s.delta_a, eps_l: p.eps_l, eps_s, delta };
    (initial, drive)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemodOptions {
    /// Samples before this time are discarded.
    pub transient_cut: f64,
    /// Integer number of beat periods 2π/|δ| to average over.
    pub n_periods: usize,
}

/// Default transient cut: five mechanical amplitude decay times.
pub fn default_transient_cut(p: &ModelParams) -> f64 {
    5.0 / p.gamma1.min(p.gamma2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemodResult {
    pub delta: f64,
    /// Upper-sideband coefficient of the probe amplitude (zero when the probe
    /// is off).
    pub a_plus_est: Complex64,
    /// Lower-sideband coefficient; reported, not validated.
    pub a_minus_est: Complex64,
    /// Un-normalized sideband projections ⟨(a − a_s) e^{±iδt}⟩.
    pub sideband_plus: Complex64,
    pub sideband_minus: Complex64,
    /// Time average of ⟨a⟩ minus the analytic a_s.
    pub residual_dc: Complex64,
    pub window: (f64, f64),
}

fn lerp(t0: f64, t1: f64, v0: Complex64, v1: Complex64, t: f64) -> Complex64 {
    if t1 == t0 {
        v0
    } else {
        v0 + (v1 - v0) * ((t - t0) / (t1 - t0))
    }
}

/// Project ⟨a⟩(t) − a_s onto e^{±iδt} over an integer number of beat
/// periods by trapezoidal quadrature on the recorded samples.
pub fn demodulate(
    traj: &Trajectory,
    a_s_analytic: Complex64,
    delta: f64,
    opts: &DemodOptions,
) -> Result<DemodResult, OracleError> {
    if !(delta != 0.0 && delta.is_finite()) {
        return Err(OracleError::BadDetuning(delta));
    }
    let period = std::f64::consts::TAU / delta.abs();
    let span = period * opts.n_periods as f64;
    let (Some(&first), Some(&last)) = (traj.t.first(), traj.t.last()) else {
        return Err(OracleError::InsufficientSpan { needed: span, available: 0.0 });
    };
    let t0 = opts.transient_cut.max(first);
    let t1 = t0 + span;
    let available = last - t0;
    if opts.n_periods == 0 || available < span * (1.0 - 1e-12) {
        return Err(OracleError::InsufficientSpan { needed: span, available });
    }
    let t1 = t1.min(last);

    // samples inside [t0, t1], with interpolated end points when the grid
    // does not land on them
    let start = traj.t.partition_point(|&t| t < t0);
    let end = traj.t.partition_point(|&t| t <= t1);
    let mut times = Vec::with_capacity(end - start + 2);
    let mut values = Vec::with_capacity(end - start + 2);
    let snap = 1e-9 * period;
    if (traj.t[start] - t0).abs() > snap && start > 0 {
        times.push(t0);
        values.push(lerp(traj.t[start - 1], traj.t[start], traj.a[start - 1], traj.a[start], t0));
    }
    for i in start..end {
        times.push(traj.t[i]);
        values.push(traj.a[i]);
    }
    if (t1 - times[times.len() - 1]).abs() > snap && end < traj.len() {
        times.push(t1);
        values.push(lerp(traj.t[end - 1], traj.t[end], traj.a[end - 1], traj.a[end], t1));
    }

    let mut plus = Complex64::new(0.0, 0.0);
    let mut minus = Complex64::new(0.0, 0.0);
    let mut mean = Complex64::new(0.0, 0.0);
    let integrand = |t: f64, a: Complex64| {
        let dev = a - a_s_analytic;
        let (sin, cos) = (delta * t).sin_cos();
        let up = Complex64::new(cos, sin);
        (dev * up, dev * up.conj(), a)
    };
    for w in 0..times.len() - 1 {
        let h = times[w + 1] - times[w];
        let (p0, m0, a0) = integrand(times[w], values[w]);
        let (p1, m1, a1) = integrand(times[w + 1], values[w + 1]);
        plus += 0.5 * h * (p0 + p1);
        minus += 0.5 * h * (m0 + m1);
        mean += 0.5 * h * (a0 + a1);
    }
    let duration = times[times.len() - 1] - times[0];
    let sideband_plus = plus / duration;
    let sideband_minus = minus / duration;
    let eps_s = traj.meta.drive.eps_s;
    let (a_plus_est, a_minus_est) = if eps_s > 0.0 {
        (sideband_plus / eps_s, sideband_minus / eps_s)
    } else {
        (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
    };
    Ok(DemodResult {
        delta,
        a_plus_est,
        a_minus_est,
        sideband_plus,
        sideband_minus,
        residual_dc: mean / duration - a_s_analytic,
        window: (times[0], times[times.len() - 1]),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidateOptions {
    /// Probe amplitude as a fraction of the pump amplitude; `None` uses the
    /// configured probe power.
    pub probe_ratio: Option<f64>,
    pub n_periods: usize,
    pub samples_per_period: usize,
    /// `None` uses [`default_transient_cut`].
    pub transient_cut: Option<f64>,
    pub rtol: f64,
    pub tolerance: f64,
    /// Multiplies the analytic value before comparison. 1.0 except in
    /// negative-control runs.
    pub analytic_scale: f64,
}

impl Default for CrossValidateOptions {
    fn default() -> Self {
        CrossValidateOptions {
            probe_ratio: None,
            n_periods: 20,
            samples_per_period: 4096,
            transient_cut: None,
            rtol: 1e-10,
            tolerance: 1e-3,
            analytic_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub delta: f64,
    pub result: Result<ValidationPoint, OracleError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub analytic: Complex64,
    pub demod: DemodResult,
    pub rel_error: f64,
    pub accepted_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationTable {
    pub delta_eff: f64,
    pub eps_s: f64,
    pub tolerance: f64,
    pub rows: Vec<ValidationRow>,
}

impl ValidationTable {
    /// Largest relative error; infinite when any point failed.
    pub fn max_rel_error(&self) -> f64 {
        self.rows.iter().map(|r| r.result.as_ref().map_or(f64::INFINITY, |v| v.rel_error)).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.rows.is_empty() && self.max_rel_error() < self.tolerance
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "delta_rad_s,re_a_plus_analytic,im_a_plus_analytic,re_a_plus_demod,im_a_plus_demod,rel_error")?;
        for row in &self.rows {
            match &row.result {
                Ok(v) => writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    num(row.delta),
                    num(v.analytic.re),
                    num(v.analytic.im),
                    num(v.demod.a_plus_est.re),
                    num(v.demod.a_plus_est.im),
                    num(v.rel_error)
                )?,
                Err(_) => writeln!(out, "{},,,,,", num(row.delta))?,
            }
        }
        Ok(())
    }
}

/// Demodulated upper sideband for one probe detuning.
pub fn oracle_a_plus(
    p: &ModelParams,
    delta_eff: f64,
    eps_s: f64,
    delta: f64,
    opts: &CrossValidateOptions,
) -> Result<(DemodResult, usize), OracleError> {
    if !(delta != 0.0 && delta.is_finite()) {
        return Err(OracleError::BadDetuning(delta));
    }
    let period = std::f64::consts::TAU / delta.abs();
    let cut = opts.transient_cut.unwrap_or_else(|| default_transient_cut(p));
    // start the window on a whole number of periods so samples align
    let start = (cut / period).ceil() * period;
    let step = period / opts.samples_per_period as f64;
    let t_end = start + period * opts.n_periods as f64;
    let int_opts = IntegrationOptions {
        rtol: opts.rtol,
        sampling: Sampling::Uniform { start, step },
        ..IntegrationOptions::default()
    };
    let traj = integrate_mean_dynamics(p, delta_eff, eps_s, delta, t_end, &int_opts)?;
    let a_s = direct_unchecked(p, delta_eff).a_s;
    let demod = demodulate(&traj, a_s, delta, &DemodOptions { transient_cut: start, n_periods: opts.n_periods })?;
    Ok((demod, traj.meta.accepted_steps))
}

/// Compare demodulated and analytic a₊ at each probe detuning. Points run
/// in parallel; the table keeps the input order.
pub fn cross_validate(p: &ModelParams, delta_eff: f64, deltas: &[f64], opts: &CrossValidateOptions) -> ValidationTable {
    let eps_s = opts.probe_ratio.map_or(p.eps_s, |r| r * p.eps_l);
    let s = direct_unchecked(p, delta_eff);
    let rows = deltas
        .par_iter()
        .map(|&delta| {
            let result = (|| {
                let analytic = a_plus(p, &s, delta)? * opts.analytic_scale;
                let (demod, accepted_steps) = oracle_a_plus(p, delta_eff, eps_s, delta, opts)?;
                let rel_error = (demod.a_plus_est - analytic).norm() / analytic.norm();
                Ok(ValidationPoint { analytic, demod, rel_error, accepted_steps })
            })();
            ValidationRow { delta, result }
        })
        .collect();
    ValidationTable { delta_eff, eps_s, tolerance: opts.tolerance, rows }
}

/// The five probe detunings ω₁ + {−2, −½, 0, ½, 2}κ.
pub fn standard_deltas(p: &ModelParams) -> Vec<f64> {
    [-2.0, -0.5, 0.0, 0.5, 2.0].iter().map(|k| p.omega1 + k * p.kappa).collect()
}
