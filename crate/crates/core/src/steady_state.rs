//! Static mean values of the driven cavity and the two charged resonators.
//!
//! Two entry points: [`solve_direct`] takes the effective detuning Δ as the
//! control knob, [`solve_selfconsistent`] takes the bare detuning Δ_a and
//! solves the cubic that links Δ to the static mirror displacement.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate, DetuningMode, ModelError, ModelParams, HBAR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    LowPower,
    Middle,
    HighPower,
}

/// Which stability test produced [`SteadyState::stable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityCheck {
    /// Slope of the implicit intensity curve only. Dynamical stability of
    /// the full linearized system is not assessed.
    StaticSlopeOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub q1s: f64,
    pub q2s: f64,
    pub p1s: f64,
    pub p2s: f64,
    pub a_s: Complex64,
    /// |a_s|²
    pub n_cav: f64,
    /// Effective detuning Δ = Δ_a − g q₁s.
    pub delta_eff: f64,
    /// Bare detuning Δ_a this state corresponds to.
    pub delta_a: f64,
    pub branch: Branch,
    pub stable: bool,
    pub stability_check: StabilityCheck,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SteadyError {
    #[error("invalid parameters: {0:?}")]
    InvalidParams(Vec<ModelError>),
    #[error("root polishing did not reach relative residual {tolerance:e} (got {residual:e})")]
    NoConvergence { residual: f64, tolerance: f64 },
    #[error("three steady states exist; an explicit branch must be chosen")]
    AmbiguousBranch,
    #[error("requested branch {0:?} does not exist at this detuning")]
    MissingBranch(Branch),
}

fn check_params(p: &ModelParams) -> Result<(), SteadyError> {
    let report = validate(p);
    if report.is_valid() {
        Ok(())
    } else {
        Err(SteadyError::InvalidParams(report.violations))
    }
}

/// q₁s = ħ g n / D.
fn displacement_for(p: &ModelParams, n_cav: f64) -> f64 {
    HBAR * p.g * n_cav / p.spring_denominator
}

/// q₂s = −ħλ q₁s / (m₂ω₂²).
fn partner_displacement(p: &ModelParams, q1s: f64) -> f64 {
    -HBAR * p.coulomb_lambda * q1s / (p.m2 * p.omega2 * p.omega2)
}

/// Steady state at a prescribed effective detuning. No root finding.
pub fn solve_direct(p: &ModelParams, delta: f64) -> Result<SteadyState, SteadyError> {
    check_params(p)?;
    Ok(direct_unchecked(p, delta))
}

/// [`solve_direct`] without the parameter validation. Tests use it to
/// evaluate degenerate limits such as ε_l = 0 or g = 0.
pub fn direct_unchecked(p: &ModelParams, delta: f64) -> SteadyState {
    let a_s = Complex64::new(p.eps_l, 0.0) / Complex64::new(p.kappa, delta);
    let n_cav = p.eps_l * p.eps_l / (delta * delta + p.kappa * p.kappa);
    let q1s = displacement_for(p, n_cav);
    SteadyState {
        q1s,
        q2s: partner_displacement(p, q1s),
        p1s: 0.0,
        p2s: 0.0,
        a_s,
        n_cav,
        delta_eff: delta,
        delta_a: delta + p.g * q1s,
        branch: Branch::LowPower,
        stable: true,
        stability_check: StabilityCheck::StaticSlopeOnly,
    }
}

/// Relative residual tolerance for a polished root.
pub const ROOT_TOLERANCE: f64 = 1e-12;

/// Dimensionless form of the self-consistency condition.
///
/// With y = K n/κ, u = Δ_a/κ and s = K ε_l²/κ³, where K = ħg²/D, the
/// condition n((Δ_a − K n)² + κ²) = ε_l² becomes
/// y((u − y)² + 1) = s, i.e. y³ − 2u y² + (u² + 1) y − s = 0.
#[derive(Clone, Copy, Debug)]
pub struct IntensityCubic {
    pub u: f64,
    pub s: f64,
}

impl IntensityCubic {
    pub fn eval(&self, y: f64) -> f64 {
        let w = self.u - y;
        y * (w * w + 1.0) - self.s
    }

    pub fn slope(&self, y: f64) -> f64 {
        3.0 * y * y - 4.0 * self.u * y + self.u * self.u + 1.0
    }

    /// |f(y)| relative to the size of the terms that cancel in it.
    pub fn relative_residual(&self, y: f64) -> f64 {
        let w = self.u - y;
        let scale = (y * (w * w + 1.0)).abs().max(self.s.abs());
        if scale == 0.0 {
            0.0
        } else {
            self.eval(y).abs() / scale
        }
    }

    /// All real roots, ascending, each Newton-polished.
    pub fn roots(&self) -> Result<Vec<f64>, SteadyError> {
        let guesses = monic_cubic_real_roots(-2.0 * self.u, self.u * self.u + 1.0, -self.s);
        let mut roots = Vec::with_capacity(3);
        for guess in guesses {
            let y = self.polish(guess)?;
            if !roots.iter().any(|r: &f64| (r - y).abs() <= 1e-13 * r.abs().max(y.abs()).max(1e-300)) {
                roots.push(y);
            }
        }
        roots.sort_by(|a, b| a.total_cmp(b));
        Ok(roots)
    }

    fn polish(&self, mut y: f64) -> Result<f64, SteadyError> {
        let mut best = (self.relative_residual(y), y);
        for _ in 0..100 {
            if best.0 < ROOT_TOLERANCE {
                break;
            }
            let d = self.slope(y);
            if d == 0.0 {
                break;
            }
            y -= self.eval(y) / d;
            let r = self.relative_residual(y);
            if r < best.0 {
                best = (r, y);
            }
        }
        if best.0 < ROOT_TOLERANCE {
            Ok(best.1)
        } else {
            Err(SteadyError::NoConvergence { residual: best.0, tolerance: ROOT_TOLERANCE })
        }
    }
}

/// Real roots of y³ + a y² + b y + c (trigonometric / Cardano form).
fn monic_cubic_real_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let q = (a * a - 3.0 * b) / 9.0;
    let r = (2.0 * a * a * a - 9.0 * a * b + 27.0 * c) / 54.0;
    let shift = a / 3.0;
    let q3 = q * q * q;
    if r * r < q3 {
        let theta = (r / q3.sqrt()).clamp(-1.0, 1.0).acos();
        let m = -2.0 * q.sqrt();
        let tau = std::f64::consts::TAU;
        vec![
            m * (theta / 3.0).cos() - shift,
            m * ((theta + tau) / 3.0).cos() - shift,
            m * ((theta - tau) / 3.0).cos() - shift,
        ]
    } else {
        let big_a = -r.signum() * (r.abs() + (r * r - q3).sqrt()).cbrt();
        let big_b = if big_a == 0.0 { 0.0 } else { q / big_a };
        vec![big_a + big_b - shift]
    }
}

/// All steady states compatible with a bare detuning Δ_a, ascending in
/// intracavity intensity. One or three entries.
pub fn solve_selfconsistent(p: &ModelParams, delta_a: f64) -> Result<Vec<SteadyState>, SteadyError> {
    check_params(p)?;
    selfconsistent_unchecked(p, delta_a)
}

/// Dimensionless cubic for the given bare detuning, or `None` when the
/// radiation-pressure feedback vanishes (g = 0 or ε_l = 0).
pub fn intensity_cubic(p: &ModelParams, delta_a: f64) -> Option<IntensityCubic> {
    let k = HBAR * p.g * p.g / p.spring_denominator;
    if k == 0.0 || p.eps_l == 0.0 {
        return None;
    }
    let kappa3 = p.kappa * p.kappa * p.kappa;
    Some(IntensityCubic { u: delta_a / p.kappa, s: k * p.eps_l * p.eps_l / kappa3 })
}

pub fn selfconsistent_unchecked(p: &ModelParams, delta_a: f64) -> Result<Vec<SteadyState>, SteadyError> {
    let k = HBAR * p.g * p.g / p.spring_denominator;
    let Some(cubic) = intensity_cubic(p, delta_a) else {
        // linear: the intensity does not feed back on the detuning
        let n = p.eps_l * p.eps_l / (delta_a * delta_a + p.kappa * p.kappa);
        return Ok(vec![state_from_intensity(p, delta_a, n, Branch::LowPower, true)]);
    };
    let roots = cubic.roots()?;
    let labels: &[Branch] = if roots.len() == 3 {
        &[Branch::LowPower, Branch::Middle, Branch::HighPower]
    } else {
        &[Branch::LowPower, Branch::HighPower]
    };
    Ok(roots
        .iter()
        .zip(labels)
        .map(|(&y, &branch)| {
            let n = y * p.kappa / k;
            state_from_intensity(p, delta_a, n, branch, cubic.slope(y) > 0.0)
        })
        .collect())
}

fn state_from_intensity(p: &ModelParams, delta_a: f64, n_cav: f64, branch: Branch, stable: bool) -> SteadyState {
    let q1s = displacement_for(p, n_cav);
    let delta_eff = delta_a - p.g * q1s;
    let a_s = Complex64::new(p.eps_l, 0.0) / Complex64::new(p.kappa, delta_eff);
    SteadyState {
        q1s,
        q2s: partner_displacement(p, q1s),
        p1s: 0.0,
        p2s: 0.0,
        a_s,
        n_cav: a_s.norm_sqr(),
        delta_eff,
        delta_a,
        branch,
        stable,
        stability_check: StabilityCheck::StaticSlopeOnly,
    }
}

/// Pick one state out of a multistable set.
pub fn select_branch(states: Vec<SteadyState>, branch: Option<Branch>) -> Result<SteadyState, SteadyError> {
    match branch {
        None if states.len() == 1 => Ok(states.into_iter().next().unwrap()),
        None => Err(SteadyError::AmbiguousBranch),
        Some(b) => states.into_iter().find(|s| s.branch == b).ok_or(SteadyError::MissingBranch(b)),
    }
}

/// Steady state at the detuning configured in `p`, following its
/// `detuning_mode`.
pub fn solve(p: &ModelParams, branch: Option<Branch>) -> Result<SteadyState, SteadyError> {
    match p.detuning_mode {
        DetuningMode::EffectiveDelta => solve_direct(p, p.detuning_value),
        DetuningMode::BareDeltaA => select_branch(solve_selfconsistent(p, p.detuning_value)?, branch),
    }
}

fn ratio(sum: f64, terms: &[f64]) -> f64 {
    let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if scale == 0.0 {
        0.0
    } else {
        sum.abs() / scale
    }
}

/// Largest normalized right-hand side of the mean-value equations of motion
/// at `s`, with the probe switched off. Each equation is divided by the
/// largest of its own terms.
pub fn steady_residual(p: &ModelParams, s: &SteadyState) -> f64 {
    let n = s.a_s.norm_sqr();
    let spring1 = -p.m1 * p.omega1 * p.omega1 * s.q1s;
    let coulomb1 = -HBAR * p.coulomb_lambda * s.q2s;
    let pressure = HBAR * p.g * n;
    let damping1 = -p.gamma1 * s.p1s;
    let spring2 = -p.m2 * p.omega2 * p.omega2 * s.q2s;
    let coulomb2 = -HBAR * p.coulomb_lambda * s.q1s;
    let damping2 = -p.gamma2 * s.p2s;

    let v1 = s.p1s / p.m1;
    let v2 = s.p2s / p.m2;
    let r_q1 = ratio(v1, &[v1, p.omega1 * s.q1s]);
    let r_q2 = ratio(v2, &[v2, p.omega2 * s.q2s]);
    let r_p1 = ratio(spring1 + coulomb1 + pressure + damping1, &[spring1, coulomb1, pressure, damping1]);
    let r_p2 = ratio(spring2 + coulomb2 + damping2, &[spring2, coulomb2, damping2]);

    let delta_a = s.delta_eff + p.g * s.q1s;
    let decay = -Complex64::new(p.kappa, delta_a - p.g * s.q1s) * s.a_s;
    let drive = Complex64::new(p.eps_l, 0.0);
    let scale = decay.norm().max(drive.norm());
    let r_a = if scale == 0.0 { 0.0 } else { (decay + drive).norm() / scale };

    [r_q1, r_p1, r_q2, r_p2, r_a].into_iter().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_params, RawConfig};

    fn reference() -> ModelParams {
        build_params(&RawConfig::reference()).unwrap()
    }

    #[test]
    fn undriven_cavity_is_at_rest() {
        let mut p = reference();
        p.eps_l = 0.0;
        let s = direct_unchecked(&p, p.omega1);
        assert_eq!(s.a_s, Complex64::new(0.0, 0.0));
        assert_eq!(s.q1s, 0.0);
        assert_eq!(s.q2s, 0.0);
        assert_eq!(steady_residual(&p, &s), 0.0);
    }

    #[test]
    fn resonant_drive_is_real() {
        let p = reference();
        let s = solve_direct(&p, 0.0).unwrap();
        assert_eq!(s.a_s.im, 0.0);
        assert!((s.a_s.re - p.eps_l / p.kappa).abs() / s.a_s.re < 1e-15);
        assert!((s.n_cav - (p.eps_l / p.kappa).powi(2)).abs() / s.n_cav < 1e-14);
    }

    #[test]
    fn reference_state_at_red_sideband() {
        let p = reference();
        let s = solve_direct(&p, p.omega1).unwrap();
        let n = p.eps_l * p.eps_l / (p.omega1 * p.omega1 + p.kappa * p.kappa);
        let q1 = HBAR * p.g * n / p.spring_denominator;
        assert!((s.n_cav - n).abs() / n < 1e-14);
        assert!((s.q1s - q1).abs() / q1 < 1e-14);
        // Regression fixtures, from direct substitution at 2 mW.
        assert!((s.n_cav - 7.77420749e8).abs() / 7.77420749e8 < 1e-8, "n_cav = {:e}", s.n_cav);
        assert!((s.q1s - 1.13120374e-12).abs() / 1.13120374e-12 < 1e-8, "q1s = {:e}", s.q1s);
        assert!(steady_residual(&p, &s) < 1e-10);
        assert_eq!(s.p1s, 0.0);
        assert_eq!(s.p2s, 0.0);
        let ratio = s.q2s / s.q1s;
        let expected = -HBAR * p.coulomb_lambda / (p.m2 * p.omega2 * p.omega2);
        assert!((ratio - expected).abs() / expected.abs() < 1e-12);
        assert!(ratio < 0.0);
    }

    #[test]
    fn corrupted_state_fails_residual() {
        let p = reference();
        let mut s = solve_direct(&p, p.omega1).unwrap();
        s.q1s *= 2.0;
        assert!(steady_residual(&p, &s) > 1e-2);
    }

    #[test]
    fn decoupled_cavity_has_single_linear_solution() {
        let mut p = reference();
        p.g = 0.0;
        let states = selfconsistent_unchecked(&p, 0.7 * p.omega1).unwrap();
        assert_eq!(states.len(), 1);
        let expected = p.eps_l * p.eps_l / ((0.7 * p.omega1).powi(2) + p.kappa * p.kappa);
        assert!((states[0].n_cav - expected).abs() / expected < 1e-14);
    }

    #[test]
    fn weak_drive_leaves_detuning_unshifted() {
        let mut cfg = RawConfig::reference();
        cfg.pump_power = 1e-15;
        let p = build_params(&cfg).unwrap();
        let states = solve_selfconsistent(&p, p.omega1).unwrap();
        assert_eq!(states.len(), 1);
        assert!(states[0].n_cav < 1e-2);
        assert!((states[0].delta_eff - p.omega1).abs() / p.omega1 < 1e-12);
    }

    #[test]
    fn direct_and_selfconsistent_agree() {
        let p = reference();
        for d in [-2.0, -1.0, 0.0, 0.5, 1.0, 2.0] {
            let direct = solve_direct(&p, d * p.omega1).unwrap();
            let states = solve_selfconsistent(&p, direct.delta_a).unwrap();
            let hit = states.iter().any(|s| (s.n_cav - direct.n_cav).abs() / direct.n_cav < 1e-9);
            assert!(hit, "no matching branch at Δ = {d} ω₁");
            for s in &states {
                assert!(steady_residual(&p, s) < 1e-10);
                assert!((s.delta_eff - (s.delta_a - p.g * s.q1s)).abs() / s.delta_a.abs() < 1e-10);
                let n = p.eps_l * p.eps_l / (s.delta_eff.powi(2) + p.kappa.powi(2));
                assert!((s.n_cav - n).abs() / n < 1e-10);
            }
        }
    }

    #[test]
    fn bistable_branches_are_labelled_and_classified() {
        let mut cfg = RawConfig::reference();
        cfg.pump_power = 0.08;
        let p = build_params(&cfg).unwrap();
        let states = solve_selfconsistent(&p, 2.0 * p.omega1).unwrap();
        assert_eq!(states.len(), 3);
        assert_eq!(
            states.iter().map(|s| s.branch).collect::<Vec<_>>(),
            vec![Branch::LowPower, Branch::Middle, Branch::HighPower]
        );
        assert_eq!(states.iter().map(|s| s.stable).collect::<Vec<_>>(), vec![true, false, true]);
        assert!(states.windows(2).all(|w| w[0].n_cav < w[1].n_cav));
        assert_eq!(select_branch(states.clone(), None), Err(SteadyError::AmbiguousBranch));
        assert_eq!(select_branch(states, Some(Branch::Middle)).unwrap().branch, Branch::Middle);
    }

    #[test]
    fn monic_cubic_known_roots() {
        // (y-1)(y-2)(y-3) = y^3 - 6y^2 + 11y - 6
        let mut r = monic_cubic_real_roots(-6.0, 11.0, -6.0);
        r.sort_by(f64::total_cmp);
        for (got, want) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        // y^3 + y - 2 has the single real root 1
        let r = monic_cubic_real_roots(0.0, 1.0, -2.0);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pump_power_raises_intensity() {
        let mut last = 0.0;
        for mw in [0.1, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let mut cfg = RawConfig::reference();
            cfg.pump_power = mw * 1e-3;
            let p = build_params(&cfg).unwrap();
            let s = solve_direct(&p, p.omega1).unwrap();
            assert!(s.n_cav > last);
            last = s.n_cav;
        }
    }
}
