//! Physical parameters of the Coulomb-coupled optomechanical cavity.
//!
//! Every frequency held here is angular (rad/s). Conversion from the
//! mixed conventions of a config file happens in [`crate::config`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054571817e-34;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 2.99792458e8;

/// How `detuning_value` is to be interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetuningMode {
    /// The value is the effective detuning Δ, already including the static
    /// radiation-pressure shift.
    EffectiveDelta,
    /// The value is the bare pump-cavity detuning Δ_a = ω_a − ω_l.
    BareDeltaA,
}

/// User-facing parameter set, all in SI units with angular frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawConfig {
    pub pump_wavelength: f64,
    pub cavity_length: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub q1: f64,
    pub q2: f64,
    pub m1: f64,
    pub m2: f64,
    pub kappa: f64,
    pub pump_power: f64,
    pub probe_power: f64,
    pub coulomb_lambda: f64,
    pub detuning_mode: DetuningMode,
    pub detuning_value: f64,
}

impl RawConfig {
    /// Reference experimental parameter set with two transparency windows:
    /// 1064 nm pump, 25 mm cavity, ω₁ = ω₂ = 2π × 947 kHz, Q = 6700,
    /// m = 145 ng, κ = 2π × 215 kHz, 2 mW pump, λ = 8e35, Δ = ω₁.
    ///
    /// The probe power is 1e-6 of the pump power so that ε_s = 1e-3 ε_l.
    pub fn reference() -> Self {
        let two_pi = std::f64::consts::TAU;
        let omega_m = two_pi * 947e3;
        RawConfig {
            pump_wavelength: 1064e-9,
            cavity_length: 25e-3,
            omega1: omega_m,
            omega2: omega_m,
            q1: 6700.0,
            q2: 6700.0,
            m1: 145e-12,
            m2: 145e-12,
            kappa: two_pi * 215e3,
            pump_power: 2e-3,
            probe_power: 2e-9,
            coulomb_lambda: 8e35,
            detuning_mode: DetuningMode::EffectiveDelta,
            detuning_value: omega_m,
        }
    }

    fn positive_fields(&self) -> [(&'static str, f64); 12] {
        [
            ("pump_wavelength", self.pump_wavelength),
            ("cavity_length", self.cavity_length),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("q1", self.q1),
            ("q2", self.q2),
            ("m1", self.m1),
            ("m2", self.m2),
            ("kappa", self.kappa),
            ("pump_power", self.pump_power),
            ("probe_power", self.probe_power),
            ("coulomb_lambda", self.coulomb_lambda),
        ]
    }
}

/// A single violated parameter invariant.
#[derive(Clone, Debug, PartialEq, Error, Serialize, Deserialize)]
pub enum ModelError {
    #[error("parameter `{0}` must be strictly positive and finite")]
    NonPositiveParameter(String),
    #[error("Coulomb coupling must be non-negative and finite, got {0}")]
    NegativeCoupling(f64),
    #[error("detuning must be finite, got {0}")]
    NonFiniteDetuning(f64),
    #[error(
        "Coulomb coupling {lambda:e} reaches the static instability threshold {threshold:e}; \
         the coupled spring has no stable equilibrium"
    )]
    CoulombOverstrong { lambda: f64, threshold: f64 },
    #[error("probe is not weak: eps_s/eps_l = {ratio:e} exceeds {limit:e}")]
    ProbeNotWeak { ratio: f64, limit: f64 },
}

/// Fully derived parameter set. Downstream code reads constants only from
/// here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub pump_wavelength: f64,
    pub cavity_length: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub q1: f64,
    pub q2: f64,
    pub m1: f64,
    pub m2: f64,
    pub kappa: f64,
    pub pump_power: f64,
    pub probe_power: f64,
    pub coulomb_lambda: f64,
    pub detuning_mode: DetuningMode,
    pub detuning_value: f64,

    /// Optical angular frequency 2πc/λ_l.
    pub omega_a: f64,
    /// Pump angular frequency, taken equal to `omega_a` for the amplitude
    /// conversion.
    pub omega_l: f64,
    /// Radiation-pressure coupling ω_a/d (rad s⁻¹ m⁻¹).
    pub g: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Pump drive amplitude sqrt(2κ℘_l/(ħω_l)).
    pub eps_l: f64,
    /// Probe drive amplitude sqrt(2κ℘_s/(ħω_s)), with ω_s ≈ ω_l.
    pub eps_s: f64,
    /// Effective static spring m₁ω₁² − ħ²λ²/(m₂ω₂²).
    pub spring_denominator: f64,
}

impl ModelParams {
    /// The raw configuration these parameters were derived from.
    pub fn raw(&self) -> RawConfig {
        RawConfig {
            pump_wavelength: self.pump_wavelength,
            cavity_length: self.cavity_length,
            omega1: self.omega1,
            omega2: self.omega2,
            q1: self.q1,
            q2: self.q2,
            m1: self.m1,
            m2: self.m2,
            kappa: self.kappa,
            pump_power: self.pump_power,
            probe_power: self.probe_power,
            coulomb_lambda: self.coulomb_lambda,
            detuning_mode: self.detuning_mode,
            detuning_value: self.detuning_value,
        }
    }
}

/// Coupling strength at which the static spring denominator vanishes:
/// λ* = sqrt(m₁m₂ω₁²ω₂²)/ħ.
pub fn coulomb_threshold(m1: f64, omega1: f64, m2: f64, omega2: f64) -> f64 {
    (m1 * m2).sqrt() * omega1 * omega2 / HBAR
}

/// Derive every quantity used by the solvers from a raw configuration.
pub fn build_params(cfg: &RawConfig) -> Result<ModelParams, ModelError> {
    for (name, value) in cfg.positive_fields() {
        if name == "coulomb_lambda" {
            continue;
        }
        if !(value > 0.0 && value.is_finite()) {
            return Err(ModelError::NonPositiveParameter(name.to_string()));
        }
    }
    if !(cfg.coulomb_lambda >= 0.0 && cfg.coulomb_lambda.is_finite()) {
        return Err(ModelError::NegativeCoupling(cfg.coulomb_lambda));
    }
    if !cfg.detuning_value.is_finite() {
        return Err(ModelError::NonFiniteDetuning(cfg.detuning_value));
    }

    let omega_a = std::f64::consts::TAU * SPEED_OF_LIGHT / cfg.pump_wavelength;
    let omega_l = omega_a;
    let spring_denominator = cfg.m1 * cfg.omega1 * cfg.omega1
        - HBAR * HBAR * cfg.coulomb_lambda * cfg.coulomb_lambda / (cfg.m2 * cfg.omega2 * cfg.omega2);
    if spring_denominator <= 0.0 {
        return Err(ModelError::CoulombOverstrong {
            lambda: cfg.coulomb_lambda,
            threshold: coulomb_threshold(cfg.m1, cfg.omega1, cfg.m2, cfg.omega2),
        });
    }

    Ok(ModelParams {
        pump_wavelength: cfg.pump_wavelength,
        cavity_length: cfg.cavity_length,
        omega1: cfg.omega1,
        omega2: cfg.omega2,
        q1: cfg.q1,
        q2: cfg.q2,
        m1: cfg.m1,
        m2: cfg.m2,
        kappa: cfg.kappa,
        pump_power: cfg.pump_power,
        probe_power: cfg.probe_power,
        coulomb_lambda: cfg.coulomb_lambda,
        detuning_mode: cfg.detuning_mode,
        detuning_value: cfg.detuning_value,
        omega_a,
        omega_l,
        g: omega_a / cfg.cavity_length,
        gamma1: cfg.omega1 / cfg.q1,
        gamma2: cfg.omega2 / cfg.q2,
        eps_l: drive_amplitude(cfg.kappa, cfg.pump_power, omega_l),
        eps_s: drive_amplitude(cfg.kappa, cfg.probe_power, omega_l),
        spring_denominator,
    })
}

/// sqrt(2κ℘/(ħω)).
pub fn drive_amplitude(kappa: f64, power: f64, omega: f64) -> f64 {
    (2.0 * kappa * power / (HBAR * omega)).sqrt()
}

/// List of violated invariants; empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<ModelError>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, err: &ModelError) -> bool {
        self.violations.iter().any(|v| v == err)
    }
}

/// Check a (possibly hand-assembled) parameter set without mutating it.
///
/// Unlike [`build_params`] this collects every violation instead of stopping
/// at the first one, and recomputes the spring denominator from the primary
/// fields so that a stale derived value cannot hide an overstrong coupling.
pub fn validate(p: &ModelParams) -> ValidationReport {
    let mut violations = Vec::new();
    let positive = [
        ("pump_wavelength", p.pump_wavelength),
        ("cavity_length", p.cavity_length),
        ("omega1", p.omega1),
        ("omega2", p.omega2),
        ("q1", p.q1),
        ("q2", p.q2),
        ("m1", p.m1),
        ("m2", p.m2),
        ("kappa", p.kappa),
        ("pump_power", p.pump_power),
        ("probe_power", p.probe_power),
        ("g", p.g),
        ("gamma1", p.gamma1),
        ("gamma2", p.gamma2),
    ];
    for (name, value) in positive {
        if !(value > 0.0 && value.is_finite()) {
            violations.push(ModelError::NonPositiveParameter(name.to_string()));
        }
    }
    if !(p.coulomb_lambda >= 0.0 && p.coulomb_lambda.is_finite()) {
        violations.push(ModelError::NegativeCoupling(p.coulomb_lambda));
    }
    if !p.detuning_value.is_finite() {
        violations.push(ModelError::NonFiniteDetuning(p.detuning_value));
    }
    let d =
        p.m1 * p.omega1 * p.omega1 - HBAR * HBAR * p.coulomb_lambda * p.coulomb_lambda / (p.m2 * p.omega2 * p.omega2);
    // A zero mass already shows up above; the spring test only means
    // something once the masses and frequencies are sane.
    let masses_ok = p.m1 > 0.0 && p.m2 > 0.0 && p.omega1 > 0.0 && p.omega2 > 0.0;
    if masses_ok && (d <= 0.0 || p.spring_denominator <= 0.0) {
        violations.push(ModelError::CoulombOverstrong {
            lambda: p.coulomb_lambda,
            threshold: coulomb_threshold(p.m1, p.omega1, p.m2, p.omega2),
        });
    }
    ValidationReport { violations }
}

/// Weak-probe requirement for the first-order sideband expansion.
pub fn check_weak_probe(p: &ModelParams, limit: f64) -> Result<(), ModelError> {
    let ratio = p.eps_s / p.eps_l;
    if ratio > limit {
        Err(ModelError::ProbeNotWeak { ratio, limit })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_follows_cavity_frequency() {
        let p = build_params(&RawConfig::reference()).unwrap();
        let omega_a = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / 1064e-9;
        assert_eq!(p.omega_a, omega_a);
        let g = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / (1064e-9 * 25e-3);
        assert!((p.g - g).abs() / g < 1e-15);
        assert_eq!(p.g, p.omega_a / p.cavity_length);
    }

    #[test]
    fn uncoupled_spring_is_bare() {
        let mut cfg = RawConfig::reference();
        cfg.coulomb_lambda = 0.0;
        let p = build_params(&cfg).unwrap();
        assert_eq!(p.spring_denominator, cfg.m1 * cfg.omega1 * cfg.omega1);
    }

    #[test]
    fn reference_spring_is_stable() {
        let cfg = RawConfig::reference();
        let p = build_params(&cfg).unwrap();
        // m1 w1^2 = 145e-12 * (2pi 947e3)^2, coupling correction ~1.39
        let bare = 145e-12 * (std::f64::consts::TAU * 947e3).powi(2);
        let corr = (1.054571817e-34f64 * 8e35).powi(2) / bare;
        assert!((p.spring_denominator - (bare - corr)).abs() / bare < 1e-14);
        assert!(p.spring_denominator > 0.0);
        assert!(corr > 1.0 && corr < 2.0);
    }

    #[test]
    fn gammas_from_quality_factors() {
        let p = build_params(&RawConfig::reference()).unwrap();
        assert_eq!(p.gamma1, p.omega1 / 6700.0);
        assert_eq!(p.gamma2, p.omega2 / 6700.0);
    }

    #[test]
    fn zero_mass_rejected() {
        let mut cfg = RawConfig::reference();
        cfg.m1 = 0.0;
        assert_eq!(build_params(&cfg), Err(ModelError::NonPositiveParameter("m1".into())));
        let mut p = build_params(&RawConfig::reference()).unwrap();
        p.m1 = 0.0;
        let report = validate(&p);
        assert!(report.contains(&ModelError::NonPositiveParameter("m1".into())));
    }

    #[test]
    fn reference_params_validate_clean() {
        let p = build_params(&RawConfig::reference()).unwrap();
        assert!(validate(&p).is_valid());
        assert!(check_weak_probe(&p, 1e-3 * (1.0 + 1e-9)).is_ok());
    }

    #[test]
    fn overstrong_threshold_is_where_spring_vanishes() {
        let cfg = RawConfig::reference();
        let threshold = coulomb_threshold(cfg.m1, cfg.omega1, cfg.m2, cfg.omega2);
        // solve D(λ) = 0 by bisection, independently of the closed form
        let d =
            |lam: f64| cfg.m1 * cfg.omega1 * cfg.omega1 - HBAR * HBAR * lam * lam / (cfg.m2 * cfg.omega2 * cfg.omega2);
        let (mut lo, mut hi) = (0.0, 1e40);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if d(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((lo - threshold).abs() / threshold < 1e-12);

        let mut over = cfg.clone();
        over.coulomb_lambda = threshold * 1.01;
        assert!(matches!(build_params(&over), Err(ModelError::CoulombOverstrong { .. })));
        let mut p = build_params(&cfg).unwrap();
        p.coulomb_lambda = threshold * 1.01;
        assert!(validate(&p).violations.iter().any(|v| matches!(v, ModelError::CoulombOverstrong { .. })));

        let mut under = cfg;
        under.coulomb_lambda = threshold * 0.99;
        assert!(build_params(&under).is_ok());
    }

    #[test]
    fn pump_power_scales_amplitude_squared() {
        let cfg = RawConfig::reference();
        let mut doubled = cfg.clone();
        doubled.pump_power *= 2.0;
        let a = build_params(&cfg).unwrap();
        let b = build_params(&doubled).unwrap();
        let ratio = b.eps_l * b.eps_l / (a.eps_l * a.eps_l);
        assert!((ratio - 2.0).abs() < 1e-14);
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = RawConfig::reference();
        let a = build_params(&cfg).unwrap();
        let b = build_params(&cfg).unwrap();
        assert_eq!(a.eps_l.to_bits(), b.eps_l.to_bits());
        assert_eq!(a.spring_denominator.to_bits(), b.spring_denominator.to_bits());
        assert_eq!(a, b);
    }
}
