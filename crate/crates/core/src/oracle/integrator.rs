//! Dormand-Prince 5(4) with embedded error estimate and FSAL.

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum StepError {
    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepFailure { t: f64, h: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("non-finite state at t = {t:e}")]
    NonFinite { t: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// difference between the 5th- and 4th-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Adaptive integrator state for an autonomous-in-form system
/// `dy/dt = f(t, y)` with `N` real components.
pub struct Dopri5<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    rtol: f64,
    atol: [f64; N],
    h: f64,
    h_max: f64,
    k1: Option<[f64; N]>,
    max_steps: usize,
    pub stats: Stats,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

impl<const N: usize> Dopri5<N> {
    /// Every entry of `atol` must be strictly positive.
    pub fn new(t0: f64, y0: [f64; N], rtol: f64, atol: [f64; N], h0: f64, max_steps: usize) -> Self {
        assert!(atol.iter().all(|&a| a > 0.0), "absolute tolerances must be positive");
        Dopri5 { t: t0, y: y0, rtol, atol, h: h0, h_max: f64::INFINITY, k1: None, max_steps, stats: Stats::default() }
    }

    /// Cap the step size. Near an equilibrium the error estimate vanishes
    /// and steps would otherwise grow without bound.
    pub fn with_max_step(mut self, h_max: f64) -> Self {
        assert!(h_max > 0.0, "maximum step must be positive");
        self.h_max = h_max;
        self.h = self.h.min(h_max);
        self
    }

    /// Advance exactly to `t_target`, calling `on_step` after each accepted
    /// step. The last step is shortened to land on the target without
    /// disturbing the adapted step size.
    pub fn advance_to<F, S>(&mut self, f: &F, t_target: f64, mut on_step: S) -> Result<(), StepError>
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
        S: FnMut(f64, &[f64; N]),
    {
        while self.t < t_target {
            let remaining = t_target - self.t;
            if remaining <= 4.0 * f64::EPSILON * t_target.abs() {
                self.t = t_target;
                break;
            }
            let clamped = self.h >= remaining;
            let h = if clamped { remaining } else { self.h };
            let (accepted, h_next) = self.try_step(f, h)?;
            if accepted {
                if clamped {
                    // landed on the target; keep the larger adapted step
                    self.t = t_target;
                    self.h = self.h.max(h_next);
                } else {
                    self.h = h_next;
                }
                on_step(self.t, &self.y);
            } else {
                self.h = h_next;
            }
        }
        Ok(())
    }

    fn try_step<F>(&mut self, f: &F, h: f64) -> Result<(bool, f64), StepError>
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
    {
        if self.stats.accepted + self.stats.rejected >= self.max_steps {
            return Err(StepError::TooManySteps(self.max_steps));
        }
        if h <= f64::EPSILON * self.t.abs().max(1e-300) * 4.0 {
            return Err(StepError::StepFailure { t: self.t, h });
        }
        let t = self.t;
        let y = &self.y;
        let k1 = match self.k1 {
            Some(k) => k,
            None => {
                self.stats.rhs_evals += 1;
                f(t, y)
            }
        };
        let k2 = f(t + C2 * h, &axpy(y, h, &[(A21, &k1)]));
        let k3 = f(t + C3 * h, &axpy(y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(t + C4 * h, &axpy(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(t + C5 * h, &axpy(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = f(t + h, &axpy(y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
        let y_new = axpy(y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = f(t + h, &y_new);
        self.stats.rhs_evals += 6;

        let mut sum = 0.0;
        for i in 0..N {
            let err = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.atol[i] + self.rtol * y[i].abs().max(y_new[i].abs());
            sum += (err / sc).powi(2);
        }
        let err = (sum / N as f64).sqrt();
        if !err.is_finite() {
            return Err(StepError::NonFinite { t });
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if err <= 1.0 {
            self.t = t + h;
            self.y = y_new;
            self.k1 = Some(k7);
            self.stats.accepted += 1;
            Ok((true, (h * factor).min(self.h_max)))
        } else {
            self.stats.rejected += 1;
            Ok((false, h * factor.min(1.0)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let f = |_t: f64, y: &[f64; 1]| [-2.0 * y[0]];
        let mut ode = Dopri5::new(0.0, [1.0], 1e-12, [1e-14], 1e-3, 1_000_000);
        ode.advance_to(&f, 3.0, |_, _| {}).unwrap();
        assert_eq!(ode.t, 3.0);
        assert!((ode.y[0] - (-6.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_period() {
        let w = 3.0;
        let f = move |_t: f64, y: &[f64; 2]| [y[1], -w * w * y[0]];
        let mut ode = Dopri5::new(0.0, [1.0, 0.0], 1e-11, [1e-13, 1e-13], 1e-3, 1_000_000);
        let period = std::f64::consts::TAU / w;
        let mut samples = 0;
        ode.advance_to(&f, 10.0 * period, |_, _| samples += 1).unwrap();
        assert!((ode.y[0] - 1.0).abs() < 1e-8);
        assert!(ode.y[1].abs() < 1e-7);
        assert_eq!(samples, ode.stats.accepted);
    }

    #[test]
    fn driven_rhs_sees_time() {
        // y' = cos t, y(0) = 0 -> sin t
        let f = |t: f64, _y: &[f64; 1]| [t.cos()];
        let mut ode = Dopri5::new(0.0, [0.0], 1e-12, [1e-14], 1e-2, 100_000);
        for k in 1..=20 {
            let t = 0.37 * k as f64;
            ode.advance_to(&f, t, |_, _| {}).unwrap();
            assert!((ode.y[0] - t.sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn step_budget_is_enforced() {
        let f = |_t: f64, y: &[f64; 1]| [-y[0]];
        let mut ode = Dopri5::new(0.0, [1.0], 1e-12, [1e-14], 1e-6, 10);
        assert_eq!(ode.advance_to(&f, 100.0, |_, _| {}), Err(StepError::TooManySteps(10)));
    }

    #[test]
    fn max_step_is_respected() {
        let f = |_t: f64, _y: &[f64; 1]| [0.0];
        let mut ode = Dopri5::new(0.0, [1.0], 1e-10, [1e-12], 1e-3, 1_000).with_max_step(0.1);
        let mut last = 0.0;
        let mut widest = 0.0f64;
        ode.advance_to(&f, 1.0, |t, _| {
            widest = widest.max(t - last);
            last = t;
        })
        .unwrap();
        assert!(widest <= 0.1 * (1.0 + 1e-12), "step {widest}");
        // growth from the initial guess saturates at the cap: 1e-3 grows at most 10x per step
        assert!(ode.stats.accepted <= 14, "{} steps", ode.stats.accepted);
    }
}
