use proptest::prelude::*;
use slowfast::config::ConfigFile;
use slowfast::model::{build_params, coulomb_threshold, ModelError, RawConfig};
use slowfast::output::num;
use slowfast::response::{epsilon_r, DeltaGrid};
use slowfast::steady_state::{intensity_cubic, solve_direct, solve_selfconsistent, steady_residual};
use slowfast::sweep::{Axis, AxisParam, AxisScale, SweepPlan, DEFAULT_BUDGET};

fn reference_with(power: f64, lambda: f64) -> slowfast::ModelParams {
    let mut raw = RawConfig::reference();
    raw.pump_power = power;
    raw.coulomb_lambda = lambda;
    build_params(&raw).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn number_format_round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
        prop_assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn direct_steady_state_is_a_fixed_point(
        log_power in -5.0f64..-1.0,
        lambda_frac in 0.0f64..0.9,
        detuning in -3.0f64..3.0,
    ) {
        let p0 = reference_with(1e-3, 0.0);
        let lambda = lambda_frac * coulomb_threshold(p0.m1, p0.omega1, p0.m2, p0.omega2);
        let p = reference_with(10f64.powf(log_power), lambda);
        let s = solve_direct(&p, detuning * p.omega1).unwrap();
        prop_assert!(steady_residual(&p, &s) < 1e-10);
        prop_assert!((s.delta_a - p.g * s.q1s - s.delta_eff).abs() <= 1e-9 * s.delta_a.abs().max(p.kappa));
    }

    #[test]
    fn selfconsistent_roots_solve_the_cubic(
        log_power in -4.0f64..-0.5,
        detuning in -1.0f64..4.0,
    ) {
        let p = reference_with(10f64.powf(log_power), 8e35);
        let delta_a = detuning * p.omega1;
        let states = solve_selfconsistent(&p, delta_a).unwrap();
        prop_assert!(!states.is_empty() && states.len() <= 3);
        let cubic = intensity_cubic(&p, delta_a).unwrap();
        for w in states.windows(2) {
            prop_assert!(w[0].n_cav < w[1].n_cav);
        }
        for s in &states {
            prop_assert!(steady_residual(&p, s) < 1e-10);
            let y = s.n_cav * p.kappa.powi(-1) * (slowfast::model::HBAR * p.g * p.g / p.spring_denominator);
            prop_assert!(cubic.relative_residual(y) < 1e-10);
            // going back through the direct solver lands on the same state
            let again = solve_direct(&p, s.delta_eff).unwrap();
            prop_assert!((again.n_cav - s.n_cav).abs() <= 1e-9 * s.n_cav);
        }
        if states.len() == 3 {
            prop_assert!(states[0].stable && !states[1].stable && states[2].stable);
        }
    }

    #[test]
    fn spectrum_is_finite_and_bounded(log_power in -5.0f64..-2.0, lambda_frac in 0.0f64..3.0, sign in prop::bool::ANY) {
        let p = reference_with(10f64.powf(log_power), lambda_frac * 8e35);
        let detuning = if sign { p.omega1 } else { -p.omega1 };
        let s = solve_direct(&p, detuning).unwrap();
        let grid = DeltaGrid::in_omega1_units(p.omega1, 0.9, 1.1, 101).unwrap();
        for &d in grid.values() {
            let e = epsilon_r(&p, &s, d).unwrap();
            prop_assert!(e.re.is_finite() && e.im.is_finite());
            // the red-detuned side is passive; it reflects no more than it receives
            if sign {
                prop_assert!(e.norm() < 10.0);
            }
        }
    }

    #[test]
    fn overrides_read_back_exactly(power in 1e-5f64..1e-1, lambda in 0.0f64..1e37) {
        let cfg = ConfigFile::reference()
            .with_overrides(&[format!("pump_power={}", num(power)), format!("coulomb_lambda={}", num(lambda))])
            .unwrap();
        let p = build_params(&cfg.to_raw()).unwrap();
        prop_assert_eq!(p.pump_power, power);
        prop_assert_eq!(p.coulomb_lambda, lambda);
    }

    #[test]
    fn coupling_beyond_threshold_is_rejected(excess in 1.0f64..100.0) {
        let p0 = reference_with(1e-3, 0.0);
        let lambda = excess * coulomb_threshold(p0.m1, p0.omega1, p0.m2, p0.omega2);
        let mut raw = RawConfig::reference();
        raw.coulomb_lambda = lambda;
        let is_overstrong = matches!(build_params(&raw), Err(ModelError::CoulombOverstrong { .. }));
        prop_assert!(is_overstrong);
    }

    #[test]
    fn sweep_coordinates_cover_the_grid(n1 in 1usize..6, n2 in 1usize..6, n3 in 1usize..6) {
        let axis = |param, count| Axis { param, start: 1e-3, stop: 2e-3, count, scale: AxisScale::Linear };
        let plan = SweepPlan {
            base: ConfigFile::reference(),
            axes: vec![
                axis(AxisParam::PumpPower, n1),
                axis(AxisParam::CoulombLambda, n2),
                axis(AxisParam::DetuningValue, n3),
            ],
            outputs: Default::default(),
            budget: DEFAULT_BUDGET,
            grid: Default::default(),
        };
        let coords = plan.coordinates();
        prop_assert_eq!(coords.len(), n1 * n2 * n3);
        let mut sorted = coords.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(sorted, coords);
    }
}
