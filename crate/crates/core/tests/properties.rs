use proptest::prelude::*;

use kdv_core::config::{RunConfig, KEYS};
use kdv_core::moment::{Window, WindowParams};
use kdv_core::pde::{solve_neumann, Grid, SourceTerm};
use kdv_core::spectral::{fd_matrix_am, is_critical, solve_modes};
use kdv_core::{TimeSignal, C64};

/// `key = value` text for every key, in the format the parser reads.
fn to_text(cfg: &RunConfig) -> String {
    let doc = serde_json::to_value(cfg).unwrap();
    KEYS.iter()
        .map(|k| {
            let v = match &doc[*k] {
                serde_json::Value::Null => "auto".to_string(),
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(a) => a
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
                other => other.to_string(),
            };
            format!("{k} = {v}\n")
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn skew_operator_is_antisymmetric(length in 0.5f64..10.0, half in 8usize..60) {
        let a = fd_matrix_am(length, 2 * half);
        let asym = (&a + a.transpose()).abs().max();
        prop_assert_eq!(asym, 0.0);
    }

    #[test]
    fn window_is_even_and_conjugate_symmetric(
        horizon in 0.1f64..2.0,
        gamma in 0.5f64..8.0,
        re in -400.0f64..400.0,
        im in -5.0f64..5.0,
    ) {
        let w = Window::new(WindowParams::new(horizon, gamma), 1e3).unwrap();
        prop_assert!((w.h_real(re) - w.h_real(-re)).abs() <= 1e-14 * w.h_real(0.0));
        let z = C64::new(re, im);
        let d = (w.h(z.conj()) - w.h(z).conj()).norm();
        prop_assert!(d <= 1e-12 * w.h(z).norm().max(1e-300), "H(conj z) - conj H(z) = {}", d);
    }

    #[test]
    fn modes_satisfy_boundary_conditions(length in 0.5f64..9.0) {
        prop_assume!(!is_critical(length, 1e-3).critical);
        let spec = solve_modes(length, 3).unwrap();
        let freqs = spec.positive_frequencies();
        prop_assert!(freqs.windows(2).all(|w| w[1] > w[0]));
        for m in &spec.modes {
            prop_assert!(m.boundary_residual() < 1e-8, "k = {}: {}", m.k, m.boundary_residual());
            let c = m.conjugate();
            prop_assert!((c.lambda + m.lambda).abs() < 1e-12 * m.lambda.abs().max(1.0));
        }
    }

    #[test]
    fn config_survives_a_text_round_trip(
        length in 0.1f64..20.0,
        horizon in 0.01f64..5.0,
        count in 1usize..20,
        extra in 0usize..300,
        half in 8usize..500,
        gamma in proptest::option::of(0.1f64..10.0),
        seed in any::<u64>(),
        first in 0.1f64..4.0,
        n in 1usize..5,
        gramian in any::<bool>(),
    ) {
        let mut cfg = RunConfig {
            length,
            horizon,
            count,
            nprod: count + extra,
            nx: 2 * half,
            gamma,
            seed,
            horizons: (0..n).map(|i| first / 2f64.powi(i as i32)).collect(),
            target_modes: count.min(2),
            ..Default::default()
        };
        if gramian {
            cfg.method = "gramian".parse().unwrap();
        }
        cfg.validate().unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&to_text(&cfg)).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn neumann_solver_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, w in 1.0f64..20.0) {
        let nx = 64;
        let grid = Grid::new(1.0, 0.05, nx, 100).unwrap();
        let xs = grid.xs();
        let y1: Vec<f64> = xs.iter().map(|x| (std::f64::consts::PI * x).sin()).collect();
        let y2: Vec<f64> = xs.iter().map(|x| x * x * (1.0 - x)).collect();
        let u1 = TimeSignal::from_fn(0.05, 100, |t| C64::new((w * t).sin(), 0.0));
        let u2 = TimeSignal::from_fn(0.05, 100, |t| C64::new(t, 0.0));
        let mix: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| a * p + b * q).collect();
        let r1 = solve_neumann(&y1, &SourceTerm::Zero, &u1, grid).unwrap();
        let r2 = solve_neumann(&y2, &SourceTerm::Zero, &u2, grid).unwrap();
        let rm = solve_neumann(&mix, &SourceTerm::Zero, &u1.combine(a, &u2, b), grid).unwrap();
        let scale = r1.final_state().iter().chain(r2.final_state()).fold(1.0f64, |m, v| m.max(v.abs()));
        for ((p, q), r) in r1.final_state().iter().zip(r2.final_state()).zip(rm.final_state()) {
            prop_assert!((a * p + b * q - r).abs() <= 1e-10 * scale);
        }
    }
}
