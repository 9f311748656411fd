//! Cross-checks between independent computations of the same quantity.

use kdv_core::control::{ControlContext, ControlSettings};
use kdv_core::moment::DEFAULT_NPROD;
use kdv_core::nonlinear::{
    band_limited_state, fixed_point_reach, IterationSettings, ReachOperator,
};
use kdv_core::pde::{grid_l2, solve_jump, Grid, JumpMethod, SourceTerm};
use kdv_core::spectral::{fd_frequencies, solve_frequencies, solve_modes};
use kdv_core::{TimeSignal, C64};

fn rel(a: &[f64], b: &[f64], h: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    grid_l2(&d, h) / grid_l2(b, h)
}

#[test]
fn determinant_roots_match_finite_difference_eigenvalues() {
    for length in [1.0, 3.0, 5.0, 8.0] {
        let exact = solve_frequencies(length, 4).unwrap();
        let fd = fd_frequencies(length, 2000, 4).unwrap();
        for (k, (a, b)) in exact.iter().zip(&fd).enumerate() {
            let r = (a - b).abs() / a.abs();
            println!(
                "L {length} k {} exact {a:.8e} fd {b:.8e} rel {r:.2e}",
                k + 1
            );
            assert!(r < 1e-3, "L = {length}, k = {}: {a} vs {b}", k + 1);
        }
    }
}

#[test]
fn finite_difference_frequencies_converge_at_second_order() {
    let exact = solve_frequencies(3.0, 1).unwrap()[0];
    let e1 = (fd_frequencies(3.0, 250, 1).unwrap()[0] - exact).abs();
    let e2 = (fd_frequencies(3.0, 500, 1).unwrap()[0] - exact).abs();
    let order = (e1 / e2).log2();
    println!("order {order}");
    assert!((1.8..2.2).contains(&order), "observed order {order}");
}

fn jump_pair(v: &TimeSignal, nx: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let spec = solve_modes(1.0, 4).unwrap();
    let grid = Grid::new(1.0, v.horizon, nx, v.steps()).unwrap();
    let ctx = ControlContext::new(1.0, 4, DEFAULT_NPROD).unwrap();
    let y0 = band_limited_state(&ctx, nx, &[(1, 1.0, 0.3), (2, -0.5, 0.2)], 1.0);
    let fd = solve_jump(&y0, &SourceTerm::Zero, v, grid, JumpMethod::Fd, None).unwrap();
    let modal = solve_jump(
        &y0,
        &SourceTerm::Zero,
        v,
        grid,
        JumpMethod::Modal,
        Some(&spec),
    )
    .unwrap();
    (
        fd.final_state().to_vec(),
        modal.final_state().to_vec(),
        grid.h(),
    )
}

#[test]
fn finite_difference_jump_solver_matches_modal_solution() {
    let horizon = 0.05;
    // Fine time step so the spatial error dominates.
    let zero = TimeSignal::zeros(horizon, 40000);
    let (fd, modal, h) = jump_pair(&zero, 800);
    let free = rel(&fd, &modal, h);
    let (fd2, modal2, h2) = jump_pair(&zero, 400);
    let coarse = rel(&fd2, &modal2, h2);
    println!("free {free:.3e} coarse {coarse:.3e}");
    assert!(free < 5e-3, "relative difference {free}");
    let order = (coarse / free).log2();
    assert!((1.8..2.2).contains(&order), "observed order {order}");
}

fn small_operator() -> ReachOperator {
    let ctx = ControlContext::new(1.0, 3, DEFAULT_NPROD).unwrap();
    let settings = ControlSettings {
        nx: 200,
        gamma: Some(4.0),
        ..Default::default()
    };
    ReachOperator::new(&ctx, 1.0, &settings).unwrap()
}

#[test]
fn reach_controls_are_linear_in_the_target() {
    let op = small_operator();
    let a = band_limited_state(&op.ctx, 200, &[(1, 1.0, 0.0), (3, 0.2, -0.1)], 1e-2);
    let b = band_limited_state(&op.ctx, 200, &[(2, 0.0, 1.0)], 3e-3);
    let (s, t) = (0.7, -2.5);
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + t * y).collect();
    let ua = op.reach(&a).unwrap().u;
    let ub = op.reach(&b).unwrap().u;
    let uab = op.reach(&ab).unwrap().u;
    let combined = ua.combine(s, &ub, t);
    let err = uab.rel_distance(&combined);
    println!("linearity {err:.2e}");
    assert!(err < 1e-10);

    let zero = op.reach(&vec![0.0; 200]).unwrap();
    assert!(zero
        .u
        .values
        .iter()
        .chain(&zero.v.values)
        .all(|z| *z == C64::new(0.0, 0.0)));
}

#[test]
fn zero_target_needs_no_iteration() {
    let op = small_operator();
    let r = fixed_point_reach(&op, &vec![0.0; 200], &IterationSettings::default()).unwrap();
    assert!(r.converged);
    assert_eq!(r.iterations(), 0);
    assert_eq!(r.control_norm, 0.0);
}
