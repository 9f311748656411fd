use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use kdv_core::control::first_mode_state;
use kdv_core::linalg::{interleave_perm, BandLu};
use kdv_core::moment::{
    assemble_moment_problem, frequency_table, g_real, synthesize_control, SynthesisSettings,
    Window, WindowParams, DEFAULT_NPROD,
};
use kdv_core::pde::{solve_neumann, Grid, SourceTerm};
use kdv_core::spectral::{char_determinant, fd_matrix_am, solve_modes};
use kdv_core::TimeSignal;

fn spectral(c: &mut Criterion) {
    c.bench_function("char_determinant", |b| {
        b.iter(|| char_determinant(black_box(1518.7), black_box(1.0)))
    });
    c.bench_function("solve_modes K=8", |b| {
        b.iter(|| solve_modes(black_box(1.0), 8))
    });
}

fn linear_algebra(c: &mut Criterion) {
    let n = 400;
    let a = fd_matrix_am(1.0, n);
    let mut t = kdv_core::linalg::Triplets::new(n);
    for i in 0..n {
        for j in i.saturating_sub(2)..(i + 3).min(n) {
            if a[(i, j)] != 0.0 {
                t.push(i, j, a[(i, j)]);
            }
        }
    }
    let shifted = t.shifted(1.0, -1e-4);
    c.bench_function("band factor n=400", |b| {
        b.iter(|| BandLu::factor(black_box(&shifted), Some(interleave_perm(n))).unwrap())
    });
    let lu = BandLu::factor(&shifted, Some(interleave_perm(n))).unwrap();
    let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
    c.bench_function("band solve n=400", |b| {
        b.iter(|| {
            let mut x = rhs.clone();
            lu.solve(&mut x);
            x
        })
    });
}

fn pde(c: &mut Criterion) {
    let spec = solve_modes(1.0, 1).unwrap();
    let y0 = first_mode_state(&spec, 400);
    let ctrl = TimeSignal::zeros(0.1, 400);
    let grid = Grid::matched(1.0, 400, &ctrl).unwrap();
    c.bench_function("neumann 400 steps nx=400", |b| {
        b.iter(|| solve_neumann(&y0, &SourceTerm::Zero, &ctrl, grid).unwrap())
    });
}

fn moment(c: &mut Criterion) {
    let table = frequency_table(1.0, DEFAULT_NPROD).unwrap();
    let window = Window::new(WindowParams::new(1.0, 4.0), 5e4).unwrap();
    c.bench_function("g_real", |b| {
        b.iter(|| {
            g_real(
                black_box(2),
                black_box(-1500.0),
                &table,
                &window,
                DEFAULT_NPROD,
            )
        })
    });
    let spec = solve_modes(1.0, 4).unwrap();
    let y0 = first_mode_state(&spec, 400);
    let problem = assemble_moment_problem(&y0, &spec, 1.0, 1.0 / 401.0).unwrap();
    let settings = SynthesisSettings::default();
    let mut group = c.benchmark_group("synthesis");
    group.sample_size(10);
    group.bench_function("synthesize K=4", |b| {
        b.iter(|| synthesize_control(&problem, &table, &window, &settings).unwrap())
    });
    group.finish();
}

criterion_group!(benches, spectral, linear_algebra, pde, moment);
criterion_main!(benches);
