use std::f64::consts::PI;
use std::sync::Arc;

use heis_core::barriers::{self, BarrierParams};
use heis_core::coefficients::random_symplectic;
use heis_core::group::HPoint;
use heis_core::quadrature::{self, QuadratureMethod, QuadratureSpec};
use heis_core::solver::{self, harness, BoundaryFn, DirichletProblem, Grid, Scheme, SolveOptions};
use heis_core::{CoefficientField, CoefficientMatrix, ContinuityModulus, Region};

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    h / 3.0 * (f(a) + f(b) + inner)
}

#[test]
fn perturbation_constant_matches_formula() {
    for (l, big, q) in [(1.0, 1.0, 4usize), (0.5, 2.0, 4), (0.8, 1.25, 6)] {
        let qf = q as f64;
        let expected = (qf + 2.0) / (4.0 * l) + (4.0 * qf / (l * l) + 8.0) * big / 16.0;
        let c = barriers::derived_constant_c(l, big, q).unwrap();
        assert!((c.c - expected).abs() <= 1e-12 * expected);
    }
}

#[test]
fn epsilon0_for_hoelder_modulus_is_explicit() {
    let (c, a) = (3.0, 0.5);
    let e = barriers::epsilon0(&ContinuityModulus::Hoelder { c, a }, 0.5, 2.0, 4, 0.25).unwrap();
    let expected = (e.threshold / c).powf(1.0 / a);
    assert!((e.eps0 / expected - 1.0).abs() <= 1e-9);
    assert!((e.threshold - 0.25 * 0.5 / (12.0 * 2.0)).abs() <= 1e-15);
}

/// `α(I, 1) = 4 ∫₀¹ 2π s³ · 2 asinh(√(1−s⁴)/s²) ds = 8π ∫₀^{π/2} cos θ sin θ asinh(tan θ) dθ` in ℍ¹.
#[test]
fn alpha_for_identity_matches_one_dimensional_quadrature() {
    let f = |th: f64| if th >= PI / 2.0 { 0.0 } else { th.cos() * th.sin() * th.tan().asinh() };
    let expected = 8.0 * PI * simpson(f, 0.0, PI / 2.0, 20_000);
    assert!((expected - 4.0 * PI).abs() < 1e-7);
    let spec = QuadratureSpec::new(QuadratureMethod::StratifiedGrid, 200_000, 5, 1e-3).unwrap();
    let m = CoefficientMatrix::identity(1);
    let s = quadrature::alpha_surface(&m, 1.0, &spec).unwrap();
    let v = quadrature::alpha_volume(&m, &spec).unwrap();
    assert!((s.value - expected).abs() <= s.error().max(1e-6 * expected));
    assert!((v.value - expected).abs() <= v.error());
}

/// `Γ_M` solves `tr(B D²Γ) = 0` in Euclidean coordinates, with `B` the reduced coefficients.
#[test]
fn fundamental_solution_is_harmonic_in_euclidean_coordinates() {
    let m = random_symplectic(1, 0.5, 2.0, 8).unwrap();
    let h = 1e-3;
    for p in [[0.7, -0.2, 0.4], [-0.3, 0.9, -0.5], [1.1, 0.4, 0.8]] {
        let g = |d: [f64; 3]| barriers::gamma_fundamental(&m, &HPoint::h1(p[0] + d[0], p[1] + d[1], p[2] + d[2])).unwrap();
        let b = solver::euclidean_coefficients(&m, &HPoint::h1(p[0], p[1], p[2])).unwrap();
        let mut lap = 0.0;
        let mut scale = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut e = [[0.0; 3]; 2];
                e[0][i] += h;
                e[1][j] += h;
                let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
                let z = [0.0; 3];
                let d2 = (g(add(add(z, e[0], 1.0), e[1], 1.0)) - g(add(add(z, e[0], 1.0), e[1], -1.0)) - g(add(add(z, e[0], -1.0), e[1], 1.0))
                    + g(add(add(z, e[0], -1.0), e[1], -1.0)))
                    / (4.0 * h * h);
                lap += b[(i, j)] * d2;
                scale += (b[(i, j)] * d2).abs();
            }
        }
        assert!(lap.abs() <= 1e-5 * scale, "{lap} vs {scale}");
    }
}

#[test]
fn kernel_gradient_matches_finite_differences() {
    let m = random_symplectic(1, 0.5, 2.0, 2).unwrap();
    let params = BarrierParams::new(0.2, m).unwrap();
    let z = HPoint::h1(0.4, -0.6, 0.3);
    let jet = barriers::g_kernel(&params, &z).unwrap();
    let h = 1e-6;
    let g = |p: &HPoint| barriers::g_kernel(&params, p).unwrap().value;
    for (i, v) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
        let plus = heis_core::group::horizontal_step(&z, v, h);
        let minus = heis_core::group::horizontal_step(&z, v, -h);
        let fd = (g(&plus) - g(&minus)) / (2.0 * h);
        assert!((fd - jet.gradient[i]).abs() <= 1e-6 * jet.gradient[i].abs().max(1.0));
    }
}

#[test]
fn affine_data_is_reproduced_by_both_schemes() {
    let m = random_symplectic(1, 0.5, 2.0, 3).unwrap();
    let field = CoefficientField::constant(m, Region::Everywhere);
    let grid = Grid::new([-1.0; 3], [1.0; 3], [12, 12, 12]).unwrap();
    let exact = |z: &HPoint| 1.0 + 0.3 * z.x[0] - 0.2 * z.x[1] + 0.1 * z.t;
    let data: BoundaryFn = Arc::new(exact);
    let p = DirichletProblem::new(field, grid, data).unwrap();
    for s in [Scheme::EuclideanStencil, Scheme::SemiLagrangian] {
        let sol = solver::solve(&p, s, &SolveOptions::default()).unwrap();
        assert!(solver::max_error(&p, &sol, &exact) <= 1e-8, "{s:?}");
    }
}

#[test]
fn test_function_w_for_unit_data_is_the_scaled_gauge() {
    let z0 = HPoint::h1(0.1, 0.2, -0.1);
    let consts = harness::WConstants {
        c: 0.3,
        big_lambda: 2.0,
        q: 4,
        delta: 0.25,
    };
    let u = |_: &HPoint| 1.0;
    let w = harness::test_function_w(&u, &z0, 0.5, &consts);
    let on_sphere = heis_core::group::compose(&z0, &HPoint::h1(0.5, 0.0, 0.0)).unwrap();
    assert!(w(&z0).abs() <= 1e-15);
    assert!((w(&on_sphere) - consts.factor(0.5)).abs() <= 1e-12);
    assert!((consts.factor(0.5) - 0.3 * 0.5 / (4.0 * 2.0 * 6.0)).abs() <= 1e-15);
}
