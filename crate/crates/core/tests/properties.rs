//! Property tests for the module invariants.

use std::sync::Arc;

use proptest::prelude::*;

use afree_lab::cell::{solve_cell, CellMode, CellProblem, SolverParams};
use afree_lab::density::{convexify_pair, EnergyDensity, EnvelopeGrid, QuadraticDensity};
use afree_lab::field::PeriodicField;
use afree_lab::linalg::{self, DEFAULT_TOL};
use afree_lab::operator::DifferentialOperator;
use afree_lab::report::{Cell, Table};
use afree_lab::spectral::{apply_operator, h_minus1_norm, project_afree};
use afree_lab::surgery::{jump_field, sharp_average};

fn operators() -> Vec<DifferentialOperator> {
    vec![
        DifferentialOperator::builtin("div", 1, 2).unwrap(),
        DifferentialOperator::builtin("div", 1, 3).unwrap(),
        DifferentialOperator::builtin("curl", 1, 2).unwrap(),
        DifferentialOperator::builtin("curl", 1, 3).unwrap(),
        DifferentialOperator::builtin("curl", 2, 2).unwrap(),
    ]
}

fn vec_in(len: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, len)
}

fn field_2d(n: usize, m: usize) -> impl Strategy<Value = PeriodicField> {
    prop::collection::vec(-1.0..1.0f64, n * n * m)
        .prop_map(move |v| PeriodicField::from_values(&[n, n], m, v).unwrap())
}

fn max_abs_diff(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symbol_is_linear(idx in 0usize..5, a in -3.0..3.0f64, b in -3.0..3.0f64,
                        eta in vec_in(3, 1.0), mu in vec_in(3, 1.0)) {
        let op = &operators()[idx];
        let d = op.d();
        let comb: Vec<f64> = (0..d).map(|k| a * eta[k] + b * mu[k]).collect();
        let lhs = op.evaluate_symbol(&comb).unwrap();
        let rhs = op.evaluate_symbol(&eta[..d]).unwrap() * a + op.evaluate_symbol(&mu[..d]).unwrap() * b;
        prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-14 * (1.0 + lhs.abs().max()));
    }

    #[test]
    fn normalization_transforms_rows(idx in 0usize..5, eta in vec_in(3, 1.0)) {
        let op = &operators()[idx];
        let d = op.d();
        let (normalized, dec) = op.normalize(DEFAULT_TOL).unwrap();
        let lhs = &dec.row_transform * op.evaluate_symbol(&eta[..d]).unwrap();
        let rhs = normalized.evaluate_symbol(&eta[..d]).unwrap();
        prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn kernel_dimension_is_m_minus_r(idx in 0usize..5, eta in vec_in(3, 1.0)) {
        let op = &operators()[idx];
        let d = op.d();
        prop_assume!(linalg::norm(&eta[..d]) > 1e-3);
        let r = op.check_constant_rank(256, DEFAULT_TOL).unwrap().r;
        let ker = linalg::kernel_basis(&op.evaluate_symbol(&eta[..d]).unwrap(), DEFAULT_TOL);
        prop_assert_eq!(ker.ncols(), op.m() - r);
    }

    #[test]
    fn limit_symbol_identities(idx in 0usize..5, eta in vec_in(3, 1.0)) {
        // A_0(e_d) keeps the top r rows of A(e_d); A_0(eta', 0) keeps the bottom rows of A'(eta').
        let op = &operators()[idx];
        let d = op.d();
        let (normalized, dec) = op.normalize(DEFAULT_TOL).unwrap();
        let limit = op.limit().unwrap();
        let mut ed = vec![0.0; d];
        ed[d - 1] = 1.0;
        let full = normalized.evaluate_symbol(&ed).unwrap();
        let lim = limit.symbol(&ed).unwrap();
        let l = full.nrows();
        prop_assert!(max_abs_diff(&lim.rows(0, dec.r).into_owned(), &full.rows(0, dec.r).into_owned()) <= 1e-12);
        prop_assert!(lim.rows(dec.r, l - dec.r).abs().max() <= 1e-12);
        let mut ep = eta[..d].to_vec();
        ep[d - 1] = 0.0;
        let full = normalized.evaluate_symbol(&ep).unwrap();
        let lim = limit.symbol(&ep).unwrap();
        prop_assert!(lim.rows(0, dec.r).abs().max() <= 1e-12);
        prop_assert!(max_abs_diff(&lim.rows(dec.r, l - dec.r).into_owned(), &full.rows(dec.r, l - dec.r).into_owned()) <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projector_is_an_exact_orthogonal_contraction(u in field_2d(16, 2), e in 0usize..3, keep_mean: bool) {
        let op = DifferentialOperator::builtin("div", 1, 2).unwrap();
        let eps = [1.0, 0.1, 0.01][e];
        let p = project_afree(&op, eps, &u, keep_mean).unwrap();
        let pp = project_afree(&op, eps, &p, keep_mean).unwrap();
        let norm = u.l2_norm();
        prop_assert!(pp.sub(&p).unwrap().l2_norm() <= 1e-12 * norm);
        let g = apply_operator(&op, eps, &p).unwrap();
        prop_assert!(h_minus1_norm(&g) <= 1e-10 * norm && g.l2_norm() <= 1e-10 * norm);
        let resid = u.sub(&p).unwrap();
        prop_assert!(resid.dot(&p).abs() <= 1e-10 * norm * norm);
        prop_assert!(p.l2_norm() <= norm * (1.0 + 1e-12));
    }

    #[test]
    fn h_minus1_is_below_l2(u in field_2d(8, 3)) {
        prop_assert!(h_minus1_norm(&u) <= u.l2_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn sharp_average_never_raises_convex_energy(v in field_2d(12, 2), n in prop::sample::select(vec![2usize, 3, 4, 6]),
                                                 xi in vec_in(2, 2.0)) {
        let f = QuadraticDensity::laminate(2, 2, 0, 1.0, 4.0).unwrap();
        let energy = |w: &PeriodicField| {
            let (mut idx, mut x) = ([0usize; 2], [0.0; 2]);
            let mut total = 0.0;
            for i in 0..w.len() {
                w.position(i, &mut idx, &mut x);
                let z = [(n as f64 * x[0]).fract(), (n as f64 * x[1]).fract()];
                let s: Vec<f64> = w.node(i).iter().zip(&xi).map(|(a, b)| a + b).collect();
                total += f.value(&z, &s);
            }
            total / w.len() as f64
        };
        let sharp = sharp_average(&v, n).unwrap();
        prop_assert!(energy(&sharp) <= energy(&v) + 1e-12);
    }

    #[test]
    fn jump_dichotomy(minus in vec_in(2, 2.0), plus in vec_in(2, 2.0), axis in 0usize..2, gap in 0.1..2.0f64) {
        // For div, a jump across x_a = 1/2 is free iff minus - plus lies in
        // ker A(e_a), i.e. the normal component is continuous.
        let op = DifferentialOperator::builtin("div", 1, 2).unwrap();
        let residual = |p: &[f64]| {
            let u = jump_field(&[16, 16], axis, 0.5, &minus, p).unwrap();
            h_minus1_norm(&apply_operator(&op, 1.0, &u).unwrap())
        };
        let mut free = plus.clone();
        free[axis] = minus[axis];
        prop_assert!(residual(&free) <= 1e-10 * (1.0 + linalg::norm(&minus) + linalg::norm(&free)));
        let mut broken = free.clone();
        broken[axis] += gap;
        prop_assert!(residual(&broken) > 0.1 * gap);
    }

    #[test]
    fn csv_floats_round_trip(x in prop::num::f64::NORMAL | prop::num::f64::ZERO) {
        let text = Cell::from(x).render();
        let back: f64 = text.parse().unwrap();
        prop_assert!((back - x).abs() <= 1e-12 * x.abs());
        prop_assert!(!text.contains(','));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn envelope_is_convex_and_dominated(a in vec_in(2, 2.0), b in vec_in(2, 2.0),
                                         pairs in prop::collection::vec((vec_in(2, 4.0), vec_in(2, 4.0)), 200)) {
        prop_assume!(linalg::norm(&[a[0] - b[0], a[1] - b[1]]) > 0.5);
        let t = convexify_pair(&a, &b, 2.0, EnvelopeGrid::default()).unwrap();
        let tol = t.interpolation_tolerance();
        for (x, y) in &pairs {
            let mid: Vec<f64> = x.iter().zip(y).map(|(p, q)| 0.5 * (p + q)).collect();
            prop_assert!(t.value(&mid) <= 0.5 * (t.value(x) + t.value(y)) + tol);
            prop_assert!(t.value(x) <= t.raw(x) + tol);
        }
    }
}

fn small_cell(xi: Vec<f64>) -> CellProblem {
    let f: Arc<dyn EnergyDensity> = Arc::new(QuadraticDensity::laminate(2, 2, 0, 1.0, 4.0).unwrap());
    let params = SolverParams { certify_samples: 0, ..SolverParams::default() };
    CellProblem::new(DifferentialOperator::builtin("div", 1, 2).unwrap(), f, xi, vec![8, 8], CellMode::Full)
        .unwrap()
        .with_params(params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn f_hom_is_convex_and_inherits_bounds(x in vec_in(2, 2.0), y in vec_in(2, 2.0)) {
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let fx = solve_cell(&small_cell(x.clone())).unwrap();
        let fy = solve_cell(&small_cell(y.clone())).unwrap().value;
        let fm = solve_cell(&small_cell(mid)).unwrap().value;
        let tol = 1e-7 * (1.0 + fx.value.abs() + fy.abs());
        prop_assert!(fm <= 0.5 * (fx.value + fy) + tol);
        prop_assert!(fx.history.windows(2).all(|w| w[1] <= w[0] + 1e-14 * w[0].abs()));
        let c = small_cell(x.clone()).density.constants();
        let n2 = x[0] * x[0] + x[1] * x[1];
        prop_assert!(fx.value >= c.c2 * n2 - c.c3 - tol && fx.value <= c.c1 * (1.0 + n2) + tol);
    }
}

#[test]
fn empty_table_is_header_only() {
    let t = Table::new("regime_sweep", &["alpha", "regime", "j", "tau", "violation"]);
    assert_eq!(t.to_csv().unwrap(), b"alpha,regime,j,tau,violation\n");
}
