//! Property tests for the coefficient algebra: conjugation identities for the
//! characteristic polynomial, root placement, and assembly row sums.

use std::sync::Arc;

use degel_core::grid::{make_grid, ScalarField};
use degel_core::operator::{
    assemble, BoundaryData, Coefficient, OperatorCoefficients, RowKind,
};
use proptest::prelude::*;

fn constant_operator(
    a_nn: f64,
    a_cross: f64,
    b_t: f64,
    b_n: f64,
    c: f64,
) -> OperatorCoefficients {
    OperatorCoefficients::new(
        2,
        vec![
            vec![Coefficient::Const(1.0), Coefficient::Const(a_cross)],
            vec![Coefficient::Const(a_cross), Coefficient::Const(a_nn)],
        ],
        vec![Coefficient::Const(b_t), Coefficient::Const(b_n)],
        Coefficient::Const(c),
    )
    .expect("valid shape")
}

fn variable_operator() -> OperatorCoefficients {
    OperatorCoefficients::new(
        2,
        vec![
            vec![
                Coefficient::parse("1 + 0.25*sin(x1)", 2).unwrap(),
                Coefficient::parse("0.1*t", 2).unwrap(),
            ],
            vec![
                Coefficient::parse("0.1*t", 2).unwrap(),
                Coefficient::parse("2 - 0.5*x1^2", 2).unwrap(),
            ],
        ],
        vec![
            Coefficient::Const(0.3),
            Coefficient::parse("0.5 + t", 2).unwrap(),
        ],
        Coefficient::parse("-1 - 0.5*t", 2).unwrap(),
    )
    .expect("valid shape")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Conjugating by t^kappa translates the characteristic polynomial:
    /// Q_kappa(mu + kappa) = Q(mu) pointwise.
    #[test]
    fn conjugation_translates_characteristic_polynomial(
        a_nn in 0.1f64..5.0,
        a_cross in -0.5f64..0.5,
        b_t in -3.0f64..3.0,
        b_n in -5.0f64..5.0,
        c in -5.0f64..-0.1,
        kappa in -3.0f64..3.0,
        mu in -4.0f64..4.0,
        x in -1.0f64..1.0,
        t in 0.0f64..1.0,
    ) {
        let op = constant_operator(a_nn, a_cross, b_t, b_n, c);
        let conj = op.conjugate_by_power(kappa);
        let p = [x, t];
        let lhs = conj.char_poly(&p, mu + kappa).unwrap();
        let rhs = op.char_poly(&p, mu).unwrap();
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
    }

    /// The same identity with coordinate-dependent coefficients exercises the
    /// linear-combination machinery.
    #[test]
    fn conjugation_identity_holds_for_variable_coefficients(
        kappa in -2.0f64..2.0,
        mu in -3.0f64..3.0,
        x in -1.0f64..1.0,
        t in 0.0f64..1.0,
    ) {
        let op = variable_operator();
        let conj = op.conjugate_by_power(kappa);
        let p = [x, t];
        let lhs = conj.char_poly(&p, mu + kappa).unwrap();
        let rhs = op.char_poly(&p, mu).unwrap();
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
    }

    /// The normal-derivative shift translates by exactly one.
    #[test]
    fn derivative_shift_translates_by_one(
        mu in -4.0f64..4.0,
        x in -1.0f64..1.0,
        t in 0.0f64..1.0,
    ) {
        let op = variable_operator();
        let shifted = op.shift_normal_derivative();
        let p = [x, t];
        let lhs = shifted.char_poly(&p, mu).unwrap();
        let rhs = op.char_poly(&p, mu + 1.0).unwrap();
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
    }

    /// Whenever a_nn > 0 > c the roots straddle zero and actually solve
    /// Q(mu) = 0.
    #[test]
    fn characteristic_roots_straddle_zero_and_vanish(
        a_nn in 0.05f64..10.0,
        b_n in -10.0f64..10.0,
        c in -10.0f64..-0.01,
        x in -1.0f64..1.0,
    ) {
        let op = constant_operator(a_nn, 0.0, 0.0, b_n, c);
        let p = [x, 0.0];
        let (lo, hi) = op.indicial_roots(&p).unwrap();
        prop_assert!(lo < 0.0 && 0.0 < hi, "roots {lo}, {hi}");
        // Root residuals scale with the polynomial's coefficients.
        let scale = a_nn * (1.0 + lo.abs().max(hi.abs())).powi(2) + b_n.abs() + c.abs();
        prop_assert!(op.char_poly(&p, lo).unwrap().abs() <= 1e-12 * scale);
        prop_assert!(op.char_poly(&p, hi).unwrap().abs() <= 1e-12 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// For b = 0 and constant c the interior rows of the assembled matrix sum
    /// to c: the second-order stencils annihilate constants.
    #[test]
    fn interior_row_sums_reproduce_c(
        n in 4usize..10,
        m in 4usize..12,
        gamma in 1.0f64..3.0,
        c in -4.0f64..-0.25,
        delta in prop::sample::select(vec![0.0, 0.125]),
    ) {
        let grid = Arc::new(make_grid(2, n, m, gamma).unwrap());
        let op = OperatorCoefficients::isotropic(2, 1.0, vec![0.0, 0.0], c).unwrap();
        let f = ScalarField::zeros(grid.clone());
        let sys = assemble(&op, &grid, delta, &f, &BoundaryData::Zero).unwrap();
        for i in 0..grid.node_count() {
            if sys.row_kinds[i] != RowKind::Interior {
                continue;
            }
            let sum: f64 = sys.matrix.row(i).map(|(_, v)| v).sum();
            // Stencil weights reach ~1/h^2; allow their rounding to
            // accumulate.
            let worst: f64 = sys.matrix.row(i).map(|(_, v)| v.abs()).sum();
            prop_assert!(
                (sum - c).abs() <= 1e-10 * (1.0 + worst),
                "row {i}: sum {sum} vs c {c}"
            );
        }
    }
}
