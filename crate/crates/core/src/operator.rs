//! The degenerate operator: coefficients, structural checks, characteristic
//! roots, conjugations, and finite-difference assembly.
//!
//! The operator acting on the half-cube `[-1,1]^{d-1} x (0,1)` is
//!
//! ```text
//! L u = t^2 a_ij D_ij u + t b_i D_i u + c u,
//! ```
//!
//! with `t` the last coordinate. Ellipticity degenerates like `t^2` at the
//! bottom face, so `t = 0` carries no prescribed data: when `c < 0` the
//! equation itself forces `u = f / c` there. The behaviour of solutions near
//! the bottom is governed by the characteristic polynomial
//!
//! ```text
//! Q(mu) = mu (mu - 1) a_nn + mu b_n + c,
//! ```
//!
//! which satisfies `L t^mu = Q(mu) t^mu` for frozen coefficients. Its two
//! real roots straddle zero whenever `a_nn > 0 > c`; the positive root is the
//! largest decay order the boundary can support.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::expr::{self, EvalError, ExprAst, ParseError};
use crate::grid::{axis_stencils, fd_gradient, fd_hessian, Grid, GridError, GridSpec, ScalarField};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("{what} must have {expected} entries, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("coefficient {what} is written for dimension {found}, operator has dimension {expected}")]
    CoefficientDim {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("coefficient {what} failed to evaluate at {point:?}: {source}")]
    CoefficientEval {
        what: String,
        point: Vec<f64>,
        source: EvalError,
    },
    #[error("coefficient parse failed: {0}")]
    Parse(#[from] ParseError),
    #[error("second-order coefficients are not uniformly elliptic: eigenvalue {lambda:.6e} at {point:?}")]
    NotElliptic { lambda: f64, point: Vec<f64> },
    #[error("zeroth-order coefficient is not negative: sup c = {sup_c:.6e} at {point:?}")]
    NotNegative { sup_c: f64, point: Vec<f64> },
    #[error("characteristic roots need a bottom-face point, got t = {t:.6e}")]
    BoundaryPointRequired { t: f64 },
    #[error("characteristic polynomial is degenerate at {point:?}: {detail}")]
    DegenerateCharacteristic { detail: String, point: Vec<f64> },
    #[error("decay exponent must be finite and nonnegative, got {0}")]
    BadExponent(f64),
    #[error("regularization strength must be finite and nonnegative, got {0}")]
    BadDelta(f64),
    #[error("zeroth-order coefficient vanishes at bottom-face point {point:?}; the boundary value f/c is undefined")]
    ZeroBottomCoefficient { point: Vec<f64> },
    #[error(transparent)]
    Grid(#[from] GridError),
}

// ---------------------------------------------------------------------------
// Coefficients
// ---------------------------------------------------------------------------

/// One scalar coefficient field: a constant, a parsed expression of the
/// coordinates, or a linear combination of either (produced by the
/// conjugation helpers, which must mix e.g. `b_n` with `a_nn`).
#[derive(Debug, Clone)]
pub enum Coefficient {
    Const(f64),
    Expr(Arc<ExprAst>),
    LinComb(Vec<(f64, Coefficient)>),
}

impl Coefficient {
    pub fn zero() -> Coefficient {
        Coefficient::Const(0.0)
    }

    /// Parse either a numeric literal or a coordinate expression.
    pub fn parse(src: &str, dim: usize) -> Result<Coefficient, ParseError> {
        let trimmed = src.trim();
        if let Ok(v) = trimmed.parse::<f64>() {
            if v.is_finite() {
                return Ok(Coefficient::Const(v));
            }
        }
        Ok(Coefficient::Expr(Arc::new(expr::parse(trimmed, dim)?)))
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        match self {
            Coefficient::Const(v) => Ok(*v),
            Coefficient::Expr(ast) => ast.eval(point),
            Coefficient::LinComb(terms) => {
                let mut acc = 0.0;
                for (w, c) in terms {
                    acc += w * c.eval(point)?;
                }
                Ok(acc)
            }
        }
    }

    /// Dimension the coefficient is written for, if it mentions coordinates.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Coefficient::Const(_) => None,
            Coefficient::Expr(ast) => Some(ast.dim()),
            Coefficient::LinComb(terms) => terms.iter().find_map(|(_, c)| c.dim()),
        }
    }

    pub fn is_const_zero(&self) -> bool {
        matches!(self, Coefficient::Const(v) if *v == 0.0)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Coefficient::Const(v) => Some(*v),
            _ => None,
        }
    }

    /// Weighted sum with constant folding; collapses to `Const` when every
    /// term is constant and drops zero-weight and zero-value terms.
    pub fn lincomb(terms: Vec<(f64, Coefficient)>) -> Coefficient {
        let mut const_part = 0.0;
        let mut rest: Vec<(f64, Coefficient)> = Vec::new();
        for (w, c) in terms {
            if w == 0.0 || c.is_const_zero() {
                continue;
            }
            match c {
                Coefficient::Const(v) => const_part += w * v,
                Coefficient::LinComb(inner) => {
                    for (wi, ci) in inner {
                        match ci.as_const() {
                            Some(v) => const_part += w * wi * v,
                            None => rest.push((w * wi, ci)),
                        }
                    }
                }
                other => rest.push((w, other)),
            }
        }
        if rest.is_empty() {
            return Coefficient::Const(const_part);
        }
        if const_part == 0.0 && rest.len() == 1 && rest[0].0 == 1.0 {
            return rest.swap_remove(0).1;
        }
        if const_part != 0.0 {
            rest.push((1.0, Coefficient::Const(const_part)));
        }
        Coefficient::LinComb(rest)
    }

    /// Structural identity: equal constants, the same shared expression, or
    /// term-by-term identical combinations.
    pub fn same_structure(&self, other: &Coefficient) -> bool {
        match (self, other) {
            (Coefficient::Const(x), Coefficient::Const(y)) => x.to_bits() == y.to_bits(),
            (Coefficient::Expr(x), Coefficient::Expr(y)) => {
                Arc::ptr_eq(x, y) || x.structure_eq(y)
            }
            (Coefficient::LinComb(x), Coefficient::LinComb(y)) => {
                x.len() == y.len()
                    && x.iter().zip(y).all(|((wx, cx), (wy, cy))| {
                        wx.to_bits() == wy.to_bits() && cx.same_structure(cy)
                    })
            }
            _ => false,
        }
    }

    /// Mean of two coefficients, used to symmetrize the second-order matrix.
    fn average(x: &Coefficient, y: &Coefficient) -> Coefficient {
        if x.same_structure(y) {
            return x.clone();
        }
        match (x.as_const(), y.as_const()) {
            (Some(p), Some(q)) => Coefficient::Const(0.5 * (p + q)),
            _ => Coefficient::lincomb(vec![(0.5, x.clone()), (0.5, y.clone())]),
        }
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Const(v) => write!(f, "{v}"),
            Coefficient::Expr(ast) => write!(f, "{}", ast.to_text()),
            Coefficient::LinComb(terms) => {
                for (i, (w, c)) in terms.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    if *w == 1.0 {
                        write!(f, "({c})")?;
                    } else {
                        write!(f, "{w}*({c})")?;
                    }
                }
                Ok(())
            }
        }
    }
}

impl Serialize for Coefficient {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

// ---------------------------------------------------------------------------
// Operator
// ---------------------------------------------------------------------------

/// Certified pointwise bounds for the coefficients over a sampling grid:
/// eigenvalue range of the (symmetrized) second-order matrix and the negativity
/// margin of the zeroth-order term.
#[derive(Debug, Clone, Serialize)]
pub struct EllipticityCertificate {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Negativity margin of the zeroth-order coefficient: `-sup c > 0`.
    pub c0: f64,
    pub lambda_argmin: Vec<f64>,
    pub c_argmax: Vec<f64>,
    pub nodes_sampled: usize,
    pub grid: GridSpec,
}

/// Coefficients of the degenerate operator. The second-order matrix is
/// symmetrized on construction; certification against a grid is optional and
/// cached.
#[derive(Debug, Clone)]
pub struct OperatorCoefficients {
    dim: usize,
    a: Vec<Vec<Coefficient>>,
    b: Vec<Coefficient>,
    c: Coefficient,
    certificate: Option<EllipticityCertificate>,
}

impl OperatorCoefficients {
    pub fn new(
        dim: usize,
        a: Vec<Vec<Coefficient>>,
        b: Vec<Coefficient>,
        c: Coefficient,
    ) -> Result<OperatorCoefficients, OperatorError> {
        if dim != 2 && dim != 3 {
            return Err(OperatorError::BadDimension(dim));
        }
        if a.len() != dim {
            return Err(OperatorError::ShapeMismatch {
                what: "second-order coefficient matrix",
                expected: dim,
                got: a.len(),
            });
        }
        for row in &a {
            if row.len() != dim {
                return Err(OperatorError::ShapeMismatch {
                    what: "second-order coefficient row",
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        if b.len() != dim {
            return Err(OperatorError::ShapeMismatch {
                what: "first-order coefficient vector",
                expected: dim,
                got: b.len(),
            });
        }
        let check_dim = |what: String, c: &Coefficient| -> Result<(), OperatorError> {
            match c.dim() {
                Some(d) if d != dim => Err(OperatorError::CoefficientDim {
                    what,
                    expected: dim,
                    found: d,
                }),
                _ => Ok(()),
            }
        };
        for (i, row) in a.iter().enumerate() {
            for (j, coef) in row.iter().enumerate() {
                check_dim(format!("a[{i}][{j}]"), coef)?;
            }
        }
        for (i, coef) in b.iter().enumerate() {
            check_dim(format!("b[{i}]"), coef)?;
        }
        check_dim("c".to_string(), &c)?;
        // Only the symmetric part of `a` enters D_ij u, so store it directly.
        let mut a_sym: Vec<Vec<Coefficient>> = vec![vec![Coefficient::zero(); dim]; dim];
        for i in 0..dim {
            for j in i..dim {
                let sym = if i == j {
                    a[i][j].clone()
                } else {
                    Coefficient::average(&a[i][j], &a[j][i])
                };
                a_sym[i][j] = sym.clone();
                a_sym[j][i] = sym;
            }
        }
        Ok(OperatorCoefficients {
            dim,
            a: a_sym,
            b,
            c,
            certificate: None,
        })
    }

    /// Isotropic constant-coefficient operator `t^2 a Lap + t b.D + c`.
    pub fn isotropic(
        dim: usize,
        a_scalar: f64,
        b: Vec<f64>,
        c: f64,
    ) -> Result<OperatorCoefficients, OperatorError> {
        let a = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| Coefficient::Const(if i == j { a_scalar } else { 0.0 }))
                    .collect()
            })
            .collect();
        let b = b.into_iter().map(Coefficient::Const).collect();
        OperatorCoefficients::new(dim, a, b, Coefficient::Const(c))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self, i: usize, j: usize) -> &Coefficient {
        &self.a[i][j]
    }

    pub fn b(&self, i: usize) -> &Coefficient {
        &self.b[i]
    }

    pub fn c(&self) -> &Coefficient {
        &self.c
    }

    pub fn certificate(&self) -> Option<&EllipticityCertificate> {
        self.certificate.as_ref()
    }

    fn eval_coef(&self, what: &str, c: &Coefficient, point: &[f64]) -> Result<f64, OperatorError> {
        c.eval(point).map_err(|source| OperatorError::CoefficientEval {
            what: what.to_string(),
            point: point.to_vec(),
            source,
        })
    }

    pub fn a_at(&self, point: &[f64]) -> Result<Vec<Vec<f64>>, OperatorError> {
        let mut m = vec![vec![0.0; self.dim]; self.dim];
        for i in 0..self.dim {
            for j in i..self.dim {
                let v = self.eval_coef(&format!("a[{i}][{j}]"), &self.a[i][j], point)?;
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        Ok(m)
    }

    pub fn b_at(&self, point: &[f64]) -> Result<Vec<f64>, OperatorError> {
        (0..self.dim)
            .map(|i| self.eval_coef(&format!("b[{i}]"), &self.b[i], point))
            .collect()
    }

    pub fn c_at(&self, point: &[f64]) -> Result<f64, OperatorError> {
        self.eval_coef("c", &self.c, point)
    }

    /// Characteristic polynomial `Q(mu) = mu (mu - 1) a_nn + mu b_n + c`
    /// with coefficients frozen at `point`.
    pub fn char_poly(&self, point: &[f64], mu: f64) -> Result<f64, OperatorError> {
        let n = self.dim - 1;
        let a_nn = self.eval_coef("a_nn", &self.a[n][n], point)?;
        let b_n = self.eval_coef("b_n", &self.b[n], point)?;
        let c = self.c_at(point)?;
        Ok(mu * (mu - 1.0) * a_nn + mu * b_n + c)
    }

    /// Roots of the characteristic polynomial at a bottom-face point,
    /// returned as `(mu_minus, mu_plus)` with `mu_minus < 0 < mu_plus`.
    /// Requires `a_nn > 0` and `c < 0` there, which makes the root product
    /// `c / a_nn` negative.
    pub fn indicial_roots(&self, boundary_point: &[f64]) -> Result<(f64, f64), OperatorError> {
        let t = boundary_point[self.dim - 1];
        if t.abs() > 1e-12 {
            return Err(OperatorError::BoundaryPointRequired { t });
        }
        let n = self.dim - 1;
        let a_nn = self.eval_coef("a_nn", &self.a[n][n], boundary_point)?;
        let b_n = self.eval_coef("b_n", &self.b[n], boundary_point)?;
        let c = self.c_at(boundary_point)?;
        if a_nn <= 0.0 {
            return Err(OperatorError::DegenerateCharacteristic {
                detail: format!("normal second-order coefficient a_nn = {a_nn:.6e} must be positive"),
                point: boundary_point.to_vec(),
            });
        }
        if c >= 0.0 {
            return Err(OperatorError::DegenerateCharacteristic {
                detail: format!("zeroth-order coefficient c = {c:.6e} must be negative"),
                point: boundary_point.to_vec(),
            });
        }
        // Q(mu) = a_nn mu^2 + (b_n - a_nn) mu + c; the discriminant is
        // positive because -4 a_nn c > 0. Use the cancellation-free form.
        let quad_b = b_n - a_nn;
        let disc = quad_b * quad_b - 4.0 * a_nn * c;
        let sq = disc.sqrt();
        let q = -0.5 * (quad_b + sq.copysign(if quad_b == 0.0 { 1.0 } else { quad_b }));
        let r1 = q / a_nn;
        let r2 = c / q;
        Ok((r1.min(r2), r1.max(r2)))
    }

    /// Scan the grid and certify uniform ellipticity of the symmetrized
    /// second-order matrix and strict negativity of the zeroth-order term.
    pub fn certify(&mut self, grid: &Grid) -> Result<EllipticityCertificate, OperatorError> {
        let mut lambda_min = f64::INFINITY;
        let mut lambda_max = f64::NEG_INFINITY;
        let mut lambda_argmin = Vec::new();
        let mut sup_c = f64::NEG_INFINITY;
        let mut c_argmax = Vec::new();
        for flat in 0..grid.node_count() {
            let p = grid.point(flat);
            let m = self.a_at(&p)?;
            let (lo, hi) = sym_eig_range(&m);
            debug_assert!(
                {
                    let (glo, ghi) = gershgorin_range(&m);
                    lo >= glo - 1e-9 * (1.0 + ghi.abs()) && hi <= ghi + 1e-9 * (1.0 + ghi.abs())
                },
                "eigenvalue range escapes the Gershgorin envelope"
            );
            if lo < lambda_min {
                lambda_min = lo;
                lambda_argmin = p.clone();
            }
            lambda_max = lambda_max.max(hi);
            let cv = self.c_at(&p)?;
            if cv > sup_c {
                sup_c = cv;
                c_argmax = p;
            }
        }
        if lambda_min <= 0.0 {
            return Err(OperatorError::NotElliptic {
                lambda: lambda_min,
                point: lambda_argmin,
            });
        }
        if sup_c >= 0.0 {
            return Err(OperatorError::NotNegative {
                sup_c,
                point: c_argmax,
            });
        }
        let cert = EllipticityCertificate {
            lambda_min,
            lambda_max,
            c0: -sup_c,
            lambda_argmin,
            c_argmax,
            nodes_sampled: grid.node_count(),
            grid: grid.spec(),
        };
        self.certificate = Some(cert.clone());
        Ok(cert)
    }

    /// Coefficients of the operator satisfied by `w = t^kappa u`: if
    /// `L u = f` then `L_kappa w = t^kappa f`. The second-order matrix is
    /// unchanged, the drift gains `-2 kappa a_in`, and the zeroth-order term
    /// becomes `Q(-kappa) = kappa (kappa + 1) a_nn - kappa b_n + c`. The new
    /// characteristic polynomial satisfies `Q_kappa(mu + kappa) = Q(mu)`, so
    /// every decay order shifts up by `kappa`.
    pub fn conjugate_by_power(&self, kappa: f64) -> OperatorCoefficients {
        if kappa == 0.0 {
            return self.clone();
        }
        let n = self.dim - 1;
        let b = (0..self.dim)
            .map(|i| {
                Coefficient::lincomb(vec![
                    (1.0, self.b[i].clone()),
                    (-2.0 * kappa, self.a[i][n].clone()),
                ])
            })
            .collect();
        let c = Coefficient::lincomb(vec![
            (1.0, self.c.clone()),
            (-kappa, self.b[n].clone()),
            (kappa * (kappa + 1.0), self.a[n][n].clone()),
        ]);
        OperatorCoefficients {
            dim: self.dim,
            a: self.a.clone(),
            b,
            c,
            certificate: None,
        }
    }

    /// Coefficients governing the scaled normal derivative near the bottom
    /// face: the drift gains `+2 a_in` and the zeroth-order term gains `b_n`,
    /// shifting the characteristic polynomial by one, `Q_1(mu) = Q(mu + 1)`.
    /// Differentiating once in `t` therefore lowers every decay order by one.
    pub fn shift_normal_derivative(&self) -> OperatorCoefficients {
        let n = self.dim - 1;
        let b = (0..self.dim)
            .map(|i| {
                Coefficient::lincomb(vec![
                    (1.0, self.b[i].clone()),
                    (2.0, self.a[i][n].clone()),
                ])
            })
            .collect();
        let c = Coefficient::lincomb(vec![(1.0, self.c.clone()), (1.0, self.b[n].clone())]);
        OperatorCoefficients {
            dim: self.dim,
            a: self.a.clone(),
            b,
            c,
            certificate: None,
        }
    }
}

impl Serialize for OperatorCoefficients {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("OperatorCoefficients", 5)?;
        st.serialize_field("dim", &self.dim)?;
        st.serialize_field("a", &self.a)?;
        st.serialize_field("b", &self.b)?;
        st.serialize_field("c", &self.c)?;
        st.serialize_field("certificate", &self.certificate)?;
        st.end()
    }
}

/// Exact eigenvalue range of a symmetric 2x2 or 3x3 matrix.
fn sym_eig_range(m: &[Vec<f64>]) -> (f64, f64) {
    match m.len() {
        2 => {
            let mean = 0.5 * (m[0][0] + m[1][1]);
            let rad = (0.25 * (m[0][0] - m[1][1]).powi(2) + m[0][1] * m[0][1]).sqrt();
            (mean - rad, mean + rad)
        }
        3 => {
            let off = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
            if off == 0.0 {
                let lo = m[0][0].min(m[1][1]).min(m[2][2]);
                let hi = m[0][0].max(m[1][1]).max(m[2][2]);
                return (lo, hi);
            }
            let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
            let p2 = (m[0][0] - q).powi(2)
                + (m[1][1] - q).powi(2)
                + (m[2][2] - q).powi(2)
                + 2.0 * off;
            let p = (p2 / 6.0).sqrt();
            let bm: Vec<Vec<f64>> = (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| (m[i][j] - if i == j { q } else { 0.0 }) / p)
                        .collect()
                })
                .collect();
            let det_b = bm[0][0] * (bm[1][1] * bm[2][2] - bm[1][2] * bm[2][1])
                - bm[0][1] * (bm[1][0] * bm[2][2] - bm[1][2] * bm[2][0])
                + bm[0][2] * (bm[1][0] * bm[2][1] - bm[1][1] * bm[2][0]);
            let r = (det_b / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            // phi lies in [0, pi/3]: cos(phi) gives the largest eigenvalue,
            // cos(phi + 2pi/3) the smallest.
            let hi = q + 2.0 * p * phi.cos();
            let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
            (lo, hi)
        }
        _ => unreachable!("dimension is 2 or 3"),
    }
}

/// Gershgorin disc envelope, used as an independent cross-check.
fn gershgorin_range(m: &[Vec<f64>]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m.len() {
        let radius: f64 = (0..m.len())
            .filter(|&j| j != i)
            .map(|j| m[i][j].abs())
            .sum();
        lo = lo.min(m[i][i] - radius);
        hi = hi.max(m[i][i] + radius);
    }
    (lo, hi)
}

// ---------------------------------------------------------------------------
// Structural verification report
// ---------------------------------------------------------------------------

/// Characteristic data at one bottom-face node.
#[derive(Debug, Clone, Serialize)]
pub struct BottomSample {
    pub point: Vec<f64>,
    pub q_at_exponent: f64,
    /// `(mu_minus, mu_plus)`; absent where the polynomial degenerates.
    pub roots: Option<(f64, f64)>,
}

/// Range of the characteristic roots over the bottom face.
#[derive(Debug, Clone, Serialize)]
pub struct RootRange {
    pub mu_minus_min: f64,
    pub mu_minus_max: f64,
    pub mu_plus_min: f64,
    pub mu_plus_max: f64,
}

/// Outcome of checking the structural conditions at a target decay exponent:
/// strict negativity of `c` and of `Q(exponent)` over the whole grid, plus
/// per-node characteristic data on the bottom face.
#[derive(Debug, Clone, Serialize)]
pub struct CharacteristicReport {
    pub exponent: f64,
    /// `-sup c` over the grid; positive iff the zeroth-order condition holds.
    pub margin_c0: f64,
    /// `-sup Q(exponent)` over the grid; positive iff the exponent is
    /// admissible everywhere.
    pub margin_at_exponent: f64,
    pub c_argmax: Vec<f64>,
    pub q_argmax: Vec<f64>,
    pub root_range: Option<RootRange>,
    pub bottom_samples: Vec<BottomSample>,
    pub passed: bool,
}

/// Check `c <= -c0 < 0` and `Q(exponent) <= -c_exp < 0` over the grid and
/// collect characteristic roots along the bottom face. A report with
/// `passed == false` is an answer, not an error.
pub fn verify_conditions(
    coeffs: &OperatorCoefficients,
    grid: &Grid,
    exponent: f64,
) -> Result<CharacteristicReport, OperatorError> {
    if !exponent.is_finite() || exponent < 0.0 {
        return Err(OperatorError::BadExponent(exponent));
    }
    let mut sup_c = f64::NEG_INFINITY;
    let mut c_argmax = Vec::new();
    let mut sup_q = f64::NEG_INFINITY;
    let mut q_argmax = Vec::new();
    let mut bottom_samples = Vec::new();
    let mut range: Option<RootRange> = Some(RootRange {
        mu_minus_min: f64::INFINITY,
        mu_minus_max: f64::NEG_INFINITY,
        mu_plus_min: f64::INFINITY,
        mu_plus_max: f64::NEG_INFINITY,
    });
    for flat in 0..grid.node_count() {
        let p = grid.point(flat);
        let cv = coeffs.c_at(&p)?;
        if cv > sup_c {
            sup_c = cv;
            c_argmax = p.clone();
        }
        let qv = coeffs.char_poly(&p, exponent)?;
        if qv > sup_q {
            sup_q = qv;
            q_argmax = p.clone();
        }
        if grid.on_bottom(flat) {
            let roots = match coeffs.indicial_roots(&p) {
                Ok(r) => Some(r),
                Err(OperatorError::DegenerateCharacteristic { .. }) => None,
                Err(e) => return Err(e),
            };
            if let Some((lo, hi)) = roots {
                if let Some(r) = range.as_mut() {
                    r.mu_minus_min = r.mu_minus_min.min(lo);
                    r.mu_minus_max = r.mu_minus_max.max(lo);
                    r.mu_plus_min = r.mu_plus_min.min(hi);
                    r.mu_plus_max = r.mu_plus_max.max(hi);
                }
            } else {
                range = None;
            }
            bottom_samples.push(BottomSample {
                point: p,
                q_at_exponent: qv,
                roots,
            });
        }
    }
    let margin_c0 = -sup_c;
    let margin_at_exponent = -sup_q;
    Ok(CharacteristicReport {
        exponent,
        margin_c0,
        margin_at_exponent,
        c_argmax,
        q_argmax,
        root_range: range,
        bottom_samples,
        passed: margin_c0 > 0.0 && margin_at_exponent > 0.0,
    })
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// Dirichlet data on the lateral and top faces. The bottom face never takes
/// prescribed data; its rows come from the equation itself.
#[derive(Debug, Clone)]
pub enum BoundaryData {
    Zero,
    /// Full nodal field; only lateral/top entries are consulted.
    Field(ScalarField),
}

impl BoundaryData {
    pub fn from_fn(
        grid: Arc<Grid>,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<BoundaryData, GridError> {
        Ok(BoundaryData::Field(ScalarField::from_fn(grid, f)?))
    }

    fn value(&self, flat: usize) -> f64 {
        match self {
            BoundaryData::Zero => 0.0,
            BoundaryData::Field(field) => field.get(flat),
        }
    }

    fn check_layout(&self, grid: &Grid) -> Result<(), OperatorError> {
        match self {
            BoundaryData::Zero => Ok(()),
            BoundaryData::Field(field) => {
                if field.grid().same_layout(grid) {
                    Ok(())
                } else {
                    Err(OperatorError::Grid(GridError::LayoutMismatch))
                }
            }
        }
    }
}

/// How each matrix row was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowKind {
    /// Finite-difference discretization of the (possibly regularized)
    /// operator.
    Interior,
    /// Bottom face, no regularization: the algebraic equation `c u = f`.
    BottomEquation,
    /// Bottom face under regularization: Dirichlet row `u = f / c`.
    BottomDirichlet,
    /// Lateral or top face: Dirichlet row from the prescribed data.
    LateralTop,
}

/// Assembled linear system together with its row classification.
pub struct DiscreteSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub row_kinds: Vec<RowKind>,
    pub grid: Arc<Grid>,
    pub delta: f64,
}

impl DiscreteSystem {
    /// Coordinate-format dump (`row col value` per line) for external
    /// inspection.
    pub fn to_coo_text(&self) -> String {
        self.matrix.to_coo_text()
    }
}

/// Discretize `L_delta u = t^2 a_ij D_ij u + delta Lap u + t b_i D_i u + c u`
/// on the grid with second-order stencils. Interior rows always have both
/// neighbours along every axis because all faces are handled separately:
/// lateral/top rows are Dirichlet identities with `boundary` data, and bottom
/// rows encode `c u = f` directly (`delta = 0`) or the Dirichlet value
/// `u = f / c` (`delta > 0`).
pub fn assemble(
    coeffs: &OperatorCoefficients,
    grid: &Arc<Grid>,
    delta: f64,
    f: &ScalarField,
    boundary: &BoundaryData,
) -> Result<DiscreteSystem, OperatorError> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(OperatorError::BadDelta(delta));
    }
    if !f.grid().same_layout(grid) {
        return Err(OperatorError::Grid(GridError::LayoutMismatch));
    }
    boundary.check_layout(grid)?;
    let dim = coeffs.dim();
    if dim != grid.dim() {
        return Err(OperatorError::BadDimension(grid.dim()));
    }
    let d1: Vec<Vec<crate::grid::AxisStencil>> = (0..dim)
        .map(|ax| axis_stencils(grid.axis_coords(ax), 1))
        .collect();
    let d2: Vec<Vec<crate::grid::AxisStencil>> = (0..dim)
        .map(|ax| axis_stencils(grid.axis_coords(ax), 2))
        .collect();

    let built: Result<Vec<(Vec<(usize, f64)>, f64, RowKind)>, OperatorError> = (0..grid
        .node_count())
        .into_par_iter()
        .map(|flat| {
            let mi = grid.multi_index(flat);
            let p = grid.point(flat);
            if mi[dim - 1] == 0 {
                let cv = coeffs.c_at(&p)?;
                if cv == 0.0 {
                    return Err(OperatorError::ZeroBottomCoefficient { point: p });
                }
                return if delta == 0.0 {
                    Ok((vec![(flat, cv)], f.get(flat), RowKind::BottomEquation))
                } else {
                    Ok((vec![(flat, 1.0)], f.get(flat) / cv, RowKind::BottomDirichlet))
                };
            }
            if grid.on_lateral_or_top(flat) {
                return Ok((vec![(flat, 1.0)], boundary.value(flat), RowKind::LateralTop));
            }
            let t = p[dim - 1];
            let t2 = t * t;
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(16 * dim);
            for axis in 0..dim {
                let pos = mi[axis];
                let stride = grid.stride(axis) as isize;
                let a_ii = coeffs.eval_coef(&format!("a[{axis}][{axis}]"), &coeffs.a[axis][axis], &p)?;
                let coef2 = t2 * a_ii + delta;
                if coef2 != 0.0 {
                    let st = &d2[axis][pos];
                    for (off, w) in st.offsets.iter().zip(&st.weights) {
                        entries.push(((flat as isize + off * stride) as usize, coef2 * w));
                    }
                }
                let b_i = coeffs.eval_coef(&format!("b[{axis}]"), &coeffs.b[axis], &p)?;
                let coef1 = t * b_i;
                if coef1 != 0.0 {
                    let st = &d1[axis][pos];
                    for (off, w) in st.offsets.iter().zip(&st.weights) {
                        entries.push(((flat as isize + off * stride) as usize, coef1 * w));
                    }
                }
            }
            for i in 0..dim {
                for j in i + 1..dim {
                    let a_ij = coeffs.eval_coef(&format!("a[{i}][{j}]"), &coeffs.a[i][j], &p)?;
                    if a_ij == 0.0 {
                        continue;
                    }
                    let coef = 2.0 * t2 * a_ij;
                    let si = grid.stride(i) as isize;
                    let sj = grid.stride(j) as isize;
                    let sti = &d1[i][mi[i]];
                    let stj = &d1[j][mi[j]];
                    for (oi, wi) in sti.offsets.iter().zip(&sti.weights) {
                        for (oj, wj) in stj.offsets.iter().zip(&stj.weights) {
                            let col = (flat as isize + oi * si + oj * sj) as usize;
                            entries.push((col, coef * wi * wj));
                        }
                    }
                }
            }
            let cv = coeffs.c_at(&p)?;
            entries.push((flat, cv));
            Ok((entries, f.get(flat), RowKind::Interior))
        })
        .collect();
    let built = built?;
    let mut rows = Vec::with_capacity(built.len());
    let mut rhs = Vec::with_capacity(built.len());
    let mut row_kinds = Vec::with_capacity(built.len());
    for (entries, r, kind) in built {
        rows.push(entries);
        rhs.push(r);
        row_kinds.push(kind);
    }
    Ok(DiscreteSystem {
        matrix: CsrMatrix::from_rows(rows),
        rhs,
        row_kinds,
        grid: grid.clone(),
        delta,
    })
}

/// Apply `L_delta` to a nodal field by finite-difference calculus
/// (gradient/Hessian passes), independent of the assembled matrix. Interior
/// nodes use centered stencils; faces use the one-sided stencils of the
/// calculus routines, so face values are only indicative.
pub fn apply_operator(
    coeffs: &OperatorCoefficients,
    field: &ScalarField,
    delta: f64,
) -> Result<ScalarField, OperatorError> {
    let grid = field.grid().clone();
    let dim = grid.dim();
    if coeffs.dim() != dim {
        return Err(OperatorError::BadDimension(dim));
    }
    let grad = fd_gradient(field);
    let hess = fd_hessian(field);
    let mut out = vec![0.0; grid.node_count()];
    for (flat, slot) in out.iter_mut().enumerate() {
        let p = grid.point(flat);
        let t = p[dim - 1];
        let t2 = t * t;
        let a = coeffs.a_at(&p)?;
        let b = coeffs.b_at(&p)?;
        let c = coeffs.c_at(&p)?;
        let mut acc = c * field.get(flat);
        for i in 0..dim {
            acc += (t2 * a[i][i] + delta) * hess[i][i].get(flat);
            acc += t * b[i] * grad[i].get(flat);
            for j in i + 1..dim {
                acc += 2.0 * t2 * a[i][j] * hess[i][j].get(flat);
            }
        }
        *slot = acc;
    }
    Ok(ScalarField::from_values(grid, out)?)
}
