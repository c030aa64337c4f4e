//! Manufactured solutions with known boundary decay for the model operator
//! `L = t^2 a Lap + t b D_t + c` (constant isotropic `a > 0`, constant normal
//! drift `b`, constant `c`).
//!
//! Choosing `c = -(a s (s - 1) + b s)` makes `s` a root of the characteristic
//! polynomial, so the pure power `t^s` is annihilated and the products below
//! have computable right-hand sides:
//!
//! * pure power: `u = psi(x, t) t^s` with smooth `psi`, giving
//!   `f = t^(s+1) [ (2 a s + b) D_t psi + a t Lap psi ]`;
//! * logarithmic: `u = psi t^s log t`, giving the same `f` multiplied by
//!   `log t` plus the extra term `t^s [ (a (2s - 1) + b) psi + 2 a t D_t psi ]`.
//!
//! Both have exact decay order `s` at the bottom face; the logarithmic family
//! realizes the borderline profiles where plain power decay fails by a log
//! factor. The right-hand sides are exact: `psi` is differentiated
//! symbolically, not numerically.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{self, EvalError, ExprAst, ParseError, VarSym};
use crate::grid::{Grid, GridError, ScalarField};
use crate::operator::{BoundaryData, OperatorCoefficients, OperatorError};

#[derive(Debug, Error)]
pub enum ManufacturedError {
    #[error("decay order must be finite and positive, got {0}")]
    BadDecayOrder(f64),
    #[error("second-order scale must be finite and positive, got {0}")]
    BadSecondOrderScale(f64),
    #[error("normal drift must be finite, got {0}")]
    BadDrift(f64),
    #[error("chosen parameters give c = {0}, which is not negative; pick s between the characteristic roots")]
    NonNegativeC(f64),
    #[error("profile expression: {0}")]
    Profile(#[from] ParseError),
    #[error("profile evaluation at {point:?}: {source}")]
    ProfileEval { point: Vec<f64>, source: EvalError },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Zeroth-order coefficient that makes `s` a characteristic root:
/// `Q(s) = a s (s - 1) + b s + c = 0`.
pub fn root_condition_c(a: f64, b: f64, s: f64) -> f64 {
    -(a * s * (s - 1.0) + b * s)
}

/// Which family the case belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CaseKind {
    /// `u = psi t^s`.
    PurePower,
    /// `u = psi t^s log t`.
    LogPower,
}

/// The exact limit of `D_t u` at the bottom face, when it exists.
#[derive(Debug, Clone)]
pub enum ExactTrace {
    /// The limit is identically this constant (zero whenever `s > 1`).
    Uniform(f64),
    /// The limit is `psi(x, 0)`, evaluated per tangential point.
    Profile(Arc<ExprAst>),
    /// The normal derivative has no finite limit at the bottom face.
    DoesNotExist { reason: String },
}

impl ExactTrace {
    /// Evaluate at a tangential point (the normal coordinate is pinned to 0).
    /// `None` when the trace does not exist.
    pub fn eval(&self, x_tangential: &[f64]) -> Option<Result<f64, EvalError>> {
        match self {
            ExactTrace::Uniform(v) => Some(Ok(*v)),
            ExactTrace::Profile(psi) => {
                let mut p = x_tangential.to_vec();
                p.push(0.0);
                Some(psi.eval(&p))
            }
            ExactTrace::DoesNotExist { .. } => None,
        }
    }
}

/// A fully specified manufactured problem: operator coefficients, the exact
/// solution, and its analytically derived right-hand side.
#[derive(Clone)]
pub struct ManufacturedCase {
    dim: usize,
    kind: CaseKind,
    a: f64,
    b: f64,
    c: f64,
    s: f64,
    psi: Arc<ExprAst>,
    psi_t: Arc<ExprAst>,
    psi_lap: Arc<ExprAst>,
}

/// Serializable description of a case for reports.
#[derive(Debug, Clone, Serialize)]
pub struct CaseSummary {
    pub dim: usize,
    pub kind: CaseKind,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub decay_order: f64,
    pub profile: String,
    /// `Q'(s) = a (2s - 1) + b`; when this vanishes the logarithmic family
    /// loses its distinguishing `t^s` term (double characteristic root).
    pub log_coefficient: f64,
    /// True for logarithmic cases with non-integer decay order, where power
    /// and log-power profiles of different orders coexist.
    pub mixed_orders: bool,
}

impl ManufacturedCase {
    fn build(
        dim: usize,
        kind: CaseKind,
        a: f64,
        b: f64,
        s: f64,
        psi_src: &str,
    ) -> Result<ManufacturedCase, ManufacturedError> {
        if !s.is_finite() || s <= 0.0 {
            return Err(ManufacturedError::BadDecayOrder(s));
        }
        if !a.is_finite() || a <= 0.0 {
            return Err(ManufacturedError::BadSecondOrderScale(a));
        }
        if !b.is_finite() {
            return Err(ManufacturedError::BadDrift(b));
        }
        let c = root_condition_c(a, b, s);
        if c >= 0.0 {
            return Err(ManufacturedError::NonNegativeC(c));
        }
        let psi = Arc::new(expr::parse(psi_src, dim)?);
        let psi_t = Arc::new(psi.derivative(VarSym::T));
        let mut second = vec![psi.derivative(VarSym::X1).derivative(VarSym::X1)];
        if dim == 3 {
            second.push(psi.derivative(VarSym::X2).derivative(VarSym::X2));
        }
        second.push(psi.derivative(VarSym::T).derivative(VarSym::T));
        let psi_lap = Arc::new(ExprAst::sum(second));
        Ok(ManufacturedCase {
            dim,
            kind,
            a,
            b,
            c,
            s,
            psi,
            psi_t,
            psi_lap,
        })
    }

    /// `u = psi t^s`.
    pub fn pure_power(
        dim: usize,
        a: f64,
        b: f64,
        s: f64,
        psi_src: &str,
    ) -> Result<ManufacturedCase, ManufacturedError> {
        ManufacturedCase::build(dim, CaseKind::PurePower, a, b, s, psi_src)
    }

    /// `u = psi t^s log t`. Integer `s` gives the classical borderline
    /// profiles; non-integer `s` is accepted and flagged as mixed-order.
    pub fn log_power(
        dim: usize,
        a: f64,
        b: f64,
        s: f64,
        psi_src: &str,
    ) -> Result<ManufacturedCase, ManufacturedError> {
        ManufacturedCase::build(dim, CaseKind::LogPower, a, b, s, psi_src)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> CaseKind {
        self.kind
    }

    pub fn decay_order(&self) -> f64 {
        self.s
    }

    pub fn zeroth_order(&self) -> f64 {
        self.c
    }

    pub fn profile(&self) -> &Arc<ExprAst> {
        &self.psi
    }

    /// `Q'(s)`, the coefficient in front of the non-log term of the
    /// logarithmic right-hand side.
    pub fn log_coefficient(&self) -> f64 {
        self.a * (2.0 * self.s - 1.0) + self.b
    }

    pub fn summary(&self) -> CaseSummary {
        CaseSummary {
            dim: self.dim,
            kind: self.kind,
            a: self.a,
            b: self.b,
            c: self.c,
            decay_order: self.s,
            profile: self.psi.to_text(),
            log_coefficient: self.log_coefficient(),
            mixed_orders: self.kind == CaseKind::LogPower && self.s.fract() != 0.0,
        }
    }

    /// The operator whose exact solution this case carries.
    pub fn operator(&self) -> OperatorCoefficients {
        let mut drift = vec![0.0; self.dim];
        drift[self.dim - 1] = self.b;
        OperatorCoefficients::isotropic(self.dim, self.a, drift, self.c)
            .expect("validated parameters")
    }

    fn psi_at(&self, point: &[f64]) -> Result<f64, ManufacturedError> {
        self.psi
            .eval(point)
            .map_err(|source| ManufacturedError::ProfileEval {
                point: point.to_vec(),
                source,
            })
    }

    /// Exact solution value.
    pub fn exact_at(&self, point: &[f64]) -> Result<f64, ManufacturedError> {
        let t = point[self.dim - 1];
        let psi = self.psi_at(point)?;
        Ok(match self.kind {
            CaseKind::PurePower => psi * t.powf(self.s),
            // t^s log t -> 0 as t -> 0 for s > 0; the formula itself is
            // 0 * -inf there.
            CaseKind::LogPower => {
                if t == 0.0 {
                    0.0
                } else {
                    psi * t.powf(self.s) * t.ln()
                }
            }
        })
    }

    /// Analytic right-hand side `f = L u`.
    pub fn rhs_at(&self, point: &[f64]) -> Result<f64, ManufacturedError> {
        let t = point[self.dim - 1];
        let psi_t = self
            .psi_t
            .eval(point)
            .map_err(|source| ManufacturedError::ProfileEval {
                point: point.to_vec(),
                source,
            })?;
        let psi_lap = self
            .psi_lap
            .eval(point)
            .map_err(|source| ManufacturedError::ProfileEval {
                point: point.to_vec(),
                source,
            })?;
        let common = (2.0 * self.a * self.s + self.b) * psi_t + self.a * t * psi_lap;
        Ok(match self.kind {
            CaseKind::PurePower => t.powf(self.s + 1.0) * common,
            CaseKind::LogPower => {
                if t == 0.0 {
                    // Every term carries at least t^s with s > 0.
                    0.0
                } else {
                    let psi = self.psi_at(point)?;
                    t.powf(self.s + 1.0) * t.ln() * common
                        + t.powf(self.s)
                            * (self.log_coefficient() * psi + 2.0 * self.a * t * psi_t)
                }
            }
        })
    }

    pub fn exact_field(&self, grid: &Arc<Grid>) -> Result<ScalarField, ManufacturedError> {
        let mut values = Vec::with_capacity(grid.node_count());
        for flat in 0..grid.node_count() {
            values.push(self.exact_at(&grid.point(flat))?);
        }
        Ok(ScalarField::from_values(grid.clone(), values)?)
    }

    pub fn rhs_field(&self, grid: &Arc<Grid>) -> Result<ScalarField, ManufacturedError> {
        let mut values = Vec::with_capacity(grid.node_count());
        for flat in 0..grid.node_count() {
            values.push(self.rhs_at(&grid.point(flat))?);
        }
        Ok(ScalarField::from_values(grid.clone(), values)?)
    }

    /// Dirichlet data on the lateral/top faces, sampled from the exact
    /// solution.
    pub fn boundary_data(&self, grid: &Arc<Grid>) -> Result<BoundaryData, ManufacturedError> {
        Ok(BoundaryData::Field(self.exact_field(grid)?))
    }

    /// The limit of `D_t u` at the bottom face.
    ///
    /// Pure powers: zero for `s > 1`, the profile itself for `s = 1`,
    /// divergent for `s < 1`. Log-powers: zero for `s > 1` and divergent
    /// otherwise (at `s = 1` the derivative grows like `log t`).
    pub fn normal_trace(&self) -> ExactTrace {
        match self.kind {
            CaseKind::PurePower => {
                if self.s > 1.0 {
                    ExactTrace::Uniform(0.0)
                } else if self.s == 1.0 {
                    ExactTrace::Profile(self.psi.clone())
                } else {
                    ExactTrace::DoesNotExist {
                        reason: format!(
                            "normal derivative of t^{} grows like t^{} near the bottom face",
                            self.s,
                            self.s - 1.0
                        ),
                    }
                }
            }
            CaseKind::LogPower => {
                if self.s > 1.0 {
                    ExactTrace::Uniform(0.0)
                } else if self.s == 1.0 {
                    ExactTrace::DoesNotExist {
                        reason: "normal derivative of t log t grows like log t near the bottom face"
                            .to_string(),
                    }
                } else {
                    ExactTrace::DoesNotExist {
                        reason: format!(
                            "normal derivative of t^{} log t is unbounded near the bottom face",
                            self.s
                        ),
                    }
                }
            }
        }
    }
}
