//! Linear solves for the degenerate problem: the direct discretization
//! (`delta = 0`, bottom rows algebraic) and vanishing-viscosity continuation
//! (`delta_k = delta_0 r^k` with warm starts, bottom rows Dirichlet).
//!
//! Both modes report per-step diagnostics and check the maximum-principle
//! bound `sup |u| <= sup |f| / c0 + sup |g|`, which the continuous problem
//! satisfies whenever `c <= -c0 < 0`.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{Grid, GridError, ScalarField};
use crate::operator::{
    apply_operator, assemble, BoundaryData, OperatorCoefficients, OperatorError, RowKind,
};
use crate::sparse::{self, KrylovOptions, LinSolveError, LinearSolveStats};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Linear(#[from] LinSolveError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Continuation schedule and linear-solver knobs.
#[derive(Debug, Clone, Serialize)]
pub struct SolveConfig {
    /// First regularization strength.
    pub delta0: f64,
    /// Geometric decay factor of the schedule, in (0, 1).
    pub ratio: f64,
    /// Maximum number of continuation steps.
    pub max_steps: usize,
    /// Stop once successive iterates differ by at most this much in sup norm.
    pub stop_tol: f64,
    /// Relative tolerance of the inner Krylov solver.
    pub linear_rtol: f64,
    /// Iteration cap of the inner Krylov solver.
    pub linear_max_iterations: usize,
    /// Seeds the Krylov shadow residual; the solution is seed-independent to
    /// solver tolerance.
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            delta0: 1.0,
            ratio: 0.5,
            max_steps: 25,
            stop_tol: 1e-8,
            linear_rtol: 1e-12,
            linear_max_iterations: 4000,
            seed: 0,
        }
    }
}

impl SolveConfig {
    fn validate(&self) -> Result<(), SolveError> {
        if !self.delta0.is_finite() || self.delta0 <= 0.0 {
            return Err(SolveError::BadConfig(format!(
                "delta0 must be positive, got {}",
                self.delta0
            )));
        }
        if !self.ratio.is_finite() || self.ratio <= 0.0 || self.ratio >= 1.0 {
            return Err(SolveError::BadConfig(format!(
                "ratio must lie in (0, 1), got {}",
                self.ratio
            )));
        }
        if self.max_steps == 0 {
            return Err(SolveError::BadConfig("max_steps must be positive".into()));
        }
        if !self.stop_tol.is_finite() || self.stop_tol <= 0.0 {
            return Err(SolveError::BadConfig(format!(
                "stop_tol must be positive, got {}",
                self.stop_tol
            )));
        }
        Ok(())
    }

    fn krylov(&self) -> KrylovOptions {
        KrylovOptions {
            rtol: self.linear_rtol,
            atol: 1e-300,
            max_iterations: self.linear_max_iterations,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveMode {
    Direct,
    Continuation,
}

/// Diagnostics for one linear solve of the schedule.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub delta: f64,
    /// Sup norm of the iterate.
    pub sup_norm: f64,
    /// Sup norm of the algebraic residual `b - A u`.
    pub linear_residual_sup: f64,
    /// Sup norm over interior nodes of `L_delta u - f` recomputed by
    /// finite-difference calculus, independent of the assembled matrix.
    pub interior_residual_sup: f64,
    /// Sup distance to the previous iterate; `None` on the first step.
    pub successive_diff: Option<f64>,
    /// Sup distance to a reference solution, when one is being tracked.
    pub gap_to_reference: Option<f64>,
    pub linear_stats: LinearSolveStats,
}

/// Maximum-principle check `sup |u| <= sup |f| / c0 + sup |boundary|`.
#[derive(Debug, Clone, Serialize)]
pub struct SupBoundCheck {
    pub sup_u: f64,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub mode: SolveMode,
    pub steps: Vec<StepRecord>,
    /// Regularization strength of the returned field (0 for direct solves).
    pub final_delta: f64,
    pub interior_residual_sup: f64,
    pub sup_bound: SupBoundCheck,
    /// Whether the continuation stopped by the successive-difference
    /// criterion (as opposed to exhausting the schedule).
    pub converged: bool,
}

/// A solution field together with its diagnostics.
pub struct Solution {
    pub field: ScalarField,
    pub report: SolveReport,
}

/// Direct and continuation solutions of the same problem, with their sup
/// distance.
pub struct ModeComparison {
    pub direct: Solution,
    pub continuation: Solution,
    /// Sup distance between the two final fields.
    pub agreement_gap: f64,
}

fn boundary_sup(grid: &Grid, boundary: &BoundaryData) -> f64 {
    let mut sup = 0.0f64;
    if let BoundaryData::Field(g) = boundary {
        for flat in 0..grid.node_count() {
            if grid.on_lateral_or_top(flat) && grid.normal_index(flat) > 0 {
                sup = sup.max(g.get(flat).abs());
            }
        }
    }
    sup
}

fn sup_bound_check(
    coeffs: &OperatorCoefficients,
    grid: &Grid,
    f: &ScalarField,
    boundary: &BoundaryData,
    u: &ScalarField,
) -> Result<SupBoundCheck, SolveError> {
    let mut sup_c = f64::NEG_INFINITY;
    for flat in 0..grid.node_count() {
        sup_c = sup_c.max(coeffs.c_at(&grid.point(flat))?);
    }
    let c0 = -sup_c;
    let bound = if c0 > 0.0 {
        f.sup_norm() / c0 + boundary_sup(grid, boundary)
    } else {
        f64::INFINITY
    };
    let sup_u = u.sup_norm();
    Ok(SupBoundCheck {
        sup_u,
        bound,
        // Slack for discretization error: the bound is exact only for the
        // continuous problem.
        satisfied: sup_u <= bound * (1.0 + 1e-8) + 1e-12,
    })
}

fn interior_residual(
    coeffs: &OperatorCoefficients,
    u: &ScalarField,
    f: &ScalarField,
    delta: f64,
    kinds: &[RowKind],
) -> Result<f64, SolveError> {
    let lu = apply_operator(coeffs, u, delta)?;
    let mut worst = 0.0f64;
    for (flat, kind) in kinds.iter().enumerate() {
        if *kind == RowKind::Interior {
            worst = worst.max((lu.get(flat) - f.get(flat)).abs());
        }
    }
    Ok(worst)
}

fn solve_at_delta(
    coeffs: &OperatorCoefficients,
    grid: &Arc<Grid>,
    delta: f64,
    f: &ScalarField,
    boundary: &BoundaryData,
    warm: Option<&[f64]>,
    opts: &KrylovOptions,
) -> Result<(ScalarField, LinearSolveStats, Vec<RowKind>), SolveError> {
    let sys = assemble(coeffs, grid, delta, f, boundary)?;
    let (x, stats) = sparse::solve(&sys.matrix, &sys.rhs, warm, opts)?;
    let field = ScalarField::from_values(grid.clone(), x)?;
    Ok((field, stats, sys.row_kinds))
}

/// Solve the unregularized problem in one shot: `delta = 0`, bottom rows
/// `c u = f`.
pub fn solve_direct(
    coeffs: &OperatorCoefficients,
    grid: &Arc<Grid>,
    f: &ScalarField,
    boundary: &BoundaryData,
    config: &SolveConfig,
) -> Result<Solution, SolveError> {
    config.validate()?;
    let (field, stats, kinds) =
        solve_at_delta(coeffs, grid, 0.0, f, boundary, None, &config.krylov())?;
    let interior = interior_residual(coeffs, &field, f, 0.0, &kinds)?;
    let step = StepRecord {
        delta: 0.0,
        sup_norm: field.sup_norm(),
        linear_residual_sup: stats.final_residual_sup,
        interior_residual_sup: interior,
        successive_diff: None,
        gap_to_reference: None,
        linear_stats: stats,
    };
    let sup_bound = sup_bound_check(coeffs, grid, f, boundary, &field)?;
    Ok(Solution {
        report: SolveReport {
            mode: SolveMode::Direct,
            steps: vec![step],
            final_delta: 0.0,
            interior_residual_sup: interior,
            sup_bound,
            converged: true,
        },
        field,
    })
}

/// Vanishing-viscosity continuation: solve at `delta_k = delta0 ratio^k`,
/// warm-starting each step with the previous iterate, until successive
/// iterates agree to `stop_tol` or the schedule is exhausted. When
/// `reference` is given, each step also records its sup distance to it.
pub fn solve_continuation(
    coeffs: &OperatorCoefficients,
    grid: &Arc<Grid>,
    f: &ScalarField,
    boundary: &BoundaryData,
    config: &SolveConfig,
    reference: Option<&ScalarField>,
) -> Result<Solution, SolveError> {
    config.validate()?;
    let opts = config.krylov();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut current: Option<ScalarField> = None;
    let mut kinds: Vec<RowKind> = Vec::new();
    let mut delta = config.delta0;
    let mut converged = false;
    let mut final_delta = delta;
    for _ in 0..config.max_steps {
        let warm = current.as_ref().map(|u| u.values());
        let (field, stats, row_kinds) =
            solve_at_delta(coeffs, grid, delta, f, boundary, warm, &opts)?;
        let successive_diff = match current.as_ref() {
            Some(prev) => Some(field.sup_distance(prev)?),
            None => None,
        };
        let gap_to_reference = match reference {
            Some(r) => Some(field.sup_distance(r)?),
            None => None,
        };
        let interior = interior_residual(coeffs, &field, f, delta, &row_kinds)?;
        steps.push(StepRecord {
            delta,
            sup_norm: field.sup_norm(),
            linear_residual_sup: stats.final_residual_sup,
            interior_residual_sup: interior,
            successive_diff,
            gap_to_reference,
            linear_stats: stats,
        });
        final_delta = delta;
        kinds = row_kinds;
        current = Some(field);
        if let Some(diff) = successive_diff {
            if diff <= config.stop_tol {
                converged = true;
                break;
            }
        }
        delta *= config.ratio;
    }
    let field = current.expect("max_steps >= 1 produced an iterate");
    let interior = interior_residual(coeffs, &field, f, final_delta, &kinds)?;
    let sup_bound = sup_bound_check(coeffs, grid, f, boundary, &field)?;
    Ok(Solution {
        report: SolveReport {
            mode: SolveMode::Continuation,
            steps,
            final_delta,
            interior_residual_sup: interior,
            sup_bound,
            converged,
        },
        field,
    })
}

/// Run both modes and measure their agreement. The continuation tracks the
/// direct solution as its reference, so its steps show the vanishing-
/// viscosity limit being approached.
pub fn solve_both(
    coeffs: &OperatorCoefficients,
    grid: &Arc<Grid>,
    f: &ScalarField,
    boundary: &BoundaryData,
    config: &SolveConfig,
) -> Result<ModeComparison, SolveError> {
    let direct = solve_direct(coeffs, grid, f, boundary, config)?;
    let continuation =
        solve_continuation(coeffs, grid, f, boundary, config, Some(&direct.field))?;
    let agreement_gap = direct.field.sup_distance(&continuation.field)?;
    Ok(ModeComparison {
        direct,
        continuation,
        agreement_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::manufactured::ManufacturedCase;
    use crate::operator::Coefficient;

    fn laplace_like(dim: usize, c: f64) -> OperatorCoefficients {
        OperatorCoefficients::isotropic(dim, 1.0, vec![0.0; dim], c).unwrap()
    }

    #[test]
    fn constant_problem_is_reproduced_to_solver_tolerance() {
        // f = -1, c = -1, boundary identically 1: u = 1 exactly.
        let grid = Arc::new(make_grid(2, 16, 16, 2.0).unwrap());
        let op = laplace_like(2, -1.0);
        let f = ScalarField::from_fn(grid.clone(), |_| -1.0).unwrap();
        let g = BoundaryData::from_fn(grid.clone(), |_| 1.0).unwrap();
        let sol = solve_direct(&op, &grid, &f, &g, &SolveConfig::default()).unwrap();
        let exact = ScalarField::from_fn(grid.clone(), |_| 1.0).unwrap();
        let err = sol.field.sup_distance(&exact).unwrap();
        assert!(err < 1e-10, "error {err}");
        assert!(sol.report.sup_bound.satisfied);
        assert!(sol.report.interior_residual_sup < 1e-9);
    }

    #[test]
    fn continuation_stops_after_two_steps_on_a_delta_independent_problem() {
        // u = 1 solves the regularized problem for every delta, so the first
        // two iterates already agree and the successive-difference criterion
        // fires at step two.
        let grid = Arc::new(make_grid(2, 8, 8, 1.0).unwrap());
        let op = laplace_like(2, -1.0);
        let f = ScalarField::from_fn(grid.clone(), |_| -1.0).unwrap();
        let g = BoundaryData::from_fn(grid.clone(), |_| 1.0).unwrap();
        let sol =
            solve_continuation(&op, &grid, &f, &g, &SolveConfig::default(), None).unwrap();
        assert!(sol.report.converged);
        assert_eq!(sol.report.steps.len(), 2);
        assert!(sol.report.steps[1].successive_diff.unwrap() < 1e-8);
        assert!((sol.report.final_delta - 0.5).abs() < 1e-15);
    }

    #[test]
    fn manufactured_power_solution_is_recovered() {
        let case = ManufacturedCase::pure_power(2, 1.0, 0.0, 1.5, "1 + 0.5*x1").unwrap();
        let grid = Arc::new(make_grid(2, 32, 64, 2.0).unwrap());
        let op = case.operator();
        let f = case.rhs_field(&grid).unwrap();
        let g = case.boundary_data(&grid).unwrap();
        let sol = solve_direct(&op, &grid, &f, &g, &SolveConfig::default()).unwrap();
        let exact = case.exact_field(&grid).unwrap();
        let err = sol.field.sup_distance(&exact).unwrap();
        assert!(err < 2e-2, "error {err}");
        assert!(sol.report.sup_bound.satisfied);
    }

    #[test]
    fn continuation_approaches_the_direct_solution() {
        let case = ManufacturedCase::pure_power(2, 1.0, 0.0, 1.5, "1").unwrap();
        let grid = Arc::new(make_grid(2, 16, 32, 2.0).unwrap());
        let op = case.operator();
        let f = case.rhs_field(&grid).unwrap();
        let g = case.boundary_data(&grid).unwrap();
        let mut config = SolveConfig::default();
        config.max_steps = 30;
        config.stop_tol = 1e-10;
        let both = solve_both(&op, &grid, &f, &g, &config).unwrap();
        // Gaps to the direct solution shrink as delta does.
        let gaps: Vec<f64> = both
            .continuation
            .report
            .steps
            .iter()
            .map(|s| s.gap_to_reference.unwrap())
            .collect();
        assert!(gaps.last().unwrap() < &1e-4, "gaps {gaps:?}");
        assert!(gaps.first().unwrap() > gaps.last().unwrap());
        assert!(both.agreement_gap < 1e-4);
    }

    #[test]
    fn variable_coefficients_and_seeds_do_not_change_the_answer() {
        let grid = Arc::new(make_grid(2, 12, 16, 1.5).unwrap());
        let op = OperatorCoefficients::new(
            2,
            vec![
                vec![
                    Coefficient::parse("1 + 0.2*cos(x1)", 2).unwrap(),
                    Coefficient::Const(0.1),
                ],
                vec![Coefficient::Const(0.1), Coefficient::Const(1.0)],
            ],
            vec![Coefficient::Const(0.2), Coefficient::parse("0.5*t", 2).unwrap()],
            Coefficient::parse("-1 - t^2", 2).unwrap(),
        )
        .unwrap();
        let f = ScalarField::from_fn(grid.clone(), |p| (p[0] + p[1]).sin()).unwrap();
        let g = BoundaryData::Zero;
        let mut c0 = SolveConfig::default();
        c0.seed = 0;
        let mut c1 = SolveConfig::default();
        c1.seed = 12345;
        let s0 = solve_direct(&op, &grid, &f, &g, &c0).unwrap();
        let s1 = solve_direct(&op, &grid, &f, &g, &c1).unwrap();
        let gap = s0.field.sup_distance(&s1.field).unwrap();
        assert!(gap < 1e-8, "seed-dependent gap {gap}");
        assert!(s0.report.sup_bound.satisfied);
    }

    #[test]
    fn bottom_values_follow_the_equation() {
        // At t = 0 the direct system enforces c u = f exactly.
        let case = ManufacturedCase::pure_power(2, 1.0, 0.0, 1.5, "1 + 0.5*x1").unwrap();
        let grid = Arc::new(make_grid(2, 12, 16, 2.0).unwrap());
        let op = case.operator();
        let f = case.rhs_field(&grid).unwrap();
        let g = case.boundary_data(&grid).unwrap();
        let sol = solve_direct(&op, &grid, &f, &g, &SolveConfig::default()).unwrap();
        for flat in 0..grid.node_count() {
            if grid.on_bottom(flat) {
                let p = grid.point(flat);
                let expect = f.get(flat) / op.c_at(&p).unwrap();
                assert!((sol.field.get(flat) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nonpositive_rhs_with_nonnegative_data_stays_nonnegative() {
        // Weak discrete minimum principle: with a monotone stencil (diagonal
        // second order, normal drift dominated by t a/h), f <= 0 and lateral
        // data >= 0 force u >= 0 up to solver tolerance.
        let grid = Arc::new(make_grid(2, 24, 48, 2.0).unwrap());
        let op = OperatorCoefficients::isotropic(2, 1.0, vec![0.0, -0.3], -1.0).unwrap();
        let f = ScalarField::from_fn(grid.clone(), |p| {
            -(1.0 + p[0] * p[0]) * (0.5 + p[1])
        })
        .unwrap();
        let g = BoundaryData::from_fn(grid.clone(), |p| 0.25 * (1.0 + p[0])).unwrap();
        let sol = solve_direct(&op, &grid, &f, &g, &SolveConfig::default()).unwrap();
        let min = sol
            .field
            .values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-9, "minimum principle violated by {:e}", -min);
        // The problem is not trivially zero.
        assert!(sol.field.sup_norm() > 0.5);
    }

    #[test]
    fn config_validation() {
        let grid = Arc::new(make_grid(2, 4, 4, 1.0).unwrap());
        let op = laplace_like(2, -1.0);
        let f = ScalarField::zeros(grid.clone());
        let mut config = SolveConfig::default();
        config.ratio = 1.5;
        assert!(matches!(
            solve_continuation(&op, &grid, &f, &BoundaryData::Zero, &config, None),
            Err(SolveError::BadConfig(_))
        ));
    }
}
