//! Numerical workbench for uniformly degenerate elliptic Dirichlet problems
//!
//!   L u = t^2 a_ij D_ij u + t b_i D_i u + c u = f
//!
//! on the model half-cube [-1,1]^{n-1} x (0,1), where the operator loses
//! ellipticity like t^2 at the boundary face t = 0. The crate provides graded
//! tensor meshes and finite-difference calculus ([`grid`]), a small expression
//! language for coefficients and data ([`expr`]), operator-level certificates
//! and discretization ([`operator`]), closed-form solution families for
//! verification ([`manufactured`]), certified power-type supersolutions
//! ([`barriers`]), direct and regularized solvers ([`solver`]), and boundary
//! asymptotics measurement ([`analysis`]).

pub mod analysis;
pub mod barriers;
pub mod expr;
pub mod grid;
pub mod manufactured;
pub mod operator;
pub mod solver;
pub mod sparse;
