//! Problem configuration: TOML schema and construction of grid, operator,
//! fields, and solver settings from it.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use degel_core::analysis::Region;
use degel_core::grid::{make_grid, Grid, ScalarField};
use degel_core::manufactured::ManufacturedCase;
use degel_core::operator::{BoundaryData, Coefficient, OperatorCoefficients};
use degel_core::solver::SolveConfig;

use crate::{CliError, Mode};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub grid: GridSection,
    /// Seeds Krylov shadow residuals and all sampling; results are
    /// deterministic given the config and this value.
    #[serde(default)]
    pub seed: u64,
    pub coefficients: Option<CoefficientsSection>,
    pub manufactured: Option<ManufacturedSection>,
    pub rhs: Option<FieldSource>,
    pub boundary: Option<FieldSource>,
    #[serde(default)]
    pub solve: SolveSection,
    pub barrier: Option<BarrierSection>,
    pub indicial: Option<IndicialSection>,
    #[serde(default)]
    pub analyze: Vec<AnalyzeRequest>,
    #[serde(default)]
    pub analyze_input: AnalyzeInput,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    /// Tangential intervals per axis.
    pub n: usize,
    /// Normal intervals.
    pub m: usize,
    /// Mesh grading exponent toward t = 0.
    pub gamma: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSection {
    /// Second-order coefficient expressions, row-major dim x dim.
    pub a: Vec<Vec<String>>,
    pub b: Vec<String>,
    pub c: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufacturedSection {
    /// "pure_power" (u = psi t^s) or "log_power" (u = psi t^s log t).
    pub case: String,
    pub a: f64,
    pub b: f64,
    pub s: f64,
    #[serde(default = "default_psi")]
    pub psi: String,
    /// Optional zeroth-order coefficient; must satisfy the root condition
    /// for s to within 1e-12.
    pub c: Option<f64>,
}

fn default_psi() -> String {
    "1".to_string()
}

/// A nodal field given either as an expression of (x1[, x2], t) or as a CSV
/// file in the grid layout.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSource {
    pub expression: Option<String>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "d_delta0")]
    pub delta0: f64,
    #[serde(default = "d_ratio")]
    pub ratio: f64,
    #[serde(default = "d_max_steps")]
    pub max_steps: usize,
    #[serde(default = "d_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "d_rtol")]
    pub linear_rtol: f64,
    #[serde(default = "d_max_iter")]
    pub linear_max_iterations: usize,
}

fn default_mode() -> Mode {
    Mode::Direct
}
fn d_delta0() -> f64 {
    1.0
}
fn d_ratio() -> f64 {
    0.5
}
fn d_max_steps() -> usize {
    25
}
fn d_stop_tol() -> f64 {
    1e-8
}
fn d_rtol() -> f64 {
    1e-12
}
fn d_max_iter() -> usize {
    4000
}

impl Default for SolveSection {
    fn default() -> Self {
        SolveSection {
            mode: default_mode(),
            delta0: d_delta0(),
            ratio: d_ratio(),
            max_steps: d_max_steps(),
            stop_tol: d_stop_tol(),
            linear_rtol: d_rtol(),
            linear_max_iterations: d_max_iter(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSection {
    pub sigma: f64,
    pub mu: f64,
    #[serde(default = "d_extra_samples")]
    pub extra_samples: usize,
}

fn d_extra_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicialSection {
    /// Exponent whose admissibility margin is checked (default 0, whose
    /// margin coincides with the zeroth-order margin c0).
    pub exponent: Option<f64>,
    /// Tangential anchor for the quoted roots (default origin).
    pub anchor: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl RegionSpec {
    pub fn to_region(&self) -> Region {
        match self {
            RegionSpec::Box { lo, hi } => Region::Box {
                lo: lo.clone(),
                hi: hi.clone(),
            },
            RegionSpec::Ball { center, radius } => Region::Ball {
                center: center.clone(),
                radius: *radius,
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyzeRequest {
    FitBoundaryDecay {
        anchor: Vec<f64>,
        /// Boundary value at the anchor; defaults to the field's own bottom
        /// value there.
        u0: Option<f64>,
        window: Option<[f64; 2]>,
    },
    WeightedDerivativeDecay {
        anchor: Vec<f64>,
        window: Option<[f64; 2]>,
    },
    HolderSeminorm {
        alpha: f64,
        region: RegionSpec,
        sample_pairs: Option<usize>,
    },
    WeightedNorm {
        k: usize,
        alpha: f64,
        sample_pairs: Option<usize>,
    },
    NormalTrace {},
    TangentialBound {
        region: RegionSpec,
    },
    DetectLogFactor {
        anchor: Vec<f64>,
        /// Candidate exponent; defaults to the manufactured decay order.
        s: Option<f64>,
        window: Option<[f64; 2]>,
    },
    WeightedTrace {},
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyzeSource {
    /// Solve the configured problem and analyze the solution.
    Solve,
    /// Analyze the exact manufactured field.
    Exact,
    /// Load u (and f, when needed) from CSV files.
    Files,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeInput {
    #[serde(default = "d_source")]
    pub source: AnalyzeSource,
    pub u: Option<PathBuf>,
    pub f: Option<PathBuf>,
}

fn d_source() -> AnalyzeSource {
    AnalyzeSource::Solve
}

impl Default for AnalyzeInput {
    fn default() -> Self {
        AnalyzeInput {
            source: AnalyzeSource::Solve,
            u: None,
            f: None,
        }
    }
}

/// Tolerances used by the full-verify pipeline.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "d_error_tol")]
    pub error_tol: f64,
    #[serde(default = "d_agreement_tol")]
    pub agreement_tol: f64,
    #[serde(default = "d_decay_tol")]
    pub decay_tol: f64,
    #[serde(default = "d_r2_min")]
    pub r2_min: f64,
    #[serde(default = "d_trace_tol")]
    pub trace_tol: f64,
    #[serde(default = "d_weighted_trace_tol")]
    pub weighted_trace_tol: f64,
    #[serde(default = "d_residual_tol")]
    pub residual_tol: f64,
    /// Force the normal-trace stage on or off; by default it runs whenever
    /// the formula applies and the one-sided difference is accurate enough
    /// to compare (decay order >= 2 for manufactured cases).
    pub normal_trace: Option<bool>,
}

fn d_error_tol() -> f64 {
    5e-3
}
fn d_agreement_tol() -> f64 {
    1e-6
}
fn d_decay_tol() -> f64 {
    0.05
}
fn d_r2_min() -> f64 {
    0.999
}
fn d_trace_tol() -> f64 {
    1e-3
}
fn d_weighted_trace_tol() -> f64 {
    0.05
}
fn d_residual_tol() -> f64 {
    1e-8
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            error_tol: d_error_tol(),
            agreement_tol: d_agreement_tol(),
            decay_tol: d_decay_tol(),
            r2_min: d_r2_min(),
            trace_tol: d_trace_tol(),
            weighted_trace_tol: d_weighted_trace_tol(),
            residual_tol: d_residual_tol(),
            normal_trace: None,
        }
    }
}

pub fn load_config(path: &Path) -> Result<ProblemConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    let config: ProblemConfig = toml::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.coefficients, &self.manufactured) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "give exactly one of [coefficients] and [manufactured], not both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "give exactly one of [coefficients] and [manufactured]".into(),
                ))
            }
            _ => {}
        }
        if self.manufactured.is_some() {
            if self.rhs.is_some() || self.boundary.is_some() {
                return Err(CliError::Config(
                    "[rhs] and [boundary] are derived from the manufactured case; \
                     remove them"
                        .into(),
                ));
            }
        } else if self.rhs.is_none() {
            return Err(CliError::Config(
                "[coefficients] mode needs an [rhs] section".into(),
            ));
        }
        for (name, source) in [("rhs", &self.rhs), ("boundary", &self.boundary)] {
            if let Some(s) = source {
                match (&s.expression, &s.file) {
                    (Some(_), Some(_)) | (None, None) => {
                        return Err(CliError::Config(format!(
                            "[{name}] needs exactly one of `expression` and `file`"
                        )))
                    }
                    (None, Some(f)) if !f.exists() => {
                        return Err(CliError::Config(format!(
                            "[{name}] file {} does not exist",
                            f.display()
                        )))
                    }
                    _ => {}
                }
            }
        }
        for file in [&self.analyze_input.u, &self.analyze_input.f]
            .into_iter()
            .flatten()
        {
            if !file.exists() {
                return Err(CliError::Config(format!(
                    "analysis input file {} does not exist",
                    file.display()
                )));
            }
        }
        if self.analyze_input.source == AnalyzeSource::Files && self.analyze_input.u.is_none() {
            return Err(CliError::Config(
                "analyze_input.source = \"files\" needs analyze_input.u".into(),
            ));
        }
        if self.analyze_input.source == AnalyzeSource::Exact && self.manufactured.is_none() {
            return Err(CliError::Config(
                "analyze_input.source = \"exact\" needs a [manufactured] case".into(),
            ));
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Arc<Grid>, CliError> {
        let g = &self.grid;
        make_grid(g.dim, g.n, g.m, g.gamma)
            .map(Arc::new)
            .map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn build_case(&self) -> Result<Option<ManufacturedCase>, CliError> {
        let Some(m) = &self.manufactured else {
            return Ok(None);
        };
        let case = match m.case.as_str() {
            "pure_power" => ManufacturedCase::pure_power(self.grid.dim, m.a, m.b, m.s, &m.psi),
            "log_power" => ManufacturedCase::log_power(self.grid.dim, m.a, m.b, m.s, &m.psi),
            other => {
                return Err(CliError::Config(format!(
                    "unknown manufactured case {other:?}; expected pure_power or log_power"
                )))
            }
        }
        .map_err(|e| CliError::Config(format!("manufactured case: {e}")))?;
        if let Some(c_given) = m.c {
            let c_required = case.zeroth_order();
            if (c_given - c_required).abs() > 1e-12 {
                return Err(CliError::Config(format!(
                    "c = {c_given} violates the root condition for s = {}; \
                     need c = {c_required}",
                    m.s
                )));
            }
        }
        Ok(Some(case))
    }

    pub fn build_operator(
        &self,
        case: Option<&ManufacturedCase>,
    ) -> Result<OperatorCoefficients, CliError> {
        if let Some(case) = case {
            return Ok(case.operator());
        }
        let cs = self
            .coefficients
            .as_ref()
            .expect("validate() guarantees one section");
        let dim = self.grid.dim;
        let parse = |src: &str, what: &str| -> Result<Coefficient, CliError> {
            Coefficient::parse(src, dim)
                .map_err(|e| CliError::Config(format!("{what} {src:?}: {e}")))
        };
        let mut a = Vec::with_capacity(cs.a.len());
        for (i, row) in cs.a.iter().enumerate() {
            let mut arow = Vec::with_capacity(row.len());
            for (j, src) in row.iter().enumerate() {
                arow.push(parse(src, &format!("a[{i}][{j}]"))?);
            }
            a.push(arow);
        }
        let mut b = Vec::with_capacity(cs.b.len());
        for (i, src) in cs.b.iter().enumerate() {
            b.push(parse(src, &format!("b[{i}]"))?);
        }
        let c = parse(&cs.c, "c")?;
        OperatorCoefficients::new(dim, a, b, c)
            .map_err(|e| CliError::Config(format!("coefficients: {e}")))
    }

    fn field_from_source(
        &self,
        source: &FieldSource,
        grid: &Arc<Grid>,
        what: &str,
    ) -> Result<ScalarField, CliError> {
        if let Some(expr) = &source.expression {
            let coef = Coefficient::parse(expr, grid.dim())
                .map_err(|e| CliError::Config(format!("[{what}] expression: {e}")))?;
            let values: Result<Vec<f64>, _> = (0..grid.node_count())
                .map(|flat| coef.eval(&grid.point(flat)))
                .collect();
            let values =
                values.map_err(|e| CliError::Numerical(format!("[{what}] evaluation: {e}")))?;
            return ScalarField::from_values(grid.clone(), values)
                .map_err(|e| CliError::Numerical(format!("[{what}]: {e}")));
        }
        let file = source.file.as_ref().expect("validated");
        let text = std::fs::read_to_string(file)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", file.display())))?;
        ScalarField::from_csv(grid.clone(), &text)
            .map_err(|e| CliError::Config(format!("[{what}] file {}: {e}", file.display())))
    }

    pub fn build_rhs(
        &self,
        grid: &Arc<Grid>,
        case: Option<&ManufacturedCase>,
    ) -> Result<ScalarField, CliError> {
        if let Some(case) = case {
            return case
                .rhs_field(grid)
                .map_err(|e| CliError::Numerical(format!("manufactured rhs: {e}")));
        }
        self.field_from_source(self.rhs.as_ref().expect("validated"), grid, "rhs")
    }

    pub fn build_boundary(
        &self,
        grid: &Arc<Grid>,
        case: Option<&ManufacturedCase>,
    ) -> Result<BoundaryData, CliError> {
        if let Some(case) = case {
            return case
                .boundary_data(grid)
                .map_err(|e| CliError::Numerical(format!("manufactured boundary: {e}")));
        }
        match &self.boundary {
            None => Ok(BoundaryData::Zero),
            Some(src) => Ok(BoundaryData::Field(
                self.field_from_source(src, grid, "boundary")?,
            )),
        }
    }

    pub fn solve_config(&self, seed: u64) -> SolveConfig {
        SolveConfig {
            delta0: self.solve.delta0,
            ratio: self.solve.ratio,
            max_steps: self.solve.max_steps,
            stop_tol: self.solve.stop_tol,
            linear_rtol: self.solve.linear_rtol,
            linear_max_iterations: self.solve.linear_max_iterations,
            seed,
        }
    }
}
