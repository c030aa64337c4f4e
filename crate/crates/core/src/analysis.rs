//! Regularity measurements on computed or synthetic solution fields:
//! boundary decay fits, weighted-derivative decay, Hölder seminorm
//! estimates, weighted norms with divergence detection, the equation-derived
//! normal trace, and log-factor detection at candidate exponents.
//!
//! All Hölder-type quantities are sampled lower bounds of suprema; reports
//! carry the sample metadata needed to judge them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{fd_gradient, fd_hessian, fd_weights, interpolate, Grid, GridError, ScalarField};
use crate::operator::{OperatorCoefficients, OperatorError};

/// Differences below this are treated as numerically zero in decay fits.
pub const ZERO_DIFF: f64 = 1e-13;
/// Minimum usable nodes for any least-squares fit.
pub const MIN_FIT_NODES: usize = 6;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("fit window [{t_min}, {t_max}] is invalid: need 0 < t_min < t_max <= {cap}")]
    BadWindow { t_min: f64, t_max: f64, cap: f64 },
    #[error(
        "only {usable} usable nodes in the fit window (need >= {need}; \
         {excluded} excluded as numerically zero or non-finite)"
    )]
    TooFewSamples {
        usable: usize,
        need: usize,
        excluded: usize,
    },
    #[error("region contains no usable points")]
    EmptyRegion,
    #[error(
        "normal trace formula requires b_n + c < 0 everywhere on the bottom \
         face; worst value {worst}"
    )]
    TracePrecondition { worst: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Half-open time window used by the decay fits.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitWindow {
    pub t_min: f64,
    pub t_max: f64,
}

impl FitWindow {
    pub fn new(t_min: f64, t_max: f64, cap: f64) -> Result<FitWindow, AnalysisError> {
        if !(t_min.is_finite() && t_max.is_finite()) || t_min <= 0.0 || t_min >= t_max
            || t_max > cap
        {
            return Err(AnalysisError::BadWindow { t_min, t_max, cap });
        }
        Ok(FitWindow { t_min, t_max })
    }

    /// Default window `[t_3, 0.1]`: the two smallest positive levels are
    /// skipped because one-sided differencing error dominates there.
    pub fn default_for(grid: &Grid) -> Result<FitWindow, AnalysisError> {
        let ts = grid.normal_coords();
        if ts.len() < 4 {
            return Err(AnalysisError::BadParameter(
                "grid has too few normal levels for a default fit window".into(),
            ));
        }
        FitWindow::new(ts[3], 0.1, 0.5)
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }
}

/// Least squares of y against x; returns (slope, intercept, r_squared).
/// A constant y (zero total variance) counts as a perfect fit.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if syy <= 0.0 {
        return (0.0, my, 1.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (intercept + slope * x);
        ss_res += r * r;
    }
    (slope, intercept, (1.0 - ss_res / syy).clamp(0.0, 1.0))
}

/// Power-law fit `v ~ C t^p` along a normal line.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    /// Fitted exponent p; `+inf` when the data are numerically zero.
    pub exponent: f64,
    /// Fitted prefactor C.
    pub constant: f64,
    pub r_squared: f64,
    pub window: FitWindow,
    /// Tangential coordinates of the line actually used (snapped to grid).
    pub anchor: Vec<f64>,
    pub sample_count: usize,
    pub excluded: usize,
    /// All differences in the window were numerically zero.
    pub exact: bool,
}

fn snap_anchor(grid: &Grid, anchor: &[f64]) -> Result<(Vec<usize>, Vec<f64>), AnalysisError> {
    let idx = grid.nearest_tangential_index(anchor)?;
    let snapped = idx
        .iter()
        .enumerate()
        .map(|(axis, &i)| grid.axis_coords(axis)[i])
        .collect();
    Ok((idx, snapped))
}

fn fit_line_values(
    ts: &[f64],
    vals: &[f64],
    window: FitWindow,
    anchor: Vec<f64>,
) -> Result<DecayFit, AnalysisError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = 0usize;
    let mut in_window = 0usize;
    for (&t, &v) in ts.iter().zip(vals) {
        if t <= 0.0 || !window.contains(t) {
            continue;
        }
        in_window += 1;
        if !v.is_finite() || v.abs() < ZERO_DIFF {
            excluded += 1;
            continue;
        }
        xs.push(t.ln());
        ys.push(v.abs().ln());
    }
    if in_window >= MIN_FIT_NODES && xs.is_empty() {
        // Everything in the window is numerically zero: decays faster than
        // any power resolvable here.
        return Ok(DecayFit {
            exponent: f64::INFINITY,
            constant: 0.0,
            r_squared: 1.0,
            window,
            anchor,
            sample_count: 0,
            excluded,
            exact: true,
        });
    }
    if xs.len() < MIN_FIT_NODES {
        return Err(AnalysisError::TooFewSamples {
            usable: xs.len(),
            need: MIN_FIT_NODES,
            excluded,
        });
    }
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    Ok(DecayFit {
        exponent: slope,
        constant: intercept.exp(),
        r_squared: r2,
        window,
        anchor,
        sample_count: xs.len(),
        excluded,
        exact: false,
    })
}

/// Fit `|u(x'_0, t) - u_0| ~ C t^p` over the window. `u_0` is the boundary
/// value at the anchor (for solved fields, the bottom value of the field
/// itself).
pub fn fit_boundary_decay(
    u: &ScalarField,
    u0: f64,
    anchor: &[f64],
    window: Option<FitWindow>,
) -> Result<DecayFit, AnalysisError> {
    if !u0.is_finite() {
        return Err(AnalysisError::BadParameter(format!(
            "boundary value must be finite, got {u0}"
        )));
    }
    let grid = u.grid();
    let window = match window {
        Some(w) => FitWindow::new(w.t_min, w.t_max, 0.5)?,
        None => FitWindow::default_for(grid)?,
    };
    let (idx, snapped) = snap_anchor(grid, anchor)?;
    let line = grid.normal_line(&idx);
    let ts: Vec<f64> = line.iter().map(|&f| grid.point(f)[grid.dim() - 1]).collect();
    let vals: Vec<f64> = line.iter().map(|&f| u.get(f) - u0).collect();
    fit_line_values(&ts, &vals, window, snapped)
}

/// Decay fits of the weighted derivative magnitudes `t |Du|` and
/// `t^2 |D^2 u|` along the normal line at the anchor.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeDecay {
    pub gradient: DecayFit,
    pub hessian: DecayFit,
}

pub fn weighted_derivative_decay(
    u: &ScalarField,
    anchor: &[f64],
    window: Option<FitWindow>,
) -> Result<DerivativeDecay, AnalysisError> {
    let grid = u.grid();
    let dim = grid.dim();
    let window = match window {
        Some(w) => FitWindow::new(w.t_min, w.t_max, 0.5)?,
        None => FitWindow::default_for(grid)?,
    };
    let (idx, snapped) = snap_anchor(grid, anchor)?;
    let grads = fd_gradient(u);
    let hess = fd_hessian(u);
    let line = grid.normal_line(&idx);
    let mut ts = Vec::with_capacity(line.len());
    let mut gvals = Vec::with_capacity(line.len());
    let mut hvals = Vec::with_capacity(line.len());
    for &flat in &line {
        let t = grid.point(flat)[dim - 1];
        let g2: f64 = grads.iter().map(|g| g.get(flat).powi(2)).sum();
        let mut h2 = 0.0;
        for row in &hess {
            for comp in row {
                h2 += comp.get(flat).powi(2);
            }
        }
        ts.push(t);
        gvals.push(t * g2.sqrt());
        hvals.push(t * t * h2.sqrt());
    }
    Ok(DerivativeDecay {
        gradient: fit_line_values(&ts, &gvals, window, snapped.clone())?,
        hessian: fit_line_values(&ts, &hvals, window, snapped)?,
    })
}

/// Sup of the weighted derivative magnitudes over the smallest positive
/// mesh level; solutions with boundary-vanishing weighted derivatives show
/// tiny values here.
#[derive(Debug, Clone, Serialize)]
pub struct WeightedTraceReport {
    pub t_min: f64,
    pub sup_t_gradient: f64,
    pub sup_t2_hessian: f64,
}

pub fn weighted_trace_at_bottom(u: &ScalarField) -> WeightedTraceReport {
    let grid = u.grid();
    let dim = grid.dim();
    let grads = fd_gradient(u);
    let hess = fd_hessian(u);
    let t_min = grid.t_min_positive();
    let mut sup_g = 0.0f64;
    let mut sup_h = 0.0f64;
    for flat in 0..grid.node_count() {
        if grid.normal_index(flat) != 1 {
            continue;
        }
        let t = grid.point(flat)[dim - 1];
        let g2: f64 = grads.iter().map(|g| g.get(flat).powi(2)).sum();
        let mut h2 = 0.0;
        for row in &hess {
            for comp in row {
                h2 += comp.get(flat).powi(2);
            }
        }
        sup_g = sup_g.max(t * g2.sqrt());
        sup_h = sup_h.max(t * t * h2.sqrt());
    }
    WeightedTraceReport {
        t_min,
        sup_t_gradient: sup_g,
        sup_t2_hessian: sup_h,
    }
}

/// Sampling region for Hölder estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Region {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    fn dim(&self) -> usize {
        match self {
            Region::Box { lo, .. } => lo.len(),
            Region::Ball { center, .. } => center.len(),
        }
    }

    fn contains(&self, p: &[f64]) -> bool {
        match self {
            Region::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&x, (&l, &h))| x >= l && x <= h),
            Region::Ball { center, radius } => {
                let d2: f64 = p
                    .iter()
                    .zip(center)
                    .map(|(&x, &c)| (x - c) * (x - c))
                    .sum();
                d2 <= radius * radius
            }
        }
    }

    fn validate(&self, grid: &Grid) -> Result<(), AnalysisError> {
        if self.dim() != grid.dim() {
            return Err(AnalysisError::BadParameter(format!(
                "region dimension {} does not match grid dimension {}",
                self.dim(),
                grid.dim()
            )));
        }
        if let Region::Box { lo, hi } = self {
            if lo.iter().zip(hi).any(|(&l, &h)| l > h) {
                return Err(AnalysisError::BadParameter(
                    "box region has lo > hi".into(),
                ));
            }
        }
        if let Region::Ball { radius, .. } = self {
            if !radius.is_finite() || *radius <= 0.0 {
                return Err(AnalysisError::BadParameter(format!(
                    "ball radius must be positive, got {radius}"
                )));
            }
        }
        Ok(())
    }

    /// Bounding box intersected with the grid domain.
    fn clipped_bounds(&self, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
        let dim = grid.dim();
        let mut lo = Vec::with_capacity(dim);
        let mut hi = Vec::with_capacity(dim);
        for axis in 0..dim {
            let coords = grid.axis_coords(axis);
            let (dlo, dhi) = (coords[0], *coords.last().unwrap());
            let (rlo, rhi) = match self {
                Region::Box { lo, hi } => (lo[axis], hi[axis]),
                Region::Ball { center, radius } => {
                    (center[axis] - radius, center[axis] + radius)
                }
            };
            lo.push(rlo.max(dlo));
            hi.push(rhi.min(dhi));
        }
        (lo, hi)
    }

    /// Deterministic probe points: extremes and center, clamped into the
    /// domain. For boxes these include all corners, where concave power
    /// profiles attain their Hölder ratio.
    fn skeleton(&self, grid: &Grid) -> Vec<Vec<f64>> {
        let (lo, hi) = self.clipped_bounds(grid);
        let dim = lo.len();
        let mut pts = Vec::new();
        match self {
            Region::Box { .. } => {
                for mask in 0..(1usize << dim) {
                    let p: Vec<f64> = (0..dim)
                        .map(|a| if mask >> a & 1 == 1 { hi[a] } else { lo[a] })
                        .collect();
                    pts.push(p);
                }
            }
            Region::Ball { center, radius } => {
                for axis in 0..dim {
                    for sgn in [-1.0, 1.0] {
                        let mut p = center.clone();
                        p[axis] += sgn * radius;
                        for a in 0..dim {
                            p[a] = p[a].clamp(lo[a], hi[a]);
                        }
                        pts.push(p);
                    }
                }
            }
        }
        let center: Vec<f64> = (0..dim).map(|a| 0.5 * (lo[a] + hi[a])).collect();
        pts.push(center);
        pts.retain(|p| self.contains(p));
        pts
    }

    fn random_point(
        &self,
        rng: &mut ChaCha8Rng,
        lo: &[f64],
        hi: &[f64],
    ) -> Option<Vec<f64>> {
        for _ in 0..64 {
            let p: Vec<f64> = lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| if h > l { rng.random_range(l..=h) } else { l })
                .collect();
            if self.contains(&p) {
                return Some(p);
            }
        }
        None
    }
}

/// Sampled lower bound of `sup |w(x) - w(y)| / |x - y|^alpha`.
#[derive(Debug, Clone, Serialize)]
pub struct HolderEstimate {
    pub alpha: f64,
    pub seminorm: f64,
    pub pair_count: usize,
    pub witness: (Vec<f64>, Vec<f64>),
}

/// Estimate the alpha-Hölder seminorm of `field` over `region` from
/// deterministic extreme pairs plus `sample_pairs` random interpolated
/// pairs. The result is a lower bound of the true seminorm.
pub fn holder_seminorm(
    field: &ScalarField,
    alpha: f64,
    region: &Region,
    sample_pairs: usize,
    seed: u64,
) -> Result<HolderEstimate, AnalysisError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AnalysisError::BadParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let grid = field.grid();
    region.validate(grid)?;
    let (lo, hi) = region.clipped_bounds(grid);
    if lo.iter().zip(&hi).any(|(&l, &h)| l > h) {
        return Err(AnalysisError::EmptyRegion);
    }
    let mut points = region.skeleton(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeleton_len = points.len();
    for _ in 0..(2 * sample_pairs) {
        if let Some(p) = region.random_point(&mut rng, &lo, &hi) {
            points.push(p);
        }
    }
    if points.is_empty() {
        return Err(AnalysisError::EmptyRegion);
    }
    let values: Vec<f64> = points
        .iter()
        .map(|p| interpolate(field, p))
        .collect::<Result<_, _>>()?;

    let mut best = 0.0f64;
    let mut witness = (points[0].clone(), points[0].clone());
    let mut pair_count = 0usize;
    let consider = |i: usize, j: usize,
                        points: &[Vec<f64>],
                        values: &[f64],
                        best: &mut f64,
                        witness: &mut (Vec<f64>, Vec<f64>),
                        pair_count: &mut usize| {
        let d2: f64 = points[i]
            .iter()
            .zip(&points[j])
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        if d2 < 1e-24 {
            return;
        }
        *pair_count += 1;
        let ratio = (values[i] - values[j]).abs() / d2.sqrt().powf(alpha);
        if ratio > *best {
            *best = ratio;
            *witness = (points[i].clone(), points[j].clone());
        }
    };
    // All skeleton pairs.
    for i in 0..skeleton_len {
        for j in (i + 1)..skeleton_len {
            consider(i, j, &points, &values, &mut best, &mut witness, &mut pair_count);
        }
    }
    // Random pairs among the remaining sampled points.
    for k in 0..sample_pairs.min(points.len().saturating_sub(skeleton_len) / 2) {
        let i = skeleton_len + 2 * k;
        let j = skeleton_len + 2 * k + 1;
        consider(i, j, &points, &values, &mut best, &mut witness, &mut pair_count);
    }
    Ok(HolderEstimate {
        alpha,
        seminorm: best,
        pair_count,
        witness,
    })
}

/// Weighted-norm estimate: the unweighted order-k Hölder norm plus the
/// alpha-Hölder norms of `t * (order k+1)` and `t^2 * (order k+2)`
/// derivatives, each taken as a componentwise maximum. Divergence of the
/// unweighted part toward the boundary is detected from level-restricted
/// sups and flagged.
#[derive(Debug, Clone, Serialize)]
pub struct WeightedNormReport {
    pub k: usize,
    pub alpha: f64,
    /// Estimate of the unweighted C^{k,alpha} norm.
    pub unweighted: f64,
    /// C^alpha norm of t * grad^{k+1} u (componentwise max).
    pub weighted_first: f64,
    /// C^alpha norm of t^2 * grad^{k+2} u (componentwise max).
    pub weighted_second: f64,
    pub total: f64,
    /// The unweighted part keeps growing as levels approach the boundary —
    /// the norm would diverge under refinement.
    pub divergence_flag: bool,
    /// (t_j, sup of unweighted order-<=k magnitudes over levels >= t_j).
    pub level_profile: Vec<(f64, f64)>,
}

fn third_derivatives(hess: &[Vec<ScalarField>]) -> Vec<ScalarField> {
    let mut out = Vec::new();
    for (i, row) in hess.iter().enumerate() {
        for (j, comp) in row.iter().enumerate() {
            if j < i {
                continue; // symmetric
            }
            out.extend(fd_gradient(comp));
        }
    }
    out
}

/// Level values: sup over each normal level of the pointwise max across the
/// supplied component fields, plus adjacent-node alpha-increment ratios of
/// the highest-order components.
fn level_maxima(
    grid: &Grid,
    low_order: &[&ScalarField],
    top_order: &[&ScalarField],
    alpha: f64,
) -> Vec<f64> {
    let dim = grid.dim();
    let m = grid.m_normal();
    let mut level_max = vec![0.0f64; m + 1];
    for flat in 0..grid.node_count() {
        let j = grid.normal_index(flat);
        let mut v = 0.0f64;
        for f in low_order {
            v = v.max(f.get(flat).abs());
        }
        for f in top_order {
            v = v.max(f.get(flat).abs());
        }
        // Alpha increments of the top-order fields to forward neighbors.
        let idx = grid.multi_index(flat);
        let p = grid.point(flat);
        for axis in 0..dim {
            let coords = grid.axis_coords(axis);
            if idx[axis] + 1 >= coords.len() {
                continue;
            }
            let nb = flat + grid.stride(axis);
            let h = coords[idx[axis] + 1] - p[axis];
            for f in top_order {
                let inc = (f.get(nb) - f.get(flat)).abs() / h.powf(alpha);
                v = v.max(inc);
            }
        }
        level_max[j] = level_max[j].max(v);
    }
    level_max
}

fn divergence_from_levels(ts: &[f64], level_max: &[f64]) -> (bool, Vec<(f64, f64)>) {
    let m = level_max.len() - 1;
    // Suffix maxima: norm restricted to levels >= j.
    let mut suffix = level_max.to_vec();
    for j in (0..m).rev() {
        suffix[j] = suffix[j].max(suffix[j + 1]);
    }
    let profile: Vec<(f64, f64)> = (0..=m).map(|j| (ts[j], suffix[j])).collect();
    if m < 4 {
        return (false, profile);
    }
    let ratio = suffix[1] / suffix[3].max(f64::MIN_POSITIVE);
    let mut diverges = ratio > 1.5;
    // Slow (logarithmic) growth: regress the restricted sup against
    // log(1/t) over the smallest levels.
    let take = 8.min(m - 1);
    let xs: Vec<f64> = (1..=take).map(|j| (1.0 / ts[j]).ln()).collect();
    let ys: Vec<f64> = (1..=take).map(|j| suffix[j]).collect();
    if xs.len() >= 4 {
        let (slope, _, r2) = linear_fit(&xs, &ys);
        let mean = ys.iter().map(|v| v.abs()).sum::<f64>() / ys.len() as f64;
        if slope / mean.max(f64::MIN_POSITIVE) > 0.1 && r2 >= 0.9 {
            diverges = true;
        }
    }
    (diverges, profile)
}

pub fn weighted_norm_c_k_alpha_2(
    u: &ScalarField,
    k: usize,
    alpha: f64,
    sample_pairs: usize,
    seed: u64,
) -> Result<WeightedNormReport, AnalysisError> {
    if k > 1 {
        return Err(AnalysisError::BadParameter(format!(
            "order k must be 0 or 1, got {k}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AnalysisError::BadParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let grid = u.grid().clone();
    let dim = grid.dim();
    let coords_box = Region::Box {
        lo: (0..dim).map(|a| grid.axis_coords(a)[0]).collect(),
        hi: (0..dim)
            .map(|a| *grid.axis_coords(a).last().unwrap())
            .collect(),
    };
    let grads = fd_gradient(u);
    let hess = fd_hessian(u);
    let hess_upper: Vec<&ScalarField> = hess
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().skip(i))
        .collect();
    let thirds;
    let (order_k1, order_k2): (Vec<&ScalarField>, Vec<&ScalarField>) = if k == 0 {
        (grads.iter().collect(), hess_upper.clone())
    } else {
        thirds = third_derivatives(&hess);
        (hess_upper.clone(), thirds.iter().collect())
    };

    let holder_of = |f: &ScalarField, seed_offset: u64| -> Result<f64, AnalysisError> {
        Ok(holder_seminorm(f, alpha, &coords_box, sample_pairs, seed ^ seed_offset)?.seminorm)
    };

    // Unweighted C^{k,alpha}: sups of orders <= k plus the seminorm of the
    // order-k derivatives.
    let mut unweighted = u.sup_norm();
    let mut seed_offset = 1u64;
    if k == 0 {
        unweighted += holder_of(u, seed_offset)?;
        seed_offset += 1;
    } else {
        let mut grad_sup = 0.0f64;
        let mut grad_holder = 0.0f64;
        for g in &grads {
            grad_sup = grad_sup.max(g.sup_norm());
            grad_holder = grad_holder.max(holder_of(g, seed_offset)?);
            seed_offset += 1;
        }
        unweighted += grad_sup + grad_holder;
    }

    let weight = |fields: &[&ScalarField], power: i32| -> Result<Vec<ScalarField>, AnalysisError> {
        fields
            .iter()
            .map(|f| {
                let vals: Vec<f64> = (0..grid.node_count())
                    .map(|flat| grid.point(flat)[dim - 1].powi(power) * f.get(flat))
                    .collect();
                ScalarField::from_values(grid.clone(), vals).map_err(AnalysisError::from)
            })
            .collect()
    };
    let w1 = weight(&order_k1, 1)?;
    let w2 = weight(&order_k2, 2)?;
    let mut weighted_first = 0.0f64;
    for f in &w1 {
        weighted_first = weighted_first.max(f.sup_norm() + holder_of(f, seed_offset)?);
        seed_offset += 1;
    }
    let mut weighted_second = 0.0f64;
    for f in &w2 {
        weighted_second = weighted_second.max(f.sup_norm() + holder_of(f, seed_offset)?);
        seed_offset += 1;
    }

    // Divergence detection on the unweighted part.
    let low: Vec<&ScalarField> = std::iter::once(u).collect();
    let top: Vec<&ScalarField> = if k == 0 {
        vec![u]
    } else {
        grads.iter().collect()
    };
    let level_max = level_maxima(&grid, &low, &top, alpha);
    let (divergence_flag, level_profile) =
        divergence_from_levels(grid.normal_coords(), &level_max);

    Ok(WeightedNormReport {
        k,
        alpha,
        unweighted,
        weighted_first,
        weighted_second,
        total: unweighted + weighted_first + weighted_second,
        divergence_flag,
        level_profile,
    })
}

/// Equation-derived first normal coefficient versus a one-sided difference
/// at the bottom face.
#[derive(Debug, Clone, Serialize)]
pub struct NormalTraceReport {
    /// Tangential points (one per bottom node, in flat order).
    pub points: Vec<Vec<f64>>,
    /// u_1 from the formula (d_t f - d_t c u - b_beta d_beta u) / (b_n + c).
    pub formula: Vec<f64>,
    /// One-sided difference of u in t from the bottom three levels.
    pub finite_difference: Vec<f64>,
    pub max_discrepancy: f64,
    pub argmax_point: Vec<f64>,
    /// min over the bottom face of -(b_n + c); positive by precondition.
    pub margin: f64,
}

pub fn normal_trace_check(
    coeffs: &OperatorCoefficients,
    u: &ScalarField,
    f: &ScalarField,
) -> Result<NormalTraceReport, AnalysisError> {
    let grid = u.grid();
    let dim = grid.dim();
    if coeffs.dim() != dim {
        return Err(AnalysisError::BadParameter(format!(
            "operator dimension {} does not match field dimension {dim}",
            coeffs.dim()
        )));
    }
    if !grid.same_layout(f.grid()) {
        return Err(AnalysisError::BadParameter(
            "solution and right-hand side live on different grids".into(),
        ));
    }
    if grid.m_normal() < 2 {
        return Err(AnalysisError::BadParameter(
            "need at least two positive levels for the one-sided trace".into(),
        ));
    }
    // Precondition first: b_n + c <= -margin < 0 on the bottom face.
    let mut worst = f64::NEG_INFINITY;
    for flat in 0..grid.node_count() {
        if grid.normal_index(flat) != 0 {
            continue;
        }
        let p = grid.point(flat);
        let q1 = coeffs.b_at(&p)?[dim - 1] + coeffs.c_at(&p)?;
        worst = worst.max(q1);
    }
    if worst >= 0.0 {
        return Err(AnalysisError::TracePrecondition { worst });
    }

    let ts = grid.normal_coords();
    let stencil_ts = [ts[0], ts[1], ts[2]];
    let w = fd_weights(&stencil_ts, 0.0, 1);
    let stride_n = grid.stride(dim - 1);
    let grads = fd_gradient(u);

    let mut points = Vec::new();
    let mut formula = Vec::new();
    let mut fd = Vec::new();
    let mut max_disc = 0.0f64;
    let mut argmax = Vec::new();
    // Step used for the one-sided t-derivative of the coefficient c.
    let hc = 1e-5;
    for flat in 0..grid.node_count() {
        if grid.normal_index(flat) != 0 {
            continue;
        }
        let p = grid.point(flat);
        let one_sided = |g: &ScalarField| -> f64 {
            (0..3).map(|k| w[k] * g.get(flat + k * stride_n)).sum()
        };
        let dt_f = one_sided(f);
        let fd_u1 = one_sided(u);
        let mut pc = p.clone();
        let c0 = coeffs.c_at(&p)?;
        pc[dim - 1] = hc;
        let c1 = coeffs.c_at(&pc)?;
        pc[dim - 1] = 2.0 * hc;
        let c2 = coeffs.c_at(&pc)?;
        let dt_c = (-3.0 * c0 + 4.0 * c1 - c2) / (2.0 * hc);
        let b = coeffs.b_at(&p)?;
        let u0 = u.get(flat);
        let mut tangential = 0.0;
        for beta in 0..dim - 1 {
            tangential += b[beta] * grads[beta].get(flat);
        }
        let u1 = (dt_f - dt_c * u0 - tangential) / (b[dim - 1] + c0);
        let disc = (u1 - fd_u1).abs();
        if disc > max_disc || argmax.is_empty() {
            max_disc = disc;
            argmax = p[..dim - 1].to_vec();
        }
        points.push(p[..dim - 1].to_vec());
        formula.push(u1);
        fd.push(fd_u1);
    }
    Ok(NormalTraceReport {
        points,
        formula,
        finite_difference: fd,
        max_discrepancy: max_disc,
        argmax_point: argmax,
        margin: -worst,
    })
}

/// Sup of the tangential gradient magnitude over grid nodes inside a region.
#[derive(Debug, Clone, Serialize)]
pub struct TangentialBoundReport {
    pub sup: f64,
    pub argmax: Vec<f64>,
    pub node_count: usize,
}

pub fn tangential_bound_check(
    u: &ScalarField,
    region: &Region,
) -> Result<TangentialBoundReport, AnalysisError> {
    let grid = u.grid();
    let dim = grid.dim();
    region.validate(grid)?;
    let grads = fd_gradient(u);
    let mut sup = 0.0f64;
    let mut argmax = Vec::new();
    let mut count = 0usize;
    for flat in 0..grid.node_count() {
        let p = grid.point(flat);
        if !region.contains(&p) {
            continue;
        }
        count += 1;
        let g2: f64 = (0..dim - 1).map(|b| grads[b].get(flat).powi(2)).sum();
        let g = g2.sqrt();
        if g > sup || argmax.is_empty() {
            sup = g;
            argmax = p;
        }
    }
    if count == 0 {
        return Err(AnalysisError::EmptyRegion);
    }
    Ok(TangentialBoundReport {
        sup,
        argmax,
        node_count: count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LogVerdict {
    /// Ratio u / t^s is constant over the window.
    Clean,
    /// Ratio is affine in log t with meaningful slope.
    Log,
    /// Neither model fits.
    Inconclusive,
}

impl std::fmt::Display for LogVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LogVerdict::Clean => "clean",
            LogVerdict::Log => "log",
            LogVerdict::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LogFactorReport {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub verdict: LogVerdict,
    pub sample_count: usize,
    /// Nodes excluded because t^s underflowed or the ratio was not finite.
    pub excluded: usize,
}

/// Slope threshold separating a genuine log factor (slope 1 for
/// `u = psi t^s log t` with psi(anchor) = 1) from clean power laws.
pub const LOG_SLOPE_THRESHOLD: f64 = 0.1;
/// Linear-model quality needed before the slope is trusted.
pub const LOG_R2_THRESHOLD: f64 = 0.99;
/// Relative ratio spread below which the profile counts as a clean power
/// law regardless of fit quality: a log factor changes the ratio by at
/// least ~50% over half a decade, while solver noise stays far below this.
pub const RATIO_SPREAD_TOL: f64 = 0.05;

/// Regress `u(anchor, t) / t^s` against `log t` over the window and decide
/// whether the profile carries a log factor on top of `t^s`.
pub fn detect_log_factor(
    u: &ScalarField,
    anchor: &[f64],
    s: f64,
    window: Option<FitWindow>,
) -> Result<LogFactorReport, AnalysisError> {
    if !s.is_finite() || s <= 0.0 {
        return Err(AnalysisError::BadParameter(format!(
            "candidate exponent must be positive, got {s}"
        )));
    }
    let grid = u.grid();
    let window = match window {
        Some(w) => FitWindow::new(w.t_min, w.t_max, 0.2)?,
        None => {
            let d = FitWindow::default_for(grid)?;
            FitWindow::new(d.t_min, d.t_max, 0.2)?
        }
    };
    let (idx, _) = snap_anchor(grid, anchor)?;
    let line = grid.normal_line(&idx);
    let mut xs = Vec::new();
    let mut rs = Vec::new();
    let mut excluded = 0usize;
    for &flat in &line {
        let t = grid.point(flat)[grid.dim() - 1];
        if t <= 0.0 || !window.contains(t) {
            continue;
        }
        let ts = t.powf(s);
        let r = u.get(flat) / ts;
        if ts < f64::MIN_POSITIVE || !r.is_finite() {
            excluded += 1;
            continue;
        }
        xs.push(t.ln());
        rs.push(r);
    }
    if xs.len() < MIN_FIT_NODES {
        return Err(AnalysisError::TooFewSamples {
            usable: xs.len(),
            need: MIN_FIT_NODES,
            excluded,
        });
    }
    let mean = rs.iter().sum::<f64>() / rs.len() as f64;
    let spread = rs
        .iter()
        .map(|r| (r - mean).abs())
        .fold(0.0f64, f64::max);
    let (slope, intercept, r2) = linear_fit(&xs, &rs);
    let verdict = if spread <= RATIO_SPREAD_TOL * mean.abs() {
        LogVerdict::Clean
    } else if r2 >= LOG_R2_THRESHOLD {
        if slope.abs() > LOG_SLOPE_THRESHOLD {
            LogVerdict::Log
        } else {
            LogVerdict::Clean
        }
    } else {
        LogVerdict::Inconclusive
    };
    Ok(LogFactorReport {
        slope,
        intercept,
        r_squared: r2,
        verdict,
        sample_count: rs.len(),
        excluded,
    })
}
