//! Sparse linear algebra for the assembled systems: CSR storage, ILU(0)
//! preconditioning, BiCGSTAB, and a dense LU fallback for small systems.
//!
//! The assembled operators are nonsymmetric (first-order terms) but well
//! scaled on graded meshes, so ILU(0)+BiCGSTAB is the primary path. When the
//! Krylov iteration breaks down or stalls, systems below
//! [`DENSE_FALLBACK_MAX`] unknowns are retried with pivoted dense LU.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Largest system the dense direct fallback will accept.
pub const DENSE_FALLBACK_MAX: usize = 20_000;

#[derive(Debug, Clone, Error)]
pub enum LinSolveError {
    #[error("matrix row {row} has no diagonal entry")]
    MissingDiagonal { row: usize },
    #[error("zero pivot at row {row} during {stage}")]
    ZeroPivot { row: usize, stage: &'static str },
    #[error(
        "iterative solver did not converge: residual {residual:.3e} after {iterations} iterations \
         (target {target:.3e})"
    )]
    NotConverged {
        iterations: usize,
        residual: f64,
        target: f64,
        history: Vec<f64>,
    },
    #[error("system of {n} unknowns exceeds the dense fallback limit {max}")]
    TooLargeForDense { n: usize, max: usize },
    #[error("right-hand side length {got} does not match matrix dimension {n}")]
    ShapeMismatch { n: usize, got: usize },
}

/// Compressed sparse row matrix with sorted, duplicate-free columns per row.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row entry lists; duplicate columns are summed.
    pub fn from_rows(mut rows: Vec<Vec<(usize, f64)>>) -> CsrMatrix {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                debug_assert!(c < n);
                if last == Some(c) {
                    *vals.last_mut().expect("entry exists") += v;
                } else {
                    col_idx.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
        let mut rows = vec![Vec::new(); n];
        for &(r, c, v) in triplets {
            rows[r].push((c, v));
        }
        CsrMatrix::from_rows(rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.vals[lo..hi].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// Max-norm of b - Ax.
    pub fn residual_sup(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut r = vec![0.0; self.n];
        self.matvec(x, &mut r);
        r.iter()
            .zip(b)
            .fold(0.0f64, |m, (ax, bi)| m.max((bi - ax).abs()))
    }

    /// Coordinate-format text: one `row col value` line per stored entry,
    /// ordered by row then column.
    pub fn to_coo_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                out.push_str(&format!("{i} {c} {v:.17e}\n"));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                dense[i][c] += v;
            }
        }
        dense
    }
}

// ---------------------------------------------------------------------------
// ILU(0)
// ---------------------------------------------------------------------------

/// Incomplete LU factorization on the matrix's own sparsity pattern.
/// L has unit diagonal (strictly lower entries stored in place);
/// U occupies the diagonal and upper entries.
pub struct Ilu0 {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn factor(a: &CsrMatrix) -> Result<Ilu0, LinSolveError> {
        let n = a.n;
        let row_ptr = a.row_ptr.clone();
        let col_idx = a.col_idx.clone();
        let mut vals = a.vals.clone();
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                if col_idx[k] == i {
                    diag[i] = k;
                }
            }
            if diag[i] == usize::MAX {
                return Err(LinSolveError::MissingDiagonal { row: i });
            }
        }
        for i in 0..n {
            for ii in row_ptr[i]..row_ptr[i + 1] {
                let k = col_idx[ii];
                if k >= i {
                    break;
                }
                let pivot = vals[diag[k]];
                if pivot.abs() < f64::MIN_POSITIVE * 4.0 {
                    return Err(LinSolveError::ZeroPivot {
                        row: k,
                        stage: "ILU(0) factorization",
                    });
                }
                let factor = vals[ii] / pivot;
                vals[ii] = factor;
                // Subtract factor * (U part of row k) wherever row i has
                // matching pattern; both column lists are sorted.
                let mut jj = ii + 1;
                for kk in diag[k] + 1..row_ptr[k + 1] {
                    let j = col_idx[kk];
                    while jj < row_ptr[i + 1] && col_idx[jj] < j {
                        jj += 1;
                    }
                    if jj == row_ptr[i + 1] {
                        break;
                    }
                    if col_idx[jj] == j {
                        vals[jj] -= factor * vals[kk];
                    }
                }
            }
        }
        Ok(Ilu0 {
            row_ptr,
            col_idx,
            vals,
            diag,
        })
    }

    /// Solve LU z = r.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.diag.len();
        for i in 0..n {
            let mut acc = r[i];
            for k in self.row_ptr[i]..self.diag[i] {
                acc -= self.vals[k] * z[self.col_idx[k]];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for k in self.diag[i] + 1..self.row_ptr[i + 1] {
                acc -= self.vals[k] * z[self.col_idx[k]];
            }
            z[i] = acc / self.vals[self.diag[i]];
        }
    }
}

// ---------------------------------------------------------------------------
// BiCGSTAB
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct KrylovOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_iterations: usize,
    /// Seeds the shadow residual; 0 keeps the classical choice r_hat = r0,
    /// other seeds perturb it, changing the Krylov trajectory but not the
    /// solution.
    pub seed: u64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        KrylovOptions {
            rtol: 1e-12,
            atol: 1e-14,
            max_iterations: 4000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LinearSolveStats {
    pub iterations: usize,
    pub final_residual_l2: f64,
    pub final_residual_sup: f64,
    pub used_dense_fallback: bool,
    pub restarts: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned BiCGSTAB. Returns the iterate and (iterations, restarts);
/// the caller validates the final residual.
fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    pre: &Ilu0,
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, usize, usize), LinSolveError> {
    let n = a.n;
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let target = (opts.rtol * norm2(b)).max(opts.atol);
    let mut history = Vec::new();

    let mut r_hat = r.clone();
    if opts.seed != 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let scale = norm2(&r) * 1e-8 / (n as f64).sqrt() + f64::MIN_POSITIVE;
        for v in r_hat.iter_mut() {
            *v += scale * (rng.random::<f64>() - 0.5);
        }
    }

    let mut rho_prev = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut restarts = 0usize;
    let mut first = true;

    for iter in 0..opts.max_iterations {
        let res = norm2(&r);
        history.push(res);
        if res <= target {
            return Ok((x, iter, restarts));
        }
        let rho = dot(&r_hat, &r);
        if rho.abs() < 1e-300 {
            // Breakdown: restart with the current residual as shadow.
            if restarts >= 20 {
                return Err(LinSolveError::NotConverged {
                    iterations: iter,
                    residual: res,
                    target,
                    history,
                });
            }
            restarts += 1;
            r_hat = r.clone();
            rho_prev = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|z| *z = 0.0);
            p.iter_mut().for_each(|z| *z = 0.0);
            first = true;
            continue;
        }
        if first {
            p.copy_from_slice(&r);
            first = false;
        } else {
            let beta = (rho / rho_prev) * (alpha / omega);
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
        }
        pre.apply(&p, &mut p_hat);
        a.matvec(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom.abs() < 1e-300 {
            restarts += 1;
            if restarts >= 20 {
                return Err(LinSolveError::NotConverged {
                    iterations: iter,
                    residual: res,
                    target,
                    history,
                });
            }
            r_hat = r.clone();
            first = true;
            continue;
        }
        alpha = rho / denom;
        // s = r - alpha v (reuse r)
        for i in 0..n {
            r[i] -= alpha * v[i];
        }
        if norm2(&r) <= target {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok((x, iter + 1, restarts));
        }
        pre.apply(&r, &mut s_hat);
        a.matvec(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            rho_prev = rho;
            continue;
        }
        omega = dot(&t, &r) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] -= omega * t[i];
        }
        if omega == 0.0 {
            restarts += 1;
            if restarts >= 20 {
                return Err(LinSolveError::NotConverged {
                    iterations: opts.max_iterations,
                    residual: norm2(&r),
                    target,
                    history,
                });
            }
            r_hat = r.clone();
            first = true;
        }
        rho_prev = rho;
    }
    let res = norm2(&r);
    if res <= target {
        return Ok((x, opts.max_iterations, restarts));
    }
    Err(LinSolveError::NotConverged {
        iterations: opts.max_iterations,
        residual: res,
        target,
        history,
    })
}

// ---------------------------------------------------------------------------
// Dense fallback
// ---------------------------------------------------------------------------

/// Dense LU with partial pivoting; for fallback and small test systems.
pub fn solve_dense(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, LinSolveError> {
    let n = a.n;
    if n > DENSE_FALLBACK_MAX {
        return Err(LinSolveError::TooLargeForDense {
            n,
            max: DENSE_FALLBACK_MAX,
        });
    }
    if b.len() != n {
        return Err(LinSolveError::ShapeMismatch { n, got: b.len() });
    }
    let mut m = a.to_dense();
    let mut x: Vec<f64> = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (best, best_val) = (col..n)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|p, q| p.1.partial_cmp(&q.1).expect("finite"))
            .expect("nonempty");
        if best_val == 0.0 {
            return Err(LinSolveError::ZeroPivot {
                row: col,
                stage: "dense LU",
            });
        }
        m.swap(col, best);
        x.swap(col, best);
        perm.swap(col, best);
        let pivot = m[col][col];
        for r in col + 1..n {
            let factor = m[r][col] / pivot;
            if factor == 0.0 {
                continue;
            }
            m[r][col] = 0.0;
            for k in col + 1..n {
                let upper = m[col][k];
                m[r][k] -= factor * upper;
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= m[col][col];
        for r in 0..col {
            x[r] -= m[r][col] * x[col];
        }
    }
    Ok(x)
}

/// Solve Ax = b: ILU(0)+BiCGSTAB first, dense LU fallback for small systems.
pub fn solve(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, LinearSolveStats), LinSolveError> {
    if b.len() != a.n {
        return Err(LinSolveError::ShapeMismatch { n: a.n, got: b.len() });
    }
    let iterative = Ilu0::factor(a).and_then(|pre| bicgstab(a, b, x0, &pre, opts));
    match iterative {
        Ok((x, iterations, restarts)) => {
            let stats = LinearSolveStats {
                iterations,
                final_residual_l2: {
                    let mut r = vec![0.0; a.n];
                    a.matvec(&x, &mut r);
                    r.iter()
                        .zip(b)
                        .map(|(ax, bi)| (bi - ax) * (bi - ax))
                        .sum::<f64>()
                        .sqrt()
                },
                final_residual_sup: a.residual_sup(&x, b),
                used_dense_fallback: false,
                restarts,
            };
            Ok((x, stats))
        }
        Err(krylov_err) => {
            if a.n <= DENSE_FALLBACK_MAX {
                let x = solve_dense(a, b).map_err(|_| krylov_err)?;
                let stats = LinearSolveStats {
                    iterations: 0,
                    final_residual_l2: {
                        let mut r = vec![0.0; a.n];
                        a.matvec(&x, &mut r);
                        r.iter()
                            .zip(b)
                            .map(|(ax, bi)| (bi - ax) * (bi - ax))
                            .sum::<f64>()
                            .sqrt()
                    },
                    final_residual_sup: a.residual_sup(&x, b),
                    used_dense_fallback: true,
                    restarts: 0,
                };
                Ok((x, stats))
            } else {
                Err(krylov_err)
            }
        }
    }
}
