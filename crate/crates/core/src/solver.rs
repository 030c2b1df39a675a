//! Direct sparse LU solves.

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, MatMut};

use crate::assembly::{relative_residual, BlockOperator, SparseSystem};
use crate::error::{Error, Result};
use crate::frontal::FrontalLu;

/// Pivots below this multiple of `max |A|` count as zero.
pub const SINGULAR_THRESHOLD: f64 = 1e-14;

/// Largest `N` the monolithic `k >= 2` path accepts.
pub const MONOLITHIC_MAX_N: usize = 512;

/// How the `(U, P, Q)` system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// LU of the full three-field matrix.
    Monolithic,
    /// Eliminate `P` and `Q` element by element, factor the `U` system, and
    /// recover `P` and `Q` afterwards.
    #[default]
    Condensed,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "monolithic" => Ok(Strategy::Monolithic),
            "condensed" => Ok(Strategy::Condensed),
            _ => Err(Error::InvalidParameter(format!(
                "unknown solver strategy '{s}' (expected monolithic or condensed)"
            ))),
        }
    }
}

/// Reusable sparse LU factors (COLAMD column ordering, partial pivoting).
pub struct Factorization {
    dim: usize,
    max_abs: f64,
    norm1: f64,
    /// The factored matrix is `diag(row) A diag(col)`.
    row: Vec<f64>,
    col: Vec<f64>,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("dim", &self.dim)
            .field("max_abs", &self.max_abs)
            .finish()
    }
}

fn to_faer(system: &SparseSystem, row: &[f64], col: &[f64]) -> Result<SparseColMat<usize, f64>> {
    let mut trip = Vec::with_capacity(system.nnz());
    for i in 0..system.dim {
        for k in system.row_ptr[i]..system.row_ptr[i + 1] {
            let j = system.col_idx[k];
            trip.push(Triplet::new(i, j, row[i] * system.values[k] * col[j]));
        }
    }
    SparseColMat::try_new_from_triplets(system.dim, system.dim, &trip)
        .map_err(|e| Error::InvalidParameter(format!("bad sparse structure: {e:?}")))
}

/// One sweep of row then column max-scaling.
fn equilibrate(system: &SparseSystem) -> (Vec<f64>, Vec<f64>) {
    let n = system.dim;
    let inv = |m: f64| if m > 0.0 { 1.0 / m } else { 1.0 };
    let row: Vec<f64> = (0..n)
        .map(|i| {
            let r = system.row_ptr[i]..system.row_ptr[i + 1];
            inv(system.values[r].iter().fold(0.0f64, |m, v| m.max(v.abs())))
        })
        .collect();
    let mut colmax = vec![0.0f64; n];
    for i in 0..n {
        for k in system.row_ptr[i]..system.row_ptr[i + 1] {
            let j = system.col_idx[k];
            colmax[j] = colmax[j].max((row[i] * system.values[k]).abs());
        }
    }
    (row, colmax.into_iter().map(inv).collect())
}

/// Factors `system`'s matrix after equilibrating it; the singularity test
/// applies to the equilibrated matrix.
pub fn factorize(system: &SparseSystem) -> Result<Factorization> {
    let dim = system.dim;
    if system.row_ptr.len() != dim + 1 {
        return Err(Error::DimensionMismatch {
            expected: dim + 1,
            actual: system.row_ptr.len(),
        });
    }
    let max_abs = system.max_abs();
    if dim == 0 || max_abs == 0.0 {
        return Err(Error::Singular("matrix is empty or zero".into()));
    }
    if system.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("matrix has non-finite entries".into()));
    }
    let (row, col) = equilibrate(system);
    let mut col_sums = vec![0.0; dim];
    for i in 0..dim {
        for k in system.row_ptr[i]..system.row_ptr[i + 1] {
            let j = system.col_idx[k];
            col_sums[j] += (row[i] * system.values[k] * col[j]).abs();
        }
    }
    let norm1 = col_sums.iter().fold(0.0f64, |m, v| m.max(*v));
    let mat = to_faer(system, &row, &col)?;
    let lu = mat.sp_lu().map_err(|e| match e {
        LuError::SymbolicSingular { index } => Error::Singular(format!("structurally singular at column {index}")),
        LuError::Generic(g) => Error::Singular(format!("factorization failed: {g:?}")),
    })?;
    let f = Factorization {
        dim,
        max_abs,
        norm1,
        row,
        col,
        lu,
    };
    // a vanishing pivot shows up as a non-finite or enormous inverse; the
    // equilibrated matrix has max |a_ij| = 1
    let est = f.inverse_norm1_estimate()?;
    if !est.is_finite() || est * SINGULAR_THRESHOLD > 1.0 {
        return Err(Error::Singular(format!(
            "pivot below {SINGULAR_THRESHOLD:e} * max|A| (estimated ||A^-1||_1 = {est:e})"
        )));
    }
    Ok(f)
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn solve_raw(&self, x: &mut [f64], transpose: bool) {
        let n = x.len();
        let m = MatMut::from_column_major_slice_mut(x, n, 1);
        if transpose {
            self.lu.solve_transpose_in_place_with_conj(Conj::No, m);
        } else {
            self.lu.solve_in_place_with_conj(Conj::No, m);
        }
    }

    /// Solves `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: rhs.len(),
            });
        }
        let mut x: Vec<f64> = rhs.iter().zip(&self.row).map(|(b, r)| b * r).collect();
        self.solve_raw(&mut x, false);
        for (v, c) in x.iter_mut().zip(&self.col) {
            *v *= c;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("solve produced non-finite values".into()));
        }
        Ok(x)
    }

    /// Largest `|a_ij|` of the original matrix.
    pub fn max_abs(&self) -> f64 {
        self.max_abs
    }

    /// Hager-Higham estimate of `||A^-1||_1` for the equilibrated matrix.
    pub fn inverse_norm1_estimate(&self) -> Result<f64> {
        let n = self.dim;
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            self.solve_raw(&mut x, false);
            let norm: f64 = x.iter().map(|v| v.abs()).sum();
            if !norm.is_finite() {
                return Ok(f64::INFINITY);
            }
            if norm <= est {
                break;
            }
            est = norm;
            let mut z: Vec<f64> = x.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            self.solve_raw(&mut z, true);
            let (j, zmax) = z.iter().enumerate().fold(
                (0, 0.0f64),
                |(bj, bm), (j, v)| if v.abs() > bm { (j, v.abs()) } else { (bj, bm) },
            );
            let zx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= zx {
                break;
            }
            x = vec![0.0; n];
            x[j] = 1.0;
        }
        Ok(est)
    }

    /// Estimated 1-norm condition number of the equilibrated matrix.
    pub fn condition_estimate(&self) -> Result<f64> {
        Ok(self.norm1 * self.inverse_norm1_estimate()?)
    }
}

/// Solution of a full `(U, P, Q)` system with its residual.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    /// `||B x - F|| / ||F||` on the monolithic system.
    pub residual: f64,
    pub strategy: Strategy,
}

/// Solves the LDG system with the chosen strategy. The residual is always
/// measured on the monolithic operator.
pub fn solve_blocks(op: &BlockOperator, degree: usize, strategy: Strategy) -> Result<SolveOutcome> {
    let rhs = op.rhs();
    let x = match strategy {
        Strategy::Monolithic => {
            if degree >= 2 && op.n > MONOLITHIC_MAX_N {
                return Err(Error::InvalidParameter(format!(
                    "monolithic LU at N = {} with k = {degree} exceeds the memory guard (N <= {MONOLITHIC_MAX_N}); use the condensed strategy",
                    op.n
                )));
            }
            let sys = op.to_sparse();
            factorize(&sys)?.solve(&sys.rhs)?
        }
        Strategy::Condensed => {
            let sys = op.condense();
            let u = FrontalLu::factorize(&sys, SINGULAR_THRESHOLD)?.solve(&sys.rhs)?;
            op.recover(&u)?
        }
    };
    let bx = op.apply(&x)?;
    let residual = relative_residual(&bx, &rhs);
    Ok(SolveOutcome { x, residual, strategy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity() {
        let t: Vec<_> = (0..5).map(|i| (i, i, 1.0)).collect();
        let sys = SparseSystem::from_triplets(5, &t, vec![0.0; 5]).unwrap();
        let f = factorize(&sys).unwrap();
        let b = vec![1.0, -2.0, 3.5, 0.0, 7.0];
        assert_eq!(f.solve(&b).unwrap(), b);
        assert!((f.condition_estimate().unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_two_by_two() {
        let sys = SparseSystem::from_triplets(2, &[(0, 0, 2.0), (1, 1, 4.0)], vec![2.0, 8.0]).unwrap();
        let x = factorize(&sys).unwrap().solve(&sys.rhs).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn needs_pivoting() {
        let sys = SparseSystem::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)], vec![3.0, 5.0]).unwrap();
        let x = factorize(&sys).unwrap().solve(&sys.rhs).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14 && (x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_is_rejected() {
        let sys = SparseSystem::from_triplets(2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)], vec![1.0, 1.0])
            .unwrap();
        assert!(matches!(factorize(&sys), Err(Error::Singular(_))));
        let empty_col = SparseSystem::from_triplets(2, &[(0, 0, 1.0), (1, 0, 1.0)], vec![1.0, 1.0]).unwrap();
        assert!(matches!(factorize(&empty_col), Err(Error::Singular(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let sys = SparseSystem::from_triplets(2, &[(0, 0, 1.0), (1, 1, 1.0)], vec![0.0; 2]).unwrap();
        assert!(matches!(
            factorize(&sys).unwrap().solve(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn strategy_names() {
        assert_eq!(Strategy::parse("monolithic").unwrap(), Strategy::Monolithic);
        assert_eq!(Strategy::parse("condensed").unwrap(), Strategy::Condensed);
        assert!(Strategy::parse("cg").is_err());
    }
}
