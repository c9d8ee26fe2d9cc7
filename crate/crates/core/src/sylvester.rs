//! Dense solver for the generalized Sylvester equation `X S1 + B X S2 = E`.
//!
//! `B` (p x p) is symmetric positive semidefinite; `S1`, `S2` (q x q) are
//! symmetric with `S1 + δ S2` positive definite for every eigenvalue `δ` of
//! `B`. Diagonalizing `B = U Δ Uᵀ` decouples the rows of `Y = Uᵀ X`:
//! row `i` solves `y_i (S1 + δ_i S2) = (Uᵀ E)_i`.
//!
//! Rows sharing the same eigenvalue share one Cholesky factorization. The
//! operators used in fusion have `B = PᵀP` with a wide `P`, so most
//! eigenvalues are numerically zero and collapse into a single group.

use ndarray::{s, Array2, Axis};
use ndarray_linalg::{Cholesky, Diag, Eigh, Factorize, Solve, SolveTriangular, UPLO};
use thiserror::Error;

/// Relative residual above which a solve is rejected.
pub const RESIDUAL_LIMIT: f64 = 1e-9;

const ROW_REFINE_TARGET: f64 = 1e-13;
const MAX_REFINE_STEPS: usize = 3;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SylvesterError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{which} is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { which: &'static str, asymmetry: f64 },
    #[error("row system {row} is singular")]
    SingularRow { row: usize },
    #[error("relative residual {residual:.3e} exceeds {limit:.1e}")]
    Residual { residual: f64, limit: f64 },
    #[error("linear algebra failure: {0}")]
    Linalg(String),
}

#[derive(Debug, Clone)]
pub struct SylvesterSolution {
    pub x: Array2<f64>,
    /// `‖X S1 + B X S2 − E‖_F / ‖E‖_F`.
    pub residual: f64,
    /// Number of distinct `S1 + δ S2` factorizations.
    pub factorizations: usize,
}

/// Solves `X S1 + B X S2 = E` for `X` (p x q).
pub fn solve_sylvester(
    s1: &Array2<f64>,
    b: &Array2<f64>,
    s2: &Array2<f64>,
    e: &Array2<f64>,
) -> Result<SylvesterSolution, SylvesterError> {
    let (p, q) = e.dim();
    check_square("S1", s1, q)?;
    check_square("S2", s2, q)?;
    check_square("B", b, p)?;
    check_symmetric("S1", s1)?;
    check_symmetric("S2", s2)?;
    check_symmetric("B", b)?;

    let (mut delta, u) = b
        .eigh(UPLO::Lower)
        .map_err(|err| SylvesterError::Linalg(err.to_string()))?;
    let delta_max = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let clamp = p as f64 * f64::EPSILON * delta_max;
    for d in delta.iter_mut() {
        if d.abs() <= clamp {
            *d = 0.0;
        }
    }

    let e_rot = u.t().dot(e);
    let mut y = Array2::<f64>::zeros((p, q));
    let groups = group_rows(delta.as_slice().expect("contiguous"), clamp);
    for (d, rows) in &groups {
        let m = s1 + &(s2 * *d);
        let rhs = e_rot.select(Axis(0), rows);
        let solved = solve_row_group(&m, &rhs).map_err(|_| SylvesterError::SingularRow { row: rows[0] })?;
        for (k, &r) in rows.iter().enumerate() {
            y.row_mut(r).assign(&solved.row(k));
        }
    }

    let x = u.dot(&y);
    let residual = relative_residual(s1, b, s2, e, &x);
    if !(residual <= RESIDUAL_LIMIT) {
        return Err(SylvesterError::Residual {
            residual,
            limit: RESIDUAL_LIMIT,
        });
    }
    Ok(SylvesterSolution {
        x,
        residual,
        factorizations: groups.len(),
    })
}

/// Solves `X S = E` for symmetric positive definite `S`.
pub fn solve_right_linear(e: &Array2<f64>, s: &Array2<f64>) -> Result<Array2<f64>, SylvesterError> {
    let q = e.ncols();
    check_square("S", s, q)?;
    check_symmetric("S", s)?;
    let x = solve_row_group(s, e).map_err(|_| SylvesterError::SingularRow { row: 0 })?;
    let r = e - &x.dot(s);
    let residual = frob(&r) / frob(e).max(1e-30);
    if !(residual <= RESIDUAL_LIMIT) {
        return Err(SylvesterError::Residual {
            residual,
            limit: RESIDUAL_LIMIT,
        });
    }
    Ok(x)
}

/// `‖X S1 + B X S2 − E‖_F / max(‖E‖_F, 1e-30)`.
pub fn relative_residual(s1: &Array2<f64>, b: &Array2<f64>, s2: &Array2<f64>, e: &Array2<f64>, x: &Array2<f64>) -> f64 {
    let r = x.dot(s1) + b.dot(x).dot(s2) - e;
    frob(&r) / frob(e).max(1e-30)
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_square(which: &str, m: &Array2<f64>, n: usize) -> Result<(), SylvesterError> {
    if m.dim() != (n, n) {
        return Err(SylvesterError::DimensionMismatch(format!(
            "{which} is {:?}, expected ({n}, {n})",
            m.dim()
        )));
    }
    Ok(())
}

fn check_symmetric(which: &'static str, m: &Array2<f64>) -> Result<(), SylvesterError> {
    let scale = frob(m);
    if scale == 0.0 {
        return Ok(());
    }
    let asym = frob(&(m - &m.t())) / scale;
    if asym > SYMMETRY_TOL {
        return Err(SylvesterError::NotSymmetric { which, asymmetry: asym });
    }
    Ok(())
}

/// Groups row indices by eigenvalue. Eigenvalues come sorted from `eigh`,
/// so neighbouring values within `tol` share a group.
fn group_rows(delta: &[f64], tol: f64) -> Vec<(f64, Vec<usize>)> {
    let mut order: Vec<usize> = (0..delta.len()).collect();
    order.sort_by(|&a, &b| delta[a].total_cmp(&delta[b]));
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some((d, rows)) if (delta[i] - *d).abs() <= tol => rows.push(i),
            _ => groups.push((delta[i], vec![i])),
        }
    }
    groups
}

enum Factor {
    Cholesky(Array2<f64>),
    Lu(ndarray_linalg::LUFactorized<ndarray::OwnedRepr<f64>>),
}

impl Factor {
    fn new(m: &Array2<f64>) -> Result<Self, ()> {
        match m.cholesky(UPLO::Lower) {
            Ok(l) => Ok(Factor::Cholesky(l)),
            Err(_) => m.factorize().map(Factor::Lu).map_err(|_| ()),
        }
    }

    /// Solves `M Z = R` column by column.
    fn solve(&self, r: &Array2<f64>) -> Result<Array2<f64>, ()> {
        match self {
            Factor::Cholesky(l) => {
                let z = l.solve_triangular(UPLO::Lower, Diag::NonUnit, r).map_err(|_| ())?;
                l.t()
                    .to_owned()
                    .solve_triangular(UPLO::Upper, Diag::NonUnit, &z)
                    .map_err(|_| ())
            }
            Factor::Lu(lu) => {
                let mut out = Array2::zeros(r.dim());
                for (k, col) in r.columns().into_iter().enumerate() {
                    let x = lu.solve(&col.to_owned()).map_err(|_| ())?;
                    out.column_mut(k).assign(&x);
                }
                Ok(out)
            }
        }
    }
}

/// Solves `Y M = R` for symmetric `M`, rows of `R` independent, with a few
/// steps of iterative refinement.
fn solve_row_group(m: &Array2<f64>, r: &Array2<f64>) -> Result<Array2<f64>, ()> {
    let factor = Factor::new(m)?;
    let rt = r.t().to_owned();
    let mut yt = factor.solve(&rt)?;
    if yt.iter().any(|v| !v.is_finite()) {
        return Err(());
    }
    for _ in 0..MAX_REFINE_STEPS {
        let resid = &rt - &m.dot(&yt);
        let worst = (0..rt.ncols())
            .map(|c| {
                let num = frob_col(&resid, c);
                let den = frob_col(&rt, c).max(1e-300);
                num / den
            })
            .fold(0.0f64, f64::max);
        if worst <= ROW_REFINE_TARGET {
            break;
        }
        let corr = factor.solve(&resid)?;
        yt += &corr;
    }
    Ok(yt.t().to_owned())
}

fn frob_col(m: &Array2<f64>, c: usize) -> f64 {
    m.slice(s![.., c]).iter().map(|v| v * v).sum::<f64>().sqrt()
}
