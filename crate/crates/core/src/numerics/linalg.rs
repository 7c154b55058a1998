use super::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;

fn check_square(a: &Matrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::Empty(format!("{what} has no rows")));
    }
    Ok(())
}

/// Lower Cholesky factor `L` with `L L^T = A`.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot is not strictly
/// positive and with [`Error::InvalidParameter`] when `A` is not symmetric.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    check_square(a, "cholesky input")?;
    let n = a.nrows();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..i {
            let (x, y) = (a[(i, j)], a[(j, i)]);
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::NonFinite("cholesky input".into()));
            }
            if (x - y).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidParameter(format!(
                    "cholesky input is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Lower triangle of `x` with the diagonal halved.
pub fn lower_half(x: &Matrix) -> Matrix {
    let mut out = x.lower_triangle();
    for i in 0..out.nrows().min(out.ncols()) {
        out[(i, i)] *= 0.5;
    }
    out
}

pub fn symmetrize(x: &Matrix) -> Matrix {
    (x + x.transpose()) * 0.5
}

fn check_factor(l: &Matrix) -> Result<()> {
    check_square(l, "Cholesky factor")?;
    for i in 0..l.nrows() {
        if !(l[(i, i)] > 0.0) {
            return Err(Error::NotPositiveDefinite {
                index: i,
                pivot: l[(i, i)],
            });
        }
    }
    Ok(())
}

/// `L^{-1} M` for lower-triangular `L`.
fn solve_lower(l: &Matrix, m: &Matrix) -> Matrix {
    l.solve_lower_triangular(m)
        .expect("triangular factor with positive diagonal is invertible")
}

/// `L^{-T} M` for lower-triangular `L`.
fn solve_lower_transpose(l: &Matrix, m: &Matrix) -> Matrix {
    l.tr_solve_lower_triangular(m)
        .expect("triangular factor with positive diagonal is invertible")
}

/// Reverse-mode derivative of the Cholesky factorization.
///
/// Given `L = chol(A)` and the cotangent `l_bar` of `L` (only its lower
/// triangle is read), returns the symmetric cotangent of `A`:
/// `A_bar = sym(L^{-T} Phi(L^T L_bar) L^{-1})`.
pub fn cholesky_adjoint(l: &Matrix, l_bar: &Matrix) -> Result<Matrix> {
    check_factor(l)?;
    if l_bar.shape() != l.shape() {
        return Err(Error::DimensionMismatch(format!(
            "cotangent shape {:?} differs from factor shape {:?}",
            l_bar.shape(),
            l.shape()
        )));
    }
    let lb = l_bar.lower_triangle();
    let inner = lower_half(&(l.transpose() * lb));
    // L^{-T} inner L^{-1} = L^{-T} (L^{-T} inner^T)^T
    let left = solve_lower_transpose(l, &inner);
    let s = solve_lower_transpose(l, &left.transpose()).transpose();
    Ok(symmetrize(&s))
}

/// Forward-mode derivative of the Cholesky factorization:
/// `L_dot = L Phi(L^{-1} A_dot L^{-T})` for symmetric `a_dot`.
pub fn cholesky_tangent(l: &Matrix, a_dot: &Matrix) -> Result<Matrix> {
    check_factor(l)?;
    if a_dot.shape() != l.shape() {
        return Err(Error::DimensionMismatch(
            "tangent shape differs from factor shape".into(),
        ));
    }
    let left = solve_lower(l, a_dot);
    let inner = solve_lower(l, &left.transpose()).transpose();
    Ok(l * lower_half(&inner))
}

/// Inverse of a symmetric positive definite matrix together with its
/// Cholesky factor.
pub fn spd_inverse(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let l = cholesky(a)?;
    let n = a.nrows();
    let linv = solve_lower(&l, &Matrix::identity(n, n));
    let inv = linv.transpose() * &linv;
    Ok((symmetrize(&inv), l))
}
