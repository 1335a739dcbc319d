use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};

/// Solves the continuous Lyapunov equation `AᵀP + PA = -Q`.
///
/// The equation is vectorized as `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = -vec(Q)` and
/// solved by LU with one step of iterative refinement. `A` must be Hurwitz;
/// otherwise the offending eigenvalue is reported.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    check_len("Lyapunov A columns", n, a.ncols())?;
    check_len("Lyapunov Q rows", n, q.nrows())?;
    check_len("Lyapunov Q columns", n, q.ncols())?;
    if !a.iter().chain(q.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("Lyapunov operands"));
    }

    if let Some(bad) = a
        .complex_eigenvalues()
        .iter()
        .copied()
        .max_by(|x, y| x.re.total_cmp(&y.re))
        .filter(|ev| ev.re >= 0.0)
    {
        return Err(Error::NotHurwitz {
            re: bad.re,
            im: bad.im,
        });
    }

    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DMatrix::from_column_slice(n * n, 1, q.as_slice());
    let lu = op.clone().lu();
    let mut x = lu.solve(&rhs).ok_or(Error::Singular("Lyapunov operator"))?;
    let residual = &rhs - &op * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    let p = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Frobenius norm of `AᵀP + PA + Q`.
pub fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a.transpose() * p + p * a + q).norm()
}
