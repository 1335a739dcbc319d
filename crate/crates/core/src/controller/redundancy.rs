use nalgebra::{DMatrix, DVector};

use crate::error::{check_finite, check_len, Error, Result};

/// Minimum-norm least-squares solution of `J x = rhs` through a truncated SVD.
///
/// Singular values at or below `rel_tol · σ_max` are dropped. Fails with
/// [`Error::ControlAuthorityLost`] when `J` carries no usable direction.
pub fn min_norm_solve(j: &DMatrix<f64>, rhs: &DVector<f64>, rel_tol: f64) -> Result<DVector<f64>> {
    check_len("pseudoinverse right-hand side", j.nrows(), rhs.len())?;
    check_finite("pseudoinverse operands", j.as_slice())?;
    check_finite("pseudoinverse operands", rhs.as_slice())?;
    let svd = j.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max.is_nan() || sigma_max <= 0.0 {
        return Err(Error::ControlAuthorityLost);
    }
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let cutoff = rel_tol * sigma_max;
    let mut x = DVector::zeros(j.ncols());
    for (i, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma > cutoff {
            let coeff = u.column(i).dot(rhs) / sigma;
            x += v_t.row(i).transpose() * coeff;
        }
    }
    Ok(x)
}

/// Activation rates `U = J⁺ (ζ̇ - (∂τ/∂q) q̇ - J L̇)` with `J = ∂τ/∂S`.
///
/// Uses the tendon-kinematics convention `Ṡ = L̇ + U`, so that the realized
/// torque rate `(∂τ/∂q) q̇ + J Ṡ` equals `ζ̇` whenever `J` has full row rank.
pub fn control_input(
    zeta_dot: &DVector<f64>,
    dtau_dq: &DMatrix<f64>,
    dtau_ds: &DMatrix<f64>,
    qdot: &DVector<f64>,
    ldot: &DVector<f64>,
    rel_tol: f64,
) -> Result<DVector<f64>> {
    let n = zeta_dot.len();
    check_len("∂τ/∂q rows", n, dtau_dq.nrows())?;
    check_len("∂τ/∂q columns", n, dtau_dq.ncols())?;
    check_len("∂τ/∂S rows", n, dtau_ds.nrows())?;
    check_len("joint velocity", n, qdot.len())?;
    check_len("muscle length rates", dtau_ds.ncols(), ldot.len())?;
    let rhs = zeta_dot - dtau_dq * qdot - dtau_ds * ldot;
    min_norm_solve(dtau_ds, &rhs, rel_tol)
}
