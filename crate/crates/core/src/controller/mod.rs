//! Backstepping regulator with pseudoinverse redundancy resolution.
//!
//! The joint torque `ζ` is treated as a virtual control. The outer loop asks
//! for the computed-torque law `Ψ = D a + C q̇ + g`; the inner loop drives the
//! torque error `w = ζ - Ψ` to zero by commanding the torque rate
//!
//! ```text
//! ζ̇ = Ψ̇ - R⁻¹ (Γ w + Bᵀ P e)
//! ```
//!
//! which renders `V = eᵀ P e + wᵀ R w` non-increasing with
//! `V̇ = -eᵀ Q e - 2 wᵀ Γ w`. The torque rate is then realized by the muscles
//! through the minimum-norm activation rates in [`control_input`].

mod lyapunov;
mod redundancy;

pub use lyapunov::{lyapunov_residual, solve_lyapunov};
pub use redundancy::{control_input, min_norm_solve};

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{self, mass_matrix, DynamicsTerms};
use crate::error::{check_finite, check_len, Error, Result};
use crate::kinematics::LinkageModel;

/// How `Ψ̇` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsiDotMode {
    /// `(Ψ_k - Ψ_{k-1}) / dt`, zero on the first step.
    #[default]
    BackwardDifference,
    /// `Ḋ a + D ȧ + d/dt (C q̇ + g)` by directional differences along the state flow.
    DirectionalAnalytic,
}

/// Gains and numerical settings of the regulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Diagonal of `Kp` (1/s²).
    pub kp: DVector<f64>,
    /// Diagonal of `Kd` (1/s).
    pub kd: DVector<f64>,
    /// `Q`, 2n×2n SPD.
    pub q: DMatrix<f64>,
    /// `R`, n×n SPD.
    pub r: DMatrix<f64>,
    /// `Γ`, n×n SPD.
    pub gamma: DMatrix<f64>,
    pub pinv_rel_tol: f64,
    pub psi_dot_mode: PsiDotMode,
    /// Optional per-muscle bound on `|u|` (m/s).
    pub activation_limit: Option<f64>,
}

impl ControllerConfig {
    pub const DEFAULT_PINV_REL_TOL: f64 = 1e-10;

    pub fn dof(&self) -> usize {
        self.kp.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.kp.len();
        check_len("Kd", n, self.kd.len())?;
        for (name, m, size) in [
            ("Q", &self.q, 2 * n),
            ("R", &self.r, n),
            ("Gamma", &self.gamma, n),
        ] {
            check_len(name, size, m.nrows())?;
            check_len(name, size, m.ncols())?;
        }
        for (name, v) in [("Kp", &self.kp), ("Kd", &self.kd)] {
            if !v.iter().all(|x| x.is_finite() && *x > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "{name} must have finite positive entries"
                )));
            }
        }
        require_spd("Q", &self.q)?;
        require_spd("R", &self.r)?;
        require_spd("Gamma", &self.gamma)?;
        if !(self.pinv_rel_tol.is_finite() && self.pinv_rel_tol >= 0.0 && self.pinv_rel_tol < 1.0) {
            return Err(Error::InvalidModel(
                "pinv_rel_tol must lie in [0, 1)".into(),
            ));
        }
        if let Some(lim) = self.activation_limit {
            if !(lim.is_finite() && lim > 0.0) {
                return Err(Error::InvalidModel(
                    "activation_limit must be finite and positive".into(),
                ));
            }
        }
        Ok(())
    }
}

fn require_spd(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    check_finite(name, m.as_slice())?;
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).abs().max() > 1e-12 * scale || m.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(name));
    }
    Ok(())
}

/// Stacked tracking error `e = (q - q_des, q̇ - q̇_des)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorState {
    pub e: DVector<f64>,
}

impl ErrorState {
    pub fn dof(&self) -> usize {
        self.e.len() / 2
    }

    pub fn position(&self) -> DVector<f64> {
        self.e.rows(0, self.dof()).into_owned()
    }

    pub fn velocity(&self) -> DVector<f64> {
        let n = self.dof();
        self.e.rows(n, n).into_owned()
    }
}

pub fn tracking_error(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    q_des: &DVector<f64>,
    qdot_des: &DVector<f64>,
) -> Result<ErrorState> {
    let n = q.len();
    check_len("joint velocity", n, qdot.len())?;
    check_len("desired position", n, q_des.len())?;
    check_len("desired velocity", n, qdot_des.len())?;
    let mut e = DVector::zeros(2 * n);
    e.rows_mut(0, n).copy_from(&(q - q_des));
    e.rows_mut(n, n).copy_from(&(qdot - qdot_des));
    Ok(ErrorState { e })
}

/// Synthetic acceleration `a = q̈_des - Kd q̃̇ - Kp q̃`.
pub fn synthetic_acceleration(
    err: &ErrorState,
    qddot_des: &DVector<f64>,
    cfg: &ControllerConfig,
) -> DVector<f64> {
    qddot_des - cfg.kd.component_mul(&err.velocity()) - cfg.kp.component_mul(&err.position())
}

/// Computed-torque feedback `Ψ = D a + C q̇ + g`.
pub fn synthetic_feedback(
    terms: &DynamicsTerms,
    qdot: &DVector<f64>,
    err: &ErrorState,
    qddot_des: &DVector<f64>,
    cfg: &ControllerConfig,
) -> Result<DVector<f64>> {
    let n = cfg.dof();
    check_len("tracking error", 2 * n, err.e.len())?;
    check_len("desired acceleration", n, qddot_des.len())?;
    check_len("dynamics terms", n, terms.gravity.len())?;
    let a = synthetic_acceleration(err, qddot_des, cfg);
    Ok(&terms.mass * a + terms.bias(qdot))
}

/// Constant error-system matrix `A = [0 I; -Kp -Kd]`.
pub fn error_matrix(cfg: &ControllerConfig) -> DMatrix<f64> {
    let n = cfg.dof();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    for i in 0..n {
        a[(n + i, i)] = -cfg.kp[i];
        a[(n + i, n + i)] = -cfg.kd[i];
    }
    a
}

/// `(A, B)` with `B = [0; D⁻¹]` for the current inertia matrix.
pub fn error_system(
    mass: &DMatrix<f64>,
    cfg: &ControllerConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = cfg.dof();
    check_len("inertia matrix", n, mass.nrows())?;
    let inv = dynamics::solve_inertia(mass, &DMatrix::identity(n, n))?;
    let mut b = DMatrix::zeros(2 * n, n);
    b.view_mut((n, 0), (n, n)).copy_from(&inv);
    Ok((error_matrix(cfg), b))
}

/// `ζ̇ = Ψ̇ - R⁻¹ (Γ w + Bᵀ P e)`, with `R⁻¹` applied by Cholesky solve.
pub fn zeta_dot(
    psi_dot: &DVector<f64>,
    w: &DVector<f64>,
    err: &ErrorState,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    cfg: &ControllerConfig,
) -> Result<DVector<f64>> {
    let rhs = &cfg.gamma * w + b.transpose() * (p * &err.e);
    let chol = cfg
        .r
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("R"))?;
    Ok(psi_dot - chol.solve(&rhs))
}

/// `(V, V̇)` with `V = eᵀPe + wᵀRw` and `V̇ = -eᵀQe + 2wᵀ(BᵀPe + R(ζ̇ - Ψ̇))`.
pub fn lyapunov_diagnostics(
    err: &ErrorState,
    w: &DVector<f64>,
    p: &DMatrix<f64>,
    cfg: &ControllerConfig,
    zeta_dot: &DVector<f64>,
    psi_dot: &DVector<f64>,
    b: &DMatrix<f64>,
) -> (f64, f64) {
    let e = &err.e;
    let v = e.dot(&(p * e)) + w.dot(&(&cfg.r * w));
    let coupling = b.transpose() * (p * e) + &cfg.r * (zeta_dot - psi_dot);
    let v_dot = -e.dot(&(&cfg.q * e)) + 2.0 * w.dot(&coupling);
    (v, v_dot)
}

/// `-eᵀQe - 2wᵀΓw`, the value `V̇` takes when `ζ̇` follows the control law.
pub fn closed_form_v_dot(err: &ErrorState, w: &DVector<f64>, cfg: &ControllerConfig) -> f64 {
    -err.e.dot(&(&cfg.q * &err.e)) - 2.0 * w.dot(&(&cfg.gamma * w))
}

/// Backward-difference `Ψ̇` estimator with a one-sample history.
#[derive(Debug, Clone, Default)]
pub struct PsiHistory {
    previous: Option<DVector<f64>>,
}

impl PsiHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Estimate from the previous sample without recording `psi`.
    /// Returns `(Ψ̇, first_step)`; the first call yields zero.
    pub fn estimate(&self, psi: &DVector<f64>, dt: f64) -> (DVector<f64>, bool) {
        match &self.previous {
            Some(prev) => ((psi - prev) / dt, false),
            None => (DVector::zeros(psi.len()), true),
        }
    }

    pub fn push(&mut self, psi: DVector<f64>) {
        self.previous = Some(psi);
    }
}

/// Step along the state flow for the directional `Ψ̇`.
pub const DIRECTIONAL_STEP: f64 = 1e-5;

/// Set-point `Ψ̇` from the state flow `(q̇, q̈)`:
/// `Ḋ a + D ȧ + d/dt (C q̇ + g)` with `ȧ = -Kd (q̈ - q̈_des) - Kp q̃̇`.
#[allow(clippy::too_many_arguments)]
pub fn psi_dot_directional(
    model: &LinkageModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
    err: &ErrorState,
    qddot_des: &DVector<f64>,
    terms: &DynamicsTerms,
    cfg: &ControllerConfig,
) -> Result<DVector<f64>> {
    let h = DIRECTIONAL_STEP;
    let a = synthetic_acceleration(err, qddot_des, cfg);
    let a_dot = -cfg.kd.component_mul(&(qddot - qddot_des)) - cfg.kp.component_mul(&err.velocity());
    let (qp, qm) = (q + qdot * h, q - qdot * h);
    let (vp, vm) = (qdot + qddot * h, qdot - qddot * h);
    let mass_dot = (mass_matrix(model, &qp)? - mass_matrix(model, &qm)?) / (2.0 * h);
    let bias_p = dynamics::dynamics_terms(model, &qp, &vp)?.bias(&vp);
    let bias_m = dynamics::dynamics_terms(model, &qm, &vm)?.bias(&vm);
    Ok(mass_dot * a + &terms.mass * a_dot + (bias_p - bias_m) / (2.0 * h))
}

/// Synthesized regulator: configuration plus the constant `A` and `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    cfg: ControllerConfig,
    a: DMatrix<f64>,
    p: DMatrix<f64>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        let a = error_matrix(&cfg);
        let p = solve_lyapunov(&a, &cfg.q)?;
        Ok(Self { cfg, a, p })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
}

/// Everything the regulator computed during one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerInternals {
    pub psi: DVector<f64>,
    pub psi_dot: DVector<f64>,
    pub w: DVector<f64>,
    pub zeta_dot: DVector<f64>,
    pub b: DMatrix<f64>,
    pub v: f64,
    pub v_dot: f64,
    pub u: DVector<f64>,
    pub first_step: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize) -> ControllerConfig {
        ControllerConfig {
            kp: DVector::from_element(n, 4.0),
            kd: DVector::from_element(n, 4.0),
            q: DMatrix::identity(2 * n, 2 * n) * 10.0,
            r: DMatrix::identity(n, n),
            gamma: DMatrix::identity(n, n) * 3.0,
            pinv_rel_tol: 1e-10,
            psi_dot_mode: PsiDotMode::BackwardDifference,
            activation_limit: None,
        }
    }

    #[test]
    fn zero_error_at_reference() {
        let q = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let v = DVector::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(tracking_error(&q, &v, &q, &v).unwrap().e, DVector::zeros(6));
    }

    #[test]
    fn swapping_reference_negates_position_error() {
        let q = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let d = DVector::from_vec(vec![0.5, -0.2, 0.0]);
        let z = DVector::zeros(3);
        let a = tracking_error(&q, &z, &d, &z).unwrap();
        let b = tracking_error(&d, &z, &q, &z).unwrap();
        assert_eq!(a.position(), -b.position());
    }

    #[test]
    fn identity_plant_feedback_is_synthetic_acceleration() {
        let c = cfg(3);
        let terms = DynamicsTerms {
            mass: DMatrix::identity(3, 3),
            coriolis: DMatrix::zeros(3, 3),
            gravity: DVector::zeros(3),
        };
        let err = ErrorState {
            e: DVector::from_vec(vec![0.1, -0.2, 0.3, 1.0, 0.0, -1.0]),
        };
        let qdd_des = DVector::from_vec(vec![0.5, 0.0, 0.0]);
        let psi = synthetic_feedback(&terms, &DVector::zeros(3), &err, &qdd_des, &c).unwrap();
        let expected = DVector::from_vec(vec![0.5 - 4.0 - 0.4, 0.8, 4.0 - 1.2]);
        assert!((psi - expected).norm() < 1e-15);
    }

    #[test]
    fn set_point_feedback_is_gravity() {
        let c = cfg(2);
        let terms = DynamicsTerms {
            mass: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            coriolis: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            gravity: DVector::from_vec(vec![3.0, -1.5]),
        };
        let err = ErrorState {
            e: DVector::zeros(4),
        };
        let psi =
            synthetic_feedback(&terms, &DVector::zeros(2), &err, &DVector::zeros(2), &c).unwrap();
        assert_eq!(psi, terms.gravity);
    }

    #[test]
    fn critically_damped_gains_give_double_pole() {
        let a = error_matrix(&cfg(3));
        for ev in a.complex_eigenvalues().iter() {
            assert!((ev.re + 2.0).abs() < 1e-6 && ev.im.abs() < 1e-6, "{ev}");
        }
    }

    #[test]
    fn input_matrix_has_zero_top_block() {
        let mass = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let (_, b) = error_system(&mass, &cfg(2)).unwrap();
        assert_eq!(b.view((0, 0), (2, 2)).norm(), 0.0);
        assert!((b.view((2, 0), (2, 2)) * &mass - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn zeta_dot_special_cases() {
        let c = cfg(3);
        let b = DMatrix::zeros(6, 3);
        let p = DMatrix::identity(6, 6);
        let zero_err = ErrorState {
            e: DVector::zeros(6),
        };
        let psi_dot = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let zd = zeta_dot(&psi_dot, &DVector::zeros(3), &zero_err, &b, &p, &c).unwrap();
        assert_eq!(zd, psi_dot);
        let w = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let zd = zeta_dot(&DVector::zeros(3), &w, &zero_err, &b, &p, &c).unwrap();
        assert!((zd + &w * 3.0).norm() < 1e-15);
    }

    #[test]
    fn diagnostics_vanish_at_equilibrium() {
        let c = cfg(3);
        let ctrl = Controller::new(c.clone()).unwrap();
        let err = ErrorState {
            e: DVector::zeros(6),
        };
        let z = DVector::zeros(3);
        let (v, vd) = lyapunov_diagnostics(&err, &z, ctrl.p(), &c, &z, &z, &DMatrix::zeros(6, 3));
        assert_eq!((v, vd), (0.0, 0.0));
    }

    #[test]
    fn history_differences_linear_signal() {
        let mut hist = PsiHistory::new();
        let dt = 0.01;
        let sample = |t: f64| DVector::from_vec(vec![t, 2.0 * t, 3.0 * t]);
        let (first, flagged) = hist.estimate(&sample(0.0), dt);
        assert!(flagged);
        assert_eq!(first, DVector::zeros(3));
        hist.push(sample(0.0));
        let (d, flagged) = hist.estimate(&sample(dt), dt);
        assert!(!flagged);
        assert!((d - DVector::from_vec(vec![1.0, 2.0, 3.0])).norm() < 1e-12);
        hist.push(sample(dt));
        let (d, _) = hist.estimate(&sample(dt), dt);
        assert_eq!(d, DVector::zeros(3));
    }

    #[test]
    fn config_validation_names_field() {
        let mut c = cfg(3);
        c.kp[1] = -1.0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("Kp"), "{msg}");
        let mut c = cfg(3);
        c.r[(0, 0)] = -1.0;
        assert_eq!(c.validate().unwrap_err(), Error::NotPositiveDefinite("R"));
    }
}
