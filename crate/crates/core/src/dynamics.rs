//! Joint-space rigid-body terms `D(q) q̈ + C(q, q̇) q̇ + g(q) = τ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_finite, check_len, Error, Result};
use crate::kinematics::LinkageModel;

/// Step used for the finite-difference partials of `D` in the Christoffel sum.
pub const CHRISTOFFEL_STEP: f64 = 1e-6;

/// Condition number beyond which `D` is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    /// Inertia matrix `D(q)`.
    pub mass: DMatrix<f64>,
    /// Coriolis/centripetal matrix `C(q, q̇)`.
    pub coriolis: DMatrix<f64>,
    /// Gravity torque `g(q)`.
    pub gravity: DVector<f64>,
}

impl DynamicsTerms {
    /// `C q̇ + g`.
    pub fn bias(&self, qdot: &DVector<f64>) -> DVector<f64> {
        &self.coriolis * qdot + &self.gravity
    }
}

pub fn mass_matrix(model: &LinkageModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_q(q)?;
    Ok(mass_matrix_unchecked(model, q))
}

fn mass_matrix_unchecked(model: &LinkageModel, q: &DVector<f64>) -> DMatrix<f64> {
    let n = model.dof();
    let poses = model.poses_unchecked(q);
    let mut mass = DMatrix::zeros(n, n);
    for link in model.links() {
        let pose = &poses[link.frame];
        let com = LinkageModel::world_point(&poses, link.frame, &link.com);
        let jv = model.point_jacobian(&poses, link.frame, &com);
        let jw = model.angular_jacobian(&poses, link.frame);
        let rot = pose.rotation.to_rotation_matrix();
        let inertia_world = rot.matrix() * link.inertia * rot.matrix().transpose();
        mass += link.mass * jv.transpose() * &jv + jw.transpose() * inertia_world * &jw;
    }
    // Remove round-off asymmetry from the two products above.
    (&mass + mass.transpose()) * 0.5
}

/// Gravitational potential energy `-Σ m gravityᵀ p_com`.
pub fn potential_energy(model: &LinkageModel, q: &DVector<f64>) -> Result<f64> {
    model.check_q(q)?;
    let poses = model.poses_unchecked(q);
    Ok(model
        .links()
        .iter()
        .map(|link| {
            let com = LinkageModel::world_point(&poses, link.frame, &link.com);
            -link.mass * model.gravity().dot(&com)
        })
        .sum())
}

/// `g(q) = ∂V/∂q = -Σ m J_vᵀ gravity`.
pub fn gravity_vector(model: &LinkageModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_q(q)?;
    let poses = model.poses_unchecked(q);
    let mut g = DVector::zeros(model.dof());
    for link in model.links() {
        let com = LinkageModel::world_point(&poses, link.frame, &link.com);
        let jv = model.point_jacobian(&poses, link.frame, &com);
        g -= link.mass * jv.transpose() * model.gravity();
    }
    Ok(g)
}

/// Central-difference partials `∂D/∂q_k`, one matrix per joint.
pub fn mass_matrix_partials(model: &LinkageModel, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
    model.check_q(q)?;
    let h = CHRISTOFFEL_STEP;
    Ok((0..model.dof())
        .map(|k| {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            (mass_matrix_unchecked(model, &qp) - mass_matrix_unchecked(model, &qm)) / (2.0 * h)
        })
        .collect())
}

/// Coriolis matrix from Christoffel symbols of the first kind.
pub fn coriolis_matrix(
    model: &LinkageModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let partials = mass_matrix_partials(model, q)?;
    check_len("joint velocity", model.dof(), qdot.len())?;
    check_finite("joint velocity", qdot.as_slice())?;
    Ok(coriolis_from_partials(&partials, qdot))
}

fn coriolis_from_partials(partials: &[DMatrix<f64>], qdot: &DVector<f64>) -> DMatrix<f64> {
    let n = qdot.len();
    DMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| {
                0.5 * (partials[k][(i, j)] + partials[j][(i, k)] - partials[i][(j, k)]) * qdot[k]
            })
            .sum()
    })
}

pub fn dynamics_terms(
    model: &LinkageModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<DynamicsTerms> {
    model.check_q(q)?;
    check_len("joint velocity", model.dof(), qdot.len())?;
    check_finite("joint velocity", qdot.as_slice())?;
    let partials = mass_matrix_partials(model, q)?;
    Ok(DynamicsTerms {
        mass: mass_matrix_unchecked(model, q),
        coriolis: coriolis_from_partials(&partials, qdot),
        gravity: gravity_vector(model, q)?,
    })
}

/// Spectral condition number of a symmetric matrix.
pub fn condition_number(sym: &DMatrix<f64>) -> f64 {
    let eig = sym.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `D x = rhs` by Cholesky, flagging a numerically singular `D`.
pub fn solve_inertia(mass: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = condition_number(mass);
    if condition.is_nan() || condition > SINGULAR_CONDITION {
        return Err(Error::SingularInertia { condition });
    }
    let chol = mass
        .clone()
        .cholesky()
        .ok_or(Error::SingularInertia { condition })?;
    Ok(chol.solve(rhs))
}

/// `q̈ = D⁻¹ (τ - C q̇ - g)` given precomputed terms.
pub fn accelerations(
    terms: &DynamicsTerms,
    qdot: &DVector<f64>,
    tau: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("joint torque", terms.gravity.len(), tau.len())?;
    check_finite("joint torque", tau.as_slice())?;
    let rhs = tau - terms.bias(qdot);
    let sol = solve_inertia(
        &terms.mass,
        &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()),
    )?;
    Ok(sol.column(0).into_owned())
}

pub fn forward_dynamics(
    model: &LinkageModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    tau: &DVector<f64>,
) -> Result<DVector<f64>> {
    let terms = dynamics_terms(model, q, qdot)?;
    accelerations(&terms, qdot, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{DhRow, LinkInertia};
    use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};
    use std::f64::consts::FRAC_PI_2;

    /// Point-mass pendulum, joint axis horizontal, q = 0 hanging straight down.
    fn pendulum(mass: f64, length: f64) -> LinkageModel {
        let base = Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2),
        );
        let rows = vec![DhRow::revolute("swing", -FRAC_PI_2, 0.0, 0.0, 0.0)];
        let links = vec![LinkInertia {
            name: "bob".into(),
            frame: 1,
            mass,
            com: Vector3::new(length, 0.0, 0.0),
            inertia: Matrix3::zeros(),
        }];
        LinkageModel::new(base, rows, links, Vector3::new(0.0, 0.0, -9.81)).unwrap()
    }

    #[test]
    fn pendulum_closed_form() {
        let (m, l) = (2.5, 0.7);
        let model = pendulum(m, l);
        for &q in &[-1.2, -0.3, 0.0, 0.4, 2.0] {
            let qv = DVector::from_element(1, q);
            let terms = dynamics_terms(&model, &qv, &DVector::from_element(1, 0.8)).unwrap();
            assert!((terms.mass[(0, 0)] - m * l * l).abs() < 1e-12);
            assert!((terms.gravity[0] - m * 9.81 * l * q.sin()).abs() < 1e-12);
            let pe = potential_energy(&model, &qv).unwrap();
            assert!((pe + m * 9.81 * l * q.cos()).abs() < 1e-12);
            assert!(terms.coriolis[(0, 0)].abs() < 1e-8);
        }
    }

    #[test]
    fn pendulum_at_rest_has_zero_acceleration() {
        let model = pendulum(1.0, 1.0);
        let z = DVector::zeros(1);
        let qdd = forward_dynamics(&model, &z, &z, &z).unwrap();
        assert!(qdd[0].abs() < 1e-12);
    }

    #[test]
    fn coriolis_vanishes_at_rest() {
        let model = pendulum(1.0, 1.0);
        let c =
            coriolis_matrix(&model, &DVector::from_element(1, 0.3), &DVector::zeros(1)).unwrap();
        assert_eq!(c.norm(), 0.0);
    }

    #[test]
    fn zero_gravity_has_zero_potential() {
        let model = pendulum(3.0, 0.5).with_gravity(Vector3::zeros());
        for &q in &[0.0, 1.0, -2.0] {
            assert_eq!(
                potential_energy(&model, &DVector::from_element(1, q)).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn massless_chain_is_singular() {
        let rows = vec![DhRow::revolute("j", 0.0, 0.0, 0.0, 0.0)];
        let model =
            LinkageModel::new(Isometry3::identity(), rows, vec![], Vector3::zeros()).unwrap();
        let z = DVector::zeros(1);
        let err = forward_dynamics(&model, &z, &z, &z).unwrap_err();
        assert!(matches!(err, Error::SingularInertia { .. }));
    }
}
