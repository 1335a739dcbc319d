//! Straight-line muscle paths with a series-elastic tendon.
//!
//! Each muscle transmits a scalar tension `Φ(S)` that depends only on its
//! serial-element (tendon) length `S`. The contractile element is a pure
//! rate source: activation `u = -L̇_CE`, so `Ṡ = L̇ + u`.

use nalgebra::{DMatrix, DVector, Isometry3, Vector3};

use crate::error::{check_finite, check_len, Error, Result};
use crate::kinematics::LinkageModel;

/// Step for the central-difference `∂τ/∂q`.
pub const TORQUE_FD_STEP: f64 = 1e-6;

/// Paths shorter than this are treated as degenerate.
const MIN_PATH_LENGTH: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Attachment {
    pub frame: usize,
    /// Point in the frame's coordinates (m).
    pub point: Vector3<f64>,
}

/// Piecewise tendon force-length curve: slack, quadratic toe, then linear.
///
/// With strain `ε = (S - S0) / S0` the force is zero for `ε <= 0`,
/// `c ε²` up to `eps_toe`, and linear beyond with the slope that makes the
/// curve C¹ at `eps_toe` and pass through `f_max` at `eps_ref`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TendonCurve {
    pub slack_length: f64,
    pub f_max: f64,
    pub eps_ref: f64,
    pub eps_toe: f64,
}

impl TendonCurve {
    pub const DEFAULT_EPS_TOE: f64 = 0.01;
    pub const DEFAULT_EPS_REF: f64 = 0.033;

    pub fn new(slack_length: f64, f_max: f64) -> Self {
        Self {
            slack_length,
            f_max,
            eps_ref: Self::DEFAULT_EPS_REF,
            eps_toe: Self::DEFAULT_EPS_TOE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.slack_length.is_finite()
            && self.slack_length > 0.0
            && self.f_max.is_finite()
            && self.f_max > 0.0
            && self.eps_toe > 0.0
            && self.eps_toe < self.eps_ref
            && self.eps_ref.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!(
                "tendon curve requires slack_length > 0, f_max > 0, 0 < eps_toe < eps_ref (got {self:?})"
            )))
        }
    }

    /// Slope of the linear region, N/m.
    pub fn linear_stiffness(&self) -> f64 {
        self.f_max / (self.eps_ref - 0.5 * self.eps_toe) / self.slack_length
    }

    fn toe_coefficient(&self) -> f64 {
        self.f_max / (2.0 * self.eps_toe * (self.eps_ref - 0.5 * self.eps_toe))
    }

    /// Tension and its slope `dΦ/dS`.
    pub fn force(&self, length: f64) -> Result<(f64, f64)> {
        if !length.is_finite() || length <= 0.0 {
            return Err(Error::NonPositiveTendon(length));
        }
        let strain = (length - self.slack_length) / self.slack_length;
        if strain <= 0.0 {
            Ok((0.0, 0.0))
        } else if strain < self.eps_toe {
            let c = self.toe_coefficient();
            Ok((c * strain * strain, 2.0 * c * strain / self.slack_length))
        } else {
            let span = self.eps_ref - 0.5 * self.eps_toe;
            Ok((
                self.f_max * (strain - 0.5 * self.eps_toe) / span,
                self.linear_stiffness(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Muscle {
    pub name: String,
    pub origin: Attachment,
    pub insertion: Attachment,
    pub tendon: TendonCurve,
}

/// Validated collection of muscles bound to a linkage's frame count.
#[derive(Debug, Clone, PartialEq)]
pub struct MuscleSet {
    muscles: Vec<Muscle>,
}

impl MuscleSet {
    pub fn new(model: &LinkageModel, muscles: Vec<Muscle>) -> Result<Self> {
        if muscles.is_empty() {
            return Err(Error::InvalidModel("muscle set is empty".into()));
        }
        for m in &muscles {
            for (label, att) in [("origin", &m.origin), ("insertion", &m.insertion)] {
                if att.frame >= model.frame_count() {
                    return Err(Error::InvalidModel(format!(
                        "muscle `{}`: {label} frame {} does not exist",
                        m.name, att.frame
                    )));
                }
                if !att.point.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidModel(format!(
                        "muscle `{}`: non-finite {label}",
                        m.name
                    )));
                }
            }
            if m.origin.frame == m.insertion.frame {
                return Err(Error::InvalidModel(format!(
                    "muscle `{}`: origin and insertion share frame {}",
                    m.name, m.origin.frame
                )));
            }
            m.tendon
                .validate()
                .map_err(|e| Error::InvalidModel(format!("muscle `{}`: {e}", m.name)))?;
        }
        Ok(Self { muscles })
    }

    pub fn len(&self) -> usize {
        self.muscles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.muscles.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Muscle> {
        self.muscles.iter()
    }

    pub fn as_slice(&self) -> &[Muscle] {
        &self.muscles
    }

    pub(crate) fn check_state(&self, s: &DVector<f64>) -> Result<()> {
        check_len("tendon lengths", self.len(), s.len())?;
        check_finite("tendon lengths", s.as_slice())?;
        match s.iter().find(|v| **v <= 0.0) {
            Some(&bad) => Err(Error::NonPositiveTendon(bad)),
            None => Ok(()),
        }
    }

    /// Tensions and slopes for every muscle.
    pub fn forces(&self, s: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_state(s)?;
        let mut force = DVector::zeros(self.len());
        let mut slope = DVector::zeros(self.len());
        for (j, m) in self.muscles.iter().enumerate() {
            let (f, k) = m.tendon.force(s[j])?;
            force[j] = f;
            slope[j] = k;
        }
        Ok((force, slope))
    }
}

/// World endpoints (origin, insertion) and the path length of one muscle.
fn endpoints(poses: &[Isometry3<f64>], m: &Muscle) -> Result<(Vector3<f64>, Vector3<f64>, f64)> {
    let p_org = LinkageModel::world_point(poses, m.origin.frame, &m.origin.point);
    let p_ins = LinkageModel::world_point(poses, m.insertion.frame, &m.insertion.point);
    let len = (p_ins - p_org).norm();
    if len < MIN_PATH_LENGTH {
        return Err(Error::DegeneratePath {
            muscle: m.name.clone(),
        });
    }
    Ok((p_org, p_ins, len))
}

pub fn muscle_lengths(
    model: &LinkageModel,
    muscles: &MuscleSet,
    q: &DVector<f64>,
) -> Result<DVector<f64>> {
    let poses = model.forward_kinematics(q)?;
    let mut out = DVector::zeros(muscles.len());
    for (j, m) in muscles.iter().enumerate() {
        out[j] = endpoints(&poses, m)?.2;
    }
    Ok(out)
}

/// `∂L/∂q` (m×n), row `j` = `uⱼᵀ (J_insertion - J_origin)`.
pub fn muscle_jacobian(
    model: &LinkageModel,
    muscles: &MuscleSet,
    q: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let poses = model.forward_kinematics(q)?;
    let mut jac = DMatrix::zeros(muscles.len(), model.dof());
    for (j, m) in muscles.iter().enumerate() {
        let (p_org, p_ins, len) = endpoints(&poses, m)?;
        let dir = (p_ins - p_org) / len;
        let rel = model.point_jacobian(&poses, m.insertion.frame, &p_ins)
            - model.point_jacobian(&poses, m.origin.frame, &p_org);
        jac.set_row(j, &(dir.transpose() * rel));
    }
    Ok(jac)
}

/// Generalized torque of a set of tensions via `d × F` about each joint axis.
///
/// At each attachment the tension pulls toward the opposite attachment;
/// the moment about a joint is taken from the joint centre to the point of
/// application and projected on the joint axis.
pub fn torques_from_forces(
    model: &LinkageModel,
    muscles: &MuscleSet,
    q: &DVector<f64>,
    forces: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("muscle forces", muscles.len(), forces.len())?;
    let poses = model.forward_kinematics(q)?;
    let n = model.dof();
    let mut tau = DVector::zeros(n);
    for (j, m) in muscles.iter().enumerate() {
        if forces[j] == 0.0 {
            continue;
        }
        let (p_org, p_ins, len) = endpoints(&poses, m)?;
        let toward_origin = (p_org - p_ins) / len;
        for (att, point, force) in [
            (&m.insertion, p_ins, toward_origin * forces[j]),
            (&m.origin, p_org, -toward_origin * forces[j]),
        ] {
            for (k, &row) in model.joint_rows().iter().enumerate() {
                if row >= att.frame {
                    break;
                }
                let (centre, axis) = model.joint_axis(&poses, k);
                tau[k] += axis.dot(&(point - centre).cross(&force));
            }
        }
    }
    Ok(tau)
}

/// Net muscle torque `τ_m(q, S)`.
pub fn muscle_torques(
    model: &LinkageModel,
    muscles: &MuscleSet,
    q: &DVector<f64>,
    s: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (forces, _) = muscles.forces(s)?;
    torques_from_forces(model, muscles, q, &forces)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorqueJacobians {
    /// `∂τ/∂q` (n×n).
    pub wrt_q: DMatrix<f64>,
    /// `∂τ/∂S` (n×m).
    pub wrt_s: DMatrix<f64>,
}

/// `∂τ/∂S = -(∂L/∂q)ᵀ diag(dΦ/dS)` given the length Jacobian and slopes.
pub fn tendon_torque_jacobian(
    length_jacobian: &DMatrix<f64>,
    slopes: &DVector<f64>,
) -> DMatrix<f64> {
    let mut out = -length_jacobian.transpose();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= slopes[j];
    }
    out
}

/// `∂τ/∂q` at fixed tendon forces, by central differences.
pub fn torque_position_jacobian(
    model: &LinkageModel,
    muscles: &MuscleSet,
    q: &DVector<f64>,
    forces: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = model.dof();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[k] += TORQUE_FD_STEP;
        qm[k] -= TORQUE_FD_STEP;
        let tp = torques_from_forces(model, muscles, &qp, forces)?;
        let tm = torques_from_forces(model, muscles, &qm, forces)?;
        out.set_column(k, &((tp - tm) / (2.0 * TORQUE_FD_STEP)));
    }
    Ok(out)
}

pub fn torque_jacobians(
    model: &LinkageModel,
    muscles: &MuscleSet,
    q: &DVector<f64>,
    s: &DVector<f64>,
) -> Result<TorqueJacobians> {
    let (forces, slopes) = muscles.forces(s)?;
    let length_jacobian = muscle_jacobian(model, muscles, q)?;
    let wrt_q = torque_position_jacobian(model, muscles, q, &forces)?;
    Ok(TorqueJacobians {
        wrt_q,
        wrt_s: tendon_torque_jacobian(&length_jacobian, &slopes),
    })
}
