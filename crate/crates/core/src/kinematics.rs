//! Denavit-Hartenberg chains, inertial bookkeeping and frame Jacobians.
//!
//! Frame `0` is the base frame (the world pose of the chain root). Frame `k`
//! for `k >= 1` is the frame obtained after composing the first `k` DH rows,
//! so a chain with `r` rows has `r + 1` frames. A revolute row `k` rotates
//! about the z axis of frame `k` and moves every frame with index `> k`.

use nalgebra::{
    DMatrix, DVector, Isometry3, Matrix3, Point3, Translation3, UnitQuaternion, Vector3,
};

use crate::error::{check_finite, check_len, Error, Result};

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Fixed,
}

/// One row of a standard DH table: `Rz(theta) Tz(d) Tx(a) Rx(alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DhRow {
    pub name: String,
    pub theta_offset: f64,
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
    pub kind: JointKind,
}

impl DhRow {
    pub fn revolute(
        name: impl Into<String>,
        theta_offset: f64,
        d: f64,
        a: f64,
        alpha: f64,
    ) -> Self {
        Self {
            name: name.into(),
            theta_offset,
            d,
            a,
            alpha,
            kind: JointKind::Revolute,
        }
    }

    pub fn fixed(name: impl Into<String>, theta: f64, d: f64, a: f64, alpha: f64) -> Self {
        Self {
            name: name.into(),
            theta_offset: theta,
            d,
            a,
            alpha,
            kind: JointKind::Fixed,
        }
    }

    /// Relative transform of this row for a joint value (ignored for fixed rows).
    pub fn transform(&self, joint_value: f64) -> Isometry3<f64> {
        let theta = match self.kind {
            JointKind::Revolute => self.theta_offset + joint_value,
            JointKind::Fixed => self.theta_offset,
        };
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta)
            * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha);
        let offset = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta)
            * Vector3::new(self.a, 0.0, self.d);
        Isometry3::from_parts(Translation3::from(offset), rot)
    }
}

/// Mass properties of a rigid body attached to a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkInertia {
    pub name: String,
    pub frame: usize,
    pub mass: f64,
    /// Centre of mass in the frame's coordinates.
    pub com: Vector3<f64>,
    /// Inertia tensor about the centre of mass, frame axes.
    pub inertia: Matrix3<f64>,
}

impl LinkInertia {
    fn validate(&self, frame_count: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(format!("link `{}`: {msg}", self.name)));
        if self.frame >= frame_count {
            return bad(format!(
                "frame {} does not exist ({} frames)",
                self.frame, frame_count
            ));
        }
        if !self.mass.is_finite() || self.mass < 0.0 {
            return bad(format!("mass must be finite and >= 0, got {}", self.mass));
        }
        if !self
            .com
            .iter()
            .chain(self.inertia.iter())
            .all(|v| v.is_finite())
        {
            return bad("non-finite centre of mass or inertia".into());
        }
        let asym = (self.inertia - self.inertia.transpose()).abs().max();
        if asym > 1e-12 * self.inertia.abs().max().max(1.0) {
            return bad("inertia tensor is not symmetric".into());
        }
        let mut moments: Vec<f64> = self
            .inertia
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        moments.sort_by(|a, b| a.total_cmp(b));
        let tol = 1e-12 * moments[2].abs().max(1e-12);
        if moments[0] < -tol {
            return bad(format!("negative principal moment {:.3e}", moments[0]));
        }
        if moments[0] + moments[1] < moments[2] - tol {
            return bad("principal moments violate the triangle inequality".into());
        }
        Ok(())
    }
}

/// Serial linkage: base pose, DH table, attached bodies and gravity.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkageModel {
    base: Isometry3<f64>,
    rows: Vec<DhRow>,
    links: Vec<LinkInertia>,
    gravity: Vector3<f64>,
    /// Row index of each joint variable, in joint order.
    joint_rows: Vec<usize>,
}

impl LinkageModel {
    pub fn new(
        base: Isometry3<f64>,
        rows: Vec<DhRow>,
        links: Vec<LinkInertia>,
        gravity: Vector3<f64>,
    ) -> Result<Self> {
        for row in &rows {
            if ![row.theta_offset, row.d, row.a, row.alpha]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::InvalidModel(format!(
                    "DH row `{}` has non-finite entries",
                    row.name
                )));
            }
        }
        if !gravity.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("gravity must be finite".into()));
        }
        let frame_count = rows.len() + 1;
        for link in &links {
            link.validate(frame_count)?;
        }
        let joint_rows = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.kind == JointKind::Revolute)
            .map(|(i, _)| i)
            .collect::<Vec<_>>();
        if joint_rows.is_empty() {
            return Err(Error::InvalidModel("chain has no revolute rows".into()));
        }
        Ok(Self {
            base,
            rows,
            links,
            gravity,
            joint_rows,
        })
    }

    pub fn dof(&self) -> usize {
        self.joint_rows.len()
    }

    pub fn frame_count(&self) -> usize {
        self.rows.len() + 1
    }

    pub fn base(&self) -> &Isometry3<f64> {
        &self.base
    }

    pub fn rows(&self) -> &[DhRow] {
        &self.rows
    }

    pub fn links(&self) -> &[LinkInertia] {
        &self.links
    }

    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }

    pub fn with_gravity(mut self, gravity: Vector3<f64>) -> Self {
        self.gravity = gravity;
        self
    }

    pub fn joint_rows(&self) -> &[usize] {
        &self.joint_rows
    }

    pub(crate) fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        check_len("joint vector", self.dof(), q.len())?;
        check_finite("joint vector", q.as_slice())
    }

    /// World poses of every frame, base first.
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Vec<Isometry3<f64>>> {
        self.check_q(q)?;
        Ok(self.poses_unchecked(q))
    }

    pub(crate) fn poses_unchecked(&self, q: &DVector<f64>) -> Vec<Isometry3<f64>> {
        let mut poses = Vec::with_capacity(self.frame_count());
        let mut current = self.base;
        poses.push(current);
        let mut joint = 0;
        for row in &self.rows {
            let value = match row.kind {
                JointKind::Revolute => {
                    joint += 1;
                    q[joint - 1]
                }
                JointKind::Fixed => 0.0,
            };
            current *= row.transform(value);
            poses.push(current);
        }
        poses
    }

    /// World coordinates of a point given in `frame` coordinates.
    pub fn world_point(
        poses: &[Isometry3<f64>],
        frame: usize,
        local: &Vector3<f64>,
    ) -> Vector3<f64> {
        (poses[frame] * Point3::from(*local)).coords
    }

    /// Linear-velocity Jacobian (3×n) of a world point rigidly attached to `frame`.
    pub fn point_jacobian(
        &self,
        poses: &[Isometry3<f64>],
        frame: usize,
        point: &Vector3<f64>,
    ) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(3, self.dof());
        for (j, &row) in self.joint_rows.iter().enumerate() {
            if row >= frame {
                break;
            }
            let axis = poses[row].rotation * Vector3::z();
            let origin = poses[row].translation.vector;
            jac.set_column(j, &axis.cross(&(point - origin)));
        }
        jac
    }

    /// Angular-velocity Jacobian (3×n) of `frame`.
    pub fn angular_jacobian(&self, poses: &[Isometry3<f64>], frame: usize) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(3, self.dof());
        for (j, &row) in self.joint_rows.iter().enumerate() {
            if row >= frame {
                break;
            }
            jac.set_column(j, &(poses[row].rotation * Vector3::z()));
        }
        jac
    }

    /// World pose of joint `j`'s rotation axis: (origin, unit axis).
    pub fn joint_axis(&self, poses: &[Isometry3<f64>], j: usize) -> (Vector3<f64>, Vector3<f64>) {
        let row = self.joint_rows[j];
        (
            poses[row].translation.vector,
            poses[row].rotation * Vector3::z(),
        )
    }
}
