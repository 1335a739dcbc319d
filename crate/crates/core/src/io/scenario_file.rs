//! Versioned JSON scenario documents.
//!
//! Angles are stored in degrees and lengths in meters. Unknown keys are
//! rejected and every model invariant is checked at load time; failures name
//! the offending field.

use std::fs;
use std::path::Path;

use nalgebra::{
    DMatrix, DVector, Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3,
};
use serde::{Deserialize, Serialize};

use super::LoadError;
use crate::controller::{Controller, ControllerConfig, PsiDotMode};
use crate::kinematics::{DhRow, JointKind, LinkInertia, LinkageModel};
use crate::muscle::{Attachment, Muscle, MuscleSet, TendonCurve};
use crate::simulator::Scenario;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    pub name: String,
    pub linkage: LinkageSpec,
    pub muscles: Vec<MuscleSpec>,
    pub controller: ControllerSpec,
    pub simulation: SimulationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkageSpec {
    pub base: BaseSpec,
    pub dh_rows: Vec<DhRowSpec>,
    pub links: Vec<LinkSpec>,
    /// Ground-frame gravity, m/s².
    pub gravity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSpec {
    pub translation: [f64; 3],
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation_wxyz: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointSpec {
    Revolute,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhRowSpec {
    pub name: String,
    pub joint: JointSpec,
    pub theta_deg: f64,
    pub d: f64,
    pub a: f64,
    pub alpha_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    pub frame: usize,
    pub mass: f64,
    pub com: [f64; 3],
    pub inertia: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachmentSpec {
    pub frame: usize,
    pub point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TendonSpec {
    pub slack_length: f64,
    pub f_max: f64,
    pub eps_ref: f64,
    pub eps_toe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuscleSpec {
    pub name: String,
    pub origin: AttachmentSpec,
    pub insertion: AttachmentSpec,
    pub tendon: TendonSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiDotModeSpec {
    BackwardDifference,
    DirectionalAnalytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    /// Diagonal of Kp, 1/s².
    pub kp: Vec<f64>,
    /// Diagonal of Kd, 1/s.
    pub kd: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub pinv_rel_tol: f64,
    pub psi_dot_mode: PsiDotModeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub q_target_deg: Vec<f64>,
    pub init_offset_range_deg: f64,
    pub initial_strain: f64,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Replaces `linkage.gravity` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<[f64; 3]>,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> LoadError {
    LoadError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

fn require_finite(field: &str, values: &[f64]) -> Result<(), LoadError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(invalid(format!("{field}[{i}]"), "must be finite")),
        None => Ok(()),
    }
}

fn matrix(field: &str, rows: &[Vec<f64>], size: usize) -> Result<DMatrix<f64>, LoadError> {
    if rows.len() != size || rows.iter().any(|r| r.len() != size) {
        return Err(invalid(field, format!("must be a {size}x{size} matrix")));
    }
    for (i, row) in rows.iter().enumerate() {
        require_finite(&format!("{field}[{i}]"), row)?;
    }
    Ok(DMatrix::from_fn(size, size, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Degrees for `rad` such that converting back reproduces `rad` bit for bit.
fn degrees_exact(rad: f64) -> f64 {
    let guess = rad.to_degrees();
    if guess.to_radians() == rad || !guess.is_finite() {
        return guess;
    }
    let step = |x: f64, up: bool| {
        let bits = x.to_bits() as i64;
        let delta = if (x >= 0.0) == up { 1 } else { -1 };
        f64::from_bits((bits + delta) as u64)
    };
    let (mut lo, mut hi) = (guess, guess);
    for _ in 0..256 {
        lo = step(lo, false);
        hi = step(hi, true);
        if lo.to_radians() == rad {
            return lo;
        }
        if hi.to_radians() == rad {
            return hi;
        }
    }
    guess
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        serde_json::from_str(text).map_err(LoadError::Parse)
    }

    pub fn to_json(&self) -> String {
        let mut s =
            serde_json::to_string_pretty(self).expect("scenario documents always serialize");
        s.push('\n');
        s
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        let model = &s.model;
        let base = model.base();
        let q = base.rotation.quaternion();
        let cfg = s.controller.config();
        ScenarioFile {
            version: SCHEMA_VERSION,
            name: s.name.clone(),
            linkage: LinkageSpec {
                base: BaseSpec {
                    translation: base.translation.vector.into(),
                    rotation_wxyz: [q.w, q.i, q.j, q.k],
                },
                dh_rows: model
                    .rows()
                    .iter()
                    .map(|r| DhRowSpec {
                        name: r.name.clone(),
                        joint: match r.kind {
                            JointKind::Revolute => JointSpec::Revolute,
                            JointKind::Fixed => JointSpec::Fixed,
                        },
                        theta_deg: degrees_exact(r.theta_offset),
                        d: r.d,
                        a: r.a,
                        alpha_deg: degrees_exact(r.alpha),
                    })
                    .collect(),
                links: model
                    .links()
                    .iter()
                    .map(|l| LinkSpec {
                        name: l.name.clone(),
                        frame: l.frame,
                        mass: l.mass,
                        com: l.com.into(),
                        inertia: [0, 1, 2].map(|i| [0, 1, 2].map(|j| l.inertia[(i, j)])),
                    })
                    .collect(),
                gravity: (*model.gravity()).into(),
            },
            muscles: s
                .muscles
                .iter()
                .map(|m| MuscleSpec {
                    name: m.name.clone(),
                    origin: AttachmentSpec {
                        frame: m.origin.frame,
                        point: m.origin.point.into(),
                    },
                    insertion: AttachmentSpec {
                        frame: m.insertion.frame,
                        point: m.insertion.point.into(),
                    },
                    tendon: TendonSpec {
                        slack_length: m.tendon.slack_length,
                        f_max: m.tendon.f_max,
                        eps_ref: m.tendon.eps_ref,
                        eps_toe: m.tendon.eps_toe,
                    },
                })
                .collect(),
            controller: ControllerSpec {
                kp: cfg.kp.iter().copied().collect(),
                kd: cfg.kd.iter().copied().collect(),
                q: rows_of(&cfg.q),
                r: rows_of(&cfg.r),
                gamma: rows_of(&cfg.gamma),
                pinv_rel_tol: cfg.pinv_rel_tol,
                psi_dot_mode: match cfg.psi_dot_mode {
                    PsiDotMode::BackwardDifference => PsiDotModeSpec::BackwardDifference,
                    PsiDotMode::DirectionalAnalytic => PsiDotModeSpec::DirectionalAnalytic,
                },
                activation_limit: cfg.activation_limit,
            },
            simulation: SimulationSpec {
                q_target_deg: s.q_target_deg.iter().copied().collect(),
                init_offset_range_deg: s.init_offset_range_deg,
                initial_strain: s.initial_strain,
                dt: s.dt,
                t_end: s.t_end,
                seed: s.seed,
                gravity: None,
            },
        }
    }

    /// Validate and convert into a runnable [`Scenario`].
    pub fn into_scenario(self) -> Result<Scenario, LoadError> {
        if self.version != SCHEMA_VERSION {
            return Err(LoadError::Version {
                found: self.version,
                expected: SCHEMA_VERSION,
            });
        }
        let model = self.linkage.build(self.simulation.gravity)?;
        let muscles = build_muscles(&model, &self.muscles)?;
        let n = model.dof();
        let controller = self.controller.build(n)?;

        let sim = &self.simulation;
        if sim.q_target_deg.len() != n {
            return Err(invalid(
                "simulation.q_target_deg",
                format!("expected {n} entries, got {}", sim.q_target_deg.len()),
            ));
        }
        require_finite("simulation.q_target_deg", &sim.q_target_deg)?;
        if !(sim.dt.is_finite() && sim.dt > 0.0) {
            return Err(invalid("simulation.dt", "must be positive"));
        }
        if !(sim.t_end.is_finite() && sim.t_end >= 0.0) {
            return Err(invalid("simulation.t_end", "must be non-negative"));
        }
        if !(sim.init_offset_range_deg.is_finite() && sim.init_offset_range_deg >= 0.0) {
            return Err(invalid(
                "simulation.init_offset_range_deg",
                "must be non-negative",
            ));
        }
        if !(sim.initial_strain.is_finite() && sim.initial_strain > -1.0) {
            return Err(invalid(
                "simulation.initial_strain",
                "must be finite and greater than -1",
            ));
        }
        let scenario = Scenario {
            name: self.name,
            model,
            muscles,
            controller,
            q_target_deg: DVector::from_vec(sim.q_target_deg.clone()),
            init_offset_range_deg: sim.init_offset_range_deg,
            initial_strain: sim.initial_strain,
            dt: sim.dt,
            t_end: sim.t_end,
            seed: sim.seed,
        };
        scenario
            .validate()
            .map_err(|e| invalid("simulation", e.to_string()))?;
        Ok(scenario)
    }
}

impl LinkageSpec {
    fn build(&self, gravity_override: Option<[f64; 3]>) -> Result<LinkageModel, LoadError> {
        require_finite("linkage.base.translation", &self.base.translation)?;
        require_finite("linkage.base.rotation_wxyz", &self.base.rotation_wxyz)?;
        let [w, x, y, z] = self.base.rotation_wxyz;
        let quat = Quaternion::new(w, x, y, z);
        let norm = quat.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(invalid(
                "linkage.base.rotation_wxyz",
                "must be a unit quaternion",
            ));
        }
        let rotation = if norm == 1.0 {
            UnitQuaternion::new_unchecked(quat)
        } else {
            UnitQuaternion::new_normalize(quat)
        };
        let [tx, ty, tz] = self.base.translation;
        let base = Isometry3::from_parts(Translation3::new(tx, ty, tz), rotation);

        let mut rows = Vec::with_capacity(self.dh_rows.len());
        for (i, r) in self.dh_rows.iter().enumerate() {
            require_finite(
                &format!("linkage.dh_rows[{i}]"),
                &[r.theta_deg, r.d, r.a, r.alpha_deg],
            )?;
            rows.push(DhRow {
                name: r.name.clone(),
                theta_offset: r.theta_deg.to_radians(),
                d: r.d,
                a: r.a,
                alpha: r.alpha_deg.to_radians(),
                kind: match r.joint {
                    JointSpec::Revolute => JointKind::Revolute,
                    JointSpec::Fixed => JointKind::Fixed,
                },
            });
        }
        let frames = rows.len() + 1;
        let mut links = Vec::with_capacity(self.links.len());
        for (i, l) in self.links.iter().enumerate() {
            let field = format!("linkage.links[{i}]");
            if l.frame >= frames {
                return Err(invalid(
                    format!("{field}.frame"),
                    format!("frame {} does not exist", l.frame),
                ));
            }
            if !(l.mass.is_finite() && l.mass >= 0.0) {
                return Err(invalid(
                    format!("{field}.mass"),
                    "must be finite and non-negative",
                ));
            }
            let link = LinkInertia {
                name: l.name.clone(),
                frame: l.frame,
                mass: l.mass,
                com: Vector3::from(l.com),
                inertia: Matrix3::from_fn(|r, c| l.inertia[r][c]),
            };
            links.push(link);
        }
        let gravity = Vector3::from(gravity_override.unwrap_or(self.gravity));
        LinkageModel::new(base, rows, links, gravity).map_err(|e| invalid("linkage", e.to_string()))
    }
}

fn build_muscles(model: &LinkageModel, specs: &[MuscleSpec]) -> Result<MuscleSet, LoadError> {
    let mut muscles = Vec::with_capacity(specs.len());
    for (i, m) in specs.iter().enumerate() {
        let field = format!("muscles[{i}]");
        for (label, att) in [("origin", &m.origin), ("insertion", &m.insertion)] {
            if att.frame >= model.frame_count() {
                return Err(invalid(
                    format!("{field}.{label}.frame"),
                    format!("frame {} does not exist", att.frame),
                ));
            }
            require_finite(&format!("{field}.{label}.point"), &att.point)?;
        }
        let tendon = TendonCurve {
            slack_length: m.tendon.slack_length,
            f_max: m.tendon.f_max,
            eps_ref: m.tendon.eps_ref,
            eps_toe: m.tendon.eps_toe,
        };
        tendon
            .validate()
            .map_err(|e| invalid(format!("{field}.tendon"), e.to_string()))?;
        muscles.push(Muscle {
            name: m.name.clone(),
            origin: Attachment {
                frame: m.origin.frame,
                point: Vector3::from(m.origin.point),
            },
            insertion: Attachment {
                frame: m.insertion.frame,
                point: Vector3::from(m.insertion.point),
            },
            tendon,
        });
    }
    MuscleSet::new(model, muscles).map_err(|e| invalid("muscles", e.to_string()))
}

impl ControllerSpec {
    fn build(&self, n: usize) -> Result<Controller, LoadError> {
        for (field, v) in [("controller.kp", &self.kp), ("controller.kd", &self.kd)] {
            if v.len() != n {
                return Err(invalid(
                    field,
                    format!("expected {n} entries, got {}", v.len()),
                ));
            }
            if let Some(i) = v.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(invalid(
                    format!("{field}[{i}]"),
                    format!("gain must be positive, got {}", v[i]),
                ));
            }
        }
        let q = matrix("controller.q", &self.q, 2 * n)?;
        let r = matrix("controller.r", &self.r, n)?;
        let gamma = matrix("controller.gamma", &self.gamma, n)?;
        let cfg = ControllerConfig {
            kp: DVector::from_vec(self.kp.clone()),
            kd: DVector::from_vec(self.kd.clone()),
            q,
            r,
            gamma,
            pinv_rel_tol: self.pinv_rel_tol,
            psi_dot_mode: match self.psi_dot_mode {
                PsiDotModeSpec::BackwardDifference => PsiDotMode::BackwardDifference,
                PsiDotModeSpec::DirectionalAnalytic => PsiDotMode::DirectionalAnalytic,
            },
            activation_limit: self.activation_limit,
        };
        Controller::new(cfg).map_err(|e| match e {
            crate::Error::NotPositiveDefinite(name) => invalid(
                format!("controller.{}", name.to_lowercase()),
                "must be symmetric positive definite",
            ),
            other => invalid("controller", other.to_string()),
        })
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, LoadError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ScenarioFile::from_json(&text)?.into_scenario()
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), LoadError> {
    let path = path.as_ref();
    fs::write(path, ScenarioFile::from_scenario(scenario).to_json()).map_err(|source| {
        LoadError::Io {
            path: path.to_path_buf(),
            source,
        }
    })
}
