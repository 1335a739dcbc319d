//! Bundled 3-DOF, 8-muscle shoulder regulation scenario.
//!
//! Ground axes follow the usual musculoskeletal convention: x anterior,
//! y up, z to the right. The glenohumeral joint is a single ball and socket
//! built from three intersecting DH axes (flexion, inward rotation,
//! adduction). Clavicle and scapula are fixed to the base frame; ulna,
//! radius, wrist and hand ride rigidly on the humerus frame.
//!
//! Geometry and mass properties are representative values for a 1.8 m,
//! 75 kg adult. Landmarks are written in ground coordinates relative to the
//! humeral head in the reference pose (q = 0: upper arm hanging, elbow
//! flexed 90°, forearm pointing forward) and converted to frame coordinates
//! at construction.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};

use crate::controller::{Controller, ControllerConfig, PsiDotMode};
use crate::error::Result;
use crate::kinematics::{DhRow, LinkInertia, LinkageModel, STANDARD_GRAVITY};
use crate::muscle::{Attachment, Muscle, MuscleSet, TendonCurve};
use crate::simulator::Scenario;

/// Frame carrying the scapula and clavicle (fixed to ground).
pub const SHOULDER_GIRDLE_FRAME: usize = 0;
/// Frame carrying the humerus and everything distal to it.
pub const HUMERUS_FRAME: usize = 4;

/// Humeral head centre in ground coordinates.
const HUMERAL_HEAD: [f64; 3] = [-0.013, 0.0, 0.17];

pub const TARGET_DEG: [f64; 3] = [50.0, 27.0, -45.0];

/// (name, mass kg, centre of mass relative to the head, principal inertia along ground axes)
const BODIES: [(&str, f64, [f64; 3], [f64; 3]); 4] = [
    (
        "humerus",
        2.03,
        [0.0, -0.164, 0.0],
        [0.0132, 0.0045, 0.0132],
    ),
    ("ulna", 0.61, [0.11, -0.29, 0.0], [0.0006, 0.0030, 0.0031]),
    (
        "radius",
        0.61,
        [0.12, -0.29, 0.01],
        [0.0006, 0.0030, 0.0031],
    ),
    ("hand", 0.46, [0.33, -0.29, 0.005], [0.0005, 0.0009, 0.0013]),
];

/// (name, girdle point, humerus point, f_max N), points relative to the head at q = 0.
const MUSCLES: [(&str, [f64; 3], [f64; 3], f64); 8] = [
    (
        "deltoid_1",
        [0.035, 0.025, -0.015],
        [0.010, -0.110, 0.015],
        1100.0,
    ),
    (
        "deltoid_2",
        [-0.030, 0.030, 0.000],
        [-0.005, -0.110, 0.015],
        1100.0,
    ),
    (
        "supraspinatus",
        [-0.030, 0.030, -0.090],
        [0.000, 0.015, 0.020],
        500.0,
    ),
    (
        "infraspinatus",
        [-0.060, -0.060, -0.080],
        [-0.015, 0.000, 0.020],
        860.0,
    ),
    (
        "subscapularis",
        [-0.030, -0.050, -0.090],
        [0.020, 0.000, 0.005],
        1300.0,
    ),
    (
        "teres_minor",
        [-0.050, -0.080, -0.050],
        [-0.015, -0.020, 0.015],
        600.0,
    ),
    (
        "teres_major",
        [-0.060, -0.130, -0.070],
        [0.010, -0.050, -0.005],
        400.0,
    ),
    (
        "coracobrachialis",
        [0.035, 0.000, -0.020],
        [0.005, -0.140, -0.005],
        250.0,
    ),
];

/// Tendon slack length as a fraction of the path length at the target pose.
const SLACK_FRACTION: f64 = 0.5;

pub fn shoulder_linkage() -> Result<LinkageModel> {
    let base = Isometry3::from_parts(
        Translation3::new(HUMERAL_HEAD[0], HUMERAL_HEAD[1], HUMERAL_HEAD[2]),
        UnitQuaternion::identity(),
    );
    let rows = vec![
        DhRow::revolute("flexion", 0.0, 0.0, 0.0, -FRAC_PI_2),
        DhRow::revolute("inward_rotation", 0.0, 0.0, 0.0, 0.0),
        DhRow::fixed("axis_swap", FRAC_PI_2, 0.0, 0.0, FRAC_PI_2),
        DhRow::revolute("adduction", 0.0, 0.0, 0.0, 0.0),
    ];
    let gravity = Vector3::new(0.0, -STANDARD_GRAVITY, 0.0);
    let bare = LinkageModel::new(base, rows.clone(), vec![], gravity)?;
    let reference = bare.forward_kinematics(&DVector::zeros(3))?;
    let humerus = reference[HUMERUS_FRAME];
    let rot = humerus.rotation.to_rotation_matrix();
    let links = BODIES
        .iter()
        .map(|(name, mass, com, inertia)| LinkInertia {
            name: (*name).into(),
            frame: HUMERUS_FRAME,
            mass: *mass,
            com: rot.inverse() * Vector3::from(*com),
            inertia: rot.matrix().transpose()
                * Matrix3::from_diagonal(&Vector3::from(*inertia))
                * rot.matrix(),
        })
        .collect();
    LinkageModel::new(base, rows, links, gravity)
}

pub fn shoulder_muscles(model: &LinkageModel) -> Result<MuscleSet> {
    let reference = model.forward_kinematics(&DVector::zeros(3))?;
    let humerus_rot = reference[HUMERUS_FRAME].rotation;
    let girdle = Attachment {
        frame: SHOULDER_GIRDLE_FRAME,
        point: Vector3::zeros(),
    };
    let target = DVector::from_iterator(3, TARGET_DEG.iter().map(|d| d.to_radians()));
    let mut muscles: Vec<Muscle> = MUSCLES
        .iter()
        .map(|(name, origin, insertion, f_max)| Muscle {
            name: (*name).into(),
            origin: Attachment {
                point: Vector3::from(*origin),
                ..girdle.clone()
            },
            insertion: Attachment {
                frame: HUMERUS_FRAME,
                point: humerus_rot.inverse() * Vector3::from(*insertion),
            },
            // Placeholder slack length, replaced below from the target pose.
            tendon: TendonCurve::new(1.0, *f_max),
        })
        .collect();
    let lengths =
        crate::muscle::muscle_lengths(model, &MuscleSet::new(model, muscles.clone())?, &target)?;
    for (m, len) in muscles.iter_mut().zip(lengths.iter()) {
        m.tendon.slack_length = round_to(SLACK_FRACTION * len, 1e-4);
    }
    MuscleSet::new(model, muscles)
}

fn round_to(x: f64, quantum: f64) -> f64 {
    (x / quantum).round() * quantum
}

pub fn shoulder_controller() -> Result<Controller> {
    let n = 3;
    Controller::new(ControllerConfig {
        kp: DVector::from_element(n, 100.0),
        kd: DVector::from_element(n, 20.0),
        q: DMatrix::identity(2 * n, 2 * n) * 10.0,
        r: DMatrix::identity(n, n) * 0.1,
        gamma: DMatrix::identity(n, n) * 50.0,
        pinv_rel_tol: ControllerConfig::DEFAULT_PINV_REL_TOL,
        psi_dot_mode: PsiDotMode::BackwardDifference,
        activation_limit: None,
    })
}

/// The bundled shoulder regulation experiment.
pub fn shoulder() -> Result<Scenario> {
    let model = shoulder_linkage()?;
    let muscles = shoulder_muscles(&model)?;
    let scenario = Scenario {
        name: "shoulder".into(),
        model,
        muscles,
        controller: shoulder_controller()?,
        q_target_deg: DVector::from_row_slice(&TARGET_DEG),
        init_offset_range_deg: 10.0,
        initial_strain: 0.01,
        dt: 1e-3,
        t_end: 6.0,
        seed: 42,
    };
    scenario.validate()?;
    Ok(scenario)
}
