#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use myobackstep::controller::{Controller, ControllerConfig, PsiDotMode};
use myobackstep::kinematics::{DhRow, LinkInertia, LinkageModel};
use myobackstep::muscle::{muscle_lengths, Attachment, Muscle, MuscleSet, TendonCurve};
use myobackstep::simulator::Scenario;

pub type Mat4 = [[f64; 4]; 4];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Textbook DH matrix written out entry by entry.
pub fn dh(theta: f64, d: f64, a: f64, alpha: f64) -> Mat4 {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    [
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

pub fn mul(x: &Mat4, y: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| x[i][k] * y[k][j]).sum();
        }
    }
    out
}

pub fn translation(x: f64, y: f64, z: f64) -> Mat4 {
    [
        [1.0, 0.0, 0.0, x],
        [0.0, 1.0, 0.0, y],
        [0.0, 0.0, 1.0, z],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

pub fn apply(t: &Mat4, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = t[i][0] * p[0] + t[i][1] * p[1] + t[i][2] * p[2] + t[i][3];
    }
    out
}

/// Shoulder chain poses rebuilt from its parameter table: ground → head
/// translation, then flexion, inward rotation, the fixed axis swap and adduction.
pub fn shoulder_poses(q: &[f64; 3]) -> Vec<Mat4> {
    let table = [
        (q[0], -FRAC_PI_2),
        (q[1], 0.0),
        (FRAC_PI_2, FRAC_PI_2),
        (q[2], 0.0),
    ];
    let mut poses = vec![translation(-0.013, 0.0, 0.17)];
    for (theta, alpha) in table {
        let next = mul(poses.last().unwrap(), &dh(theta, 0.0, 0.0, alpha));
        poses.push(next);
    }
    poses
}

pub fn shoulder() -> Scenario {
    myobackstep::preset::shoulder().unwrap()
}

/// Uniform state around the shoulder target: ±30° joints, ±2 rad/s, taut tendons.
pub fn random_state(s: &Scenario, r: &mut impl Rng) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let span = 30f64.to_radians();
    let target = s.q_target();
    let q = DVector::from_fn(target.len(), |i, _| target[i] + r.random_range(-span..span));
    let qdot = DVector::from_fn(target.len(), |_, _| r.random_range(-2.0..2.0));
    let sv = DVector::from_iterator(
        s.muscles.len(),
        s.muscles
            .iter()
            .map(|m| m.tendon.slack_length * (1.0 + r.random_range(0.002..0.04))),
    );
    (q, qdot, sv)
}

pub fn fd_jacobian<F>(x: &DVector<f64>, h: f64, mut f: F) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let rows = f(x).len();
    let mut out = DMatrix::zeros(rows, x.len());
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        out.set_column(k, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    out
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn vrel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn gains(n: usize) -> ControllerConfig {
    ControllerConfig {
        kp: DVector::from_element(n, 100.0),
        kd: DVector::from_element(n, 20.0),
        q: DMatrix::identity(2 * n, 2 * n) * 10.0,
        r: DMatrix::identity(n, n) * 0.1,
        gamma: DMatrix::identity(n, n) * 50.0,
        pinv_rel_tol: 1e-10,
        psi_dot_mode: PsiDotMode::BackwardDifference,
        activation_limit: None,
    }
}

/// Pendulum swinging about the ground z axis, q = 0 hanging along -y.
pub fn pendulum_model(mass: f64, length: f64) -> LinkageModel {
    let rows = vec![DhRow::revolute("swing", -FRAC_PI_2, 0.0, 0.0, 0.0)];
    let links = vec![LinkInertia {
        name: "rod".into(),
        frame: 1,
        mass,
        com: Vector3::new(length, 0.0, 0.0),
        inertia: Matrix3::from_diagonal(&Vector3::new(0.0, 0.01, 0.01)),
    }];
    LinkageModel::new(
        Isometry3::identity(),
        rows,
        links,
        Vector3::new(0.0, -9.81, 0.0),
    )
    .unwrap()
}

/// Pendulum driven by an antagonist pair anchored left and right of the pivot.
pub fn pendulum_scenario(target_deg: f64) -> Scenario {
    let model = pendulum_model(1.5, 0.3);
    let make = |name: &str, x: f64| Muscle {
        name: name.into(),
        origin: Attachment {
            frame: 0,
            point: Vector3::new(x, 0.0, 0.0),
        },
        insertion: Attachment {
            frame: 1,
            point: Vector3::new(0.25, 0.0, 0.0),
        },
        tendon: TendonCurve::new(1.0, 800.0),
    };
    let mut muscles = vec![make("right", 0.08), make("left", -0.08)];
    let set = MuscleSet::new(&model, muscles.clone()).unwrap();
    let q = DVector::from_element(1, target_deg.to_radians());
    let lengths = muscle_lengths(&model, &set, &q).unwrap();
    for (m, l) in muscles.iter_mut().zip(lengths.iter()) {
        m.tendon.slack_length = 0.5 * l;
    }
    let muscles = MuscleSet::new(&model, muscles).unwrap();
    Scenario {
        name: "pendulum".into(),
        model,
        muscles,
        controller: Controller::new(gains(1)).unwrap(),
        q_target_deg: DVector::from_element(1, target_deg),
        init_offset_range_deg: 10.0,
        initial_strain: 0.01,
        dt: 1e-3,
        t_end: 2.0,
        seed: 42,
    }
}

/// Planar two-link arm in the xy plane with gravity along -y.
/// Returns the model with links of length `l`, centres at `lc`, masses `m`, z inertias `i`.
pub fn planar_two_link(m: [f64; 2], l: [f64; 2], lc: [f64; 2], i: [f64; 2]) -> LinkageModel {
    let rows = vec![
        DhRow::revolute("shoulder", 0.0, 0.0, l[0], 0.0),
        DhRow::revolute("elbow", 0.0, 0.0, l[1], 0.0),
    ];
    let links = (0..2)
        .map(|k| LinkInertia {
            name: format!("link{k}"),
            frame: k + 1,
            mass: m[k],
            com: Vector3::new(lc[k] - l[k], 0.0, 0.0),
            inertia: Matrix3::from_diagonal_element(i[k]),
        })
        .collect();
    LinkageModel::new(
        Isometry3::identity(),
        rows,
        links,
        Vector3::new(0.0, -9.81, 0.0),
    )
    .unwrap()
}
