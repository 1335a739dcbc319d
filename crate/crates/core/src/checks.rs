//! Structural invariants evaluated at random states of a scenario.
//!
//! Each invariant records the worst normalized violation over all samples
//! and, when the tolerance is exceeded, the state at which it occurred.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{
    closed_form_v_dot, error_system, lyapunov_diagnostics, lyapunov_residual, min_norm_solve,
    tracking_error, zeta_dot,
};
use crate::dynamics::{
    dynamics_terms, forward_dynamics, gravity_vector, mass_matrix, potential_energy,
};
use crate::error::Result;
use crate::muscle::{
    muscle_jacobian, muscle_lengths, muscle_torques, torque_jacobians, torques_from_forces,
};
use crate::simulator::Scenario;

const FD_STEP: f64 = 1e-6;
/// Half-width of the joint sampling box around the target, degrees.
const SAMPLE_SPAN_DEG: f64 = 30.0;
const SAMPLE_SPEED: f64 = 2.0;
const SAMPLE_STRAIN: (f64, f64) = (0.002, 0.04);

#[derive(Debug, Clone)]
pub struct SampleState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub s: DVector<f64>,
}

impl fmt::Display for SampleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &DVector<f64>| {
            v.iter()
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        write!(
            f,
            "q=[{}] qdot=[{}] S=[{}]",
            list(&self.q),
            list(&self.qdot),
            list(&self.s)
        )
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub module: &'static str,
    pub invariant: &'static str,
    pub tolerance: f64,
    /// Largest normalized violation seen.
    pub worst: f64,
    /// State at the worst violation, when it exceeded the tolerance.
    pub offending: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "ok  " } else { "FAIL" };
        write!(
            f,
            "{verdict} {}::{} worst={:.3e} tol={:.1e}",
            self.module, self.invariant, self.worst, self.tolerance
        )?;
        if let Some(state) = &self.offending {
            write!(f, " at {state}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub samples: usize,
    pub outcomes: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(CheckOutcome::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.outcomes.iter().filter(|o| !o.passed())
    }
}

struct Tracker {
    outcome: CheckOutcome,
}

impl Tracker {
    fn new(module: &'static str, invariant: &'static str, tolerance: f64) -> Self {
        Self {
            outcome: CheckOutcome {
                module,
                invariant,
                tolerance,
                worst: 0.0,
                offending: None,
            },
        }
    }

    fn record(&mut self, value: f64, state: impl FnOnce() -> String) {
        let value = if value.is_nan() { f64::INFINITY } else { value };
        if value > self.outcome.worst {
            self.outcome.worst = value;
            if value > self.outcome.tolerance {
                self.outcome.offending = Some(state());
            }
        }
    }
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(f64::MIN_POSITIVE)
}

fn column_fd<F>(x: &DVector<f64>, rows: usize, h: f64, mut f: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut out = DMatrix::zeros(rows, x.len());
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        out.set_column(k, &((f(&xp)? - f(&xm)?) / (2.0 * h)));
    }
    Ok(out)
}

pub fn sample_state(scenario: &Scenario, rng: &mut impl Rng) -> SampleState {
    let n = scenario.model.dof();
    let span = SAMPLE_SPAN_DEG.to_radians();
    let target = scenario.q_target();
    let q = DVector::from_fn(n, |i, _| target[i] + rng.random_range(-span..=span));
    let qdot = DVector::from_fn(n, |_, _| rng.random_range(-SAMPLE_SPEED..=SAMPLE_SPEED));
    let s = DVector::from_iterator(
        scenario.muscles.len(),
        scenario.muscles.iter().map(|m| {
            m.tendon.slack_length * (1.0 + rng.random_range(SAMPLE_STRAIN.0..=SAMPLE_STRAIN.1))
        }),
    );
    SampleState { q, qdot, s }
}

/// Evaluate every invariant at `samples` random states drawn from `seed`.
pub fn run_checks(scenario: &Scenario, samples: usize, seed: u64) -> Result<CheckReport> {
    let model = &scenario.model;
    let muscles = &scenario.muscles;
    let ctrl = &scenario.controller;
    let cfg = ctrl.config();
    let n = model.dof();
    let m = muscles.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mass_sym = Tracker::new("dynamics", "inertia symmetric", 1e-12);
    let mut mass_pd = Tracker::new("dynamics", "inertia positive definite", 0.0);
    let mut skew = Tracker::new("dynamics", "Ddot - 2C skew-symmetric", 1e-8);
    let mut grav = Tracker::new("dynamics", "gravity equals potential gradient", 1e-6);
    let mut fwd = Tracker::new("dynamics", "forward dynamics residual", 1e-9);
    let mut virt = Tracker::new("muscle", "virtual work equals cross-product torque", 1e-6);
    let mut ljac = Tracker::new("muscle", "length Jacobian matches differences", 1e-6);
    let mut tq = Tracker::new("muscle", "dtau/dq matches differences", 1e-5);
    let mut ts = Tracker::new("muscle", "dtau/dS matches differences", 1e-5);
    let mut toe = Tracker::new("muscle", "tendon curve C1 at toe", 1e-9);
    let mut lyap = Tracker::new("controller", "Lyapunov residual", 1e-10);
    let mut pinv_opt = Tracker::new("controller", "pseudoinverse least-squares optimal", 1e-9);
    let mut pinv_null = Tracker::new("controller", "pseudoinverse null-space free", 1e-10);
    let mut vdot = Tracker::new("controller", "Vdot identity", 1e-8);

    let a = ctrl.a();
    let p = ctrl.p();
    lyap.record(rel(lyapunov_residual(a, p, &cfg.q), cfg.q.norm()), || {
        "scenario gains".into()
    });
    let p_min = p.clone().symmetric_eigenvalues().min();
    lyap.record(if p_min > 0.0 { 0.0 } else { f64::INFINITY }, || {
        "P not positive definite".into()
    });

    for muscle in muscles.iter() {
        let c = &muscle.tendon;
        let edge = c.slack_length * (1.0 + c.eps_toe);
        let d = 1e-12 * c.slack_length;
        let (f_lo, k_lo) = c.force(edge - d)?;
        let (f_hi, k_hi) = c.force(edge + d)?;
        let k = c.linear_stiffness();
        let jump = ((f_hi - f_lo) / c.f_max - 2.0 * d * k / c.f_max)
            .abs()
            .max((k_hi - k_lo).abs() / k);
        toe.record(jump, || format!("muscle {}", muscle.name));
    }

    for _ in 0..samples {
        let st = sample_state(scenario, &mut rng);
        let (q, qdot, s) = (&st.q, &st.qdot, &st.s);
        let at = || st.to_string();

        let d = mass_matrix(model, q)?;
        mass_sym.record(rel((&d - d.transpose()).norm(), d.norm()), at);
        let pd = if d.clone().cholesky().is_some() {
            0.0
        } else {
            f64::INFINITY
        };
        mass_pd.record(pd, at);

        let terms = dynamics_terms(model, q, qdot)?;
        let hd = 1e-5;
        let d_dot = (mass_matrix(model, &(q + qdot * hd))? - mass_matrix(model, &(q - qdot * hd))?)
            / (2.0 * hd);
        let nmat = &d_dot - &terms.coriolis * 2.0;
        skew.record((&nmat + nmat.transpose()).norm(), at);

        let g = gravity_vector(model, q)?;
        let grad = column_fd(q, 1, FD_STEP, |x| {
            Ok(DVector::from_element(1, potential_energy(model, x)?))
        })?;
        grav.record(
            rel((&g - grad.transpose().column(0)).norm(), g.norm().max(1e-9)),
            at,
        );

        let tau = DVector::from_fn(n, |_, _| rng.random_range(-10.0..=10.0));
        let qddot = forward_dynamics(model, q, qdot, &tau)?;
        let res = &terms.mass * &qddot + terms.bias(qdot) - &tau;
        fwd.record(rel(res.norm(), tau.norm().max(1.0)), at);

        let (forces, _) = muscles.forces(s)?;
        let l_fd = column_fd(q, m, FD_STEP, |x| muscle_lengths(model, muscles, x))?;
        let l_an = muscle_jacobian(model, muscles, q)?;
        ljac.record(rel((&l_an - &l_fd).norm(), l_fd.norm()), at);

        let tau_m = torques_from_forces(model, muscles, q, &forces)?;
        let tau_vw = -l_fd.transpose() * &forces;
        virt.record(rel((&tau_m - &tau_vw).norm(), tau_vw.norm().max(1e-9)), at);

        let jac = torque_jacobians(model, muscles, q, s)?;
        let tq_fd = column_fd(q, n, 1e-5, |x| {
            torques_from_forces(model, muscles, x, &forces)
        })?;
        tq.record(
            rel((&jac.wrt_q - &tq_fd).norm(), tq_fd.norm().max(1e-9)),
            at,
        );
        let hs = 1e-7 * s.amax();
        let ts_fd = column_fd(s, n, hs, |x| muscle_torques(model, muscles, q, x))?;
        ts.record(
            rel((&jac.wrt_s - &ts_fd).norm(), ts_fd.norm().max(1e-9)),
            at,
        );

        let j = &jac.wrt_s;
        let rhs = DVector::from_fn(n, |_, _| rng.random_range(-100.0..=100.0));
        let x = min_norm_solve(j, &rhs, cfg.pinv_rel_tol)?;
        let gradient = j.transpose() * (j * &x - &rhs);
        let scale = j.norm() * (j.norm() * x.norm() + rhs.norm());
        pinv_opt.record(rel(gradient.norm(), scale), at);
        let svd = j.clone().svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let cutoff = cfg.pinv_rel_tol * svd.singular_values.max();
        let mut row_part = DVector::zeros(m);
        for (i, &sigma) in svd.singular_values.iter().enumerate() {
            if sigma > cutoff {
                let v = v_t.row(i).transpose();
                row_part += &v * v.dot(&x);
            }
        }
        pinv_null.record(rel((&x - row_part).norm(), x.norm().max(1e-300)), at);

        let err = tracking_error(q, qdot, &scenario.q_target(), &DVector::zeros(n))?;
        let (_, b) = error_system(&terms.mass, cfg)?;
        let w = DVector::from_fn(n, |_, _| rng.random_range(-5.0..=5.0));
        let psi_dot = DVector::from_fn(n, |_, _| rng.random_range(-5.0..=5.0));
        let zd = zeta_dot(&psi_dot, &w, &err, &b, p, cfg)?;
        let (_, v_dot) = lyapunov_diagnostics(&err, &w, p, cfg, &zd, &psi_dot, &b);
        let closed = closed_form_v_dot(&err, &w, cfg);
        let magnitude = err.e.dot(&(&cfg.q * &err.e)).abs()
            + 2.0 * w.dot(&(&cfg.gamma * &w)).abs()
            + 2.0 * w.dot(&(b.transpose() * (p * &err.e))).abs();
        vdot.record(rel((v_dot - closed).abs(), magnitude), at);
    }

    Ok(CheckReport {
        samples,
        outcomes: [
            mass_sym, mass_pd, skew, grav, fwd, virt, ljac, tq, ts, toe, lyap, pinv_opt, pinv_null,
            vdot,
        ]
        .into_iter()
        .map(|t| t.outcome)
        .collect(),
    })
}
