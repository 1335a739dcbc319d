mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use myobackstep::controller::{
    closed_form_v_dot, control_input, error_system, lyapunov_diagnostics, lyapunov_residual,
    min_norm_solve, psi_dot_directional, solve_lyapunov, synthetic_feedback, tracking_error,
    zeta_dot, ControllerConfig,
};
use myobackstep::dynamics::{
    coriolis_matrix, dynamics_terms, forward_dynamics, gravity_vector, mass_matrix,
};
use myobackstep::simulator::simulate;
use myobackstep::Error;

fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

fn random_spd(r: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let l = random_matrix(r, n, n);
    &l * l.transpose() + DMatrix::identity(n, n) * 0.1
}

pub fn random_hurwitz(r: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let m = random_matrix(r, n, n) * 2.0;
    let shift = m
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::MIN, f64::max);
    m - DMatrix::identity(n, n) * (shift + r.random_range(0.1..2.0))
}

#[test]
fn tracking_error_of_uniform_offset() {
    let target = DVector::from_vec(vec![50f64, 27.0, -45.0]).map(f64::to_radians);
    let q = target.map(|v| v + 10f64.to_radians());
    let e = tracking_error(&q, &DVector::zeros(3), &target, &DVector::zeros(3)).unwrap();
    for i in 0..3 {
        assert!((e.position()[i].to_degrees() - 10.0).abs() < 1e-12);
        assert_eq!(e.velocity()[i], 0.0);
    }
}

#[test]
fn synthetic_feedback_matches_reevaluation() {
    let s = shoulder();
    let cfg = s.controller.config();
    let mut r = rng(20);
    for _ in 0..20 {
        let (q, qdot, _) = random_state(&s, &mut r);
        let qdd_des = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
        let terms = dynamics_terms(&s.model, &q, &qdot).unwrap();
        let err = tracking_error(&q, &qdot, &s.q_target(), &DVector::zeros(3)).unwrap();
        let psi = synthetic_feedback(&terms, &qdot, &err, &qdd_des, cfg).unwrap();

        let a = &qdd_des
            - cfg.kd.component_mul(&err.velocity())
            - cfg.kp.component_mul(&err.position());
        let expected = mass_matrix(&s.model, &q).unwrap() * a
            + coriolis_matrix(&s.model, &q, &qdot).unwrap() * &qdot
            + gravity_vector(&s.model, &q).unwrap();
        assert!(vrel_err(&psi, &expected) < 1e-12);
    }
}

#[test]
fn error_matrix_eigenvalues_from_characteristic_polynomial() {
    let mut cfg = gains(3);
    cfg.kp = DVector::from_element(3, 4.0);
    cfg.kd = DVector::from_element(3, 4.0);
    let (a, b) = error_system(&DMatrix::identity(3, 3), &cfg).unwrap();
    for ev in a.complex_eigenvalues().iter() {
        assert!((ev.re + 2.0).abs() < 1e-6 && ev.im.abs() < 1e-6, "{ev}");
    }
    assert_eq!(b.view((0, 0), (3, 3)).norm(), 0.0);
}

#[test]
fn lyapunov_solution_on_random_hurwitz_instances() {
    let mut r = rng(21);
    for _ in 0..50 {
        let n = r.random_range(2..=8);
        let a = random_hurwitz(&mut r, n);
        let q = random_spd(&mut r, n);
        let p = solve_lyapunov(&a, &q).unwrap();
        assert!(lyapunov_residual(&a, &p, &q) < 1e-10 * q.norm());
        assert!((&p - p.transpose()).norm() <= 1e-12 * p.norm());
        assert!(p.clone().cholesky().is_some());
    }
}

#[test]
fn lyapunov_rejects_unstable_matrix() {
    let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 0.0, -1.0]);
    match solve_lyapunov(&a, &DMatrix::identity(2, 2)) {
        Err(Error::NotHurwitz { re, .. }) => assert!((re - 0.3).abs() < 1e-12),
        other => panic!("{other:?}"),
    }
}

#[test]
fn zeta_dot_solves_its_defining_equation() {
    let s = shoulder();
    let mut r = rng(22);
    let mut cfg = s.controller.config().clone();
    cfg.r = random_spd(&mut r, 3);
    cfg.gamma = random_spd(&mut r, 3);
    let ctrl = myobackstep::controller::Controller::new(cfg.clone()).unwrap();
    for _ in 0..20 {
        let (q, qdot, _) = random_state(&s, &mut r);
        let err = tracking_error(&q, &qdot, &s.q_target(), &DVector::zeros(3)).unwrap();
        let (_, b) = error_system(&mass_matrix(&s.model, &q).unwrap(), &cfg).unwrap();
        let w = DVector::from_fn(3, |_, _| r.random_range(-5.0..5.0));
        let psi_dot = DVector::from_fn(3, |_, _| r.random_range(-5.0..5.0));
        let zd = zeta_dot(&psi_dot, &w, &err, &b, ctrl.p(), &cfg).unwrap();
        let residual =
            &cfg.r * (&psi_dot - &zd) - (&cfg.gamma * &w + b.transpose() * (ctrl.p() * &err.e));
        assert!(residual.norm() < 1e-10);

        let (v, v_dot) = lyapunov_diagnostics(&err, &w, ctrl.p(), &cfg, &zd, &psi_dot, &b);
        let closed = closed_form_v_dot(&err, &w, &cfg);
        assert!(v > 0.0);
        assert!(closed <= 0.0);
        assert!((v_dot - closed).abs() < 1e-10 * closed.abs().max(1.0));
    }
}

#[test]
fn minimum_norm_solution_is_least_squares_optimal() {
    let mut r = rng(23);
    for _ in 0..20 {
        let j = random_matrix(&mut r, 3, 8) * 1000.0;
        let rhs = DVector::from_fn(3, |_, _| r.random_range(-50.0..50.0));
        let u = min_norm_solve(&j, &rhs, ControllerConfig::DEFAULT_PINV_REL_TOL).unwrap();
        let best = (&j * &u - &rhs).norm();
        assert!(best < 1e-9);
        for _ in 0..100 {
            let delta = DVector::from_fn(8, |_, _| r.random_range(-1e-3..1e-3));
            assert!((&j * (&u + delta) - &rhs).norm() >= best);
        }
        // Oracle: the row space of J is spanned by its rows, so U must equal Jᵀy.
        let y = (&j * j.transpose()).cholesky().unwrap().solve(&rhs);
        assert!(vrel_err(&u, &(j.transpose() * y)) < 1e-10);
    }
}

#[test]
fn control_input_realizes_torque_rate_on_shoulder() {
    let s = shoulder();
    let mut r = rng(24);
    for _ in 0..20 {
        let (q, qdot, sv) = random_state(&s, &mut r);
        let jac = myobackstep::muscle::torque_jacobians(&s.model, &s.muscles, &q, &sv).unwrap();
        let ldot = myobackstep::muscle::muscle_jacobian(&s.model, &s.muscles, &q).unwrap() * &qdot;
        let zd = DVector::from_fn(3, |_, _| r.random_range(-20.0..20.0));
        let u = control_input(&zd, &jac.wrt_q, &jac.wrt_s, &qdot, &ldot, 1e-10).unwrap();
        let realized = &jac.wrt_q * &qdot + &jac.wrt_s * (&ldot + &u);
        assert!(vrel_err(&realized, &zd) < 1e-9);
    }
}

fn psi_dot_mode_gap(dt: f64) -> (f64, f64) {
    let mut s = shoulder();
    s.t_end = 0.5;
    s.dt = dt;
    let run = simulate(&s);
    assert!(run.fault.is_none());
    let cfg = s.controller.config();
    let zeros = DVector::zeros(3);
    let directional: Vec<DVector<f64>> = run
        .trace
        .records
        .iter()
        .map(|rec| {
            let terms = dynamics_terms(&s.model, &rec.q, &rec.qdot).unwrap();
            let qdd = forward_dynamics(&s.model, &rec.q, &rec.qdot, &rec.tau).unwrap();
            let err = tracking_error(&rec.q, &rec.qdot, &s.q_target(), &zeros).unwrap();
            psi_dot_directional(&s.model, &rec.q, &rec.qdot, &qdd, &err, &zeros, &terms, cfg)
                .unwrap()
        })
        .collect();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    // Past the initial torque transient, where Ψ̇ jumps from its zero start.
    for (k, rec) in run
        .trace
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.t >= 0.05)
    {
        worst = worst.max((&rec.psi_dot - &directional[k]).norm());
        scale = scale.max(directional[k].norm());
    }
    (worst, scale)
}

#[test]
fn backward_and_directional_psi_dot_agree_to_first_order() {
    let (coarse, scale) = psi_dot_mode_gap(2e-3);
    let (fine, _) = psi_dot_mode_gap(1e-3);
    let (finer, _) = psi_dot_mode_gap(5e-4);
    for ratio in [coarse / fine, fine / finer] {
        assert!((1.6..2.5).contains(&ratio), "{coarse} {fine} {finer}");
    }
    assert!(fine < 0.02 * scale);
}
