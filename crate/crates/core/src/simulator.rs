//! Closed-loop integration of linkage, tendons and regulator.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{
    self, closed_form_v_dot, control_input, lyapunov_diagnostics, psi_dot_directional,
    synthetic_feedback, tracking_error, zeta_dot, Controller, ControllerInternals, ErrorState,
    PsiDotMode, PsiHistory,
};
use crate::dynamics::{accelerations, dynamics_terms};
use crate::error::{Error, Result};
use crate::kinematics::LinkageModel;
use crate::muscle::{
    muscle_jacobian, muscle_lengths, tendon_torque_jacobian, torque_position_jacobian,
    torques_from_forces, MuscleSet,
};

/// Tolerance used by [`settling_time`], radians.
pub const SETTLING_BAND: f64 = std::f64::consts::PI / 180.0;

/// A complete, validated regulation experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: LinkageModel,
    pub muscles: MuscleSet,
    pub controller: Controller,
    /// Set-point in degrees.
    pub q_target_deg: DVector<f64>,
    /// Half-width of the uniform initial offset, degrees.
    pub init_offset_range_deg: f64,
    /// Tendon strain every muscle starts from.
    pub initial_strain: f64,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let n = self.model.dof();
        let bad = |msg: &str| Err(Error::InvalidModel(msg.to_string()));
        if self.controller.config().dof() != n {
            return Err(Error::Dimension {
                what: "controller gains",
                expected: n,
                got: self.controller.config().dof(),
            });
        }
        if self.q_target_deg.len() != n {
            return Err(Error::Dimension {
                what: "q_target",
                expected: n,
                got: self.q_target_deg.len(),
            });
        }
        if !self.q_target_deg.iter().all(|v| v.is_finite()) {
            return bad("q_target must be finite");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return bad("t_end must be non-negative");
        }
        if !(self.init_offset_range_deg.is_finite() && self.init_offset_range_deg >= 0.0) {
            return bad("init_offset_range must be non-negative");
        }
        if !(self.initial_strain.is_finite() && self.initial_strain > -1.0) {
            return bad("initial_strain must be finite and greater than -1");
        }
        Ok(())
    }

    pub fn q_target(&self) -> DVector<f64> {
        self.q_target_deg.map(f64::to_radians)
    }

    /// Number of records a full run produces.
    pub fn record_count(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    /// Serial-element (tendon) lengths.
    pub s: DVector<f64>,
}

impl SimState {
    fn pack(&self) -> DVector<f64> {
        let (n, m) = (self.q.len(), self.s.len());
        let mut x = DVector::zeros(2 * n + m);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.qdot);
        x.rows_mut(2 * n, m).copy_from(&self.s);
        x
    }

    fn unpack(t: f64, x: &DVector<f64>, n: usize) -> Self {
        let m = x.len() - 2 * n;
        Self {
            t,
            q: x.rows(0, n).into_owned(),
            qdot: x.rows(n, n).into_owned(),
            s: x.rows(2 * n, m).into_owned(),
        }
    }
}

/// Seeded initial condition: uniform joint offsets, rest, pre-strained tendons.
pub fn init_state(scenario: &Scenario) -> SimState {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let range = scenario.init_offset_range_deg;
    let q = scenario.q_target_deg.map(|target| {
        let offset = if range > 0.0 {
            rng.random_range(-range..=range)
        } else {
            0.0
        };
        (target + offset).to_radians()
    });
    let s = DVector::from_iterator(
        scenario.muscles.len(),
        scenario
            .muscles
            .iter()
            .map(|m| m.tendon.slack_length * (1.0 + scenario.initial_strain)),
    );
    SimState {
        t: 0.0,
        qdot: DVector::zeros(q.len()),
        q,
        s,
    }
}

/// One closed-loop evaluation: state derivatives plus everything worth logging.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub qddot: DVector<f64>,
    pub sdot: DVector<f64>,
    pub tau: DVector<f64>,
    pub lengths: DVector<f64>,
    pub forces: DVector<f64>,
    pub error: ErrorState,
    pub internals: ControllerInternals,
    /// `-eᵀQe - 2wᵀΓw` for the same state.
    pub v_dot_closed_form: f64,
}

/// Source of `Ψ̇` for a single evaluation.
#[derive(Debug, Clone, Copy)]
pub enum PsiDotSource<'a> {
    /// Use this value (backward-difference mode holds it over a step).
    Fixed(&'a DVector<f64>, bool),
    /// Compute from the state flow.
    Directional,
}

/// Closed-loop right-hand side at `state`.
pub fn derivatives(
    state: &SimState,
    scenario: &Scenario,
    psi_dot_source: PsiDotSource<'_>,
) -> Result<Evaluation> {
    let model = &scenario.model;
    let muscles = &scenario.muscles;
    let ctrl = &scenario.controller;
    let cfg = ctrl.config();
    let n = model.dof();
    let (q, qdot, s) = (&state.q, &state.qdot, &state.s);

    let terms = dynamics_terms(model, q, qdot)?;
    let (forces, slopes) = muscles.forces(s)?;
    let lengths = muscle_lengths(model, muscles, q)?;
    let length_jac = muscle_jacobian(model, muscles, q)?;
    let tau = torques_from_forces(model, muscles, q, &forces)?;

    let zeros = DVector::zeros(n);
    let err = tracking_error(q, qdot, &scenario.q_target(), &zeros)?;
    let psi = synthetic_feedback(&terms, qdot, &err, &zeros, cfg)?;
    let qddot = accelerations(&terms, qdot, &tau)?;

    let (psi_dot, first_step) = match psi_dot_source {
        PsiDotSource::Fixed(v, first) => (v.clone(), first),
        PsiDotSource::Directional => (
            psi_dot_directional(model, q, qdot, &qddot, &err, &zeros, &terms, cfg)?,
            false,
        ),
    };

    let w = &tau - &psi;
    let (_, b) = controller::error_system(&terms.mass, cfg)?;
    let zeta_dot = zeta_dot(&psi_dot, &w, &err, &b, ctrl.p(), cfg)?;

    let dtau_dq = torque_position_jacobian(model, muscles, q, &forces)?;
    let dtau_ds = tendon_torque_jacobian(&length_jac, &slopes);
    let ldot = &length_jac * qdot;
    let mut u = control_input(&zeta_dot, &dtau_dq, &dtau_ds, qdot, &ldot, cfg.pinv_rel_tol)?;
    if let Some(limit) = cfg.activation_limit {
        u.apply(|x| *x = x.clamp(-limit, limit));
    }
    let sdot = ldot + &u;

    let (v, v_dot) = lyapunov_diagnostics(&err, &w, ctrl.p(), cfg, &zeta_dot, &psi_dot, &b);
    let v_dot_closed_form = closed_form_v_dot(&err, &w, cfg);

    Ok(Evaluation {
        qddot,
        sdot,
        tau,
        lengths,
        forces,
        error: err,
        internals: ControllerInternals {
            psi,
            psi_dot,
            w,
            zeta_dot,
            b,
            v,
            v_dot,
            u,
            first_step,
        },
        v_dot_closed_form,
    })
}

/// Classical fixed-step RK4 for `ẋ = f(t, x)`.
pub fn rk4_step<F>(t: f64, x: &DVector<f64>, dt: f64, mut f: F) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * dt, &(x + &k1 * (0.5 * dt)))?;
    let k3 = f(t + 0.5 * dt, &(x + &k2 * (0.5 * dt)))?;
    let k4 = f(t + dt, &(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

fn flow(eval: &Evaluation, qdot: &DVector<f64>) -> DVector<f64> {
    let (n, m) = (qdot.len(), eval.sdot.len());
    let mut dx = DVector::zeros(2 * n + m);
    dx.rows_mut(0, n).copy_from(qdot);
    dx.rows_mut(n, n).copy_from(&eval.qddot);
    dx.rows_mut(2 * n, m).copy_from(&eval.sdot);
    dx
}

/// Stepping driver holding the `Ψ` history between steps.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    scenario: &'a Scenario,
    history: PsiHistory,
}

impl<'a> Integrator<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        Self {
            scenario,
            history: PsiHistory::new(),
        }
    }

    /// Evaluate the controller at the start of a step (what gets logged).
    pub fn evaluate(&self, state: &SimState) -> Result<Evaluation> {
        match self.scenario.controller.config().psi_dot_mode {
            PsiDotMode::DirectionalAnalytic => {
                derivatives(state, self.scenario, PsiDotSource::Directional)
            }
            PsiDotMode::BackwardDifference => {
                // Ψ does not depend on Ψ̇, so a first pass with zero yields Ψ_k.
                let zero = DVector::zeros(state.q.len());
                let probe = derivatives(state, self.scenario, PsiDotSource::Fixed(&zero, true))?;
                let (psi_dot, first) = self
                    .history
                    .estimate(&probe.internals.psi, self.scenario.dt);
                if first {
                    return Ok(probe);
                }
                derivatives(state, self.scenario, PsiDotSource::Fixed(&psi_dot, false))
            }
        }
    }

    /// Advance one RK4 step from `state`, given its start-of-step evaluation.
    pub fn step(&mut self, state: &SimState, start: &Evaluation) -> Result<SimState> {
        let scenario = self.scenario;
        let n = state.q.len();
        let dt = scenario.dt;
        let mode = scenario.controller.config().psi_dot_mode;
        let psi_dot = start.internals.psi_dot.clone();
        let first = start.internals.first_step;
        let x0 = state.pack();
        let mut stage = 0;
        let next = rk4_step(state.t, &x0, dt, |t, x| {
            stage += 1;
            if stage == 1 {
                return Ok(flow(start, &state.qdot));
            }
            let st = SimState::unpack(t, x, n);
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence {
                    t,
                    reason: "non-finite stage state".into(),
                });
            }
            let source = match mode {
                PsiDotMode::BackwardDifference => PsiDotSource::Fixed(&psi_dot, first),
                PsiDotMode::DirectionalAnalytic => PsiDotSource::Directional,
            };
            let eval = derivatives(&st, scenario, source).map_err(|e| wrap(t, e))?;
            Ok(flow(&eval, &st.qdot))
        })?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                t: state.t + dt,
                reason: "non-finite state after step".into(),
            });
        }
        self.history.push(start.internals.psi.clone());
        Ok(SimState::unpack(state.t + dt, &next, n))
    }
}

fn wrap(t: f64, e: Error) -> Error {
    match e {
        Error::Divergence { .. } | Error::StepFailed { .. } => e,
        other => Error::StepFailed {
            t,
            source: Box::new(other),
        },
    }
}

/// One step of the closed loop from a fresh history (convenience wrapper).
pub fn step_rk4(state: &SimState, scenario: &Scenario) -> Result<SimState> {
    let mut integrator = Integrator::new(scenario);
    let start = integrator.evaluate(state).map_err(|e| wrap(state.t, e))?;
    integrator.step(state, &start)
}

/// One logged sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub q: DVector<f64>,
    pub q_des: DVector<f64>,
    pub q_err: DVector<f64>,
    pub qdot: DVector<f64>,
    pub s: DVector<f64>,
    pub lengths: DVector<f64>,
    pub forces: DVector<f64>,
    pub u: DVector<f64>,
    pub tau: DVector<f64>,
    pub psi: DVector<f64>,
    pub psi_dot: DVector<f64>,
    pub w: DVector<f64>,
    pub zeta_dot: DVector<f64>,
    /// Full stacked error `e`.
    pub e: DVector<f64>,
    pub v: f64,
    pub v_dot: f64,
    pub v_dot_closed_form: f64,
}

impl Record {
    fn new(state: &SimState, q_des: &DVector<f64>, eval: Evaluation) -> Self {
        Self {
            t: state.t,
            q: state.q.clone(),
            q_des: q_des.clone(),
            q_err: eval.error.position(),
            qdot: state.qdot.clone(),
            s: state.s.clone(),
            lengths: eval.lengths,
            forces: eval.forces,
            u: eval.internals.u,
            tau: eval.tau,
            psi: eval.internals.psi,
            psi_dot: eval.internals.psi_dot,
            w: eval.internals.w,
            zeta_dot: eval.internals.zeta_dot,
            e: eval.error.e,
            v: eval.internals.v,
            v_dot: eval.internals.v_dot,
            v_dot_closed_form: eval.v_dot_closed_form,
        }
    }
}

/// Uniform-timestep run history.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub dt: f64,
    pub dof: usize,
    pub muscles: usize,
    pub records: Vec<Record>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }
}

/// First time after which `max |q̃| < band` holds for the rest of the trace.
pub fn settling_time(trace: &Trace, band: f64) -> Option<f64> {
    let outside = |r: &Record| r.q_err.iter().any(|v| v.abs() >= band);
    match trace.records.iter().rposition(outside) {
        None => trace.records.first().map(|r| r.t),
        Some(i) if i + 1 < trace.records.len() => Some(trace.records[i + 1].t),
        Some(_) => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub settling_time: Option<f64>,
    pub final_max_error_deg: f64,
    pub final_v: f64,
}

/// Result of [`simulate`]; a fault keeps the partial trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub trace: Trace,
    pub fault: Option<Error>,
}

impl SimulationRun {
    pub fn summary(&self) -> RunSummary {
        let last = self.trace.last();
        RunSummary {
            settling_time: if self.fault.is_none() {
                settling_time(&self.trace, SETTLING_BAND)
            } else {
                None
            },
            final_max_error_deg: last
                .map(|r| r.q_err.amax().to_degrees())
                .unwrap_or(f64::NAN),
            final_v: last.map(|r| r.v).unwrap_or(f64::NAN),
        }
    }
}

pub fn simulate(scenario: &Scenario) -> SimulationRun {
    simulate_from(scenario, init_state(scenario))
}

pub fn simulate_from(scenario: &Scenario, initial: SimState) -> SimulationRun {
    let steps = scenario.record_count();
    let q_des = scenario.q_target();
    let mut trace = Trace {
        dt: scenario.dt,
        dof: scenario.model.dof(),
        muscles: scenario.muscles.len(),
        records: Vec::with_capacity(steps),
    };
    let mut integrator = Integrator::new(scenario);
    let mut state = initial;
    for k in 0..steps {
        let eval = match integrator.evaluate(&state) {
            Ok(e) => e,
            Err(e) => {
                return SimulationRun {
                    trace,
                    fault: Some(wrap(state.t, e)),
                }
            }
        };
        let last = k + 1 == steps;
        let next = if last {
            None
        } else {
            Some(integrator.step(&state, &eval))
        };
        trace.records.push(Record::new(&state, &q_des, eval));
        match next {
            None => {}
            Some(Ok(mut s)) => {
                // Pin the time grid to k·dt to avoid drift.
                s.t = (k + 1) as f64 * scenario.dt;
                state = s;
            }
            Some(Err(e)) => {
                return SimulationRun {
                    trace,
                    fault: Some(e),
                }
            }
        }
    }
    SimulationRun { trace, fault: None }
}
