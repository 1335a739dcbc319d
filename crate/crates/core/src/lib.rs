//! Backstepping control of muscle-driven rigid linkages.
//!
//! The crate is organised bottom-up:
//!
//! * [`kinematics`] and [`dynamics`]: DH chains and the joint-space terms
//!   `D(q)`, `C(q, q̇)`, `g(q)`.
//! * [`muscle`]: straight-line muscle paths, the tendon force law and the
//!   torque Jacobians used by the regulator.
//! * [`controller`]: tracking error, computed-torque feedback, Lyapunov
//!   synthesis and the pseudoinverse activation solve.
//! * [`simulator`]: fixed-step RK4 closed loop and run traces.
//! * [`io`], [`checks`], [`preset`]: scenario files, CSV export, the
//!   invariant suite run by `myobackstep check`, and the bundled shoulder.

pub mod checks;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod kinematics;
pub mod muscle;
pub mod preset;
pub mod simulator;

pub use error::{Error, Result};
