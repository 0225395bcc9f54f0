//! Simulation and optimal-control toolkit for a wing-sweep morphing drone
//! flying through narrow gaps.
//!
//! The crate is organized bottom-up: [`params`] holds vehicle/scenario
//! configuration and the sweep-dependent wing geometry, [`aero`] the
//! post-stall aerodynamic model with propeller slipstream, [`dynamics`] the
//! 10-state longitudinal equations of motion, [`optim`] the QP/SQP machinery,
//! [`trajopt`] multi-phase collocation references, [`mpc`] the receding
//! horizon tracking controller and [`sim`] the closed-loop experiment
//! harness with run statistics.
//!
//! Frame conventions used throughout (documented once here):
//! * inertial frame: x forward, z up;
//! * body frame: x out the nose, z down; pitch angle `theta` and rate `q`
//!   are positive nose-up;
//! * body velocity `[u, w]`, angle of attack `alpha = atan2(w_rel, u_rel)`
//!   of the relative wind, so `alpha > 0` when the flow comes from below;
//! * kinematics: `x_dot = u cos(theta) + w sin(theta)`,
//!   `z_dot = u sin(theta) - w cos(theta)`;
//! * wind-to-body force map: `f_body = [[-cos a, sin a], [-sin a, -cos a]] * [D, L]`;
//! * pitch moment about the CG: `tau = r_z f_x - r_x f_z` (positive nose-up);
//! * a point a distance `xi` aft of the root-wing leading edge and `zeta`
//!   below it sits at body position `[x_cg - xi, zeta - z_cg]` relative to
//!   the CG.

pub mod aero;
pub mod dynamics;
pub mod mpc;
pub mod optim;
pub mod params;
pub mod sim;
pub mod trajopt;
