//! Articulated-body dynamics and dynamics-grounded tree message passing.
//!
//! The crate is organised bottom-up:
//!
//! * [`spatial`] – Plücker-coordinate spatial algebra.
//! * [`morphology`] – kinematic trees parsed from native JSON or URDF.
//! * [`dynamics`] – the Articulated Body Algorithm, a CRBA/RNEA oracle and
//!   a semi-implicit integrator.
//! * [`envs`] – torque-controlled environments built on the dynamics.
//! * [`autodiff`] – a small tape-based reverse-mode tensor engine.
//! * [`nets`] – the articulated-body actor, GNN/MLP baselines, critic,
//!   FLOPs accounting and checkpoints.
//! * [`learn`] – PPO, dynamics-model regression, mass-shift retention and
//!   the ablation harness.

pub mod autodiff;
pub mod dynamics;
pub mod envs;
pub mod learn;
pub mod manifest;
pub mod morphology;
pub mod nets;
pub mod spatial;
