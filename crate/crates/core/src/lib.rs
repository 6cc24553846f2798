//! Core algorithms for force-aware bimanual regrasp planning.
//!
//! The crate is organized in the order data flows through the planner:
//!
//! * [`se3`] — rigid-body math: poses, unit dual quaternions, screw
//!   interpolation, wrench transforms.
//! * [`arm`] — 7-DOF serial arm kinematics: forward kinematics, geometric
//!   Jacobian, damped-least-squares IK with swivel-angle redundancy.
//! * [`qp`] — dense QP solver (box + linear inequality constraints) used by
//!   both the stability checker and the velocity controller.
//! * [`stability`] — grasp-wrench equilibrium and joint-torque feasibility.
//! * [`perf_map`] — voxelized motion performance map and grasp ranking.
//! * [`graph`] — stable configuration graph and minimum-regrasp search.
//! * [`sampler`] — stable-intersection sampling and multi-grasp transition
//!   consolidation for unimanual intermediates.
//! * [`imitation`] — ProMP trajectory learning, dual-quaternion retargeting
//!   and ScLERP blending.
//! * [`control`] — QP velocity controller with manipulability and potential
//!   field terms, closed-loop path execution.
//! * [`harness`] — task scenarios, baseline planners, end-to-end pipeline
//!   and metrics.
//!
//! The crate is `no_std` (alloc required); all IO, file formats and the CLI
//! live in the companion `bimanual-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod arm;
pub mod control;
pub mod graph;
pub mod harness;
pub mod imitation;
pub mod perf_map;
pub mod qp;
pub mod sampler;
pub mod se3;
pub mod stability;

pub use arm::{ArmModel, JointConfig};
pub use se3::{Pose, UnitDualQuat, Wrench};
