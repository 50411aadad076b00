//! Online walking synthesis for an underactuated planar biped on
//! constrained footholds.
//!
//! The pipeline plans each step on a reduced pendulum model whose only
//! state is the unactuated degree of freedom (COM position and momentum
//! about the stance foot), regulates the orbital energy carried through
//! each impact by shaping the pre-impact vertical COM velocity, tracks
//! that command with a shrinking-horizon MPC, and realizes everything on
//! the full five-link dynamics through a task-space QP. The [`sim`]
//! module closes the hybrid loop: guarded integration, plastic impacts,
//! and leg relabeling over a sequence of stepping stones.

pub mod gait;
pub mod hybrid;
pub mod lip;
pub mod model;
pub mod mpc;
pub mod ode;
pub mod qp;
pub mod sim;
pub mod terrain;
pub mod tsc;

pub use gait::{GaitParams, OutputSet, StepPlan};
pub use hybrid::{ComKinematics, EnergyTarget, StoneConfig};
pub use lip::{LipParams, ReducedState};
pub use model::{RobotModel, RobotState};
pub use mpc::{MpcParams, MpcSolution, MpcStatus, VerticalMpc};
pub use qp::{QpProblem, QpSolution, QpSolver, QpStatus};
pub use sim::{run_batch, run_batch_sequential, run_scenario, Scenario, SimLog, SimOutcome};
pub use terrain::Terrain;
pub use tsc::{ControlCommand, ControllerGains, TaskSpaceController};
