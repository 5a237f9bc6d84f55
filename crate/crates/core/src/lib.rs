//! Cost-oriented calibration of wind forecasts and Wasserstein radii through a
//! two-stage power market.
//!
//! The first stage is a distributionally robust reserve schedule (a linear
//! program after reformulation), the second a real-time dispatch LP. Gradients
//! of the operating cost flow back to the forecast parameters through an
//! implicitly differentiated schedule layer and through the dispatch duals.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the CLI and the
//! socket transport for the distributed protocol live in the `drcal` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod calibrate;
pub mod case;
pub mod data;
pub mod diff;
pub mod dispatch;
pub mod matrix;
pub mod protocol;
pub mod schedule;
pub mod solver;
pub mod sparse;
pub mod uq;

mod dense;
mod math;

pub use calibrate::{
    calibrate, calibrate_with, eps_step, forecasts, market_round, mse_grad, mse_loss, task_losses,
    theta_column_grad, theta_column_step, total_grads, CalibrationConfig, CalibrationError,
    CalibrationState, IterationRecord, LossBreakdown, MarketRound, SampleError, SampleMap, Sequential,
};
pub use case::{compute_ptdf, CaseDescription, CaseError, NetworkCase};
pub use data::{gen_synthetic_dataset, Dataset, DatasetRole, SyntheticSpec};
pub use diff::{
    finite_difference_jacobian, schedule_jacobians, DiffError, LayerConfig, ScheduleJacobians, Wrt,
};
pub use dispatch::{
    dispatch_value_partials, solve_dispatch, solve_dispatch_for, DispatchDuals, DispatchError,
    DispatchOptions, DispatchPartials, DispatchSolution,
};
pub use matrix::Matrix;
pub use schedule::{
    build_schedule_program, solve_schedule, worst_case_term, ScheduleError, ScheduleOptions,
    ScheduleProgramLayout, ScheduleSolution,
};
pub use solver::{
    solve, verify_kkt, KktResiduals, SolveStatus, SolverError, SolverOptions, SolverSolution,
    StandardFormProgram,
};
pub use sparse::SparseMatrix;
pub use uq::{empirical_errors, wasserstein_1d, EmpiricalErrorModel, UqError};
