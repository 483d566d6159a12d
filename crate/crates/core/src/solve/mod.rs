//! Krylov solvers and the steady heat driver.

mod heat;
mod krylov;

pub use heat::{l2_error, solve_heat, Face, HeatModel, HeatProblem, HeatSolution, SolvePath};
pub use krylov::{
    convergence_order, krylov_solve, krylov_solve_with, ConvergedReason, Method, Preconditioner, SolveReport,
    SolveSetup, SolverOptions,
};
