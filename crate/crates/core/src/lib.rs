//! Offline autotuning of parallel iterated Runge-Kutta (PIRK) solvers driven
//! by analytic ECM performance predictions.

pub mod codegen;
pub mod descfmt;
pub mod ecm;
pub mod refexec;
pub mod wsm;
pub mod predict;
pub mod store;
pub mod cli;
