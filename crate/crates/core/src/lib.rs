//! Var expansion planning under uncertainty.
//!
//! Each operating scenario is an AC optimal power flow with continuous
//! reactor and capacitor investments. Progressive Hedging drives the
//! per-scenario investments to a common plan, monitored by a deviation
//! metric and a Lagrangian duality gap; the final plan is rounded onto an
//! equipment catalog.

pub mod diagnostics;
pub mod extensive;
pub mod fixtures;
pub mod network;
pub mod ph;
pub mod planning;
pub mod power_flow;
pub mod report;
pub mod study;
pub mod subproblem;
