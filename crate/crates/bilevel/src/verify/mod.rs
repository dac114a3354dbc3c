//! Independent oracles and auditors: finite differences, dense reference
//! solves, sampled Lipschitz certificates, stochastic-oracle statistics,
//! quadrature, and the zero-chain trajectory auditor.
//!
//! Nothing in this module shares an evaluation path with the code it
//! checks.

mod audit;
mod fd;
mod lipschitz;
mod sfo_stats;
pub mod quadrature;
pub mod suites;

pub use audit::{zero_chain_audit, zero_chain_audit_with_floor, AuditReport};
pub use fd::{default_grad_step, default_hess_step, dense_hessian, fd_gradient, min_eigenvalue};
pub use lipschitz::{lipschitz_estimate, LipschitzSampler};
pub use sfo_stats::{sfo_stats, SfoStats};
