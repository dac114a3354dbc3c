//! Chain-structured hard instances with theorem-driven parameter selection
//! and closed-form reference hyper-objectives.

mod build;
mod chains;
mod coeffs;
mod instance;
mod predict;
mod serialize;
mod stochastic;
mod upsilon;

pub use build::{build_csc, build_ncsc, build_ncsc_pinned, build_scsc};
pub use chains::{convex_chain, nc_chain, prog, prog_sparse, ChainLayout};
pub use coeffs::{ab_coefficients, b_first_row, subchain_matrix, tridiag_a};
pub use instance::{BlockRotation, ChainInstance, ChainParams, ChainVariant};
pub use predict::{LowerBoundPrediction, Regime};
pub use serialize::{
    load_chain_instance, save_chain_instance, ChainInstanceFile, StochasticInstanceFile,
    CHAIN_SCHEMA, STOCHASTIC_SCHEMA,
};
pub use stochastic::{
    build_stochastic, phi, phi_deriv, psi, psi_deriv, stochastic_chain, stochastic_chain_sfo,
    ChainSfo, StochasticHardInstance,
};
pub use upsilon::{
    deriv_sup, grad_lipschitz, hess_lipschitz, upsilon, upsilon_d2, upsilon_d3, upsilon_deriv,
    UpsilonParams,
};
