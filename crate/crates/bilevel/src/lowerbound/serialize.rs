//! Versioned instance files: scalar parameters only, matrices are
//! reconstructed deterministically on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowerbound::instance::{BlockRotation, ChainInstance, ChainParams, ChainVariant};
use crate::lowerbound::stochastic::StochasticHardInstance;
use crate::lowerbound::ChainLayout;

pub const CHAIN_SCHEMA: &str = "chain-instance/v1";
pub const STOCHASTIC_SCHEMA: &str = "stochastic-instance/v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainInstanceFile {
    pub schema: String,
    pub k: usize,
    pub t: usize,
    /// `Some((nu, r))` for the nonconvex variant, `None` for convex.
    pub nu: Option<f64>,
    pub r: Option<f64>,
    pub beta: f64,
    pub l1: f64,
    pub mu_x: f64,
    pub a_k: f64,
    pub b_k: f64,
    pub rotation_seed: Option<u64>,
}

impl ChainInstanceFile {
    pub fn from_instance(inst: &ChainInstance, rotation_seed: Option<u64>) -> Self {
        let (nu, r) = match inst.params.variant {
            ChainVariant::Nonconvex(u) => (Some(u.nu), Some(u.r)),
            ChainVariant::Convex => (None, None),
        };
        ChainInstanceFile {
            schema: CHAIN_SCHEMA.to_string(),
            k: inst.params.k,
            t: inst.params.t,
            nu,
            r,
            beta: inst.params.beta,
            l1: inst.params.l1,
            mu_x: inst.params.mu_x,
            a_k: inst.a_k,
            b_k: inst.b_k,
            rotation_seed,
        }
    }

    pub fn rebuild(&self) -> Result<ChainInstance> {
        if self.schema != CHAIN_SCHEMA {
            return Err(Error::data(format!(
                "unsupported schema `{}`, expected `{CHAIN_SCHEMA}`",
                self.schema
            )));
        }
        let variant = match (self.nu, self.r) {
            (Some(nu), Some(r)) => {
                ChainVariant::Nonconvex(crate::lowerbound::UpsilonParams { r, nu })
            }
            (None, None) => ChainVariant::Convex,
            _ => return Err(Error::data("nu and r must be given together")),
        };
        let params = ChainParams {
            k: self.k,
            t: self.t,
            variant,
            beta: self.beta,
            l1: self.l1,
            mu_x: self.mu_x,
        };
        let rotation = self
            .rotation_seed
            .map(|s| ChainLayout::new(self.t, self.k).map(|l| BlockRotation::random(l, s)))
            .transpose()?;
        let inst = ChainInstance::new(params, rotation)?;
        // The coefficients are derived data; a mismatch means the file does
        // not describe what this build would construct.
        if (inst.a_k - self.a_k).abs() > 1e-12 * (1.0 + self.a_k.abs())
            || (inst.b_k - self.b_k).abs() > 1e-12 * (1.0 + self.b_k.abs())
        {
            return Err(Error::data(format!(
                "coefficient mismatch on load: file (a_K, b_K) = ({}, {}), \
                 reconstructed ({}, {})",
                self.a_k, self.b_k, inst.a_k, inst.b_k
            )));
        }
        Ok(inst)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StochasticInstanceFile {
    pub schema: String,
    pub t: usize,
    pub d: usize,
    pub p: f64,
    pub beta: f64,
    pub l1: f64,
    pub mu_y: f64,
    pub rotation_seed: Option<u64>,
}

impl StochasticInstanceFile {
    pub fn from_instance(inst: &StochasticHardInstance, rotation_seed: Option<u64>) -> Self {
        StochasticInstanceFile {
            schema: STOCHASTIC_SCHEMA.to_string(),
            t: inst.t,
            d: inst.d,
            p: inst.p_bern,
            beta: inst.beta,
            l1: inst.l1,
            mu_y: inst.mu_y,
            rotation_seed,
        }
    }

    pub fn rebuild(&self) -> Result<StochasticHardInstance> {
        if self.schema != STOCHASTIC_SCHEMA {
            return Err(Error::data(format!(
                "unsupported schema `{}`, expected `{STOCHASTIC_SCHEMA}`",
                self.schema
            )));
        }
        StochasticHardInstance::new(
            self.t,
            self.d,
            self.p,
            self.beta,
            self.l1,
            self.mu_y,
            self.rotation_seed,
        )
    }
}

pub fn save_chain_instance(
    inst: &ChainInstance,
    rotation_seed: Option<u64>,
    path: &Path,
) -> Result<()> {
    let file = ChainInstanceFile::from_instance(inst, rotation_seed);
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_chain_instance(path: &Path) -> Result<ChainInstance> {
    let text = std::fs::read_to_string(path)?;
    let file: ChainInstanceFile = serde_json::from_str(&text)?;
    file.rebuild()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowerbound::build_ncsc_pinned;

    #[test]
    fn chain_round_trip() {
        let (inst, _) = build_ncsc_pinned(10, 4, 1.0, 1.0, 1e-2, 1.0, Some(3)).unwrap();
        let file = ChainInstanceFile::from_instance(&inst, Some(3));
        let text = serde_json::to_string(&file).unwrap();
        let parsed: ChainInstanceFile = serde_json::from_str(&text).unwrap();
        let rebuilt = parsed.rebuild().unwrap();
        assert_eq!(rebuilt.params.k, inst.params.k);
        assert_eq!(rebuilt.params.t, inst.params.t);
        assert_eq!(rebuilt.beta(), inst.beta());
        // same rotation seed reproduces the same instance
        let x = nalgebra::DVector::from_fn(4, |i, _| 0.1 * i as f64 - 0.15);
        let (v1, g1) = inst.hyper_objective(&x);
        let (v2, g2) = rebuilt.hyper_objective(&x);
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn tampered_coefficients_are_rejected() {
        let (inst, _) = build_ncsc_pinned(10, 4, 1.0, 1.0, 1e-2, 1.0, None).unwrap();
        let mut file = ChainInstanceFile::from_instance(&inst, None);
        file.a_k += 0.5;
        assert!(file.rebuild().is_err());
    }
}
