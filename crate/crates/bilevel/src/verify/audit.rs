//! Zero-chain trajectory auditor.
//!
//! Replays a [`QueryTrace`] against a [`ChainLayout`] under the interleaved
//! combined ordering (`x₁, y⁽¹⁾₁..y⁽¹⁾_K, x₂, …`; `z_i` shares `x_i`'s
//! slot). Each oracle call may advance the combined progress — the largest
//! activated slot across queries and revealed gradients — by at most one;
//! a larger jump is a violation of the zero-chain law (or of the solver's
//! zero-respecting behavior, e.g. a random perturbation).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowerbound::{prog_sparse, ChainLayout};
use crate::oracle::{OracleKind, QueryTrace, SparseVec, TraceRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    /// Progress increment per call (combined slots newly revealed).
    pub increments: Vec<i64>,
    /// First call index (0-based) whose increment exceeded 1, if any.
    pub first_violation: Option<usize>,
    /// 1-based call index at which the queried `x` chain progress first
    /// reached `T−1`, if it did.
    pub x_completion_call: Option<usize>,
    /// 1-based call indices `t ≤ n'` where the reference gradient norm at
    /// the queried point failed to clear the floor (empty when no floor
    /// check was requested).
    pub floor_violations: Vec<usize>,
    pub final_progress: usize,
    pub n_prime: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.first_violation.is_none() && self.floor_violations.is_empty()
    }
}

impl std::fmt::Display for AuditReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "calls: {}", self.increments.len())?;
        writeln!(f, "final combined progress: {}", self.final_progress)?;
        writeln!(f, "n': {}", self.n_prime)?;
        match self.first_violation {
            Some(i) => writeln!(f, "zero-chain violation at call {i}")?,
            None => writeln!(f, "zero-chain violations: none")?,
        }
        match self.x_completion_call {
            Some(i) => writeln!(f, "x-progress reached T-1 at call {i}")?,
            None => writeln!(f, "x-progress never reached T-1")?,
        }
        if self.floor_violations.is_empty() {
            write!(f, "gradient-floor violations: none")
        } else {
            write!(
                f,
                "gradient-floor violations at calls {:?}",
                self.floor_violations
            )
        }
    }
}

fn record_progress(layout: &ChainLayout, rec: &TraceRecord, tol: f64) -> usize {
    let mut p = layout.combined_progress_sparse(&rec.x, &rec.y, tol);
    if let Some(v) = &rec.v {
        // HVP direction lives in the lower block.
        p = p.max(layout.combined_progress_sparse(&[], v, tol));
    }
    for (slot, resp) in rec.responses.iter().enumerate() {
        // Responses 0 and 2 are x-block vectors, 1 and 3 lower-block, for
        // both oracle kinds (for HVP, slot 2 is `Jv`, an x-block vector).
        let q = match slot {
            0 | 2 => layout.combined_progress_sparse(resp, &[], tol),
            _ => layout.combined_progress_sparse(&[], resp, tol),
        };
        p = p.max(q);
    }
    p
}

fn sparse_to_dense(v: &SparseVec, dim: usize) -> DVector<f64> {
    let mut out = DVector::zeros(dim);
    for (i, val) in v {
        out[*i as usize] = *val;
    }
    out
}

/// Audits a trace produced on an identity-rotation chain instance started
/// at zero. `tol` is the activation tolerance (0 for exact-arithmetic
/// trajectories, small positive to absorb floating-point drift).
pub fn zero_chain_audit(
    trace: &QueryTrace,
    layout: &ChainLayout,
    tol: f64,
) -> Result<AuditReport> {
    audit_impl(trace, layout, tol, None)
}

/// As [`zero_chain_audit`], additionally checking that the reference
/// gradient norm at each queried `x` with call index `t ≤ n'` stays above
/// `floor`.
pub fn zero_chain_audit_with_floor(
    trace: &QueryTrace,
    layout: &ChainLayout,
    tol: f64,
    floor: f64,
    ref_grad_norm: &dyn Fn(&DVector<f64>) -> f64,
) -> Result<AuditReport> {
    audit_impl(trace, layout, tol, Some((floor, ref_grad_norm)))
}

fn audit_impl(
    trace: &QueryTrace,
    layout: &ChainLayout,
    tol: f64,
    floor: Option<(f64, &dyn Fn(&DVector<f64>) -> f64)>,
) -> Result<AuditReport> {
    let n_prime = layout.n_prime();
    let mut increments = Vec::with_capacity(trace.len());
    let mut first_violation = None;
    let mut x_completion_call = None;
    let mut floor_violations = Vec::new();
    let mut progress = 0usize;

    for (idx, rec) in trace.records().iter().enumerate() {
        for (i, _) in &rec.x {
            if *i as usize >= layout.dim_x() {
                return Err(Error::DimensionMismatch {
                    what: "audit: x index outside layout",
                    expected: layout.dim_x(),
                    got: *i as usize + 1,
                });
            }
        }
        for (i, _) in &rec.y {
            if *i as usize >= layout.dim_lower() {
                return Err(Error::DimensionMismatch {
                    what: "audit: lower index outside layout",
                    expected: layout.dim_lower(),
                    got: *i as usize + 1,
                });
            }
        }
        let p = record_progress(layout, rec, tol);
        let inc = p as i64 - progress as i64;
        increments.push(inc.max(0));
        if inc > 1 && first_violation.is_none() {
            first_violation = Some(idx);
        }
        progress = progress.max(p);

        let call_1b = idx + 1;
        if x_completion_call.is_none() && prog_sparse(&rec.x, tol) >= layout.t - 1 {
            x_completion_call = Some(call_1b);
        }
        if let Some((floor_val, grad_norm)) = floor {
            if call_1b <= n_prime {
                let x = sparse_to_dense(&rec.x, layout.dim_x());
                if grad_norm(&x) <= floor_val {
                    floor_violations.push(call_1b);
                }
            }
        }
    }

    Ok(AuditReport {
        increments,
        first_violation,
        x_completion_call,
        floor_violations,
        final_progress: progress,
        n_prime,
    })
}
