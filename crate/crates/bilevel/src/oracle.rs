//! Oracle wrappers: counting, tracing, and the first-order / HVP contracts.
//!
//! Solvers never evaluate a problem directly; they go through an [`Oracle`],
//! which validates the query, increments the per-run tally, and (when
//! tracing is enabled) appends one record per call. A run is single-threaded
//! and owns its oracle; independent runs compose in parallel.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, check_finite};
use crate::problem::BilevelProblem;

/// Running counts of oracle calls, partitioned by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleTally {
    pub fo_count: u64,
    pub hvp_count: u64,
    pub sfo_count: u64,
}

impl OracleTally {
    pub fn total(&self) -> u64 {
        self.fo_count + self.hvp_count + self.sfo_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleKind {
    FirstOrder,
    Hvp,
    Sfo,
}

/// Sparse view of a vector: `(index, value)` pairs of its nonzero entries.
/// Trace records store queries and response gradients in this form so the
/// auditor can re-derive supports at any tolerance.
pub type SparseVec = Vec<(u32, f64)>;

pub fn to_sparse(v: &DVector<f64>) -> SparseVec {
    v.iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, x)| (i as u32, *x))
        .collect()
}

/// One oracle call: the query point, the kind, and the supports of the
/// response gradients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Strictly increasing call index (starts at 0).
    pub index: u64,
    pub kind: OracleKind,
    pub x: SparseVec,
    pub y: SparseVec,
    /// HVP direction, present only for HVP queries.
    pub v: Option<SparseVec>,
    /// Supports of the returned gradients, in oracle order
    /// (`∇ₓf, ∇ᵧf, ∇ₓg, ∇ᵧg` for first-order; `∇ₓf, ∇ᵧf, Jv, Hv` for HVP).
    pub responses: Vec<SparseVec>,
}

/// Append-only record of the oracle queries and responses of one run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QueryTrace {
    records: Vec<TraceRecord>,
}

impl QueryTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn count_kind(&self, kind: OracleKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    pub(crate) fn push(&mut self, rec: TraceRecord) {
        debug_assert!(self
            .records
            .last()
            .map(|r| r.index < rec.index)
            .unwrap_or(true));
        self.records.push(rec);
    }
}

/// Response of the first-order oracle: the four partial gradients at `(x, y)`.
///
/// The oracle returns the partials of both objectives and counts as a single
/// call; fully first-order solvers consume `∇ₓg`/`∇ᵧg` alongside `f`'s
/// gradients, so the four-tuple reflects the information one query actually
/// reveals.
#[derive(Debug, Clone)]
pub struct FoResponse {
    pub gx_f: DVector<f64>,
    pub gy_f: DVector<f64>,
    pub gx_g: DVector<f64>,
    pub gy_g: DVector<f64>,
}

/// Response of the HVP oracle at `(x, y, v)`.
#[derive(Debug, Clone)]
pub struct HvpResponse {
    pub gx_f: DVector<f64>,
    pub gy_f: DVector<f64>,
    /// `∇²ₓᵧ g(x,y) · v`
    pub jxy_v: DVector<f64>,
    /// `∇²ᵧᵧ g(x,y) · v`
    pub hyy_v: DVector<f64>,
}

/// Counting, validating, tracing front end to a [`BilevelProblem`].
pub struct Oracle<'a, P: BilevelProblem + ?Sized> {
    problem: &'a P,
    tally: OracleTally,
    trace: QueryTrace,
    tracing: bool,
    next_index: u64,
}

impl<'a, P: BilevelProblem + ?Sized> Oracle<'a, P> {
    pub fn new(problem: &'a P) -> Self {
        Oracle {
            problem,
            tally: OracleTally::default(),
            trace: QueryTrace::default(),
            tracing: true,
            next_index: 0,
        }
    }

    /// Oracle that counts but does not record a trace (long benchmark runs).
    pub fn without_trace(problem: &'a P) -> Self {
        let mut o = Self::new(problem);
        o.tracing = false;
        o
    }

    pub fn problem(&self) -> &'a P {
        self.problem
    }

    pub fn tally(&self) -> OracleTally {
        self.tally
    }

    pub fn trace(&self) -> &QueryTrace {
        &self.trace
    }

    pub fn into_trace(self) -> QueryTrace {
        self.trace
    }

    fn validate(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        check_dim(x, self.problem.dim_x(), "oracle query x")?;
        check_dim(y, self.problem.dim_y(), "oracle query y")?;
        check_finite(x, "oracle query x")?;
        check_finite(y, "oracle query y")?;
        Ok(())
    }

    /// First-order oracle: partial gradients of `f` and `g` at `(x, y)`.
    pub fn fo(&mut self, x: &DVector<f64>, y: &DVector<f64>) -> Result<FoResponse> {
        self.validate(x, y)?;
        let resp = FoResponse {
            gx_f: self.problem.grad_f_x(x, y),
            gy_f: self.problem.grad_f_y(x, y),
            gx_g: self.problem.grad_g_x(x, y),
            gy_g: self.problem.grad_g_y(x, y),
        };
        self.tally.fo_count += 1;
        if self.tracing {
            let rec = TraceRecord {
                index: self.next_index,
                kind: OracleKind::FirstOrder,
                x: to_sparse(x),
                y: to_sparse(y),
                v: None,
                responses: vec![
                    to_sparse(&resp.gx_f),
                    to_sparse(&resp.gy_f),
                    to_sparse(&resp.gx_g),
                    to_sparse(&resp.gy_g),
                ],
            };
            self.trace.push(rec);
        }
        self.next_index += 1;
        Ok(resp)
    }

    /// HVP oracle: gradients of `f` plus the second-order products of `g`.
    pub fn hvp(
        &mut self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<HvpResponse> {
        self.validate(x, y)?;
        check_dim(v, self.problem.dim_y(), "oracle query v")?;
        check_finite(v, "oracle query v")?;
        let jxy_v = self
            .problem
            .hess_g_xy_v(x, y, v)
            .ok_or(Error::MissingCapability("second-order products of g"))?;
        let hyy_v = self
            .problem
            .hess_g_yy_v(x, y, v)
            .ok_or(Error::MissingCapability("second-order products of g"))?;
        let resp = HvpResponse {
            gx_f: self.problem.grad_f_x(x, y),
            gy_f: self.problem.grad_f_y(x, y),
            jxy_v,
            hyy_v,
        };
        self.tally.hvp_count += 1;
        if self.tracing {
            let rec = TraceRecord {
                index: self.next_index,
                kind: OracleKind::Hvp,
                x: to_sparse(x),
                y: to_sparse(y),
                v: Some(to_sparse(v)),
                responses: vec![
                    to_sparse(&resp.gx_f),
                    to_sparse(&resp.gy_f),
                    to_sparse(&resp.jxy_v),
                    to_sparse(&resp.hyy_v),
                ],
            };
            self.trace.push(rec);
        }
        self.next_index += 1;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::SmoothnessProfile;
    use nalgebra::DMatrix;

    /// f = g = ½‖x‖² + ½‖y‖²
    struct Decoupled {
        profile: SmoothnessProfile,
    }

    impl Decoupled {
        fn new() -> Self {
            Decoupled {
                profile: SmoothnessProfile::first_order(f64::INFINITY, 1.0, 0.0, 1.0, 0.0),
            }
        }
    }

    impl BilevelProblem for Decoupled {
        fn dim_x(&self) -> usize {
            2
        }
        fn dim_y(&self) -> usize {
            2
        }
        fn profile(&self) -> &SmoothnessProfile {
            &self.profile
        }
        fn f(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
            0.5 * (x.norm_squared() + y.norm_squared())
        }
        fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
            self.f(x, y)
        }
        fn grad_f_x(&self, x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
            x.clone()
        }
        fn grad_f_y(&self, _x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
            y.clone()
        }
        fn grad_g_x(&self, x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
            x.clone()
        }
        fn grad_g_y(&self, _x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
            y.clone()
        }
    }

    #[test]
    fn stationary_point_gives_zero_gradients() {
        let p = Decoupled::new();
        let mut oracle = Oracle::new(&p);
        let z = DVector::zeros(2);
        let r = oracle.fo(&z, &z).unwrap();
        assert_eq!(r.gx_f.norm(), 0.0);
        assert_eq!(r.gy_f.norm(), 0.0);
        assert_eq!(r.gx_g.norm(), 0.0);
        assert_eq!(r.gy_g.norm(), 0.0);
        assert_eq!(oracle.tally().fo_count, 1);
        assert_eq!(oracle.trace().len(), 1);
    }

    #[test]
    fn bilinear_gradients() {
        // f(x, y) = xᵀy at (e1, e2): ∇ₓf = e2, ∇ᵧf = e1.
        struct Bilinear {
            profile: SmoothnessProfile,
        }
        impl BilevelProblem for Bilinear {
            fn dim_x(&self) -> usize {
                2
            }
            fn dim_y(&self) -> usize {
                2
            }
            fn profile(&self) -> &SmoothnessProfile {
                &self.profile
            }
            fn f(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
                x.dot(y)
            }
            fn g(&self, _x: &DVector<f64>, y: &DVector<f64>) -> f64 {
                0.5 * y.norm_squared()
            }
            fn grad_f_x(&self, _x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
                y.clone()
            }
            fn grad_f_y(&self, x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
                x.clone()
            }
            fn grad_g_x(&self, x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(x.len())
            }
            fn grad_g_y(&self, _x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
                y.clone()
            }
        }
        let p = Bilinear {
            profile: SmoothnessProfile::first_order(f64::INFINITY, 1.0, 0.0, 1.0, 0.0),
        };
        let mut oracle = Oracle::new(&p);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        let r = oracle.fo(&e1, &e2).unwrap();
        assert_eq!(r.gx_f, e2);
        assert_eq!(r.gy_f, e1);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = Decoupled::new();
        let mut oracle = Oracle::new(&p);
        let bad = DVector::zeros(3);
        let ok = DVector::zeros(2);
        assert!(matches!(
            oracle.fo(&bad, &ok),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(oracle.tally().fo_count, 0);
    }

    #[test]
    fn missing_second_order_is_reported() {
        let p = Decoupled::new();
        let mut oracle = Oracle::new(&p);
        let z = DVector::zeros(2);
        assert!(matches!(
            oracle.hvp(&z, &z, &z),
            Err(Error::MissingCapability(_))
        ));
    }

    #[test]
    fn tallies_match_trace_partition() {
        use crate::problem::QuadraticLowerLevel;
        struct Quad {
            q: QuadraticLowerLevel,
            profile: SmoothnessProfile,
        }
        impl BilevelProblem for Quad {
            fn dim_x(&self) -> usize {
                self.q.dim_x()
            }
            fn dim_y(&self) -> usize {
                self.q.dim_y()
            }
            fn profile(&self) -> &SmoothnessProfile {
                &self.profile
            }
            fn f(&self, x: &DVector<f64>, _y: &DVector<f64>) -> f64 {
                0.5 * x.norm_squared()
            }
            fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
                self.q.value(x, y)
            }
            fn grad_f_x(&self, x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
                x.clone()
            }
            fn grad_f_y(&self, _x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(y.len())
            }
            fn grad_g_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
                self.q.grad_x(x, y)
            }
            fn grad_g_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
                self.q.grad_y(x, y)
            }
            fn hess_g_xy_v(
                &self,
                _x: &DVector<f64>,
                _y: &DVector<f64>,
                v: &DVector<f64>,
            ) -> Option<DVector<f64>> {
                Some(&self.q.j * v)
            }
            fn hess_g_yy_v(
                &self,
                _x: &DVector<f64>,
                _y: &DVector<f64>,
                v: &DVector<f64>,
            ) -> Option<DVector<f64>> {
                Some(&self.q.h * v)
            }
            fn has_second_order(&self) -> bool {
                true
            }
            fn quadratic_lower(&self) -> Option<&QuadraticLowerLevel> {
                Some(&self.q)
            }
        }
        let p = Quad {
            q: QuadraticLowerLevel::new(
                DMatrix::identity(2, 2),
                DMatrix::zeros(2, 2),
                DVector::zeros(2),
            )
            .unwrap(),
            profile: SmoothnessProfile::first_order(f64::INFINITY, 1.0, 0.0, 1.0, 0.0),
        };
        let mut oracle = Oracle::new(&p);
        let z = DVector::zeros(2);
        let v = DVector::from_vec(vec![1.0, 2.0]);
        oracle.fo(&z, &z).unwrap();
        oracle.hvp(&z, &z, &v).unwrap();
        oracle.fo(&z, &v).unwrap();
        let tally = oracle.tally();
        assert_eq!(tally.fo_count, 2);
        assert_eq!(tally.hvp_count, 1);
        let trace = oracle.trace();
        assert_eq!(trace.len() as u64, tally.total());
        assert_eq!(trace.count_kind(OracleKind::FirstOrder) as u64, tally.fo_count);
        assert_eq!(trace.count_kind(OracleKind::Hvp) as u64, tally.hvp_count);
        // v = 0 gives zero products.
        let r = oracle.hvp(&v, &v, &z).unwrap();
        assert_eq!(r.jxy_v.norm(), 0.0);
        assert_eq!(r.hyy_v.norm(), 0.0);
    }
}
