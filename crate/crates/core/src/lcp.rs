//! Brute-force linear complementarity oracle.
//!
//! Finds `z` with `0 <= z  perp  M z + q >= 0` by enumerating all `2^dim`
//! active sets in a fixed lexicographic order and returning the first
//! consistent one. Exponential by construction; it exists to cross-check the
//! fast solvers on small instances, not to be fast itself.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

const MAX_DIM: usize = 20;

/// Solves the LCP by active-set enumeration.
///
/// `tol` bounds every feasibility check: active-block solve consistency,
/// `z >= -tol`, and `M z + q >= -tol`. Singular active blocks are solved in
/// the least-squares sense and skipped when inconsistent.
pub fn lcp_oracle(m: &DMatrix<f64>, q: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let dim = q.len();
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "matrix {}x{} with vector of {dim}",
            m.nrows(),
            m.ncols()
        )));
    }
    if dim > MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "enumeration over 2^{dim} active sets refused, limit is {MAX_DIM}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    for mask in 0u32..(1u32 << dim) {
        let active: Vec<usize> = (0..dim).filter(|i| mask & (1 << i) != 0).collect();
        let k = active.len();
        let mut z = DVector::zeros(dim);
        if k > 0 {
            let mut m_aa = DMatrix::zeros(k, k);
            let mut q_a = DVector::zeros(k);
            for (r, &i) in active.iter().enumerate() {
                q_a[r] = q[i];
                for (c, &j) in active.iter().enumerate() {
                    m_aa[(r, c)] = m[(i, j)];
                }
            }
            let svd = m_aa.clone().svd(true, true);
            let Ok(z_a) = svd.solve(&(-&q_a), 1e-14) else { continue };
            // least squares must actually solve the block
            if (&m_aa * &z_a + &q_a).amax() > tol {
                continue;
            }
            if z_a.iter().any(|&v| v < -tol) {
                continue;
            }
            for (r, &i) in active.iter().enumerate() {
                z[i] = z_a[r].max(0.0);
            }
        }
        let w = m * &z + q;
        if w.iter().all(|&v| v >= -tol) {
            return Ok(z);
        }
    }
    Err(Error::SolverFailure(
        "no active set satisfies the complementarity conditions".into(),
    ))
}
