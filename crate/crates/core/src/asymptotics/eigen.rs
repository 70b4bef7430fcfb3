//! Eigen-decomposition of Q that keeps the W-inherited part apart from the
//! rest of the spectrum.
//!
//! Let S map a vector of s stacked K-blocks to its s block sums. Since every
//! H^j is column-stochastic, S Q = W S, so the subspace T = ker S of vectors
//! with zero block sums is Q-invariant. The spectrum of Q restricted to T is
//! the residual spectrum; each eigenpair (mu, r) of W lifts to an eigenvector
//! of Q whose block sums are r. Working with the restriction avoids having to
//! decide which of two numerically equal eigenvalues is the inherited one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};

/// Eigen-data of a subsystem matrix. Columns `0..inherited` of `right` and
/// `left` belong to eigenvalues inherited from W; the remaining ones span the
/// zero-block-sum subspace. `left^T right = I`.
#[derive(Debug, Clone)]
pub struct EigenData {
    pub q: DMatrix<f64>,
    pub k: usize,
    pub values: Vec<C64>,
    pub right: DMatrix<C64>,
    pub left: DMatrix<C64>,
    pub inherited: usize,
    /// Condition number of `right`.
    pub condition: f64,
}

impl EigenData {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn inherited_values(&self) -> &[C64] {
        &self.values[..self.inherited]
    }

    pub fn residual_values(&self) -> &[C64] {
        &self.values[self.inherited..]
    }

    /// Recomputes the left vectors after the right basis has been changed.
    pub fn refresh_left(&mut self) -> Result<()> {
        let inv = linalg::inverse_c(&self.right)
            .ok_or_else(|| Error::DefectiveMatrix("eigenvector matrix is singular".into()))?;
        self.left = inv.transpose();
        self.condition = linalg::condition_c(&self.right);
        Ok(())
    }
}

/// Orthonormal basis of the zero-block-sum subspace: per urn, the Helmert
/// contrasts of K entries. Dimension s(K - 1).
pub fn tangent_basis(s: usize, k: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(s * k, s * (k - 1));
    for a in 0..s {
        for m in 1..k {
            let col = a * (k - 1) + (m - 1);
            let norm = ((m * (m + 1)) as f64).sqrt();
            for i in 0..m {
                e[(a * k + i, col)] = 1.0 / norm;
            }
            e[(a * k + m, col)] = -(m as f64) / norm;
        }
    }
    e
}

/// Q restricted to the zero-block-sum subspace, in the basis of [`tangent_basis`].
pub fn tangent_restriction(q: &DMatrix<f64>, s: usize, k: usize) -> DMatrix<f64> {
    let e = tangent_basis(s, k);
    e.transpose() * q * &e
}

/// Eigenvalues of Q outside the spectrum inherited from W.
pub fn residual_eigenvalues(q: &DMatrix<f64>, s: usize, k: usize) -> Result<Vec<C64>> {
    linalg::eigenvalues(&tangent_restriction(q, s, k))
}

/// Structured eigen-decomposition of `q` over `s = w.nrows()` urns with `k`
/// colors each.
pub fn eigen_decompose(q: &DMatrix<f64>, w: &DMatrix<f64>, k: usize) -> Result<EigenData> {
    let s = w.nrows();
    let n = s * k;
    assert_eq!(q.nrows(), n, "Q and W dimensions disagree");
    let e = tangent_basis(s, k);
    let ec = linalg::to_complex(&e);
    let qc = linalg::to_complex(q);
    let q_t = e.transpose() * q * &e;
    let d = q_t.nrows();
    let q_tc = linalg::to_complex(&q_t);
    let scale = linalg::norm_inf(q).max(1.0);

    let w_eig = linalg::eig(w)?;
    let ones = w_eig.values.iter().filter(|mu| (**mu - C64::new(1.0, 0.0)).norm() <= 1e-9).count();

    let mut values = Vec::with_capacity(n);
    let mut columns: Vec<DVector<C64>> = Vec::with_capacity(n);
    for (idx, &mu) in w_eig.values.iter().enumerate() {
        let (mu, r) = if ones == 1 && (mu - C64::new(1.0, 0.0)).norm() <= 1e-9 {
            // Simple eigenvalue 1 of a stochastic matrix: the eigenvector is
            // exactly the constant vector.
            (C64::new(1.0, 0.0), DVector::from_element(s, C64::new(1.0, 0.0)))
        } else {
            (mu, w_eig.vectors.column(idx).into_owned())
        };
        let x = DVector::from_fn(n, |i, _| r[i / k] / k as f64);
        let v = if d == 0 {
            x
        } else {
            let rhs = ec.adjoint() * (&x * mu - &qc * &x);
            let mut a = q_tc.clone();
            for i in 0..d {
                a[(i, i)] -= mu;
            }
            let svd = a.svd(true, true);
            let y = svd
                .solve(&rhs, 1e-12 * scale)
                .map_err(|e| Error::Numerical(format!("lifting W eigenvector: {e}")))?;
            x + &ec * y
        };
        let residual = linalg::max_modulus((&qc * &v - &v * mu).as_slice());
        if residual > 1e-9 * linalg::max_modulus(v.as_slice()).max(1.0) {
            return Err(Error::DefectiveMatrix(format!(
                "eigenvalue {:.6}{:+.6}i of W does not lift to an eigenvector of Q (residual {residual:e})",
                mu.re, mu.im
            )));
        }
        values.push(mu);
        columns.push(&v / C64::new(v.norm(), 0.0));
    }
    let inherited = values.len();

    if d > 0 {
        let t_eig = linalg::eig(&q_t)?;
        let lifted = &ec * &t_eig.vectors;
        for (c, &lambda) in t_eig.values.iter().enumerate() {
            values.push(lambda);
            columns.push(lifted.column(c).into_owned());
        }
    }

    let right = DMatrix::from_columns(&columns);
    let condition = linalg::condition_c(&right);
    if !(condition < linalg::MAX_CONDITION) {
        return Err(Error::DefectiveMatrix(format!("eigenvector basis condition number {condition:e}")));
    }
    let mut data = EigenData { q: q.clone(), k, values, right, left: DMatrix::zeros(0, 0), inherited, condition };
    data.refresh_left()?;

    for i in 0..inherited {
        let u = data.left.column(i).into_owned();
        let residual = linalg::max_modulus((u.transpose() * &qc - u.transpose() * data.values[i]).as_slice());
        let size = linalg::max_modulus(u.as_slice()).max(1.0);
        if residual > 1e-9 * size {
            return Err(Error::InternalInvariantViolation(format!(
                "inherited left eigenvector {i} has residual {residual:e}"
            )));
        }
        for a in 0..s {
            let block = u.rows(a * k, k);
            let spread = block.iter().map(|z| (z - block[0]).norm()).fold(0.0, f64::max);
            if spread > 1e-8 * size {
                return Err(Error::InternalInvariantViolation(format!(
                    "inherited left eigenvector {i} is not constant on urn block {a}"
                )));
            }
        }
    }

    let direct = linalg::eigenvalues(q)?;
    if !linalg::multiset_match(&data.values, &direct, linalg::EIGEN_MATCH_TOL) {
        return Err(Error::InternalInvariantViolation(format!(
            "structured spectrum {:?} disagrees with direct spectrum {:?}",
            data.values, direct
        )));
    }
    Ok(data)
}
