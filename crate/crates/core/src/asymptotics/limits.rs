//! Predicted limiting proportions.

use nalgebra::{DMatrix, DVector};

use crate::asymptotics::eigen::EigenData;
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::model::ValidatedSystem;

/// Distance from 1 below which an eigenvalue counts as the Perron eigenvalue.
pub const PERRON_TOL: f64 = 1e-9;

/// Rescales every K-block to sum 1 and clamps tiny negative entries.
fn finish_blocks(mut z: Vec<f64>, k: usize, subsystem: &str) -> Result<Vec<f64>> {
    for block in z.chunks_mut(k) {
        let sum: f64 = block.iter().sum();
        if !(sum.abs() > 1e-300) {
            return Err(Error::InternalInvariantViolation(format!(
                "subsystem {subsystem}: limit block has zero sum"
            )));
        }
        block.iter_mut().for_each(|x| *x /= sum);
        for x in block.iter_mut() {
            if *x < -1e-12 {
                return Err(Error::InternalInvariantViolation(format!(
                    "subsystem {subsystem}: limit has negative entry {x}"
                )));
            }
            if *x < 0.0 {
                *x = 0.0;
            }
        }
    }
    Ok(z)
}

/// Right eigenvector of a leader's Q at eigenvalue 1, each urn block
/// normalized to sum 1.
pub fn leader_limit(eig: &EigenData, subsystem: &str) -> Result<Vec<f64>> {
    let one = C64::new(1.0, 0.0);
    let perron: Vec<usize> = (0..eig.dim()).filter(|&i| (eig.values[i] - one).norm() <= PERRON_TOL).collect();
    let inherited_ones = perron.iter().filter(|&&i| i < eig.inherited).count();
    if perron.len() != 1 || inherited_ones != 1 {
        return Err(Error::NonSimplePerron { subsystem: subsystem.to_string(), multiplicity: perron.len() });
    }
    let v = eig.right.column(perron[0]);
    // The block sums of the Perron vector are all equal, so per-block
    // normalization also removes any complex phase.
    let k = eig.k;
    let z: Vec<f64> = v
        .as_slice()
        .chunks(k)
        .flat_map(|block| {
            let sum: C64 = block.iter().sum();
            block.iter().map(move |x| (x / sum).re).collect::<Vec<_>>()
        })
        .collect();
    finish_blocks(z, k, subsystem)
}

/// Limit of a follower: (I - Q^l)^{-1} Q^{l(l-)} Z_upstream.
pub fn follower_limit(
    q_own: &DMatrix<f64>,
    q_cross: &DMatrix<f64>,
    z_upstream: &[f64],
    k: usize,
    subsystem: &str,
) -> Result<Vec<f64>> {
    let f = q_own.nrows();
    let a = DMatrix::identity(f, f) - q_own;
    let rhs = q_cross * DVector::from_column_slice(z_upstream);
    let singular = || Error::SingularSolve {
        subsystem: subsystem.to_string(),
        detail: "I - Q^l is singular".to_string(),
    };
    let svals = a.clone().svd(false, false).singular_values;
    let smin = svals.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = svals.iter().copied().fold(0.0, f64::max);
    if !(smin > 1e-12 * smax.max(1.0)) {
        return Err(singular());
    }
    let z = a.lu().solve(&rhs).ok_or_else(singular)?;
    for (a, block) in z.as_slice().chunks(k).enumerate() {
        let sum: f64 = block.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InternalInvariantViolation(format!(
                "subsystem {subsystem}: follower urn block {a} sums to {sum}"
            )));
        }
    }
    finish_blocks(z.as_slice().to_vec(), k, subsystem)
}

/// Largest violation of Z^j = H^j sum_h w_jh Z^h over all urns, for limits
/// given in original urn order.
pub fn fixed_point_residual(system: &ValidatedSystem, z: &[DVector<f64>]) -> f64 {
    (0..system.n)
        .map(|j| {
            let tilde = (0..system.n).fold(DVector::zeros(system.k), |acc, h| acc + &z[h] * system.w[(j, h)]);
            (system.h(j) * tilde - &z[j]).amax()
        })
        .fold(0.0, f64::max)
}
