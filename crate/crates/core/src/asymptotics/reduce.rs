//! Upstream eigenvalues that cannot reach a follower, and the change of
//! basis that removes them while keeping the follower's own coordinates.

use nalgebra::{DMatrix, SVD};
use serde::Serialize;

use crate::asymptotics::eigen::EigenData;
use crate::error::{Error, Result};
use crate::linalg::{self, C64};

/// Singular values below this count as zero when measuring null spaces.
pub const NULL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutEigenvalue {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
}

impl OutEigenvalue {
    pub fn value(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

/// Eigenvalues of the upstream joint matrix whose eigenspace meets the null
/// space of the coupling block `q_cross`, with the dimension of the meet.
pub fn compute_a_out(upstream: &EigenData, q_cross: &DMatrix<f64>) -> Vec<OutEigenvalue> {
    let cross = linalg::to_complex(q_cross);
    let mut out: Vec<OutEigenvalue> = linalg::cluster_eigenvalues(&upstream.values, linalg::EIGEN_MATCH_TOL)
        .into_iter()
        .filter_map(|(lambda, members)| {
            let vecs = DMatrix::from_fn(upstream.dim(), members.len(), |r, c| upstream.right[(r, members[c])]);
            let basis = linalg::column_basis_c(&vecs, 1e-12);
            let rank = linalg::singular_values_c(&(&cross * &basis))
                .iter()
                .filter(|&&s| s >= NULL_TOL)
                .count();
            let nullity = basis.ncols() - rank;
            (nullity > 0).then(|| OutEigenvalue { re: lambda.re, im: lambda.im, multiplicity: nullity })
        })
        .collect();
    out.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    out
}

/// Rotates the joint eigenbasis, cluster by cluster and separately within the
/// inherited and residual groups, so that eigenvectors vanishing on the last
/// `follower_dim` coordinates form their own columns. Returns the mask of
/// those columns.
pub fn split_out(eig: &mut EigenData, follower_dim: usize) -> Result<Vec<bool>> {
    let n = eig.dim();
    let up = n - follower_dim;
    let mut mask = vec![false; n];
    let mut changed = false;
    for (start, end) in [(0, eig.inherited), (eig.inherited, n)] {
        let values = eig.values[start..end].to_vec();
        for (lambda, members) in linalg::cluster_eigenvalues(&values, linalg::EIGEN_MATCH_TOL) {
            let idx: Vec<usize> = members.iter().map(|&i| start + i).collect();
            let m = idx.len();
            let vecs = DMatrix::from_fn(n, m, |r, c| eig.right[(r, idx[c])]);
            let bottom = vecs.rows(up, follower_dim).into_owned();
            let rows = follower_dim.max(m);
            let mut padded = DMatrix::<C64>::zeros(rows, m);
            padded.view_mut((0, 0), (follower_dim, m)).copy_from(&bottom);
            let svd = SVD::new(padded, false, true);
            let v_t = svd.v_t.expect("requested right singular vectors");
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            let nullity = order.iter().filter(|&&i| svd.singular_values[i] < NULL_TOL).count();
            if nullity == 0 {
                continue;
            }
            let mixing = DMatrix::from_fn(m, m, |r, c| v_t[(order[c], r)].conj());
            let rotated = &vecs * mixing;
            for (c, &i) in idx.iter().enumerate() {
                let mut col = rotated.column(c).into_owned();
                if c >= m - nullity {
                    col.rows_mut(up, follower_dim).fill(C64::new(0.0, 0.0));
                    mask[i] = true;
                }
                let norm = col.norm();
                eig.right.set_column(i, &(col / C64::new(norm, 0.0)));
                eig.values[i] = lambda;
            }
            changed = true;
        }
    }
    if changed {
        eig.refresh_left()?;
    }
    Ok(mask)
}

/// Conjugate bases realizing the reduction onto the eigen-directions that
/// reach the follower.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    /// Joint eigenvalues removed by the reduction.
    pub a_out: Vec<C64>,
    pub in_indices: Vec<usize>,
    pub out_indices: Vec<usize>,
    /// n x d, identity on the follower coordinates.
    pub b: DMatrix<f64>,
    /// d x n (the transpose of C-hat), identity on the follower coordinates.
    pub c_t: DMatrix<f64>,
    /// Change of basis with V_IN P = B.
    pub p: DMatrix<C64>,
    pub condition: f64,
    /// C-hat' Q B-hat.
    pub q_hat: DMatrix<f64>,
}

impl ReducedSystem {
    pub fn dim(&self) -> usize {
        self.b.ncols()
    }
}

fn ill(subsystem: &str, condition: f64) -> Error {
    Error::IllConditionedReduction { subsystem: subsystem.to_string(), condition }
}

/// Builds B-hat and C-hat from a joint eigen-decomposition already passed
/// through [`split_out`].
pub fn reduce_follower(eig: &EigenData, out_mask: &[bool], follower_dim: usize, subsystem: &str) -> Result<ReducedSystem> {
    let n = eig.dim();
    let up = n - follower_dim;
    let in_indices: Vec<usize> = (0..n).filter(|&i| !out_mask[i]).collect();
    let out_indices: Vec<usize> = (0..n).filter(|&i| out_mask[i]).collect();
    let a_out = out_indices.iter().map(|&i| eig.values[i]).collect();
    let d = in_indices.len();
    let v_in = DMatrix::from_fn(n, d, |r, c| eig.right[(r, in_indices[c])]);
    let u_in = DMatrix::from_fn(n, d, |r, c| eig.left[(r, in_indices[c])]);

    if out_indices.is_empty() {
        let b = DMatrix::identity(n, n);
        let p = u_in.transpose();
        return Ok(ReducedSystem {
            a_out,
            in_indices,
            out_indices,
            c_t: b.clone(),
            condition: linalg::condition_c(&p),
            p,
            q_hat: eig.q.clone(),
            b,
        });
    }
    if d < follower_dim {
        return Err(ill(subsystem, f64::INFINITY));
    }

    let proj_c = &v_in * u_in.transpose();
    let scale = linalg::norm_inf_c(&proj_c).max(1.0);
    if linalg::max_imag(&proj_c) > 1e-8 * scale {
        return Err(Error::InternalInvariantViolation(format!(
            "subsystem {subsystem}: projector onto reaching directions is not real"
        )));
    }
    let proj = linalg::real_part(&proj_c);

    // Directions of the reaching subspace that vanish on the follower block.
    let bottom = v_in.rows(up, follower_dim).into_owned();
    let (kernel, _) = linalg::null_space_c(&bottom, d - follower_dim);
    let upper = linalg::real_basis(&(&v_in * kernel), d - follower_dim)
        .map_err(|_| ill(subsystem, f64::INFINITY))?;

    let mut b = DMatrix::zeros(n, d);
    b.view_mut((0, 0), (up, d - follower_dim))
        .copy_from(&upper.rows(0, up));
    let right = proj.columns(up, follower_dim).into_owned();
    if right.rows(0, up).amax() > 1e-8 * scale {
        return Err(Error::InternalInvariantViolation(format!(
            "subsystem {subsystem}: removed directions couple into the follower block"
        )));
    }
    b.view_mut((up, d - follower_dim), (follower_dim, follower_dim))
        .copy_from(&DMatrix::identity(follower_dim, follower_dim));

    let p = u_in.transpose() * linalg::to_complex(&b);
    let condition = linalg::condition_c(&p);
    if !(condition <= linalg::MAX_CONDITION) {
        return Err(ill(subsystem, condition));
    }
    let gram = b.transpose() * &b;
    let c_t = gram
        .try_inverse()
        .ok_or_else(|| ill(subsystem, f64::INFINITY))?
        * b.transpose()
        * &proj;

    if (&c_t * &b - DMatrix::identity(d, d)).amax() > 1e-8 || (&b * &c_t - &proj).amax() > 1e-8 * scale {
        return Err(Error::InternalInvariantViolation(format!(
            "subsystem {subsystem}: reduction bases are not conjugate"
        )));
    }
    let mut c_t = c_t;
    let corner = c_t.view((d - follower_dim, 0), (follower_dim, n)).into_owned();
    let mut target = DMatrix::zeros(follower_dim, n);
    target.view_mut((0, up), (follower_dim, follower_dim)).fill_with_identity();
    if (&corner - &target).amax() > 1e-8 * scale {
        return Err(Error::InternalInvariantViolation(format!(
            "subsystem {subsystem}: reduction does not preserve the follower coordinates"
        )));
    }
    c_t.view_mut((d - follower_dim, 0), (follower_dim, n)).copy_from(&target);
    let q_hat = &c_t * &eig.q * &b;
    Ok(ReducedSystem { a_out, in_indices, out_indices, b, c_t, p, condition, q_hat })
}
