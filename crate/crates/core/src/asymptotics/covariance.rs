//! Limiting conditional covariance G and the CLT covariance Sigma.

use nalgebra::DMatrix;

use crate::asymptotics::eigen::EigenData;
use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::model::{moments_of, ValidatedSystem};

/// Per-urn matrices G^j and their block-diagonal assembly over `urns`.
///
/// `z` holds the limits of `urns` in the same order, K entries per urn.
/// G^j = sum_i (C^j(i) + H^j_.i H^j_.i') Ztilde^j_i - Z^j Z^j', where
/// Ztilde^j = sum_h w_jh Z^h.
pub fn compute_g(system: &ValidatedSystem, urns: &[usize], z: &[f64]) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let k = system.k;
    let s = urns.len();
    let mut blocks = Vec::with_capacity(s);
    let mut full = DMatrix::zeros(s * k, s * k);
    for (a, &j) in urns.iter().enumerate() {
        let mut tilde = vec![0.0; k];
        for (b, &h) in urns.iter().enumerate() {
            let w = system.w[(j, h)];
            for i in 0..k {
                tilde[i] += w * z[b * k + i];
            }
        }
        let (h, cov) = moments_of(&system.urns[j].model);
        let zj = DMatrix::from_column_slice(k, 1, &z[a * k..(a + 1) * k]);
        let mut g = -(&zj * zj.transpose());
        for i in 0..k {
            let col = h.column(i);
            g += (&cov[i] + col * col.transpose()) * tilde[i];
        }
        full.view_mut((a * k, a * k), (k, k)).copy_from(&g);
        blocks.push(g);
    }
    (blocks, full)
}

/// F_m = I - Q + m * (projector onto the inherited eigenvectors).
pub fn build_f_m(eig: &EigenData, m: f64) -> DMatrix<f64> {
    let n = eig.dim();
    let i = eig.inherited;
    let v = eig.right.columns(0, i);
    let u = eig.left.columns(0, i);
    let proj = linalg::real_part(&(v * u.transpose()));
    DMatrix::identity(n, n) - &eig.q + proj * m
}

/// Closed-form Sigma = sum_{i,k} v_i (u_i' G u_k) v_k' / (1 - lambda_i - lambda_k)
/// over the eigenpairs listed in `selected`.
///
/// `lambda_star` is the eigenvalue governing the rate; the integral only
/// converges when its real part is below 1/2.
pub fn compute_sigma(eig: &EigenData, g: &DMatrix<f64>, selected: &[usize], lambda_star: Option<C64>) -> Result<DMatrix<f64>> {
    let n = eig.dim();
    if let Some(ls) = lambda_star {
        if ls.re >= 0.5 - 1e-9 {
            return Err(Error::RegimeMismatch(format!(
                "covariance needs Re(lambda*) < 1/2, got {:.6}",
                ls.re
            )));
        }
    }
    if selected.is_empty() {
        return Ok(DMatrix::zeros(n, n));
    }
    let gc = linalg::to_complex(g);
    let v = DMatrix::from_fn(n, selected.len(), |r, c| eig.right[(r, selected[c])]);
    let u = DMatrix::from_fn(n, selected.len(), |r, c| eig.left[(r, selected[c])]);
    let core = u.transpose() * gc * &u;
    let m = DMatrix::from_fn(selected.len(), selected.len(), |a, b| {
        let denom = C64::new(1.0, 0.0) - eig.values[selected[a]] - eig.values[selected[b]];
        core[(a, b)] / denom
    });
    let sigma = &v * m * v.transpose();
    let imag = linalg::max_imag(&sigma);
    let size = linalg::norm_inf_c(&sigma).max(1.0);
    if imag > 1e-9 * size {
        return Err(Error::InternalInvariantViolation(format!(
            "covariance has imaginary part {imag:e}"
        )));
    }
    let re = linalg::real_part(&sigma);
    Ok((&re + re.transpose()) * 0.5)
}

/// Covariance of sqrt(n) X_n for the linearized recursion
/// X_{m+1} = X_m + D_{m+1} ((Q - I) X_m + e_{m+1}) with Cov(e) = G, X_0 = 0,
/// where D_m scales urn block j by 1 / (t0[j] + m). It tends to Sigma as n
/// grows and captures the finite-n bias when Re(lambda*) is close to 1/2.
pub fn linearized_covariance(q: &DMatrix<f64>, g: &DMatrix<f64>, t0: &[f64], k: usize, n: u64) -> DMatrix<f64> {
    let p = linearized_path(q, g, t0, k, &[n]).remove(0);
    p * n as f64
}

/// Unscaled Cov(X_n) of the same recursion at each of the increasing `steps`.
pub fn linearized_path(q: &DMatrix<f64>, g: &DMatrix<f64>, t0: &[f64], k: usize, steps: &[u64]) -> Vec<DMatrix<f64>> {
    let d = q.nrows();
    let a = q - DMatrix::identity(d, d);
    let mut p = DMatrix::zeros(d, d);
    let mut step = DMatrix::zeros(d, d);
    let mut tmp = DMatrix::zeros(d, d);
    let mut next = DMatrix::zeros(d, d);
    let mut scale = vec![0.0; d];
    let mut out = Vec::with_capacity(steps.len());
    let mut targets = steps.iter().peekable();
    while targets.peek() == Some(&&0) {
        out.push(p.clone());
        targets.next();
    }
    let last = steps.last().copied().unwrap_or(0);
    for m in 1..=last {
        for (i, s) in scale.iter_mut().enumerate() {
            *s = 1.0 / (t0[i / k] + m as f64);
        }
        // step = I + D A, then P <- step P step' + D G D.
        step.copy_from(&a);
        for i in 0..d {
            step.row_mut(i).scale_mut(scale[i]);
            step[(i, i)] += 1.0;
        }
        step.mul_to(&p, &mut tmp);
        tmp.mul_to(&step.transpose(), &mut next);
        for i in 0..d {
            for j in 0..d {
                next[(i, j)] += scale[i] * scale[j] * g[(i, j)];
            }
        }
        std::mem::swap(&mut p, &mut next);
        while targets.peek() == Some(&&m) {
            out.push(p.clone());
            targets.next();
        }
    }
    out
}
