//! Dense linear-algebra helpers on top of nalgebra: a general eigen-solver
//! for real non-symmetric matrices, SVD null spaces and condition numbers.

use nalgebra::{Complex, DMatrix, DVector, Schur, SVD};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Relative tolerance used to decide that two eigenvalues coincide.
pub const EIGEN_MATCH_TOL: f64 = 1e-7;

/// Largest admissible condition number of an eigenvector basis.
pub const MAX_CONDITION: f64 = 1e8;

const SCHUR_MAX_ITER: usize = 100_000;

/// Eigenvalues and unit-norm right eigenvectors of a real square matrix.
#[derive(Debug, Clone)]
pub struct Eig {
    pub values: Vec<C64>,
    pub vectors: DMatrix<C64>,
}

pub fn close(a: C64, b: C64, tol: f64) -> bool {
    (a - b).norm() <= tol * 1f64.max(a.norm().max(b.norm()))
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

pub fn real_part(m: &DMatrix<C64>) -> DMatrix<f64> {
    m.map(|z| z.re)
}

pub fn max_imag(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.im.abs()))
}

pub fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Largest modulus in a slice of complex numbers.
pub fn max_modulus(xs: &[C64]) -> f64 {
    xs.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn norm_inf_c(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Eigenvalues of a real square matrix through its real Schur form.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<C64>> {
    assert!(a.is_square(), "eigenvalues of a non-square matrix");
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Groups eigenvalues whose pairwise distance is below the relative matching
/// tolerance (single linkage). Returns (representative, member indices).
pub fn cluster_eigenvalues(values: &[C64], tol: f64) -> Vec<(C64, Vec<usize>)> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut c = i;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if close(values[i], values[j], tol) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match groups.iter_mut().find(|(root, _)| *root == r) {
            Some((_, members)) => members.push(i),
            None => groups.push((r, vec![i])),
        }
    }
    groups
        .into_iter()
        .map(|(_, members)| {
            let sum: C64 = members.iter().map(|&i| values[i]).sum();
            (sum / members.len() as f64, members)
        })
        .collect()
}

/// Right singular vectors belonging to the `dim` smallest singular values of
/// `m`, together with the largest of those singular values.
pub fn null_space_c(m: &DMatrix<C64>, dim: usize) -> (DMatrix<C64>, f64) {
    let cols = m.ncols();
    // Pad to a square matrix so the SVD exposes a full right basis.
    let rows = m.nrows().max(cols);
    let mut padded = DMatrix::<C64>::zeros(rows, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let chosen = &order[..dim];
    let worst = chosen
        .iter()
        .map(|&i| svd.singular_values[i])
        .fold(0.0, f64::max);
    let mut basis = DMatrix::<C64>::zeros(cols, dim);
    for (c, &i) in chosen.iter().enumerate() {
        for r in 0..cols {
            basis[(r, c)] = v_t[(i, r)].conj();
        }
    }
    (basis, worst)
}

/// Real counterpart of [`null_space_c`].
pub fn null_space_r(m: &DMatrix<f64>, dim: usize) -> (DMatrix<f64>, f64) {
    let cols = m.ncols();
    let rows = m.nrows().max(cols);
    let mut padded = DMatrix::<f64>::zeros(rows, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let chosen = &order[..dim];
    let worst = chosen
        .iter()
        .map(|&i| svd.singular_values[i])
        .fold(0.0, f64::max);
    let basis = DMatrix::from_fn(cols, dim, |r, c| v_t[(chosen[c], r)]);
    (basis, worst)
}

/// Singular values of a complex matrix in descending order.
pub fn singular_values_c(m: &DMatrix<C64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let svd = SVD::new(m.clone(), false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// 2-norm condition number; infinite for singular or empty-rank input.
pub fn condition_c(m: &DMatrix<C64>) -> f64 {
    let s = singular_values_c(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Orthonormal basis of the column span of `m`, keeping directions whose
/// singular value exceeds `tol` times the largest one.
pub fn column_basis_c(m: &DMatrix<C64>, tol: f64) -> DMatrix<C64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = SVD::new(m.clone(), true, false);
    let u = svd.u.expect("requested left singular vectors");
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol * top.max(f64::MIN_POSITIVE))
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Real orthonormal basis of the real span of the columns of `m` (and their
/// conjugates). `expected` is the real dimension the span must have.
pub fn real_basis(m: &DMatrix<C64>, expected: usize) -> Result<DMatrix<f64>> {
    let rows = m.nrows();
    if expected == 0 {
        return Ok(DMatrix::zeros(rows, 0));
    }
    let mut both = DMatrix::<f64>::zeros(rows, 2 * m.ncols());
    for c in 0..m.ncols() {
        for r in 0..rows {
            both[(r, 2 * c)] = m[(r, c)].re;
            both[(r, 2 * c + 1)] = m[(r, c)].im;
        }
    }
    let svd = SVD::new(both, true, false);
    let u = svd.u.expect("requested left singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if order.len() < expected {
        return Err(Error::Numerical("real span is smaller than expected".into()));
    }
    let top = svd.singular_values[order[0]];
    let last = svd.singular_values[order[expected - 1]];
    let next = order.get(expected).map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    if last <= 1e-9 * top || next > 1e-7 * top {
        return Err(Error::Numerical(format!(
            "real span has unexpected dimension (expected {expected}, singular values {last:e} / {next:e})"
        )));
    }
    Ok(DMatrix::from_fn(rows, expected, |r, c| u[(r, order[c])]))
}

fn normalize_columns(m: &mut DMatrix<C64>) {
    for mut col in m.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= C64::new(n, 0.0);
        }
    }
}

/// Full eigen-decomposition of a real square matrix.
///
/// Eigenvalues are clustered at relative tolerance `EIGEN_MATCH_TOL`; each
/// cluster must carry as many independent eigenvectors as its size, otherwise
/// the matrix is reported as defective. Conjugate pairs get conjugate vectors.
pub fn eig(a: &DMatrix<f64>) -> Result<Eig> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Eig { values: Vec::new(), vectors: DMatrix::zeros(0, 0) });
    }
    let raw = eigenvalues(a)?;
    let scale = norm_inf(a).max(1.0);
    let null_tol = 1e-6 * scale;
    let mut clusters = cluster_eigenvalues(&raw, EIGEN_MATCH_TOL);
    clusters.sort_by(|x, y| x.0.re.total_cmp(&y.0.re).reverse().then(x.0.im.total_cmp(&y.0.im).reverse()));

    let mut values = Vec::with_capacity(n);
    let mut columns: Vec<DVector<C64>> = Vec::with_capacity(n);
    let ac = to_complex(a);
    for (lambda, members) in &clusters {
        let m = members.len();
        let is_real = lambda.im.abs() <= EIGEN_MATCH_TOL * lambda.norm().max(1.0);
        if !is_real && lambda.im < 0.0 {
            continue;
        }
        let value = if is_real { C64::new(lambda.re, 0.0) } else { *lambda };
        let (mut basis, worst) = if is_real {
            let mut shifted = a.clone();
            for i in 0..n {
                shifted[(i, i)] -= value.re;
            }
            let (b, w) = null_space_r(&shifted, m);
            (to_complex(&b), w)
        } else {
            let mut shifted = ac.clone();
            for i in 0..n {
                shifted[(i, i)] -= value;
            }
            null_space_c(&shifted, m)
        };
        if worst > null_tol {
            return Err(Error::DefectiveMatrix(format!(
                "eigenvalue {:.6}{:+.6}i has multiplicity {m} but a deficient eigenspace (singular value {worst:e})",
                value.re, value.im
            )));
        }
        normalize_columns(&mut basis);
        for c in 0..m {
            values.push(value);
            columns.push(basis.column(c).into_owned());
            if !is_real {
                values.push(value.conj());
                columns.push(basis.column(c).map(|z| z.conj()));
            }
        }
    }
    if values.len() != n {
        return Err(Error::DefectiveMatrix(format!(
            "recovered {} eigenpairs for a {n}x{n} matrix (unpaired complex eigenvalues)",
            values.len()
        )));
    }
    let vectors = DMatrix::from_columns(&columns);
    let cond = condition_c(&vectors);
    if !(cond < MAX_CONDITION) {
        return Err(Error::DefectiveMatrix(format!("eigenvector basis condition number {cond:e}")));
    }
    Ok(Eig { values, vectors })
}

/// True when the two lists agree as multisets under relative tolerance `tol`.
pub fn multiset_match(a: &[C64], b: &[C64], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    // Greedy nearest matching is adequate for well-separated clusters.
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].re.total_cmp(&a[j].re).then(a[i].im.total_cmp(&a[j].im)));
    for i in order {
        let best = (0..b.len())
            .filter(|&j| !used[j])
            .min_by(|&x, &y| (a[i] - b[x]).norm().total_cmp(&(a[i] - b[y]).norm()));
        match best {
            Some(j) if close(a[i], b[j], tol) => used[j] = true,
            _ => return false,
        }
    }
    true
}

/// Inverse of a complex square matrix, with a condition-number guard.
pub fn inverse_c(m: &DMatrix<C64>) -> Option<DMatrix<C64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    m.clone().try_inverse()
}
