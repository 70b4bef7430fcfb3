#![allow(dead_code)]

use nalgebra::DMatrix;
use urn_core::model::{validate_spec, ReplacementModel, SystemSpec, UrnSpec, ValidatedSystem};

pub fn h1() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.75, 0.5, 0.25, 0.5])
}

pub fn h2() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.875, 0.125, 0.125, 0.875])
}

pub fn multinomial(h: DMatrix<f64>) -> UrnSpec {
    UrnSpec { model: ReplacementModel::SingleBallMultinomial { h }, c: None }
}

pub fn system(k: usize, w: DMatrix<f64>, urns: Vec<UrnSpec>) -> ValidatedSystem {
    validate_spec(&SystemSpec { k, w, urns, initial: None }).expect("valid test system")
}

/// Two urns with means H1, H2 and W = [[a, 1 - a], [1 - b, b]].
pub fn pair(a: f64, b: f64) -> ValidatedSystem {
    pair_with(a, b, |h| ReplacementModel::SingleBallMultinomial { h })
}

pub fn pair_with(a: f64, b: f64, model: impl Fn(DMatrix<f64>) -> ReplacementModel) -> ValidatedSystem {
    let w = DMatrix::from_row_slice(2, 2, &[a, 1.0 - a, 1.0 - b, b]);
    let urns = [h1(), h2()].into_iter().map(|h| UrnSpec { model: model(h), c: None }).collect();
    validate_spec(&SystemSpec { k: 2, w, urns, initial: None }).expect("valid pair")
}

pub fn single_urn() -> ValidatedSystem {
    system(2, DMatrix::identity(1, 1), vec![multinomial(h1())])
}

/// Every configuration with a closed-form or published prediction.
pub fn named_systems() -> Vec<(String, ValidatedSystem)> {
    let mut out = vec![("independent".to_string(), pair(1.0, 1.0)), ("single".to_string(), single_urn())];
    for (a, b) in [(0.8, 0.8), (0.8, 0.2), (0.5, 0.5), (0.2, 0.8)] {
        out.push((format!("coupled a={a} b={b}"), pair(a, b)));
    }
    for b in [0.2, 0.5, 0.8] {
        out.push((format!("leader-follower b={b}"), pair(1.0, b)));
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// exp(a) by a truncated Taylor series; only used with small ||a||.
pub fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for i in 1..40 {
        term = &term * a / i as f64;
        sum += &term;
    }
    sum
}

/// Trapezoid rule for the integral over [0, u_max] of
/// exp(-u (F - I/2)) G exp(-u (F - I/2))', stepping with a repeated
/// E_h = exp(h A).
pub fn fm_integral(f_m: &DMatrix<f64>, g: &DMatrix<f64>, u_max: f64, h: f64) -> DMatrix<f64> {
    let n = f_m.nrows();
    let a = -(f_m - DMatrix::identity(n, n) * 0.5);
    let step = expm_taylor(&(a * h));
    let steps = (u_max / h).round() as usize;
    let mut e = DMatrix::identity(n, n);
    let mut sum = g * 0.5;
    for i in 1..=steps {
        e = &step * e;
        let term = &e * g * e.transpose();
        sum += if i == steps { term * 0.5 } else { term };
    }
    sum * h
}

/// Transitive closure by Floyd-Warshall.
pub fn reachability(w: &DMatrix<f64>) -> Vec<Vec<bool>> {
    let n = w.nrows();
    let mut r: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j || w[(i, j)] > 0.0).collect()).collect();
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][m] && r[m][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    r
}
