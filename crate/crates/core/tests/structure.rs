mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use urn_core::asymptotics::{analyze, build_f_m, compute_g, matrices::build_q};
use urn_core::linalg::{self, C64};

fn sorted_re(values: &[C64]) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().map(|z| z.re).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
}

#[test]
fn coupled_q_blocks_and_trace() {
    let sys = pair(0.8, 0.8);
    let q = build_q(&sys, &[0, 1]);
    assert!(max_abs(&(q.view((0, 2), (2, 2)) - h1() * 0.2)) < 1e-15);
    assert!(max_abs(&(q.view((2, 0), (2, 2)) - h2() * 0.2)) < 1e-15);
    assert!((q.trace() - 2.4).abs() < 1e-12);
    assert_eq!(build_q(&single_urn(), &[0]), h1());
}

#[test]
fn follower_joint_matrix_and_spectrum() {
    let sys = pair(1.0, 0.5);
    let report = analyze(&sys).unwrap();
    let f = &report.subsystems[1];
    let q = &f.matrices.q;
    assert!(max_abs(&(q.view((2, 0), (2, 2)) - h2() * 0.5)) < 1e-15);
    assert!(max_abs(&(q.view((2, 2), (2, 2)) - h2() * 0.5)) < 1e-15);
    assert!(max_abs(&q.view((0, 2), (2, 2)).into_owned()) == 0.0);
    // Block-triangular: the joint spectrum is the union of the diagonal blocks.
    assert!(close(&sorted_re(&f.eigen.values), &[0.25, 0.375, 0.5, 1.0], 1e-10));
    // Nothing is removed: the reduction is the identity.
    let red = f.reduction.as_ref().unwrap();
    assert_eq!(red.dim(), 4);
    assert!(max_abs(&(&red.b * &red.c_t - DMatrix::identity(4, 4))) < 1e-10);
}

#[test]
fn inherited_left_eigenvectors() {
    for (name, sys) in named_systems() {
        for sub in &analyze(&sys).unwrap().subsystems {
            let eig = &sub.eigen;
            let qc = linalg::to_complex(&sub.matrices.q);
            for i in 0..eig.inherited {
                let u = eig.left.column(i);
                let resid = u.transpose() * &qc - u.transpose() * eig.values[i];
                assert!(linalg::max_modulus(resid.as_slice()) < 1e-9, "{name} {}", sub.label);
            }
            // Sp(W) sits inside Sp(Q).
            let w_sp = linalg::eigenvalues(&sub.matrices.w).unwrap();
            for l in w_sp {
                assert!(eig.values.iter().any(|v| (v - l).norm() < 1e-7), "{name}: {l}");
            }
        }
    }
    // A single urn inherits only 1, with left eigenvector proportional to 1'.
    let eig = &analyze(&single_urn()).unwrap().subsystems[0].eigen;
    assert_eq!(eig.inherited, 1);
    let u = eig.left.column(0);
    assert!((u[0] - u[1]).norm() < 1e-12 && u[0].norm() > 0.0);
}

#[test]
fn one_color_limit_is_one() {
    let sys = system(1, DMatrix::identity(1, 1), vec![multinomial(DMatrix::from_element(1, 1, 1.0))]);
    assert_eq!(analyze(&sys).unwrap().z_inf[0].as_slice(), &[1.0]);
}

#[test]
fn follower_limits_by_hand() {
    // No self-weight: the follower's limit is H2 applied to the leader's.
    let sys = pair(1.0, 0.0);
    let report = analyze(&sys).unwrap();
    assert!((&report.z_inf[1] - DVector::from_column_slice(&[0.625, 0.375])).amax() < 1e-12);
    // A follower copying its leader's mean matrix ends where the leader does.
    let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
    let sys = system(2, w, vec![multinomial(h1()), multinomial(h1())]);
    let report = analyze(&sys).unwrap();
    assert!((&report.z_inf[1] - &report.z_inf[0]).amax() < 1e-12);
}

#[test]
fn multinomial_g_simplifies() {
    for (name, sys) in named_systems() {
        let z = analyze(&sys).unwrap().z_inf_flat();
        let urns: Vec<usize> = (0..sys.n).collect();
        let (g, _) = compute_g(&sys, &urns, &z);
        for (j, gj) in g.iter().enumerate() {
            let zj = DVector::from_column_slice(&z[j * 2..j * 2 + 2]);
            let expected = DMatrix::from_diagonal(&zj) - &zj * zj.transpose();
            assert!(max_abs(&(gj - expected)) < 1e-12, "{name} urn {j}");
            assert!(gj.sum().abs() < 1e-12);
        }
    }
}

#[test]
fn f_m_spectrum_and_perron_direction() {
    let sys = pair(0.8, 0.8);
    let report = analyze(&sys).unwrap();
    let sub = &report.subsystems[0];
    let m = 10.0;
    let f = build_f_m(&sub.eigen, m);
    let sp = sorted_re(&linalg::eigenvalues(&f).unwrap());
    let others: Vec<f64> = sub.eigen.residual_values().iter().map(|z| 1.0 - z.re).collect();
    let mut expected = vec![m, 1.0 + m - 0.6];
    expected.extend(others);
    expected.sort_by(f64::total_cmp);
    assert!(close(&sp, &expected, 1e-9), "{sp:?} vs {expected:?}");
    let v1 = DVector::from_column_slice(&sub.z_inf);
    assert!((&f * &v1 - &v1 * m).amax() < 1e-8);
}

#[test]
fn rank_one_follower_reduction_spectrum() {
    let follower = DMatrix::from_row_slice(2, 2, &[0.9, 0.9, 0.1, 0.1]);
    let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
    let sys = system(2, w, vec![multinomial(h1()), multinomial(follower)]);
    let report = analyze(&sys).unwrap();
    let f = &report.subsystems[1];
    let red = f.reduction.as_ref().unwrap();
    let sp = sorted_re(&linalg::eigenvalues(&red.q_hat).unwrap());
    assert!(close(&sp, &[0.0, 0.5, 1.0], 1e-10), "{sp:?}");
    // B C' projects onto the kept eigen-directions.
    let keep: Vec<usize> = (0..f.eigen.dim()).filter(|&i| !f.out_mask[i]).collect();
    let v_in = f.eigen.right.select_columns(&keep);
    let u_in = f.eigen.left.select_columns(&keep);
    let proj = (v_in * u_in.transpose()).map(|z| z.re);
    assert!(max_abs(&(&red.b * &red.c_t - proj)) < 1e-8);
    let (n, d) = red.b.shape();
    assert!(max_abs(&(red.b.view((n - 2, d - 2), (2, 2)).into_owned() - DMatrix::identity(2, 2))) < 1e-12);
    assert!(max_abs(&(red.c_t.view((d - 2, n - 2), (2, 2)).into_owned() - DMatrix::identity(2, 2))) < 1e-12);
}
