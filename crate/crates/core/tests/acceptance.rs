//! Acceptance suite: one test and one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p urn-core --test acceptance -- --nocapture` to see
//! the lines. Tolerances, seeds and sizes are pinned below.

mod common;

use std::time::{Duration, Instant};

use common::*;
use nalgebra::DMatrix;
use urn_core::asymptotics::{analyze, build_f_m};
use urn_core::linalg::C64;
use urn_core::model::ReplacementModel;
use urn_core::partition::{partition, Role};
use urn_core::rng::CounterRng;
use urn_core::simulate::{ensemble, log_checkpoints, run, EnsembleConfig};
use urn_core::verify::{check_clt_samples, check_limits, coords_of, fit_rate, Tolerances};

const EXACT: f64 = 1e-9;
const PUBLISHED: f64 = 5e-3;
const LIMIT_ATOL: f64 = 0.01;
const SLOPE_SQRT: (f64, f64) = (-0.55, -0.45);
const SLOPE_SLOW: (f64, f64) = (-0.40, -0.30);
const FROBENIUS: f64 = 0.15;
const ORACLE: f64 = 1e-5;

fn verdict(id: u32, what: &str, passed: bool, elapsed: Duration, budget: Duration, detail: String) {
    let ok = passed && elapsed <= budget;
    println!(
        "criterion {id}: {} | {what} | {detail} | {:.2}s of {}s",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(passed, "criterion {id} failed: {detail}");
    assert!(elapsed <= budget, "criterion {id} exceeded its time budget");
}

fn residual_values(sys: &urn_core::model::ValidatedSystem, label: &str) -> Vec<C64> {
    let report = analyze(sys).unwrap();
    let sub = report.subsystems.iter().find(|s| s.label == label).unwrap();
    sub.eigen.residual_values().to_vec()
}

#[test]
fn criterion_1_independent_urns() {
    let start = Instant::now();
    let sys = pair(1.0, 1.0);
    let report = analyze(&sys).unwrap();
    let z1 = [2.0 / 3.0, 1.0 / 3.0];
    let z2 = [0.5, 0.5];
    let limit_err = report.z_inf[0].iter().zip(z1).chain(report.z_inf[1].iter().zip(z2)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let l1 = residual_values(&sys, "L1");
    let l2 = residual_values(&sys, "L2");
    let eig_err = (l1[0].re - 0.25).abs().max((l2[0].re - 0.75).abs());
    let passed = report.subsystems.len() == 2 && limit_err <= EXACT && eig_err <= EXACT && l1.len() == 1 && l2.len() == 1;
    verdict(
        1,
        "W = I limits and second eigenvalues",
        passed,
        start.elapsed(),
        Duration::from_secs(1),
        format!("limit error {limit_err:.1e}, eigenvalue error {eig_err:.1e}"),
    );
}

#[test]
fn criterion_2_coupled_pair() {
    let start = Instant::now();
    let sys = pair(0.8, 0.8);
    let report = analyze(&sys).unwrap();
    let sub = &report.subsystems[0];
    let mut spectrum: Vec<f64> = sub.eigen.values.iter().map(|z| z.re).collect();
    spectrum.sort_by(|a, b| b.total_cmp(a));
    let spec_err = spectrum.iter().zip([1.0, 0.62, 0.6, 0.18]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let star = sub.lambda_star.unwrap();
    let limit_err = report.z_inf_flat().iter().zip([0.66, 0.34, 0.56, 0.44]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut case_err: f64 = 0.0;
    for ((a, b), expected) in [((0.8, 0.2), 0.35), ((0.5, 0.5), 0.5), ((0.2, 0.8), 0.65)] {
        let s = analyze(&pair(a, b)).unwrap().subsystems[0].lambda_star.unwrap();
        case_err = case_err.max((s.re - expected).abs()).max(s.im.abs());
    }
    let passed = spec_err <= PUBLISHED
        && (star.re - 0.62).abs() <= PUBLISHED
        && (sub.rate.exponent - 0.38).abs() <= PUBLISHED
        && sub.rate.label == "n^0.38"
        && limit_err <= PUBLISHED
        && case_err <= PUBLISHED;
    verdict(
        2,
        "coupled pair spectrum, lambda*, exponent, limit, cases",
        passed,
        start.elapsed(),
        Duration::from_secs(1),
        format!(
            "spectrum error {spec_err:.1e}, lambda* {:.4}, rate {}, limit error {limit_err:.1e}, case error {case_err:.1e}",
            star.re, sub.rate.label
        ),
    );
}

#[test]
fn criterion_3_leader_and_follower() {
    let start = Instant::now();
    let mut passed = true;
    let mut details = Vec::new();
    for (b, star, label) in [(0.2, 0.25, "sqrt(n)"), (0.5, 0.375, "sqrt(n)"), (0.8, 0.6, "n^0.4")] {
        let report = analyze(&pair(1.0, b)).unwrap();
        let f = &report.subsystems[1];
        let s = f.lambda_star.unwrap();
        passed &= f.role == Role::Follower && f.a_out.is_empty() && (s.re - star).abs() <= PUBLISHED && f.rate.label == label;
        if b == 0.5 {
            let err = (report.z_inf[1][0] - 0.6).abs().max((report.z_inf[1][1] - 0.4).abs());
            passed &= err <= EXACT;
            details.push(format!("follower limit error {err:.1e}"));
        }
        details.push(format!("b={b}: lambda* {:.4} {} A_out {}", s.re, f.rate.label, f.a_out.len()));
    }
    verdict(3, "follower limit, A_out, lambda*, rates", passed, start.elapsed(), Duration::from_secs(1), details.join("; "));
}

#[test]
fn criterion_4_total_balls() {
    let start = Instant::now();
    let n = 1_000_000u64;
    let traj = run(&pair(0.8, 0.8), n, 4, &[]).unwrap();
    let exact = traj.last().t.iter().all(|&t| t == 1.0 + n as f64);
    let scaled = pair_with(0.8, 0.8, |h| ReplacementModel::RandomScaled { h });
    let cfg = EnsembleConfig { n_steps: n, reps: 100, base_seed: 4, checkpoints: vec![], workers: None };
    let ens = ensemble(&scaled, &cfg, None).unwrap();
    let band = 5.0 / (n as f64).sqrt();
    let inside = ens
        .trajectories
        .iter()
        .filter(|t| t.last().t.iter().all(|&x| (x / n as f64 - 1.0).abs() < band))
        .count();
    verdict(
        4,
        "balanced totals exact, random totals within 5/sqrt(n)",
        exact && inside >= 95,
        start.elapsed(),
        Duration::from_secs(120),
        format!("balanced exact {exact}, {inside}/100 random-scaled replications inside"),
    );
}

#[test]
fn criterion_5_limits() {
    let start = Instant::now();
    let tol = Tolerances { limit_atol: LIMIT_ATOL, ..Tolerances::default() };
    let mut passed = true;
    let mut details = Vec::new();
    for (name, sys, seed) in [
        ("coupled", pair(0.8, 0.8), 51),
        ("follower b=0.2", pair(1.0, 0.2), 52),
        ("follower b=0.5", pair(1.0, 0.5), 53),
        ("follower b=0.8", pair(1.0, 0.8), 54),
    ] {
        let report = analyze(&sys).unwrap();
        let cfg = EnsembleConfig { n_steps: 100_000, reps: 200, base_seed: seed, checkpoints: vec![], workers: None };
        let ens = ensemble(&sys, &cfg, None).unwrap();
        let check = check_limits(&ens, &report.z_inf_flat(), &tol);
        let worst = check.entries.iter().map(|e| (e.estimate - e.prediction).abs()).fold(0.0, f64::max);
        passed &= check.passed;
        details.push(format!("{name}: max gap {worst:.4}"));
    }
    verdict(5, "ensemble means match predicted limits", passed, start.elapsed(), Duration::from_secs(300), details.join("; "));
}

#[test]
fn criterion_6_rates() {
    let start = Instant::now();
    let checkpoints = log_checkpoints(100.0, 1e6, 8).unwrap();
    let mut passed = true;
    let mut details = Vec::new();
    for (name, sys, band, seed) in [("fast", pair(0.8, 0.2), SLOPE_SQRT, 61), ("slow", pair(0.2, 0.8), SLOPE_SLOW, 62)] {
        let report = analyze(&sys).unwrap();
        let reference = report.z_inf_flat();
        let cfg = EnsembleConfig { n_steps: 1_000_000, reps: 200, base_seed: seed, checkpoints: checkpoints.clone(), workers: None };
        let ens = ensemble(&sys, &cfg, Some(&reference)).unwrap();
        let fit = fit_rate(&ens, &reference, &coords_of(&[0, 1], 2)).unwrap();
        passed &= fit.slope >= band.0 && fit.slope <= band.1;
        details.push(format!("{name}: slope {:.3} +- {:.3} in [{}, {}]", fit.slope, fit.slope_se, band.0, band.1));
    }
    verdict(6, "log-log slopes of the mean deviation", passed, start.elapsed(), Duration::from_secs(1200), details.join("; "));
}

#[test]
fn criterion_7_clt_covariance() {
    let start = Instant::now();
    let sys = single_urn();
    let report = analyze(&sys).unwrap();
    let sub = &report.subsystems[0];
    let sigma = sub.sigma.clone().unwrap();

    let f_m = build_f_m(&sub.eigen, 1e3);
    let oracle = fm_integral(&f_m, &sub.g, 60.0, 1e-3);
    let oracle_err = max_abs(&(&sigma - oracle));

    let n = 100_000u64;
    let reference = report.z_inf_flat();
    let cfg = EnsembleConfig { n_steps: n, reps: 2000, base_seed: 71, checkpoints: vec![], workers: None };
    let ens = ensemble(&sys, &cfg, Some(&reference)).unwrap();
    let raw: Vec<Vec<f64>> = ens
        .trajectories
        .iter()
        .map(|t| t.last().z.iter().zip(&reference).map(|(z, r)| (n as f64).sqrt() * (z - r)).collect())
        .collect();
    let tol = Tolerances { frobenius: FROBENIUS, ..Tolerances::default() };
    let check = check_clt_samples("L1", &raw, &sigma, &raw, 2, &tol);
    let frob = check.entries[0].estimate;
    verdict(
        7,
        "single-urn CLT covariance and integral oracle",
        check.passed && frob <= FROBENIUS && oracle_err <= ORACLE,
        start.elapsed(),
        Duration::from_secs(600),
        format!("relative Frobenius {frob:.4}, oracle error {oracle_err:.1e}"),
    );
}

fn random_w(rng: &mut CounterRng) -> DMatrix<f64> {
    let n = 1 + (rng.uniform() * 9.0) as usize;
    let mut w = DMatrix::from_fn(n, n, |r, c| {
        let x = 0.1 + rng.uniform();
        if r == c || rng.uniform() < 0.25 { x } else { 0.0 }
    });
    for mut row in w.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    w
}

#[test]
fn criterion_8_structural_properties() {
    let start = Instant::now();
    let mut rng = CounterRng::new(81);
    let mut scc_ok = 0;
    for _ in 0..100 {
        let w = random_w(&mut rng);
        let r = reachability(&w);
        let p = partition(&w).unwrap();
        let n = w.nrows();
        let classes_ok = p.classes.iter().all(|c| {
            let first = c.members[0];
            let expected: Vec<usize> = (0..n).filter(|&j| r[first][j] && r[j][first]).collect();
            let closed = c.members.iter().all(|&i| (0..n).all(|j| w[(i, j)] == 0.0 || c.members.contains(&j)));
            c.members == expected && (c.role == Role::Leader) == closed
        });
        let covered: usize = p.classes.iter().map(|c| c.members.len()).sum();
        if classes_ok && covered == n {
            scc_ok += 1;
        }
    }

    let mut worst_residual: f64 = 0.0;
    let mut sigma_ok = true;
    for (_, sys) in named_systems() {
        let report = analyze(&sys).unwrap();
        worst_residual = worst_residual.max(report.fixed_point_residual);
        for sigma in report.subsystems.iter().filter_map(|s| s.sigma_joint.as_ref()) {
            let sym = max_abs(&(sigma - sigma.transpose())) <= 1e-12;
            let psd = sigma.clone().symmetric_eigen().eigenvalues.min() >= -1e-12;
            let rows = (0..sigma.nrows() / sys.k).all(|a| {
                (0..sigma.ncols()).all(|c| (0..sys.k).map(|i| sigma[(a * sys.k + i, c)]).sum::<f64>().abs() <= 1e-12)
            });
            sigma_ok &= sym && psd && rows;
        }
    }

    let sys = pair(0.8, 0.8);
    let cfg = |workers| EnsembleConfig { n_steps: 10_000, reps: 16, base_seed: 8, checkpoints: vec![100, 10_000], workers: Some(workers) };
    let one = ensemble(&sys, &cfg(1), None).unwrap();
    let eight = ensemble(&sys, &cfg(8), None).unwrap();
    let bits = |e: &urn_core::simulate::EnsembleStats| -> Vec<u64> {
        e.trajectories.iter().flat_map(|t| t.snapshots.iter().flat_map(|s| s.z.iter().chain(&s.t).map(|x| x.to_bits()))).collect()
    };
    let deterministic = bits(&one) == bits(&eight) && one.stats == eight.stats;

    verdict(
        8,
        "partition oracle, fixed points, Sigma invariants, worker determinism",
        scc_ok == 100 && worst_residual < 1e-9 && sigma_ok && deterministic,
        start.elapsed(),
        Duration::from_secs(60),
        format!("partitions {scc_ok}/100, fixed-point residual {worst_residual:.1e}, Sigma invariants {sigma_ok}, deterministic {deterministic}"),
    );
}
