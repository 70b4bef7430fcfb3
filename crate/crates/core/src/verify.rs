//! Statistical comparison of simulated ensembles with the predictions of the
//! asymptotic analysis. Every check is a pure function of its inputs.

use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::asymptotics::{linearized_covariance, linearized_path, AsymptoticReport, Rate, Regime, SubsystemReport};
use crate::error::{Error, Result};
use crate::model::ValidatedSystem;
use crate::simulate::{mean_cov, EnsembleStats, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub prediction: f64,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Soft checks whose thresholds have no finite-sample justification.
    pub qualitative: bool,
    pub passed: bool,
    pub entries: Vec<CheckEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptotic_slope: Option<f64>,
}

impl CheckResult {
    fn new(name: impl Into<String>, entries: Vec<CheckEntry>) -> Self {
        let passed = entries.iter().all(|e| e.passed);
        Self { name: name.into(), qualitative: false, passed, entries, asymptotic_slope: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn new(checks: Vec<CheckResult>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self { checks, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    /// Absolute floor of the limit check band.
    pub limit_atol: f64,
    /// Standard errors allowed in the limit check.
    pub limit_se: f64,
    /// Relative Frobenius error allowed between empirical and predicted covariance.
    pub frobenius: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Standard errors allowed for block row sums of the empirical covariance.
    pub block_se: f64,
    /// Standard errors of the sampling noise under which the Frobenius,
    /// skewness and kurtosis bands are never set; only binds for small R.
    pub clt_se: f64,
    /// Slope band in the sqrt(n) regime.
    pub slope_sqrt: (f64, f64),
    /// Slope band in the boundary regime; the log factor flattens the slope.
    pub slope_boundary: (f64, f64),
    /// Half-width around -(1 - Re lambda*) in the polynomial regime.
    pub slope_polynomial: f64,
    /// Fraction of trajectories whose rescaled deviation must settle.
    pub settle_fraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            limit_atol: 0.01,
            limit_se: 3.0,
            frobenius: 0.15,
            skewness: 0.2,
            excess_kurtosis: 0.4,
            block_se: 4.0,
            clt_se: 3.0,
            slope_sqrt: (-0.55, -0.45),
            slope_boundary: (-0.55, -0.35),
            slope_polynomial: 0.05,
            settle_fraction: 0.8,
        }
    }
}

fn entry(name: impl Into<String>, prediction: f64, estimate: f64, se: Option<f64>, tolerance: f64, passed: bool) -> CheckEntry {
    CheckEntry { name: name.into(), prediction, estimate, std_error: se, tolerance, passed }
}

/// Componentwise |mean Z - Z_inf| <= max(k_se * SE, atol) at the terminal checkpoint.
pub fn check_limits(ens: &EnsembleStats, prediction: &[f64], tol: &Tolerances) -> CheckResult {
    let last = ens.stats.last().expect("ensemble has checkpoints");
    let entries = prediction
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let se = (last.cov[(i, i)] / ens.reps as f64).sqrt();
            let band = (tol.limit_se * se).max(tol.limit_atol);
            let est = last.mean[i];
            entry(format!("Z[{i}]"), p, est, Some(se), band, (est - p).abs() <= band)
        })
        .collect();
    CheckResult::new("limits", entries)
}

/// Least-squares line through (log n, log deviation).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub steps: Vec<u64>,
    pub log_n: Vec<f64>,
    pub log_deviation: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

pub fn fit_log_log(steps: &[u64], deviations: &[f64]) -> Result<RateFit> {
    if steps.len() != deviations.len() {
        return Err(Error::DimensionMismatch("steps and deviations differ in length".into()));
    }
    if steps.len() < 4 {
        return Err(Error::InsufficientCheckpoints(format!("{} points, need at least 4", steps.len())));
    }
    if steps.iter().any(|&s| s == 0) || deviations.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InsufficientCheckpoints("steps and deviations must be positive".into()));
    }
    let x: Vec<f64> = steps.iter().map(|&s| (s as f64).ln()).collect();
    let y: Vec<f64> = deviations.iter().map(|d| d.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_se = (rss / (n - 2.0) / sxx).sqrt();
    Ok(RateFit { steps: steps.to_vec(), log_n: x, log_deviation: y, slope, intercept, slope_se })
}

/// Mean over replications of |Z_n - Z_inf|_2 restricted to `coords`, per checkpoint.
pub fn mean_deviations(ens: &EnsembleStats, reference: &[f64], coords: &[usize]) -> Vec<f64> {
    (0..ens.checkpoints.len())
        .map(|c| {
            ens.trajectories
                .iter()
                .map(|t| {
                    let z = &t.snapshots[c].z;
                    coords.iter().map(|&i| (z[i] - reference[i]).powi(2)).sum::<f64>().sqrt()
                })
                .sum::<f64>()
                / ens.trajectories.len() as f64
        })
        .collect()
}

/// Checkpoints are adequate for a rate fit: at least 6 positive steps
/// spanning 2.5 decades, and at least 100 replications.
pub fn rate_fit_ready(ens: &EnsembleStats) -> Result<()> {
    let steps: Vec<u64> = ens.checkpoints.iter().copied().filter(|&s| s > 0).collect();
    if steps.len() < 6 {
        return Err(Error::InsufficientCheckpoints(format!("{} positive checkpoints, need 6", steps.len())));
    }
    let span = (*steps.last().unwrap() as f64 / steps[0] as f64).log10();
    if span < 2.5 {
        return Err(Error::InsufficientCheckpoints(format!("checkpoints span {span:.2} decades, need 2.5")));
    }
    if ens.reps < 100 {
        return Err(Error::InsufficientCheckpoints(format!("{} replications, need 100", ens.reps)));
    }
    Ok(())
}

/// Log-log slope of the mean deviation of `coords` against n.
pub fn fit_rate(ens: &EnsembleStats, reference: &[f64], coords: &[usize]) -> Result<RateFit> {
    rate_fit_ready(ens)?;
    let devs = mean_deviations(ens, reference, coords);
    let (steps, devs): (Vec<u64>, Vec<f64>) = ens
        .checkpoints
        .iter()
        .copied()
        .zip(devs)
        .filter(|(s, _)| *s > 0)
        .unzip();
    fit_log_log(&steps, &devs)
}

/// Acceptance band for the fitted slope under `rate`.
pub fn slope_band(rate: &Rate, tol: &Tolerances) -> (f64, f64) {
    match rate.regime {
        Regime::SqrtN => tol.slope_sqrt,
        Regime::SqrtNOverLogN => tol.slope_boundary,
        Regime::Polynomial => (-rate.exponent - tol.slope_polynomial, -rate.exponent + tol.slope_polynomial),
    }
}

/// Slope the linearized recursion predicts for the root-mean-square deviation
/// of the subsystem's own urns over `steps`. It tends to the asymptotic slope
/// but stays flatter for a long time when Re(lambda*) is close to 1/2.
/// Noise in the number of balls added is projected out block by block since
/// it does not move the composition.
pub fn finite_n_slope(system: &ValidatedSystem, sub: &SubsystemReport, reference: &[f64], steps: &[u64]) -> Result<f64> {
    let k = system.k;
    let joint = &sub.matrices.urns;
    let t0: Vec<f64> = joint.iter().map(|&j| system.initial[j].sum()).collect();
    let d = joint.len() * k;
    let mut proj = DMatrix::identity(d, d);
    for (pos, &j) in joint.iter().enumerate() {
        for a in 0..k {
            for b in 0..k {
                proj[(pos * k + a, pos * k + b)] -= reference[j * k + a];
            }
        }
    }
    let g = &proj * &sub.g * proj.transpose();
    let own: Vec<usize> = joint
        .iter()
        .enumerate()
        .filter(|(_, j)| sub.urns.contains(j))
        .flat_map(|(pos, _)| (0..k).map(move |i| pos * k + i))
        .collect();
    let path = linearized_path(&sub.matrices.q, &g, &t0, k, steps);
    let rms: Vec<f64> = path.iter().map(|p| own.iter().map(|&i| p[(i, i)]).sum::<f64>().sqrt()).collect();
    Ok(fit_log_log(steps, &rms)?.slope)
}

/// The band has the width of `slope_band` and is centred on the finite-n
/// slope when one is given, otherwise on the asymptotic band.
pub fn check_rate(name: &str, fit: &RateFit, rate: &Rate, finite: Option<f64>, tol: &Tolerances) -> CheckResult {
    let (lo, hi) = slope_band(rate, tol);
    let half = 0.5 * (hi - lo);
    let (lo, hi) = match finite {
        Some(c) => (c - half, c + half),
        None => (lo, hi),
    };
    let e = entry(
        format!("{name} slope"),
        finite.unwrap_or(-rate.exponent),
        fit.slope,
        Some(fit.slope_se),
        half,
        fit.slope >= lo && fit.slope <= hi,
    );
    let mut result = CheckResult::new(format!("rate {name}"), vec![e]);
    result.asymptotic_slope = Some(-rate.exponent);
    result
}

/// Standardized third moment and excess kurtosis of one sample.
pub fn skew_kurtosis(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// Compares the empirical covariance of the scaled deviations `samples`
/// (one row per replication) with `sigma`.
///
/// `raw` holds the same deviations before any change of coordinates, with
/// `k` entries per urn; its block row sums are checked against zero.
pub fn check_clt_samples(name: &str, samples: &[Vec<f64>], sigma: &DMatrix<f64>, raw: &[Vec<f64>], k: usize, tol: &Tolerances) -> CheckResult {
    let r = samples.len() as f64;
    let (_, emp) = mean_cov(samples);
    let diff = (&emp - sigma).norm();
    let scale = sigma.norm();
    let rel = if scale > 0.0 { diff / scale } else { diff };
    let frob_band = tol.frobenius.max(tol.clt_se * (2.0 / (r - 1.0)).sqrt());
    let mut entries = vec![entry(
        format!("{name} covariance (relative Frobenius)"),
        0.0,
        rel,
        None,
        frob_band,
        rel <= frob_band,
    )];
    let skew_band = tol.skewness.max(tol.clt_se * (6.0 / r).sqrt());
    let kurt_band = tol.excess_kurtosis.max(tol.clt_se * (24.0 / r).sqrt());

    let top = (0..sigma.nrows()).map(|i| sigma[(i, i)]).fold(0.0, f64::max);
    for i in 0..sigma.nrows() {
        if !(sigma[(i, i)] > 1e-9 * top.max(1e-300)) {
            continue;
        }
        let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let (skew, kurt) = skew_kurtosis(&xs);
        entries.push(entry(format!("{name} skewness[{i}]"), 0.0, skew, Some((6.0 / r).sqrt()), skew_band, skew.abs() <= skew_band));
        entries.push(entry(
            format!("{name} excess kurtosis[{i}]"),
            0.0,
            kurt,
            Some((24.0 / r).sqrt()),
            kurt_band,
            kurt.abs() <= kurt_band,
        ));
    }

    let d = raw.first().map_or(0, Vec::len);
    let (mean, _) = mean_cov(raw);
    for a in 0..d / k {
        for col in 0..d {
            // Row sum over urn block a of the covariance column `col`,
            // estimated as the mean of products of centered samples.
            let products: Vec<f64> = raw
                .iter()
                .map(|s| {
                    let block: f64 = (0..k).map(|i| s[a * k + i] - mean[a * k + i]).sum();
                    block * (s[col] - mean[col])
                })
                .collect();
            let m = products.iter().sum::<f64>() / r;
            let sd = (products.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
            let se = sd / r.sqrt();
            let band = (tol.block_se * se).max(1e-9);
            entries.push(entry(format!("{name} block row sum[{a}][{col}]"), 0.0, m, Some(se), band, m.abs() <= band));
        }
    }
    CheckResult::new(format!("clt {name}"), entries)
}

/// CLT check for one subsystem at the terminal checkpoint of `ens`.
/// Followers are compared in the reduced coordinates.
///
/// The empirical covariance is compared with the covariance of the
/// linearized recursion at the same n, which converges to Sigma. Near the
/// boundary the gap to Sigma decays like n^{-(1 - 2 Re lambda*)} and would
/// otherwise dominate the comparison at any feasible n.
pub fn check_clt(system: &ValidatedSystem, report: &AsymptoticReport, sub: &SubsystemReport, ens: &EnsembleStats, tol: &Tolerances) -> Result<CheckResult> {
    if !system.balanced {
        return Err(Error::UnbalancedModel("the CLT check requires every urn to add a constant number of balls".into()));
    }
    if sub.sigma.is_none() {
        return Err(Error::RegimeMismatch(format!("subsystem {} is not in the sqrt(n) regime", sub.label)));
    }
    let k = system.k;
    let urns = &sub.matrices.urns;
    let reference = report.z_inf_flat();
    let c = ens.checkpoints.len() - 1;
    let n = ens.checkpoints[c] as f64;
    let raw: Vec<Vec<f64>> = ens
        .trajectories
        .iter()
        .map(|t| {
            let z = &t.snapshots[c].z;
            urns.iter()
                .flat_map(|&j| (0..k).map(move |i| j * k + i))
                .map(|idx| n.sqrt() * (z[idx] - reference[idx]))
                .collect()
        })
        .collect();
    let t0: Vec<f64> = urns.iter().map(|&j| system.initial[j].sum()).collect();
    let finite = linearized_covariance(&sub.matrices.q, &sub.g, &t0, k, n as u64);
    let map = sub.clt_map();
    let predicted = &map * finite * map.transpose();
    let samples: Vec<Vec<f64>> = raw
        .iter()
        .map(|x| (&map * nalgebra::DVector::from_column_slice(x)).iter().copied().collect())
        .collect();
    Ok(check_clt_samples(&sub.label, &samples, &predicted, &raw, k, tol))
}

/// Soft check in the polynomial regime: the rescaled deviation
/// n^{1 - Re lambda*} (Z_n - Z_inf) should settle, i.e. its change between the
/// last two of `steps` should be smaller than between the first two.
pub fn check_regime_c(trajectories: &[Trajectory], reference: &[f64], coords: &[usize], rate: &Rate, steps: [u64; 3], tol: &Tolerances) -> Result<CheckResult> {
    if rate.regime != Regime::Polynomial {
        return Err(Error::RegimeMismatch("rescaled-deviation check applies to the polynomial regime only".into()));
    }
    let mut settled = 0usize;
    for t in trajectories {
        let mut scaled = Vec::with_capacity(3);
        for &s in &steps {
            let snap = t
                .snapshots
                .iter()
                .find(|x| x.step == s)
                .ok_or_else(|| Error::InsufficientCheckpoints(format!("trajectory lacks checkpoint {s}")))?;
            let f = (s as f64).powf(rate.exponent);
            scaled.push(coords.iter().map(|&i| f * (snap.z[i] - reference[i])).collect::<Vec<f64>>());
        }
        let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let first = gap(&scaled[0], &scaled[1]);
        let last = gap(&scaled[1], &scaled[2]);
        if last < first || last == 0.0 {
            settled += 1;
        }
    }
    let fraction = settled as f64 / trajectories.len().max(1) as f64;
    let mut result = CheckResult::new(
        "regime_c",
        vec![entry("settling fraction", tol.settle_fraction, fraction, None, tol.settle_fraction, fraction >= tol.settle_fraction)],
    );
    result.qualitative = true;
    Ok(result)
}

/// Totals: T_n = T_0 + n for balanced urns, |T_n / n - 1| < 5 / sqrt(n) otherwise.
pub fn check_total_balls(traj: &Trajectory, system: &ValidatedSystem) -> CheckResult {
    let last = traj.last();
    let n = last.step as f64;
    let entries = (0..system.n)
        .map(|j| {
            let t0 = system.initial[j].sum();
            let t = last.t[j];
            if system.urns[j].model.is_balanced() {
                let gap = t - t0 - n;
                entry(format!("T[{j}] - T0 - n"), 0.0, gap, None, 1e-9, gap.abs() <= 1e-9)
            } else {
                let ratio = if n > 0.0 { t / n } else { 1.0 };
                let band = if n > 0.0 { 5.0 / n.sqrt() } else { f64::INFINITY };
                entry(format!("T[{j}] / n"), 1.0, ratio, None, band, (ratio - 1.0).abs() < band)
            }
        })
        .collect();
    CheckResult::new("total_balls", entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Limits,
    TotalBalls,
    Rate,
    Clt,
    RegimeC,
}

impl FromStr for CheckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "limits" => Ok(Self::Limits),
            "total" | "total_balls" => Ok(Self::TotalBalls),
            "rate" => Ok(Self::Rate),
            "clt" => Ok(Self::Clt),
            "regime_c" => Ok(Self::RegimeC),
            other => Err(Error::InvalidParameter(format!("unknown check '{other}'"))),
        }
    }
}

/// Flattened coordinate indices of the listed urns.
pub fn coords_of(urns: &[usize], k: usize) -> Vec<usize> {
    urns.iter().flat_map(|&j| (0..k).map(move |i| j * k + i)).collect()
}

/// Runs the requested checks; `None` selects every check whose
/// preconditions hold (the soft polynomial-regime check is opt-in).
pub fn run_checks(
    system: &ValidatedSystem,
    report: &AsymptoticReport,
    ens: &EnsembleStats,
    checks: Option<&[CheckKind]>,
    tol: &Tolerances,
) -> Result<VerificationReport> {
    let explicit = checks.is_some();
    let wanted = |c: CheckKind| match checks {
        Some(list) => list.contains(&c),
        None => c != CheckKind::RegimeC,
    };
    let reference = report.z_inf_flat();
    let mut out = Vec::new();
    if wanted(CheckKind::Limits) {
        out.push(check_limits(ens, &reference, tol));
    }
    if wanted(CheckKind::TotalBalls) {
        let entries = ens.trajectories.iter().flat_map(|t| check_total_balls(t, system).entries).collect();
        out.push(CheckResult::new("total_balls", entries));
    }
    if wanted(CheckKind::Rate) {
        match rate_fit_ready(ens) {
            Ok(()) => {
                for sub in &report.subsystems {
                    let coords = coords_of(&sub.urns, system.k);
                    let fit = fit_rate(ens, &reference, &coords)?;
                    let finite = finite_n_slope(system, sub, &reference, &fit.steps)?;
                    out.push(check_rate(&sub.label, &fit, &sub.rate, Some(finite), tol));
                }
            }
            Err(e) if explicit => return Err(e),
            Err(_) => {}
        }
    }
    if wanted(CheckKind::Clt) {
        if !system.balanced && explicit {
            return Err(Error::UnbalancedModel("the CLT check requires a balanced system".into()));
        }
        if system.balanced {
            for sub in report.subsystems.iter().filter(|s| s.sigma.is_some()) {
                out.push(check_clt(system, report, sub, ens, tol)?);
            }
        }
    }
    if wanted(CheckKind::RegimeC) {
        for sub in report.subsystems.iter().filter(|s| s.rate.regime == Regime::Polynomial) {
            let coords = coords_of(&sub.urns, system.k);
            let mut r = check_regime_c(&ens.trajectories, &reference, &coords, &sub.rate, [10_000, 100_000, 1_000_000], tol)?;
            r.name = format!("regime_c {}", sub.label);
            out.push(r);
        }
    }
    Ok(VerificationReport::new(out))
}
