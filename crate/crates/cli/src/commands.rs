use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use urn_core::asymptotics::{self, AsymptoticReport};
use urn_core::model::{self, ValidatedSystem};
use urn_core::simulate::{self, EnsembleConfig, EnsembleStats};
use urn_core::verify::{self, CheckKind, Tolerances};

use crate::output::{self, read_json, write_json};
use crate::{RunArgs, TolArgs};

fn load(spec: &Path) -> Result<ValidatedSystem> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    model::load_system(&text).with_context(|| format!("loading {}", spec.display()))
}

fn analyze_system(system: &ValidatedSystem) -> Result<AsymptoticReport> {
    asymptotics::analyze(system).context("asymptotic analysis failed")
}

/// Requested checkpoints with the final step appended. Without an explicit
/// list, ensembles get 8 log-spaced points so a rate can be fitted; the
/// first point sits at 100 when there is room, since the smallest steps bend
/// the log-log curve.
fn checkpoints(run: &RunArgs, log_default: bool) -> Result<Vec<u64>> {
    let mut list = match &run.checkpoints {
        Some(spec) => simulate::parse_checkpoints(spec)?,
        None if log_default && run.steps >= 10_000 => simulate::log_checkpoints(100.0, run.steps as f64, 8)?,
        None if log_default && run.steps >= 1000 => simulate::log_checkpoints(10.0, run.steps as f64, 8)?,
        None => Vec::new(),
    };
    if list.last().is_some_and(|&last| last > run.steps) {
        bail!("checkpoint {} exceeds --steps {}", list.last().unwrap(), run.steps);
    }
    if list.last() != Some(&run.steps) {
        list.push(run.steps);
    }
    Ok(list)
}

pub fn analyze(spec: &Path, out: &Path) -> Result<bool> {
    let system = load(spec)?;
    let report = analyze_system(&system)?;
    output::ensure_dir(out)?;
    write_json(&out.join("analysis.json"), &report.to_json(&system))?;
    print!("{}", output::summary_table(&report, system.k));
    Ok(true)
}

pub fn simulate(run: &RunArgs, reps: usize) -> Result<bool> {
    let system = load(&run.spec)?;
    let checkpoints = checkpoints(run, false)?;
    let trajectories = (0..reps as u64)
        .map(|r| simulate::run_replication(&system, run.steps, run.seed, r, &checkpoints))
        .collect::<urn_core::Result<Vec<_>>>()?;
    output::ensure_dir(&run.out)?;
    output::write_trajectories(&run.out.join("trajectory.csv"), &trajectories, system.k)?;
    Ok(true)
}

fn run_ensemble(
    system: &ValidatedSystem,
    report: Option<&AsymptoticReport>,
    run: &RunArgs,
    reps: usize,
    workers: Option<usize>,
) -> Result<EnsembleStats> {
    let cfg = EnsembleConfig {
        n_steps: run.steps,
        reps,
        base_seed: run.seed,
        checkpoints: checkpoints(run, true)?,
        workers,
    };
    let reference = report.map(|r| r.z_inf_flat());
    Ok(simulate::ensemble(system, &cfg, reference.as_deref())?)
}

fn ensemble_json(system: &ValidatedSystem, report: Option<&AsymptoticReport>, ens: &EnsembleStats, n_steps: u64) -> Value {
    let stats: Vec<Value> = ens
        .stats
        .iter()
        .map(|s| {
            json!({
                "step": s.step,
                "mean": s.mean,
                "mean_deviation": s.mean_deviation,
                "mean_deviation_se": s.mean_deviation_se,
            })
        })
        .collect();
    let series: Vec<Value> = match (report, &ens.reference) {
        (Some(r), Some(reference)) => r
            .subsystems
            .iter()
            .map(|s| {
                let coords = verify::coords_of(&s.urns, system.k);
                json!({
                    "label": s.label,
                    "urns": s.urns,
                    "mean_deviation": verify::mean_deviations(ens, reference, &coords),
                })
            })
            .collect(),
        _ => Vec::new(),
    };
    json!({
        "fingerprint": format!("{:016x}", simulate::fingerprint(system)),
        "base_seed": ens.base_seed,
        "reps": ens.reps,
        "n_steps": n_steps,
        "checkpoints": ens.checkpoints,
        "seeds": ens.seeds,
        "reference": ens.reference,
        "stats": stats,
        "series": series,
    })
}

pub fn ensemble(run: &RunArgs, reps: usize, workers: Option<usize>) -> Result<bool> {
    let system = load(&run.spec)?;
    let report = match asymptotics::analyze(&system) {
        Ok(r) => Some(r),
        Err(e) => {
            eprintln!("warning: no reference limit, deviations are not computed ({e})");
            None
        }
    };
    let ens = run_ensemble(&system, report.as_ref(), run, reps, workers)?;
    output::ensure_dir(&run.out)?;
    write_json(&run.out.join("ensemble.json"), &ensemble_json(&system, report.as_ref(), &ens, run.steps))?;
    output::write_covariances(&run.out.join("covariance.csv"), &ens)?;
    Ok(true)
}

fn tolerances(args: &TolArgs) -> Tolerances {
    let mut tol = Tolerances::default();
    let set = |field: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *field = v;
        }
    };
    set(&mut tol.limit_atol, args.tol_limit_atol);
    set(&mut tol.limit_se, args.tol_limit_se);
    set(&mut tol.frobenius, args.tol_frobenius);
    set(&mut tol.skewness, args.tol_skewness);
    set(&mut tol.excess_kurtosis, args.tol_kurtosis);
    set(&mut tol.block_se, args.tol_block_se);
    set(&mut tol.clt_se, args.tol_clt_se);
    set(&mut tol.slope_polynomial, args.tol_slope_polynomial);
    set(&mut tol.settle_fraction, args.tol_settle_fraction);
    tol
}

pub fn verify(run: &RunArgs, reps: usize, workers: Option<usize>, checks: Option<&str>, tol: &TolArgs) -> Result<bool> {
    let system = load(&run.spec)?;
    let kinds = checks
        .map(|s| s.split(',').filter(|c| !c.trim().is_empty()).map(str::parse).collect::<urn_core::Result<Vec<CheckKind>>>())
        .transpose()?;
    let tol = tolerances(tol);
    let report = analyze_system(&system)?;
    let ens = run_ensemble(&system, Some(&report), run, reps, workers)?;
    let result = verify::run_checks(&system, &report, &ens, kinds.as_deref(), &tol)?;
    output::ensure_dir(&run.out)?;
    write_json(
        &run.out.join("verify.json"),
        &json!({
            "fingerprint": format!("{:016x}", simulate::fingerprint(&system)),
            "base_seed": run.seed,
            "reps": reps,
            "n_steps": run.steps,
            "checkpoints": ens.checkpoints,
            "tolerances": tol,
            "passed": result.passed,
            "checks": result.checks,
        }),
    )?;
    for c in &result.checks {
        let soft = if c.qualitative { " (qualitative)" } else { "" };
        println!("{} {}{}", if c.passed { "PASS" } else { "FAIL" }, c.name, soft);
    }
    Ok(result.passed)
}

fn as_f64s(v: &Value) -> Vec<f64> {
    v.as_array().map(|a| a.iter().filter_map(Value::as_f64).collect()).unwrap_or_default()
}

pub fn report(out: &Path) -> Result<bool> {
    let analysis = read_json(&out.join("analysis.json"))?;
    let ensemble = read_json(&out.join("ensemble.json"))?;
    let steps: Vec<u64> = ensemble["checkpoints"]
        .as_array()
        .context("ensemble.json has no checkpoints")?
        .iter()
        .filter_map(Value::as_u64)
        .collect();
    let series = ensemble["series"].as_array().cloned().unwrap_or_default();

    let mut rows = Vec::new();
    let mut subsystems = Vec::new();
    for sub in analysis["subsystems"].as_array().context("analysis.json has no subsystems")? {
        let label = sub["label"].as_str().unwrap_or_default();
        let exponent = sub["exponent"].as_f64().context("subsystem without exponent")?;
        let predicted = -exponent;
        let devs = series
            .iter()
            .find(|s| s["label"] == sub["label"])
            .map(|s| as_f64s(&s["mean_deviation"]))
            .unwrap_or_default();
        let points: Vec<(u64, f64)> = steps.iter().copied().zip(devs).filter(|&(n, d)| n > 0 && d > 0.0).collect();
        let (ns, ds): (Vec<u64>, Vec<f64>) = points.iter().copied().unzip();
        let fit = verify::fit_log_log(&ns, &ds).ok();
        // The predicted line passes through the centroid of the observed points.
        let centroid = (!points.is_empty()).then(|| {
            let m = points.len() as f64;
            let x = points.iter().map(|p| (p.0 as f64).ln()).sum::<f64>() / m;
            let y = points.iter().map(|p| p.1.ln()).sum::<f64>() / m;
            (x, y)
        });
        for &(n, d) in &points {
            let x = (n as f64).ln();
            let (cx, cy) = centroid.expect("points are non-empty");
            rows.push([label.to_string(), n.to_string(), x.to_string(), d.ln().to_string(), (cy + predicted * (x - cx)).to_string()]);
        }
        subsystems.push(json!({
            "label": sub["label"],
            "role": sub["role"],
            "urns": sub["urns"],
            "Z_inf": sub["Z_inf"],
            "lambda_star": sub["lambda_star"],
            "regime": sub["regime"],
            "rate": sub["rate"],
            "A_out": sub["A_out"],
            "Sigma": sub["Sigma"],
            "predicted_slope": predicted,
            "fitted_slope": fit.as_ref().map(|f| f.slope),
            "fitted_slope_se": fit.as_ref().map(|f| f.slope_se),
        }));
    }
    write_json(
        &out.join("report.json"),
        &json!({
            "system": analysis["system"],
            "Z_inf": analysis["Z_inf"],
            "ensemble": {
                "fingerprint": ensemble["fingerprint"],
                "base_seed": ensemble["base_seed"],
                "reps": ensemble["reps"],
                "n_steps": ensemble["n_steps"],
                "checkpoints": ensemble["checkpoints"],
            },
            "subsystems": subsystems,
        }),
    )?;
    let path = out.join("series.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["subsystem", "step", "log_n", "log_mean_deviation", "predicted_log_deviation"])?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(true)
}
