//! Exact simulation of the interacting urn dynamics.
//!
//! At step n every urn j samples a color from Ztilde^j = sum_h w_jh Z^h,
//! computed from the state at n - 1, draws its replacement column and adds
//! it. Compositions are kept in normalized units. Totals are tracked as the
//! initial total plus an integer count of added units, so balanced urns
//! satisfy T_n = T_0 + n exactly.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{categorical, ValidatedSystem};
use crate::rng::{self, CounterRng};

/// Composition of every urn at some step.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnState {
    /// Ball amounts, K entries per urn.
    pub y: Vec<f64>,
    pub t0: Vec<f64>,
    /// Units added since step 0 (one per draw for balanced urns).
    pub added: Vec<u64>,
    pub n: u64,
}

impl UrnState {
    pub fn initial(system: &ValidatedSystem) -> Self {
        let y: Vec<f64> = system.initial.iter().flat_map(|v| v.iter().copied()).collect();
        let t0 = system.initial.iter().map(|v| v.sum()).collect();
        Self { y, t0, added: vec![0; system.n], n: 0 }
    }

    pub fn total(&self, j: usize) -> f64 {
        self.t0[j] + self.added[j] as f64
    }

    pub fn totals(&self) -> Vec<f64> {
        (0..self.t0.len()).map(|j| self.total(j)).collect()
    }

    /// Z^j = Y^j / T^j for every urn, flattened.
    pub fn proportions(&self) -> Vec<f64> {
        let k = self.y.len() / self.t0.len();
        self.y
            .chunks(k)
            .enumerate()
            .flat_map(|(j, block)| {
                let t = self.total(j);
                block.iter().map(move |x| x / t)
            })
            .collect()
    }
}

/// Precomputed sparse interaction rows and scratch buffers.
struct Engine<'a> {
    system: &'a ValidatedSystem,
    rows: Vec<Vec<(usize, f64)>>,
    z: Vec<f64>,
    tilde: Vec<f64>,
    column: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(system: &'a ValidatedSystem) -> Self {
        let rows = (0..system.n)
            .map(|j| (0..system.n).filter(|&h| system.w[(j, h)] > 0.0).map(|h| (h, system.w[(j, h)])).collect())
            .collect();
        Self {
            system,
            rows,
            z: vec![0.0; system.n * system.k],
            tilde: vec![0.0; system.k],
            column: vec![0.0; system.k],
        }
    }

    fn advance(&mut self, state: &mut UrnState, rep_seed: u64) -> Result<()> {
        let k = self.system.k;
        for j in 0..self.system.n {
            let t = state.total(j);
            if !(t > 0.0) {
                return Err(Error::NumericUnderflow { urn: j, total: t });
            }
            let inv = 1.0 / t;
            for i in 0..k {
                self.z[j * k + i] = state.y[j * k + i] * inv;
            }
        }
        state.n += 1;
        let salt = rng::step_key(rep_seed, state.n);
        for j in 0..self.system.n {
            self.tilde.fill(0.0);
            for &(h, w) in &self.rows[j] {
                for i in 0..k {
                    self.tilde[i] += w * self.z[h * k + i];
                }
            }
            let mut rng = CounterRng::for_urn(salt, j);
            let color = categorical(&self.tilde, rng.uniform());
            let units = self.system.urns[j].model.sample_column(color, &mut rng, &mut self.column);
            for i in 0..k {
                state.y[j * k + i] += self.column[i];
            }
            state.added[j] += units as u64;
        }
        Ok(())
    }
}

/// One synchronous step of every urn, with the draws of step `state.n + 1`
/// of the replication whose seed is `rep_seed`.
pub fn step(state: &UrnState, system: &ValidatedSystem, rep_seed: u64) -> Result<UrnState> {
    let mut next = state.clone();
    Engine::new(system).advance(&mut next, rep_seed)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub step: u64,
    pub z: Vec<f64>,
    pub t: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub replication: u64,
    /// Seed of this replication, derived from the base seed.
    pub seed: u64,
    pub base_seed: u64,
    /// Hash of the normalized system the trajectory was simulated from.
    pub fingerprint: u64,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn checkpoints(&self) -> Vec<u64> {
        self.snapshots.iter().map(|s| s.step).collect()
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectories have at least one snapshot")
    }
}

/// FNV-1a hash of the JSON echo of the system.
pub fn fingerprint(system: &ValidatedSystem) -> u64 {
    let text = system.to_json().to_string();
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn check_checkpoints(n_steps: u64, checkpoints: &[u64]) -> Result<Vec<u64>> {
    if checkpoints.is_empty() {
        return Ok(vec![n_steps]);
    }
    if let Some(w) = checkpoints.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidCheckpoint(format!("checkpoints must increase strictly ({} then {})", w[0], w[1])));
    }
    if let Some(&last) = checkpoints.last() {
        if last > n_steps {
            return Err(Error::InvalidCheckpoint(format!("checkpoint {last} exceeds the {n_steps} steps")));
        }
    }
    Ok(checkpoints.to_vec())
}

/// Simulates replication `rep` of the ensemble seeded by `base_seed`.
pub fn run_replication(system: &ValidatedSystem, n_steps: u64, base_seed: u64, rep: u64, checkpoints: &[u64]) -> Result<Trajectory> {
    let checkpoints = check_checkpoints(n_steps, checkpoints)?;
    let seed = rng::replication_seed(base_seed, rep);
    let mut engine = Engine::new(system);
    let mut state = UrnState::initial(system);
    let mut snapshots = Vec::with_capacity(checkpoints.len());
    for &target in &checkpoints {
        while state.n < target {
            engine.advance(&mut state, seed)?;
        }
        snapshots.push(Snapshot { step: state.n, z: state.proportions(), t: state.totals() });
    }
    Ok(Trajectory { replication: rep, seed, base_seed, fingerprint: fingerprint(system), snapshots })
}

/// A single trajectory; identical to replication 0 of an ensemble with the same seed.
pub fn run(system: &ValidatedSystem, n_steps: u64, seed: u64, checkpoints: &[u64]) -> Result<Trajectory> {
    run_replication(system, n_steps, seed, 0, checkpoints)
}

/// `count` log-spaced integer steps from `lo` to `hi` inclusive, duplicates removed.
pub fn log_checkpoints(lo: f64, hi: f64, count: usize) -> Result<Vec<u64>> {
    if !(lo >= 1.0 && hi >= lo && count >= 1) || (count == 1 && hi != lo) {
        return Err(Error::InvalidCheckpoint(format!("bad log range {lo}..{hi} with {count} points")));
    }
    let mut out: Vec<u64> = (0..count)
        .map(|i| {
            let f = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            (lo.ln() + f * (hi.ln() - lo.ln())).exp().round() as u64
        })
        .collect();
    out.dedup();
    Ok(out)
}

/// Parses `10,100,1000` or `log:10:1e6:12`.
pub fn parse_checkpoints(spec: &str) -> Result<Vec<u64>> {
    let bad = |what: &str| Error::InvalidCheckpoint(format!("cannot parse '{what}'"));
    let number = |s: &str| -> Result<f64> {
        let x: f64 = s.trim().parse().map_err(|_| bad(s))?;
        if x.is_finite() && x >= 0.0 && x.fract() == 0.0 {
            Ok(x)
        } else {
            Err(bad(s))
        }
    };
    if let Some(rest) = spec.trim().strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(spec));
        }
        let count: usize = parts[2].trim().parse().map_err(|_| bad(parts[2]))?;
        return log_checkpoints(number(parts[0])?, number(parts[1])?, count);
    }
    let list = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| number(s).map(|x| x as u64))
        .collect::<Result<Vec<u64>>>()?;
    if list.is_empty() {
        return Err(bad(spec));
    }
    check_checkpoints(u64::MAX, &list)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_steps: u64,
    pub reps: usize,
    pub base_seed: u64,
    pub checkpoints: Vec<u64>,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

/// Cross-replication summaries at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStats {
    pub step: u64,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// Mean and covariance of sqrt(n) (Z_n - Z_inf), when a reference is given.
    pub scaled_mean: Option<Vec<f64>>,
    pub scaled_cov: Option<DMatrix<f64>>,
    /// Mean over replications of |Z_n - Z_inf|_2 and its standard error.
    pub mean_deviation: Option<f64>,
    pub mean_deviation_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub reps: usize,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<u64>,
    pub stats: Vec<CheckpointStats>,
    pub trajectories: Vec<Trajectory>,
    pub reference: Option<Vec<f64>>,
}

/// Sample mean and unbiased covariance of equally long rows.
pub fn mean_cov(samples: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let r = samples.len();
    let d = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= r as f64);
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        for a in 0..d {
            let da = s[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (s[b] - mean[b]);
            }
        }
    }
    let denom = (r.max(2) - 1) as f64;
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= denom;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (mean, cov)
}

/// Per-checkpoint summaries; replications are folded in index order so the
/// result does not depend on how they were scheduled.
pub fn summarize(trajectories: &[Trajectory], reference: Option<&[f64]>) -> Vec<CheckpointStats> {
    let Some(first) = trajectories.first() else {
        return Vec::new();
    };
    (0..first.snapshots.len())
        .map(|c| {
            let step = first.snapshots[c].step;
            let samples: Vec<Vec<f64>> = trajectories.iter().map(|t| t.snapshots[c].z.clone()).collect();
            let (mean, cov) = mean_cov(&samples);
            let mut out = CheckpointStats {
                step,
                mean,
                cov,
                scaled_mean: None,
                scaled_cov: None,
                mean_deviation: None,
                mean_deviation_se: None,
            };
            if let Some(z_inf) = reference {
                let root = (step as f64).sqrt();
                let scaled: Vec<Vec<f64>> = samples
                    .iter()
                    .map(|s| s.iter().zip(z_inf).map(|(x, z)| root * (x - z)).collect())
                    .collect();
                let (m, c) = mean_cov(&scaled);
                out.scaled_mean = Some(m);
                out.scaled_cov = Some(c);
                let norms: Vec<Vec<f64>> = samples
                    .iter()
                    .map(|s| vec![s.iter().zip(z_inf).map(|(x, z)| (x - z).powi(2)).sum::<f64>().sqrt()])
                    .collect();
                let (m, c) = mean_cov(&norms);
                out.mean_deviation = Some(m[0]);
                out.mean_deviation_se = Some((c[(0, 0)] / norms.len() as f64).sqrt());
            }
            out
        })
        .collect()
}

/// Runs `cfg.reps` independent replications and summarizes them.
pub fn ensemble(system: &ValidatedSystem, cfg: &EnsembleConfig, reference: Option<&[f64]>) -> Result<EnsembleStats> {
    if cfg.reps < 2 {
        return Err(Error::InvalidParameter(format!("an ensemble needs at least 2 replications, got {}", cfg.reps)));
    }
    if let Some(z) = reference {
        if z.len() != system.n * system.k {
            return Err(Error::DimensionMismatch(format!("reference has {} entries, expected {}", z.len(), system.n * system.k)));
        }
    }
    let checkpoints = check_checkpoints(cfg.n_steps, &cfg.checkpoints)?;
    let simulate = || {
        (0..cfg.reps as u64)
            .into_par_iter()
            .map(|r| run_replication(system, cfg.n_steps, cfg.base_seed, r, &checkpoints))
            .collect::<Result<Vec<_>>>()
    };
    let trajectories = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(simulate)?,
        None => simulate()?,
    };
    Ok(EnsembleStats {
        reps: cfg.reps,
        base_seed: cfg.base_seed,
        seeds: trajectories.iter().map(|t| t.seed).collect(),
        stats: summarize(&trajectories, reference),
        checkpoints,
        trajectories,
        reference: reference.map(<[f64]>::to_vec),
    })
}
