use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use urn_core::asymptotics::AsymptoticReport;
use urn_core::simulate::{EnsembleStats, Trajectory};

/// A file that a command expected from an earlier run is absent.
#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MissingInput: {} not found", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    if !path.is_file() {
        return Err(MissingInput(path.to_path_buf()).into());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory], k: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["replication", "step", "urn", "color", "Z", "T"])?;
    for t in trajectories {
        for s in &t.snapshots {
            for (j, total) in s.t.iter().enumerate() {
                for c in 0..k {
                    w.write_record([
                        t.replication.to_string(),
                        s.step.to_string(),
                        j.to_string(),
                        c.to_string(),
                        s.z[j * k + c].to_string(),
                        total.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_covariances(path: &Path, ens: &EnsembleStats) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["step", "statistic", "i", "j", "value"])?;
    for s in &ens.stats {
        let mut blocks = vec![("cov", &s.cov)];
        if let Some(c) = &s.scaled_cov {
            blocks.push(("scaled_cov", c));
        }
        for (name, m) in blocks {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_record([s.step.to_string(), name.to_string(), i.to_string(), j.to_string(), m[(i, j)].to_string()])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn fmt_vec(xs: &[f64], k: usize) -> String {
    xs.chunks(k)
        .map(|c| format!("({})", c.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")))
        .collect::<Vec<_>>()
        .join(" ")
}

/// One row per subsystem: label, urns, limit, lambda*, regime and rate.
pub fn summary_table(report: &AsymptoticReport, k: usize) -> String {
    let header = ["subsystem", "role", "urns", "Z_inf", "lambda*", "regime", "rate"];
    let rows: Vec<[String; 7]> = report
        .subsystems
        .iter()
        .map(|s| {
            let star = match s.lambda_star {
                Some(l) if l.im != 0.0 => format!("{:.4}{:+.4}i", l.re, l.im),
                Some(l) => format!("{:.4}", l.re),
                None => "-".into(),
            };
            let urns = s.urns.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(",");
            let regime = serde_json::to_value(s.rate.regime).unwrap().as_str().unwrap_or_default().to_string();
            [
                s.label.clone(),
                format!("{:?}", s.role).to_lowercase(),
                urns,
                fmt_vec(&s.z_inf, k),
                star,
                regime,
                s.rate.label.clone(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
