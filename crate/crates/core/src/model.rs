//! Urn system specification, validation and replacement-distribution moments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two columns of a declared mean matrix may differ in sum by at most this much.
pub const COLUMN_SUM_TOL: f64 = 1e-9;
/// Row sums of the interaction matrix must equal 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Law of the replacement matrix D of a single urn. `h` is the mean E[D].
#[derive(Debug, Clone, PartialEq)]
pub enum ReplacementModel {
    /// D = H at every draw.
    Deterministic { h: DMatrix<f64> },
    /// Column i of D is a unit vector e_k (times the balance constant) with
    /// probability H_ki / c.
    SingleBallMultinomial { h: DMatrix<f64> },
    /// Column i of D is Dirichlet with mean H_.i / c and concentration kappa.
    DirichletColumns { h: DMatrix<f64>, kappa: f64 },
    /// D = S * M with S in {0, 2} a fair coin and M a single-ball multinomial
    /// draw. Mean H, but the number of balls added per draw is random.
    RandomScaled { h: DMatrix<f64> },
}

impl ReplacementModel {
    pub fn mean(&self) -> &DMatrix<f64> {
        match self {
            Self::Deterministic { h }
            | Self::SingleBallMultinomial { h }
            | Self::DirichletColumns { h, .. }
            | Self::RandomScaled { h } => h,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Deterministic { .. } => "deterministic",
            Self::SingleBallMultinomial { .. } => "single_ball_multinomial",
            Self::DirichletColumns { .. } => "dirichlet",
            Self::RandomScaled { .. } => "random_scaled",
        }
    }

    pub fn kappa(&self) -> Option<f64> {
        match self {
            Self::DirichletColumns { kappa, .. } => Some(*kappa),
            _ => None,
        }
    }

    /// Whether every draw adds the same total amount of balls.
    pub fn is_balanced(&self) -> bool {
        !matches!(self, Self::RandomScaled { .. })
    }

    fn with_mean(&self, h: DMatrix<f64>) -> Self {
        match self {
            Self::Deterministic { .. } => Self::Deterministic { h },
            Self::SingleBallMultinomial { .. } => Self::SingleBallMultinomial { h },
            Self::DirichletColumns { kappa, .. } => Self::DirichletColumns { h, kappa: *kappa },
            Self::RandomScaled { .. } => Self::RandomScaled { h },
        }
    }

    /// Draws column `i` of a replacement matrix into `out` and returns the
    /// total amount added. Assumes the model is normalized (column-stochastic H).
    pub fn sample_column<R: Rng + ?Sized>(&self, i: usize, rng: &mut R, out: &mut [f64]) -> f64 {
        let h = self.mean();
        let k = h.nrows();
        match self {
            Self::Deterministic { .. } => {
                out.copy_from_slice(h.column(i).as_slice());
                1.0
            }
            Self::SingleBallMultinomial { .. } => {
                out.fill(0.0);
                out[categorical(h.column(i).as_slice(), rng.random::<f64>())] = 1.0;
                1.0
            }
            Self::RandomScaled { .. } => {
                out.fill(0.0);
                let scale = if rng.random::<bool>() { 2.0 } else { 0.0 };
                out[categorical(h.column(i).as_slice(), rng.random::<f64>())] = scale;
                scale
            }
            Self::DirichletColumns { kappa, .. } => {
                let mut total = 0.0;
                for c in 0..k {
                    let shape = kappa * h[(c, i)];
                    out[c] = if shape > 0.0 {
                        Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
                    } else {
                        0.0
                    };
                    total += out[c];
                }
                if total > 0.0 {
                    out.iter_mut().for_each(|x| *x /= total);
                } else {
                    // Every gamma draw underflowed; fall back to the mean.
                    out.copy_from_slice(h.column(i).as_slice());
                }
                1.0
            }
        }
    }
}

/// Index of the category selected by the uniform `u` under weights `p`.
/// Rounding slack at the top end falls on the last positive weight.
pub fn categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (idx, &w) in p.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = idx;
            if u < acc {
                return idx;
            }
        }
    }
    last
}

/// Closed-form moments: the mean H and, per column i, the covariance C(i) of D_.i.
pub fn moments_of(model: &ReplacementModel) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let h = model.mean().clone();
    let k = h.nrows();
    let cov = (0..k)
        .map(|i| {
            let p = h.column(i).into_owned();
            let outer = &p * p.transpose();
            match model {
                ReplacementModel::Deterministic { .. } => DMatrix::zeros(k, k),
                ReplacementModel::SingleBallMultinomial { .. } => DMatrix::from_diagonal(&p) - outer,
                ReplacementModel::DirichletColumns { kappa, .. } => {
                    (DMatrix::from_diagonal(&p) - outer) / (kappa + 1.0)
                }
                // E[S^2] = 2, so E[D D'] = 2 diag(p).
                ReplacementModel::RandomScaled { .. } => DMatrix::from_diagonal(&(&p * 2.0)) - outer,
            }
        })
        .collect();
    (h, cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrnSpec {
    pub model: ReplacementModel,
    /// Declared balance constant; inferred from the column sums of H when absent.
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub k: usize,
    pub w: DMatrix<f64>,
    pub urns: Vec<UrnSpec>,
    pub initial: Option<Vec<DVector<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedUrn {
    /// Model with column-stochastic mean.
    pub model: ReplacementModel,
    /// Balance constant removed by normalization.
    pub c: f64,
}

/// A system normalized so that every mean matrix is column-stochastic and
/// compositions are measured in units of the balance constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSystem {
    pub n: usize,
    pub k: usize,
    pub w: DMatrix<f64>,
    pub urns: Vec<ValidatedUrn>,
    pub initial: Vec<DVector<f64>>,
    pub balanced: bool,
}

impl ValidatedSystem {
    pub fn h(&self, j: usize) -> &DMatrix<f64> {
        self.urns[j].model.mean()
    }

    /// The normalized system as a specification with unit balance constants,
    /// suitable for feeding back into [`validate_spec`].
    pub fn to_spec(&self) -> SystemSpec {
        SystemSpec {
            k: self.k,
            w: self.w.clone(),
            urns: self
                .urns
                .iter()
                .map(|u| UrnSpec { model: u.model.clone(), c: Some(1.0) })
                .collect(),
            initial: Some(self.initial.clone()),
        }
    }

    /// JSON echo of the normalized system. Numbers round-trip exactly.
    pub fn to_json(&self) -> serde_json::Value {
        let raw = RawSystem {
            k: self.k,
            w: rows_of(&self.w),
            urns: self
                .urns
                .iter()
                .map(|u| RawUrn {
                    model: u.model.name().to_string(),
                    h: rows_of(u.model.mean()),
                    kappa: u.model.kappa(),
                    c: None,
                })
                .collect(),
            initial: Some(self.initial.iter().map(|v| v.iter().copied().collect()).collect()),
        };
        let mut value = serde_json::to_value(raw).expect("plain data serializes");
        value["balanced"] = serde_json::Value::Bool(self.balanced);
        // The normalized means have unit column sums; the removed constants
        // are reported alongside so the echo can be validated again as is.
        value["balance_constants"] = serde_json::json!(self.urns.iter().map(|u| u.c).collect::<Vec<_>>());
        value
    }
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("{what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Checks a specification and normalizes it by the balance constants.
pub fn validate_spec(spec: &SystemSpec) -> Result<ValidatedSystem> {
    let k = spec.k;
    let n = spec.urns.len();
    if k == 0 {
        return Err(Error::DimensionMismatch("K must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::DimensionMismatch("at least one urn is required".into()));
    }
    if spec.w.nrows() != n || spec.w.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "W is {}x{} but there are {n} urns",
            spec.w.nrows(),
            spec.w.ncols()
        )));
    }
    for (idx, &x) in spec.w.iter().enumerate() {
        if !x.is_finite() || x < 0.0 || x > 1.0 {
            let (i, j) = (idx % n, idx / n);
            return Err(Error::NegativeEntry(format!("W[{i}][{j}] = {x} is outside [0, 1]")));
        }
    }
    for row in 0..n {
        let sum: f64 = spec.w.row(row).iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::RowNotStochastic { row, sum });
        }
    }

    let mut urns = Vec::with_capacity(n);
    for (j, urn) in spec.urns.iter().enumerate() {
        urns.push(normalize_urn(j, k, urn)?);
    }

    let initial = match &spec.initial {
        None => vec![DVector::from_element(k, 1.0 / k as f64); n],
        Some(list) => {
            if list.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} initial compositions for {n} urns",
                    list.len()
                )));
            }
            list.iter()
                .zip(&urns)
                .enumerate()
                .map(|(j, (y, urn))| {
                    if y.len() != k {
                        return Err(Error::DimensionMismatch(format!(
                            "initial composition of urn {j} has length {}, expected {k}",
                            y.len()
                        )));
                    }
                    if let Some(x) = y.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                        return Err(Error::NegativeEntry(format!(
                            "initial composition of urn {j} has non-positive entry {x}"
                        )));
                    }
                    Ok(if urn.c == 1.0 { y.clone() } else { y / urn.c })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    let balanced = urns.iter().all(|u| u.model.is_balanced());
    Ok(ValidatedSystem { n, k, w: spec.w.clone(), urns, initial, balanced })
}

fn normalize_urn(j: usize, k: usize, urn: &UrnSpec) -> Result<ValidatedUrn> {
    let h = urn.model.mean();
    if h.nrows() != k || h.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "H of urn {j} is {}x{}, expected {k}x{k}",
            h.nrows(),
            h.ncols()
        )));
    }
    for r in 0..k {
        for c in 0..k {
            let x = h[(r, c)];
            if !x.is_finite() || x < 0.0 {
                return Err(Error::NegativeEntry(format!("H of urn {j} has entry {x} at ({r}, {c})")));
            }
        }
    }
    if let Some(kappa) = urn.model.kappa() {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidParameter(format!("urn {j}: kappa must be positive, got {kappa}")));
        }
    }
    let sums: Vec<f64> = h.column_iter().map(|col| col.sum()).collect();
    let lo = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > COLUMN_SUM_TOL {
        return Err(Error::ColumnSumNotConstant(format!(
            "urn {j}: column sums range over [{lo}, {hi}]"
        )));
    }
    if !(lo > 0.0) {
        return Err(Error::ColumnSumNotConstant(format!("urn {j}: column sums must be positive")));
    }
    let inferred = sums.iter().sum::<f64>() / k as f64;
    let c = match urn.c {
        Some(c) if !(c.is_finite() && c > 0.0) => {
            return Err(Error::InvalidParameter(format!("urn {j}: c must be positive, got {c}")));
        }
        Some(c) if (c - inferred).abs() > COLUMN_SUM_TOL * c.max(1.0) => {
            return Err(Error::ColumnSumNotConstant(format!(
                "urn {j}: declared c = {c} but column sums are {inferred}"
            )));
        }
        Some(c) => c,
        None => inferred,
    };
    // Each column is divided by its own sum so the normalized column sums
    // are 1 to rounding; columns already summing to 1 are left untouched,
    // which makes validation idempotent.
    let mut normalized = h.clone();
    for (mut col, &s) in normalized.column_iter_mut().zip(&sums) {
        if (s - 1.0).abs() > 1e-14 {
            col /= s;
        }
    }
    Ok(ValidatedUrn { model: urn.model.with_mean(normalized), c })
}

#[derive(Debug, Serialize, Deserialize)]
struct RawUrn {
    model: String,
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSystem {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    urns: Vec<RawUrn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<Vec<Vec<f64>>>,
}

/// Parses a system specification from its JSON form.
pub fn parse_spec(text: &str) -> Result<SystemSpec> {
    let raw: RawSystem = serde_json::from_str(text).map_err(|e| {
        Error::Parse(format!("{} (line {}, column {})", e, e.line(), e.column()))
    })?;
    let w = matrix_from_rows(&raw.w, "W")?;
    let urns = raw
        .urns
        .into_iter()
        .enumerate()
        .map(|(j, u)| {
            let h = matrix_from_rows(&u.h, &format!("H of urn {j}"))?;
            let model = match u.model.as_str() {
                "deterministic" => ReplacementModel::Deterministic { h },
                "single_ball_multinomial" | "multinomial" => ReplacementModel::SingleBallMultinomial { h },
                "dirichlet" => ReplacementModel::DirichletColumns {
                    h,
                    kappa: u.kappa.ok_or_else(|| {
                        Error::InvalidParameter(format!("urn {j}: dirichlet model needs kappa"))
                    })?,
                },
                "random_scaled" => ReplacementModel::RandomScaled { h },
                other => {
                    return Err(Error::Parse(format!("urn {j}: unknown model '{other}'")));
                }
            };
            Ok(UrnSpec { model, c: u.c })
        })
        .collect::<Result<Vec<_>>>()?;
    let initial = raw
        .initial
        .map(|list| list.into_iter().map(DVector::from_vec).collect());
    Ok(SystemSpec { k: raw.k, w, urns, initial })
}

/// Parses and validates in one go.
pub fn load_system(text: &str) -> Result<ValidatedSystem> {
    validate_spec(&parse_spec(text)?)
}
