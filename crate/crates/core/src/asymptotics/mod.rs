//! Limits, convergence rates and CLT covariances predicted from the
//! eigen-structure of the Q matrices.

pub mod covariance;
pub mod eigen;
pub mod limits;
pub mod matrices;
pub mod reduce;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

pub use covariance::{build_f_m, compute_g, compute_sigma, linearized_covariance, linearized_path};
pub use eigen::{eigen_decompose, residual_eigenvalues, tangent_basis, EigenData};
pub use limits::{fixed_point_residual, follower_limit, leader_limit};
pub use matrices::{build_q, build_q_joint, build_q_leader, SubsystemMatrices};
pub use reduce::{compute_a_out, reduce_follower, split_out, OutEigenvalue, ReducedSystem};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::model::{rows_of, ValidatedSystem};
use crate::partition::{self, PartitionResult, Role};

/// Half-width of the band around Re(lambda*) = 1/2 treated as the boundary case.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Re(lambda*) < 1/2: Gaussian fluctuations at scale 1/sqrt(n).
    SqrtN,
    /// Re(lambda*) = 1/2: Gaussian fluctuations at scale sqrt(log n / n).
    SqrtNOverLogN,
    /// Re(lambda*) > 1/2: deviations of order n^{-(1 - Re lambda*)}.
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rate {
    pub regime: Regime,
    /// Exponent e such that the deviation Z_n - Z_inf is of order n^{-e}
    /// (up to the logarithmic factor in the boundary case).
    pub exponent: f64,
    pub boundary: bool,
    pub label: String,
}

fn format_exponent(e: f64) -> String {
    let s = format!("{e:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Rate regime selected by the real part of lambda*. `None` means the
/// residual spectrum is empty, which behaves like the fastest regime.
pub fn classify_rate(lambda_star: Option<C64>) -> Rate {
    let re = lambda_star.map_or(f64::NEG_INFINITY, |l| l.re);
    if (re - 0.5).abs() <= BOUNDARY_TOL {
        Rate { regime: Regime::SqrtNOverLogN, exponent: 0.5, boundary: true, label: "sqrt(n/log n)".into() }
    } else if re < 0.5 {
        Rate { regime: Regime::SqrtN, exponent: 0.5, boundary: false, label: "sqrt(n)".into() }
    } else {
        let exponent = 1.0 - re;
        Rate {
            regime: Regime::Polynomial,
            exponent,
            boundary: false,
            label: format!("n^{}", format_exponent(exponent)),
        }
    }
}

/// Eigenvalue of largest real part among `candidates`; within a conjugate
/// pair the member with non-negative imaginary part is reported.
pub fn lambda_star(values: &[C64], candidates: &[usize]) -> Option<C64> {
    candidates
        .iter()
        .map(|&i| values[i])
        .max_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)))
        .map(|l| if l.im.abs() <= linalg::EIGEN_MATCH_TOL { C64::new(l.re, 0.0) } else { l })
}

#[derive(Debug, Clone)]
pub struct SubsystemReport {
    pub label: String,
    pub role: Role,
    /// Original indices of the subsystem's own urns.
    pub urns: Vec<usize>,
    /// Limits of the own urns, K entries per urn.
    pub z_inf: Vec<f64>,
    pub matrices: SubsystemMatrices,
    pub eigen: EigenData,
    /// Joint eigenvector columns excluded because they never reach the follower.
    pub out_mask: Vec<bool>,
    pub lambda_star: Option<C64>,
    pub rate: Rate,
    pub a_out: Vec<OutEigenvalue>,
    /// Block-diagonal G over the coordinates of `matrices`.
    pub g: DMatrix<f64>,
    /// Spectral covariance over the coordinates of `matrices`, restricted to
    /// eigen-directions that reach the subsystem. Present in the sqrt(n) regime.
    pub sigma_joint: Option<DMatrix<f64>>,
    /// Covariance in the coordinates the CLT is stated in: the subsystem's
    /// own coordinates for leaders, the reduced coordinates for followers.
    pub sigma: Option<DMatrix<f64>>,
    /// Covariance of the subsystem's own urns.
    pub sigma_own: Option<DMatrix<f64>>,
    pub reduction: Option<ReducedSystem>,
}

impl SubsystemReport {
    /// Indices of residual eigenpairs that drive the subsystem.
    pub fn driving_indices(&self) -> Vec<usize> {
        (self.eigen.inherited..self.eigen.dim()).filter(|&i| !self.out_mask[i]).collect()
    }

    /// Map from joint coordinates to the coordinates `sigma` is expressed in.
    pub fn clt_map(&self) -> DMatrix<f64> {
        match &self.reduction {
            Some(r) => r.c_t.clone(),
            None => DMatrix::identity(self.eigen.dim(), self.eigen.dim()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AsymptoticReport {
    pub partition: PartitionResult,
    pub subsystems: Vec<SubsystemReport>,
    /// Predicted limit of every urn, in original order.
    pub z_inf: Vec<DVector<f64>>,
    pub fixed_point_residual: f64,
}

impl AsymptoticReport {
    /// Limits flattened in original urn order, K entries per urn.
    pub fn z_inf_flat(&self) -> Vec<f64> {
        self.z_inf.iter().flat_map(|v| v.iter().copied()).collect()
    }

    /// Limits of `urns`, flattened.
    pub fn z_inf_of(&self, urns: &[usize]) -> Vec<f64> {
        urns.iter().flat_map(|&j| self.z_inf[j].iter().copied()).collect()
    }

    /// Report of the subsystem containing urn `j`.
    pub fn subsystem_of(&self, j: usize) -> &SubsystemReport {
        self.subsystems.iter().find(|s| s.urns.contains(&j)).expect("every urn belongs to a subsystem")
    }

    pub fn to_json(&self, system: &ValidatedSystem) -> Value {
        let complex = |z: C64| json!({"re": z.re, "im": z.im});
        let matrix = |m: &Option<DMatrix<f64>>| m.as_ref().map_or(Value::Null, |m| json!(rows_of(m)));
        let subsystems: Vec<Value> = self
            .subsystems
            .iter()
            .map(|s| {
                let mut spectrum: Vec<C64> = s.eigen.values.clone();
                spectrum.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
                let inherited: Vec<Value> = s.eigen.inherited_values().iter().map(|&z| complex(z)).collect();
                json!({
                    "label": s.label,
                    "role": s.role,
                    "urns": s.urns,
                    "coordinates_urns": s.matrices.urns,
                    "Z_inf": s.z_inf,
                    "spectrum": spectrum.into_iter().map(complex).collect::<Vec<_>>(),
                    "inherited": inherited,
                    "lambda_star": s.lambda_star.map_or(Value::Null, complex),
                    "regime": s.rate.regime,
                    "exponent": s.rate.exponent,
                    "boundary": s.rate.boundary,
                    "rate": s.rate.label,
                    "A_out": s.a_out,
                    "Sigma": matrix(&s.sigma),
                    "Sigma_own": matrix(&s.sigma_own),
                    "G": rows_of(&s.g),
                    "eigenvector_condition": s.eigen.condition,
                    "reduced_dimension": s.reduction.as_ref().map(|r| r.dim()),
                })
            })
            .collect();
        json!({
            "system": system.to_json(),
            "partition": {
                "classes": self.partition.classes.iter().map(|c| json!({
                    "label": c.label(),
                    "members": c.members,
                    "lambda_max": c.lambda_max,
                })).collect::<Vec<_>>(),
                "permutation": self.partition.permutation,
                "sizes": self.partition.sizes,
                "boundaries": self.partition.boundaries,
                "edges": self.partition.edges,
            },
            "Z_inf": self.z_inf.iter().map(|v| v.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "fixed_point_residual": self.fixed_point_residual,
            "subsystems": subsystems,
        })
    }
}

fn tag(err: Error, label: &str) -> Error {
    match err {
        Error::DefectiveMatrix(m) => Error::DefectiveMatrix(format!("subsystem {label}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("subsystem {label}: {m}")),
        Error::InternalInvariantViolation(m) => Error::InternalInvariantViolation(format!("subsystem {label}: {m}")),
        Error::RegimeMismatch(m) => Error::RegimeMismatch(format!("subsystem {label}: {m}")),
        other => other,
    }
}

fn ensure_simple_perron(m: &SubsystemMatrices, label: &str) -> Result<()> {
    let residual = residual_eigenvalues(&m.q, m.urns.len(), m.k)?;
    let hits = residual
        .iter()
        .filter(|z| (**z - C64::new(1.0, 0.0)).norm() <= limits::PERRON_TOL)
        .count();
    if hits > 0 {
        return Err(Error::NonSimplePerron { subsystem: label.to_string(), multiplicity: hits + 1 });
    }
    Ok(())
}

fn analyze_leader(system: &ValidatedSystem, partition: &PartitionResult, l: usize) -> Result<SubsystemReport> {
    let class = &partition.classes[l];
    let label = class.label();
    let m = build_q_leader(partition, system, l);
    ensure_simple_perron(&m, &label)?;
    let eig = eigen_decompose(&m.q, &m.w, m.k)?;
    let z = leader_limit(&eig, &label)?;
    let out_mask = vec![false; eig.dim()];
    let driving: Vec<usize> = (eig.inherited..eig.dim()).collect();
    let star = lambda_star(&eig.values, &driving);
    let rate = classify_rate(star);
    let (_, g) = compute_g(system, &m.urns, &z);
    let sigma = match rate.regime {
        Regime::SqrtN => Some(compute_sigma(&eig, &g, &driving, star)?),
        _ => None,
    };
    Ok(SubsystemReport {
        label,
        role: Role::Leader,
        urns: class.members.clone(),
        z_inf: z,
        matrices: m,
        eigen: eig,
        out_mask,
        lambda_star: star,
        rate,
        a_out: Vec::new(),
        g,
        sigma_joint: sigma.clone(),
        sigma_own: sigma.clone(),
        sigma,
        reduction: None,
    })
}

fn analyze_follower(
    system: &ValidatedSystem,
    partition: &PartitionResult,
    l: usize,
    z_known: &[Option<DVector<f64>>],
) -> Result<SubsystemReport> {
    let class = &partition.classes[l];
    let label = class.label();
    let m = build_q_joint(partition, system, l);
    let k = m.k;
    let upstream_urns = &m.urns[..m.upstream];
    let z_up: Vec<f64> = upstream_urns
        .iter()
        .flat_map(|&j| z_known[j].as_ref().expect("upstream limits computed first").iter().copied())
        .collect();
    let z_own = follower_limit(&m.q_own(), &m.q_cross(), &z_up, k, &label)?;

    let upstream = m.upstream_matrices();
    let up_eig = eigen_decompose(&upstream.q, &upstream.w, k)?;
    let a_out = compute_a_out(&up_eig, &m.q_cross());

    let mut eig = eigen_decompose(&m.q, &m.w, k)?;
    let out_mask = split_out(&mut eig, m.own_dim())?;
    let removed = out_mask.iter().filter(|&&b| b).count();
    let reported: usize = a_out.iter().map(|o| o.multiplicity).sum();
    if removed != reported {
        return Err(Error::InternalInvariantViolation(format!(
            "{removed} joint eigenvectors vanish on the follower but the upstream analysis finds {reported}"
        )));
    }
    let reduction = reduce_follower(&eig, &out_mask, m.own_dim(), &label)?;

    let driving: Vec<usize> = (eig.inherited..eig.dim()).filter(|&i| !out_mask[i]).collect();
    let star = lambda_star(&eig.values, &driving);
    let rate = classify_rate(star);
    let z_joint: Vec<f64> = z_up.iter().chain(z_own.iter()).copied().collect();
    let (_, g) = compute_g(system, &m.urns, &z_joint);
    let (sigma_joint, sigma, sigma_own) = match rate.regime {
        Regime::SqrtN => {
            let s = compute_sigma(&eig, &g, &driving, star)?;
            let reduced = &reduction.c_t * &s * reduction.c_t.transpose();
            let o = m.upstream_dim();
            let own = s.view((o, o), (m.own_dim(), m.own_dim())).into_owned();
            (Some(s), Some(reduced), Some(own))
        }
        _ => (None, None, None),
    };
    Ok(SubsystemReport {
        label,
        role: Role::Follower,
        urns: class.members.clone(),
        z_inf: z_own,
        matrices: m,
        eigen: eig,
        out_mask,
        lambda_star: star,
        rate,
        a_out,
        g,
        sigma_joint,
        sigma,
        sigma_own,
        reduction: Some(reduction),
    })
}

/// Full asymptotic analysis of a validated system.
pub fn analyze(system: &ValidatedSystem) -> Result<AsymptoticReport> {
    let partition = partition::partition(&system.w)?;
    let mut z_known: Vec<Option<DVector<f64>>> = vec![None; system.n];
    let mut subsystems = Vec::with_capacity(partition.classes.len());
    for l in 0..partition.classes.len() {
        let label = partition.classes[l].label();
        let report = match partition.classes[l].role {
            Role::Leader => analyze_leader(system, &partition, l),
            Role::Follower => analyze_follower(system, &partition, l, &z_known),
        }
        .map_err(|e| tag(e, &label))?;
        for (a, &j) in report.urns.iter().enumerate() {
            z_known[j] = Some(DVector::from_column_slice(&report.z_inf[a * system.k..(a + 1) * system.k]));
        }
        subsystems.push(report);
    }
    let z_inf: Vec<DVector<f64>> = z_known.into_iter().map(|z| z.expect("every urn analyzed")).collect();
    let residual = fixed_point_residual(system, &z_inf);
    if residual > 1e-9 {
        return Err(Error::InternalInvariantViolation(format!("fixed-point residual {residual:e}")));
    }
    Ok(AsymptoticReport { partition, subsystems, z_inf, fixed_point_residual: residual })
}
