//! Assembly of the Q matrices: block (a, b) of a subsystem matrix is
//! `w[urns[a]][urns[b]] * H^{urns[a]}`.

use nalgebra::DMatrix;

use crate::model::ValidatedSystem;
use crate::partition::{PartitionResult, Role};

/// Q matrices of one subsystem. For a follower the coordinates cover every
/// earlier class followed by the follower's own urns; for a leader they
/// cover the leader alone.
#[derive(Debug, Clone)]
pub struct SubsystemMatrices {
    /// Original urn indices, in coordinate order.
    pub urns: Vec<usize>,
    pub k: usize,
    /// W restricted to `urns`.
    pub w: DMatrix<f64>,
    /// Q on all coordinates (the joint matrix for followers).
    pub q: DMatrix<f64>,
    /// Number of leading urns that precede the subsystem's own urns.
    pub upstream: usize,
}

impl SubsystemMatrices {
    pub fn own_urns(&self) -> &[usize] {
        &self.urns[self.upstream..]
    }

    /// Coordinate dimension of the subsystem's own urns.
    pub fn own_dim(&self) -> usize {
        (self.urns.len() - self.upstream) * self.k
    }

    pub fn upstream_dim(&self) -> usize {
        self.upstream * self.k
    }

    /// Diagonal block of the subsystem's own urns.
    pub fn q_own(&self) -> DMatrix<f64> {
        let o = self.upstream_dim();
        self.q.view((o, o), (self.own_dim(), self.own_dim())).into_owned()
    }

    /// Coupling block from upstream coordinates into the subsystem's own urns.
    pub fn q_cross(&self) -> DMatrix<f64> {
        let o = self.upstream_dim();
        self.q.view((o, 0), (self.own_dim(), o)).into_owned()
    }

    /// The joint matrices of everything upstream.
    pub fn upstream_matrices(&self) -> SubsystemMatrices {
        let o = self.upstream_dim();
        SubsystemMatrices {
            urns: self.urns[..self.upstream].to_vec(),
            k: self.k,
            w: self.w.view((0, 0), (self.upstream, self.upstream)).into_owned(),
            q: self.q.view((0, 0), (o, o)).into_owned(),
            upstream: 0,
        }
    }
}

/// W restricted to the listed urns.
pub fn restrict_w(system: &ValidatedSystem, urns: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(urns.len(), urns.len(), |a, b| system.w[(urns[a], urns[b])])
}

/// Q over the listed urns.
pub fn build_q(system: &ValidatedSystem, urns: &[usize]) -> DMatrix<f64> {
    let k = system.k;
    let s = urns.len();
    let mut q = DMatrix::zeros(s * k, s * k);
    for (a, &j) in urns.iter().enumerate() {
        let h = system.h(j);
        for (b, &g) in urns.iter().enumerate() {
            let w = system.w[(j, g)];
            if w != 0.0 {
                q.view_mut((a * k, b * k), (k, k)).copy_from(&(h * w));
            }
        }
    }
    q
}

/// Q^l of class `l`, which must be a leader.
pub fn build_q_leader(partition: &PartitionResult, system: &ValidatedSystem, l: usize) -> SubsystemMatrices {
    assert_eq!(partition.classes[l].role, Role::Leader, "class {l} is not a leader");
    let urns = partition.classes[l].members.clone();
    SubsystemMatrices {
        w: restrict_w(system, &urns),
        q: build_q(system, &urns),
        k: system.k,
        urns,
        upstream: 0,
    }
}

/// The joint block lower-triangular matrix over every class up to and
/// including follower `l`.
pub fn build_q_joint(partition: &PartitionResult, system: &ValidatedSystem, l: usize) -> SubsystemMatrices {
    assert_eq!(partition.classes[l].role, Role::Follower, "class {l} is not a follower");
    let urns = partition.urns_through(l);
    SubsystemMatrices {
        w: restrict_w(system, &urns),
        q: build_q(system, &urns),
        k: system.k,
        upstream: partition.boundaries[l],
        urns,
    }
}
