//! Communicating classes of the interaction matrix and the leader/follower
//! block ordering.
//!
//! The digraph has an edge j -> h whenever `w[j][h] > 0` (exact comparison).
//! A class with no edge leaving it is a leader; every other class is a
//! follower whose sampling depends on some earlier class.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Leader,
    Follower,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Class {
    /// Original urn indices, ascending.
    pub members: Vec<usize>,
    pub role: Role,
    /// 1-based position among classes of the same role, as in "L1", "F2".
    pub rank: usize,
    /// Spectral radius of the diagonal block of W on this class.
    pub lambda_max: f64,
}

impl Class {
    pub fn label(&self) -> String {
        match self.role {
            Role::Leader => format!("L{}", self.rank),
            Role::Follower => format!("F{}", self.rank),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionResult {
    /// Classes in block order: all leaders, then followers in dependency order.
    pub classes: Vec<Class>,
    /// `permutation[p]` is the original index of the urn placed at position p.
    pub permutation: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Cumulative sizes: class l occupies positions `boundaries[l]..boundaries[l + 1]`.
    pub boundaries: Vec<usize>,
    /// (from, to) pairs of class positions: class `from` samples from class `to`.
    pub edges: Vec<(usize, usize)>,
    pub n_leaders: usize,
}

impl PartitionResult {
    pub fn n_followers(&self) -> usize {
        self.classes.len() - self.n_leaders
    }

    /// W with rows and columns reordered by the permutation.
    pub fn permuted(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let p = &self.permutation;
        DMatrix::from_fn(p.len(), p.len(), |i, j| w[(p[i], p[j])])
    }

    /// Original urn indices of classes `0..=l`, in block order.
    pub fn urns_through(&self, l: usize) -> Vec<usize> {
        self.permutation[..self.boundaries[l + 1]].to_vec()
    }
}

/// Strongly connected components (Tarjan), each sorted ascending, listed by
/// smallest member.
pub fn communicating_classes(w: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = w.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|j| (0..n).filter(|&h| w[(j, h)] > 0.0).collect())
        .collect();

    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next = 0;
    let mut classes = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        // Explicit call stack of (vertex, next neighbour position).
        let mut frames = vec![(root, 0usize)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = frames.last_mut() {
            if let Some(&h) = adj[v].get(*pos) {
                *pos += 1;
                if index[h] == UNSEEN {
                    index[h] = next;
                    low[h] = next;
                    next += 1;
                    stack.push(h);
                    on_stack[h] = true;
                    frames.push((h, 0));
                } else if on_stack[h] {
                    low[v] = low[v].min(index[h]);
                }
                continue;
            }
            frames.pop();
            if let Some(&(parent, _)) = frames.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut class = Vec::new();
                loop {
                    let x = stack.pop().expect("vertex on stack");
                    on_stack[x] = false;
                    class.push(x);
                    if x == v {
                        break;
                    }
                }
                class.sort_unstable();
                classes.push(class);
            }
        }
    }
    classes.sort_by_key(|c| c[0]);
    classes
}

/// Labels classes and orders them: leaders by smallest member, then followers
/// topologically with ties broken by smallest member.
pub fn classify_and_order(classes: &[Vec<usize>], w: &DMatrix<f64>) -> Result<PartitionResult> {
    let n = w.nrows();
    let mut class_of = vec![usize::MAX; n];
    for (c, members) in classes.iter().enumerate() {
        for &j in members {
            class_of[j] = c;
        }
    }
    if class_of.iter().any(|&c| c == usize::MAX) {
        return Err(Error::InternalInvariantViolation("classes do not cover every urn".into()));
    }

    // Class-level dependency targets (excluding self).
    let mut targets: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for j in 0..n {
        for h in 0..n {
            let (a, b) = (class_of[j], class_of[h]);
            if w[(j, h)] > 0.0 && a != b && !targets[a].contains(&b) {
                targets[a].push(b);
            }
        }
    }
    let leaders: Vec<usize> = (0..classes.len()).filter(|&c| targets[c].is_empty()).collect();
    if leaders.is_empty() {
        return Err(Error::InternalInvariantViolation("no closed class found".into()));
    }

    // Kahn's algorithm over followers; a follower becomes ready once every
    // class it samples from has been placed.
    let mut order = leaders.clone();
    let mut placed = vec![false; classes.len()];
    leaders.iter().for_each(|&c| placed[c] = true);
    let mut waiting: Vec<usize> = (0..classes.len())
        .map(|c| targets[c].iter().filter(|&&t| !placed[t]).count())
        .collect();
    let mut ready: BinaryHeap<Reverse<(usize, usize)>> = (0..classes.len())
        .filter(|&c| !placed[c] && waiting[c] == 0)
        .map(|c| Reverse((classes[c][0], c)))
        .collect();
    while let Some(Reverse((_, c))) = ready.pop() {
        placed[c] = true;
        order.push(c);
        for d in 0..classes.len() {
            if !placed[d] && targets[d].contains(&c) {
                waiting[d] -= 1;
                if waiting[d] == 0 {
                    ready.push(Reverse((classes[d][0], d)));
                }
            }
        }
    }
    if order.len() != classes.len() {
        return Err(Error::InternalInvariantViolation("class dependency graph has a cycle".into()));
    }

    let mut position = vec![0; classes.len()];
    for (p, &c) in order.iter().enumerate() {
        position[c] = p;
    }
    let mut permutation = Vec::with_capacity(n);
    let mut sizes = Vec::new();
    let mut boundaries = vec![0];
    let mut out = Vec::new();
    for (p, &c) in order.iter().enumerate() {
        let members = classes[c].clone();
        permutation.extend_from_slice(&members);
        sizes.push(members.len());
        boundaries.push(permutation.len());
        let block = DMatrix::from_fn(members.len(), members.len(), |a, b| w[(members[a], members[b])]);
        let lambda_max = linalg::eigenvalues(&block)?
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let leader = p < leaders.len();
        let consistent = if leader { (lambda_max - 1.0).abs() <= 1e-9 } else { lambda_max < 1.0 - 1e-9 };
        if !consistent {
            return Err(Error::InternalInvariantViolation(format!(
                "class {members:?} has spectral radius {lambda_max} inconsistent with its role"
            )));
        }
        out.push(Class {
            members,
            role: if leader { Role::Leader } else { Role::Follower },
            rank: if leader { p + 1 } else { p + 1 - leaders.len() },
            lambda_max,
        });
    }
    let mut edges: Vec<(usize, usize)> = order
        .iter()
        .flat_map(|&c| targets[c].iter().map(move |&t| (c, t)))
        .map(|(c, t)| (position[c], position[t]))
        .collect();
    edges.sort_unstable();

    Ok(PartitionResult { classes: out, permutation, sizes, boundaries, edges, n_leaders: leaders.len() })
}

/// Convenience wrapper: classes, roles and ordering in one call.
pub fn partition(w: &DMatrix<f64>) -> Result<PartitionResult> {
    classify_and_order(&communicating_classes(w), w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_w(alpha: f64, beta: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[alpha, 1.0 - alpha, 1.0 - beta, beta])
    }

    #[test]
    fn irreducible_pair_is_one_leader() {
        let p = partition(&example_w(0.8, 0.8)).unwrap();
        assert_eq!(p.classes.len(), 1);
        assert_eq!(p.n_leaders, 1);
        assert_eq!(p.boundaries, vec![0, 2]);
    }

    #[test]
    fn identity_gives_singleton_leaders() {
        let p = partition(&DMatrix::identity(4, 4)).unwrap();
        assert_eq!(p.n_leaders, 4);
        assert_eq!(p.n_followers(), 0);
        assert_eq!(p.permutation, vec![0, 1, 2, 3]);
    }

    #[test]
    fn leader_then_follower() {
        let p = partition(&example_w(1.0, 0.5)).unwrap();
        assert_eq!(p.classes[0].members, vec![0]);
        assert_eq!(p.classes[0].label(), "L1");
        assert_eq!(p.classes[1].members, vec![1]);
        assert_eq!(p.classes[1].label(), "F1");
        assert_eq!(p.edges, vec![(1, 0)]);
    }

    #[test]
    fn followers_ordered_after_their_sources() {
        // 0 follows 1, 1 follows 2, 2 is closed.
        let w = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 1.0]);
        let p = partition(&w).unwrap();
        assert_eq!(p.permutation, vec![2, 1, 0]);
        let pw = p.permuted(&w);
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert_eq!(pw[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn repartition_is_fixed_point() {
        let w = DMatrix::from_row_slice(
            4,
            4,
            &[0.2, 0.0, 0.8, 0.0, 0.0, 0.5, 0.0, 0.5, 0.6, 0.0, 0.4, 0.0, 0.1, 0.0, 0.0, 0.9],
        );
        let p = partition(&w).unwrap();
        let pw = p.permuted(&w);
        let q = partition(&pw).unwrap();
        assert_eq!(q.permutation, (0..4).collect::<Vec<_>>());
        assert_eq!(q.sizes, p.sizes);
    }
}
