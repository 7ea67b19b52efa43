//! Soft routing through a topology.
//!
//! The gating layer emits one logit per edge. Logits belonging to the same
//! decision node are normalised with a softmax, and the resulting edge
//! probabilities are pushed down the DAG: the root holds unit mass and every
//! other node receives `sum over parents m of pi_m * e_m^n`. The masses that
//! reach the leaves are the gating weights of the local regressors.

use crate::bridge_tree::{Topology, TopologySignature, MAX_ENUMERATION_DEPTH};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-edge routing probabilities for one sample, indexed by edge id.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProbabilities<T> {
    signature: TopologySignature,
    values: Vec<T>,
}

impl<T: Scalar> EdgeProbabilities<T> {
    /// Wraps already-normalised probabilities. The caller is responsible for
    /// each group summing to one.
    pub fn from_values(topology: &Topology, values: Vec<T>) -> Result<Self> {
        if values.len() != topology.edge_count() {
            return Err(Error::shape("edge probabilities", topology.edge_count(), values.len()));
        }
        Ok(EdgeProbabilities {
            signature: topology.signature(),
            values,
        })
    }

    /// Every edge set to `1/B`.
    pub fn uniform(topology: &Topology) -> Self {
        let p = T::one() / T::from_count(topology.branching());
        EdgeProbabilities {
            signature: topology.signature(),
            values: vec![p; topology.edge_count()],
        }
    }

    pub fn signature(&self) -> TopologySignature {
        self.signature
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    fn check(&self, topology: &Topology) -> Result<()> {
        if self.signature != topology.signature() || self.values.len() != topology.edge_count() {
            return Err(Error::shape(
                "edge probabilities for topology",
                topology.edge_count(),
                self.values.len(),
            ));
        }
        Ok(())
    }
}

/// Gating weights pi_l, one per leaf in leaf order.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingVector<T>(pub Vec<T>);

impl<T: Scalar> GatingVector<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> T {
        self.0.iter().copied().sum()
    }
}

/// Numerically stable softmax over each group of `B` consecutive logits.
pub fn grouped_softmax<T: Scalar>(logits: &[T], topology: &Topology) -> Result<EdgeProbabilities<T>> {
    if logits.len() != topology.edge_count() {
        return Err(Error::shape("gating logits", topology.edge_count(), logits.len()));
    }
    let mut values = Vec::with_capacity(logits.len());
    for group in logits.chunks(topology.branching()) {
        let max = group.iter().copied().fold(T::neg_infinity(), T::max);
        let start = values.len();
        let mut total = T::zero();
        for &z in group {
            let e = (z - max).exp();
            total = total + e;
            values.push(e);
        }
        for v in &mut values[start..] {
            *v = *v / total;
        }
    }
    Ok(EdgeProbabilities {
        signature: topology.signature(),
        values,
    })
}

/// Routing mass pi_n for every node, indexed by node id.
pub fn node_masses<T: Scalar>(topology: &Topology, probs: &EdgeProbabilities<T>) -> Result<Vec<T>> {
    probs.check(topology)?;
    let mut mass = vec![T::zero(); topology.node_count()];
    mass[0] = T::one();
    // Edges are sorted by parent id and every parent sits on an earlier layer
    // than its children, so a parent's mass is final before it is pushed on.
    for (e, &p) in topology.edges().iter().zip(probs.values()) {
        mass[e.child.0] = mass[e.child.0] + mass[e.parent.0] * p;
    }
    Ok(mass)
}

/// Leaf gating weights computed by the layer-order recursion.
pub fn propagate<T: Scalar>(topology: &Topology, probs: &EdgeProbabilities<T>) -> Result<GatingVector<T>> {
    let mass = node_masses(topology, probs)?;
    Ok(GatingVector(
        topology.leaves().iter().map(|l| mass[l.0]).collect(),
    ))
}

/// Leaf gating weights computed by summing edge products over every explicit
/// root-to-leaf path. Exponential in depth.
pub fn propagate_oracle<T: Scalar>(
    topology: &Topology,
    probs: &EdgeProbabilities<T>,
) -> Result<GatingVector<T>> {
    probs.check(topology)?;
    if topology.depth() > MAX_ENUMERATION_DEPTH {
        return Err(Error::Resource(format!(
            "path enumeration limited to depth {MAX_ENUMERATION_DEPTH}, got {}",
            topology.depth()
        )));
    }
    let mut out = Vec::with_capacity(topology.leaf_count());
    for &leaf in topology.leaves() {
        let total = topology
            .enumerate_paths(leaf)?
            .iter()
            .map(|path| {
                path.edges
                    .iter()
                    .fold(T::one(), |acc, e| acc * probs.values()[e.0])
            })
            .sum();
        out.push(total);
    }
    Ok(GatingVector(out))
}

/// Pulls a gradient on the leaf gating weights back to the gating logits.
///
/// Node adjoints are accumulated in reverse layer order (a bridge node
/// collects from both parents' perspectives through its single adjoint), the
/// adjoint of edge `m -> n` is `pi_m * adj_n`, and each group is then passed
/// through the softmax Jacobian.
pub fn propagate_backward<T: Scalar>(
    topology: &Topology,
    probs: &EdgeProbabilities<T>,
    grad_leaf: &[T],
) -> Result<Vec<T>> {
    if grad_leaf.len() != topology.leaf_count() {
        return Err(Error::shape("leaf gradient", topology.leaf_count(), grad_leaf.len()));
    }
    let mass = node_masses(topology, probs)?;
    let mut adj = vec![T::zero(); topology.node_count()];
    for (&l, &g) in topology.leaves().iter().zip(grad_leaf) {
        adj[l.0] = g;
    }
    let p = probs.values();
    let mut edge_adj = vec![T::zero(); p.len()];
    for (i, e) in topology.edges().iter().enumerate().rev() {
        edge_adj[i] = mass[e.parent.0] * adj[e.child.0];
        adj[e.parent.0] = adj[e.parent.0] + p[i] * adj[e.child.0];
    }

    let b = topology.branching();
    let mut grad = vec![T::zero(); p.len()];
    for ((g_out, g_edge), pr) in grad
        .chunks_mut(b)
        .zip(edge_adj.chunks(b))
        .zip(p.chunks(b))
    {
        let dot: T = g_edge.iter().zip(pr).map(|(&g, &q)| g * q).sum();
        for ((o, &g), &q) in g_out.iter_mut().zip(g_edge).zip(pr) {
            *o = q * (g - dot);
        }
    }
    Ok(grad)
}
