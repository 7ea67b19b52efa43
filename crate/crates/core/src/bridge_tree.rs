//! Bridge-tree topology.
//!
//! A bridge-tree is grown from a B-ary tree one layer at a time. Whenever two
//! nodes sit next to each other on a layer, the rightmost child of the left
//! node and the leftmost child of the right node are merged into a single
//! *bridge node* with two parents. The result is a layered DAG whose leaf
//! order matches the order of the local regressors.
//!
//! Node ids are dense and assigned in (layer, left-to-right) order, so decision
//! nodes occupy `0..decision_count()` and leaves occupy the tail. Edges are
//! stored sorted by (parent, slot); the edge id of slot `s` under decision node
//! `o` is therefore `o * B + s`, which is also the index of the matching
//! gating-layer neuron.
//!
//! Two ablation layouts share the same interface: a plain B-ary tree (no
//! merging) and a flat layout (a single softmax over all leaves).

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

/// Largest depth accepted by the exhaustive path oracle.
pub const MAX_ENUMERATION_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    /// B-ary tree with bridge connections on every layer.
    Bridge,
    /// Plain B-ary tree.
    Tree,
    /// One decision node whose children are all the leaves.
    Flat,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Bridge => "bridge",
            TopologyKind::Tree => "tree",
            TopologyKind::Flat => "flat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub parent: NodeId,
    pub child: NodeId,
    /// Softmax group of the parent (equal to the parent's decision index).
    pub group: usize,
    /// Position within the group, `0..B`.
    pub slot: usize,
}

/// Identity of a topology: enough to rebuild it and to check that edge
/// probabilities were produced for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TopologySignature {
    pub kind: TopologyKind,
    pub branching: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    kind: TopologyKind,
    branching: usize,
    depth: usize,
    layers: Vec<Vec<NodeId>>,
    edges: Vec<Edge>,
    parents: Vec<Vec<NodeId>>,
    children: Vec<Vec<NodeId>>,
    incoming: Vec<Vec<EdgeId>>,
}

/// A root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
}

impl Topology {
    /// Bridge-tree with `branching` children per decision node and `depth`
    /// edge layers.
    pub fn build(branching: usize, depth: usize) -> Result<Self> {
        check_shape(branching, depth)?;
        Ok(grow(TopologyKind::Bridge, branching, depth))
    }

    /// Plain B-ary tree, used as an ablation baseline.
    pub fn build_tree(branching: usize, depth: usize) -> Result<Self> {
        check_shape(branching, depth)?;
        Ok(grow(TopologyKind::Tree, branching, depth))
    }

    /// A single softmax over `leaves` outputs, used as an ablation baseline.
    pub fn build_flat(leaves: usize) -> Result<Self> {
        if leaves < 2 {
            return Err(Error::ParameterDomain(format!(
                "flat gating needs at least 2 leaves, got {leaves}"
            )));
        }
        Ok(grow(TopologyKind::Flat, leaves, 1))
    }

    pub fn from_signature(sig: TopologySignature) -> Result<Self> {
        match sig.kind {
            TopologyKind::Bridge => Self::build(sig.branching, sig.depth),
            TopologyKind::Tree => Self::build_tree(sig.branching, sig.depth),
            TopologyKind::Flat if sig.depth == 1 => Self::build_flat(sig.branching),
            TopologyKind::Flat => Err(Error::ParameterDomain(format!(
                "flat topology has depth 1, got {}",
                sig.depth
            ))),
        }
    }

    /// Assembles a topology from raw layers and edges without checking any
    /// invariant. Parent and child sets are derived from `edges`. Use
    /// [`validate`] to inspect the result.
    pub fn from_parts(
        kind: TopologyKind,
        branching: usize,
        depth: usize,
        layers: Vec<Vec<NodeId>>,
        edges: Vec<Edge>,
    ) -> Self {
        let n_nodes = layers
            .iter()
            .flatten()
            .chain(edges.iter().flat_map(|e| [&e.parent, &e.child]))
            .map(|n| n.0 + 1)
            .max()
            .unwrap_or(0);
        let mut parents = vec![Vec::new(); n_nodes];
        let mut children = vec![Vec::new(); n_nodes];
        let mut incoming = vec![Vec::new(); n_nodes];
        for (id, e) in edges.iter().enumerate() {
            children[e.parent.0].push(e.child);
            parents[e.child.0].push(e.parent);
            incoming[e.child.0].push(EdgeId(id));
        }
        Topology {
            kind,
            branching,
            depth,
            layers,
            edges,
            parents,
            children,
            incoming,
        }
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn signature(&self) -> TopologySignature {
        TopologySignature {
            kind: self.kind,
            branching: self.branching,
            depth: self.depth,
        }
    }

    pub fn layers(&self) -> &[Vec<NodeId>] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0]
    }

    pub fn node_count(&self) -> usize {
        self.parents.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn leaves(&self) -> &[NodeId] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn decision_count(&self) -> usize {
        self.layers[..self.layers.len().saturating_sub(1)]
            .iter()
            .map(Vec::len)
            .sum()
    }

    /// Parent set F_n, ordered by id.
    pub fn parents(&self, node: NodeId) -> Result<&[NodeId]> {
        self.parents
            .get(node.0)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownNode(node))
    }

    /// Child sequence C_n in slot order; empty for leaves.
    pub fn children(&self, node: NodeId) -> Result<&[NodeId]> {
        self.children
            .get(node.0)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownNode(node))
    }

    pub fn incoming(&self, node: NodeId) -> &[EdgeId] {
        &self.incoming[node.0]
    }

    /// Position of `node` within the leaf layer.
    pub fn leaf_index(&self, node: NodeId) -> Result<usize> {
        if node.0 >= self.node_count() {
            return Err(Error::UnknownNode(node));
        }
        self.leaves()
            .iter()
            .position(|&l| l == node)
            .ok_or(Error::NotALeaf(node))
    }

    pub fn leaf(&self, index: usize) -> Result<NodeId> {
        self.leaves()
            .get(index)
            .copied()
            .ok_or_else(|| Error::ParameterDomain(format!("leaf index {index} out of range")))
    }

    /// Every directed root-to-leaf path ending at `leaf`, ordered
    /// lexicographically by node ids.
    pub fn enumerate_paths(&self, leaf: NodeId) -> Result<Vec<Path>> {
        self.leaf_index(leaf)?;
        let mut out = Vec::new();
        let mut rev_nodes = vec![leaf];
        let mut rev_edges = Vec::new();
        self.walk_up(leaf, &mut rev_nodes, &mut rev_edges, &mut out);
        out.sort();
        Ok(out)
    }

    fn walk_up(
        &self,
        node: NodeId,
        rev_nodes: &mut Vec<NodeId>,
        rev_edges: &mut Vec<EdgeId>,
        out: &mut Vec<Path>,
    ) {
        if self.incoming[node.0].is_empty() {
            out.push(Path {
                nodes: rev_nodes.iter().rev().copied().collect(),
                edges: rev_edges.iter().rev().copied().collect(),
            });
            return;
        }
        for &eid in &self.incoming[node.0] {
            let parent = self.edges[eid.0].parent;
            rev_nodes.push(parent);
            rev_edges.push(eid);
            self.walk_up(parent, rev_nodes, rev_edges, out);
            rev_nodes.pop();
            rev_edges.pop();
        }
    }

    /// Number of root-to-node paths for every node, by dynamic programming
    /// over the layer order.
    pub fn path_counts(&self) -> Vec<u128> {
        let mut counts = vec![0u128; self.node_count()];
        if let Some(root) = self.layers.first().and_then(|l| l.first()) {
            counts[root.0] = 1;
        }
        for e in &self.edges {
            counts[e.child.0] += counts[e.parent.0];
        }
        counts
    }
}

fn check_shape(branching: usize, depth: usize) -> Result<()> {
    if branching < 2 {
        return Err(Error::ParameterDomain(format!(
            "branching must be at least 2, got {branching}"
        )));
    }
    if depth < 1 {
        return Err(Error::ParameterDomain(format!(
            "depth must be at least 1, got {depth}"
        )));
    }
    Ok(())
}

fn grow(kind: TopologyKind, branching: usize, depth: usize) -> Topology {
    let merge = kind == TopologyKind::Bridge;
    let mut layers = vec![vec![NodeId(0)]];
    let mut edges = Vec::new();
    let mut next = 1;
    for k in 0..depth {
        let mut layer: Vec<NodeId> = Vec::new();
        for (i, &parent) in layers[k].iter().enumerate() {
            for slot in 0..branching {
                let child = if merge && i > 0 && slot == 0 {
                    // Leftmost child of this node is the rightmost child of
                    // its left neighbour.
                    *layer.last().expect("left neighbour has children")
                } else {
                    let id = NodeId(next);
                    next += 1;
                    layer.push(id);
                    id
                };
                edges.push(Edge {
                    parent,
                    child,
                    group: parent.0,
                    slot,
                });
            }
        }
        layers.push(layer);
    }
    Topology::from_parts(kind, branching, depth, layers, edges)
}

/// Layer sizes implied by the construction rule, without building anything.
pub fn expected_layer_sizes(kind: TopologyKind, branching: usize, depth: usize) -> Vec<usize> {
    let mut sizes = vec![1usize];
    for k in 0..depth {
        let n = sizes[k];
        sizes.push(match kind {
            TopologyKind::Bridge => (branching - 1) * n + 1,
            TopologyKind::Tree | TopologyKind::Flat => branching * n,
        });
    }
    sizes
}

/// First broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("expected {expected} node-layers, found {found}")]
    LayerCount { expected: usize, found: usize },
    #[error("layer {layer} has {found} nodes, recurrence requires {expected}")]
    LayerSize {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("node ids are not dense in layer order: expected {expected}, found {found}")]
    NodeOrder { expected: NodeId, found: NodeId },
    #[error("decision node {node} has {found} children, expected {expected}")]
    ChildCount {
        node: NodeId,
        expected: usize,
        found: usize,
    },
    #[error("decision node {node} uses slot {slot} more than once")]
    DuplicateSlot { node: NodeId, slot: usize },
    #[error("edge {edge} is malformed: {reason}")]
    MalformedEdge { edge: EdgeId, reason: &'static str },
    #[error("leaf {node} has outgoing edges")]
    LeafWithChildren { node: NodeId },
    #[error("child {slot} of {node} should be {expected}, found {found}")]
    WrongChild {
        node: NodeId,
        slot: usize,
        expected: NodeId,
        found: NodeId,
    },
    #[error("node {node} has {found} parents, expected {expected}")]
    ParentCount {
        node: NodeId,
        expected: usize,
        found: usize,
    },
    #[error("node {node} is unreachable from the root")]
    Unreachable { node: NodeId },
}

/// Checks every structural invariant of `topology`, returning the first
/// violation.
pub fn validate(topology: &Topology) -> Result<(), Violation> {
    let b = topology.branching;
    let d = topology.depth;
    let layers = &topology.layers;

    if layers.len() != d + 1 {
        return Err(Violation::LayerCount {
            expected: d + 1,
            found: layers.len(),
        });
    }
    let expected_sizes = expected_layer_sizes(topology.kind, b, d);
    for (k, (layer, &want)) in layers.iter().zip(&expected_sizes).enumerate() {
        if layer.len() != want {
            return Err(Violation::LayerSize {
                layer: k,
                expected: want,
                found: layer.len(),
            });
        }
    }

    let mut layer_of = vec![usize::MAX; topology.node_count()];
    let mut expect = 0;
    for (k, layer) in layers.iter().enumerate() {
        for &n in layer {
            if n.0 != expect {
                return Err(Violation::NodeOrder {
                    expected: NodeId(expect),
                    found: n,
                });
            }
            layer_of[n.0] = k;
            expect += 1;
        }
    }
    if topology.node_count() != expect {
        return Err(Violation::NodeOrder {
            expected: NodeId(expect),
            found: NodeId(topology.node_count() - 1),
        });
    }

    for (i, e) in topology.edges.iter().enumerate() {
        let id = EdgeId(i);
        if e.parent.0 >= expect || e.child.0 >= expect {
            return Err(Violation::MalformedEdge {
                edge: id,
                reason: "endpoint outside the node set",
            });
        }
        if layer_of[e.child.0] != layer_of[e.parent.0] + 1 {
            return Err(Violation::MalformedEdge {
                edge: id,
                reason: "does not connect consecutive layers",
            });
        }
        if e.group != e.parent.0 || e.slot >= b {
            return Err(Violation::MalformedEdge {
                edge: id,
                reason: "group or slot out of place",
            });
        }
        if i != e.parent.0 * b + e.slot {
            return Err(Violation::MalformedEdge {
                edge: id,
                reason: "edges not ordered by (parent, slot)",
            });
        }
    }

    let step = match topology.kind {
        TopologyKind::Bridge => b - 1,
        TopologyKind::Tree | TopologyKind::Flat => b,
    };
    let mut seen = vec![false; expect * b];
    for e in &topology.edges {
        let flag = &mut seen[e.parent.0 * b + e.slot];
        if *flag {
            return Err(Violation::DuplicateSlot {
                node: e.parent,
                slot: e.slot,
            });
        }
        *flag = true;
    }
    for k in 0..d {
        for (i, &node) in layers[k].iter().enumerate() {
            let kids = &topology.children[node.0];
            if kids.len() != b {
                return Err(Violation::ChildCount {
                    node,
                    expected: b,
                    found: kids.len(),
                });
            }
            for (slot, &found) in kids.iter().enumerate() {
                let expected = layers[k + 1][i * step + slot];
                if found != expected {
                    return Err(Violation::WrongChild {
                        node,
                        slot,
                        expected,
                        found,
                    });
                }
            }
        }
    }
    for &leaf in &layers[d] {
        if !topology.children[leaf.0].is_empty() {
            return Err(Violation::LeafWithChildren { node: leaf });
        }
    }

    // Parent-set sizes: 2 exactly at merge points, 1 elsewhere below the root.
    for k in 1..=d {
        let n_prev = layers[k - 1].len();
        for (j, &node) in layers[k].iter().enumerate() {
            // parents i satisfy i*step <= j < i*step + b
            let lo = (j + 1).saturating_sub(b).div_ceil(step);
            let hi = (j / step).min(n_prev - 1);
            let expected = (hi + 1).saturating_sub(lo);
            let found = topology.parents[node.0].len();
            if found != expected {
                return Err(Violation::ParentCount {
                    node,
                    expected,
                    found,
                });
            }
        }
    }
    if !topology.parents[0].is_empty() {
        return Err(Violation::ParentCount {
            node: NodeId(0),
            expected: 0,
            found: topology.parents[0].len(),
        });
    }

    let mut reached = vec![false; topology.node_count()];
    let mut queue = VecDeque::from([NodeId(0)]);
    reached[0] = true;
    while let Some(n) = queue.pop_front() {
        for &c in &topology.children[n.0] {
            if !reached[c.0] {
                reached[c.0] = true;
                queue.push_back(c);
            }
        }
    }
    if let Some(i) = reached.iter().position(|r| !r) {
        return Err(Violation::Unreachable { node: NodeId(i) });
    }
    Ok(())
}
