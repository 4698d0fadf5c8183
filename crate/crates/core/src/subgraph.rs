//! k-hop enclosing subgraphs around execution paths.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::trace::CallRecord;
use crate::tree::{CallForest, ExecPath, NodeId};

pub const DEFAULT_K: usize = 1;

/// Graph view exposing directed neighbors; closure treats both directions alike.
pub trait DirectedNeighbors {
    fn predecessors(&self, v: NodeId) -> Vec<NodeId>;
    fn successors(&self, v: NodeId) -> Vec<NodeId>;

    fn neighbors(&self, v: NodeId) -> BTreeSet<NodeId> {
        self.predecessors(v).into_iter().chain(self.successors(v)).collect()
    }
}

impl DirectedNeighbors for CallForest {
    fn predecessors(&self, v: NodeId) -> Vec<NodeId> {
        self.parent(v).into_iter().collect()
    }

    fn successors(&self, v: NodeId) -> Vec<NodeId> {
        self.children(v).to_vec()
    }
}

/// `C_0` is the path's node set; each step adds every neighbor of the current set.
pub fn k_hop_closure<G: DirectedNeighbors + ?Sized>(graph: &G, path: &ExecPath, k: usize) -> BTreeSet<NodeId> {
    let mut closure: BTreeSet<NodeId> = path.nodes.iter().copied().collect();
    let mut frontier = closure.clone();
    for _ in 0..k {
        let mut next = BTreeSet::new();
        for &v in &frontier {
            next.extend(graph.neighbors(v).into_iter().filter(|u| !closure.contains(u)));
        }
        if next.is_empty() {
            break;
        }
        closure.extend(next.iter().copied());
        frontier = next;
    }
    closure
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubgraphError {
    #[error("path node {0} is not in the forest")]
    UnknownNode(NodeId),
    #[error("path step {0}->{1} is not a forest edge")]
    NotAnEdge(NodeId, NodeId),
    #[error("path does not start at a root or does not end at a leaf")]
    NotRootToLeaf,
    #[error("path signature does not match the forest")]
    SignatureMismatch,
}

/// Induced subgraph on a closure. Nodes are ordered by record index and
/// edges are `[parent_index, child_index]` in record indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnclosingSubgraph {
    pub center_path: String,
    pub k: usize,
    pub nodes: Vec<CallRecord>,
    pub edges: Vec<[usize; 2]>,
}

fn check_path(forest: &CallForest, path: &ExecPath) -> Result<(), SubgraphError> {
    if let Some(&bad) = path.nodes.iter().find(|&&n| n >= forest.len()) {
        return Err(SubgraphError::UnknownNode(bad));
    }
    let (Some(&first), Some(&last)) = (path.nodes.first(), path.nodes.last()) else {
        return Err(SubgraphError::NotRootToLeaf);
    };
    if forest.parent(first).is_some() || !forest.is_leaf(last) {
        return Err(SubgraphError::NotRootToLeaf);
    }
    for (p, c) in path.edges() {
        if forest.parent(c) != Some(p) {
            return Err(SubgraphError::NotAnEdge(p, c));
        }
    }
    let sig_ok = path.sig.len() + 1 == path.nodes.len()
        && path.nodes[1..]
            .iter()
            .zip(&path.sig)
            .all(|(&n, m)| forest.node(n).record.method == *m);
    if !sig_ok {
        return Err(SubgraphError::SignatureMismatch);
    }
    Ok(())
}

/// `S_k(P)`: all forest edges with both endpoints in the k-hop closure.
pub fn extract_subgraph(
    forest: &CallForest,
    path: &ExecPath,
    k: usize,
    center_path: impl Into<String>,
) -> Result<EnclosingSubgraph, SubgraphError> {
    check_path(forest, path)?;
    let closure = k_hop_closure(forest, path, k);
    let edges = closure
        .iter()
        .filter_map(|&c| forest.parent(c).filter(|p| closure.contains(p)).map(|p| (p, c)))
        .map(|(p, c)| [forest.node(p).record.index, forest.node(c).record.index])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(EnclosingSubgraph {
        center_path: center_path.into(),
        k,
        nodes: closure.iter().map(|&n| forest.node(n).record.clone()).collect(),
        edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    /// Bytes of the compact JSON serialization.
    pub serialized_size: usize,
}

pub fn subgraph_stats(sg: &EnclosingSubgraph) -> SubgraphStats {
    SubgraphStats {
        node_count: sg.nodes.len(),
        edge_count: sg.edges.len(),
        serialized_size: serde_json::to_vec(sg).expect("subgraph serializes").len(),
    }
}
