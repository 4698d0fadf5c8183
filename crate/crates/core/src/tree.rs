//! Call-forest reconstruction from a flat pre-order call sequence, and
//! root-to-leaf path enumeration.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::primitives::TxHash;
use crate::trace::CallRecord;

/// Position of a node in [`CallForest::nodes`]; equals the record's position in the input trace.
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallNode {
    pub record: CallRecord,
    pub parent: Option<NodeId>,
    /// Ascending node ids.
    pub children: Vec<NodeId>,
}

/// Arena-backed forest. Every input record is exactly one node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallForest {
    pub nodes: Vec<CallNode>,
    pub roots: Vec<NodeId>,
}

impl CallForest {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &CallNode {
        &self.nodes[id]
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    pub fn out_degree(&self, id: NodeId) -> usize {
        self.nodes[id].children.len()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].children.is_empty()
    }

    pub fn root_of(&self, mut id: NodeId) -> NodeId {
        while let Some(p) = self.nodes[id].parent {
            id = p;
        }
        id
    }

    /// All `(parent, child)` pairs in node order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(p, n)| n.children.iter().map(move |&c| (p, c)))
    }

    /// Pre-order walk of the forest.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<NodeId> = self.roots.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id].children.iter().rev());
        }
        out
    }

    /// Nested `{record, children}` dump.
    pub fn to_json(&self) -> Value {
        Value::Array(self.roots.iter().map(|&r| self.subtree_json(r)).collect())
    }

    fn subtree_json(&self, id: NodeId) -> Value {
        let n = &self.nodes[id];
        json!({
            "record": n.record,
            "children": n.children.iter().map(|&c| self.subtree_json(c)).collect::<Vec<_>>(),
        })
    }
}

/// Stack reconstruction: for each call, pop until the top frame's callee is the
/// call's sender and attach there; with no such frame the call starts a new root.
/// Every call is then pushed.
pub fn build_forest(trace: &[CallRecord]) -> CallForest {
    let mut nodes: Vec<CallNode> = Vec::with_capacity(trace.len());
    let mut roots = Vec::new();
    let mut stack: Vec<NodeId> = Vec::new();
    for (id, rec) in trace.iter().enumerate() {
        while let Some(&top) = stack.last() {
            if nodes[top].record.to == rec.from {
                break;
            }
            stack.pop();
        }
        let parent = stack.last().copied();
        match parent {
            Some(p) => nodes[p].children.push(id),
            None => roots.push(id),
        }
        nodes.push(CallNode {
            record: rec.clone(),
            parent,
            children: Vec::new(),
        });
        stack.push(id);
    }
    CallForest { nodes, roots }
}

/// Root-to-leaf node sequence with the method names of its edges.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExecPath {
    pub nodes: Vec<NodeId>,
    /// `sig[j]` is the method of the call entering `nodes[j + 1]`.
    pub sig: Vec<String>,
}

impl ExecPath {
    pub fn root(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn leaf(&self) -> NodeId {
        *self.nodes.last().expect("paths are nonempty")
    }

    /// Edge count ℓ.
    pub fn len(&self) -> usize {
        self.sig.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sig.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Stable identifier of a path within a dataset: transaction plus leaf record index.
pub fn path_key(tx: &TxHash, leaf_index: usize) -> String {
    format!("{tx}:{leaf_index}")
}

/// All root-to-leaf paths in depth-first order.
pub fn enumerate_paths(forest: &CallForest) -> Vec<ExecPath> {
    let mut out = Vec::new();
    for &root in &forest.roots {
        // (node, depth) with explicit prefix to avoid recursion on deep traces
        let mut prefix: Vec<NodeId> = Vec::new();
        let mut stack = vec![(root, 0usize)];
        while let Some((id, depth)) = stack.pop() {
            prefix.truncate(depth);
            prefix.push(id);
            let children = forest.children(id);
            if children.is_empty() {
                let sig = prefix[1..]
                    .iter()
                    .map(|&n| forest.node(n).record.method.clone())
                    .collect();
                out.push(ExecPath {
                    nodes: prefix.clone(),
                    sig,
                });
            } else {
                stack.extend(children.iter().rev().map(|&c| (c, depth + 1)));
            }
        }
    }
    out
}
