use std::collections::{BTreeSet, VecDeque};

use super::{NetError, NodeId};
use crate::sharding::{ShardAssignment, ShardTree};

#[derive(Clone, Debug)]
struct TreeNode {
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    assignment: ShardAssignment,
}

/// A binary tree of nodes. New nodes join as leaves; each child's shard
/// prefix extends its parent's by one bit (left `0`, right `1`).
///
/// Besides tree links every node keeps up to `n` extra neighbors: the
/// closest nodes by tree distance that are not already its parent or
/// children (ties broken by lower id). The relation is then made symmetric.
#[derive(Clone, Debug)]
pub struct TreeTopology {
    nodes: Vec<TreeNode>,
    neighbor_count: usize,
    neighbors: Vec<BTreeSet<NodeId>>,
}

impl TreeTopology {
    pub fn new(neighbor_count: usize) -> Self {
        TreeTopology {
            nodes: vec![TreeNode {
                parent: None,
                children: Vec::new(),
                assignment: ShardAssignment::FULL,
            }],
            neighbor_count,
            neighbors: vec![BTreeSet::new()],
        }
    }

    /// A complete binary tree of `count` nodes built by breadth-first joins.
    pub fn complete(count: usize, neighbor_count: usize) -> Self {
        let mut tree = Self::new(neighbor_count);
        for i in 1..count {
            tree.join_unchecked(NodeId(((i - 1) / 2) as u64));
        }
        tree.recompute_neighbors();
        tree
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u64).map(NodeId)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        (id.0 as usize) < self.nodes.len()
    }

    pub fn neighbor_count(&self) -> usize {
        self.neighbor_count
    }

    fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.0 as usize]
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.node(id).parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.node(id).children
    }

    pub fn assignment(&self, id: NodeId) -> ShardAssignment {
        self.node(id).assignment
    }

    pub fn neighbors(&self, id: NodeId) -> &BTreeSet<NodeId> {
        &self.neighbors[id.0 as usize]
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.assignment(id).depth()
    }

    /// Appends a leaf under `parent` and recomputes neighbor sets.
    pub fn join(&mut self, parent: NodeId) -> Result<(NodeId, ShardAssignment), NetError> {
        if !self.contains(parent) {
            return Err(NetError::UnknownParent(parent));
        }
        if self.children(parent).len() >= 2 {
            return Err(NetError::ParentFull(parent));
        }
        let id = self.join_unchecked(parent);
        self.recompute_neighbors();
        Ok((id, self.assignment(id)))
    }

    fn join_unchecked(&mut self, parent: NodeId) -> NodeId {
        let id = NodeId(self.nodes.len() as u64);
        let bit = !self.children(parent).is_empty();
        let assignment = self
            .assignment(parent)
            .push(bit)
            .expect("tree depth stays far below 160");
        self.nodes[parent.0 as usize].children.push(id);
        self.nodes.push(TreeNode {
            parent: Some(parent),
            children: Vec::new(),
            assignment,
        });
        self.neighbors.push(BTreeSet::new());
        id
    }

    /// Parent and children of `id`.
    pub fn tree_links(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.parent(id)
            .into_iter()
            .chain(self.children(id).iter().copied())
    }

    /// Hop distances from `from` over tree links only.
    pub fn tree_distances(&self, from: NodeId) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[from.0 as usize] = 0;
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            let d = dist[n.0 as usize];
            for m in self.tree_links(n) {
                if dist[m.0 as usize] == usize::MAX {
                    dist[m.0 as usize] = d + 1;
                    queue.push_back(m);
                }
            }
        }
        dist
    }

    fn recompute_neighbors(&mut self) {
        let n = self.nodes.len();
        let mut sets = vec![BTreeSet::new(); n];
        for (i, set) in sets.iter_mut().enumerate() {
            let dist = self.tree_distances(NodeId(i as u64));
            let mut candidates: Vec<(usize, NodeId)> = dist
                .iter()
                .enumerate()
                .filter(|(_, d)| **d >= 2 && **d != usize::MAX)
                .map(|(j, d)| (*d, NodeId(j as u64)))
                .collect();
            candidates.sort();
            set.extend(candidates.into_iter().take(self.neighbor_count).map(|(_, id)| id));
        }
        for i in 0..n {
            let mine: Vec<NodeId> = sets[i].iter().copied().collect();
            for j in mine {
                sets[j.0 as usize].insert(NodeId(i as u64));
            }
        }
        self.neighbors = sets;
    }

    /// Every node `id` forwards to: tree links first, then neighbors.
    pub fn links(&self, id: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.tree_links(id).collect();
        out.extend(self.neighbors(id).iter().copied());
        out
    }
}

impl ShardTree for TreeTopology {
    type Id = NodeId;

    fn root(&self) -> NodeId {
        NodeId(0)
    }

    fn assignment(&self, node: NodeId) -> ShardAssignment {
        TreeTopology::assignment(self, node)
    }

    fn children(&self, node: NodeId) -> Vec<NodeId> {
        TreeTopology::children(self, node).to_vec()
    }
}
