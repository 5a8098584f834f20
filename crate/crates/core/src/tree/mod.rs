//! Encoding trees and structural entropy.
//!
//! An encoding tree is a rooted hierarchy of nested vertex communities: the
//! root holds every vertex, each leaf holds exactly one, and every internal
//! node's children partition it. Each non-root node is charged
//! `-(g/V) * log2(vol/parent_vol)` bits, the uncertainty of a random walk
//! descending from the parent community into this one; the tree entropy is
//! the sum over non-root nodes. Height-bounded greedy minimization lives in
//! [`optimize`].

mod optimize;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};
use crate::graph::{BipartiteGraph, PostIdx, Subgraph, VertexId};

pub type NodeId = usize;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Sorted vertex ids covered by this node.
    pub vertices: Vec<VertexId>,
    pub volume: f64,
    pub cut: f64,
}

#[derive(Debug, Clone)]
pub struct EncodingTree {
    nodes: Vec<TreeNode>,
    root: NodeId,
    /// Leaf node of each vertex.
    leaf_of: Vec<NodeId>,
    height: usize,
    total_volume: f64,
}

/// One entropy term: `-(cut/total) * log2(vol/parent_vol)`, zero when the cut
/// is empty. `vol > 0` whenever `cut > 0` since every cut edge contributes to
/// the inside endpoint's degree.
fn entropy_term(cut: f64, vol: f64, parent_vol: f64, total: f64) -> f64 {
    if cut <= 0.0 || vol <= 0.0 {
        0.0
    } else {
        -(cut / total) * (vol / parent_vol).log2()
    }
}

impl EncodingTree {
    /// Canonical single-layer tree: every vertex is a leaf child of the root.
    pub fn single_layer(g: &BipartiteGraph) -> Self {
        let n = g.n_vertices();
        let total = g.total_volume();
        let mut nodes = Vec::with_capacity(n + 1);
        nodes.push(TreeNode {
            parent: None,
            children: (1..=n).collect(),
            vertices: (0..n as VertexId).collect(),
            volume: total,
            cut: 0.0,
        });
        let mut leaf_of = Vec::with_capacity(n);
        for v in 0..n as VertexId {
            let d = g.degree(v).expect("vertex in range");
            leaf_of.push(nodes.len());
            nodes.push(TreeNode {
                parent: Some(0),
                children: Vec::new(),
                vertices: vec![v],
                volume: d,
                cut: d,
            });
        }
        EncodingTree { nodes, root: 0, leaf_of, height: 1, total_volume: total }
    }

    /// Greedy height-bounded entropy minimization; see [`optimize`] for the
    /// operator set. Requires `k >= 2` and at least one edge.
    pub fn optimize(g: &BipartiteGraph, k: usize, tolerance: f64) -> Result<Self> {
        if k < 2 {
            return Err(SealError::BadHeight(k));
        }
        if g.total_volume() <= 0.0 {
            return Err(SealError::EmptyGraph);
        }
        optimize::optimize(g, k, tolerance)
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_of(&self, v: VertexId) -> NodeId {
        self.leaf_of[v as usize]
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].children.is_empty()
    }

    pub fn depth(&self, mut id: NodeId) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[id].parent {
            id = p;
            d += 1;
        }
        d
    }

    /// Nodes from the root down to `id`, inclusive.
    pub fn path_from_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Eq-4 entropy of a non-root node, in bits.
    pub fn node_entropy(&self, id: NodeId) -> Result<f64> {
        let node = &self.nodes[id];
        let parent = node.parent.ok_or(SealError::RootEntropy)?;
        if self.total_volume <= 0.0 {
            return Err(SealError::EmptyGraph);
        }
        Ok(entropy_term(
            node.cut,
            node.volume,
            self.nodes[parent].volume,
            self.total_volume,
        ))
    }

    /// Eq-5 tree entropy: sum of node entropies over all non-root nodes.
    pub fn tree_entropy(&self) -> Result<f64> {
        if self.total_volume <= 0.0 {
            return Err(SealError::EmptyGraph);
        }
        let mut sum = 0.0;
        for id in 0..self.nodes.len() {
            if self.nodes[id].parent.is_some() {
                sum += self.node_entropy(id)?;
            }
        }
        Ok(sum)
    }

    /// Recomputes volumes and cuts from the graph and checks the partition
    /// invariants. Used by tests and after optimizer mutations.
    pub fn validate(&self, g: &BipartiteGraph) -> Result<()> {
        let n = g.n_vertices();
        if self.nodes[self.root].vertices.len() != n {
            return Err(SealError::Config("root does not cover all vertices".into()));
        }
        let mut seen = vec![false; n];
        for (id, node) in self.nodes.iter().enumerate() {
            if node.children.is_empty() {
                if node.vertices.len() != 1 {
                    return Err(SealError::Config(format!("leaf {id} is not a singleton")));
                }
                if seen[node.vertices[0] as usize] {
                    return Err(SealError::Config("vertex in two leaves".into()));
                }
                seen[node.vertices[0] as usize] = true;
            } else {
                let mut union: Vec<VertexId> = Vec::new();
                for &c in &node.children {
                    if self.nodes[c].parent != Some(id) {
                        return Err(SealError::Config("child/parent mismatch".into()));
                    }
                    union.extend_from_slice(&self.nodes[c].vertices);
                }
                union.sort_unstable();
                let mut expect = node.vertices.clone();
                expect.sort_unstable();
                if union != expect {
                    return Err(SealError::Config(format!(
                        "children of {id} do not partition it"
                    )));
                }
            }
            let vol = g.volume(&node.vertices)?;
            let cut = g.cut(&node.vertices)?;
            if (vol - node.volume).abs() > 1e-9 * (1.0 + vol.abs())
                || (cut - node.cut).abs() > 1e-9 * (1.0 + cut.abs())
            {
                return Err(SealError::Config(format!(
                    "cached stats of node {id} diverge: vol {} vs {vol}, cut {} vs {cut}",
                    node.volume, node.cut
                )));
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(SealError::Config("a vertex is missing from the leaves".into()));
        }
        let max_depth = (0..self.nodes.len())
            .filter(|&i| self.is_leaf(i))
            .map(|i| self.depth(i))
            .max()
            .unwrap_or(0);
        if max_depth != self.height {
            return Err(SealError::Config(format!(
                "height {} does not match max leaf depth {max_depth}",
                self.height
            )));
        }
        Ok(())
    }

    /// Community posts for `target_post` at extraction level `k` (`k < K`),
    /// counted so that `k = K - 1` selects the immediate root children. The
    /// ancestor is taken at depth `K - k` along the target's path, clamped to
    /// the leaf for shallow branches.
    pub fn extract_subgraph(
        &self,
        g: &BipartiteGraph,
        target_post: PostIdx,
        k: usize,
    ) -> Result<Subgraph> {
        if target_post as usize >= g.n_posts() {
            return Err(SealError::UnknownPost(format!("#{target_post}")));
        }
        if k >= self.height {
            return Err(SealError::BadExtractionLevel { k, height: self.height });
        }
        let leaf = self.leaf_of(g.post_vertex(target_post));
        let path = self.path_from_root(leaf);
        let depth = (self.height - k).min(path.len() - 1);
        let community = path[depth];
        let posts: Vec<PostIdx> = self.nodes[community]
            .vertices
            .iter()
            .filter_map(|&v| g.vertex_post(v))
            .collect();
        Ok(Subgraph::from_posts(g, target_post, &posts))
    }

    pub(crate) fn from_parts(
        nodes: Vec<TreeNode>,
        root: NodeId,
        leaf_of: Vec<NodeId>,
        height: usize,
        total_volume: f64,
    ) -> Self {
        EncodingTree { nodes, root, leaf_of, height, total_volume }
    }

    pub fn to_document(&self) -> TreeDocument {
        TreeDocument {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| TreeNodeDoc {
                    id,
                    parent: n.parent,
                    vertices: n.vertices.clone(),
                    volume: n.volume,
                    cut: n.cut,
                })
                .collect(),
            height: self.height,
            total_volume: self.total_volume,
        }
    }

    pub fn from_document(doc: &TreeDocument) -> Result<Self> {
        let mut nodes: Vec<TreeNode> = doc
            .nodes
            .iter()
            .map(|n| TreeNode {
                parent: n.parent,
                children: Vec::new(),
                vertices: n.vertices.clone(),
                volume: n.volume,
                cut: n.cut,
            })
            .collect();
        let mut root = None;
        for (id, n) in doc.nodes.iter().enumerate() {
            match n.parent {
                Some(p) => nodes[p].children.push(id),
                None => {
                    if root.replace(id).is_some() {
                        return Err(SealError::Config("tree document has two roots".into()));
                    }
                }
            }
        }
        let root = root.ok_or_else(|| SealError::Config("tree document has no root".into()))?;
        let n_vertices = nodes[root].vertices.len();
        let mut leaf_of = vec![usize::MAX; n_vertices];
        for (id, n) in nodes.iter().enumerate() {
            if n.children.is_empty() {
                let v = n.vertices[0] as usize;
                if v >= n_vertices || leaf_of[v] != usize::MAX {
                    return Err(SealError::Config("invalid leaf assignment".into()));
                }
                leaf_of[v] = id;
            }
        }
        if leaf_of.iter().any(|&l| l == usize::MAX) {
            return Err(SealError::Config("a vertex is missing from the leaves".into()));
        }
        let tree = EncodingTree {
            total_volume: doc.total_volume,
            height: doc.height,
            nodes,
            root,
            leaf_of,
        };
        Ok(tree)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_vec_pretty(&self.to_document())?;
        out.push(b'\n');
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let doc: TreeDocument = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_document(&doc)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNodeDoc {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub vertices: Vec<VertexId>,
    pub volume: f64,
    pub cut: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeDocument {
    pub nodes: Vec<TreeNodeDoc>,
    pub height: usize,
    pub total_volume: f64,
}

/// One-dimensional structural entropy, implemented as the entropy of the
/// canonical single-layer tree (degree distribution normalized by volume).
pub fn one_dim_entropy(g: &BipartiteGraph) -> Result<f64> {
    EncodingTree::single_layer(g).tree_entropy()
}

/// The unnormalized degree form `-sum d_v log2 d_v`, exposed for completeness
/// next to [`one_dim_entropy`]; not used by the optimizer.
pub fn raw_degree_entropy(g: &BipartiteGraph) -> Result<f64> {
    if g.total_volume() <= 0.0 {
        return Err(SealError::EmptyGraph);
    }
    let mut sum = 0.0;
    for v in 0..g.n_vertices() as VertexId {
        let d = g.degree(v)?;
        if d > 0.0 {
            sum -= d * d.log2();
        }
    }
    Ok(sum)
}
