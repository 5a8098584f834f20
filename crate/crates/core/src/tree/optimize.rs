//! Greedy height-bounded entropy minimization.
//!
//! Starting from the single-layer tree, the loop repeatedly applies the best
//! entropy-reducing operator until no candidate improves by more than the
//! tolerance:
//!
//! * `stretch(a, b)` inserts a new intermediate node absorbing the sibling
//!   pair `(a, b)`, deepening both subtrees by one level.
//! * `merge(a, b)` unions two sibling communities into one node whose
//!   children are the combined children (a leaf sibling joins as a child).
//!   This is the height-preserving composition of a stretch with compresses
//!   of the pair, taken as one move so community growth is reachable at the
//!   height bound.
//! * `compress(x)` removes an intermediate node and promotes its children.
//!
//! Sibling pairs are only considered when connected by positive inter-weight:
//! merging communities with no edges between them changes the entropy by
//! exactly zero. Ties break on the smallest merged vertex set in
//! lexicographic order. The iteration cap is `50 * |V|`.

use std::collections::HashMap;

use super::{entropy_term, EncodingTree, TreeNode};
use crate::error::Result;
use crate::graph::{BipartiteGraph, VertexId};

#[derive(Debug, Clone)]
struct OptNode {
    parent: usize,
    children: Vec<usize>,
    vertices: Vec<VertexId>,
    volume: f64,
    cut: f64,
    alive: bool,
    /// Longest leaf distance below this node (0 for a leaf).
    reach: usize,
    depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpKind {
    Stretch,
    Merge,
    Compress,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    delta: f64,
    kind: OpKind,
    a: usize,
    b: usize,
}

struct Optimizer<'g> {
    g: &'g BipartiteGraph,
    nodes: Vec<OptNode>,
    root: usize,
    /// Inter-community edge weight for sibling pairs, keyed `(min, max)`.
    inter: HashMap<(usize, usize), f64>,
    total: f64,
    max_height: usize,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl<'g> Optimizer<'g> {
    fn new(g: &'g BipartiteGraph, max_height: usize) -> Self {
        let n = g.n_vertices();
        let total = g.total_volume();
        let mut nodes = Vec::with_capacity(2 * n + 1);
        nodes.push(OptNode {
            parent: usize::MAX,
            children: (1..=n).collect(),
            vertices: (0..n as VertexId).collect(),
            volume: total,
            cut: 0.0,
            alive: true,
            reach: 1,
            depth: 0,
        });
        for v in 0..n as VertexId {
            let d = g.degree(v).expect("vertex in range");
            nodes.push(OptNode {
                parent: 0,
                children: Vec::new(),
                vertices: vec![v],
                volume: d,
                cut: d,
                alive: true,
                reach: 0,
                depth: 1,
            });
        }
        let mut inter = HashMap::new();
        for e in g.edges() {
            let a = 1 + e.user as usize;
            let b = 1 + g.post_vertex(e.post) as usize;
            *inter.entry(key(a, b)).or_insert(0.0) += e.weight;
        }
        Optimizer { g, nodes, root: 0, inter, total, max_height }
    }

    fn w(&self, a: usize, b: usize) -> f64 {
        self.inter.get(&key(a, b)).copied().unwrap_or(0.0)
    }

    fn term(&self, cut: f64, vol: f64, parent_vol: f64) -> f64 {
        entropy_term(cut, vol, parent_vol, self.total)
    }

    fn node_term(&self, id: usize, parent_vol: f64) -> f64 {
        self.term(self.nodes[id].cut, self.nodes[id].volume, parent_vol)
    }

    fn stretch_delta(&self, a: usize, b: usize) -> f64 {
        let pi = self.nodes[a].parent;
        let pv = self.nodes[pi].volume;
        let vg = self.nodes[a].volume + self.nodes[b].volume;
        let cg = self.nodes[a].cut + self.nodes[b].cut - 2.0 * self.w(a, b);
        self.node_term(a, vg) + self.node_term(b, vg) + self.term(cg, vg, pv)
            - self.node_term(a, pv)
            - self.node_term(b, pv)
    }

    fn merge_delta(&self, a: usize, b: usize) -> f64 {
        let pi = self.nodes[a].parent;
        let pv = self.nodes[pi].volume;
        let vg = self.nodes[a].volume + self.nodes[b].volume;
        let cg = self.nodes[a].cut + self.nodes[b].cut - 2.0 * self.w(a, b);
        let mut delta = self.term(cg, vg, pv) - self.node_term(a, pv) - self.node_term(b, pv);
        for n in [a, b] {
            if self.nodes[n].children.is_empty() {
                delta += self.node_term(n, vg);
            } else {
                let vn = self.nodes[n].volume;
                for &c in &self.nodes[n].children {
                    delta += self.node_term(c, vg) - self.node_term(c, vn);
                }
            }
        }
        delta
    }

    fn compress_delta(&self, x: usize) -> f64 {
        let pi = self.nodes[x].parent;
        let pv = self.nodes[pi].volume;
        let vx = self.nodes[x].volume;
        let mut delta = -self.node_term(x, pv);
        for &c in &self.nodes[x].children {
            delta += self.node_term(c, pv) - self.node_term(c, vx);
        }
        delta
    }

    /// Max leaf depth if `n` were pushed one level deeper.
    fn deepened_reach_ok(&self, n: usize) -> bool {
        self.nodes[n].depth + 1 + self.nodes[n].reach <= self.max_height
    }

    fn best_candidate(&self) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        let mut consider = |cand: Candidate, this: &Self| {
            if !cand.delta.is_finite() {
                return;
            }
            match &best {
                Some(b) if cand.delta > b.delta => {}
                Some(b) if cand.delta == b.delta => {
                    if this.tie_key(&cand) < this.tie_key(b) {
                        best = Some(cand);
                    }
                }
                _ => best = Some(cand),
            }
        };
        for (&(a, b), &w) in &self.inter {
            if w <= 0.0 || !self.nodes[a].alive || !self.nodes[b].alive {
                continue;
            }
            if self.nodes[a].parent != self.nodes[b].parent
                || self.nodes[a].parent == usize::MAX
            {
                continue;
            }
            let both_leaves =
                self.nodes[a].children.is_empty() && self.nodes[b].children.is_empty();
            if self.deepened_reach_ok(a) && self.deepened_reach_ok(b) {
                consider(
                    Candidate { delta: self.stretch_delta(a, b), kind: OpKind::Stretch, a, b },
                    self,
                );
            }
            if !both_leaves {
                let ok = [a, b].iter().all(|&n| {
                    if self.nodes[n].children.is_empty() {
                        self.deepened_reach_ok(n)
                    } else {
                        true // internal children keep their depth
                    }
                });
                if ok {
                    consider(
                        Candidate { delta: self.merge_delta(a, b), kind: OpKind::Merge, a, b },
                        self,
                    );
                }
            }
        }
        for x in 0..self.nodes.len() {
            let node = &self.nodes[x];
            if node.alive && node.parent != usize::MAX && !node.children.is_empty() {
                consider(
                    Candidate { delta: self.compress_delta(x), kind: OpKind::Compress, a: x, b: x },
                    self,
                );
            }
        }
        best
    }

    /// Deterministic tiebreak: merged vertex set, lexicographic, then op kind.
    fn tie_key(&self, c: &Candidate) -> (Vec<VertexId>, u8) {
        let mut vs = self.nodes[c.a].vertices.clone();
        if c.b != c.a {
            vs.extend_from_slice(&self.nodes[c.b].vertices);
        }
        vs.sort_unstable();
        let kind = match c.kind {
            OpKind::Stretch => 0,
            OpKind::Merge => 1,
            OpKind::Compress => 2,
        };
        (vs, kind)
    }

    fn alloc(&mut self, node: OptNode) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Moves the inter-weight entries of `old` onto `gamma` within the
    /// sibling set of `parent`.
    fn fold_inter_into(&mut self, parent: usize, old: usize, gamma: usize) {
        let siblings: Vec<usize> = self.nodes[parent]
            .children
            .iter()
            .copied()
            .filter(|&s| s != gamma && s != old)
            .collect();
        for s in siblings {
            if let Some(w) = self.inter.remove(&key(old, s)) {
                *self.inter.entry(key(gamma, s)).or_insert(0.0) += w;
            }
        }
        self.inter.remove(&key(old, gamma));
    }

    /// Inter-weights between `child`'s vertex set and each node in `groups`,
    /// resolved through a vertex -> group map. Scans edges incident to
    /// `child`'s vertices in graph order.
    fn cross_weights(
        &self,
        child: usize,
        group_of: &HashMap<VertexId, usize>,
    ) -> HashMap<usize, f64> {
        let mut out: HashMap<usize, f64> = HashMap::new();
        let m = self.g.n_users() as VertexId;
        for &v in &self.nodes[child].vertices {
            if v < m {
                for &(p, w) in self.g.user_neighbors(v) {
                    if let Some(&grp) = group_of.get(&(m + p)) {
                        *out.entry(grp).or_insert(0.0) += w;
                    }
                }
            } else {
                for &(u, w) in self.g.post_neighbors(v - m) {
                    if let Some(&grp) = group_of.get(&u) {
                        *out.entry(grp).or_insert(0.0) += w;
                    }
                }
            }
        }
        out
    }

    fn apply(&mut self, cand: Candidate) {
        match cand.kind {
            OpKind::Stretch => self.apply_stretch(cand.a, cand.b),
            OpKind::Merge => self.apply_merge(cand.a, cand.b),
            OpKind::Compress => self.apply_compress(cand.a),
        }
        self.refresh_depths();
    }

    fn new_group_node(&mut self, parent: usize, a: usize, b: usize) -> usize {
        let mut vertices = self.nodes[a].vertices.clone();
        vertices.extend_from_slice(&self.nodes[b].vertices);
        vertices.sort_unstable();
        let volume = self.nodes[a].volume + self.nodes[b].volume;
        let cut = self.nodes[a].cut + self.nodes[b].cut - 2.0 * self.w(a, b);
        self.alloc(OptNode {
            parent,
            children: Vec::new(),
            vertices,
            volume,
            cut,
            alive: true,
            reach: 0,
            depth: 0,
        })
    }

    fn apply_stretch(&mut self, a: usize, b: usize) {
        let parent = self.nodes[a].parent;
        let gamma = self.new_group_node(parent, a, b);
        self.nodes[gamma].children = vec![a, b];
        let kids = &mut self.nodes[parent].children;
        kids.retain(|&c| c != a && c != b);
        kids.push(gamma);
        // a-b weight moves inside gamma; sibling weights fold onto gamma.
        let w_ab = self.inter.remove(&key(a, b));
        self.fold_inter_into(parent, a, gamma);
        self.fold_inter_into(parent, b, gamma);
        if let Some(w) = w_ab {
            self.inter.insert(key(a, b), w);
        }
        self.nodes[a].parent = gamma;
        self.nodes[b].parent = gamma;
    }

    fn apply_merge(&mut self, a: usize, b: usize) {
        let parent = self.nodes[a].parent;
        let gamma = self.new_group_node(parent, a, b);
        let kids = &mut self.nodes[parent].children;
        kids.retain(|&c| c != a && c != b);
        kids.push(gamma);

        let (comp_a, internal_a) = self.component(a);
        let (comp_b, internal_b) = self.component(b);

        // Cross-weights between the two component sets. Entries within each
        // component already exist in `inter` (they were siblings before).
        let group_of: HashMap<VertexId, usize> = comp_b
            .iter()
            .flat_map(|&n| self.nodes[n].vertices.iter().map(move |&v| (v, n)))
            .collect();
        for &x in &comp_a {
            for (grp, w) in self.cross_weights(x, &group_of) {
                if w > 0.0 {
                    *self.inter.entry(key(x, grp)).or_insert(0.0) += w;
                }
            }
        }

        // The whole-pair weight (a, b) is superseded by the per-child cross
        // entries recorded above (merge is only emitted when at least one
        // side is internal, so the pair never survives as-is).
        self.inter.remove(&key(a, b));
        self.fold_inter_into(parent, a, gamma);
        self.fold_inter_into(parent, b, gamma);

        for &n in comp_a.iter().chain(&comp_b) {
            self.nodes[n].parent = gamma;
            self.nodes[gamma].children.push(n);
        }
        self.nodes[gamma].children.sort_unstable();
        if internal_a {
            self.kill(a);
        }
        if internal_b {
            self.kill(b);
        }
    }

    /// Children of `n` if internal, else `[n]` itself.
    fn component(&self, n: usize) -> (Vec<usize>, bool) {
        if self.nodes[n].children.is_empty() {
            (vec![n], false)
        } else {
            (self.nodes[n].children.clone(), true)
        }
    }

    fn kill(&mut self, n: usize) {
        // The fold and the explicit (a, b) removal have already rehomed every
        // sibling entry; this sweep only guards against leftovers.
        self.nodes[n].alive = false;
        self.nodes[n].children.clear();
        let stale: Vec<(usize, usize)> = self
            .inter
            .keys()
            .copied()
            .filter(|&(x, y)| x == n || y == n)
            .collect();
        for k in stale {
            self.inter.remove(&k);
        }
    }

    fn apply_compress(&mut self, x: usize) {
        let parent = self.nodes[x].parent;
        let children = self.nodes[x].children.clone();

        // weights between x's children and x's siblings
        let siblings: Vec<usize> = self.nodes[parent]
            .children
            .iter()
            .copied()
            .filter(|&s| s != x)
            .collect();
        let group_of: HashMap<VertexId, usize> = siblings
            .iter()
            .flat_map(|&s| self.nodes[s].vertices.iter().map(move |&v| (v, s)))
            .collect();
        for &c in &children {
            for (grp, w) in self.cross_weights(c, &group_of) {
                if w > 0.0 {
                    *self.inter.entry(key(c, grp)).or_insert(0.0) += w;
                }
            }
        }
        // drop entries touching x
        let stale: Vec<(usize, usize)> = self
            .inter
            .keys()
            .copied()
            .filter(|&(p, q)| p == x || q == x)
            .collect();
        for k in stale {
            self.inter.remove(&k);
        }

        let kids = &mut self.nodes[parent].children;
        kids.retain(|&c| c != x);
        kids.extend_from_slice(&children);
        for &c in &children {
            self.nodes[c].parent = parent;
        }
        self.nodes[x].alive = false;
        self.nodes[x].children.clear();
    }

    fn refresh_depths(&mut self) {
        let mut order = vec![self.root];
        self.nodes[self.root].depth = 0;
        let mut i = 0;
        while i < order.len() {
            let n = order[i];
            i += 1;
            let d = self.nodes[n].depth;
            for c in self.nodes[n].children.clone() {
                self.nodes[c].depth = d + 1;
                order.push(c);
            }
        }
        for &n in order.iter().rev() {
            let node = &self.nodes[n];
            let reach = if node.children.is_empty() {
                0
            } else {
                node.children.iter().map(|&c| self.nodes[c].reach + 1).max().unwrap()
            };
            self.nodes[n].reach = reach;
        }
    }

    fn finalize(self) -> EncodingTree {
        // renumber alive nodes in BFS order with children sorted by smallest
        // vertex, so serialized trees are canonical
        let mut order = vec![self.root];
        let mut i = 0;
        while i < order.len() {
            let n = order[i];
            i += 1;
            let mut kids = self.nodes[n].children.clone();
            kids.sort_by_key(|&c| self.nodes[c].vertices[0]);
            order.extend(kids);
        }
        let mut renum = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            renum[old] = new;
        }
        let mut nodes = Vec::with_capacity(order.len());
        for &old in &order {
            let n = &self.nodes[old];
            let mut kids: Vec<usize> = n.children.iter().map(|&c| renum[c]).collect();
            kids.sort_unstable();
            nodes.push(TreeNode {
                parent: (n.parent != usize::MAX).then(|| renum[n.parent]),
                children: kids,
                vertices: n.vertices.clone(),
                volume: n.volume,
                cut: n.cut,
            });
        }
        let n_vertices = self.g.n_vertices();
        let mut leaf_of = vec![usize::MAX; n_vertices];
        let mut height = 0;
        for (id, node) in nodes.iter().enumerate() {
            if node.children.is_empty() {
                leaf_of[node.vertices[0] as usize] = id;
                let mut d = 0;
                let mut cur = id;
                while let Some(p) = nodes[cur].parent {
                    cur = p;
                    d += 1;
                }
                height = height.max(d);
            }
        }
        EncodingTree::from_parts(nodes, 0, leaf_of, height, self.total)
    }
}

pub(super) fn optimize(g: &BipartiteGraph, k: usize, tolerance: f64) -> Result<EncodingTree> {
    let mut opt = Optimizer::new(g, k);
    let max_iter = 50 * g.n_vertices().max(1);
    for _ in 0..max_iter {
        match opt.best_candidate() {
            Some(c) if c.delta < -tolerance => opt.apply(c),
            _ => break,
        }
    }
    let tree = opt.finalize();
    debug_assert!(tree.validate(g).is_ok(), "{:?}", tree.validate(g));
    Ok(tree)
}
