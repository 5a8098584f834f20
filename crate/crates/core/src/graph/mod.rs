//! Bipartite user-post engagement graph.
//!
//! Users and posts get dense indices in order of first appearance; all
//! downstream storage is array-backed. Vertices are addressed jointly as
//! `VertexId`: users occupy `0..m`, posts `m..m+n`. Graphs are immutable
//! after construction; the attack engine perturbs episode-local overlays
//! instead of mutating the base graph.

mod io;
mod synth;

pub use synth::{LabelMode, SyntheticSpec};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};

pub type UserIdx = u32;
pub type PostIdx = u32;
/// Joint vertex index: user `u` is `u`, post `p` is `m + p`.
pub type VertexId = u32;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge {
    pub user: UserIdx,
    pub post: PostIdx,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    user_names: Vec<String>,
    post_names: Vec<String>,
    user_index: BTreeMap<String, UserIdx>,
    post_index: BTreeMap<String, PostIdx>,
    edges: Vec<Edge>,
    edge_set: HashSet<(UserIdx, PostIdx)>,
    /// Per-user incident (post, weight), in insertion order.
    user_adj: Vec<Vec<(PostIdx, f64)>>,
    /// Per-post incident (user, weight), in insertion order.
    post_adj: Vec<Vec<(UserIdx, f64)>>,
    user_features: Vec<Vec<f64>>,
    post_features: Vec<Vec<f64>>,
    feature_dim: usize,
    /// 1 = fake, 0 = real.
    labels: Vec<u8>,
}

/// Eq-6 edge weight: `(cos(h_u, h_p) + 1) / 2`, in `[0, 1]`.
///
/// Errors on zero vectors, which signal missing features upstream.
pub fn edge_weight(h_u: &[f64], h_p: &[f64]) -> Result<f64> {
    if h_u.len() != h_p.len() {
        return Err(SealError::DimensionMismatch {
            expected: h_u.len(),
            got: h_p.len(),
        });
    }
    let nu = h_u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let np = h_p.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || np == 0.0 {
        return Err(SealError::ZeroVector);
    }
    let dot: f64 = h_u.iter().zip(h_p).map(|(a, b)| a * b).sum();
    let cos = (dot / (nu * np)).clamp(-1.0, 1.0);
    Ok((cos + 1.0) / 2.0)
}

/// Construction input: edge weight may be supplied or derived from features.
#[derive(Debug, Clone)]
pub struct EdgeSpec {
    pub user: String,
    pub post: String,
    pub weight: Option<f64>,
}

impl BipartiteGraph {
    /// Builds a validated graph. Features are keyed by external id; labels by
    /// post id. Missing explicit weights fall back to [`edge_weight`] on the
    /// endpoint features.
    pub fn build(
        users: &[String],
        posts: &[String],
        edges: &[EdgeSpec],
        user_features: &BTreeMap<String, Vec<f64>>,
        post_features: &BTreeMap<String, Vec<f64>>,
        labels: &BTreeMap<String, u8>,
    ) -> Result<Self> {
        if users.is_empty() || posts.is_empty() {
            return Err(SealError::Config("user and post sets must be nonempty".into()));
        }
        let mut user_index = BTreeMap::new();
        let mut user_names = Vec::new();
        for name in users {
            if user_index.insert(name.clone(), user_names.len() as UserIdx).is_some() {
                return Err(SealError::Config(format!("duplicate user id {name}")));
            }
            user_names.push(name.clone());
        }
        let mut post_index = BTreeMap::new();
        let mut post_names = Vec::new();
        for name in posts {
            if post_index.insert(name.clone(), post_names.len() as PostIdx).is_some() {
                return Err(SealError::Config(format!("duplicate post id {name}")));
            }
            post_names.push(name.clone());
        }

        let mut dim = None;
        let mut take_features = |names: &[String],
                                 table: &BTreeMap<String, Vec<f64>>|
         -> Result<Vec<Vec<f64>>> {
            let mut out = Vec::with_capacity(names.len());
            for name in names {
                let f = table
                    .get(name)
                    .ok_or_else(|| SealError::Config(format!("missing features for {name}")))?;
                match dim {
                    None => dim = Some(f.len()),
                    Some(d) if d != f.len() => {
                        return Err(SealError::DimensionMismatch {
                            expected: d,
                            got: f.len(),
                        })
                    }
                    _ => {}
                }
                out.push(f.clone());
            }
            Ok(out)
        };
        let uf = take_features(&user_names, user_features)?;
        let pf = take_features(&post_names, post_features)?;
        let feature_dim = dim.unwrap_or(0);

        let mut label_vec = Vec::with_capacity(post_names.len());
        for name in &post_names {
            let l = *labels
                .get(name)
                .ok_or_else(|| SealError::Config(format!("missing label for post {name}")))?;
            if l > 1 {
                return Err(SealError::BadLabel(l as i64));
            }
            label_vec.push(l);
        }

        let mut g = BipartiteGraph {
            user_names,
            post_names,
            user_index,
            post_index,
            edges: Vec::with_capacity(edges.len()),
            edge_set: HashSet::with_capacity(edges.len()),
            user_adj: vec![Vec::new(); users.len()],
            post_adj: vec![Vec::new(); posts.len()],
            user_features: uf,
            post_features: pf,
            feature_dim,
            labels: label_vec,
        };
        for e in edges {
            let u = *g
                .user_index
                .get(&e.user)
                .ok_or_else(|| SealError::DanglingEndpoint(e.user.clone()))?;
            let p = *g
                .post_index
                .get(&e.post)
                .ok_or_else(|| SealError::DanglingEndpoint(e.post.clone()))?;
            let w = match e.weight {
                Some(w) => {
                    if !(0.0..=1.0).contains(&w) {
                        return Err(SealError::WeightOutOfRange(w));
                    }
                    w
                }
                None => edge_weight(&g.user_features[u as usize], &g.post_features[p as usize])?,
            };
            g.insert_edge(u, p, w)?;
        }
        Ok(g)
    }

    fn insert_edge(&mut self, u: UserIdx, p: PostIdx, w: f64) -> Result<()> {
        if !self.edge_set.insert((u, p)) {
            return Err(SealError::DuplicateEdge(
                self.user_names[u as usize].clone(),
                self.post_names[p as usize].clone(),
            ));
        }
        self.edges.push(Edge { user: u, post: p, weight: w });
        self.user_adj[u as usize].push((p, w));
        self.post_adj[p as usize].push((u, w));
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.user_names.len()
    }

    pub fn n_posts(&self) -> usize {
        self.post_names.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_users() + self.n_posts()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn has_edge(&self, u: UserIdx, p: PostIdx) -> bool {
        self.edge_set.contains(&(u, p))
    }

    pub fn user_name(&self, u: UserIdx) -> &str {
        &self.user_names[u as usize]
    }

    pub fn post_name(&self, p: PostIdx) -> &str {
        &self.post_names[p as usize]
    }

    pub fn user_idx(&self, name: &str) -> Result<UserIdx> {
        self.user_index
            .get(name)
            .copied()
            .ok_or_else(|| SealError::UnknownUser(name.into()))
    }

    pub fn post_idx(&self, name: &str) -> Result<PostIdx> {
        self.post_index
            .get(name)
            .copied()
            .ok_or_else(|| SealError::UnknownPost(name.into()))
    }

    pub fn user_features(&self, u: UserIdx) -> &[f64] {
        &self.user_features[u as usize]
    }

    pub fn post_features(&self, p: PostIdx) -> &[f64] {
        &self.post_features[p as usize]
    }

    pub fn label(&self, p: PostIdx) -> u8 {
        self.labels[p as usize]
    }

    pub fn user_neighbors(&self, u: UserIdx) -> &[(PostIdx, f64)] {
        &self.user_adj[u as usize]
    }

    pub fn post_neighbors(&self, p: PostIdx) -> &[(UserIdx, f64)] {
        &self.post_adj[p as usize]
    }

    pub fn post_vertex(&self, p: PostIdx) -> VertexId {
        self.n_users() as VertexId + p
    }

    pub fn vertex_is_post(&self, v: VertexId) -> bool {
        v as usize >= self.n_users()
    }

    pub fn vertex_post(&self, v: VertexId) -> Option<PostIdx> {
        (v as usize >= self.n_users()).then(|| v - self.n_users() as VertexId)
    }

    pub fn vertex_name(&self, v: VertexId) -> &str {
        match self.vertex_post(v) {
            Some(p) => self.post_name(p),
            None => self.user_name(v),
        }
    }

    /// Weighted degree of a joint vertex.
    pub fn degree(&self, v: VertexId) -> Result<f64> {
        let m = self.n_users();
        if (v as usize) < m {
            Ok(self.user_adj[v as usize].iter().map(|(_, w)| w).sum())
        } else if (v as usize) < m + self.n_posts() {
            Ok(self.post_adj[v as usize - m].iter().map(|(_, w)| w).sum())
        } else {
            Err(SealError::UnknownVertex(v.to_string()))
        }
    }

    /// Sum of weighted degrees over a vertex set. The full set gives twice the
    /// total edge weight.
    pub fn volume(&self, vertices: &[VertexId]) -> Result<f64> {
        let mut total = 0.0;
        for &v in vertices {
            total += self.degree(v)?;
        }
        Ok(total)
    }

    pub fn total_volume(&self) -> f64 {
        2.0 * self.edges.iter().map(|e| e.weight).sum::<f64>()
    }

    /// Total weight of edges with exactly one endpoint inside the set.
    pub fn cut(&self, vertices: &[VertexId]) -> Result<f64> {
        let n = self.n_vertices() as u32;
        let mut inside = vec![false; n as usize];
        for &v in vertices {
            if v >= n {
                return Err(SealError::UnknownVertex(v.to_string()));
            }
            inside[v as usize] = true;
        }
        let m = self.n_users() as u32;
        let mut total = 0.0;
        for e in &self.edges {
            if inside[e.user as usize] != inside[(m + e.post) as usize] {
                total += e.weight;
            }
        }
        Ok(total)
    }

    /// Copy of the graph with every edge weight replaced by 1. Matches the
    /// unweighted setting under which the degenerate influence analysis is
    /// stated.
    pub fn unweighted(&self) -> Self {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.weight = 1.0;
        }
        for adj in &mut g.user_adj {
            for (_, w) in adj.iter_mut() {
                *w = 1.0;
            }
        }
        for adj in &mut g.post_adj {
            for (_, w) in adj.iter_mut() {
                *w = 1.0;
            }
        }
        g
    }
}

/// Post-side view used by per-target attacks: the community posts of one
/// target together with the full user set.
#[derive(Debug, Clone)]
pub struct Subgraph {
    /// Community posts, fake first (target at position 0), then real.
    pub posts: Vec<PostIdx>,
    pub fake_posts: Vec<PostIdx>,
    pub real_posts: Vec<PostIdx>,
    /// Edges of the parent graph restricted to `posts`.
    pub edges: Vec<Edge>,
}

impl Subgraph {
    /// Builds the view for `community_posts` with `target` first among fakes
    /// when it is labeled fake.
    pub fn from_posts(g: &BipartiteGraph, target: PostIdx, community_posts: &[PostIdx]) -> Self {
        let mut fake_posts = Vec::new();
        let mut real_posts = Vec::new();
        for &p in community_posts {
            if p == target {
                continue;
            }
            if g.label(p) == 1 {
                fake_posts.push(p);
            } else {
                real_posts.push(p);
            }
        }
        if g.label(target) == 1 {
            fake_posts.insert(0, target);
        } else {
            real_posts.insert(0, target);
        }
        let mut posts = fake_posts.clone();
        posts.extend_from_slice(&real_posts);
        let keep: HashSet<PostIdx> = posts.iter().copied().collect();
        let edges = g
            .edges()
            .iter()
            .filter(|e| keep.contains(&e.post))
            .cloned()
            .collect();
        Subgraph { posts, fake_posts, real_posts, edges }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn uniform_features(names: &[String], f: Vec<f64>) -> BTreeMap<String, Vec<f64>> {
        names.iter().map(|n| (n.clone(), f.clone())).collect()
    }

    /// Star K_{1,3}: one user engaged with three posts, unit weights.
    pub(crate) fn star_k13() -> BipartiteGraph {
        let users = names("u", 1);
        let posts = names("p", 3);
        let edges: Vec<EdgeSpec> = posts
            .iter()
            .map(|p| EdgeSpec { user: "u0".into(), post: p.clone(), weight: Some(1.0) })
            .collect();
        let labels = posts.iter().map(|p| (p.clone(), 0u8)).collect();
        BipartiteGraph::build(
            &users,
            &posts,
            &edges,
            &uniform_features(&users, vec![1.0, 0.0]),
            &uniform_features(&posts, vec![0.0, 1.0]),
            &labels,
        )
        .unwrap()
    }

    #[test]
    fn edge_weight_examples() {
        assert_eq!(edge_weight(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(edge_weight(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(edge_weight(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5);
        assert!(matches!(
            edge_weight(&[0.0, 0.0], &[1.0, 0.0]),
            Err(SealError::ZeroVector)
        ));
        // symmetry
        let a = [0.3, -0.7, 0.2];
        let b = [1.1, 0.4, -0.2];
        assert_eq!(edge_weight(&a, &b).unwrap(), edge_weight(&b, &a).unwrap());
    }

    #[test]
    fn build_computes_missing_weights_from_features() {
        let users = names("u", 2);
        let posts = names("p", 1);
        let edges = vec![
            EdgeSpec { user: "u0".into(), post: "p0".into(), weight: None },
            EdgeSpec { user: "u1".into(), post: "p0".into(), weight: None },
        ];
        let labels = [("p0".to_string(), 1u8)].into_iter().collect();
        let g = BipartiteGraph::build(
            &users,
            &posts,
            &edges,
            &uniform_features(&users, vec![1.0, 0.0]),
            &uniform_features(&posts, vec![0.0, 1.0]),
            &labels,
        )
        .unwrap();
        for e in g.edges() {
            assert_eq!(e.weight, 0.5);
        }
    }

    #[test]
    fn build_rejects_dangling_and_duplicate_edges() {
        let users = names("u", 1);
        let posts = names("p", 1);
        let labels: BTreeMap<String, u8> = [("p0".to_string(), 0u8)].into_iter().collect();
        let uf = uniform_features(&users, vec![1.0]);
        let pf = uniform_features(&posts, vec![1.0]);

        let bad = vec![EdgeSpec { user: "u0".into(), post: "p9".into(), weight: Some(1.0) }];
        let err = BipartiteGraph::build(&users, &posts, &bad, &uf, &pf, &labels).unwrap_err();
        assert!(err.to_string().contains("dangling endpoint p9"));

        let dup = vec![
            EdgeSpec { user: "u0".into(), post: "p0".into(), weight: Some(1.0) },
            EdgeSpec { user: "u0".into(), post: "p0".into(), weight: Some(0.5) },
        ];
        assert!(matches!(
            BipartiteGraph::build(&users, &posts, &dup, &uf, &pf, &labels),
            Err(SealError::DuplicateEdge(_, _))
        ));
    }

    #[test]
    fn empty_edge_set_is_a_valid_degenerate_graph() {
        let users = names("u", 1);
        let posts = names("p", 1);
        let labels = [("p0".to_string(), 0u8)].into_iter().collect();
        let g = BipartiteGraph::build(
            &users,
            &posts,
            &[],
            &uniform_features(&users, vec![1.0]),
            &uniform_features(&posts, vec![1.0]),
            &labels,
        )
        .unwrap();
        assert_eq!(g.total_volume(), 0.0);
    }

    #[test]
    fn star_volume_and_cut() {
        let g = star_k13();
        assert_eq!(g.volume(&[0]).unwrap(), 3.0); // center
        assert_eq!(g.volume(&[]).unwrap(), 0.0);
        assert_eq!(g.cut(&[0]).unwrap(), 3.0);
        let all: Vec<VertexId> = (0..g.n_vertices() as u32).collect();
        assert_eq!(g.cut(&all).unwrap(), 0.0);
        assert_eq!(g.volume(&all).unwrap(), 6.0);
        assert!(g.volume(&[99]).is_err());
        assert!(g.cut(&[99]).is_err());
    }

    #[test]
    fn path_graph_volume() {
        // 4-vertex path u0-p0-u1-p1 with unit weights: volume(all) = 2 * 3 edges.
        let users = names("u", 2);
        let posts = names("p", 2);
        let edges = vec![
            EdgeSpec { user: "u0".into(), post: "p0".into(), weight: Some(1.0) },
            EdgeSpec { user: "u1".into(), post: "p0".into(), weight: Some(1.0) },
            EdgeSpec { user: "u1".into(), post: "p1".into(), weight: Some(1.0) },
        ];
        let labels = posts.iter().map(|p| (p.clone(), 0u8)).collect();
        let g = BipartiteGraph::build(
            &users,
            &posts,
            &edges,
            &uniform_features(&users, vec![1.0]),
            &uniform_features(&posts, vec![1.0]),
            &labels,
        )
        .unwrap();
        let all: Vec<VertexId> = (0..4).collect();
        assert_eq!(g.volume(&all).unwrap(), 6.0);
        // path a-b-c: cut of the middle vertex (p0 = vertex 2) is 2
        assert_eq!(g.cut(&[2]).unwrap(), 2.0);
    }

    proptest! {
        #[test]
        fn cut_is_symmetric_and_volume_partitions(mask in 0u32..64, seed in 0u64..100) {
            let g = SyntheticSpec {
                communities: 2,
                users_per_community: 2,
                posts_per_community: 1,
                ..SyntheticSpec::tiny()
            }
            .generate(seed)
            .unwrap();
            let n = g.n_vertices() as u32;
            let set: Vec<VertexId> = (0..n).filter(|v| mask & (1 << v) != 0).collect();
            let comp: Vec<VertexId> = (0..n).filter(|v| mask & (1 << v) == 0).collect();
            let all: Vec<VertexId> = (0..n).collect();
            prop_assert!((g.cut(&set).unwrap() - g.cut(&comp).unwrap()).abs() < 1e-12);
            let lhs = g.volume(&set).unwrap() + g.volume(&comp).unwrap();
            prop_assert!((lhs - g.volume(&all).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn edge_weight_stays_in_unit_interval(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
            let w = edge_weight(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
        }
    }
}
