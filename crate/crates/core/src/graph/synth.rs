//! Synthetic engagement fixtures with planted communities.
//!
//! Posts connect to users of their own community; connection probabilities
//! set the expected neighbor counts, which are realized exactly (identities
//! drawn without replacement) so fixtures are tight and reproducible. Each
//! community carries a share of fake-leaning accounts that concentrate on
//! fake posts; the rest engage mostly with real posts. Features are drawn as
//! community centroid plus a leaning/label offset plus noise, so cosine edge
//! weights correlate with community membership.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BipartiteGraph, EdgeSpec};
use crate::error::{Result, SealError};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Each community holds `fake_fraction` fake posts.
    #[default]
    PerCommunity,
    /// Odd communities are entirely fake: community membership predicts the
    /// label exactly.
    ByCommunity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub communities: usize,
    pub users_per_community: usize,
    pub posts_per_community: usize,
    /// Intra-community connection probability: a post's expected neighbor
    /// count is `p_intra * users_per_community`.
    pub p_intra: f64,
    /// Cross-community connection probability, same expected-count reading.
    pub p_inter: f64,
    pub feature_noise: f64,
    pub fake_fraction: f64,
    pub feature_dim: usize,
    pub label_mode: LabelMode,
    /// Share of each community's users that lean toward fake content.
    pub affinity_fraction: f64,
    /// Share of a post's intra-community neighbors drawn from the pool that
    /// matches its label (fake posts draw fake-leaning users and vice versa).
    pub affinity_bias: f64,
    /// Fake posts receive this fraction of the intra neighbor count; fake
    /// engagement is sparser than organic engagement with real posts.
    pub fake_degree_scale: f64,
    /// Feature-space offset applied to fake-leaning users.
    pub user_leaning_offset: f64,
    /// Feature-space offset applied to fake posts.
    pub post_label_offset: f64,
    pub centroid_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            communities: 2,
            users_per_community: 100,
            posts_per_community: 20,
            p_intra: 0.12,
            p_inter: 0.01,
            feature_noise: 0.25,
            fake_fraction: 0.3,
            feature_dim: 8,
            label_mode: LabelMode::PerCommunity,
            affinity_fraction: 0.5,
            affinity_bias: 0.85,
            fake_degree_scale: 0.5,
            user_leaning_offset: 1.5,
            post_label_offset: 0.0,
            centroid_scale: 2.0,
        }
    }
}

impl SyntheticSpec {
    /// Small spec for unit tests.
    pub fn tiny() -> Self {
        SyntheticSpec {
            communities: 2,
            users_per_community: 10,
            posts_per_community: 4,
            p_intra: 0.4,
            p_inter: 0.02,
            ..SyntheticSpec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("p_intra", self.p_intra),
            ("p_inter", self.p_inter),
            ("fake_fraction", self.fake_fraction),
            ("affinity_fraction", self.affinity_fraction),
            ("affinity_bias", self.affinity_bias),
            ("fake_degree_scale", self.fake_degree_scale),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SealError::BadProbability { name, value });
            }
        }
        if self.communities == 0 || self.users_per_community == 0 || self.posts_per_community == 0
        {
            return Err(SealError::Config("synthetic spec has an empty dimension".into()));
        }
        if self.feature_dim == 0 {
            return Err(SealError::Config("feature_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.communities * self.users_per_community
    }

    pub fn n_posts(&self) -> usize {
        self.communities * self.posts_per_community
    }

    /// Generates the planted graph. Deterministic for a fixed `(spec, seed)`.
    pub fn generate(&self, seed: u64) -> Result<BipartiteGraph> {
        self.validate()?;
        let mut r = rng::stream(seed, &["synth"]);
        let d = self.feature_dim;

        let mut centroids = Vec::with_capacity(self.communities);
        for _ in 0..self.communities {
            let mut c: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for x in &mut c {
                *x *= self.centroid_scale / norm;
            }
            centroids.push(c);
        }
        let mut fake_dir: Vec<f64> =
            (0..d).map(|_| r.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let norm = fake_dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in &mut fake_dir {
            *x /= norm;
        }

        let user_names: Vec<String> = (0..self.n_users()).map(|i| format!("u{i}")).collect();
        let post_names: Vec<String> = (0..self.n_posts()).map(|i| format!("p{i}")).collect();
        let user_comm = |u: usize| u / self.users_per_community;
        let post_comm = |p: usize| p / self.posts_per_community;

        // Labels.
        let mut labels = vec![0u8; self.n_posts()];
        match self.label_mode {
            LabelMode::PerCommunity => {
                let per = (self.fake_fraction * self.posts_per_community as f64).round() as usize;
                for c in 0..self.communities {
                    let mut idx: Vec<usize> = (0..self.posts_per_community)
                        .map(|i| c * self.posts_per_community + i)
                        .collect();
                    idx.shuffle(&mut r);
                    for &p in idx.iter().take(per) {
                        labels[p] = 1;
                    }
                }
            }
            LabelMode::ByCommunity => {
                for (p, l) in labels.iter_mut().enumerate() {
                    *l = (post_comm(p) % 2) as u8;
                }
            }
        }

        // Fake-leaning accounts per community.
        let mut leaning = vec![false; self.n_users()];
        let per = (self.affinity_fraction * self.users_per_community as f64).round() as usize;
        for c in 0..self.communities {
            let mut idx: Vec<usize> = (0..self.users_per_community)
                .map(|i| c * self.users_per_community + i)
                .collect();
            idx.shuffle(&mut r);
            for &u in idx.iter().take(per) {
                leaning[u] = true;
            }
        }

        // Features.
        let noise = self.feature_noise;
        let mut user_features = BTreeMap::new();
        for (u, name) in user_names.iter().enumerate() {
            let cent = &centroids[user_comm(u)];
            let offset = if leaning[u] { self.user_leaning_offset } else { 0.0 };
            let f: Vec<f64> = (0..d)
                .map(|i| {
                    cent[i]
                        + offset * fake_dir[i]
                        + noise * r.sample::<f64, _>(rand_distr::StandardNormal)
                })
                .collect();
            user_features.insert(name.clone(), f);
        }
        let mut post_features = BTreeMap::new();
        for (p, name) in post_names.iter().enumerate() {
            let cent = &centroids[post_comm(p)];
            let offset = if labels[p] == 1 { self.post_label_offset } else { 0.0 };
            let f: Vec<f64> = (0..d)
                .map(|i| {
                    cent[i]
                        + offset * fake_dir[i]
                        + noise * r.sample::<f64, _>(rand_distr::StandardNormal)
                })
                .collect();
            post_features.insert(name.clone(), f);
        }

        // Edges: exact per-post neighbor counts, identities sampled without
        // replacement from the matching pools.
        let mut edges = Vec::new();
        for p in 0..self.n_posts() {
            let c = post_comm(p);
            let mut matching: Vec<usize> = Vec::new();
            let mut opposite: Vec<usize> = Vec::new();
            let mut outside: Vec<usize> = Vec::new();
            for u in 0..self.n_users() {
                if user_comm(u) != c {
                    outside.push(u);
                } else if leaning[u] == (labels[p] == 1) {
                    matching.push(u);
                } else {
                    opposite.push(u);
                }
            }
            let k_intra = self.p_intra * self.users_per_community as f64;
            let k_intra = if labels[p] == 1 {
                (k_intra * self.fake_degree_scale).round() as usize
            } else {
                k_intra.round() as usize
            };
            let k_match = ((k_intra as f64) * self.affinity_bias).round() as usize;
            let k_opp = k_intra.saturating_sub(k_match);
            let k_cross =
                (self.p_inter * (self.n_users() - self.users_per_community) as f64).round()
                    as usize;

            let mut pick = |pool: &mut Vec<usize>, k: usize, edges: &mut Vec<EdgeSpec>| {
                pool.shuffle(&mut r);
                for &u in pool.iter().take(k.min(pool.len())) {
                    edges.push(EdgeSpec {
                        user: user_names[u].clone(),
                        post: post_names[p].clone(),
                        weight: None,
                    });
                }
            };
            pick(&mut matching, k_match, &mut edges);
            pick(&mut opposite, k_opp, &mut edges);
            pick(&mut outside, k_cross, &mut edges);
        }

        let label_map: BTreeMap<String, u8> = post_names
            .iter()
            .enumerate()
            .map(|(p, n)| (n.clone(), labels[p]))
            .collect();
        BipartiteGraph::build(
            &user_names,
            &post_names,
            &edges,
            &user_features,
            &post_features,
            &label_map,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = SyntheticSpec::tiny();
        let a = spec.generate(7).unwrap();
        let b = spec.generate(7).unwrap();
        let ea: Vec<_> = a.edges().iter().map(|e| (e.user, e.post)).collect();
        let eb: Vec<_> = b.edges().iter().map(|e| (e.user, e.post)).collect();
        assert_eq!(ea, eb);
        let c = spec.generate(8).unwrap();
        let ec: Vec<_> = c.edges().iter().map(|e| (e.user, e.post)).collect();
        assert_ne!(ea, ec);
    }

    #[test]
    fn planted_structure_keeps_edges_intra_community() {
        let spec = SyntheticSpec::tiny();
        let g = spec.generate(7).unwrap();
        let upc = spec.users_per_community as u32;
        let ppc = spec.posts_per_community as u32;
        let intra = g
            .edges()
            .iter()
            .filter(|e| e.user / upc == e.post / ppc)
            .count();
        assert!(intra as f64 >= 0.9 * g.edges().len() as f64);
        assert!(!g.edges().is_empty());
    }

    #[test]
    fn zero_fake_fraction_means_all_real() {
        let spec = SyntheticSpec { fake_fraction: 0.0, ..SyntheticSpec::tiny() };
        let g = spec.generate(3).unwrap();
        assert!((0..g.n_posts() as u32).all(|p| g.label(p) == 0));
    }

    #[test]
    fn by_community_labels_follow_communities() {
        let spec = SyntheticSpec { label_mode: LabelMode::ByCommunity, ..SyntheticSpec::tiny() };
        let g = spec.generate(3).unwrap();
        for p in 0..g.n_posts() as u32 {
            let comm = p as usize / spec.posts_per_community;
            assert_eq!(g.label(p), (comm % 2) as u8);
        }
    }

    #[test]
    fn rejects_bad_probability() {
        let spec = SyntheticSpec { p_intra: 1.5, ..SyntheticSpec::tiny() };
        assert!(matches!(
            spec.generate(1),
            Err(SealError::BadProbability { name: "p_intra", .. })
        ));
    }
}
