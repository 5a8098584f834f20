//! Graph ingest and serialization.
//!
//! CSV contracts:
//!   edges     `user_id,post_id[,weight]`
//!   labels    `post_id,label`
//!   features  `id,f0,f1,...,f{d-1}`
//!
//! The serialized graph is one JSON document holding users, posts, edges,
//! features and labels, suitable as a reproducible fixture.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BipartiteGraph, Edge, EdgeSpec};
use crate::error::{Result, SealError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDocument {
    pub users: Vec<String>,
    pub posts: Vec<String>,
    pub edges: Vec<Edge>,
    pub user_features: BTreeMap<String, Vec<f64>>,
    pub post_features: BTreeMap<String, Vec<f64>>,
    pub labels: BTreeMap<String, u8>,
}

impl BipartiteGraph {
    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            users: self.user_names.clone(),
            posts: self.post_names.clone(),
            edges: self.edges.clone(),
            user_features: self
                .user_names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), self.user_features[i].clone()))
                .collect(),
            post_features: self
                .post_names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), self.post_features[i].clone()))
                .collect(),
            labels: self
                .post_names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), self.labels[i]))
                .collect(),
        }
    }

    pub fn from_document(doc: &GraphDocument) -> Result<Self> {
        let edges: Vec<EdgeSpec> = doc
            .edges
            .iter()
            .map(|e| EdgeSpec {
                user: doc
                    .users
                    .get(e.user as usize)
                    .cloned()
                    .unwrap_or_else(|| format!("#{}", e.user)),
                post: doc
                    .posts
                    .get(e.post as usize)
                    .cloned()
                    .unwrap_or_else(|| format!("#{}", e.post)),
                weight: Some(e.weight),
            })
            .collect();
        BipartiteGraph::build(
            &doc.users,
            &doc.posts,
            &edges,
            &doc.user_features,
            &doc.post_features,
            &doc.labels,
        )
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let doc = self.to_document();
        let mut out = serde_json::to_vec_pretty(&doc)?;
        out.push(b'\n');
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_document(&doc)
    }

    /// Ingests the CSV triple. Users and posts are indexed in order of first
    /// appearance across the edge, label, then feature files.
    pub fn from_csv(
        edges_path: &Path,
        labels_path: &Path,
        user_features_path: &Path,
        post_features_path: &Path,
    ) -> Result<Self> {
        let mut users: Vec<String> = Vec::new();
        let mut posts: Vec<String> = Vec::new();
        let mut seen_users = std::collections::BTreeSet::new();
        let mut seen_posts = std::collections::BTreeSet::new();
        let mut note_user = |name: &str, users: &mut Vec<String>| {
            if seen_users.insert(name.to_string()) {
                users.push(name.to_string());
            }
        };
        let mut note_post = |name: &str, posts: &mut Vec<String>| {
            if seen_posts.insert(name.to_string()) {
                posts.push(name.to_string());
            }
        };

        let mut edges = Vec::new();
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(edges_path)?;
        for record in rdr.records() {
            let record = record?;
            let user = record
                .get(0)
                .ok_or_else(|| SealError::Config("edge row missing user_id".into()))?
                .trim()
                .to_string();
            let post = record
                .get(1)
                .ok_or_else(|| SealError::Config("edge row missing post_id".into()))?
                .trim()
                .to_string();
            let weight = match record.get(2) {
                Some(s) if !s.trim().is_empty() => Some(s.trim().parse::<f64>().map_err(|e| {
                    SealError::Config(format!("bad weight {s:?}: {e}"))
                })?),
                _ => None,
            };
            note_user(&user, &mut users);
            note_post(&post, &mut posts);
            edges.push(EdgeSpec { user, post, weight });
        }

        let mut labels = BTreeMap::new();
        let mut rdr = csv::Reader::from_path(labels_path)?;
        for record in rdr.records() {
            let record = record?;
            let post = record
                .get(0)
                .ok_or_else(|| SealError::Config("label row missing post_id".into()))?
                .trim()
                .to_string();
            let label: i64 = record
                .get(1)
                .ok_or_else(|| SealError::Config("label row missing label".into()))?
                .trim()
                .parse()
                .map_err(|e| SealError::Config(format!("bad label: {e}")))?;
            if !(0..=1).contains(&label) {
                return Err(SealError::BadLabel(label));
            }
            note_post(&post, &mut posts);
            labels.insert(post, label as u8);
        }

        let read_features = |path: &Path| -> Result<BTreeMap<String, Vec<f64>>> {
            let mut table = BTreeMap::new();
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
            for record in rdr.records() {
                let record = record?;
                let id = record
                    .get(0)
                    .ok_or_else(|| SealError::Config("feature row missing id".into()))?
                    .trim()
                    .to_string();
                let mut f = Vec::with_capacity(record.len().saturating_sub(1));
                for field in record.iter().skip(1) {
                    f.push(field.trim().parse::<f64>().map_err(|e| {
                        SealError::Config(format!("bad feature value {field:?}: {e}"))
                    })?);
                }
                table.insert(id, f);
            }
            Ok(table)
        };
        let user_features = read_features(user_features_path)?;
        let post_features = read_features(post_features_path)?;
        for id in user_features.keys() {
            note_user(id, &mut users);
        }
        for id in post_features.keys() {
            note_post(id, &mut posts);
        }

        BipartiteGraph::build(&users, &posts, &edges, &user_features, &post_features, &labels)
    }
}
