//! Message-passing binary classifier over the bipartite graph.
//!
//! Each post aggregates its engaging users' features as a weighted mean,
//! concatenates its own features, and feeds the result through one tanh
//! hidden layer and a sigmoid head. The weighted-mean normalization keeps
//! edge effects local: adding an engagement changes only the scores of posts
//! incident to it, which is what makes structure attacks and their analysis
//! tractable here.
//!
//! Training is full-batch gradient descent on the summed cross-entropy over
//! a stratified train split, with L2 weight decay. A frozen model exposes
//! only per-post probabilities through [`BlackBox`].

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};
use crate::graph::{edge_weight, BipartiteGraph, Edge, PostIdx, UserIdx};
use crate::rng;

const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { hidden: 16, learning_rate: 0.02, epochs: 300, weight_decay: 5e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Hidden weights, `hidden x 2*dim` (aggregate then self features).
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub dim: usize,
    pub hidden: usize,
    pub frozen: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub accuracy: f64,
    pub f1: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

/// Stratified 60/20/20 post split, seeded; the same `(seed)` always yields
/// the same split so refined models are scored on the held-out posts their
/// predecessor was.
#[derive(Debug, Clone)]
pub struct PostSplit {
    pub train: Vec<PostIdx>,
    pub val: Vec<PostIdx>,
    pub test: Vec<PostIdx>,
}

pub fn stratified_split(g: &BipartiteGraph, seed: u64) -> PostSplit {
    let mut fakes: Vec<PostIdx> = (0..g.n_posts() as PostIdx).filter(|&p| g.label(p) == 1).collect();
    let mut reals: Vec<PostIdx> = (0..g.n_posts() as PostIdx).filter(|&p| g.label(p) == 0).collect();
    let mut r = rng::stream(seed, &["detector", "split"]);
    use rand::seq::SliceRandom;
    fakes.shuffle(&mut r);
    reals.shuffle(&mut r);
    let mut split = PostSplit { train: vec![], val: vec![], test: vec![] };
    for part in [fakes, reals] {
        let a = (0.6 * part.len() as f64) as usize;
        let b = (0.8 * part.len() as f64) as usize;
        split.train.extend_from_slice(&part[..a]);
        split.val.extend_from_slice(&part[a..b]);
        split.test.extend_from_slice(&part[b..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split
}

/// Weighted sums of neighbor-user features per post (numerator and total
/// weight); divide to get the mean aggregate. Computed once per graph and
/// shared across perturbation overlays.
#[derive(Debug, Clone)]
pub struct PostAggregates {
    pub num: Vec<Vec<f64>>,
    pub den: Vec<f64>,
}

impl PostAggregates {
    pub fn compute(g: &BipartiteGraph) -> Self {
        let d = g.feature_dim();
        let mut num = vec![vec![0.0; d]; g.n_posts()];
        let mut den = vec![0.0; g.n_posts()];
        for e in g.edges() {
            let f = g.user_features(e.user);
            let acc = &mut num[e.post as usize];
            for i in 0..d {
                acc[i] += e.weight * f[i];
            }
            den[e.post as usize] += e.weight;
        }
        PostAggregates { num, den }
    }
}

/// Episode-local overlay: the base graph plus added user-post engagements.
/// Added edges get Eq-6 weights from the endpoint features. The base graph
/// is never mutated.
#[derive(Debug, Clone)]
pub struct PerturbedGraph<'a> {
    base: &'a BipartiteGraph,
    base_agg: &'a PostAggregates,
    added: Vec<Edge>,
    added_set: HashSet<(UserIdx, PostIdx)>,
    delta_num: Vec<Option<Vec<f64>>>,
    delta_den: Vec<f64>,
}

impl<'a> PerturbedGraph<'a> {
    pub fn new(base: &'a BipartiteGraph, base_agg: &'a PostAggregates) -> Self {
        PerturbedGraph {
            base,
            base_agg,
            added: Vec::new(),
            added_set: HashSet::new(),
            delta_num: vec![None; base.n_posts()],
            delta_den: vec![0.0; base.n_posts()],
        }
    }

    pub fn base(&self) -> &BipartiteGraph {
        self.base
    }

    pub fn has_edge(&self, u: UserIdx, p: PostIdx) -> bool {
        self.base.has_edge(u, p) || self.added_set.contains(&(u, p))
    }

    /// Adds an engagement; the weight comes from the endpoint features.
    pub fn add_edge(&mut self, u: UserIdx, p: PostIdx) -> Result<f64> {
        if self.has_edge(u, p) {
            return Err(SealError::DuplicateEdge(
                self.base.user_name(u).to_string(),
                self.base.post_name(p).to_string(),
            ));
        }
        let w = edge_weight(self.base.user_features(u), self.base.post_features(p))?;
        self.added_set.insert((u, p));
        self.added.push(Edge { user: u, post: p, weight: w });
        let f = self.base.user_features(u);
        let d = self.base.feature_dim();
        let delta = self.delta_num[p as usize].get_or_insert_with(|| vec![0.0; d]);
        for i in 0..d {
            delta[i] += w * f[i];
        }
        self.delta_den[p as usize] += w;
        Ok(w)
    }

    pub fn added_edges(&self) -> &[Edge] {
        &self.added
    }

    /// Post aggregate under the perturbation: `(numerator, total weight)`.
    pub fn aggregate(&self, p: PostIdx) -> (Vec<f64>, f64) {
        let mut num = self.base_agg.num[p as usize].clone();
        if let Some(delta) = &self.delta_num[p as usize] {
            for (a, b) in num.iter_mut().zip(delta) {
                *a += b;
            }
        }
        (num, self.base_agg.den[p as usize] + self.delta_den[p as usize])
    }
}

impl DetectorModel {
    /// Seeded uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, &["detector", "init"]);
        let a1 = 1.0 / ((2 * dim) as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        DetectorModel {
            w1: (0..hidden)
                .map(|_| (0..2 * dim).map(|_| r.random_range(-a1..a1)).collect())
                .collect(),
            b1: (0..hidden).map(|_| r.random_range(-a1..a1)).collect(),
            w2: (0..hidden).map(|_| r.random_range(-a2..a2)).collect(),
            b2: r.random_range(-a2..a2),
            dim,
            hidden,
            frozen: false,
        }
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// Score one post from its self features and neighborhood aggregate.
    pub fn score(&self, x_post: &[f64], agg_num: &[f64], agg_den: f64) -> f64 {
        let d = self.dim;
        let mut z = vec![0.0; 2 * d];
        if agg_den > 0.0 {
            for i in 0..d {
                z[i] = agg_num[i] / agg_den;
            }
        }
        z[d..].copy_from_slice(x_post);
        let mut logit = self.b2;
        for j in 0..self.hidden {
            let pre: f64 =
                self.w1[j].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + self.b1[j];
            logit += self.w2[j] * pre.tanh();
        }
        sigmoid(logit)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Forward pass over every post of the graph.
pub fn forward(model: &DetectorModel, g: &BipartiteGraph) -> Result<Vec<f64>> {
    if g.feature_dim() != model.dim {
        return Err(SealError::DimensionMismatch { expected: model.dim, got: g.feature_dim() });
    }
    let agg = PostAggregates::compute(g);
    Ok((0..g.n_posts())
        .map(|p| model.score(g.post_features(p as PostIdx), &agg.num[p], agg.den[p]))
        .collect())
}

/// Eq-1 style summed cross-entropy over `posts`, natural-log convention,
/// probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn ce_loss(model: &DetectorModel, g: &BipartiteGraph, posts: &[PostIdx]) -> Result<f64> {
    if posts.is_empty() {
        return Err(SealError::EmptyPostSubset);
    }
    let probs = forward(model, g)?;
    Ok(posts
        .iter()
        .map(|&p| {
            let prob = probs[p as usize].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if g.label(p) == 1 {
                -prob.ln()
            } else {
                -(1.0 - prob).ln()
            }
        })
        .sum())
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Analytic gradient of the summed cross-entropy over `posts` (no weight
/// decay), for training and for the finite-difference checks.
pub fn ce_gradient(
    model: &DetectorModel,
    g: &BipartiteGraph,
    posts: &[PostIdx],
) -> Result<(f64, Gradients)> {
    if posts.is_empty() {
        return Err(SealError::EmptyPostSubset);
    }
    let agg = PostAggregates::compute(g);
    let inputs: Vec<Vec<f64>> = (0..g.n_posts())
        .map(|p| {
            let d = model.dim;
            let mut z = vec![0.0; 2 * d];
            if agg.den[p] > 0.0 {
                for i in 0..d {
                    z[i] = agg.num[p][i] / agg.den[p];
                }
            }
            z[d..].copy_from_slice(g.post_features(p as PostIdx));
            z
        })
        .collect();
    let mut grads = Gradients {
        w1: vec![vec![0.0; 2 * model.dim]; model.hidden],
        b1: vec![0.0; model.hidden],
        w2: vec![0.0; model.hidden],
        b2: 0.0,
    };
    let mut loss = 0.0;
    for &p in posts {
        let z = &inputs[p as usize];
        let mut h = vec![0.0; model.hidden];
        for (j, row) in model.w1.iter().enumerate() {
            let pre: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + model.b1[j];
            h[j] = pre.tanh();
        }
        let logit = model.w2.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + model.b2;
        let prob = sigmoid(logit);
        let y = g.label(p) as f64;
        let clamped = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss += if g.label(p) == 1 { -clamped.ln() } else { -(1.0 - clamped).ln() };
        let dlogit = prob - y;
        grads.b2 += dlogit;
        for j in 0..model.hidden {
            grads.w2[j] += dlogit * h[j];
            let dh = dlogit * model.w2[j] * (1.0 - h[j] * h[j]);
            grads.b1[j] += dh;
            for (gi, zi) in grads.w1[j].iter_mut().zip(z) {
                *gi += dh * zi;
            }
        }
    }
    Ok((loss, grads))
}

fn apply_gradients(model: &mut DetectorModel, grads: &Gradients, lr: f64, wd: f64) {
    for (row, grow) in model.w1.iter_mut().zip(&grads.w1) {
        for (w, gw) in row.iter_mut().zip(grow) {
            *w -= lr * (gw + wd * *w);
        }
    }
    for (b, gb) in model.b1.iter_mut().zip(&grads.b1) {
        *b -= lr * gb;
    }
    for (w, gw) in model.w2.iter_mut().zip(&grads.w2) {
        *w -= lr * (gw + wd * *w);
    }
    model.b2 -= lr * grads.b2;
}

fn check_both_classes(g: &BipartiteGraph, posts: &[PostIdx]) -> Result<()> {
    let fake = posts.iter().filter(|&&p| g.label(p) == 1).count();
    let real = posts.len() - fake;
    if fake == 0 || real == 0 {
        return Err(SealError::DegenerateLabels { fake, real });
    }
    Ok(())
}

/// Full-batch training from a fresh seeded initialization.
pub fn train(
    g: &BipartiteGraph,
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<(DetectorModel, TrainReport)> {
    let model = DetectorModel::init(g.feature_dim(), cfg.hidden, seed);
    train_from(model, g, cfg, seed)
}

/// Continues training an existing model on `g`. The split derives from the
/// same seed, so held-out posts stay held out across refinement.
pub fn train_from(
    mut model: DetectorModel,
    g: &BipartiteGraph,
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<(DetectorModel, TrainReport)> {
    model.frozen = false;
    let split = stratified_split(g, seed);
    check_both_classes(g, &split.train)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, grads) = ce_gradient(&model, g, &split.train)?;
        epoch_losses.push(loss);
        apply_gradients(&mut model, &grads, cfg.learning_rate, cfg.weight_decay);
    }
    let report = evaluate(&model, g, &split, epoch_losses)?;
    Ok((model, report))
}

fn evaluate(
    model: &DetectorModel,
    g: &BipartiteGraph,
    split: &PostSplit,
    epoch_losses: Vec<f64>,
) -> Result<TrainReport> {
    let probs = forward(model, g)?;
    let mut correct = 0usize;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for &p in &split.test {
        let pred = u8::from(probs[p as usize] > 0.5);
        let truth = g.label(p);
        if pred == truth {
            correct += 1;
        }
        match (pred, truth) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let accuracy = correct as f64 / split.test.len().max(1) as f64;
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok(TrainReport {
        epoch_losses,
        accuracy,
        f1,
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
    })
}

/// Retrains on the graph enriched with attack engagements. Edges must be new
/// user-post pairs; the result is frozen and ready for black-box queries.
pub fn refine_with_attacks(
    model: &DetectorModel,
    g: &BipartiteGraph,
    manipulated_edges: &[(UserIdx, PostIdx)],
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<(DetectorModel, TrainReport)> {
    let mut seen = HashSet::new();
    for &(u, p) in manipulated_edges {
        if g.has_edge(u, p) || !seen.insert((u, p)) {
            return Err(SealError::ManipulatedEdgeExists(
                g.user_name(u).to_string(),
                g.post_name(p).to_string(),
            ));
        }
    }
    let enriched = enrich(g, manipulated_edges)?;
    let (model, report) = train_from(model.clone(), &enriched, cfg, seed)?;
    Ok((model.freeze(), report))
}

/// Builds an owned graph with the manipulated engagements appended.
pub fn enrich(g: &BipartiteGraph, edges: &[(UserIdx, PostIdx)]) -> Result<BipartiteGraph> {
    let mut doc = g.to_document();
    for &(u, p) in edges {
        let w = edge_weight(g.user_features(u), g.post_features(p))?;
        doc.edges.push(Edge { user: u, post: p, weight: w });
    }
    BipartiteGraph::from_document(&doc)
}

/// Frozen-model prediction surface: the only thing an attacker can call.
pub struct BlackBox {
    model: DetectorModel,
}

impl BlackBox {
    pub fn new(model: DetectorModel) -> Result<Self> {
        if !model.frozen {
            return Err(SealError::UnfrozenModel);
        }
        Ok(BlackBox { model })
    }

    /// Probability that `post` is fake under the (possibly perturbed) graph.
    pub fn predict_proba(&self, view: &PerturbedGraph<'_>, post: PostIdx) -> f64 {
        let (num, den) = view.aggregate(post);
        self.model.score(view.base().post_features(post), &num, den)
    }
}

#[cfg(test)]
mod tests;
