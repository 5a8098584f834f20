//! Cooperative multi-agent attack against a black-box detector.
//!
//! For each target post, three agents (bots, cyborgs, workers) pick posts in
//! the target's community subgraph for their controlled accounts to engage
//! with. Per-account proposals are epsilon-greedy over a tabular Q function;
//! one account per agent is drawn by tree-entropy affinity with the target
//! (Eq-11 style weights), and one agent's action executes per step, drawn by
//! the group's total influence. Each new engagement perturbs an
//! episode-local overlay, the black box re-scores the community's fake
//! posts, and the executing agent's Q table absorbs the reward.
//!
//! An episode runs a fixed number of steps (budget-capped per agent); the
//! trained policy is then evaluated with exploration off, and the target
//! counts as attacked successfully when the detector misclassifies it under
//! the final perturbed graph.

mod baseline;
#[cfg(test)]
mod tests;

pub use baseline::{baseline_attack, BaselineKind};

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{BlackBox, PerturbedGraph, PostAggregates};
use crate::error::{Result, SealError};
use crate::graph::{BipartiteGraph, PostIdx, Subgraph, UserIdx};
use crate::influence::{AccountGroups, AgentKind};
use crate::rng;
use crate::tree::EncodingTree;

/// Fallback Eq-11 weight when the only common ancestor is the root.
pub const ROOT_ONLY_WEIGHT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Engage the target post itself.
    Direct,
    /// Engage a real post of the subgraph.
    Indirect,
    /// Engage another fake post of the subgraph.
    Feedback,
}

impl Strategy {
    pub fn index(self) -> usize {
        match self {
            Strategy::Direct => 0,
            Strategy::Indirect => 1,
            Strategy::Feedback => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StrategySet {
    pub direct: bool,
    pub indirect: bool,
    pub feedback: bool,
}

impl Default for StrategySet {
    fn default() -> Self {
        StrategySet { direct: true, indirect: true, feedback: true }
    }
}

impl StrategySet {
    pub fn only(s: Strategy) -> Self {
        StrategySet {
            direct: s == Strategy::Direct,
            indirect: s == Strategy::Indirect,
            feedback: s == Strategy::Feedback,
        }
    }

    pub fn allows(&self, s: Strategy) -> bool {
        match s {
            Strategy::Direct => self.direct,
            Strategy::Indirect => self.indirect,
            Strategy::Feedback => self.feedback,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Steps per episode; defaults to the total account budget.
    pub t_max: Option<usize>,
    /// Target-network sync interval, in training steps.
    pub t_up: usize,
    pub episodes: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub strategies: StrategySet,
    /// Pick the highest-influence active agent instead of sampling.
    pub argmax_aggregation: bool,
    /// Stop the evaluation episode at the first successful flip.
    pub eval_early_stop: bool,
    /// Extraction level for the associated subgraph; defaults to `K - 1`.
    pub extraction_level: Option<usize>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            t_max: None,
            t_up: 10,
            episodes: 150,
            gamma: 0.95,
            learning_rate: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            strategies: StrategySet::default(),
            argmax_aggregation: false,
            eval_early_stop: false,
            extraction_level: None,
        }
    }
}

impl AttackConfig {
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let horizon = (self.episodes as f64 * self.epsilon_decay_fraction).max(1.0);
        let frac = (episode as f64 / horizon).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    pub fn t_max_for(&self, groups: &AccountGroups) -> usize {
        self.t_max
            .unwrap_or(groups.budgets.0 + groups.budgets.1 + groups.budgets.2)
    }
}

/// Discretized environment state: target score in 10 bins, per-agent budget
/// fraction in 4 bins, per-strategy counts capped at 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackState {
    pub target_bin: u8,
    pub budget_bins: [u8; 3],
    pub strategy_counts: [u8; 3],
}

impl AttackState {
    pub fn observe(target_prob: f64, used: [usize; 3], budgets: [usize; 3], counts: [usize; 3]) -> Self {
        let target_bin = ((target_prob * 10.0) as u8).min(9);
        let mut budget_bins = [0u8; 3];
        for i in 0..3 {
            let frac = if budgets[i] == 0 { 1.0 } else { used[i] as f64 / budgets[i] as f64 };
            budget_bins[i] = ((frac * 4.0) as u8).min(3);
        }
        let strategy_counts = counts.map(|c| (c as u8).min(3));
        AttackState { target_bin, budget_bins, strategy_counts }
    }

    /// Dense code for tabular lookup.
    pub fn code(&self) -> u32 {
        let mut code = self.target_bin as u32;
        for b in self.budget_bins {
            code = code * 4 + b as u32;
        }
        for c in self.strategy_counts {
            code = code * 4 + c as u32;
        }
        code
    }
}

/// Tabular policy of one agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentPolicy {
    pub kind: AgentKind,
    pub accounts: Vec<UserIdx>,
    pub budget: usize,
    /// Q values keyed by (state code, post index in the subgraph).
    pub q: HashMap<(u32, u16), f64>,
    /// Lagged copy used for bootstrap targets.
    pub q_target: HashMap<(u32, u16), f64>,
}

impl AgentPolicy {
    pub fn new(kind: AgentKind, accounts: Vec<UserIdx>, budget: usize) -> Self {
        AgentPolicy { kind, accounts, budget, q: HashMap::new(), q_target: HashMap::new() }
    }

    fn q_value(&self, state: u32, action: u16) -> f64 {
        self.q.get(&(state, action)).copied().unwrap_or(0.0)
    }

    fn q_target_max(&self, state: u32, n_actions: u16) -> f64 {
        (0..n_actions)
            .map(|a| self.q_target.get(&(state, a)).copied().unwrap_or(0.0))
            .fold(f64::MIN, f64::max)
            .max(0.0)
    }

    /// One feasible post per active account: epsilon-greedy over Q, ties to
    /// the lowest post index. Errors when every account is out of feasible
    /// posts.
    pub fn propose(
        &self,
        state: u32,
        ctx: &TargetContext,
        pg: &PerturbedGraph<'_>,
        epsilon: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(UserIdx, u16)>> {
        let mut proposals = Vec::new();
        for &u in &self.accounts {
            let feasible: Vec<u16> = (0..ctx.posts.len() as u16)
                .filter(|&i| ctx.allowed[i as usize] && !pg.has_edge(u, ctx.posts[i as usize]))
                .collect();
            if feasible.is_empty() {
                continue;
            }
            let choice = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                feasible[rng.random_range(0..feasible.len())]
            } else {
                *feasible
                    .iter()
                    .max_by(|&&a, &&b| {
                        self.q_value(state, a)
                            .partial_cmp(&self.q_value(state, b))
                            .unwrap()
                            .then(b.cmp(&a)) // ties: lowest index wins
                    })
                    .unwrap()
            };
            proposals.push((u, choice));
        }
        if proposals.is_empty() {
            return Err(SealError::AgentExhausted);
        }
        Ok(proposals)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QTransition {
    pub state: u32,
    pub action: u16,
    pub reward: f64,
    pub next_state: u32,
    pub terminal: bool,
    pub n_actions: u16,
}

/// One tabular backup: `Q(s,a) += lr * (r + gamma * max_a' Qt(s',a') - Q(s,a))`
/// with no bootstrap on terminal transitions. Returns the TD error.
pub fn q_update(policy: &mut AgentPolicy, t: &QTransition, gamma: f64, lr: f64) -> f64 {
    let bootstrap = if t.terminal {
        0.0
    } else {
        gamma * policy.q_target_max(t.next_state, t.n_actions)
    };
    let q = policy.q_value(t.state, t.action);
    let td = t.reward + bootstrap - q;
    policy.q.insert((t.state, t.action), q + lr * td);
    td
}

/// Eq-11 sampling weight: cumulative entropy of the non-root tree nodes that
/// contain both the account and the target; the fallback covers the
/// root-only case (and zero-entropy lineages, keeping the weight positive).
pub fn sample_prob(
    g: &BipartiteGraph,
    t: &EncodingTree,
    user: UserIdx,
    target: PostIdx,
) -> Result<f64> {
    if user as usize >= g.n_users() {
        return Err(SealError::UnknownUser(format!("#{user}")));
    }
    if target as usize >= g.n_posts() {
        return Err(SealError::UnknownPost(format!("#{target}")));
    }
    let pu = t.path_from_root(t.leaf_of(user));
    let pp = t.path_from_root(t.leaf_of(g.post_vertex(target)));
    let mut sum = 0.0;
    for (i, (&a, &b)) in pu.iter().zip(&pp).enumerate() {
        if a != b {
            break;
        }
        if i > 0 {
            sum += t.node_entropy(a)?;
        }
    }
    Ok(if sum > 0.0 { sum } else { ROOT_ONLY_WEIGHT })
}

/// Per-target invariants shared by every episode: the community subgraph,
/// per-post strategy tags, the toggle mask, and per-account weights.
#[derive(Debug, Clone)]
pub struct TargetContext {
    pub target: PostIdx,
    pub subgraph: Subgraph,
    pub categories: Vec<Strategy>,
    pub allowed: Vec<bool>,
    /// Eq-11 weight per malicious account, keyed by user index.
    pub weights: HashMap<UserIdx, f64>,
}

impl TargetContext {
    pub fn build(
        g: &BipartiteGraph,
        tree: &EncodingTree,
        groups: &AccountGroups,
        target: PostIdx,
        strategies: StrategySet,
        extraction_level: Option<usize>,
    ) -> Result<Self> {
        let k = extraction_level.unwrap_or(tree.height().saturating_sub(1));
        let subgraph = tree.extract_subgraph(g, target, k)?;
        let categories: Vec<Strategy> = subgraph
            .posts
            .iter()
            .map(|&p| {
                if p == target {
                    Strategy::Direct
                } else if g.label(p) == 1 {
                    Strategy::Feedback
                } else {
                    Strategy::Indirect
                }
            })
            .collect();
        let allowed = categories.iter().map(|&c| strategies.allows(c)).collect();
        let mut weights = HashMap::new();
        for &u in groups.all_accounts().iter() {
            weights.insert(u, sample_prob(g, tree, u, target)?);
        }
        Ok(TargetContext { target, subgraph, categories, allowed, weights })
    }

    pub fn posts(&self) -> &[PostIdx] {
        &self.subgraph.posts
    }
}

// Named field access for readability below.
impl std::ops::Deref for TargetContext {
    type Target = Subgraph;
    fn deref(&self) -> &Subgraph {
        &self.subgraph
    }
}

/// Draws one account among an agent's proposals, weighted by Eq-11 affinity.
pub fn sample_agent_action(
    proposals: &[(UserIdx, u16)],
    ctx: &TargetContext,
    rng: &mut ChaCha8Rng,
) -> (UserIdx, u16) {
    let weights: Vec<f64> = proposals.iter().map(|(u, _)| ctx.weights[u]).collect();
    proposals[weighted_index(&weights, rng)]
}

fn weighted_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        draw -= w;
        if draw <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Collective action: one agent's sampled action wins, weighted by the total
/// influence of each agent's controlled accounts (or argmax of it).
pub fn aggregate(
    candidates: &[(AgentKind, (UserIdx, u16))],
    agent_influence: &[f64; 3],
    argmax: bool,
    rng: &mut ChaCha8Rng,
) -> (AgentKind, UserIdx, u16) {
    debug_assert!(!candidates.is_empty());
    let idx = if argmax {
        let mut best = 0;
        for i in 1..candidates.len() {
            if agent_influence[candidates[i].0.index()]
                > agent_influence[candidates[best].0.index()]
            {
                best = i;
            }
        }
        best
    } else {
        let weights: Vec<f64> = candidates
            .iter()
            .map(|(k, _)| agent_influence[k.index()])
            .collect();
        weighted_index(&weights, rng)
    };
    let (kind, (u, p)) = candidates[idx];
    (kind, u, p)
}

/// Eq-12 reward: 1 when the detector misclassifies the target; otherwise the
/// fraction of the other fake posts misclassified (0 when there are none).
pub fn reward_from_probs(
    target_prob: f64,
    target_label: u8,
    other_fake_probs: &[f64],
) -> f64 {
    let misclassified = |prob: f64, label: u8| (prob > 0.5) != (label == 1);
    if misclassified(target_prob, target_label) {
        return 1.0;
    }
    if other_fake_probs.is_empty() {
        return 0.0;
    }
    let flips = other_fake_probs.iter().filter(|&&p| misclassified(p, 1)).count();
    flips as f64 / other_fake_probs.len() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition {
    pub step: usize,
    pub state: u32,
    pub agent: AgentKind,
    pub user: String,
    pub post: String,
    pub strategy: Strategy,
    pub reward: f64,
    pub next_state: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub transitions: Vec<Transition>,
    pub added_edges: Vec<(String, String)>,
    pub first_success: Option<usize>,
    /// True when every agent ran out of feasible actions before `t_max`.
    pub exhausted_early: bool,
    pub final_target_prob: f64,
    pub success: bool,
    pub total_reward: f64,
    pub strategy_counts: [usize; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub total_reward: f64,
    pub first_success: Option<usize>,
    pub final_target_prob: f64,
    pub success: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub target: String,
    pub clean_prob: f64,
    pub training: Vec<EpisodeSummary>,
    pub eval: EpisodeLog,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub per_target: Vec<TargetOutcome>,
    pub success_rate: f64,
}

impl AttackOutcome {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Trained per-target policies, reusable for detector-hardening inference.
pub struct AttackRun {
    pub outcome: AttackOutcome,
    pub policies: BTreeMap<PostIdx, [AgentPolicy; 3]>,
}

struct EpisodeParams<'a> {
    bb: &'a BlackBox,
    g: &'a BipartiteGraph,
    agg: &'a PostAggregates,
    ctx: &'a TargetContext,
    agent_influence: &'a [f64; 3],
    cfg: &'a AttackConfig,
    t_max: usize,
    epsilon: f64,
    train: bool,
    early_stop: bool,
    log_transitions: bool,
}

struct EpisodeResult {
    log: EpisodeLog,
    added: Vec<(UserIdx, PostIdx)>,
}

fn run_episode(
    p: &EpisodeParams<'_>,
    policies: &mut [AgentPolicy; 3],
    step_counter: &mut usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeResult> {
    let mut pg = PerturbedGraph::new(p.g, p.agg);
    let mut used = [0usize; 3];
    let mut counts = [0usize; 3];
    let budgets = [policies[0].budget, policies[1].budget, policies[2].budget];
    let n_actions = p.ctx.posts().len() as u16;

    // fake-post probabilities, target first; refreshed per touched post
    let mut fake_probs: Vec<f64> = p
        .ctx
        .fake_posts
        .iter()
        .map(|&q| p.bb.predict_proba(&pg, q))
        .collect();
    let mut target_prob = if p.ctx.fake_posts.first() == Some(&p.ctx.target) {
        fake_probs[0]
    } else {
        p.bb.predict_proba(&pg, p.ctx.target)
    };
    let target_label = p.g.label(p.ctx.target);

    let mut log = EpisodeLog {
        transitions: Vec::new(),
        added_edges: Vec::new(),
        first_success: None,
        exhausted_early: false,
        final_target_prob: target_prob,
        success: false,
        total_reward: 0.0,
        strategy_counts: [0; 3],
    };
    let mut added = Vec::new();

    for step in 0..p.t_max {
        let state = AttackState::observe(target_prob, used, budgets, counts).code();
        let mut candidates: Vec<(AgentKind, (UserIdx, u16))> = Vec::new();
        for policy in policies.iter() {
            if used[policy.kind.index()] >= policy.budget {
                continue;
            }
            match policy.propose(state, p.ctx, &pg, p.epsilon, rng) {
                Ok(proposals) => {
                    let pick = sample_agent_action(&proposals, p.ctx, rng);
                    candidates.push((policy.kind, pick));
                }
                Err(SealError::AgentExhausted) => continue,
                Err(e) => return Err(e),
            }
        }
        if candidates.is_empty() {
            log.exhausted_early = true;
            break;
        }
        let (kind, user, action) =
            aggregate(&candidates, p.agent_influence, p.cfg.argmax_aggregation, rng);
        let post = p.ctx.posts()[action as usize];
        pg.add_edge(user, post)?;
        added.push((user, post));
        used[kind.index()] += 1;
        let strategy = p.ctx.categories[action as usize];
        counts[strategy.index()] += 1;
        log.strategy_counts[strategy.index()] += 1;

        // refresh the touched post's score
        if let Some(pos) = p.ctx.fake_posts.iter().position(|&q| q == post) {
            fake_probs[pos] = p.bb.predict_proba(&pg, post);
        }
        if post == p.ctx.target {
            target_prob = p.bb.predict_proba(&pg, post);
        }
        let other_probs: Vec<f64> = p
            .ctx
            .fake_posts
            .iter()
            .zip(&fake_probs)
            .filter(|(&q, _)| q != p.ctx.target)
            .map(|(_, &prob)| prob)
            .collect();
        let reward = reward_from_probs(target_prob, target_label, &other_probs);
        log.total_reward += reward;
        let flipped = (target_prob > 0.5) != (target_label == 1);
        if flipped && log.first_success.is_none() {
            log.first_success = Some(step);
        }

        let next_state = AttackState::observe(target_prob, used, budgets, counts).code();
        if p.log_transitions {
            log.transitions.push(Transition {
                step,
                state,
                agent: kind,
                user: p.g.user_name(user).to_string(),
                post: p.g.post_name(post).to_string(),
                strategy,
                reward,
                next_state,
            });
        }
        if p.train {
            let transition = QTransition {
                state,
                action,
                reward,
                next_state,
                terminal: step + 1 == p.t_max,
                n_actions,
            };
            q_update(
                &mut policies[kind.index()],
                &transition,
                p.cfg.gamma,
                p.cfg.learning_rate,
            );
            *step_counter += 1;
            if *step_counter % p.cfg.t_up == 0 {
                for policy in policies.iter_mut() {
                    policy.q_target = policy.q.clone();
                }
            }
        }
        if p.early_stop && flipped {
            break;
        }
    }

    log.final_target_prob = target_prob;
    log.success = (target_prob > 0.5) != (target_label == 1);
    log.added_edges = added
        .iter()
        .map(|&(u, q)| (p.g.user_name(u).to_string(), p.g.post_name(q).to_string()))
        .collect();
    Ok(EpisodeResult { log, added })
}

fn agent_influence_sums(groups: &AccountGroups, influence: &[f64]) -> [f64; 3] {
    let sum = |ids: &[UserIdx]| ids.iter().map(|&u| influence[u as usize]).sum::<f64>();
    [sum(&groups.bots), sum(&groups.cyborgs), sum(&groups.workers)]
}

/// Trains per-target policies and reports the final-policy success rate.
#[allow(clippy::too_many_arguments)]
pub fn run_attack(
    g: &BipartiteGraph,
    tree: &EncodingTree,
    groups: &AccountGroups,
    influence: &[f64],
    bb: &BlackBox,
    targets: &[PostIdx],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackRun> {
    use rayon::prelude::*;

    if targets.is_empty() {
        return Err(SealError::Config("no targets".into()));
    }
    for &t in targets {
        if t as usize >= g.n_posts() {
            return Err(SealError::UnknownPost(format!("#{t}")));
        }
    }
    let agg = PostAggregates::compute(g);
    let agent_influence = agent_influence_sums(groups, influence);

    let mut runs: Vec<(PostIdx, TargetOutcome, [AgentPolicy; 3])> = targets
        .par_iter()
        .map(|&target| -> Result<_> {
            let ctx = TargetContext::build(
                g,
                tree,
                groups,
                target,
                cfg.strategies,
                cfg.extraction_level,
            )?;
            let t_max = cfg.t_max_for(groups);
            let mut policies = [
                AgentPolicy::new(AgentKind::Bot, groups.bots.clone(), groups.budgets.0),
                AgentPolicy::new(AgentKind::Cyborg, groups.cyborgs.clone(), groups.budgets.1),
                AgentPolicy::new(AgentKind::Worker, groups.workers.clone(), groups.budgets.2),
            ];
            let target_name = g.post_name(target).to_string();
            let mut step_counter = 0usize;
            let mut training = Vec::with_capacity(cfg.episodes);
            let clean_view = PerturbedGraph::new(g, &agg);
            let clean_prob = bb.predict_proba(&clean_view, target);
            for episode in 0..cfg.episodes {
                let mut rng =
                    rng::stream(seed, &["attack", &target_name, "episode", &episode.to_string()]);
                let params = EpisodeParams {
                    bb,
                    g,
                    agg: &agg,
                    ctx: &ctx,
                    agent_influence: &agent_influence,
                    cfg,
                    t_max,
                    epsilon: cfg.epsilon_at(episode),
                    train: true,
                    early_stop: false,
                    log_transitions: false,
                };
                let res = run_episode(&params, &mut policies, &mut step_counter, &mut rng)?;
                training.push(EpisodeSummary {
                    total_reward: res.log.total_reward,
                    first_success: res.log.first_success,
                    final_target_prob: res.log.final_target_prob,
                    success: res.log.success,
                });
            }
            let mut rng = rng::stream(seed, &["attack", &target_name, "eval"]);
            let params = EpisodeParams {
                bb,
                g,
                agg: &agg,
                ctx: &ctx,
                agent_influence: &agent_influence,
                cfg,
                t_max,
                epsilon: 0.0,
                train: false,
                early_stop: cfg.eval_early_stop,
                log_transitions: true,
            };
            let res = run_episode(&params, &mut policies, &mut step_counter, &mut rng)?;
            let outcome = TargetOutcome {
                target: target_name,
                clean_prob,
                training,
                eval: res.log,
            };
            Ok((target, outcome, policies))
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|(t, _, _)| targets.iter().position(|&x| x == *t).unwrap());

    let successes = runs.iter().filter(|(_, o, _)| o.eval.success).count();
    let outcome = AttackOutcome {
        success_rate: successes as f64 / runs.len() as f64,
        per_target: runs.iter().map(|(_, o, _)| o.clone()).collect(),
    };
    let policies = runs.into_iter().map(|(t, _, p)| (t, p)).collect();
    Ok(AttackRun { outcome, policies })
}

/// Detector-hardening enrichment: replays the trained policies greedily over
/// every target, accumulating manipulations into one shared edge set (each
/// target's episode sees the previous targets' additions).
#[allow(clippy::too_many_arguments)]
pub fn generate_manipulations(
    g: &BipartiteGraph,
    tree: &EncodingTree,
    groups: &AccountGroups,
    influence: &[f64],
    bb: &BlackBox,
    run: &AttackRun,
    targets: &[PostIdx],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Vec<(UserIdx, PostIdx)>> {
    let agg = PostAggregates::compute(g);
    let agent_influence = agent_influence_sums(groups, influence);
    let t_max = cfg.t_max_for(groups);
    let mut accumulated = PerturbedGraph::new(g, &agg);
    let mut edges = Vec::new();
    for &target in targets {
        let Some(policies) = run.policies.get(&target) else { continue };
        let ctx = TargetContext::build(g, tree, groups, target, cfg.strategies, cfg.extraction_level)?;
        let target_name = g.post_name(target).to_string();
        let mut rng = rng::stream(seed, &["defend", &target_name]);
        // Episode over the accumulated overlay: feasibility accounts for all
        // previously added edges, so no duplicates arise across targets.
        let mut used = [0usize; 3];
        let budgets = [policies[0].budget, policies[1].budget, policies[2].budget];
        let mut counts = [0usize; 3];
        let mut target_prob = bb.predict_proba(&accumulated, target);
        for _ in 0..t_max {
            let state = AttackState::observe(target_prob, used, budgets, counts).code();
            let mut candidates = Vec::new();
            for policy in policies.iter() {
                if used[policy.kind.index()] >= policy.budget {
                    continue;
                }
                match policy.propose(state, &ctx, &accumulated, 0.0, &mut rng) {
                    Ok(proposals) => {
                        let pick = sample_agent_action(&proposals, &ctx, &mut rng);
                        candidates.push((policy.kind, pick));
                    }
                    Err(SealError::AgentExhausted) => continue,
                    Err(e) => return Err(e),
                }
            }
            if candidates.is_empty() {
                break;
            }
            let (kind, user, action) =
                aggregate(&candidates, &agent_influence, cfg.argmax_aggregation, &mut rng);
            let post = ctx.posts()[action as usize];
            accumulated.add_edge(user, post)?;
            edges.push((user, post));
            used[kind.index()] += 1;
            counts[ctx.categories[action as usize].index()] += 1;
            if post == target {
                target_prob = bb.predict_proba(&accumulated, post);
            }
            if cfg.eval_early_stop && (target_prob > 0.5) != (g.label(target) == 1) {
                break;
            }
        }
    }
    Ok(edges)
}
