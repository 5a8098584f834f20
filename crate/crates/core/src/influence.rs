//! Account influence and malicious-account categorization.
//!
//! A user's influence is the adjusted entropy accumulated along the path from
//! the root of the encoding tree to the user's leaf: each non-root ancestor
//! contributes `-(g/V) * log2(c * vol/parent_vol)`. The adjusting parameter
//! `c` spreads otherwise-equal scores apart; `0 < c <= 2/e` keeps the
//! single-layer transform monotone in the degree (checked numerically by
//! [`verify_theorem41`]). Categorization sorts users by influence, slices the
//! ordering proportionally to the bot/cyborg/worker budgets, and samples each
//! tier from its slice.

use std::collections::BTreeMap;
use std::f64::consts::E;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};
use crate::graph::{BipartiteGraph, UserIdx};
use crate::rng;
use crate::tree::EncodingTree;

/// Largest adjusting parameter inside the monotone regime.
pub fn default_adjusting_parameter() -> f64 {
    2.0 / E
}

fn influence_term(cut: f64, vol: f64, parent_vol: f64, total: f64, c: f64) -> f64 {
    if cut <= 0.0 || vol <= 0.0 {
        0.0
    } else {
        -(cut / total) * (c * vol / parent_vol).log2()
    }
}

/// Path-sum influence of `user` under the encoding tree (Eq. 7 shape). With
/// `c = 1` this is the sum of node entropies along the root-to-leaf path.
pub fn influence(g: &BipartiteGraph, t: &EncodingTree, user: UserIdx, c: f64) -> Result<f64> {
    if c <= 0.0 {
        return Err(SealError::BadAdjustingParameter(c));
    }
    if user as usize >= g.n_users() {
        return Err(SealError::UnknownUser(format!("#{user}")));
    }
    let leaf = t.leaf_of(user);
    let total = t.total_volume();
    if total <= 0.0 {
        return Err(SealError::EmptyGraph);
    }
    let mut sum = 0.0;
    for id in t.path_from_root(leaf) {
        if let Some(parent) = t.node(id).parent {
            sum += influence_term(
                t.node(id).cut,
                t.node(id).volume,
                t.node(parent).volume,
                total,
                c,
            );
        }
    }
    Ok(sum)
}

/// Degenerate single-layer influence (Eq. 8 shape): depends only on the
/// user's weighted degree `d`: `-(d/V) * log2(c*d/V)`.
pub fn influence_single_layer(g: &BipartiteGraph, user: UserIdx, c: f64) -> Result<f64> {
    if c <= 0.0 {
        return Err(SealError::BadAdjustingParameter(c));
    }
    if user as usize >= g.n_users() {
        return Err(SealError::UnknownUser(format!("#{user}")));
    }
    let total = g.total_volume();
    if total <= 0.0 {
        return Err(SealError::EmptyGraph);
    }
    let d = g.degree(user)?;
    Ok(influence_term(d, d, total, total, c))
}

/// Influence of every user, in user-index order.
pub fn influence_table(g: &BipartiteGraph, t: &EncodingTree, c: f64) -> Result<Vec<f64>> {
    (0..g.n_users() as UserIdx).map(|u| influence(g, t, u, c)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem41Report {
    pub b: f64,
    pub c: f64,
    pub samples: usize,
    pub monotonic: bool,
    pub pdf_bound_violations: usize,
    /// `b / (1 - log2(e*c))`; infinite at the regime boundary `c = 2/e`.
    pub bound_value: f64,
    /// Largest |finite difference - closed form| at the interval endpoints.
    pub derivative_endpoint_error: f64,
    /// Count of sampled derivative values outside the closed-form range.
    pub derivative_range_violations: usize,
}

/// Monte Carlo check of the monotone-transform theorem: draws `x` uniformly
/// on `[1, b/2]`, maps it through `x' = -(x/b) log2(c x / b)`, and verifies
/// monotonicity, the density bound on `x'`, and the closed-form derivative
/// range `[(1/b) log2(2/(ec)), (1/b) log2(b/(ec))]`.
pub fn verify_theorem41(b: f64, c: f64, samples: usize, seed: u64) -> Result<Theorem41Report> {
    if b < 2.0 {
        return Err(SealError::BadTheoremBound(b));
    }
    if !(c > 0.0 && c <= 2.0 / E + 1e-15) {
        return Err(SealError::TheoremRegime(c));
    }
    let transform = |x: f64| -(x / b) * (c * x / b).log2();
    let derivative = |x: f64| (b / (E * c * x)).log2() / b;

    let mut r = rng::stream(seed, &["theorem41"]);
    let mut xs: Vec<f64> = (0..samples)
        .map(|_| 1.0 + (b / 2.0 - 1.0) * rand::Rng::random::<f64>(&mut r))
        .collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ys: Vec<f64> = xs.iter().map(|&x| transform(x)).collect();
    let monotonic = ys.windows(2).all(|w| w[1] > w[0]);

    // density bound via histogram of x'
    let denom = 1.0 - (E * c).log2();
    let bound_value = if denom > 0.0 { b / denom } else { f64::INFINITY };
    let lo = transform(1.0);
    let hi = transform(b / 2.0);
    let bins = 50usize;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &y in &ys {
        let i = (((y - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let mut pdf_bound_violations = 0;
    if bound_value.is_finite() && width > 0.0 {
        let max_expected = bound_value * samples as f64 * width;
        let tol = 3.0 * max_expected.max(1.0).sqrt();
        for &cnt in &counts {
            if cnt as f64 > max_expected + tol {
                pdf_bound_violations += 1;
            }
        }
    }

    // derivative endpoints: central finite differences vs closed forms
    let h = 1e-6 * (b / 2.0 - 1.0).max(1.0);
    let fd = |x: f64| (transform(x + h) - transform(x - h)) / (2.0 * h);
    let err_lo = (fd(1.0) - (b / (E * c)).log2() / b).abs();
    let err_hi = (fd(b / 2.0) - (2.0 / (E * c)).log2() / b).abs();
    let derivative_endpoint_error = err_lo.max(err_hi);

    let d_min = (2.0 / (E * c)).log2() / b;
    let d_max = (b / (E * c)).log2() / b;
    let slack = 1e-12 * (1.0 + d_max.abs());
    let derivative_range_violations = xs
        .iter()
        .filter(|&&x| {
            let d = derivative(x);
            d < d_min - slack || d > d_max + slack
        })
        .count();

    Ok(Theorem41Report {
        b,
        c,
        samples,
        monotonic,
        pdf_bound_violations,
        bound_value,
        derivative_endpoint_error,
        derivative_range_violations,
    })
}

/// Bot / cyborg / worker account tiers with their budgets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccountGroups {
    pub bots: Vec<UserIdx>,
    pub cyborgs: Vec<UserIdx>,
    pub workers: Vec<UserIdx>,
    pub budgets: (usize, usize, usize),
}

impl AccountGroups {
    pub fn all_accounts(&self) -> Vec<UserIdx> {
        let mut out = self.bots.clone();
        out.extend_from_slice(&self.cyborgs);
        out.extend_from_slice(&self.workers);
        out
    }

    pub fn group(&self, kind: AgentKind) -> &[UserIdx] {
        match kind {
            AgentKind::Bot => &self.bots,
            AgentKind::Cyborg => &self.cyborgs,
            AgentKind::Worker => &self.workers,
        }
    }

    pub fn budget(&self, kind: AgentKind) -> usize {
        match kind {
            AgentKind::Bot => self.budgets.0,
            AgentKind::Cyborg => self.budgets.1,
            AgentKind::Worker => self.budgets.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Bot,
    Cyborg,
    Worker,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Bot, AgentKind::Cyborg, AgentKind::Worker];

    pub fn index(self) -> usize {
        match self {
            AgentKind::Bot => 0,
            AgentKind::Cyborg => 1,
            AgentKind::Worker => 2,
        }
    }
}

/// Sorts users by influence ascending (ties by user index), slices the order
/// proportionally to the budgets, and samples each tier uniformly without
/// replacement from its slice. Deterministic per seed.
pub fn categorize(
    g: &BipartiteGraph,
    t: &EncodingTree,
    c: f64,
    budgets: (usize, usize, usize),
    seed: u64,
) -> Result<AccountGroups> {
    let scores = influence_table(g, t, c)?;
    categorize_by_scores(&scores, budgets, seed)
}

/// Core of Algorithm-style categorization, reusable with any score table.
pub fn categorize_by_scores(
    scores: &[f64],
    budgets: (usize, usize, usize),
    seed: u64,
) -> Result<AccountGroups> {
    let m = scores.len();
    let (db, dc, dw) = budgets;
    let total = db + dc + dw;
    if total > m {
        return Err(SealError::BudgetExceedsUsers(total, m));
    }
    if total == 0 {
        return Ok(AccountGroups { bots: vec![], cyborgs: vec![], workers: vec![], budgets });
    }
    let mut order: Vec<UserIdx> = (0..m as UserIdx).collect();
    order.sort_by(|&a, &b| {
        scores[a as usize]
            .partial_cmp(&scores[b as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    let i1 = m * db / total;
    let i2 = m * (db + dc) / total;
    let slices = [&order[..i1], &order[i1..i2], &order[i2..]];
    let mut out: [Vec<UserIdx>; 3] = [vec![], vec![], vec![]];
    let labels = ["bots", "cyborgs", "workers"];
    for (idx, (&slice, budget)) in slices.iter().zip([db, dc, dw]).enumerate() {
        if slice.len() < budget {
            return Err(SealError::InfeasibleBudget { slice: slice.len(), budget });
        }
        let mut pool = slice.to_vec();
        let mut r = rng::stream(seed, &["categorize", labels[idx]]);
        pool.shuffle(&mut r);
        pool.truncate(budget);
        pool.sort_unstable();
        out[idx] = pool;
    }
    let [bots, cyborgs, workers] = out;
    Ok(AccountGroups { bots, cyborgs, workers, budgets })
}

/// Serialized `groups.json`: external ids plus the full influence table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupsDocument {
    pub bots: Vec<String>,
    pub cyborgs: Vec<String>,
    pub workers: Vec<String>,
    pub influence: BTreeMap<String, f64>,
}

impl GroupsDocument {
    pub fn new(g: &BipartiteGraph, groups: &AccountGroups, scores: &[f64]) -> Self {
        let names = |ids: &[UserIdx]| ids.iter().map(|&u| g.user_name(u).to_string()).collect();
        GroupsDocument {
            bots: names(&groups.bots),
            cyborgs: names(&groups.cyborgs),
            workers: names(&groups.workers),
            influence: scores
                .iter()
                .enumerate()
                .map(|(u, &s)| (g.user_name(u as UserIdx).to_string(), s))
                .collect(),
        }
    }

    pub fn to_groups(&self, g: &BipartiteGraph) -> Result<AccountGroups> {
        let ids = |names: &[String]| -> Result<Vec<UserIdx>> {
            names.iter().map(|n| g.user_idx(n)).collect()
        };
        let bots = ids(&self.bots)?;
        let cyborgs = ids(&self.cyborgs)?;
        let workers = ids(&self.workers)?;
        let budgets = (bots.len(), cyborgs.len(), workers.len());
        Ok(AccountGroups { bots, cyborgs, workers, budgets })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
