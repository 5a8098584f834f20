//! Random and DICE reference attacks, under the same budget accounting as
//! the guided attack: per-agent edge budgets, community-subgraph scope, and
//! end-of-episode success.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AttackConfig, AttackOutcome, EpisodeLog, TargetOutcome};
use crate::detector::{BlackBox, PerturbedGraph, PostAggregates};
use crate::error::{Result, SealError};
use crate::graph::{BipartiteGraph, PostIdx, UserIdx};
use crate::influence::AccountGroups;
use crate::rng;
use crate::tree::EncodingTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Uniformly random feasible (account, post) additions.
    Random,
    /// Prefers posts labeled differently from the target.
    Dice,
}

/// Runs the reference attack over every target and reports the success rate.
#[allow(clippy::too_many_arguments)]
pub fn baseline_attack(
    kind: BaselineKind,
    g: &BipartiteGraph,
    tree: &EncodingTree,
    groups: &AccountGroups,
    bb: &BlackBox,
    targets: &[PostIdx],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackOutcome> {
    if targets.is_empty() {
        return Err(SealError::Config("no targets".into()));
    }
    let agg = PostAggregates::compute(g);
    let t_max = cfg.t_max_for(groups);
    let k = cfg.extraction_level.unwrap_or(tree.height().saturating_sub(1));
    let kind_label = match kind {
        BaselineKind::Random => "random",
        BaselineKind::Dice => "dice",
    };

    let mut per_target = Vec::with_capacity(targets.len());
    let mut successes = 0usize;
    for &target in targets {
        let sub = tree.extract_subgraph(g, target, k)?;
        let target_name = g.post_name(target).to_string();
        let mut rng = rng::stream(seed, &[kind_label, &target_name]);
        let mut pg = PerturbedGraph::new(g, &agg);
        let clean_prob = bb.predict_proba(&pg, target);
        let mut target_prob = clean_prob;
        let target_label = g.label(target);
        let budgets = [groups.budgets.0, groups.budgets.1, groups.budgets.2];
        let mut used = [0usize; 3];
        let mut log = EpisodeLog {
            transitions: Vec::new(),
            added_edges: Vec::new(),
            first_success: None,
            exhausted_early: false,
            final_target_prob: clean_prob,
            success: false,
            total_reward: 0.0,
            strategy_counts: [0; 3],
        };
        for step in 0..t_max {
            let mut feasible: Vec<(usize, UserIdx, PostIdx)> = Vec::new();
            for (gi, group) in [&groups.bots, &groups.cyborgs, &groups.workers]
                .into_iter()
                .enumerate()
            {
                if used[gi] >= budgets[gi] {
                    continue;
                }
                for &u in group {
                    for &p in &sub.posts {
                        if !pg.has_edge(u, p) {
                            feasible.push((gi, u, p));
                        }
                    }
                }
            }
            if feasible.is_empty() {
                log.exhausted_early = true;
                break;
            }
            let pool: Vec<&(usize, UserIdx, PostIdx)> = match kind {
                BaselineKind::Random => feasible.iter().collect(),
                BaselineKind::Dice => {
                    let diff: Vec<&(usize, UserIdx, PostIdx)> = feasible
                        .iter()
                        .filter(|&&(_, _, p)| g.label(p) != target_label)
                        .collect();
                    if diff.is_empty() {
                        feasible.iter().collect()
                    } else {
                        diff
                    }
                }
            };
            let &&(gi, u, p) = &pool[rng.random_range(0..pool.len())];
            pg.add_edge(u, p)?;
            used[gi] += 1;
            log.added_edges
                .push((g.user_name(u).to_string(), g.post_name(p).to_string()));
            if p == target {
                target_prob = bb.predict_proba(&pg, p);
            }
            let flipped = (target_prob > 0.5) != (target_label == 1);
            if flipped && log.first_success.is_none() {
                log.first_success = Some(step);
            }
            if cfg.eval_early_stop && flipped {
                break;
            }
        }
        log.final_target_prob = target_prob;
        log.success = (target_prob > 0.5) != (target_label == 1);
        successes += log.success as usize;
        per_target.push(TargetOutcome {
            target: target_name,
            clean_prob,
            training: Vec::new(),
            eval: log,
        });
    }
    Ok(AttackOutcome {
        success_rate: successes as f64 / targets.len() as f64,
        per_target,
    })
}
