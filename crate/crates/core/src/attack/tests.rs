use approx::assert_abs_diff_eq;

use super::*;
use crate::detector::{train, DetectorConfig};
use crate::graph::{LabelMode, SyntheticSpec};
use crate::influence::{categorize, default_adjusting_parameter, influence_table};

fn fixture() -> (BipartiteGraph, EncodingTree) {
    let spec = SyntheticSpec {
        communities: 2,
        users_per_community: 20,
        posts_per_community: 8,
        p_intra: 0.3,
        p_inter: 0.02,
        ..SyntheticSpec::default()
    };
    let g = spec.generate(3).unwrap();
    let tree = EncodingTree::optimize(&g, 3, 1e-9).unwrap();
    (g, tree)
}

fn trained_blackbox(g: &BipartiteGraph, seed: u64) -> BlackBox {
    let cfg = DetectorConfig { epochs: 150, ..DetectorConfig::default() };
    let (model, _) = train(g, &cfg, seed).unwrap();
    BlackBox::new(model.freeze()).unwrap()
}

#[test]
fn sample_prob_fallback_and_ancestor_sum() {
    let (g, tree) = fixture();
    // find a fake target and users inside/outside its root-child community
    let target = (0..g.n_posts() as PostIdx).find(|&p| g.label(p) == 1).unwrap();
    let tv = g.post_vertex(target);
    let root = tree.root();
    let root_child_of = |v| {
        let path = tree.path_from_root(tree.leaf_of(v));
        path.get(1).copied()
    };
    let target_comm = root_child_of(tv);
    let mut inside = None;
    let mut outside = None;
    for u in 0..g.n_users() as UserIdx {
        if root_child_of(u) == target_comm {
            inside.get_or_insert(u);
        } else {
            outside.get_or_insert(u);
        }
    }
    let (inside, outside) = (inside.unwrap(), outside.unwrap());
    // cross-community pair shares only the root
    assert_eq!(sample_prob(&g, &tree, outside, target).unwrap(), ROOT_ONLY_WEIGHT);
    // same-community weight is the entropy sum along shared ancestors, > 0
    let w_in = sample_prob(&g, &tree, inside, target).unwrap();
    assert!(w_in > 0.0);
    let _ = root;
    assert!(sample_prob(&g, &tree, 10_000, target).is_err());
}

#[test]
fn deeper_shared_lineage_gives_larger_weight() {
    let (g, tree) = fixture();
    let target = (0..g.n_posts() as PostIdx).find(|&p| g.label(p) == 1).unwrap();
    let tv = g.post_vertex(target);
    let tpath = tree.path_from_root(tree.leaf_of(tv));
    if tpath.len() < 4 {
        // height-2 tree: no deeper lineage to compare on this fixture
        return;
    }
    let shared_depth = |u: UserIdx| {
        let upath = tree.path_from_root(tree.leaf_of(u));
        upath
            .iter()
            .zip(&tpath)
            .take_while(|(a, b)| a == b)
            .count()
    };
    let mut deep = None;
    let mut shallow = None;
    for u in 0..g.n_users() as UserIdx {
        let d = shared_depth(u);
        if d >= 3 {
            deep.get_or_insert(u);
        } else if d == 2 {
            shallow.get_or_insert(u);
        }
    }
    if let (Some(deep), Some(shallow)) = (deep, shallow) {
        let wd = sample_prob(&g, &tree, deep, target).unwrap();
        let ws = sample_prob(&g, &tree, shallow, target).unwrap();
        assert!(
            wd > ws,
            "deeper lineage {wd} should outweigh shallower {ws}"
        );
    }
}

#[test]
fn state_discretization_is_pure_and_bounded() {
    let s = AttackState::observe(0.999, [5, 2, 0], [20, 10, 4], [9, 1, 0]);
    assert_eq!(s.target_bin, 9);
    assert_eq!(s.strategy_counts, [3, 1, 0]);
    let s2 = AttackState::observe(0.999, [5, 2, 0], [20, 10, 4], [9, 1, 0]);
    assert_eq!(s.code(), s2.code());
    // zero-budget agent reads as spent
    let s3 = AttackState::observe(0.0, [0, 0, 0], [0, 10, 4], [0, 0, 0]);
    assert_eq!(s3.budget_bins[0], 3);
}

#[test]
fn propose_breaks_ties_toward_lowest_post_index() {
    let (g, tree) = fixture();
    let groups = categorize(&g, &tree, default_adjusting_parameter(), (4, 2, 1), 5).unwrap();
    let target = (0..g.n_posts() as PostIdx).find(|&p| g.label(p) == 1).unwrap();
    let ctx = TargetContext::build(&g, &tree, &groups, target, StrategySet::default(), None).unwrap();
    let agg = PostAggregates::compute(&g);
    let pg = PerturbedGraph::new(&g, &agg);
    let policy = AgentPolicy::new(AgentKind::Bot, groups.bots.clone(), 4);
    let mut rng = rng::stream(0, &["tie"]);
    let proposals = policy.propose(0, &ctx, &pg, 0.0, &mut rng).unwrap();
    for (u, idx) in proposals {
        // all-zero Q: the lowest feasible index must win
        let first_feasible = (0..ctx.posts().len() as u16)
            .find(|&i| ctx.allowed[i as usize] && !pg.has_edge(u, ctx.posts()[i as usize]))
            .unwrap();
        assert_eq!(idx, first_feasible);
    }
}

#[test]
fn propose_with_full_exploration_is_roughly_uniform() {
    let (g, tree) = fixture();
    let groups = categorize(&g, &tree, default_adjusting_parameter(), (1, 0, 0), 5).unwrap();
    let target = (0..g.n_posts() as PostIdx).find(|&p| g.label(p) == 1).unwrap();
    let ctx = TargetContext::build(&g, &tree, &groups, target, StrategySet::default(), None).unwrap();
    let agg = PostAggregates::compute(&g);
    let pg = PerturbedGraph::new(&g, &agg);
    let policy = AgentPolicy::new(AgentKind::Bot, groups.bots.clone(), 1);
    let mut rng = rng::stream(1, &["uniform"]);
    let u = groups.bots[0];
    let feasible: Vec<u16> = (0..ctx.posts().len() as u16)
        .filter(|&i| !pg.has_edge(u, ctx.posts()[i as usize]))
        .collect();
    let mut counts = std::collections::HashMap::new();
    let draws = 20_000;
    for _ in 0..draws {
        let p = policy.propose(0, &ctx, &pg, 1.0, &mut rng).unwrap();
        *counts.entry(p[0].1).or_insert(0usize) += 1;
    }
    let expect = draws as f64 / feasible.len() as f64;
    for &idx in &feasible {
        let got = counts.get(&idx).copied().unwrap_or(0) as f64;
        assert!(
            (got - expect).abs() < 5.0 * expect.sqrt() + 5.0,
            "index {idx}: {got} vs {expect}"
        );
    }
}

#[test]
fn agent_exhaustion_is_an_error() {
    let (g, tree) = fixture();
    let groups = categorize(&g, &tree, default_adjusting_parameter(), (1, 0, 0), 5).unwrap();
    let target = (0..g.n_posts() as PostIdx).find(|&p| g.label(p) == 1).unwrap();
    let ctx = TargetContext::build(&g, &tree, &groups, target, StrategySet::default(), None).unwrap();
    let agg = PostAggregates::compute(&g);
    let mut pg = PerturbedGraph::new(&g, &agg);
    let u = groups.bots[0];
    for &p in ctx.posts() {
        if !pg.has_edge(u, p) {
            pg.add_edge(u, p).unwrap();
        }
    }
    let policy = AgentPolicy::new(AgentKind::Bot, vec![u], 1);
    let mut rng = rng::stream(2, &["exhaust"]);
    assert!(matches!(
        policy.propose(0, &ctx, &pg, 0.0, &mut rng),
        Err(SealError::AgentExhausted)
    ));
}

#[test]
fn weighted_account_sampling_matches_weight_ratio() {
    // two accounts with weights 0.03 and 0.01: the first should win ~75%
    let (g, tree) = fixture();
    let groups = categorize(&g, &tree, default_adjusting_parameter(), (2, 0, 0), 7).unwrap();
    let target = (0..g.n_posts() as PostIdx).find(|&p| g.label(p) == 1).unwrap();
    let mut ctx =
        TargetContext::build(&g, &tree, &groups, target, StrategySet::default(), None).unwrap();
    let (a, b) = (groups.bots[0], groups.bots[1]);
    ctx.weights.insert(a, 0.03);
    ctx.weights.insert(b, 0.01);
    let proposals = vec![(a, 0u16), (b, 1u16)];
    let mut rng = rng::stream(3, &["weighted"]);
    let draws = 10_000;
    let mut first = 0usize;
    for _ in 0..draws {
        if sample_agent_action(&proposals, &ctx, &mut rng).0 == a {
            first += 1;
        }
    }
    let frac = first as f64 / draws as f64;
    assert!((frac - 0.75).abs() < 0.02, "frequency {frac}");
}

#[test]
fn single_active_account_is_chosen_with_probability_one() {
    let (g, tree) = fixture();
    let groups = categorize(&g, &tree, default_adjusting_parameter(), (1, 0, 0), 7).unwrap();
    let target = (0..g.n_posts() as PostIdx).find(|&p| g.label(p) == 1).unwrap();
    let ctx = TargetContext::build(&g, &tree, &groups, target, StrategySet::default(), None).unwrap();
    let u = groups.bots[0];
    let mut rng = rng::stream(4, &["single"]);
    for _ in 0..100 {
        assert_eq!(sample_agent_action(&[(u, 2)], &ctx, &mut rng), (u, 2));
    }
}

#[test]
fn aggregation_frequencies_follow_influence_shares() {
    // worker group holding ~70% of influence acts ~70% of the time
    let candidates = vec![
        (AgentKind::Bot, (0u32, 0u16)),
        (AgentKind::Cyborg, (1u32, 0u16)),
        (AgentKind::Worker, (2u32, 0u16)),
    ];
    let infl = [0.2, 0.1, 0.7];
    let mut rng = rng::stream(5, &["agg"]);
    let draws = 10_000usize;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        let (kind, _, _) = aggregate(&candidates, &infl, false, &mut rng);
        counts[kind.index()] += 1;
    }
    let worker_frac = counts[2] as f64 / draws as f64;
    assert!((worker_frac - 0.7).abs() < 0.02, "worker share {worker_frac}");
    // chi-square goodness of fit at df=2: p > 0.01 means chi2 < 9.21
    let mut chi2 = 0.0;
    for i in 0..3 {
        let expect = infl[i] * draws as f64;
        chi2 += (counts[i] as f64 - expect).powi(2) / expect;
    }
    assert!(chi2 < 9.21, "chi-square {chi2}");
    // argmax mode always picks the strongest agent
    let (kind, _, _) = aggregate(&candidates, &infl, true, &mut rng);
    assert_eq!(kind, AgentKind::Worker);
}

#[test]
fn reward_cases() {
    // target flipped: reward 1 regardless of the others
    assert_eq!(reward_from_probs(0.3, 1, &[0.9, 0.9]), 1.0);
    // target holding, 2 of 4 other fakes flipped: 0.5
    assert_eq!(reward_from_probs(0.9, 1, &[0.3, 0.4, 0.8, 0.9]), 0.5);
    // single fake post, target holding: 0 without panicking
    assert_eq!(reward_from_probs(0.9, 1, &[]), 0.0);
    // real-labeled target flips upward
    assert_eq!(reward_from_probs(0.7, 0, &[]), 1.0);
}

#[test]
fn q_update_examples_and_fixed_point() {
    let mut policy = AgentPolicy::new(AgentKind::Bot, vec![0], 1);
    // terminal transition with reward 1: target is exactly 1, TD = 1 - Q
    let td = q_update(
        &mut policy,
        &QTransition { state: 0, action: 0, reward: 1.0, next_state: 1, terminal: true, n_actions: 4 },
        0.95,
        0.1,
    );
    assert_abs_diff_eq!(td, 1.0, epsilon = 1e-12);

    // gamma = 0 ignores the target network entirely
    let mut policy = AgentPolicy::new(AgentKind::Bot, vec![0], 1);
    policy.q_target.insert((1, 0), 100.0);
    let td = q_update(
        &mut policy,
        &QTransition { state: 0, action: 0, reward: 0.5, next_state: 1, terminal: false, n_actions: 1 },
        0.0,
        0.1,
    );
    assert_abs_diff_eq!(td, 0.5, epsilon = 1e-12);

    // two-state chain with constant reward converges to r / (1 - gamma)
    let (r, gamma, lr) = (0.4, 0.9, 0.2);
    let mut policy = AgentPolicy::new(AgentKind::Bot, vec![0], 1);
    let mut step = 0usize;
    for _ in 0..20_000 {
        for (s, s2) in [(0u32, 1u32), (1, 0)] {
            q_update(
                &mut policy,
                &QTransition { state: s, action: 0, reward: r, next_state: s2, terminal: false, n_actions: 1 },
                gamma,
                lr,
            );
            step += 1;
            if step % 10 == 0 {
                policy.q_target = policy.q.clone();
            }
        }
    }
    let expect = r / (1.0 - gamma);
    assert_abs_diff_eq!(policy.q_value(0, 0), expect, epsilon = 1e-3);
    assert_abs_diff_eq!(policy.q_value(1, 0), expect, epsilon = 1e-3);
}

fn attack_setup(
    episodes: usize,
) -> (BipartiteGraph, EncodingTree, AccountGroups, Vec<f64>, BlackBox, Vec<PostIdx>, AttackConfig) {
    let spec = SyntheticSpec {
        communities: 2,
        users_per_community: 30,
        posts_per_community: 8,
        ..SyntheticSpec::default()
    };
    let g = spec.generate(11).unwrap();
    let tree = EncodingTree::optimize(&g, 2, 1e-9).unwrap();
    let c = default_adjusting_parameter();
    let groups = categorize(&g, &tree, c, (6, 3, 2), 11).unwrap();
    let influence = influence_table(&g, &tree, c).unwrap();
    let bb = trained_blackbox(&g, 11);
    let targets: Vec<PostIdx> = (0..g.n_posts() as PostIdx)
        .filter(|&p| g.label(p) == 1)
        .take(3)
        .collect();
    let cfg = AttackConfig { episodes, ..AttackConfig::default() };
    (g, tree, groups, influence, bb, targets, cfg)
}

#[test]
fn attack_respects_budgets_and_never_duplicates_edges() {
    let (g, tree, groups, influence, bb, targets, cfg) = attack_setup(6);
    let run = run_attack(&g, &tree, &groups, &influence, &bb, &targets, &cfg, 21).unwrap();
    for outcome in &run.outcome.per_target {
        let mut seen = std::collections::HashSet::new();
        let mut per_agent = [0usize; 3];
        for (u_name, p_name) in &outcome.eval.added_edges {
            let u = g.user_idx(u_name).unwrap();
            let p = g.post_idx(p_name).unwrap();
            assert!(!g.has_edge(u, p), "edge already in base graph");
            assert!(seen.insert((u, p)), "duplicate added edge");
            let gi = if groups.bots.contains(&u) {
                0
            } else if groups.cyborgs.contains(&u) {
                1
            } else {
                assert!(groups.workers.contains(&u));
                2
            };
            per_agent[gi] += 1;
        }
        assert!(per_agent[0] <= groups.budgets.0);
        assert!(per_agent[1] <= groups.budgets.1);
        assert!(per_agent[2] <= groups.budgets.2);
        // rewards stay in [0, 1]
        for tr in &outcome.eval.transitions {
            assert!((0.0..=1.0).contains(&tr.reward));
        }
    }
}

#[test]
fn attack_is_deterministic_per_seed() {
    let (g, tree, groups, influence, bb, targets, cfg) = attack_setup(4);
    let a = run_attack(&g, &tree, &groups, &influence, &bb, &targets, &cfg, 33).unwrap();
    let b = run_attack(&g, &tree, &groups, &influence, &bb, &targets, &cfg, 33).unwrap();
    assert_eq!(
        serde_json::to_string(&a.outcome).unwrap(),
        serde_json::to_string(&b.outcome).unwrap()
    );
    let c = run_attack(&g, &tree, &groups, &influence, &bb, &targets, &cfg, 34).unwrap();
    assert_ne!(
        serde_json::to_string(&a.outcome).unwrap(),
        serde_json::to_string(&c.outcome).unwrap()
    );
}

#[test]
fn disabling_a_strategy_produces_no_actions_with_that_tag() {
    let (g, tree, groups, influence, bb, targets, mut cfg) = attack_setup(4);
    cfg.strategies = StrategySet { direct: true, indirect: false, feedback: true };
    let run = run_attack(&g, &tree, &groups, &influence, &bb, &targets, &cfg, 5).unwrap();
    for outcome in &run.outcome.per_target {
        assert_eq!(outcome.eval.strategy_counts[Strategy::Indirect.index()], 0);
        for tr in &outcome.eval.transitions {
            assert_ne!(tr.strategy, Strategy::Indirect);
        }
    }
}

#[test]
fn baselines_run_and_are_deterministic() {
    let (g, tree, groups, _influence, bb, targets, cfg) = attack_setup(4);
    for kind in [BaselineKind::Random, BaselineKind::Dice] {
        let a = baseline_attack(kind, &g, &tree, &groups, &bb, &targets, &cfg, 9).unwrap();
        let b = baseline_attack(kind, &g, &tree, &groups, &bb, &targets, &cfg, 9).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert!((0.0..=1.0).contains(&a.success_rate));
        for o in &a.per_target {
            assert!(o.eval.added_edges.len() <= cfg.t_max_for(&groups));
        }
    }
}

#[test]
fn dice_prefers_differently_labeled_posts() {
    let (g, tree, groups, _influence, bb, targets, cfg) = attack_setup(4);
    let out = baseline_attack(BaselineKind::Dice, &g, &tree, &groups, &bb, &targets, &cfg, 13).unwrap();
    for o in &out.per_target {
        let target_label = g.label(g.post_idx(&o.target).unwrap());
        let mut same = 0usize;
        for (_, p_name) in &o.eval.added_edges {
            if g.label(g.post_idx(p_name).unwrap()) == target_label {
                same += 1;
            }
        }
        // same-label edges only appear once differently-labeled pairs run out
        let diff_capacity: usize = {
            let all = groups.all_accounts();
            let k = tree.height() - 1;
            let sub = tree.extract_subgraph(&g, g.post_idx(&o.target).unwrap(), k).unwrap();
            sub.posts
                .iter()
                .filter(|&&p| g.label(p) != target_label)
                .map(|&p| all.iter().filter(|&&u| !g.has_edge(u, p)).count())
                .sum()
        };
        if diff_capacity >= o.eval.added_edges.len() {
            assert_eq!(same, 0, "DICE picked a same-label post while others remained");
        }
    }
}

#[test]
fn zero_steps_reports_clean_misclassification() {
    let (g, tree, groups, influence, bb, targets, mut cfg) = attack_setup(2);
    cfg.t_max = Some(0);
    let run = run_attack(&g, &tree, &groups, &influence, &bb, &targets, &cfg, 1).unwrap();
    let agg = PostAggregates::compute(&g);
    let view = PerturbedGraph::new(&g, &agg);
    let clean_rate = targets
        .iter()
        .filter(|&&t| (bb.predict_proba(&view, t) > 0.5) != (g.label(t) == 1))
        .count() as f64
        / targets.len() as f64;
    assert_eq!(run.outcome.success_rate, clean_rate);
    let base = baseline_attack(BaselineKind::Random, &g, &tree, &groups, &bb, &targets, &cfg, 1).unwrap();
    assert_eq!(base.success_rate, clean_rate);
}

#[test]
fn manipulations_accumulate_without_duplicates() {
    let (g, tree, groups, influence, bb, targets, cfg) = attack_setup(4);
    let run = run_attack(&g, &tree, &groups, &influence, &bb, &targets, &cfg, 3).unwrap();
    let edges =
        generate_manipulations(&g, &tree, &groups, &influence, &bb, &run, &targets, &cfg, 3)
            .unwrap();
    let mut seen = std::collections::HashSet::new();
    for &(u, p) in &edges {
        assert!(!g.has_edge(u, p));
        assert!(seen.insert((u, p)), "duplicate across accumulated targets");
    }
    assert!(!edges.is_empty());
}
