use std::collections::BTreeMap;

use approx::assert_abs_diff_eq;

use super::*;
use crate::graph::{EdgeSpec, LabelMode, SyntheticSpec};

fn tiny_graph(
    user_features: Vec<Vec<f64>>,
    post_features: Vec<Vec<f64>>,
    labels: Vec<u8>,
    edges: &[(usize, usize, f64)],
) -> BipartiteGraph {
    let users: Vec<String> = (0..user_features.len()).map(|i| format!("u{i}")).collect();
    let posts: Vec<String> = (0..post_features.len()).map(|i| format!("p{i}")).collect();
    let specs: Vec<EdgeSpec> = edges
        .iter()
        .map(|&(u, p, w)| EdgeSpec {
            user: format!("u{u}"),
            post: format!("p{p}"),
            weight: Some(w),
        })
        .collect();
    let uf: BTreeMap<String, Vec<f64>> = users
        .iter()
        .cloned()
        .zip(user_features)
        .collect();
    let pf: BTreeMap<String, Vec<f64>> = posts
        .iter()
        .cloned()
        .zip(post_features)
        .collect();
    let lm: BTreeMap<String, u8> = posts.iter().cloned().zip(labels).collect();
    BipartiteGraph::build(&users, &posts, &specs, &uf, &pf, &lm).unwrap()
}

fn zero_model(dim: usize, hidden: usize) -> DetectorModel {
    DetectorModel {
        w1: vec![vec![0.0; 2 * dim]; hidden],
        b1: vec![0.0; hidden],
        w2: vec![0.0; hidden],
        b2: 0.0,
        dim,
        hidden,
        frozen: false,
    }
}

#[test]
fn zero_weights_score_half_everywhere() {
    let g = tiny_graph(
        vec![vec![1.0, 0.0]],
        vec![vec![0.0, 1.0], vec![1.0, 1.0]],
        vec![1, 0],
        &[(0, 0, 1.0)],
    );
    let model = zero_model(2, 4);
    for p in forward(&model, &g).unwrap() {
        assert_eq!(p, 0.5);
    }
}

#[test]
fn duplicate_post_gets_identical_score() {
    // p0 and p1 share features and neighborhood
    let g = tiny_graph(
        vec![vec![1.0, 0.2]],
        vec![vec![0.3, 1.0], vec![0.3, 1.0]],
        vec![1, 1],
        &[(0, 0, 0.8), (0, 1, 0.8)],
    );
    let model = DetectorModel::init(2, 8, 3);
    let probs = forward(&model, &g).unwrap();
    assert_eq!(probs[0], probs[1]);
}

#[test]
fn hand_computed_forward_pass() {
    // one user, one post, hidden width 1, fixed small weights
    let g = tiny_graph(
        vec![vec![0.5, -0.25]],
        vec![vec![0.1, 0.2]],
        vec![1],
        &[(0, 0, 0.6)],
    );
    let model = DetectorModel {
        w1: vec![vec![0.1, -0.2, 0.3, 0.4]],
        b1: vec![0.05],
        w2: vec![0.7],
        b2: -0.1,
        dim: 2,
        hidden: 1,
        frozen: false,
    };
    // aggregate = (0.6*[0.5,-0.25]) / 0.6 = [0.5,-0.25]; z = [0.5,-0.25,0.1,0.2]
    let pre = 0.1 * 0.5 - 0.2 * (-0.25) + 0.3 * 0.1 + 0.4 * 0.2 + 0.05;
    let logit = 0.7 * pre.tanh() - 0.1;
    let expect = 1.0 / (1.0 + (-logit as f64).exp());
    let got = forward(&model, &g).unwrap()[0];
    assert_abs_diff_eq!(got, expect, epsilon = 1e-15);
}

#[test]
fn isolated_post_uses_self_features_only() {
    let g = tiny_graph(
        vec![vec![1.0, 0.0]],
        vec![vec![0.2, 0.4]],
        vec![0],
        &[],
    );
    let model = DetectorModel::init(2, 4, 1);
    let z_self_only = forward(&model, &g).unwrap()[0];
    // aggregate slot is zero; score must equal scoring with explicit zeros
    let direct = model.score(&[0.2, 0.4], &[0.0, 0.0], 0.0);
    assert_eq!(z_self_only, direct);
}

#[test]
fn ce_loss_examples() {
    let g = tiny_graph(
        vec![vec![1.0, 0.0]],
        vec![vec![0.0, 1.0]],
        vec![1],
        &[(0, 0, 1.0)],
    );
    // zero model scores 0.5 -> loss = ln 2
    let model = zero_model(2, 4);
    assert_abs_diff_eq!(ce_loss(&model, &g, &[0]).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
    assert!(matches!(ce_loss(&model, &g, &[]), Err(SealError::EmptyPostSubset)));

    // two posts at p ~= 0.8 with labels {1, 0}: -ln 0.8 - ln 0.2
    let g2 = tiny_graph(
        vec![vec![1.0, 0.0]],
        vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        vec![1, 0],
        &[(0, 0, 1.0), (0, 1, 1.0)],
    );
    // craft a model scoring exactly 0.8: logit = ln(0.8/0.2)
    let mut m = zero_model(2, 1);
    m.b2 = (0.8f64 / 0.2).ln();
    let loss = ce_loss(&m, &g2, &[0, 1]).unwrap();
    assert_abs_diff_eq!(loss, -(0.8f64.ln()) - (0.2f64.ln()), epsilon = 1e-12);
    assert_abs_diff_eq!(loss, 1.8326, epsilon = 1e-4);
}

#[test]
fn clamped_confident_predictions_cost_about_1e7() {
    let g = tiny_graph(
        vec![vec![1.0, 0.0]],
        vec![vec![0.0, 1.0]],
        vec![1],
        &[(0, 0, 1.0)],
    );
    let mut m = zero_model(2, 1);
    m.b2 = 50.0; // saturates the sigmoid; clamp takes over
    let loss = ce_loss(&m, &g, &[0]).unwrap();
    assert!(loss > 0.0 && loss < 2e-7, "{loss}");
}

#[test]
fn gradient_matches_finite_differences() {
    let spec = SyntheticSpec {
        communities: 2,
        users_per_community: 6,
        posts_per_community: 4,
        p_intra: 0.5,
        p_inter: 0.05,
        feature_dim: 3,
        ..SyntheticSpec::default()
    };
    for seed in 0..5 {
        let g = spec.generate(seed).unwrap();
        let model = DetectorModel::init(3, 4, seed);
        let posts: Vec<PostIdx> = (0..g.n_posts() as PostIdx).collect();
        let (_, grads) = ce_gradient(&model, &g, &posts).unwrap();
        let eps = 1e-5;
        let mut check = |get: &mut dyn FnMut(&mut DetectorModel) -> &mut f64, analytic: f64| {
            let mut mp = model.clone();
            *get(&mut mp) += eps;
            let lp = ce_loss(&mp, &g, &posts).unwrap();
            let mut mm = model.clone();
            *get(&mut mm) -= eps;
            let lm = ce_loss(&mm, &g, &posts).unwrap();
            let numeric = (lp - lm) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "analytic {analytic} vs numeric {numeric} (rel {rel})");
        };
        for j in 0..model.hidden {
            for i in 0..2 * model.dim {
                check(&mut |m: &mut DetectorModel| &mut m.w1[j][i], grads.w1[j][i]);
            }
            check(&mut |m: &mut DetectorModel| &mut m.b1[j], grads.b1[j]);
            check(&mut |m: &mut DetectorModel| &mut m.w2[j], grads.w2[j]);
        }
        check(&mut |m: &mut DetectorModel| &mut m.b2, grads.b2);
    }
}

#[test]
fn training_learns_the_planted_community_labels() {
    let spec = SyntheticSpec {
        label_mode: LabelMode::ByCommunity,
        ..SyntheticSpec::default()
    };
    let g = spec.generate(0).unwrap();
    let (_, report) = train(&g, &DetectorConfig::default(), 0).unwrap();
    assert!(report.accuracy >= 0.9, "accuracy {}", report.accuracy);
    assert!(report.f1 > 0.0);
}

#[test]
fn zero_epochs_returns_initialization() {
    let g = SyntheticSpec::tiny().generate(1).unwrap();
    let cfg = DetectorConfig { epochs: 0, ..DetectorConfig::default() };
    let (m, _) = train(&g, &cfg, 42).unwrap();
    let init = DetectorModel::init(g.feature_dim(), cfg.hidden, 42);
    assert_eq!(
        serde_json::to_string(&m).unwrap(),
        serde_json::to_string(&init).unwrap()
    );
}

#[test]
fn training_is_bitwise_deterministic() {
    let g = SyntheticSpec::tiny().generate(2).unwrap();
    let cfg = DetectorConfig { epochs: 40, ..DetectorConfig::default() };
    let (a, _) = train(&g, &cfg, 7).unwrap();
    let (b, _) = train(&g, &cfg, 7).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn training_rejects_single_class_data() {
    let spec = SyntheticSpec { fake_fraction: 0.0, ..SyntheticSpec::tiny() };
    let g = spec.generate(3).unwrap();
    assert!(matches!(
        train(&g, &DetectorConfig::default(), 1),
        Err(SealError::DegenerateLabels { .. })
    ));
}

#[test]
fn loss_decreases_monotonically_with_small_learning_rate() {
    let g = SyntheticSpec::tiny().generate(5).unwrap();
    let cfg = DetectorConfig {
        epochs: 60,
        learning_rate: 1e-3,
        weight_decay: 0.0,
        ..DetectorConfig::default()
    };
    let (_, report) = train(&g, &cfg, 3).unwrap();
    for w in report.epoch_losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "loss rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn permutation_of_user_ids_leaves_scores_unchanged() {
    let g = SyntheticSpec::tiny().generate(8).unwrap();
    let model = DetectorModel::init(g.feature_dim(), 8, 1);
    let probs = forward(&model, &g).unwrap();

    // rebuild the graph with users listed in reverse order
    let doc = g.to_document();
    let mut users_rev = doc.users.clone();
    users_rev.reverse();
    let remap: BTreeMap<&String, u32> = users_rev
        .iter()
        .enumerate()
        .map(|(i, n)| (n, i as u32))
        .collect();
    let mut doc2 = doc.clone();
    doc2.users = users_rev.clone();
    for e in &mut doc2.edges {
        e.user = remap[&doc.users[e.user as usize]];
    }
    let g2 = BipartiteGraph::from_document(&doc2).unwrap();
    let probs2 = forward(&model, &g2).unwrap();
    for (a, b) in probs.iter().zip(&probs2) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn added_edge_only_moves_incident_post() {
    let g = SyntheticSpec::tiny().generate(9).unwrap();
    let (model, _) = train(&g, &DetectorConfig { epochs: 50, ..Default::default() }, 2).unwrap();
    let frozen = model.freeze();
    let bb = BlackBox::new(frozen).unwrap();
    let agg = PostAggregates::compute(&g);

    let clean = PerturbedGraph::new(&g, &agg);
    let baseline: Vec<f64> = (0..g.n_posts() as PostIdx)
        .map(|p| bb.predict_proba(&clean, p))
        .collect();

    // find a non-edge and add it
    let (u, p) = (0..g.n_users() as UserIdx)
        .flat_map(|u| (0..g.n_posts() as PostIdx).map(move |p| (u, p)))
        .find(|&(u, p)| !g.has_edge(u, p))
        .unwrap();
    let mut pg = PerturbedGraph::new(&g, &agg);
    pg.add_edge(u, p).unwrap();
    for q in 0..g.n_posts() as PostIdx {
        let now = bb.predict_proba(&pg, q);
        if q == p {
            assert_ne!(now, baseline[q as usize], "incident post should move");
        } else {
            assert_eq!(now, baseline[q as usize], "non-incident post moved");
        }
    }
    // duplicate add is rejected
    assert!(pg.add_edge(u, p).is_err());
}

#[test]
fn black_box_requires_frozen_model() {
    let model = zero_model(2, 2);
    assert!(matches!(BlackBox::new(model), Err(SealError::UnfrozenModel)));
}

#[test]
fn unperturbed_black_box_matches_forward() {
    let g = SyntheticSpec::tiny().generate(4).unwrap();
    let (model, _) = train(&g, &DetectorConfig { epochs: 30, ..Default::default() }, 5).unwrap();
    let probs = forward(&model, &g).unwrap();
    let bb = BlackBox::new(model.freeze()).unwrap();
    let agg = PostAggregates::compute(&g);
    let view = PerturbedGraph::new(&g, &agg);
    for p in 0..g.n_posts() as PostIdx {
        assert_abs_diff_eq!(bb.predict_proba(&view, p), probs[p as usize], epsilon = 1e-12);
    }
}

#[test]
fn refine_with_empty_manipulation_set_continues_training() {
    let g = SyntheticSpec::tiny().generate(6).unwrap();
    let cfg = DetectorConfig { epochs: 30, ..Default::default() };
    let (model, _) = train(&g, &cfg, 11).unwrap();
    let (refined, _) = refine_with_attacks(&model, &g, &[], &cfg, 11).unwrap();
    assert!(refined.frozen);
    let (resumed, _) = train_from(model, &g, &cfg, 11).unwrap();
    let again = resumed.freeze();
    assert_eq!(
        serde_json::to_string(&refined).unwrap(),
        serde_json::to_string(&again).unwrap()
    );
}

#[test]
fn refine_rejects_existing_edges() {
    let g = SyntheticSpec::tiny().generate(7).unwrap();
    let cfg = DetectorConfig { epochs: 5, ..Default::default() };
    let (model, _) = train(&g, &cfg, 1).unwrap();
    let e = &g.edges()[0];
    assert!(matches!(
        refine_with_attacks(&model, &g, &[(e.user, e.post)], &cfg, 1),
        Err(SealError::ManipulatedEdgeExists(_, _))
    ));
}

#[test]
fn model_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let model = DetectorModel::init(4, 8, 3).freeze();
    model.save_json(&path).unwrap();
    let loaded = DetectorModel::load_json(&path).unwrap();
    assert_eq!(
        serde_json::to_string(&model).unwrap(),
        serde_json::to_string(&loaded).unwrap()
    );
}
