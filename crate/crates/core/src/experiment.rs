//! Configuration-driven experiment pipelines.
//!
//! One experiment runs, per seed: graph construction, encoding-tree
//! optimization, account categorization, detector training, the guided
//! attack plus optional single-strategy variants and Random/DICE baselines,
//! then detector refinement on the generated manipulations and a re-attack
//! against the hardened model. Results aggregate to mean and standard
//! deviation across seeds.
//!
//! Reports are byte-deterministic for a fixed config: all randomness flows
//! from the per-seed streams, aggregation is keyed and sorted, and
//! wall-clock timings are written to a separate file that is excluded from
//! the determinism contract.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{
    baseline_attack, generate_manipulations, run_attack, AttackConfig, AttackOutcome, AttackRun,
    BaselineKind, Strategy, StrategySet,
};
use crate::detector::{
    forward, refine_with_attacks, stratified_split, train, BlackBox, DetectorConfig, DetectorModel,
};
use crate::error::{Result, SealError};
use crate::graph::{BipartiteGraph, PostIdx, SyntheticSpec};
use crate::influence::{categorize, influence_table, AccountGroups};
use crate::tree::EncodingTree;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Files {
        edges: PathBuf,
        labels: PathBuf,
        user_features: PathBuf,
        post_features: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelection {
    /// Every fake post is a target.
    #[default]
    AllFake,
    /// The first `n` fake posts.
    FakeLimit(usize),
    /// Explicit post ids.
    Named(Vec<String>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Encoding-tree height bound K.
    pub tree_height: usize,
    /// Subgraph extraction level k; defaults to K - 1.
    pub extraction_level: Option<usize>,
    /// Influence adjusting parameter c.
    pub adjusting_parameter: f64,
    pub budgets: (usize, usize, usize),
    pub detector: DetectorConfig,
    /// Epochs for the refinement pass.
    pub refine_epochs: usize,
    pub attack: AttackConfig,
    pub targets: TargetSelection,
    pub run_strategy_variants: bool,
    pub run_baselines: bool,
    pub run_refinement: bool,
    /// Optional sweep of tree heights; each entry reruns the guided attack.
    pub tree_height_sweep: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic(SyntheticSpec::default()),
            tree_height: 2,
            extraction_level: None,
            adjusting_parameter: crate::influence::default_adjusting_parameter(),
            budgets: (20, 10, 4),
            detector: DetectorConfig::default(),
            refine_epochs: 150,
            attack: AttackConfig::default(),
            targets: TargetSelection::AllFake,
            run_strategy_variants: true,
            run_baselines: true,
            run_refinement: true,
            tree_height_sweep: Vec::new(),
            seeds: (0..20).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(SealError::Config("at least one seed is required".into()));
        }
        if self.tree_height < 2 {
            return Err(SealError::BadHeight(self.tree_height));
        }
        if let Some(k) = self.extraction_level {
            if k >= self.tree_height {
                return Err(SealError::BadExtractionLevel { k, height: self.tree_height });
            }
        }
        if self.adjusting_parameter <= 0.0 {
            return Err(SealError::BadAdjustingParameter(self.adjusting_parameter));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_slice(&std::fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn build_graph(&self, seed: u64) -> Result<BipartiteGraph> {
        match &self.dataset {
            DatasetSource::Synthetic(spec) => spec.generate(seed),
            DatasetSource::Files { edges, labels, user_features, post_features } => {
                BipartiteGraph::from_csv(edges, labels, user_features, post_features)
            }
        }
    }

    pub fn select_targets(&self, g: &BipartiteGraph) -> Result<Vec<PostIdx>> {
        let fakes = || (0..g.n_posts() as PostIdx).filter(|&p| g.label(p) == 1);
        let targets: Vec<PostIdx> = match &self.targets {
            TargetSelection::AllFake => fakes().collect(),
            TargetSelection::FakeLimit(n) => fakes().take(*n).collect(),
            TargetSelection::Named(names) => names
                .iter()
                .map(|n| g.post_idx(n))
                .collect::<Result<Vec<_>>>()?,
        };
        if targets.is_empty() {
            return Err(SealError::Config("target selection is empty".into()));
        }
        Ok(targets)
    }
}

/// Success rates and probability shifts for one (attack, detector phase).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackCell {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    /// Success rate per "attack/phase" key.
    pub success: BTreeMap<String, f64>,
    /// Mean predicted fake-probability of the targets before any attack.
    pub prob_before: f64,
    /// Mean predicted fake-probability of the targets after each attack.
    pub prob_after: BTreeMap<String, f64>,
    pub clean_accuracy: f64,
    pub clean_f1: f64,
    pub refined_accuracy: Option<f64>,
    /// Direct/indirect/feedback shares of the guided attack's final-policy
    /// actions.
    pub strategy_shares: [f64; 3],
    /// Mean first-success step over targets that flipped (guided, clean).
    pub mean_first_success: Option<f64>,
    /// Guided-attack mean training reward per episode, averaged over targets.
    pub reward_curve: Vec<f64>,
    /// Success per sweep height, when a sweep is configured.
    pub height_sweep: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seeds: Vec<u64>,
    pub n_targets: usize,
    /// Keyed by "attack/phase", e.g. "guided/clean", "random/refined".
    pub success_rates: BTreeMap<String, AttackCell>,
    pub prob_before_mean: f64,
    pub prob_after: BTreeMap<String, AttackCell>,
    pub clean_accuracy: AttackCell,
    pub refined_accuracy: Option<AttackCell>,
    pub strategy_shares_mean: [f64; 3],
    pub per_seed: Vec<SeedReport>,
    pub height_sweep: BTreeMap<usize, AttackCell>,
}

/// Wall-clock seconds per phase, reported separately so the deterministic
/// report files never contain timing jitter.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub seconds: BTreeMap<String, f64>,
}

fn cell(per_seed: Vec<f64>) -> AttackCell {
    let n = per_seed.len().max(1) as f64;
    let mean = per_seed.iter().sum::<f64>() / n;
    let var = per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    AttackCell { mean, std: var.sqrt(), per_seed }
}

struct SeedRun {
    report: SeedReport,
    timings: BTreeMap<String, f64>,
}

fn mean_final_prob(outcome: &AttackOutcome) -> f64 {
    let n = outcome.per_target.len().max(1) as f64;
    outcome.per_target.iter().map(|t| t.eval.final_target_prob).sum::<f64>() / n
}

fn phase<T>(
    name: &'static str,
    seed: u64,
    timings: &mut BTreeMap<String, f64>,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_phase(name, seed))?;
    *timings.entry(name.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
    Ok(out)
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let mut timings = BTreeMap::new();
    let g = phase("build-graph", seed, &mut timings, || cfg.build_graph(seed))?;
    let tree = phase("build-tree", seed, &mut timings, || {
        EncodingTree::optimize(&g, cfg.tree_height, 1e-9)
    })?;
    let influence = influence_table(&g, &tree, cfg.adjusting_parameter)
        .map_err(|e| e.in_phase("influence", seed))?;
    let groups = phase("categorize", seed, &mut timings, || {
        categorize(&g, &tree, cfg.adjusting_parameter, cfg.budgets, seed)
    })?;
    let (model, train_report) = phase("train-detector", seed, &mut timings, || {
        train(&g, &cfg.detector, seed)
    })?;
    let bb = BlackBox::new(model.clone().freeze()).map_err(|e| e.in_phase("freeze", seed))?;
    let targets = cfg.select_targets(&g).map_err(|e| e.in_phase("targets", seed))?;

    let mut success = BTreeMap::new();
    let mut prob_after = BTreeMap::new();

    // mean clean probability over targets
    let clean_probs = forward(&model, &g).map_err(|e| e.in_phase("forward", seed))?;
    let prob_before =
        targets.iter().map(|&t| clean_probs[t as usize]).sum::<f64>() / targets.len() as f64;

    // guided attack, all strategies
    let guided: AttackRun = phase("attack", seed, &mut timings, || {
        run_attack(&g, &tree, &groups, &influence, &bb, &targets, &cfg.attack, seed)
    })?;
    success.insert("guided/clean".to_string(), guided.outcome.success_rate);
    prob_after.insert("guided/clean".to_string(), mean_final_prob(&guided.outcome));

    let mut shares = [0usize; 3];
    let mut first_successes = Vec::new();
    for t in &guided.outcome.per_target {
        for s in [Strategy::Direct, Strategy::Indirect, Strategy::Feedback] {
            shares[s.index()] += t.eval.strategy_counts[s.index()];
        }
        if let Some(fs) = t.eval.first_success {
            first_successes.push(fs as f64);
        }
    }
    let total_actions: usize = shares.iter().sum();
    let strategy_shares = if total_actions == 0 {
        [0.0; 3]
    } else {
        shares.map(|c| c as f64 / total_actions as f64)
    };
    let mean_first_success = if first_successes.is_empty() {
        None
    } else {
        Some(first_successes.iter().sum::<f64>() / first_successes.len() as f64)
    };
    let reward_curve: Vec<f64> = (0..cfg.attack.episodes)
        .map(|e| {
            guided
                .outcome
                .per_target
                .iter()
                .map(|t| t.training[e].total_reward)
                .sum::<f64>()
                / targets.len() as f64
        })
        .collect();

    // single-strategy variants
    if cfg.run_strategy_variants {
        for (name, strat) in [
            ("guided-direct", Strategy::Direct),
            ("guided-indirect", Strategy::Indirect),
            ("guided-feedback", Strategy::Feedback),
        ] {
            let variant = AttackConfig {
                strategies: StrategySet::only(strat),
                ..cfg.attack.clone()
            };
            let run = phase("attack-variant", seed, &mut timings, || {
                run_attack(&g, &tree, &groups, &influence, &bb, &targets, &variant, seed)
            })?;
            success.insert(format!("{name}/clean"), run.outcome.success_rate);
            prob_after.insert(format!("{name}/clean"), mean_final_prob(&run.outcome));
        }
    }

    // baselines
    if cfg.run_baselines {
        for (name, kind) in [("random", BaselineKind::Random), ("dice", BaselineKind::Dice)] {
            let out = phase("baseline", seed, &mut timings, || {
                baseline_attack(kind, &g, &tree, &groups, &bb, &targets, &cfg.attack, seed)
            })?;
            success.insert(format!("{name}/clean"), out.success_rate);
            prob_after.insert(format!("{name}/clean"), mean_final_prob(&out));
        }
    }

    // refinement and re-attack
    let mut refined_accuracy = None;
    if cfg.run_refinement {
        let manipulations = phase("defend-enrich", seed, &mut timings, || {
            generate_manipulations(
                &g, &tree, &groups, &influence, &bb, &guided, &targets, &cfg.attack, seed,
            )
        })?;
        let refine_cfg = DetectorConfig { epochs: cfg.refine_epochs, ..cfg.detector.clone() };
        let (refined, _) = phase("defend-retrain", seed, &mut timings, || {
            refine_with_attacks(&model, &g, &manipulations, &refine_cfg, seed)
        })?;
        refined_accuracy = Some(accuracy_on_clean(&refined, &g, seed)?);
        let bb2 = BlackBox::new(refined).map_err(|e| e.in_phase("freeze-refined", seed))?;
        let re_guided = phase("re-attack", seed, &mut timings, || {
            run_attack(&g, &tree, &groups, &influence, &bb2, &targets, &cfg.attack, seed)
        })?;
        success.insert("guided/refined".to_string(), re_guided.outcome.success_rate);
        prob_after.insert("guided/refined".to_string(), mean_final_prob(&re_guided.outcome));
        if cfg.run_baselines {
            for (name, kind) in [("random", BaselineKind::Random), ("dice", BaselineKind::Dice)] {
                let out = phase("re-baseline", seed, &mut timings, || {
                    baseline_attack(kind, &g, &tree, &groups, &bb2, &targets, &cfg.attack, seed)
                })?;
                success.insert(format!("{name}/refined"), out.success_rate);
                prob_after.insert(format!("{name}/refined"), mean_final_prob(&out));
            }
        }
    }

    // tree-height sweep: guided attack success under alternative K
    let mut height_sweep = BTreeMap::new();
    for &k in &cfg.tree_height_sweep {
        if k == cfg.tree_height {
            height_sweep.insert(k, guided.outcome.success_rate);
            continue;
        }
        let sweep_tree = phase("sweep-tree", seed, &mut timings, || {
            EncodingTree::optimize(&g, k, 1e-9)
        })?;
        let run = phase("sweep-attack", seed, &mut timings, || {
            run_attack(&g, &sweep_tree, &groups, &influence, &bb, &targets, &cfg.attack, seed)
        })?;
        height_sweep.insert(k, run.outcome.success_rate);
    }

    Ok(SeedRun {
        report: SeedReport {
            seed,
            success,
            prob_before,
            prob_after,
            clean_accuracy: train_report.accuracy,
            clean_f1: train_report.f1,
            refined_accuracy,
            strategy_shares,
            mean_first_success,
            reward_curve,
            height_sweep,
        },
        timings,
    })
}

/// Held-out accuracy of a model evaluated on the clean graph's test split.
fn accuracy_on_clean(model: &DetectorModel, g: &BipartiteGraph, seed: u64) -> Result<f64> {
    let split = stratified_split(g, seed);
    let probs = forward(model, g)?;
    let correct = split
        .test
        .iter()
        .filter(|&&p| u8::from(probs[p as usize] > 0.5) == g.label(p))
        .count();
    Ok(correct as f64 / split.test.len().max(1) as f64)
}

/// Runs the full pipeline for every seed (fanned out across threads) and
/// aggregates the metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(MetricsReport, PhaseTimings)> {
    cfg.validate()?;
    let mut runs: Vec<(u64, SeedRun)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed).map(|r| (seed, r)))
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|(seed, _)| cfg.seeds.iter().position(|s| s == seed).unwrap());

    let per_seed: Vec<SeedReport> = runs.iter().map(|(_, r)| r.report.clone()).collect();
    let n_targets = {
        let g = cfg.build_graph(cfg.seeds[0])?;
        cfg.select_targets(&g)?.len()
    };

    let mut keys: Vec<String> = per_seed[0].success.keys().cloned().collect();
    keys.sort();
    let success_rates: BTreeMap<String, AttackCell> = keys
        .iter()
        .map(|k| {
            let xs: Vec<f64> = per_seed.iter().map(|r| r.success[k]).collect();
            (k.clone(), cell(xs))
        })
        .collect();
    let prob_after: BTreeMap<String, AttackCell> = keys
        .iter()
        .filter(|k| per_seed[0].prob_after.contains_key(*k))
        .map(|k| {
            let xs: Vec<f64> = per_seed.iter().map(|r| r.prob_after[k]).collect();
            (k.clone(), cell(xs))
        })
        .collect();
    let clean_accuracy = cell(per_seed.iter().map(|r| r.clean_accuracy).collect());
    let refined_accuracy = per_seed[0]
        .refined_accuracy
        .is_some()
        .then(|| cell(per_seed.iter().filter_map(|r| r.refined_accuracy).collect()));
    let prob_before_mean =
        per_seed.iter().map(|r| r.prob_before).sum::<f64>() / per_seed.len() as f64;
    let mut strategy_shares_mean = [0.0; 3];
    for r in &per_seed {
        for i in 0..3 {
            strategy_shares_mean[i] += r.strategy_shares[i] / per_seed.len() as f64;
        }
    }
    let mut height_sweep = BTreeMap::new();
    for &k in &cfg.tree_height_sweep {
        let xs: Vec<f64> = per_seed.iter().filter_map(|r| r.height_sweep.get(&k).copied()).collect();
        if !xs.is_empty() {
            height_sweep.insert(k, cell(xs));
        }
    }

    let mut timings = PhaseTimings::default();
    for (_, run) in &runs {
        for (k, v) in &run.timings {
            *timings.seconds.entry(k.clone()).or_insert(0.0) += v;
        }
    }

    Ok((
        MetricsReport {
            seeds: cfg.seeds.clone(),
            n_targets,
            success_rates,
            prob_before_mean,
            prob_after,
            clean_accuracy,
            refined_accuracy,
            strategy_shares_mean,
            per_seed,
            height_sweep,
        },
        timings,
    ))
}

/// Writes `report.json`, `success_rates.csv`, `prob_shift.csv`, the plot
/// series under `plots/`, and a copy of the config. Returns the paths
/// written. Timings are the caller's responsibility ([`write_timings`]).
pub fn emit_report(
    report: &MetricsReport,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join("plots"))?;
    let mut written = Vec::new();

    let report_path = dir.join("report.json");
    let mut body = serde_json::to_vec_pretty(report)?;
    body.push(b'\n');
    std::fs::write(&report_path, body)?;
    written.push(report_path);

    let config_path = dir.join("config.json");
    cfg.save(&config_path)?;
    written.push(config_path);

    let mut csv = String::from("attack,phase,mean,std\n");
    for (key, cell) in &report.success_rates {
        let (attack, phase) = key.split_once('/').unwrap_or((key.as_str(), ""));
        csv.push_str(&format!("{attack},{phase},{:.6},{:.6}\n", cell.mean, cell.std));
    }
    let path = dir.join("success_rates.csv");
    std::fs::write(&path, csv)?;
    written.push(path);

    let mut csv = String::from("attack,phase,prob_before,prob_after\n");
    for (key, cell) in &report.prob_after {
        let (attack, phase) = key.split_once('/').unwrap_or((key.as_str(), ""));
        csv.push_str(&format!(
            "{attack},{phase},{:.6},{:.6}\n",
            report.prob_before_mean, cell.mean
        ));
    }
    let path = dir.join("prob_shift.csv");
    std::fs::write(&path, csv)?;
    written.push(path);

    // success rates as an indexed two-column series, ordered by key
    let mut dat = String::new();
    for (i, (key, cell)) in report.success_rates.iter().enumerate() {
        dat.push_str(&format!("{i} {:.6}  # {key}\n", cell.mean));
    }
    let path = dir.join("plots").join("success_rates.dat");
    std::fs::write(&path, dat)?;
    written.push(path);

    // guided training reward curve, averaged over seeds
    if !report.per_seed.is_empty() && !report.per_seed[0].reward_curve.is_empty() {
        let episodes = report.per_seed[0].reward_curve.len();
        let mut dat = String::new();
        for e in 0..episodes {
            let mean: f64 = report
                .per_seed
                .iter()
                .map(|r| r.reward_curve.get(e).copied().unwrap_or(0.0))
                .sum::<f64>()
                / report.per_seed.len() as f64;
            dat.push_str(&format!("{e} {mean:.6}\n"));
        }
        let path = dir.join("plots").join("reward_curve.dat");
        std::fs::write(&path, dat)?;
        written.push(path);
    }

    if !report.height_sweep.is_empty() {
        let mut dat = String::new();
        for (k, cell) in &report.height_sweep {
            dat.push_str(&format!("{k} {:.6}\n", cell.mean));
        }
        let path = dir.join("plots").join("height_sweep.dat");
        std::fs::write(&path, dat)?;
        written.push(path);
    }

    Ok(written)
}

pub fn write_timings(timings: &PhaseTimings, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("timings.json");
    let mut body = serde_json::to_vec_pretty(timings)?;
    body.push(b'\n');
    std::fs::write(&path, body)?;
    Ok(path)
}

impl MetricsReport {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
