//! Causal ROC/AUC, non-causal correlation baselines, and the benchmark
//! experiment grids: SNR sweeps over direct and ancestral targets, label
//! perturbation and embedding perturbation.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::CoreError;
use crate::graph::{make_split, perturb_labels, DirectedGraph, EvalSplit, PairIndex};
use crate::model::{
    score_pairs, train, EmbeddingPerturbation, ModelConfig, ModelState, PairFeaturizer,
    PerturbMode, PerturbTower, TowerMode, TrainConfig,
};
use crate::rng::{derive_seed, seeded_rng};
use crate::sem::{generate, FamilyTag, SimConfig, Target};
use crate::subgraph::{initial_graph_lasso, initial_graph_pearson, pearson_r, InitialGraphMethod};

/// ROC curve and its area.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    /// (false positive rate, true positive rate), from (0,0) to (1,1).
    pub curve: Vec<(f64, f64)>,
    pub positives: usize,
    pub negatives: usize,
}

/// Mann-Whitney AUC with half credit for ties, plus the ROC curve.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocResult, CoreError> {
    assert_eq!(scores.len(), labels.len(), "scores and labels misaligned");
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(CoreError::SingleClassLabels);
    }

    // Average ranks of tied scores; AUC from the rank-sum statistic.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0f64; scores.len()];
    let mut idx = 0;
    while idx < order.len() {
        let mut end = idx;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[idx]] {
            end += 1;
        }
        let rank = (idx + 1 + end + 1) as f64 / 2.0;
        for &slot in &order[idx..=end] {
            ranks[slot] = rank;
        }
        idx = end + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels.iter())
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let p = positives as f64;
    let n = negatives as f64;
    let auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * n);

    // Curve: sweep thresholds downward over distinct scores.
    let mut curve = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut idx = order.len();
    while idx > 0 {
        let score = scores[order[idx - 1]];
        while idx > 0 && scores[order[idx - 1]] == score {
            if labels[order[idx - 1]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx -= 1;
        }
        curve.push((fp as f64 / n, tp as f64 / p));
    }
    Ok(RocResult {
        auc,
        curve,
        positives,
        negatives,
    })
}

/// Absolute Pearson correlation per ordered pair; symmetric by construction.
/// Degenerate columns score 0.
pub fn pearson_scores(x: &DataMatrix, pairs: &[usize]) -> Result<Vec<f64>, CoreError> {
    let index = PairIndex::new(x.n_cols());
    pairs
        .iter()
        .map(|&k| {
            let (i, j) = index.pair_of(k)?;
            Ok(pearson_r(x.col(i), x.col(j)).abs())
        })
        .collect()
}

/// Kendall tau-b via an O(n^2) concordance count; the reference oracle.
pub fn kendall_tau_reference(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_a = 0i64;
    let mut ties_b = 0i64;
    for s in 0..n {
        for t in (s + 1)..n {
            let da = a[s] - a[t];
            let db = b[s] - b[t];
            if da == 0.0 {
                ties_a += 1;
            }
            if db == 0.0 {
                ties_b += 1;
            }
            if da != 0.0 && db != 0.0 {
                if da * db > 0.0 {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    let denom = ((n0 - ties_a as f64) * (n0 - ties_b as f64)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (concordant - discordant) as f64 / denom
}

/// Kendall tau-b in O(n log n): sort by the first axis, then count exchanges
/// on the second with a merge sort (Knight's method), with tie corrections.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&s, &t| {
        a[s].partial_cmp(&a[t])
            .expect("finite values")
            .then(b[s].partial_cmp(&b[t]).expect("finite values"))
    });
    let total = (n * (n - 1) / 2) as i64;

    // Joint ties (same a AND same b) and ties in a.
    let mut ties_a = 0i64;
    let mut ties_joint = 0i64;
    {
        let mut run_a = 1i64;
        let mut run_joint = 1i64;
        for w in 1..n {
            if a[order[w]] == a[order[w - 1]] {
                run_a += 1;
                if b[order[w]] == b[order[w - 1]] {
                    run_joint += 1;
                } else {
                    ties_joint += run_joint * (run_joint - 1) / 2;
                    run_joint = 1;
                }
            } else {
                ties_a += run_a * (run_a - 1) / 2;
                run_a = 1;
                ties_joint += run_joint * (run_joint - 1) / 2;
                run_joint = 1;
            }
        }
        ties_a += run_a * (run_a - 1) / 2;
        ties_joint += run_joint * (run_joint - 1) / 2;
    }

    // Ties in b overall.
    let mut b_sorted: Vec<f64> = b.to_vec();
    b_sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    let mut ties_b = 0i64;
    {
        let mut run = 1i64;
        for w in 1..n {
            if b_sorted[w] == b_sorted[w - 1] {
                run += 1;
            } else {
                ties_b += run * (run - 1) / 2;
                run = 1;
            }
        }
        ties_b += run * (run - 1) / 2;
    }

    // Exchange count: inversions of b in a-order.
    let mut seq: Vec<f64> = order.iter().map(|&idx| b[idx]).collect();
    let mut buf = vec![0.0f64; n];
    let swaps = merge_count(&mut seq, &mut buf) as i64;

    // concordant - discordant = total - ties_a - ties_b + ties_joint - 2*swaps
    let numer = total - ties_a - ties_b + ties_joint - 2 * swaps;
    let denom = (((total - ties_a) as f64) * ((total - ties_b) as f64)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    numer as f64 / denom
}

fn merge_count(seq: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = seq.len();
    if n <= 1 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = seq.split_at_mut(mid);
    let mut swaps = merge_count(left, buf) + merge_count(right, buf);
    let (mut i, mut j, mut out) = (0usize, 0usize, 0usize);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            buf[out] = left[i];
            i += 1;
        } else {
            buf[out] = right[j];
            swaps += (left.len() - i) as u64;
            j += 1;
        }
        out += 1;
    }
    while i < left.len() {
        buf[out] = left[i];
        i += 1;
        out += 1;
    }
    while j < right.len() {
        buf[out] = right[j];
        j += 1;
        out += 1;
    }
    seq.copy_from_slice(&buf[..n]);
    swaps
}

/// Absolute Kendall correlation per ordered pair.
pub fn kendall_scores(x: &DataMatrix, pairs: &[usize]) -> Result<Vec<f64>, CoreError> {
    let index = PairIndex::new(x.n_cols());
    pairs
        .iter()
        .map(|&k| {
            let (i, j) = index.pair_of(k)?;
            Ok(kendall_tau(x.col(i), x.col(j)).abs())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Experiment grids.
// ---------------------------------------------------------------------------

/// How the initial graph estimate is built inside experiment cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGraphConfig {
    Pearson { per_node_budget: usize },
    Lasso { lambda: f64 },
}

impl Default for InitialGraphConfig {
    fn default() -> Self {
        Self::Pearson { per_node_budget: 5 }
    }
}

/// One full experiment grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub p: usize,
    pub n: usize,
    pub expected_parents: f64,
    pub pilot_n: usize,
    pub families: Vec<FamilyTag>,
    pub snr_grid: Vec<f64>,
    pub targets: Vec<Target>,
    pub replicates: usize,
    pub base_seed: u64,
    /// Fraction of nodes whose outgoing pairs form the knowledge set.
    pub train_source_fraction: f64,
    pub tower_mode: TowerMode,
    pub initial_graph: InitialGraphConfig,
    pub train: TrainConfig,
    /// Fraction of knowledge labels flipped before training (0 disables).
    pub label_perturb_rate: f64,
    /// Worker threads for independent cells; 1 preserves a single
    /// deterministic stream end to end.
    pub workers: usize,
    /// Also score the Kendall baseline (slower).
    pub kendall_baseline: bool,
}

impl SweepConfig {
    /// Desk-scale default grid.
    pub fn desk(base_seed: u64) -> Self {
        Self {
            p: 100,
            n: 512,
            expected_parents: 4.0,
            pilot_n: 4096,
            families: vec![FamilyTag::Linear, FamilyTag::Tanh],
            snr_grid: vec![10.0, 1.0, 0.1],
            targets: vec![Target::Direct],
            replicates: 5,
            base_seed,
            train_source_fraction: 0.6,
            tower_mode: TowerMode::Dual,
            initial_graph: InitialGraphConfig::default(),
            train: TrainConfig::default(),
            label_perturb_rate: 0.0,
            workers: 1,
            kendall_baseline: false,
        }
    }

    /// Tiny smoke preset that finishes in well under a minute.
    pub fn desk_smoke(base_seed: u64) -> Self {
        let mut cfg = Self::desk(base_seed);
        cfg.p = 24;
        cfg.n = 192;
        cfg.pilot_n = 512;
        cfg.families = vec![FamilyTag::Linear];
        cfg.snr_grid = vec![10.0];
        cfg.replicates = 1;
        cfg.train.epochs = 4;
        cfg
    }
}

/// AUC of one method in one replicate of one grid cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellResult {
    pub family: FamilyTag,
    pub snr: f64,
    pub target: Target,
    pub method: String,
    pub seed: u64,
    pub auc: f64,
    pub runtime_s: f64,
}

/// Full grid outcome plus per-cell failures.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cells: Vec<CellResult>,
    pub failures: Vec<String>,
}

impl ExperimentReport {
    pub fn mean_auc(&self, method: &str, family: FamilyTag, snr: f64, target: Target) -> Option<f64> {
        let aucs: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| {
                c.method == method && c.family == family && c.snr == snr && c.target == target
            })
            .map(|c| c.auc)
            .collect();
        (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
    }

    pub fn std_auc(&self, method: &str, family: FamilyTag, snr: f64, target: Target) -> Option<f64> {
        let aucs: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| {
                c.method == method && c.family == family && c.snr == snr && c.target == target
            })
            .map(|c| c.auc)
            .collect();
        if aucs.len() < 2 {
            return None;
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        Some(
            (aucs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (aucs.len() - 1) as f64)
                .sqrt(),
        )
    }

    /// Flat CSV: `family,snr,target,method,seed,auc,runtime_s`.
    pub fn write_csv(&self, path: &Path) -> Result<(), CoreError> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "family,snr,target,method,seed,auc,runtime_s")?;
        for c in &self.cells {
            writeln!(
                file,
                "{},{},{},{},{},{},{}",
                c.family.name(),
                c.snr,
                c.target.name(),
                c.method,
                c.seed,
                c.auc,
                c.runtime_s
            )?;
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<(), CoreError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Split node ids into train sources and test sources.
pub fn source_split(p: usize, train_fraction: f64, seed: u64) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let mut nodes: Vec<usize> = (0..p).collect();
    let mut rng = seeded_rng(seed, crate::rng::streams::SPLIT);
    for a in (1..nodes.len()).rev() {
        let b = rand::Rng::random_range(&mut rng, 0..=a);
        nodes.swap(a, b);
    }
    let cut = ((train_fraction * p as f64).round() as usize).clamp(1, p - 1);
    let train: BTreeSet<usize> = nodes[..cut].iter().copied().collect();
    let test: BTreeSet<usize> = nodes[cut..].iter().copied().collect();
    (train, test)
}

/// Everything produced by one trained replicate.
pub struct TrainedCell {
    pub state: ModelState<f32>,
    pub dataset: crate::sem::SimDataset,
    pub split: EvalSplit,
    pub g0: Option<DirectedGraph>,
    pub history: crate::model::TrainHistory,
}

/// Run one cell end to end: simulate, split, optionally corrupt the training
/// labels, build the initial graph, train.
pub fn run_cell(
    cfg: &SweepConfig,
    family: FamilyTag,
    snr: f64,
    target: Target,
    seed: u64,
) -> Result<TrainedCell, CoreError> {
    let ds = generate(&SimConfig {
        p: cfg.p,
        n: cfg.n,
        expected_parents: cfg.expected_parents,
        family,
        snr,
        pilot_n: cfg.pilot_n,
        seed,
    })?;
    let truth = match target {
        Target::Direct => &ds.g_direct,
        Target::Ancestral => &ds.g_ancestral,
    };
    let (train_sources, test_sources) = source_split(cfg.p, cfg.train_source_fraction, seed);
    let mut split = make_split(truth, &train_sources, &test_sources)?;
    if cfg.label_perturb_rate > 0.0 {
        // Corrupt only the training knowledge; evaluation labels stay clean.
        split.train = perturb_labels(&split.train, cfg.label_perturb_rate, seed)?;
    }
    let g0 = match cfg.tower_mode {
        TowerMode::CnnOnly => None,
        _ => Some(match cfg.initial_graph {
            InitialGraphConfig::Pearson { per_node_budget } => {
                initial_graph_pearson(&ds.x, per_node_budget)?.graph
            }
            InitialGraphConfig::Lasso { lambda } => initial_graph_lasso(&ds.x, lambda)?.graph,
        }),
    };
    let mut state = ModelState::<f32>::new(ModelConfig::desk(cfg.tower_mode, seed))?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let history = train(&mut state, &ds.x, &split.train, g0.as_ref(), &train_cfg)?;
    Ok(TrainedCell {
        state,
        dataset: ds,
        split,
        g0,
        history,
    })
}

/// Ground-truth labels of the held-out pairs.
pub fn test_labels(cell: &TrainedCell, target: Target) -> Result<Vec<u8>, CoreError> {
    let truth = match target {
        Target::Direct => &cell.dataset.g_direct,
        Target::Ancestral => &cell.dataset.g_ancestral,
    };
    let index = PairIndex::new(truth.node_count());
    cell.split
        .test
        .iter()
        .map(|&k| {
            let (i, j) = index.pair_of(k)?;
            Ok(u8::from(truth.has_edge(i, j)))
        })
        .collect()
}

/// AUC of the trained model over the held-out pairs.
pub fn model_auc(
    cell: &TrainedCell,
    target: Target,
    perturbation: Option<&EmbeddingPerturbation>,
) -> Result<f64, CoreError> {
    let feat = PairFeaturizer::new(
        &cell.dataset.x,
        cell.state.config.featurizer.clone(),
        cell.g0.as_ref(),
    );
    let scores = score_pairs(&cell.state, &feat, &cell.split.test, perturbation)?;
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let labels = test_labels(cell, target)?;
    Ok(roc_auc(&values, &labels)?.auc)
}

fn baseline_aucs(
    cell: &TrainedCell,
    target: Target,
    with_kendall: bool,
) -> Result<Vec<(String, f64)>, CoreError> {
    let labels = test_labels(cell, target)?;
    let mut out = Vec::new();
    let pearson = pearson_scores(&cell.dataset.x, &cell.split.test)?;
    out.push(("pearson".to_string(), roc_auc(&pearson, &labels)?.auc));
    if with_kendall {
        let kendall = kendall_scores(&cell.dataset.x, &cell.split.test)?;
        out.push(("kendall".to_string(), roc_auc(&kendall, &labels)?.auc));
    }
    Ok(out)
}

fn method_name(mode: TowerMode) -> &'static str {
    match mode {
        TowerMode::CnnOnly => "d2cl-cnn",
        TowerMode::GnnOnly => "d2cl-gnn",
        TowerMode::Dual => "d2cl-dual",
    }
}

type CellJob = (FamilyTag, f64, Target, usize);

fn run_one_job(cfg: &SweepConfig, job: CellJob) -> Result<Vec<CellResult>, CoreError> {
    let (family, snr, target, replicate) = job;
    let cell_tag = format!("{}/{}/{}", family.name(), snr, target.name());
    let seed = derive_seed(
        cfg.base_seed,
        (replicate as u64) << 32
            | (FamilyTag::ALL.iter().position(|t| *t == family).unwrap() as u64) << 8
            | (cfg.snr_grid.iter().position(|s| *s == snr).unwrap_or(0) as u64) << 4
            | matches!(target, Target::Ancestral) as u64,
    );
    let start = Instant::now();
    let cell = run_cell(cfg, family, snr, target, seed)?;
    let train_time = start.elapsed().as_secs_f64();
    let mut results = Vec::new();
    let auc = model_auc(&cell, target, None).map_err(|e| {
        CoreError::Schema(format!("cell {} seed {}: {}", cell_tag, seed, e))
    })?;
    results.push(CellResult {
        family,
        snr,
        target,
        method: method_name(cfg.tower_mode).to_string(),
        seed,
        auc,
        runtime_s: train_time,
    });
    for (method, auc) in baseline_aucs(&cell, target, cfg.kendall_baseline)? {
        results.push(CellResult {
            family,
            snr,
            target,
            method,
            seed,
            auc,
            runtime_s: 0.0,
        });
    }
    Ok(results)
}

/// Run the full grid. Cells are independent jobs; with `workers > 1` they run
/// on a local thread pool and are reassembled in deterministic order.
pub fn run_snr_sweep(cfg: &SweepConfig) -> ExperimentReport {
    let mut jobs: Vec<CellJob> = Vec::new();
    for &family in &cfg.families {
        for &snr in &cfg.snr_grid {
            for &target in &cfg.targets {
                for replicate in 0..cfg.replicates {
                    jobs.push((family, snr, target, replicate));
                }
            }
        }
    }
    let outcomes: Vec<Result<Vec<CellResult>, CoreError>> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .expect("thread pool");
        pool.install(|| {
            use rayon::prelude::*;
            jobs.par_iter().map(|&job| run_one_job(cfg, job)).collect()
        })
    } else {
        jobs.iter().map(|&job| run_one_job(cfg, job)).collect()
    };
    let mut report = ExperimentReport::default();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(results) => report.cells.extend(results),
            Err(e) => report.failures.push(format!(
                "{}/{}/{} replicate {}: {}",
                job.0.name(),
                job.1,
                job.2.name(),
                job.3,
                e
            )),
        }
    }
    report
}

/// Label-perturbation protocol: identical pipeline with a fraction of the
/// training labels flipped; evaluation ground truth is untouched.
pub fn run_label_perturbation(cfg: &SweepConfig, rate: f64) -> ExperimentReport {
    let mut perturbed = cfg.clone();
    perturbed.label_perturb_rate = rate;
    run_snr_sweep(&perturbed)
}

/// The embedding-perturbation grid for one trained dual-tower cell: zero and
/// Gaussian corruption of each tower, plus the unperturbed reference.
pub fn embedding_perturbation_grid() -> Vec<(PerturbTower, PerturbMode)> {
    let mut grid = Vec::new();
    for tower in [PerturbTower::Cnn, PerturbTower::Gnn] {
        grid.push((tower, PerturbMode::Zero));
        for sigma in [1.0, 2.0, 5.0] {
            grid.push((tower, PerturbMode::Gauss { sigma }));
        }
    }
    grid
}

/// AUC per perturbation mode; the `reference` entry is the unperturbed model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub reference_auc: f64,
    pub entries: Vec<PerturbationEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationEntry {
    pub tower: PerturbTower,
    pub mode: PerturbMode,
    pub auc: f64,
}

pub fn run_embedding_perturbation(
    cell: &TrainedCell,
    target: Target,
    seed: u64,
) -> Result<PerturbationReport, CoreError> {
    let reference_auc = model_auc(cell, target, None)?;
    let mut entries = Vec::new();
    for (tower, mode) in embedding_perturbation_grid() {
        let perturbation = EmbeddingPerturbation { tower, mode, seed };
        entries.push(PerturbationEntry {
            tower,
            mode,
            auc: model_auc(cell, target, Some(&perturbation))?,
        });
    }
    Ok(PerturbationReport {
        reference_auc,
        entries,
    })
}

/// Persist a ROC curve as `fpr,tpr` CSV.
pub fn write_roc_csv(roc: &RocResult, path: &Path) -> Result<(), CoreError> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "fpr,tpr")?;
    for (fpr, tpr) in &roc.curve {
        writeln!(file, "{},{}", fpr, tpr)?;
    }
    Ok(())
}

/// Graph-vs-graph description of the initial estimate, used in sidecars.
pub fn describe_initial_graph(method: &InitialGraphMethod) -> String {
    match method {
        InitialGraphMethod::Pearson { per_node_budget } => {
            format!("pearson(budget={})", per_node_budget)
        }
        InitialGraphMethod::Lasso { lambda } => format!("lasso(lambda={})", lambda),
    }
}
