//! Subcommand implementations.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use d2cl_core::data::{sample_variance, DataMatrix};
use d2cl_core::eval::{
    kendall_scores, pearson_scores, roc_auc, run_embedding_perturbation, run_snr_sweep,
    write_roc_csv, TrainedCell,
};
use d2cl_core::graph::{make_split, perturb_labels, EvalSplit, KnowledgeSet, PairIndex};
use d2cl_core::kde::{kde_image, write_cache_record, GridSpec};
use d2cl_core::model::{infer_graph, ModelState, TowerMode};
use d2cl_core::sem::{generate, SimDataset, Target};
use d2cl_core::subgraph::{initial_graph_lasso, initial_graph_pearson, InitialGraphEstimate};

use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;
use crate::{CliError, GlobalArgs};

fn out_dir(global: &GlobalArgs) -> Result<PathBuf, CliError> {
    global
        .out
        .clone()
        .ok_or_else(|| CliError::input("--out DIR is required for this command"))
}

/// Refuse to clobber existing artifacts without --force.
fn guard_outputs(global: &GlobalArgs, dir: &Path, names: &[&str]) -> Result<(), CliError> {
    if global.force {
        return Ok(());
    }
    for name in names {
        let path = dir.join(name);
        if path.exists() {
            return Err(CliError::input(format!(
                "{} already exists; pass --force to overwrite",
                path.display()
            )));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::internal(e.to_string()))
}

fn load_bundle(dir: &Path) -> Result<SimDataset, CliError> {
    if !dir.join("meta.json").exists() {
        return Err(CliError::missing(dir.join("meta.json").display().to_string()));
    }
    // A bundle produced by `simulate` carries a manifest; verify its digests.
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() {
        crate::manifest::verify_manifest(&manifest_path)?;
    }
    SimDataset::read_bundle(dir).map_err(CliError::from_core)
}

fn split_for(cfg: &RunConfig, ds: &SimDataset) -> Result<EvalSplit, CliError> {
    let target = cfg.target_tag()?;
    let truth = match target {
        Target::Direct => &ds.g_direct,
        Target::Ancestral => &ds.g_ancestral,
    };
    let (train_sources, test_sources) =
        d2cl_core::eval::source_split(cfg.p, cfg.train_source_fraction, cfg.seed);
    let mut split =
        make_split(truth, &train_sources, &test_sources).map_err(CliError::from_core)?;
    if cfg.label_perturb_rate > 0.0 {
        split.train = perturb_labels(&split.train, cfg.label_perturb_rate, cfg.seed)
            .map_err(CliError::from_core)?;
    }
    Ok(split)
}

fn initial_graph(cfg: &RunConfig, ds: &SimDataset) -> Result<Option<InitialGraphEstimate>, CliError> {
    match cfg.tower_mode()? {
        TowerMode::CnnOnly => Ok(None),
        _ => {
            let est = match cfg.initial_graph_config()? {
                d2cl_core::eval::InitialGraphConfig::Pearson { per_node_budget } => {
                    initial_graph_pearson(&ds.x, per_node_budget)
                }
                d2cl_core::eval::InitialGraphConfig::Lasso { lambda } => {
                    initial_graph_lasso(&ds.x, lambda)
                }
            }
            .map_err(CliError::from_core)?;
            Ok(Some(est))
        }
    }
}

pub fn simulate(global: &GlobalArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let dir = out_dir(global)?;
    create_dir(&dir)?;
    guard_outputs(global, &dir, &["X.csv", "direct.csv", "ancestral.csv", "meta.json"])?;
    let mut manifest = ManifestBuilder::new("simulate", cfg);
    let mut ds = generate(&cfg.sim_config()?).map_err(CliError::from_core)?;
    ds.snr_target = Some(cfg.snr);
    ds.write_bundle(&dir).map_err(CliError::from_core)?;
    for name in ["X.csv", "direct.csv", "ancestral.csv", "meta.json"] {
        manifest.record_artifact(&dir.join(name));
    }
    manifest.finish(&dir)?;
    println!(
        "wrote {}x{} bundle ({} direct edges) to {}",
        ds.x.n_rows(),
        ds.x.n_cols(),
        ds.g_direct.edge_count(),
        dir.display()
    );
    Ok(())
}

pub fn ingest(global: &GlobalArgs, data: &Path, knowledge: &Path) -> Result<(), CliError> {
    if !data.exists() {
        return Err(CliError::missing(data.display().to_string()));
    }
    if !knowledge.exists() {
        return Err(CliError::missing(knowledge.display().to_string()));
    }
    let x = DataMatrix::read_csv(data).map_err(CliError::from_input_error)?;
    let ks = KnowledgeSet::read_csv(knowledge, x.n_cols()).map_err(CliError::from_input_error)?;

    let degenerate: Vec<usize> = (0..x.n_cols())
        .filter(|&j| sample_variance(x.col(j)) <= 0.0)
        .collect();
    let missing = x
        .col(0)
        .iter()
        .chain((1..x.n_cols()).flat_map(|j| x.col(j).iter()))
        .filter(|v| !v.is_finite())
        .count();
    if missing > 0 {
        return Err(CliError::input(format!(
            "data matrix contains {} non-finite values",
            missing
        )));
    }
    let index = PairIndex::new(x.n_cols());
    let sources: BTreeSet<usize> = ks
        .entries
        .iter()
        .map(|&(k, _)| index.pair_of(k).map(|(i, _)| i))
        .collect::<Result<_, _>>()
        .map_err(CliError::from_input_error)?;
    let positives = ks.entries.iter().filter(|(_, l)| *l == 1).count();

    let report = serde_json::json!({
        "rows": x.n_rows(),
        "columns": x.n_cols(),
        "knowledge_pairs": ks.len(),
        "knowledge_sources": sources.len(),
        "knowledge_positives": positives,
        "degenerate_columns": degenerate,
    });
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    if let Some(dir) = &global.out {
        create_dir(dir)?;
        guard_outputs(global, dir, &["ingest_report.json"])?;
        std::fs::write(
            dir.join("ingest_report.json"),
            serde_json::to_string_pretty(&report).unwrap(),
        )
        .map_err(|e| CliError::internal(e.to_string()))?;
    }
    Ok(())
}

pub fn featurize(global: &GlobalArgs, cfg: &RunConfig, input: &Path) -> Result<(), CliError> {
    let dir = out_dir(global)?;
    create_dir(&dir)?;
    guard_outputs(global, &dir, &["g0.csv", "g0.json", "images.bin", "split.json"])?;
    let mut manifest = ManifestBuilder::new("featurize", cfg);
    manifest.record_input(&input.join("X.csv"))?;
    let ds = load_bundle(input)?;
    let split = split_for(cfg, &ds)?;
    std::fs::write(
        dir.join("split.json"),
        serde_json::to_string_pretty(&split).map_err(|e| CliError::internal(e.to_string()))?,
    )
    .map_err(|e| CliError::internal(e.to_string()))?;
    manifest.record_artifact(&dir.join("split.json"));

    if let Some(est) = initial_graph(cfg, &ds)? {
        est.write(&dir.join("g0.csv"), &dir.join("g0.json"))
            .map_err(CliError::from_core)?;
        manifest.record_artifact(&dir.join("g0.csv"));
        manifest.record_artifact(&dir.join("g0.json"));
    }

    // Image cache for the knowledge pairs.
    let grid = GridSpec::new(cfg.grid_resolution);
    let index = PairIndex::new(ds.x.n_cols());
    let mut cache =
        std::fs::File::create(dir.join("images.bin")).map_err(|e| CliError::internal(e.to_string()))?;
    let mut written = 0usize;
    let mut skipped = 0usize;
    for &(k, _) in &split.train.entries {
        let (i, j) = index.pair_of(k).map_err(CliError::from_core)?;
        match kde_image(&ds.x, i, j, &grid) {
            Ok(image) => {
                write_cache_record(&mut cache, k as u64, &image).map_err(CliError::from_core)?;
                written += 1;
            }
            Err(_) => skipped += 1,
        }
    }
    manifest.record_artifact(&dir.join("images.bin"));
    manifest.finish(&dir)?;
    println!("cached {} causal images ({} skipped) in {}", written, skipped, dir.display());
    Ok(())
}

pub fn train(global: &GlobalArgs, cfg: &RunConfig, input: &Path) -> Result<(), CliError> {
    let dir = out_dir(global)?;
    create_dir(&dir)?;
    guard_outputs(global, &dir, &["model.json", "model.bin", "history.csv", "split.json"])?;
    let mut manifest = ManifestBuilder::new("train", cfg);
    manifest.record_input(&input.join("X.csv"))?;
    let ds = load_bundle(input)?;
    let split = split_for(cfg, &ds)?;
    let estimate = initial_graph(cfg, &ds)?;
    let g0 = estimate.as_ref().map(|e| &e.graph);

    let mut state =
        ModelState::<f32>::new(cfg.model_config()?).map_err(CliError::from_core)?;
    let history = d2cl_core::model::train(&mut state, &ds.x, &split.train, g0, &cfg.train_config())
        .map_err(CliError::from_core)?;

    state.save(&dir.join("model")).map_err(CliError::from_core)?;
    history.write_csv(&dir.join("history.csv")).map_err(CliError::from_core)?;
    std::fs::write(
        dir.join("split.json"),
        serde_json::to_string_pretty(&split).map_err(|e| CliError::internal(e.to_string()))?,
    )
    .map_err(|e| CliError::internal(e.to_string()))?;
    if let Some(est) = &estimate {
        est.write(&dir.join("g0.csv"), &dir.join("g0.json"))
            .map_err(CliError::from_core)?;
        manifest.record_artifact(&dir.join("g0.csv"));
    }
    for name in ["model.json", "model.bin", "history.csv", "split.json"] {
        manifest.record_artifact(&dir.join(name));
    }
    manifest.finish(&dir)?;
    let last = history.epochs.last();
    println!(
        "trained {} epochs ({} pos / {} neg); final loss {:.4}, val AUC {:.4}",
        history.epochs.len(),
        history.train_positives,
        history.train_negatives,
        last.map_or(f64::NAN, |e| e.loss),
        last.map_or(f64::NAN, |e| e.val_auc),
    );
    Ok(())
}

fn load_model(stem: &Path) -> Result<ModelState<f32>, CliError> {
    if !stem.with_extension("json").exists() {
        return Err(CliError::missing(stem.with_extension("json").display().to_string()));
    }
    ModelState::load(stem).map_err(CliError::from_core)
}

fn load_split(model_stem: &Path) -> Result<EvalSplit, CliError> {
    let path = model_stem
        .parent()
        .unwrap_or(Path::new("."))
        .join("split.json");
    if !path.exists() {
        return Err(CliError::missing(path.display().to_string()));
    }
    serde_json::from_str(&std::fs::read_to_string(&path).map_err(|e| CliError::internal(e.to_string()))?)
        .map_err(|e| CliError::input(format!("split {}: {}", path.display(), e)))
}

fn load_g0(model_stem: &Path, p: usize, mode: TowerMode) -> Result<Option<d2cl_core::graph::DirectedGraph>, CliError> {
    if matches!(mode, TowerMode::CnnOnly) {
        return Ok(None);
    }
    let path = model_stem.parent().unwrap_or(Path::new(".")).join("g0.csv");
    if !path.exists() {
        return Err(CliError::missing(path.display().to_string()));
    }
    Ok(Some(
        d2cl_core::graph::DirectedGraph::read_csv(&path, p).map_err(CliError::from_core)?,
    ))
}

pub fn evaluate(global: &GlobalArgs, cfg: &RunConfig, model: &Path, input: &Path) -> Result<(), CliError> {
    let dir = out_dir(global)?;
    create_dir(&dir)?;
    guard_outputs(global, &dir, &["predictions.csv", "metrics.json", "roc.csv"])?;
    let mut manifest = ManifestBuilder::new("evaluate", cfg);
    manifest.record_input(&input.join("X.csv"))?;
    manifest.record_input(&model.with_extension("bin"))?;
    let ds = load_bundle(input)?;
    let state = load_model(model)?;
    let split = load_split(model)?;
    let g0 = load_g0(model, ds.x.n_cols(), state.mode())?;

    let matrix = infer_graph(&state, &ds.x, &split.train, g0.as_ref(), None)
        .map_err(CliError::from_core)?;
    matrix
        .write_predictions_csv(&dir.join("predictions.csv"))
        .map_err(CliError::from_core)?;

    // Causal AUC over the held-out pairs, with baselines.
    let target = cfg.target_tag()?;
    let truth = match target {
        Target::Direct => &ds.g_direct,
        Target::Ancestral => &ds.g_ancestral,
    };
    let index = PairIndex::new(ds.x.n_cols());
    let labels: Vec<u8> = split
        .test
        .iter()
        .map(|&k| index.pair_of(k).map(|(i, j)| u8::from(truth.has_edge(i, j))))
        .collect::<Result<_, _>>()
        .map_err(CliError::from_core)?;
    let model_scores: Vec<f64> = split
        .test
        .iter()
        .map(|&k| index.pair_of(k).map(|(i, j)| matrix.score(i, j)))
        .collect::<Result<_, _>>()
        .map_err(CliError::from_core)?;
    let model_roc = roc_auc(&model_scores, &labels).map_err(CliError::from_core)?;
    let pearson = pearson_scores(&ds.x, &split.test).map_err(CliError::from_core)?;
    let pearson_auc = roc_auc(&pearson, &labels).map_err(CliError::from_core)?.auc;
    let kendall_auc = if cfg.kendall_baseline {
        let scores = kendall_scores(&ds.x, &split.test).map_err(CliError::from_core)?;
        Some(roc_auc(&scores, &labels).map_err(CliError::from_core)?.auc)
    } else {
        None
    };
    write_roc_csv(&model_roc, &dir.join("roc.csv")).map_err(CliError::from_core)?;

    if let Some(threshold) = cfg.threshold {
        matrix
            .to_graph(threshold)
            .write_csv(&dir.join("graph.csv"))
            .map_err(CliError::from_core)?;
        manifest.record_artifact(&dir.join("graph.csv"));
    }

    let metrics = serde_json::json!({
        "target": target.name(),
        "test_pairs": split.test.len(),
        "model_auc": model_roc.auc,
        "pearson_auc": pearson_auc,
        "kendall_auc": kendall_auc,
        "skipped_pairs": matrix.skipped.len(),
    });
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).unwrap(),
    )
    .map_err(|e| CliError::internal(e.to_string()))?;
    for name in ["predictions.csv", "metrics.json", "roc.csv"] {
        manifest.record_artifact(&dir.join(name));
    }
    manifest.finish(&dir)?;
    println!("{}", serde_json::to_string_pretty(&metrics).unwrap());
    Ok(())
}

pub fn sweep(global: &GlobalArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let dir = out_dir(global)?;
    create_dir(&dir)?;
    guard_outputs(global, &dir, &["report.json", "report.csv"])?;
    let mut manifest = ManifestBuilder::new("sweep", cfg);
    let sweep_cfg = cfg.sweep_config()?;
    let report = run_snr_sweep(&sweep_cfg);
    report.write_json(&dir.join("report.json")).map_err(CliError::from_core)?;
    report.write_csv(&dir.join("report.csv")).map_err(CliError::from_core)?;
    manifest.record_artifact(&dir.join("report.json"));
    manifest.record_artifact(&dir.join("report.csv"));
    manifest.finish(&dir)?;
    println!(
        "sweep complete: {} cells, {} failures",
        report.cells.len(),
        report.failures.len()
    );
    for failure in &report.failures {
        eprintln!("cell failed: {}", failure);
    }
    Ok(())
}

pub fn perturb(global: &GlobalArgs, cfg: &RunConfig, model: &Path, input: &Path) -> Result<(), CliError> {
    let dir = out_dir(global)?;
    create_dir(&dir)?;
    guard_outputs(global, &dir, &["perturbation.json", "perturbation.csv"])?;
    let mut manifest = ManifestBuilder::new("perturb", cfg);
    manifest.record_input(&input.join("X.csv"))?;
    manifest.record_input(&model.with_extension("bin"))?;
    let ds = load_bundle(input)?;
    let state = load_model(model)?;
    let split = load_split(model)?;
    let g0 = load_g0(model, ds.x.n_cols(), state.mode())?;
    let target = cfg.target_tag()?;

    // Reuse the library cell wrapper so scoring matches the sweep exactly.
    let cell = TrainedCell {
        state,
        dataset: ds,
        split,
        g0,
        history: d2cl_core::model::TrainHistory {
            epochs: vec![],
            train_positives: 0,
            train_negatives: 0,
            validation_pairs: 0,
            negative_ratio: cfg.negative_ratio,
            skipped_pairs: vec![],
        },
    };
    let report = run_embedding_perturbation(&cell, target, cfg.perturb_seed)
        .map_err(CliError::from_core)?;
    std::fs::write(
        dir.join("perturbation.json"),
        serde_json::to_string_pretty(&report).map_err(|e| CliError::internal(e.to_string()))?,
    )
    .map_err(|e| CliError::internal(e.to_string()))?;
    let mut csv = String::from("tower,mode,auc\n");
    csv.push_str(&format!("none,reference,{}\n", report.reference_auc));
    for entry in &report.entries {
        let mode = match entry.mode {
            d2cl_core::model::PerturbMode::Zero => "zero".to_string(),
            d2cl_core::model::PerturbMode::Gauss { sigma } => format!("gauss({})", sigma),
        };
        let tower = match entry.tower {
            d2cl_core::model::PerturbTower::Cnn => "cnn",
            d2cl_core::model::PerturbTower::Gnn => "gnn",
        };
        csv.push_str(&format!("{},{},{}\n", tower, mode, entry.auc));
    }
    std::fs::write(dir.join("perturbation.csv"), csv)
        .map_err(|e| CliError::internal(e.to_string()))?;
    manifest.record_artifact(&dir.join("perturbation.json"));
    manifest.record_artifact(&dir.join("perturbation.csv"));
    manifest.finish(&dir)?;
    println!("reference AUC {:.4}; wrote perturbation grid to {}", report.reference_auc, dir.display());
    Ok(())
}
