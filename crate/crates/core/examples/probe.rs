//! Quick desk-scale probe: one trained replicate per tower mode with AUCs
//! and timings. Useful while tuning presets.

use std::time::Instant;

use d2cl_core::eval::{model_auc, run_cell, test_labels, InitialGraphConfig, SweepConfig};
use d2cl_core::eval::{pearson_scores, roc_auc};
use d2cl_core::model::TowerMode;
use d2cl_core::sem::{FamilyTag, Target};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let p: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(512);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(100);
    let snr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let mode = match args.get(5).map(|s| s.as_str()) {
        Some("cnn") => TowerMode::CnnOnly,
        Some("gnn") => TowerMode::GnnOnly,
        _ => TowerMode::Dual,
    };
    let family = match args.get(6).map(|s| s.as_str()) {
        Some("tanh") => FamilyTag::Tanh,
        Some("poly3") => FamilyTag::Poly3,
        Some("leaky-relu") => FamilyTag::LeakyRelu,
        _ => FamilyTag::Linear,
    };
    let knob: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let initial = match args.get(7).map(|s| s.as_str()) {
        Some("lasso") => InitialGraphConfig::Lasso { lambda: knob },
        _ => InitialGraphConfig::Pearson { per_node_budget: knob as usize },
    };
    let batch: usize = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(64);
    let neg_ratio: f64 = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(4.0);

    let mut cfg = SweepConfig::desk(7);
    cfg.p = p;
    cfg.n = n;
    cfg.train.epochs = epochs;
    cfg.tower_mode = mode;
    cfg.initial_graph = initial;
    cfg.train.batch_size = batch;
    cfg.train.negative_ratio = neg_ratio;

    println!(
        "p={} n={} epochs={} snr={} mode={:?} family={:?} initial={:?}",
        p, n, epochs, snr, mode, family, cfg.initial_graph
    );
    let start = Instant::now();
    let cell = run_cell(&cfg, family, snr, Target::Direct, 42).expect("cell");
    let train_time = start.elapsed().as_secs_f64();
    println!(
        "train: {:.1}s  ({} pos / {} neg, {} val pairs, {} skipped)",
        train_time,
        cell.history.train_positives,
        cell.history.train_negatives,
        cell.history.validation_pairs,
        cell.history.skipped_pairs.len()
    );
    for row in cell.history.epochs.iter().step_by(10.max(epochs / 10)) {
        println!(
            "  epoch {:3}  loss {:.4}  val_auc {:.4}  lr {:.2e}",
            row.epoch, row.loss, row.val_auc, row.lr
        );
    }
    let start = Instant::now();
    let auc = model_auc(&cell, Target::Direct, None).expect("auc");
    println!("score: {:.1}s  model AUC = {:.4}", start.elapsed().as_secs_f64(), auc);

    let labels = test_labels(&cell, Target::Direct).expect("labels");
    let pearson = pearson_scores(&cell.dataset.x, &cell.split.test).expect("pearson");
    let pauc = roc_auc(&pearson, &labels).expect("roc").auc;
    println!("pearson AUC = {:.4}", pauc);
    println!(
        "positives in test fold: {} / {}",
        labels.iter().filter(|&&l| l == 1).count(),
        labels.len()
    );
}
