//! Cross-module integration: training-loop contracts, generator
//! equivariance, and end-to-end determinism at toy scale.

use std::collections::BTreeSet;

use d2cl_core::data::DataMatrix;
use d2cl_core::eval::{model_auc, run_cell, run_snr_sweep, SweepConfig};
use d2cl_core::graph::{DirectedGraph, KnowledgeSet, PairIndex};
use d2cl_core::kde::{kde_image, GridSpec};
use d2cl_core::model::{
    train, FeaturizerConfig, ModelConfig, ModelState, TowerMode, TrainConfig,
};
use d2cl_core::rng::seeded_rng;
use d2cl_core::sem::{
    build_model, calibrate_noise, generate, sample_dag, simulate, DagSpec, FamilyTag,
    FunctionFamily, SimConfig, Target,
};
use d2cl_core::subgraph::pearson_r;
use rand::Rng;

fn tiny_model_config(mode: TowerMode, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::desk(mode, seed);
    cfg.cnn.stem_channels = 4;
    cfg.cnn.stage_widths = vec![4, 4, 8, 8, 8];
    cfg.cnn.embedding = 8;
    cfg.cnn.head_hidden = 8;
    cfg.gnn.layer_widths = vec![8, 8, 8, 1];
    cfg.gnn.sortpool_k = 6;
    cfg.gnn.conv1_channels = 4;
    cfg.gnn.conv2_channels = 4;
    cfg.gnn.conv2_kernel = 3;
    cfg.gnn.embedding = 8;
    cfg.fusion.hidden = vec![8, 4];
    cfg.featurizer = FeaturizerConfig {
        grid_resolution: 8,
        max_label: 10,
        data_features: true,
        shuffle_seed: seed,
    };
    cfg
}

/// Twenty labeled pairs over a small simulated system.
fn toy_fixture() -> (DataMatrix, KnowledgeSet, DirectedGraph) {
    let ds = generate(&SimConfig {
        p: 10,
        n: 192,
        expected_parents: 1.5,
        family: FamilyTag::Linear,
        snr: 10.0,
        pilot_n: 512,
        seed: 33,
    })
    .expect("dataset");
    let index = PairIndex::new(10);
    let mut entries = Vec::new();
    let mut pos = 0;
    let mut neg = 0;
    'outer: for i in 0..10 {
        for j in 0..10 {
            if i == j {
                continue;
            }
            let label = u8::from(ds.g_direct.has_edge(i, j));
            if label == 1 && pos < 10 {
                pos += 1;
            } else if label == 0 && neg < 10 {
                neg += 1;
            } else {
                continue;
            }
            entries.push((index.linear_index(i, j).unwrap(), label));
            if entries.len() == 20 {
                break 'outer;
            }
        }
    }
    let ks = KnowledgeSet::new(10, entries).unwrap();
    let g0 = ds.g_direct.symmetrized();
    (ds.x.clone(), ks, g0)
}

#[test]
fn toy_training_reduces_loss() {
    let (x, ks, g0) = toy_fixture();
    let mut state = ModelState::<f32>::new(tiny_model_config(TowerMode::Dual, 3)).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let history = train(&mut state, &x, &ks, Some(&g0), &cfg).unwrap();
    let first = history.epochs.first().unwrap().loss;
    let last = history.epochs.last().unwrap().loss;
    assert!(
        last < first,
        "loss did not decrease: {} -> {}",
        first,
        last
    );
}

#[test]
fn learning_rate_trace_starts_at_paper_value_and_never_rises() {
    let (x, ks, g0) = toy_fixture();
    let mut state = ModelState::<f32>::new(tiny_model_config(TowerMode::GnnOnly, 4)).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 8,
        seed: 4,
        ..TrainConfig::default()
    };
    let history = train(&mut state, &x, &ks, Some(&g0), &cfg).unwrap();
    assert!(history.epochs[0].lr <= 1e-4 + f64::EPSILON);
    assert!(history.epochs[0].lr >= 1e-4 * 0.2 - f64::EPSILON);
    for w in history.epochs.windows(2) {
        assert!(w[1].lr <= w[0].lr + f64::EPSILON, "learning rate rose");
    }
    assert!(history.epochs.iter().all(|e| e.lr >= 1e-8));
}

#[test]
fn identical_seeds_identical_history() {
    let (x, ks, g0) = toy_fixture();
    let run = || {
        let mut state = ModelState::<f32>::new(tiny_model_config(TowerMode::Dual, 5)).unwrap();
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        train(&mut state, &x, &ks, Some(&g0), &cfg).unwrap()
    };
    let a = run();
    let b = run();
    for (ea, eb) in a.epochs.iter().zip(b.epochs.iter()) {
        assert_eq!(ea.loss.to_bits(), eb.loss.to_bits(), "loss differs at epoch {}", ea.epoch);
        assert_eq!(ea.lr.to_bits(), eb.lr.to_bits());
    }
}

#[test]
fn single_class_knowledge_is_rejected() {
    let (x, ks, g0) = toy_fixture();
    let positives_only = KnowledgeSet::new(
        10,
        ks.entries.iter().filter(|(_, l)| *l == 1).cloned().collect(),
    )
    .unwrap();
    let mut state = ModelState::<f32>::new(tiny_model_config(TowerMode::Dual, 6)).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 6,
        ..TrainConfig::default()
    };
    assert!(train(&mut state, &x, &positives_only, Some(&g0), &cfg).is_err());
}

#[test]
fn generator_equivariance_under_node_permutation() {
    // Permuting node labels and data columns identically must permute the
    // per-pair KDE images and both ground-truth graphs consistently.
    let ds = generate(&SimConfig {
        p: 8,
        n: 128,
        expected_parents: 1.5,
        family: FamilyTag::Tanh,
        snr: 4.0,
        pilot_n: 512,
        seed: 44,
    })
    .unwrap();
    let perm: Vec<usize> = vec![3, 0, 6, 1, 7, 2, 5, 4];
    let x_perm = ds.x.permuted_columns(&perm);
    let grid = GridSpec::new(8);
    for (a, b) in [(0usize, 1usize), (2, 5), (6, 3)] {
        let img = kde_image(&x_perm, a, b, &grid).unwrap();
        let img_orig = kde_image(&ds.x, perm[a], perm[b], &grid).unwrap();
        assert_eq!(img.data, img_orig.data, "pair ({},{})", a, b);
    }
}

#[test]
fn pearson_separates_linked_from_independent_at_high_snr() {
    // Linear chain with positive unit weight at high SNR: parent-child |r|
    // exceeds |r| between two independent roots.
    let g = DirectedGraph::from_edges(4, &[(0, 1)]).unwrap();
    let mut model = build_model(g, FunctionFamily::new(FamilyTag::Linear), 9).unwrap();
    model.functions[1] = d2cl_core::sem::NodeFunction::Linear { weights: vec![1.0] };
    let model = calibrate_noise(&model, 50.0, 2048, 9).unwrap();
    let ds = simulate(&model, 4096, 10).unwrap();
    let linked = pearson_r(ds.x.col(0), ds.x.col(1)).abs();
    let independent = pearson_r(ds.x.col(2), ds.x.col(3)).abs();
    assert!(
        linked > independent + 0.5,
        "linked {} vs independent {}",
        linked,
        independent
    );
}

#[test]
fn dag_sampler_respects_density_over_many_seeds() {
    let mut rng = seeded_rng(70, 0);
    let mut total = 0usize;
    let trials = 30;
    for _ in 0..trials {
        let g = sample_dag(&DagSpec {
            p: 60,
            expected_parents: 2.0,
            seed: rng.random(),
        });
        total += g.edge_count();
    }
    let mean_in_degree = total as f64 / (trials as f64 * 60.0);
    assert!(
        (mean_in_degree - 2.0).abs() < 0.3,
        "mean in-degree {}",
        mean_in_degree
    );
}

#[test]
fn smoke_sweep_produces_complete_report() {
    let mut cfg = SweepConfig::desk_smoke(11);
    cfg.train.batch_size = 16;
    let report = run_snr_sweep(&cfg);
    assert!(report.failures.is_empty(), "failures: {:?}", report.failures);
    // one cell, both the model row and the pearson baseline row
    assert_eq!(report.cells.len(), 2);
    assert!(report.cells.iter().any(|c| c.method == "d2cl-dual"));
    assert!(report.cells.iter().any(|c| c.method == "pearson"));
    for cell in &report.cells {
        assert!(cell.auc.is_finite() && (0.0..=1.0).contains(&cell.auc));
    }
}

#[test]
fn label_perturbation_zero_rate_matches_sweep_exactly() {
    let cfg = SweepConfig::desk_smoke(12);
    let base = run_snr_sweep(&cfg);
    let perturbed = d2cl_core::eval::run_label_perturbation(&cfg, 0.0);
    assert_eq!(base.cells.len(), perturbed.cells.len());
    for (a, b) in base.cells.iter().zip(perturbed.cells.iter()) {
        assert_eq!(a.auc.to_bits(), b.auc.to_bits(), "method {}", a.method);
    }
}

#[test]
fn evaluation_ground_truth_is_never_perturbed() {
    // With all training labels flipped, the split's evaluation labels still
    // come from the clean ground truth.
    let mut cfg = SweepConfig::desk_smoke(13);
    cfg.label_perturb_rate = 1.0;
    cfg.train.epochs = 1;
    let cell = run_cell(&cfg, FamilyTag::Linear, 10.0, Target::Direct, 13).unwrap();
    let labels = d2cl_core::eval::test_labels(&cell, Target::Direct).unwrap();
    let index = PairIndex::new(cfg.p);
    for (&k, &label) in cell.split.test.iter().zip(labels.iter()) {
        let (i, j) = index.pair_of(k).unwrap();
        assert_eq!(label == 1, cell.dataset.g_direct.has_edge(i, j));
    }
    // and the training labels really were flipped
    let clean = d2cl_core::graph::make_split(
        &cell.dataset.g_direct,
        &cell
            .split
            .train
            .entries
            .iter()
            .map(|&(k, _)| index.pair_of(k).unwrap().0)
            .collect::<BTreeSet<_>>(),
        &BTreeSet::new(),
    )
    .unwrap();
    let flipped = clean
        .train
        .entries
        .iter()
        .zip(cell.split.train.entries.iter())
        .filter(|((ka, la), (kb, lb))| ka == kb && la != lb)
        .count();
    assert_eq!(flipped, cell.split.train.len());
}

#[test]
fn trained_cell_scores_are_reproducible() {
    let cfg = SweepConfig::desk_smoke(14);
    let a = run_cell(&cfg, FamilyTag::Linear, 10.0, Target::Direct, 14).unwrap();
    let b = run_cell(&cfg, FamilyTag::Linear, 10.0, Target::Direct, 14).unwrap();
    let auc_a = model_auc(&a, Target::Direct, None).unwrap();
    let auc_b = model_auc(&b, Target::Direct, None).unwrap();
    assert_eq!(auc_a.to_bits(), auc_b.to_bits());
}
