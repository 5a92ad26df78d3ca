use d2cl_core::graph::{KnowledgeSet, PairIndex};
use d2cl_core::model::{train, FeaturizerConfig, ModelConfig, ModelState, TowerMode, TrainConfig};
use d2cl_core::sem::{generate, FamilyTag, SimConfig};

fn main() {
    let ds = generate(&SimConfig {
        p: 10,
        n: 192,
        expected_parents: 1.5,
        family: FamilyTag::Linear,
        snr: 10.0,
        pilot_n: 512,
        seed: 33,
    })
    .unwrap();
    let index = PairIndex::new(10);
    let mut entries = Vec::new();
    let (mut pos, mut neg) = (0, 0);
    'outer: for i in 0..10 {
        for j in 0..10 {
            if i == j { continue; }
            let label = u8::from(ds.g_direct.has_edge(i, j));
            if label == 1 && pos < 10 { pos += 1; }
            else if label == 0 && neg < 10 { neg += 1; }
            else { continue; }
            entries.push((index.linear_index(i, j).unwrap(), label));
            if entries.len() == 20 { break 'outer; }
        }
    }
    println!("pos {} neg {}", pos, neg);
    let ks = KnowledgeSet::new(10, entries).unwrap();
    let g0 = ds.g_direct.symmetrized();

    let mut cfg = ModelConfig::desk(TowerMode::Dual, 3);
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
    cfg.featurizer = FeaturizerConfig { grid_resolution: 8, max_label: 10, data_features: true, shuffle_seed: 3 };
    let mut state = ModelState::<f32>::new(cfg).unwrap();
    let tcfg = TrainConfig { epochs: 60, batch_size: 8, seed: 3, ..TrainConfig::default() };
    let history = train(&mut state, &ds.x, &ks, Some(&g0), &tcfg).unwrap();
    for e in history.epochs.iter().step_by(5) {
        println!("epoch {:3} loss {:.4} val {:.3} lr {:.1e}", e.epoch, e.loss, e.val_auc, e.lr);
    }
}
