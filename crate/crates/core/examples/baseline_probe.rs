//! Pearson-baseline difficulty probe across graph densities.

use d2cl_core::eval::{pearson_scores, roc_auc, source_split};
use d2cl_core::graph::make_split;
use d2cl_core::sem::{generate, FamilyTag, SimConfig};

fn main() {
    let p = 100;
    let n = 512;
    for ep in [2.0, 3.0, 4.0, 5.0] {
        for snr in [10.0] {
            let mut aucs = Vec::new();
            let mut edges = 0;
            for seed in 0..3u64 {
                let ds = generate(&SimConfig {
                    p,
                    n,
                    expected_parents: ep,
                    family: FamilyTag::Linear,
                    snr,
                    pilot_n: 2048,
                    seed,
                })
                .unwrap();
                edges += ds.g_direct.edge_count();
                let (tr, te) = source_split(p, 0.6, seed);
                let split = make_split(&ds.g_direct, &tr, &te).unwrap();
                let labels: Vec<u8> = {
                    let index = d2cl_core::graph::PairIndex::new(p);
                    split
                        .test
                        .iter()
                        .map(|&k| {
                            let (i, j) = index.pair_of(k).unwrap();
                            u8::from(ds.g_direct.has_edge(i, j))
                        })
                        .collect()
                };
                let scores = pearson_scores(&ds.x, &split.test).unwrap();
                aucs.push(roc_auc(&scores, &labels).unwrap().auc);
            }
            let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
            println!(
                "ep={} snr={}: pearson AUC mean {:.4} ({:?}), edges/seed {}",
                ep,
                snr,
                mean,
                aucs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                edges / 3
            );
        }
    }
}
