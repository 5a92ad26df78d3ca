//! Gold-standard benchmark data: random DAGs and linear/nonlinear structural
//! equation models with noise calibrated to a target signal-to-noise ratio.
//!
//! Each node is computed in topological order as
//! `X_i = f_i(parents) + sigma_i * U_i` with independent standard-normal
//! noise; root nodes are pure unit-scale noise. Parent values entering `f_i`
//! are standardized with location/scale constants frozen at calibration time,
//! which keeps deep nonlinear systems (cubic polynomials in particular)
//! numerically bounded at any depth while leaving the per-node SNR
//! well-defined.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{sample_mean, sample_variance, DataMatrix};
use crate::error::CoreError;
use crate::graph::{transitive_closure, DirectedGraph, KnowledgeSet, PairIndex};
use crate::rng::{seeded_rng, streams};

/// The six structural function families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyTag {
    Linear,
    MlpTanh,
    MlpLeakyRelu,
    Tanh,
    LeakyRelu,
    Poly3,
}

impl FamilyTag {
    pub const ALL: [FamilyTag; 6] = [
        FamilyTag::Linear,
        FamilyTag::MlpTanh,
        FamilyTag::MlpLeakyRelu,
        FamilyTag::Tanh,
        FamilyTag::LeakyRelu,
        FamilyTag::Poly3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FamilyTag::Linear => "linear",
            FamilyTag::MlpTanh => "mlp-tanh",
            FamilyTag::MlpLeakyRelu => "mlp-leaky-relu",
            FamilyTag::Tanh => "tanh",
            FamilyTag::LeakyRelu => "leaky-relu",
            FamilyTag::Poly3 => "poly3",
        }
    }
}

impl std::str::FromStr for FamilyTag {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FamilyTag::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| CoreError::Schema(format!("unknown function family {:?}", s)))
    }
}

/// Family tag plus the shared generator hyperparameters. One generator is
/// drawn from per dataset, so every node's function comes from the same
/// distribution over functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionFamily {
    pub tag: FamilyTag,
    /// Weight magnitudes are uniform on [min, max] with random sign; the
    /// lower cutoff keeps every edge of the ground truth meaningful.
    pub weight_min_abs: f64,
    pub weight_max_abs: f64,
    pub mlp_hidden: usize,
    pub leaky_slope: f64,
    /// Polynomial coefficients are uniform on [-range, range].
    pub poly_coeff_range: f64,
}

impl FunctionFamily {
    pub fn new(tag: FamilyTag) -> Self {
        Self {
            tag,
            weight_min_abs: 0.1,
            weight_max_abs: 1.0,
            mlp_hidden: 16,
            leaky_slope: 0.01,
            poly_coeff_range: 1.0,
        }
    }

    fn draw_weight(&self, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        let magnitude = rng.random_range(self.weight_min_abs..=self.weight_max_abs);
        if rng.random_bool(0.5) {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// Structural function of one node, parameters drawn at model build time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NodeFunction {
    /// Root: pure exogenous noise.
    Root,
    Linear {
        weights: Vec<f64>,
    },
    Tanh {
        weights: Vec<f64>,
    },
    LeakyRelu {
        weights: Vec<f64>,
        slope: f64,
    },
    Poly3 {
        weights: Vec<f64>,
        coeffs: [f64; 3],
    },
    Mlp {
        /// hidden x arity, row-major.
        hidden_weights: Vec<f64>,
        output_weights: Vec<f64>,
        arity: usize,
        leaky: Option<f64>,
    },
}

impl NodeFunction {
    pub fn arity(&self) -> usize {
        match self {
            NodeFunction::Root => 0,
            NodeFunction::Linear { weights }
            | NodeFunction::Tanh { weights }
            | NodeFunction::LeakyRelu { weights, .. }
            | NodeFunction::Poly3 { weights, .. } => weights.len(),
            NodeFunction::Mlp { arity, .. } => *arity,
        }
    }

    /// Evaluate the structural function on raw parent values.
    pub fn eval(&self, parent_values: &[f64]) -> Result<f64, CoreError> {
        let expected = self.arity();
        if parent_values.len() != expected {
            return Err(CoreError::ArityMismatch {
                expected,
                got: parent_values.len(),
            });
        }
        Ok(match self {
            NodeFunction::Root => 0.0,
            NodeFunction::Linear { weights } => dot(weights, parent_values),
            NodeFunction::Tanh { weights } => dot(weights, parent_values).tanh(),
            NodeFunction::LeakyRelu { weights, slope } => leaky_relu(dot(weights, parent_values), *slope),
            NodeFunction::Poly3 { weights, coeffs } => {
                let z = dot(weights, parent_values);
                coeffs[0] * z + coeffs[1] * z * z + coeffs[2] * z * z * z
            }
            NodeFunction::Mlp {
                hidden_weights,
                output_weights,
                arity,
                leaky,
            } => {
                let hidden = output_weights.len();
                let mut acc = 0.0;
                for h in 0..hidden {
                    let pre = dot(&hidden_weights[h * arity..(h + 1) * arity], parent_values);
                    let act = match leaky {
                        Some(slope) => leaky_relu(pre, *slope),
                        None => pre.tanh(),
                    };
                    acc += output_weights[h] * act;
                }
                acc
            }
        })
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn leaky_relu(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        slope * z
    }
}

/// Random-DAG specification.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DagSpec {
    pub p: usize,
    /// Target mean in-degree.
    pub expected_parents: f64,
    pub seed: u64,
}

/// A causal graph plus per-node structural functions and noise scales.
#[derive(Clone, Debug)]
pub struct SemModel {
    pub graph: DirectedGraph,
    pub family: FunctionFamily,
    pub functions: Vec<NodeFunction>,
    /// Per-node noise standard deviation (1 for roots and before calibration).
    pub noise_scale: Vec<f64>,
    /// Per-parent (location, scale) applied to inputs of each node's
    /// function; identity before calibration.
    pub input_standardization: Vec<Vec<(f64, f64)>>,
    /// Nodes whose signal variance degenerated during calibration.
    pub flagged_nodes: Vec<usize>,
    topo_order: Vec<usize>,
}

/// Generated dataset bundle: data matrix, both ground-truth graphs, and
/// generation metadata.
#[derive(Clone, Debug)]
pub struct SimDataset {
    pub x: DataMatrix,
    pub g_direct: DirectedGraph,
    pub g_ancestral: DirectedGraph,
    pub family: FunctionFamily,
    pub snr_target: Option<f64>,
    /// Measured on the generated sample; `None` for root nodes.
    pub snr_achieved: Vec<Option<f64>>,
    pub flagged_nodes: Vec<usize>,
    pub seed: u64,
}

/// Which ground-truth graph supplies pair labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Direct,
    Ancestral,
}

impl Target {
    pub fn name(&self) -> &'static str {
        match self {
            Target::Direct => "direct",
            Target::Ancestral => "ancestral",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(Target::Direct),
            "ancestral" => Ok(Target::Ancestral),
            other => Err(CoreError::Schema(format!("unknown target {:?}", other))),
        }
    }
}

/// Sample an acyclic graph: draw a random node permutation, then include each
/// rank-increasing edge independently with probability
/// `2 * expected_parents / (p - 1)` (clamped to 1), which makes the mean
/// in-degree come out at `expected_parents`.
pub fn sample_dag(spec: &DagSpec) -> DirectedGraph {
    assert!(spec.p >= 2, "need at least two nodes");
    assert!(
        spec.expected_parents < spec.p as f64,
        "expected_parents must be below p"
    );
    let mut rng = seeded_rng(spec.seed, streams::DAG);
    let p = spec.p;
    let mut rank: Vec<usize> = (0..p).collect();
    // Fisher-Yates
    for i in (1..p).rev() {
        let j = rng.random_range(0..=i);
        rank.swap(i, j);
    }
    let prob = (2.0 * spec.expected_parents / (p as f64 - 1.0)).min(1.0);
    let mut g = DirectedGraph::new(p);
    for a in 0..p {
        for b in (a + 1)..p {
            if rng.random_bool(prob) {
                g.set_edge(rank[a], rank[b], true).expect("ranks distinct");
            }
        }
    }
    g
}

/// Draw per-node structural functions from the family's shared generator.
pub fn build_model(
    graph: DirectedGraph,
    family: FunctionFamily,
    seed: u64,
) -> Result<SemModel, CoreError> {
    let topo_order = graph
        .topological_order()
        .ok_or_else(|| CoreError::Schema("SEM graph must be acyclic".into()))?;
    let p = graph.node_count();
    let mut rng = seeded_rng(seed, streams::FUNCTIONS);
    let mut functions = Vec::with_capacity(p);
    for node in 0..p {
        let arity = graph.in_degree(node);
        if arity == 0 {
            functions.push(NodeFunction::Root);
            continue;
        }
        let weights: Vec<f64> = (0..arity).map(|_| family.draw_weight(&mut rng)).collect();
        functions.push(match family.tag {
            FamilyTag::Linear => NodeFunction::Linear { weights },
            FamilyTag::Tanh => NodeFunction::Tanh { weights },
            FamilyTag::LeakyRelu => NodeFunction::LeakyRelu {
                weights,
                slope: family.leaky_slope,
            },
            FamilyTag::Poly3 => {
                let coeffs = [
                    rng.random_range(-family.poly_coeff_range..=family.poly_coeff_range),
                    rng.random_range(-family.poly_coeff_range..=family.poly_coeff_range),
                    rng.random_range(-family.poly_coeff_range..=family.poly_coeff_range),
                ];
                NodeFunction::Poly3 { weights, coeffs }
            }
            FamilyTag::MlpTanh | FamilyTag::MlpLeakyRelu => {
                let hidden = family.mlp_hidden;
                let hidden_weights: Vec<f64> = (0..hidden * arity)
                    .map(|_| family.draw_weight(&mut rng))
                    .collect();
                let output_weights: Vec<f64> =
                    (0..hidden).map(|_| family.draw_weight(&mut rng)).collect();
                NodeFunction::Mlp {
                    hidden_weights,
                    output_weights,
                    arity,
                    leaky: match family.tag {
                        FamilyTag::MlpLeakyRelu => Some(family.leaky_slope),
                        _ => None,
                    },
                }
            }
        });
    }
    let input_standardization = (0..p)
        .map(|node| vec![(0.0, 1.0); graph.in_degree(node)])
        .collect();
    Ok(SemModel {
        noise_scale: vec![1.0; p],
        input_standardization,
        flagged_nodes: Vec::new(),
        graph,
        family,
        functions,
        topo_order,
    })
}

struct SimOutput {
    x: DataMatrix,
    signal_variance: Vec<Option<f64>>,
}

fn run_sem(
    model: &SemModel,
    n: usize,
    noise_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<SimOutput, CoreError> {
    let p = model.graph.node_count();
    let mut x = DataMatrix::zeros(n, p);
    let mut signal_variance = vec![None; p];
    // Noise is drawn column-by-column in topological order so calibration and
    // generation consume the stream identically.
    for &node in &model.topo_order {
        let parents: Vec<usize> = model.graph.in_neighbors(node).collect();
        if parents.is_empty() {
            let col = x.col_mut(node);
            for v in col.iter_mut() {
                *v = StandardNormal.sample(noise_rng);
            }
            continue;
        }
        let standardization = &model.input_standardization[node];
        let mut signal = vec![0.0f64; n];
        let mut z = vec![0.0f64; parents.len()];
        for row in 0..n {
            for (slot, (&parent, &(mu, scale))) in
                parents.iter().zip(standardization.iter()).enumerate()
            {
                z[slot] = (x.get(row, parent) - mu) / scale;
            }
            signal[row] = model.functions[node].eval(&z)?;
        }
        signal_variance[node] = Some(sample_variance(&signal));
        let sigma = model.noise_scale[node];
        let col = x.col_mut(node);
        for (row, v) in col.iter_mut().enumerate() {
            let u: f64 = StandardNormal.sample(noise_rng);
            *v = signal[row] + sigma * u;
        }
    }
    Ok(SimOutput { x, signal_variance })
}

/// Set each non-root node's noise scale so that the signal-to-noise ratio
/// `Var(f_i(parents)) / sigma_i^2` equals `snr`, using variances estimated
/// from a pilot simulation of `pilot_n` rows. Parent standardization
/// constants are frozen from the same pilot. Degenerate nodes (zero signal
/// variance) get `sigma_i = 1` and are flagged.
pub fn calibrate_noise(
    model: &SemModel,
    snr: f64,
    pilot_n: usize,
    seed: u64,
) -> Result<SemModel, CoreError> {
    if !snr.is_finite() || snr <= 0.0 {
        return Err(CoreError::BadSnr(snr));
    }
    let mut out = model.clone();
    out.flagged_nodes.clear();
    let p = out.graph.node_count();
    let mut rng = seeded_rng(seed, streams::PILOT_NOISE);
    // Sequential pilot: nodes are finalized in topological order so each
    // node's parents already carry their calibrated scales.
    let mut x = DataMatrix::zeros(pilot_n, p);
    let topo = out.topo_order.clone();
    for &node in &topo {
        let parents: Vec<usize> = out.graph.in_neighbors(node).collect();
        if parents.is_empty() {
            let col = x.col_mut(node);
            for v in col.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            continue;
        }
        let standardization: Vec<(f64, f64)> = parents
            .iter()
            .map(|&parent| {
                let col = x.col(parent);
                let mu = sample_mean(col);
                let sd = sample_variance(col).sqrt();
                (mu, if sd > 0.0 { sd } else { 1.0 })
            })
            .collect();
        out.input_standardization[node] = standardization.clone();

        let mut signal = vec![0.0f64; pilot_n];
        let mut z = vec![0.0f64; parents.len()];
        for row in 0..pilot_n {
            for (slot, (&parent, &(mu, scale))) in
                parents.iter().zip(standardization.iter()).enumerate()
            {
                z[slot] = (x.get(row, parent) - mu) / scale;
            }
            signal[row] = out.functions[node].eval(&z)?;
        }
        let var = sample_variance(&signal);
        let sigma = if var > 0.0 {
            (var / snr).sqrt()
        } else {
            out.flagged_nodes.push(node);
            1.0
        };
        out.noise_scale[node] = sigma;
        let col = x.col_mut(node);
        for (row, v) in col.iter_mut().enumerate() {
            let u: f64 = StandardNormal.sample(&mut rng);
            *v = signal[row] + sigma * u;
        }
    }
    Ok(out)
}

/// Draw `n` i.i.d. rows from the model. Deterministic for a fixed seed.
pub fn simulate(model: &SemModel, n: usize, seed: u64) -> Result<SimDataset, CoreError> {
    assert!(n >= 2, "need at least two rows");
    let mut rng = seeded_rng(seed, streams::NOISE);
    let sim = run_sem(model, n, &mut rng)?;
    let snr_achieved = sim
        .signal_variance
        .iter()
        .enumerate()
        .map(|(node, var)| var.map(|v| v / (model.noise_scale[node] * model.noise_scale[node])))
        .collect();
    let g_ancestral = transitive_closure(&model.graph);
    Ok(SimDataset {
        x: sim.x,
        g_direct: model.graph.clone(),
        g_ancestral,
        family: model.family.clone(),
        snr_target: None,
        snr_achieved,
        flagged_nodes: model.flagged_nodes.clone(),
        seed,
    })
}

/// Read pair labels for all ordered pairs rooted at `sources` from the direct
/// or ancestral ground truth.
pub fn derive_knowledge(
    ds: &SimDataset,
    target: Target,
    sources: &BTreeSet<usize>,
) -> Result<KnowledgeSet, CoreError> {
    let graph = match target {
        Target::Direct => &ds.g_direct,
        Target::Ancestral => &ds.g_ancestral,
    };
    let p = graph.node_count();
    let index = PairIndex::new(p);
    let mut entries = Vec::new();
    for &i in sources {
        if i >= p {
            return Err(CoreError::NodeOutOfRange { node: i, p });
        }
        for k in index.pairs_from_source(i) {
            let (_, j) = index.pair_of(k)?;
            entries.push((k, u8::from(graph.has_edge(i, j))));
        }
    }
    KnowledgeSet::new(p, entries)
}

/// One-call generation: sample a DAG, draw functions, calibrate noise to the
/// target SNR, and simulate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub p: usize,
    pub n: usize,
    pub expected_parents: f64,
    pub family: FamilyTag,
    pub snr: f64,
    pub pilot_n: usize,
    pub seed: u64,
}

pub fn generate(config: &SimConfig) -> Result<SimDataset, CoreError> {
    let dag = sample_dag(&DagSpec {
        p: config.p,
        expected_parents: config.expected_parents,
        seed: config.seed,
    });
    let model = build_model(dag, FunctionFamily::new(config.family), config.seed)?;
    let model = calibrate_noise(&model, config.snr, config.pilot_n, config.seed)?;
    let mut ds = simulate(&model, config.n, config.seed)?;
    ds.snr_target = Some(config.snr);
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    p: usize,
    n: usize,
    family: FunctionFamily,
    snr_target: Option<f64>,
    snr_achieved: Vec<Option<f64>>,
    flagged_nodes: Vec<usize>,
    seed: u64,
}

impl SimDataset {
    /// Write `X.csv`, `direct.csv`, `ancestral.csv` and `meta.json`.
    pub fn write_bundle(&self, dir: &Path) -> Result<(), CoreError> {
        std::fs::create_dir_all(dir)?;
        self.x.write_csv(&dir.join("X.csv"))?;
        self.g_direct.write_csv(&dir.join("direct.csv"))?;
        self.g_ancestral.write_csv(&dir.join("ancestral.csv"))?;
        let meta = BundleMeta {
            p: self.x.n_cols(),
            n: self.x.n_rows(),
            family: self.family.clone(),
            snr_target: self.snr_target,
            snr_achieved: self.snr_achieved.clone(),
            flagged_nodes: self.flagged_nodes.clone(),
            seed: self.seed,
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn read_bundle(dir: &Path) -> Result<Self, CoreError> {
        let meta: BundleMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let x = DataMatrix::read_csv(&dir.join("X.csv"))?;
        if x.n_cols() != meta.p || x.n_rows() != meta.n {
            return Err(CoreError::Schema(format!(
                "bundle {}: X.csv is {}x{}, meta says {}x{}",
                dir.display(),
                x.n_rows(),
                x.n_cols(),
                meta.n,
                meta.p
            )));
        }
        let g_direct = DirectedGraph::read_csv(&dir.join("direct.csv"), meta.p)?;
        let g_ancestral = DirectedGraph::read_csv(&dir.join("ancestral.csv"), meta.p)?;
        Ok(Self {
            x,
            g_direct,
            g_ancestral,
            family: meta.family,
            snr_target: meta.snr_target,
            snr_achieved: meta.snr_achieved,
            flagged_nodes: meta.flagged_nodes,
            seed: meta.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_std;

    #[test]
    fn zero_expected_parents_gives_empty_graph() {
        let g = sample_dag(&DagSpec { p: 20, expected_parents: 0.0, seed: 1 });
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn sampled_graphs_are_acyclic() {
        for seed in 0..20 {
            let g = sample_dag(&DagSpec { p: 30, expected_parents: 2.0, seed });
            assert!(g.topological_order().is_some(), "cycle at seed {}", seed);
        }
    }

    #[test]
    fn paper_scale_dag_mean_in_degree() {
        // p=1500: mean in-degree within 10% of target, averaged over 5 seeds.
        let target = 2.0;
        let mut total_edges = 0usize;
        for seed in 0..5 {
            let g = sample_dag(&DagSpec { p: 1500, expected_parents: target, seed });
            total_edges += g.edge_count();
        }
        let mean_in_degree = total_edges as f64 / (5.0 * 1500.0);
        assert!(
            (mean_in_degree - target).abs() / target < 0.10,
            "mean in-degree {} vs target {}",
            mean_in_degree,
            target
        );
    }

    #[test]
    fn family_closed_forms() {
        let tanh = NodeFunction::Tanh { weights: vec![0.5, -0.5] };
        assert_eq!(tanh.eval(&[1.0, 1.0]).unwrap(), 0.0);

        let lrelu = NodeFunction::LeakyRelu { weights: vec![1.0], slope: 0.01 };
        assert!((lrelu.eval(&[-1.0]).unwrap() + 0.01).abs() < 1e-15);
        assert_eq!(lrelu.eval(&[3.0]).unwrap(), 3.0);

        let poly = NodeFunction::Poly3 { weights: vec![1.0], coeffs: [0.0, 0.0, 1.0] };
        assert_eq!(poly.eval(&[2.0]).unwrap(), 8.0);
    }

    #[test]
    fn arity_mismatch_is_an_error() {
        let f = NodeFunction::Linear { weights: vec![1.0, 2.0] };
        assert!(matches!(
            f.eval(&[1.0]),
            Err(CoreError::ArityMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn roots_are_standard_normal() {
        let g = DirectedGraph::new(6);
        let model = build_model(g, FunctionFamily::new(FamilyTag::Linear), 3).unwrap();
        let ds = simulate(&model, 1024, 3).unwrap();
        for j in 0..6 {
            let col = ds.x.col(j);
            let mean = sample_mean(col);
            let std = sample_std(col);
            assert!(mean.abs() < 0.1, "col {} mean {}", j, mean);
            assert!((std - 1.0).abs() < 0.1, "col {} std {}", j, std);
        }
    }

    #[test]
    fn simulation_is_bit_deterministic() {
        let g = sample_dag(&DagSpec { p: 12, expected_parents: 1.5, seed: 9 });
        let model = build_model(g, FunctionFamily::new(FamilyTag::Tanh), 9).unwrap();
        let model = calibrate_noise(&model, 2.0, 512, 9).unwrap();
        let a = simulate(&model, 64, 11).unwrap();
        let b = simulate(&model, 64, 11).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn chain_snr_one_variance_ratio() {
        // 0 -> 1 with unit weight and SNR = 1: Var(X0) over the noise
        // variance of X1 lands at 1 within 15% at n = 4096.
        let g = DirectedGraph::from_edges(2, &[(0, 1)]).unwrap();
        let mut model = build_model(g, FunctionFamily::new(FamilyTag::Linear), 5).unwrap();
        model.functions[1] = NodeFunction::Linear { weights: vec![1.0] };
        let model = calibrate_noise(&model, 1.0, 4096, 5).unwrap();
        let ds = simulate(&model, 4096, 77).unwrap();
        let var_x0 = sample_variance(ds.x.col(0));
        let sigma2 = model.noise_scale[1] * model.noise_scale[1];
        let ratio = var_x0 / sigma2;
        assert!((ratio - 1.0).abs() < 0.15, "ratio {}", ratio);
    }

    #[test]
    fn snr_extremes_are_representable() {
        let g = sample_dag(&DagSpec { p: 10, expected_parents: 1.5, seed: 21 });
        let model = build_model(g, FunctionFamily::new(FamilyTag::Linear), 21).unwrap();
        for snr in [10.0, 0.1] {
            let calibrated = calibrate_noise(&model, snr, 2048, 21).unwrap();
            let ds = simulate(&calibrated, 4096, 22).unwrap();
            for (node, achieved) in ds.snr_achieved.iter().enumerate() {
                if let Some(a) = achieved {
                    assert!(
                        (a - snr).abs() / snr < 0.25,
                        "node {} achieved {} target {}",
                        node,
                        a,
                        snr
                    );
                }
            }
        }
    }

    #[test]
    fn infinite_or_zero_snr_rejected() {
        let g = DirectedGraph::from_edges(2, &[(0, 1)]).unwrap();
        let model = build_model(g, FunctionFamily::new(FamilyTag::Linear), 1).unwrap();
        assert!(calibrate_noise(&model, f64::INFINITY, 256, 1).is_err());
        assert!(calibrate_noise(&model, 0.0, 256, 1).is_err());
        assert!(calibrate_noise(&model, -1.0, 256, 1).is_err());
    }

    #[test]
    fn doubling_weights_doubles_noise_scale() {
        let g = DirectedGraph::from_edges(3, &[(0, 2), (1, 2)]).unwrap();
        let mut model = build_model(g, FunctionFamily::new(FamilyTag::Linear), 13).unwrap();
        model.functions[2] = NodeFunction::Linear { weights: vec![0.6, -0.4] };
        let base = calibrate_noise(&model, 4.0, 8192, 13).unwrap();
        model.functions[2] = NodeFunction::Linear { weights: vec![1.2, -0.8] };
        let doubled = calibrate_noise(&model, 4.0, 8192, 13).unwrap();
        let ratio = doubled.noise_scale[2] / base.noise_scale[2];
        assert!((ratio - 2.0).abs() < 0.05, "sigma ratio {}", ratio);
    }

    #[test]
    fn degenerate_signal_is_flagged() {
        let g = DirectedGraph::from_edges(2, &[(0, 1)]).unwrap();
        let mut model = build_model(g, FunctionFamily::new(FamilyTag::Linear), 2).unwrap();
        model.functions[1] = NodeFunction::Linear { weights: vec![0.0] };
        let calibrated = calibrate_noise(&model, 1.0, 256, 2).unwrap();
        assert_eq!(calibrated.flagged_nodes, vec![1]);
        assert_eq!(calibrated.noise_scale[1], 1.0);
    }

    #[test]
    fn knowledge_from_chain() {
        let g = DirectedGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let model = build_model(g, FunctionFamily::new(FamilyTag::Linear), 4).unwrap();
        let ds = simulate(&model, 16, 4).unwrap();
        let index = PairIndex::new(3);
        let sources = BTreeSet::from([0]);

        let direct = derive_knowledge(&ds, Target::Direct, &sources).unwrap();
        assert_eq!(direct.label_of(index.linear_index(0, 1).unwrap()), Some(1));
        assert_eq!(direct.label_of(index.linear_index(0, 2).unwrap()), Some(0));

        let ancestral = derive_knowledge(&ds, Target::Ancestral, &sources).unwrap();
        assert_eq!(ancestral.label_of(index.linear_index(0, 2).unwrap()), Some(1));
    }

    #[test]
    fn knowledge_matches_closure_oracle_on_random_dags() {
        for seed in 0..20 {
            let g = sample_dag(&DagSpec { p: 15, expected_parents: 2.0, seed });
            let model = build_model(g.clone(), FunctionFamily::new(FamilyTag::Linear), seed).unwrap();
            let ds = simulate(&model, 8, seed).unwrap();
            let closure = transitive_closure(&g);
            let sources: BTreeSet<usize> = (0..15).collect();
            let ks = derive_knowledge(&ds, Target::Ancestral, &sources).unwrap();
            let index = PairIndex::new(15);
            for (k, label) in ks.entries {
                let (i, j) = index.pair_of(k).unwrap();
                assert_eq!(label == 1, closure.has_edge(i, j), "pair ({},{})", i, j);
            }
        }
    }

    #[test]
    fn ancestral_contains_direct() {
        for seed in 0..10 {
            let g = sample_dag(&DagSpec { p: 25, expected_parents: 2.5, seed });
            let model = build_model(g, FunctionFamily::new(FamilyTag::Poly3), seed).unwrap();
            let ds = simulate(&model, 8, seed).unwrap();
            for (i, j) in ds.g_direct.edges() {
                assert!(ds.g_ancestral.has_edge(i, j));
            }
        }
    }

    #[test]
    fn deep_nonlinear_systems_stay_finite() {
        for tag in FamilyTag::ALL {
            let cfg = SimConfig {
                p: 60,
                n: 128,
                expected_parents: 2.0,
                family: tag,
                snr: 0.1,
                pilot_n: 1024,
                seed: 31,
            };
            let ds = generate(&cfg).unwrap();
            for j in 0..60 {
                assert!(
                    ds.x.col(j).iter().all(|v| v.is_finite()),
                    "family {:?} produced non-finite values",
                    tag
                );
            }
        }
    }

    #[test]
    fn bundle_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimConfig {
            p: 8,
            n: 32,
            expected_parents: 1.5,
            family: FamilyTag::Tanh,
            snr: 2.0,
            pilot_n: 256,
            seed: 17,
        };
        let ds = generate(&cfg).unwrap();
        ds.write_bundle(dir.path()).unwrap();
        let ds2 = SimDataset::read_bundle(dir.path()).unwrap();
        assert_eq!(ds.x, ds2.x);
        assert_eq!(ds.g_direct, ds2.g_direct);
        assert_eq!(ds.g_ancestral, ds2.g_ancestral);
        assert_eq!(ds.snr_target, ds2.snr_target);
    }
}
