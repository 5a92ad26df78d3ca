//! Enclosing-subgraph featurization: initial graph estimates from data,
//! 1-hop subgraph extraction per ordered pair, double-radius node labels and
//! per-node feature encoding.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{column_moments, sample_mean, sample_variance, DataMatrix};
use crate::error::CoreError;
use crate::graph::DirectedGraph;
use crate::rng::seeded_rng;

/// How the initial graph estimate was built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum InitialGraphMethod {
    /// Per node, undirected links to the nodes with the largest absolute
    /// Pearson correlation, materialized as symmetric directed pairs.
    Pearson { per_node_budget: usize },
    /// Per target node, an L1-regularized regression on all other columns;
    /// an edge i -> j is kept when the coefficient survives shrinkage.
    Lasso { lambda: f64 },
}

/// Initial graph estimate with provenance.
#[derive(Clone, Debug)]
pub struct InitialGraphEstimate {
    pub graph: DirectedGraph,
    pub method: InitialGraphMethod,
}

impl InitialGraphEstimate {
    /// Edge-list CSV plus a JSON sidecar describing the method.
    pub fn write(&self, csv_path: &Path, sidecar_path: &Path) -> Result<(), CoreError> {
        self.graph.write_csv(csv_path)?;
        std::fs::write(sidecar_path, serde_json::to_string_pretty(&self.method)?)?;
        Ok(())
    }
}

/// Pearson correlation; 0 for degenerate columns.
pub fn pearson_r(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = sample_mean(a);
    let mb = sample_mean(b);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    let _ = n;
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn per_node_selections(x: &DataMatrix, budget: usize) -> Vec<Vec<usize>> {
    let p = x.n_cols();
    let degenerate: Vec<bool> = (0..p).map(|j| sample_variance(x.col(j)) <= 0.0).collect();
    // Upper-triangular |r| table.
    let mut r_abs = vec![0.0f64; p * p];
    for i in 0..p {
        for j in (i + 1)..p {
            if degenerate[i] || degenerate[j] {
                continue;
            }
            let r = pearson_r(x.col(i), x.col(j)).abs();
            r_abs[i * p + j] = r;
            r_abs[j * p + i] = r;
        }
    }
    (0..p)
        .map(|i| {
            if degenerate[i] {
                return Vec::new();
            }
            let mut candidates: Vec<usize> =
                (0..p).filter(|&j| j != i && !degenerate[j]).collect();
            // Descending |r|, ties to the smaller node id.
            candidates.sort_by(|&a, &b| {
                r_abs[i * p + b]
                    .partial_cmp(&r_abs[i * p + a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            candidates.truncate(budget);
            candidates
        })
        .collect()
}

/// Initial graph from per-node top-|r| selection, symmetrized.
pub fn initial_graph_pearson(
    x: &DataMatrix,
    per_node_budget: usize,
) -> Result<InitialGraphEstimate, CoreError> {
    assert!(per_node_budget >= 1, "budget must be at least 1");
    let p = x.n_cols();
    let mut graph = DirectedGraph::new(p);
    for (i, partners) in per_node_selections(x, per_node_budget).into_iter().enumerate() {
        for j in partners {
            graph.set_edge(i, j, true)?;
            graph.set_edge(j, i, true)?;
        }
    }
    Ok(InitialGraphEstimate {
        graph,
        method: InitialGraphMethod::Pearson { per_node_budget },
    })
}

/// Cyclic coordinate descent for the lasso
/// `min_beta  1/(2n) ||y - X beta||^2 + lambda ||beta||_1`
/// over standardized columns, so each update is a plain soft-threshold.
/// Returns the coefficients in the caller's column order.
pub fn lasso_coordinate_descent(
    predictors: &[&[f64]],
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<f64>, CoreError> {
    let n = y.len();
    let d = predictors.len();
    // Standardize predictors and center y (population scale so x'x/n = 1).
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut live = vec![true; d];
    for (idx, col) in predictors.iter().enumerate() {
        let mu = sample_mean(col);
        let scale = (col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64).sqrt();
        if scale <= 0.0 {
            live[idx] = false;
            xs.push(vec![0.0; n]);
            continue;
        }
        xs.push(col.iter().map(|v| (v - mu) / scale).collect());
    }
    let y_mean = sample_mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let mut beta = vec![0.0f64; d];
    let mut residual = yc.clone();
    let inv_n = 1.0 / n as f64;
    for sweep in 0..max_sweeps {
        let mut max_delta = 0.0f64;
        for idx in 0..d {
            if !live[idx] {
                continue;
            }
            let xcol = &xs[idx];
            // rho = x' (residual + x*beta_j) / n with x'x/n = 1
            let mut rho = 0.0;
            for r in 0..n {
                rho += xcol[r] * residual[r];
            }
            rho = rho * inv_n + beta[idx];
            let new = soft_threshold(rho, lambda);
            let delta = new - beta[idx];
            if delta != 0.0 {
                for r in 0..n {
                    residual[r] -= delta * xcol[r];
                }
                beta[idx] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        if max_delta < tol {
            return Ok(beta);
        }
        if sweep == max_sweeps - 1 {
            return Err(CoreError::LassoDiverged {
                sweeps: max_sweeps,
                max_delta,
            });
        }
    }
    Err(CoreError::LassoDiverged {
        sweeps: max_sweeps,
        max_delta: f64::NAN,
    })
}

fn soft_threshold(rho: f64, lambda: f64) -> f64 {
    if rho > lambda {
        rho - lambda
    } else if rho < -lambda {
        rho + lambda
    } else {
        0.0
    }
}

/// Initial graph from one lasso regression per target node.
pub fn initial_graph_lasso(x: &DataMatrix, lambda: f64) -> Result<InitialGraphEstimate, CoreError> {
    assert!(lambda > 0.0, "lambda must be positive");
    let p = x.n_cols();
    let mut graph = DirectedGraph::new(p);
    for target in 0..p {
        if sample_variance(x.col(target)) <= 0.0 {
            continue;
        }
        let others: Vec<usize> = (0..p).filter(|&j| j != target).collect();
        let predictors: Vec<&[f64]> = others.iter().map(|&j| x.col(j)).collect();
        let beta = lasso_coordinate_descent(&predictors, x.col(target), lambda, 1e-6, 1000)?;
        for (slot, &source) in others.iter().enumerate() {
            if beta[slot] != 0.0 {
                graph.set_edge(source, target, true)?;
            }
        }
    }
    Ok(InitialGraphEstimate {
        graph,
        method: InitialGraphMethod::Lasso { lambda },
    })
}

/// Node role inside an enclosing subgraph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeRole {
    SourceCenter,
    TargetCenter,
    Context,
}

impl NodeRole {
    pub fn one_hot_slot(&self) -> usize {
        match self {
            NodeRole::SourceCenter => 0,
            NodeRole::TargetCenter => 1,
            NodeRole::Context => 2,
        }
    }
}

/// 1-hop enclosing subgraph of an ordered pair.
#[derive(Clone, Debug)]
pub struct EnclosingSubgraph {
    /// Original node ids, in shuffled order.
    pub nodes: Vec<usize>,
    /// Positions of the source / target centers within `nodes`.
    pub center_source: usize,
    pub center_target: usize,
    /// Dense directed adjacency restricted to `nodes` (row-major, member order).
    pub adjacency: Vec<u8>,
    pub roles: Vec<NodeRole>,
}

impl EnclosingSubgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.nodes.len() + b] != 0
    }

    /// Symmetric binary adjacency (the undirected view used for propagation).
    pub fn undirected_adjacency(&self) -> Vec<u8> {
        let m = self.nodes.len();
        let mut out = vec![0u8; m * m];
        for a in 0..m {
            for b in 0..m {
                if a != b && (self.adjacency[a * m + b] != 0 || self.adjacency[b * m + a] != 0) {
                    out[a * m + b] = 1;
                }
            }
        }
        out
    }
}

/// Extract the 1-hop enclosing subgraph for `(i, j)`: the centers plus every
/// node adjacent to either one in either direction, with all induced edges.
/// Node order is shuffled by `shuffle_seed`.
pub fn extract_1hop(
    g0: &DirectedGraph,
    i: usize,
    j: usize,
    shuffle_seed: u64,
) -> Result<EnclosingSubgraph, CoreError> {
    if i == j {
        return Err(CoreError::SelfLoop(i));
    }
    let p = g0.node_count();
    if i >= p || j >= p {
        return Err(CoreError::NodeOutOfRange { node: i.max(j), p });
    }
    let mut members = vec![false; p];
    members[i] = true;
    members[j] = true;
    for center in [i, j] {
        for v in g0.out_neighbors(center) {
            members[v] = true;
        }
        for v in g0.in_neighbors(center) {
            members[v] = true;
        }
    }
    let mut nodes: Vec<usize> = (0..p).filter(|&v| members[v]).collect();
    let mut rng = seeded_rng(shuffle_seed, crate::rng::streams::SHUFFLE);
    for a in (1..nodes.len()).rev() {
        let b = rand::Rng::random_range(&mut rng, 0..=a);
        nodes.swap(a, b);
    }
    let m = nodes.len();
    let mut adjacency = vec![0u8; m * m];
    for a in 0..m {
        for b in 0..m {
            if a != b && g0.has_edge(nodes[a], nodes[b]) {
                adjacency[a * m + b] = 1;
            }
        }
    }
    let center_source = nodes.iter().position(|&v| v == i).expect("center present");
    let center_target = nodes.iter().position(|&v| v == j).expect("center present");
    let roles = (0..m)
        .map(|pos| {
            if pos == center_source {
                NodeRole::SourceCenter
            } else if pos == center_target {
                NodeRole::TargetCenter
            } else {
                NodeRole::Context
            }
        })
        .collect();
    Ok(EnclosingSubgraph {
        nodes,
        center_source,
        center_target,
        adjacency,
        roles,
    })
}

/// BFS distances on the undirected view with one node removed entirely.
fn bfs_distances(adj: &[u8], m: usize, start: usize, removed: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; m];
    if start == removed {
        return dist;
    }
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have distances");
        for v in 0..m {
            if v == removed || v == u {
                continue;
            }
            if adj[u * m + v] != 0 && dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// The double-radius hash: centers get 1, nodes disconnected from either
/// center (after removing the other) get 0, and otherwise with
/// `d = d_source + d_target`:
/// `label = 1 + min(d_source, d_target) + (d/2) * (d/2 + d%2 - 1)`.
pub fn drnl_hash(d_source: u32, d_target: u32) -> u32 {
    let d = (d_source + d_target) as i64;
    let half = d / 2;
    let label = 1 + d_source.min(d_target) as i64 + half * (half + d % 2 - 1);
    label.max(0) as u32
}

/// Structural labels per node, by position in `sg.nodes`.
pub fn drnl_labels(sg: &EnclosingSubgraph) -> Vec<u32> {
    let m = sg.len();
    let undirected = sg.undirected_adjacency();
    // Distances to the source center with the target center removed, and vice
    // versa.
    let d_src = bfs_distances(&undirected, m, sg.center_source, sg.center_target);
    let d_tgt = bfs_distances(&undirected, m, sg.center_target, sg.center_source);
    (0..m)
        .map(|pos| {
            if pos == sg.center_source || pos == sg.center_target {
                return 1;
            }
            match (d_src[pos], d_tgt[pos]) {
                (Some(a), Some(b)) => drnl_hash(a, b),
                _ => 0,
            }
        })
        .collect()
}

/// Per-node feature width for the given configuration.
pub fn feature_width(max_label: u32, with_data_features: bool) -> usize {
    (max_label as usize + 1) + 3 + if with_data_features { 4 } else { 0 }
}

/// Encode per-node features: one-hot DRNL label (clamped to `max_label`),
/// one-hot role, and optionally the node column's four moment summaries.
/// Returns a row-major `m x feature_width` matrix.
pub fn encode_features(
    sg: &EnclosingSubgraph,
    labels: &[u32],
    max_label: u32,
    x: Option<&DataMatrix>,
) -> Vec<f64> {
    let m = sg.len();
    assert_eq!(labels.len(), m, "one label per node");
    let width = feature_width(max_label, x.is_some());
    let label_slots = max_label as usize + 1;
    let mut out = vec![0.0f64; m * width];
    for pos in 0..m {
        let row = &mut out[pos * width..(pos + 1) * width];
        let label = labels[pos].min(max_label) as usize;
        row[label] = 1.0;
        row[label_slots + sg.roles[pos].one_hot_slot()] = 1.0;
        if let Some(data) = x {
            let moments = column_moments(data.col(sg.nodes[pos]));
            row[label_slots + 3] = moments.mean;
            row[label_slots + 4] = moments.std;
            row[label_slots + 5] = moments.skewness;
            row[label_slots + 6] = moments.excess_kurtosis;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn random_matrix(n: usize, p: usize, seed: u64) -> DataMatrix {
        let mut rng = seeded_rng(seed, 0);
        DataMatrix::from_columns(
            (0..p)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        )
    }

    fn random_graph(p: usize, prob: f64, seed: u64) -> DirectedGraph {
        let mut rng = seeded_rng(seed, 1);
        let mut g = DirectedGraph::new(p);
        for i in 0..p {
            for j in 0..p {
                if i != j && rng.random_bool(prob) {
                    g.set_edge(i, j, true).unwrap();
                }
            }
        }
        g
    }

    #[test]
    fn pearson_budget_one_picks_strongest_partner() {
        let mut rng = seeded_rng(2, 0);
        let base: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let doubled: Vec<f64> = base.iter().map(|v| 2.0 * v + rng.random_range(-1e-4..1e-4)).collect();
        let noise: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = DataMatrix::from_columns(vec![base, doubled, noise]);
        let est = initial_graph_pearson(&x, 1).unwrap();
        assert!(est.graph.has_edge(0, 1));
        assert!(est.graph.has_edge(1, 0));
    }

    #[test]
    fn pearson_selection_count_equals_budget() {
        let x = random_matrix(64, 10, 3);
        for budget in [1, 3, 5] {
            let selections = per_node_selections(&x, budget);
            for sel in &selections {
                assert_eq!(sel.len(), budget);
            }
        }
    }

    #[test]
    fn pearson_is_deterministic() {
        let x = random_matrix(64, 8, 4);
        let a = initial_graph_pearson(&x, 3).unwrap();
        let b = initial_graph_pearson(&x, 3).unwrap();
        assert_eq!(a.graph, b.graph);
    }

    #[test]
    fn lasso_large_lambda_gives_empty_graph() {
        let x = random_matrix(64, 6, 5);
        let est = initial_graph_lasso(&x, 100.0).unwrap();
        assert_eq!(est.graph.edge_count(), 0);
    }

    #[test]
    fn lasso_single_predictor_matches_soft_threshold_oracle() {
        // One standardized predictor: beta = sign(rho) * max(|rho| - lambda, 0)
        // with rho = x'y/n.
        let mut rng = seeded_rng(6, 0);
        let n = 256;
        let xcol: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = xcol.iter().map(|v| 0.7 * v + rng.random_range(-0.2..0.2)).collect();

        let mu = sample_mean(&xcol);
        let scale = (xcol.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64).sqrt();
        let xs: Vec<f64> = xcol.iter().map(|v| (v - mu) / scale).collect();
        let ymu = sample_mean(&y);
        let rho = xs.iter().zip(y.iter()).map(|(a, b)| a * (b - ymu)).sum::<f64>() / n as f64;

        for lambda in [0.05, 0.2, 0.5, 2.0] {
            let beta = lasso_coordinate_descent(&[&xcol], &y, lambda, 1e-10, 500).unwrap();
            let expect = soft_threshold(rho, lambda);
            assert!(
                (beta[0] - expect).abs() < 1e-5,
                "lambda {}: beta {} expect {}",
                lambda,
                beta[0],
                expect
            );
        }
    }

    #[test]
    fn lasso_recovers_chain_links() {
        // 0 -> 1 -> 2 with strong signal: lasso keeps the adjacent links and
        // drops the distal 0-2 one given partial correlation.
        let mut rng = seeded_rng(7, 0);
        let n = 512;
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x1: Vec<f64> = x0.iter().map(|v| v + 0.1 * rng.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = x1.iter().map(|v| v + 0.1 * rng.random_range(-1.0..1.0)).collect();
        let x = DataMatrix::from_columns(vec![x0, x1, x2]);
        let est = initial_graph_lasso(&x, 0.05).unwrap();
        let sym = est.graph.symmetrized();
        assert!(sym.has_edge(0, 1), "0-1 missing");
        assert!(sym.has_edge(1, 2), "1-2 missing");
    }

    #[test]
    fn lasso_nonconvergence_is_reported() {
        let x = random_matrix(32, 4, 8);
        let predictors: Vec<&[f64]> = (1..4).map(|j| x.col(j)).collect();
        let err = lasso_coordinate_descent(&predictors, x.col(0), 1e-6, 0.0, 1);
        assert!(matches!(err, Err(CoreError::LassoDiverged { .. })));
    }

    #[test]
    fn extract_star_subgraph() {
        // Star: center 0 with leaves 1, 2; pair (0, 1) pulls in node 2 too.
        let g = DirectedGraph::from_edges(4, &[(0, 1), (0, 2)]).unwrap();
        let sg = extract_1hop(&g, 0, 1, 11).unwrap();
        let mut members = sg.nodes.clone();
        members.sort_unstable();
        assert_eq!(members, vec![0, 1, 2]);
        let pos0 = sg.nodes.iter().position(|&v| v == 0).unwrap();
        let pos1 = sg.nodes.iter().position(|&v| v == 1).unwrap();
        let pos2 = sg.nodes.iter().position(|&v| v == 2).unwrap();
        assert!(sg.has_edge(pos0, pos1));
        assert!(sg.has_edge(pos0, pos2));
        assert!(!sg.has_edge(pos1, pos0));
        assert_eq!(sg.roles[sg.center_source], NodeRole::SourceCenter);
        assert_eq!(sg.roles[sg.center_target], NodeRole::TargetCenter);
    }

    #[test]
    fn isolated_centers_give_two_node_subgraph() {
        let g = DirectedGraph::new(6);
        let sg = extract_1hop(&g, 2, 4, 1).unwrap();
        assert_eq!(sg.len(), 2);
        assert!(sg.adjacency.iter().all(|&v| v == 0));
    }

    #[test]
    fn membership_matches_bruteforce_on_random_graphs() {
        for seed in 0..100 {
            let p = 20;
            let g = random_graph(p, 0.08, seed);
            let i = (seed as usize * 7) % p;
            let mut j = (seed as usize * 13 + 3) % p;
            if j == i {
                j = (j + 1) % p;
            }
            let sg = extract_1hop(&g, i, j, seed).unwrap();
            let mut expect: Vec<usize> = (0..p)
                .filter(|&v| {
                    v == i
                        || v == j
                        || g.has_edge(i, v)
                        || g.has_edge(v, i)
                        || g.has_edge(j, v)
                        || g.has_edge(v, j)
                })
                .collect();
            expect.sort_unstable();
            let mut got = sg.nodes.clone();
            got.sort_unstable();
            assert_eq!(got, expect, "seed {}", seed);
        }
    }

    #[test]
    fn node_set_is_pair_order_invariant() {
        for seed in 0..20 {
            let g = random_graph(15, 0.1, seed);
            let a = extract_1hop(&g, 2, 9, seed).unwrap();
            let b = extract_1hop(&g, 9, 2, seed).unwrap();
            let mut na = a.nodes.clone();
            let mut nb = b.nodes.clone();
            na.sort_unstable();
            nb.sort_unstable();
            assert_eq!(na, nb);
        }
    }

    #[test]
    fn centers_get_label_one_and_path_node_two() {
        // Path i - a - j (undirected edges in the initial graph).
        let g = DirectedGraph::from_edges(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
        let sg = extract_1hop(&g, 0, 2, 5).unwrap();
        let labels = drnl_labels(&sg);
        assert_eq!(labels[sg.center_source], 1);
        assert_eq!(labels[sg.center_target], 1);
        let mid = sg.nodes.iter().position(|&v| v == 1).unwrap();
        assert_eq!(labels[mid], 2);
    }

    #[test]
    fn unreachable_after_removal_gets_zero() {
        // 1 is adjacent to center 0 only through center 2?  Build: 0-2 edge,
        // 2-1 edge. For pair (0,1): node 2 connects both. Node set {0,1,2}.
        // Removing center 1: distance from 0 to 2 is 1. Removing center 0:
        // distance from 1 to 2 is 1. Now a node hanging off center 0 only:
        // add 3 with edge 0-3. For pair (0,1), d_target(3) requires a path
        // avoiding center 0: none exists, so label 0.
        let g = DirectedGraph::from_edges(
            4,
            &[(0, 2), (2, 0), (2, 1), (1, 2), (0, 3), (3, 0)],
        )
        .unwrap();
        let sg = extract_1hop(&g, 0, 1, 3).unwrap();
        let labels = drnl_labels(&sg);
        let pos3 = sg.nodes.iter().position(|&v| v == 3).unwrap();
        assert_eq!(labels[pos3], 0);
    }

    /// Plain double-BFS plus direct hash evaluation, used as the oracle.
    fn drnl_oracle(sg: &EnclosingSubgraph) -> Vec<u32> {
        let m = sg.len();
        let adj = sg.undirected_adjacency();
        let bfs = |start: usize, removed: usize| -> Vec<Option<u32>> {
            let mut dist = vec![None; m];
            dist[start] = Some(0u32);
            let mut frontier = vec![start];
            let mut d = 0;
            while !frontier.is_empty() {
                d += 1;
                let mut next = Vec::new();
                for &u in &frontier {
                    for v in 0..m {
                        if v != removed && adj[u * m + v] != 0 && dist[v].is_none() {
                            dist[v] = Some(d);
                            next.push(v);
                        }
                    }
                }
                frontier = next;
            }
            dist
        };
        let ds = bfs(sg.center_source, sg.center_target);
        let dt = bfs(sg.center_target, sg.center_source);
        (0..m)
            .map(|pos| {
                if pos == sg.center_source || pos == sg.center_target {
                    1
                } else {
                    match (ds[pos], dt[pos]) {
                        (Some(a), Some(b)) => {
                            let d = a + b;
                            let half = d / 2;
                            (1 + a.min(b) as i64 + (half as i64) * (half as i64 + (d % 2) as i64 - 1))
                                as u32
                        }
                        _ => 0,
                    }
                }
            })
            .collect()
    }

    #[test]
    fn drnl_matches_oracle_on_random_subgraphs() {
        let mut checked = 0;
        for seed in 0..250 {
            let p = 24;
            let g = random_graph(p, 0.09, seed + 1000);
            let i = (seed as usize * 5) % p;
            let mut j = (seed as usize * 11 + 7) % p;
            if j == i {
                j = (j + 1) % p;
            }
            let sg = extract_1hop(&g, i, j, seed).unwrap();
            assert_eq!(drnl_labels(&sg), drnl_oracle(&sg), "seed {}", seed);
            checked += 1;
        }
        assert!(checked >= 200);
    }

    #[test]
    fn drnl_invariant_to_shuffle_and_pair_swap() {
        for seed in 0..30 {
            let g = random_graph(18, 0.12, seed + 50);
            let sg1 = extract_1hop(&g, 3, 10, seed).unwrap();
            let sg2 = extract_1hop(&g, 3, 10, seed + 999).unwrap();
            let l1 = drnl_labels(&sg1);
            let l2 = drnl_labels(&sg2);
            // Compare by original node id.
            for (pos, &node) in sg1.nodes.iter().enumerate() {
                let pos2 = sg2.nodes.iter().position(|&v| v == node).unwrap();
                assert_eq!(l1[pos], l2[pos2], "shuffle changed label of node {}", node);
            }
            // Swapping the ordered pair keeps labels, swaps roles.
            let swapped = extract_1hop(&g, 10, 3, seed).unwrap();
            let ls = drnl_labels(&swapped);
            for (pos, &node) in sg1.nodes.iter().enumerate() {
                let pos2 = swapped.nodes.iter().position(|&v| v == node).unwrap();
                assert_eq!(l1[pos], ls[pos2], "pair swap changed label of node {}", node);
            }
            assert_eq!(swapped.roles[swapped.center_source], NodeRole::SourceCenter);
            assert_eq!(swapped.nodes[swapped.center_source], 10);
        }
    }

    #[test]
    fn drnl_hash_is_symmetric_in_distances() {
        for a in 1..6u32 {
            for b in 1..6u32 {
                assert_eq!(drnl_hash(a, b), drnl_hash(b, a));
            }
        }
    }

    #[test]
    fn one_hot_encoding_layout() {
        let g = DirectedGraph::from_edges(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
        let sg = extract_1hop(&g, 0, 2, 1).unwrap();
        let labels = drnl_labels(&sg);
        let feats = encode_features(&sg, &labels, 8, None);
        let width = feature_width(8, false);
        assert_eq!(width, 9 + 3);
        assert_eq!(feats.len(), sg.len() * width);
        // Center rows: one-hot at label slot 1 and a role flag.
        let row = &feats[sg.center_source * width..(sg.center_source + 1) * width];
        assert_eq!(row[1], 1.0);
        assert_eq!(row[9 + NodeRole::SourceCenter.one_hot_slot()], 1.0);
        assert_eq!(row.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn data_summary_of_standard_normal_column() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = seeded_rng(40, 0);
        let col: Vec<f64> = (0..1024).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = DataMatrix::from_columns(vec![col.clone(), col]);
        let g = DirectedGraph::new(2);
        let sg = extract_1hop(&g, 0, 1, 2).unwrap();
        let labels = drnl_labels(&sg);
        let feats = encode_features(&sg, &labels, 8, Some(&x));
        let width = feature_width(8, true);
        assert_eq!(width, 9 + 3 + 4);
        let row = &feats[..width];
        let summary = &row[width - 4..];
        assert!(summary[0].abs() < 0.2, "mean {}", summary[0]);
        assert!((summary[1] - 1.0).abs() < 0.2, "std {}", summary[1]);
        assert!(summary[2].abs() < 0.2, "skew {}", summary[2]);
        assert!(summary[3].abs() < 0.2, "kurt {}", summary[3]);
    }

    #[test]
    fn label_clamping_bounds_feature_width() {
        let g = DirectedGraph::from_edges(2, &[]).unwrap();
        let sg = extract_1hop(&g, 0, 1, 9).unwrap();
        let feats = encode_features(&sg, &[99, 1], 4, None);
        let width = feature_width(4, false);
        // Overflowing label lands in the last slot.
        assert_eq!(feats[4], 1.0);
        assert_eq!(feats.len(), 2 * width);
    }
}
