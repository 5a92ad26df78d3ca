//! Directed graphs over indexed variables, linear pair indexing, ancestral
//! closure, and train/test pair splits where every test source is novel.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::rng::seeded_rng;

/// Binary adjacency over `p` nodes; `adj[i][j] = 1` iff there is an edge
/// `i -> j`. Self-loops are forbidden. Serves as ground truth, initial
/// estimate and output alike.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectedGraph {
    p: usize,
    adj: Vec<u8>,
}

impl DirectedGraph {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            adj: vec![0; p * p],
        }
    }

    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Result<Self, CoreError> {
        let mut g = Self::new(p);
        for &(i, j) in edges {
            g.set_edge(i, j, true)?;
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.p
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.p + j] != 0
    }

    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) -> Result<(), CoreError> {
        if i >= self.p || j >= self.p {
            return Err(CoreError::NodeOutOfRange { node: i.max(j), p: self.p });
        }
        if i == j {
            return Err(CoreError::SelfLoop(i));
        }
        self.adj[i * self.p + j] = u8::from(present);
        Ok(())
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&v| v != 0).count()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let p = self.p;
        self.adj
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(idx, _)| (idx / p, idx % p))
    }

    pub fn out_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.adj[i * self.p..(i + 1) * self.p];
        row.iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(j, _)| j)
    }

    pub fn in_neighbors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        let p = self.p;
        (0..p).filter(move |&i| self.adj[i * p + j] != 0)
    }

    pub fn in_degree(&self, j: usize) -> usize {
        self.in_neighbors(j).count()
    }

    /// Kahn topological order; `None` when the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = (0..self.p).map(|j| self.in_degree(j)).collect();
        let mut queue: Vec<usize> = (0..self.p).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.p);
        let mut head = 0;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            order.push(u);
            for v in self.out_neighbors(u) {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push(v);
                }
            }
        }
        (order.len() == self.p).then_some(order)
    }

    /// Union with the reversed edge set.
    pub fn symmetrized(&self) -> DirectedGraph {
        let mut g = self.clone();
        for (i, j) in self.edges() {
            g.adj[j * self.p + i] = 1;
        }
        g
    }

    /// Edge-list CSV with header `source,target`.
    pub fn write_csv(&self, path: &Path) -> Result<(), CoreError> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "source,target")?;
        for (i, j) in self.edges() {
            writeln!(file, "{},{}", i, j)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path, p: usize) -> Result<Self, CoreError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        {
            let headers = reader.headers()?;
            if headers.len() != 2 || &headers[0] != "source" || &headers[1] != "target" {
                return Err(CoreError::Schema(format!(
                    "graph file {} must have header source,target",
                    path.display()
                )));
            }
        }
        let mut g = Self::new(p);
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            let parse = |field: &str| -> Result<usize, CoreError> {
                field.trim().parse().map_err(|_| {
                    CoreError::Schema(format!(
                        "graph file {} row {}: bad node id {:?}",
                        path.display(),
                        row_idx + 2,
                        field
                    ))
                })
            };
            let i = parse(&record[0])?;
            let j = parse(&record[1])?;
            g.set_edge(i, j, true)?;
        }
        Ok(g)
    }
}

/// Bijection between ordered pairs `(i, j)`, `i != j`, and `{0, ..., K-1}`
/// with `K = p(p-1)`: row-major order skipping the diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairIndex {
    p: usize,
}

impl PairIndex {
    pub fn new(p: usize) -> Self {
        Self { p }
    }

    pub fn node_count(&self) -> usize {
        self.p
    }

    /// Total number of ordered pairs, `p(p-1)`.
    pub fn pair_count(&self) -> usize {
        self.p * (self.p - 1)
    }

    pub fn linear_index(&self, i: usize, j: usize) -> Result<usize, CoreError> {
        if i >= self.p || j >= self.p {
            return Err(CoreError::NodeOutOfRange { node: i.max(j), p: self.p });
        }
        if i == j {
            return Err(CoreError::SelfLoop(i));
        }
        Ok(i * (self.p - 1) + if j < i { j } else { j - 1 })
    }

    pub fn pair_of(&self, k: usize) -> Result<(usize, usize), CoreError> {
        if k >= self.pair_count() {
            return Err(CoreError::PairOutOfRange { k, count: self.pair_count() });
        }
        let i = k / (self.p - 1);
        let r = k % (self.p - 1);
        let j = if r < i { r } else { r + 1 };
        Ok((i, j))
    }

    /// All pair indices whose source node is `i`.
    pub fn pairs_from_source(&self, i: usize) -> Vec<usize> {
        (0..self.p)
            .filter(|&j| j != i)
            .map(|j| self.linear_index(i, j).expect("valid by construction"))
            .collect()
    }
}

/// Labeled pairs available as prior causal knowledge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSet {
    pub p: usize,
    /// `(pair index, label)` with labels in {0, 1}; pair indices unique.
    pub entries: Vec<(usize, u8)>,
}

impl KnowledgeSet {
    pub fn new(p: usize, entries: Vec<(usize, u8)>) -> Result<Self, CoreError> {
        let mut seen = BTreeSet::new();
        let count = PairIndex::new(p).pair_count();
        for &(k, label) in &entries {
            if k >= count {
                return Err(CoreError::PairOutOfRange { k, count });
            }
            if label > 1 {
                return Err(CoreError::Schema(format!("label {} not in {{0,1}}", label)));
            }
            if !seen.insert(k) {
                return Err(CoreError::Schema(format!("duplicate pair index {}", k)));
            }
        }
        Ok(Self { p, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label_of(&self, k: usize) -> Option<u8> {
        self.entries.iter().find(|(kk, _)| *kk == k).map(|(_, l)| *l)
    }

    /// CSV with header `source,target,label`.
    pub fn write_csv(&self, path: &Path) -> Result<(), CoreError> {
        let index = PairIndex::new(self.p);
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "source,target,label")?;
        for &(k, label) in &self.entries {
            let (i, j) = index.pair_of(k)?;
            writeln!(file, "{},{},{}", i, j, label)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path, p: usize) -> Result<Self, CoreError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        {
            let headers = reader.headers()?;
            if headers.len() != 3
                || &headers[0] != "source"
                || &headers[1] != "target"
                || &headers[2] != "label"
            {
                return Err(CoreError::Schema(format!(
                    "knowledge file {} must have header source,target,label",
                    path.display()
                )));
            }
        }
        let index = PairIndex::new(p);
        let mut entries = Vec::new();
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            let row = row_idx + 2;
            let bad = |what: &str, field: &str| {
                CoreError::Schema(format!(
                    "knowledge file {} row {}: bad {} {:?}",
                    path.display(),
                    row,
                    what,
                    field
                ))
            };
            let i: usize = record[0].trim().parse().map_err(|_| bad("source", &record[0]))?;
            let j: usize = record[1].trim().parse().map_err(|_| bad("target", &record[1]))?;
            let label: u8 = record[2].trim().parse().map_err(|_| bad("label", &record[2]))?;
            if label > 1 {
                return Err(bad("label", &record[2]));
            }
            entries.push((index.linear_index(i, j)?, label));
        }
        Self::new(p, entries)
    }
}

/// Train knowledge plus held-out test pairs whose sources never appear as a
/// source of any train pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSplit {
    pub train: KnowledgeSet,
    pub test: Vec<usize>,
}

impl EvalSplit {
    /// Independent scan of the source-disjointness invariant.
    pub fn validate(&self) -> Result<(), CoreError> {
        let index = PairIndex::new(self.train.p);
        let mut train_sources = BTreeSet::new();
        let mut train_pairs = BTreeSet::new();
        for &(k, _) in &self.train.entries {
            train_sources.insert(index.pair_of(k)?.0);
            train_pairs.insert(k);
        }
        let mut seen = BTreeSet::new();
        for &u in &self.test {
            let (src, _) = index.pair_of(u)?;
            if train_sources.contains(&src) {
                return Err(CoreError::SplitOverlap { node: src });
            }
            if !seen.insert(u) {
                return Err(CoreError::Schema(format!("duplicate test pair {}", u)));
            }
            if train_pairs.contains(&u) {
                return Err(CoreError::Schema(format!("pair {} in both folds", u)));
            }
        }
        Ok(())
    }
}

/// Edge `(i, j)` present iff a directed path of length >= 1 runs from `i` to
/// `j`. The diagonal is forced to zero even for cyclic inputs.
pub fn transitive_closure(g: &DirectedGraph) -> DirectedGraph {
    let p = g.node_count();
    let mut closure = DirectedGraph::new(p);
    let mut visited = vec![false; p];
    let mut stack = Vec::new();
    for start in 0..p {
        visited.iter_mut().for_each(|v| *v = false);
        stack.clear();
        stack.extend(g.out_neighbors(start));
        while let Some(u) = stack.pop() {
            if visited[u] {
                continue;
            }
            visited[u] = true;
            if u != start {
                closure.adj[start * p + u] = 1;
            }
            for v in g.out_neighbors(u) {
                if !visited[v] {
                    stack.push(v);
                }
            }
        }
    }
    closure
}

/// Build the split: the train fold holds every ordered pair whose source is
/// an intervened node, labeled from `g_star`; the test fold holds every
/// ordered pair whose source is a test node, labels withheld.
pub fn make_split(
    g_star: &DirectedGraph,
    intervened_sources: &BTreeSet<usize>,
    test_sources: &BTreeSet<usize>,
) -> Result<EvalSplit, CoreError> {
    if let Some(&node) = intervened_sources.intersection(test_sources).next() {
        return Err(CoreError::SplitOverlap { node });
    }
    let p = g_star.node_count();
    let index = PairIndex::new(p);
    for &s in intervened_sources.iter().chain(test_sources.iter()) {
        if s >= p {
            return Err(CoreError::NodeOutOfRange { node: s, p });
        }
    }
    let mut entries = Vec::new();
    for &i in intervened_sources {
        for k in index.pairs_from_source(i) {
            let (_, j) = index.pair_of(k)?;
            entries.push((k, u8::from(g_star.has_edge(i, j))));
        }
    }
    let mut test = Vec::new();
    for &i in test_sources {
        test.extend(index.pairs_from_source(i));
    }
    let split = EvalSplit {
        train: KnowledgeSet::new(p, entries)?,
        test,
    };
    split.validate()?;
    Ok(split)
}

/// Flip the labels of exactly `round(rate * |ks|)` entries, chosen uniformly
/// at random. Deterministic for a fixed seed; pair indices are untouched.
pub fn perturb_labels(ks: &KnowledgeSet, rate: f64, seed: u64) -> Result<KnowledgeSet, CoreError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(CoreError::Schema(format!("perturbation rate {} outside [0,1]", rate)));
    }
    let flips = (rate * ks.len() as f64).round() as usize;
    let mut out = ks.clone();
    if flips == 0 {
        return Ok(out);
    }
    let mut rng = seeded_rng(seed, 0x70657274); // "pert"
    for idx in sample(&mut rng, ks.len(), flips) {
        out.entries[idx].1 ^= 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_index_examples() {
        let idx = PairIndex::new(3);
        assert_eq!(idx.linear_index(0, 1).unwrap(), 0);
        assert_eq!(idx.linear_index(2, 1).unwrap(), 5);
        assert!(idx.linear_index(1, 1).is_err());
        assert!(idx.linear_index(0, 3).is_err());
    }

    #[test]
    fn linear_index_roundtrip_p3() {
        let idx = PairIndex::new(3);
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let k = idx.linear_index(i, j).unwrap();
                assert_eq!(idx.pair_of(k).unwrap(), (i, j));
            }
        }
    }

    #[test]
    fn p100_indices_distinct() {
        let idx = PairIndex::new(100);
        assert_eq!(idx.pair_count(), 9900);
        let mut seen = vec![false; 9900];
        for i in 0..100 {
            for j in 0..100 {
                if i == j {
                    continue;
                }
                let k = idx.linear_index(i, j).unwrap();
                assert!(!seen[k], "index {} repeated", k);
                seen[k] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn bijection_exhaustive_up_to_200() {
        for p in 2..=200 {
            let idx = PairIndex::new(p);
            for k in 0..idx.pair_count() {
                let (i, j) = idx.pair_of(k).unwrap();
                assert_ne!(i, j);
                assert_eq!(idx.linear_index(i, j).unwrap(), k, "p={}", p);
            }
        }
    }

    #[test]
    fn closure_of_chain() {
        let g = DirectedGraph::from_edges(4, &[(1, 2), (2, 3)]).unwrap();
        let c = transitive_closure(&g);
        let edges: Vec<_> = c.edges().collect();
        assert_eq!(edges, vec![(1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn closure_of_empty_graph() {
        let g = DirectedGraph::new(5);
        assert_eq!(transitive_closure(&g).edge_count(), 0);
    }

    #[test]
    fn closure_handles_cycles_with_zero_diagonal() {
        let g = DirectedGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let c = transitive_closure(&g);
        for i in 0..3 {
            assert!(!c.has_edge(i, i));
            for j in 0..3 {
                if i != j {
                    assert!(c.has_edge(i, j), "missing ({},{})", i, j);
                }
            }
        }
    }

    #[test]
    fn make_split_counts() {
        let g = DirectedGraph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let split = make_split(&g, &BTreeSet::from([0]), &BTreeSet::from([2])).unwrap();
        assert_eq!(split.train.len(), 3);
        assert_eq!(split.test.len(), 3);
        assert_eq!(split.train.label_of(0).unwrap(), 1); // (0,1) is an edge
        split.validate().unwrap();
    }

    #[test]
    fn make_split_rejects_overlap() {
        let g = DirectedGraph::new(4);
        let err = make_split(&g, &BTreeSet::from([0, 1]), &BTreeSet::from([1, 2]));
        assert!(matches!(err, Err(CoreError::SplitOverlap { node: 1 })));
    }

    #[test]
    fn make_split_yeast_shaped() {
        // p=1000 with m=753 intervened sources: 753 * 999 train pairs.
        let g = DirectedGraph::new(1000);
        let intervened: BTreeSet<usize> = (0..753).collect();
        let test: BTreeSet<usize> = (753..1000).collect();
        let split = make_split(&g, &intervened, &test).unwrap();
        assert_eq!(split.train.len(), 753 * 999);
        assert_eq!(split.test.len(), 247 * 999);
        split.validate().unwrap();
    }

    #[test]
    fn perturb_zero_rate_is_identity() {
        let ks = KnowledgeSet::new(10, vec![(0, 1), (5, 0), (11, 1)]).unwrap();
        assert_eq!(perturb_labels(&ks, 0.0, 9).unwrap(), ks);
    }

    #[test]
    fn perturb_flips_exact_count() {
        let entries: Vec<(usize, u8)> = (0..100).map(|k| (k, (k % 2) as u8)).collect();
        let ks = KnowledgeSet::new(20, entries).unwrap();
        let out = perturb_labels(&ks, 0.10, 42).unwrap();
        let flipped = ks
            .entries
            .iter()
            .zip(out.entries.iter())
            .filter(|(a, b)| a.1 != b.1)
            .count();
        assert_eq!(flipped, 10);
        for (a, b) in ks.entries.iter().zip(out.entries.iter()) {
            assert_eq!(a.0, b.0);
        }
    }

    #[test]
    fn perturb_full_rate_is_involution() {
        let entries: Vec<(usize, u8)> = (0..30).map(|k| (k, u8::from(k % 3 == 0))).collect();
        let ks = KnowledgeSet::new(10, entries).unwrap();
        let once = perturb_labels(&ks, 1.0, 7).unwrap();
        assert!(ks.entries.iter().zip(once.entries.iter()).all(|(a, b)| a.1 != b.1));
        let twice = perturb_labels(&once, 1.0, 7).unwrap();
        assert_eq!(twice, ks);
    }

    #[test]
    fn perturb_same_seed_is_deterministic() {
        let entries: Vec<(usize, u8)> = (0..50).map(|k| (k, 0)).collect();
        let ks = KnowledgeSet::new(10, entries).unwrap();
        assert_eq!(
            perturb_labels(&ks, 0.3, 123).unwrap(),
            perturb_labels(&ks, 0.3, 123).unwrap()
        );
    }

    #[test]
    fn graph_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let g = DirectedGraph::from_edges(5, &[(0, 3), (4, 1), (2, 0)]).unwrap();
        g.write_csv(&path).unwrap();
        let g2 = DirectedGraph::read_csv(&path, 5).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn knowledge_csv_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        let ks = KnowledgeSet::new(6, vec![(0, 1), (7, 0)]).unwrap();
        ks.write_csv(&path).unwrap();
        let ks2 = KnowledgeSet::read_csv(&path, 6).unwrap();
        assert_eq!(ks, ks2);

        std::fs::write(&path, "source,target,label\n0,1,2\n").unwrap();
        assert!(KnowledgeSet::read_csv(&path, 6).is_err());
        std::fs::write(&path, "source,target\n0,1\n").unwrap();
        assert!(KnowledgeSet::read_csv(&path, 6).is_err());
    }
}
