//! Tree-shaped oscillator networks.
//!
//! Nodes are labelled `1..=N` everywhere in this module and in every file
//! format. Conversion to zero-based storage happens only at the boundary of
//! the numerical kernels.

use std::collections::{BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid network size {0}: need at least {1} nodes")]
    InvalidSize(usize, usize),
    #[error("Pruefer entry {value} at position {position} is outside 1..={n}")]
    InvalidSequence { position: usize, value: usize, n: usize },
    #[error("edge list does not form a tree on {0} nodes")]
    NotATree(usize),
    #[error("expected {expected} frequencies, got {got}")]
    FrequencyCount { expected: usize, got: usize },
    #[error("frequency of node {node} is not strictly positive ({value})")]
    NonPositiveFrequency { node: usize, value: f64 },
    #[error("coupling must be finite and non-negative, got {0}")]
    InvalidCoupling(f64),
    #[error("network file: {0}")]
    File(String),
}

pub type Edge = (usize, usize);

/// Leaf (degree <= 1) and internal (degree >= 2) nodes, both sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafPartition {
    pub leaves: Vec<usize>,
    pub internal: Vec<usize>,
}

/// Static description of a network of coupled oscillators.
///
/// Frequencies and coupling are in units of the base frequency. A network
/// either forms a tree or has no edges at all; the latter describes a
/// collection of independent oscillators, each of which is a leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorNetwork {
    n_nodes: usize,
    edges: Vec<Edge>,
    frequencies: Vec<f64>,
    coupling: f64,
    partition: LeafPartition,
    // zero-based neighbour lists
    neighbours: Vec<Vec<usize>>,
    // zero-based node index -> position in `partition.leaves`
    leaf_slot: Vec<Option<usize>>,
}

impl OscillatorNetwork {
    pub fn new(
        n_nodes: usize,
        edges: Vec<Edge>,
        frequencies: Vec<f64>,
        coupling: f64,
    ) -> Result<Self, TopologyError> {
        if n_nodes == 0 {
            return Err(TopologyError::InvalidSize(n_nodes, 1));
        }
        if !(edges.is_empty() || validate_tree(&edges, n_nodes)) {
            return Err(TopologyError::NotATree(n_nodes));
        }
        if frequencies.len() != n_nodes {
            return Err(TopologyError::FrequencyCount {
                expected: n_nodes,
                got: frequencies.len(),
            });
        }
        if let Some((i, &w)) = frequencies
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(TopologyError::NonPositiveFrequency { node: i + 1, value: w });
        }
        if !(coupling.is_finite() && coupling >= 0.0) {
            return Err(TopologyError::InvalidCoupling(coupling));
        }

        let mut neighbours = vec![Vec::new(); n_nodes];
        for &(a, b) in &edges {
            neighbours[a - 1].push(b - 1);
            neighbours[b - 1].push(a - 1);
        }
        let partition = partition_from_degrees(neighbours.iter().map(Vec::len));
        let mut leaf_slot = vec![None; n_nodes];
        for (slot, &leaf) in partition.leaves.iter().enumerate() {
            leaf_slot[leaf - 1] = Some(slot);
        }
        Ok(Self {
            n_nodes,
            edges,
            frequencies,
            coupling,
            partition,
            neighbours,
            leaf_slot,
        })
    }

    /// `n` uncoupled oscillators.
    pub fn independent(frequencies: Vec<f64>) -> Result<Self, TopologyError> {
        Self::new(frequencies.len(), Vec::new(), frequencies, 0.0)
    }

    pub fn from_pruefer(
        seq: &[usize],
        frequencies: Vec<f64>,
        coupling: f64,
    ) -> Result<Self, TopologyError> {
        let n = seq.len() + 2;
        let edges = decode_pruefer(seq, n)?;
        Self::new(n, edges, frequencies, coupling)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn partition(&self) -> &LeafPartition {
        &self.partition
    }

    pub fn leaves(&self) -> &[usize] {
        &self.partition.leaves
    }

    /// Zero-based neighbours of zero-based node `j`.
    pub(crate) fn neighbours(&self, j: usize) -> &[usize] {
        &self.neighbours[j]
    }

    /// Position of zero-based node `j` among the leaves, if it is one.
    pub(crate) fn leaf_slot(&self, j: usize) -> Option<usize> {
        self.leaf_slot[j]
    }

    /// Same topology with a new set of frequencies.
    pub fn with_frequencies(&self, frequencies: Vec<f64>) -> Result<Self, TopologyError> {
        Self::new(self.n_nodes, self.edges.clone(), frequencies, self.coupling)
    }
}

fn partition_from_degrees(degrees: impl Iterator<Item = usize>) -> LeafPartition {
    let mut leaves = Vec::new();
    let mut internal = Vec::new();
    for (i, d) in degrees.enumerate() {
        if d <= 1 {
            leaves.push(i + 1);
        } else {
            internal.push(i + 1);
        }
    }
    LeafPartition { leaves, internal }
}

pub fn partition_leaves(net: &OscillatorNetwork) -> LeafPartition {
    let mut degree = vec![0usize; net.n_nodes];
    for &(a, b) in &net.edges {
        degree[a - 1] += 1;
        degree[b - 1] += 1;
    }
    partition_from_degrees(degree.into_iter())
}

/// Decodes a Pruefer sequence of length `n - 2` into the `n - 1` edges of a
/// labelled tree. Each edge is `(leaf, attached_to)` in removal order, the
/// last edge joins the two remaining nodes in ascending order.
pub fn decode_pruefer(seq: &[usize], n: usize) -> Result<Vec<Edge>, TopologyError> {
    if n < 2 {
        return Err(TopologyError::InvalidSize(n, 2));
    }
    if seq.len() != n - 2 {
        return Err(TopologyError::InvalidSize(n, seq.len() + 2));
    }
    if let Some((position, &value)) = seq.iter().enumerate().find(|(_, &v)| v == 0 || v > n) {
        return Err(TopologyError::InvalidSequence { position, value, n });
    }

    let mut degree = vec![1usize; n + 1];
    for &v in seq {
        degree[v] += 1;
    }
    let mut leaves: BinaryHeap<Reverse<usize>> =
        (1..=n).filter(|&v| degree[v] == 1).map(Reverse).collect();

    let mut edges = Vec::with_capacity(n - 1);
    for &head in seq {
        let Reverse(leaf) = leaves.pop().expect("a tree always has a free leaf");
        edges.push((leaf, head));
        degree[head] -= 1;
        if degree[head] == 1 {
            leaves.push(Reverse(head));
        }
    }
    let Reverse(u) = leaves.pop().expect("two nodes remain");
    let Reverse(v) = leaves.pop().expect("two nodes remain");
    edges.push((u, v));
    Ok(edges)
}

/// Inverse of [`decode_pruefer`].
pub fn encode_pruefer(edges: &[Edge], n: usize) -> Result<Vec<usize>, TopologyError> {
    if n < 2 {
        return Err(TopologyError::InvalidSize(n, 2));
    }
    if !validate_tree(edges, n) {
        return Err(TopologyError::NotATree(n));
    }
    let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n + 1];
    for &(a, b) in edges {
        adjacency[a].insert(b);
        adjacency[b].insert(a);
    }
    let mut leaves: BinaryHeap<Reverse<usize>> = (1..=n)
        .filter(|&v| adjacency[v].len() == 1)
        .map(Reverse)
        .collect();
    let mut seq = Vec::with_capacity(n - 2);
    while seq.len() < n - 2 {
        let Reverse(leaf) = leaves.pop().expect("non-trivial tree has a leaf");
        let head = *adjacency[leaf].iter().next().expect("leaf has one neighbour");
        adjacency[leaf].clear();
        adjacency[head].remove(&leaf);
        seq.push(head);
        if adjacency[head].len() == 1 {
            leaves.push(Reverse(head));
        }
    }
    Ok(seq)
}

/// True iff `edges` is a spanning tree of nodes `1..=n`.
pub fn validate_tree(edges: &[Edge], n: usize) -> bool {
    if n == 0 || edges.len() != n - 1 {
        return false;
    }
    // union-find; a duplicate or a cycle shows up as an edge inside one set
    let mut parent: Vec<usize> = (0..=n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in edges {
        if a == 0 || b == 0 || a > n || b > n || a == b {
            return false;
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
    }
    // n - 1 successful unions on n nodes means connected
    true
}

/// Draws `n` frequencies from `Normal(base, spread^2)`, redrawing any sample
/// that is not strictly positive.
pub fn sample_frequencies<R: Rng + ?Sized>(rng: &mut R, base: f64, spread: f64, n: usize) -> Vec<f64> {
    assert!(spread >= 0.0 && spread.is_finite(), "spread must be >= 0");
    if spread == 0.0 {
        return vec![base; n];
    }
    let normal = Normal::new(base, spread).expect("finite, non-negative spread");
    (0..n)
        .map(|_| loop {
            let w = normal.sample(rng);
            if w > 0.0 {
                break w;
            }
        })
        .collect()
}

/// On-disk network description.
///
/// `frequencies` may be omitted, in which case they are sampled per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub n_nodes: usize,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<f64>>,
    #[serde(default)]
    pub coupling: f64,
}

impl NetworkFile {
    pub fn load(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TopologyError::File(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| TopologyError::File(e.to_string()))
    }

    pub fn edge_list(&self) -> Vec<Edge> {
        self.edges.iter().map(|&[a, b]| (a, b)).collect()
    }

    /// Builds the network using the stored frequencies, or `fallback` if the
    /// file carries none.
    pub fn build(&self, fallback: impl FnOnce(usize) -> Vec<f64>) -> Result<OscillatorNetwork, TopologyError> {
        let freqs = match &self.frequencies {
            Some(f) => f.clone(),
            None => fallback(self.n_nodes),
        };
        OscillatorNetwork::new(self.n_nodes, self.edge_list(), freqs, self.coupling)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// All labelled trees on `n` nodes by filtering every (n-1)-subset of
    /// the complete graph's edges.
    fn all_trees(n: usize) -> Vec<Vec<Edge>> {
        let pairs: Vec<Edge> = (1..=n)
            .flat_map(|a| ((a + 1)..=n).map(move |b| (a, b)))
            .collect();
        let m = pairs.len();
        let mut out = Vec::new();
        for mask in 0u32..(1 << m) {
            if mask.count_ones() as usize != n - 1 {
                continue;
            }
            let edges: Vec<Edge> = (0..m).filter(|i| mask & (1 << i) != 0).map(|i| pairs[i]).collect();
            if validate_tree(&edges, n) {
                out.push(edges);
            }
        }
        out
    }

    fn canonical(edges: &[Edge]) -> Vec<Edge> {
        let mut e: Vec<Edge> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        e.sort_unstable();
        e
    }

    #[test]
    fn brute_force_four_node_trees_match_decoding() {
        let trees = all_trees(4);
        assert_eq!(trees.len(), 16);
        // every tree re-encodes to a distinct sequence that decodes back to it
        let mut seen = BTreeSet::new();
        for tree in &trees {
            let seq = encode_pruefer(tree, 4).unwrap();
            assert!(seen.insert(seq.clone()));
            assert_eq!(canonical(&decode_pruefer(&seq, 4).unwrap()), canonical(tree));
        }
        let star = trees
            .iter()
            .find(|t| canonical(t) == vec![(1, 2), (1, 3), (1, 4)])
            .unwrap();
        assert_eq!(encode_pruefer(star, 4).unwrap(), vec![1, 1]);
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_pruefer(&[], 2).unwrap(), vec![(1, 2)]);
        assert_eq!(decode_pruefer(&[1, 1], 4).unwrap(), vec![(2, 1), (3, 1), (1, 4)]);
        assert_eq!(decode_pruefer(&[2], 3).unwrap(), vec![(1, 2), (2, 3)]);
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode_pruefer(&[], 1), Err(TopologyError::InvalidSize(1, 2))));
        assert!(matches!(
            decode_pruefer(&[5, 1], 4),
            Err(TopologyError::InvalidSequence { position: 0, value: 5, .. })
        ));
        assert!(matches!(
            decode_pruefer(&[1, 0], 4),
            Err(TopologyError::InvalidSequence { position: 1, .. })
        ));
    }

    #[test]
    fn partition_examples() {
        let star = OscillatorNetwork::from_pruefer(&[1, 1], vec![1.0; 4], 0.5).unwrap();
        assert_eq!(partition_leaves(&star).leaves, vec![2, 3, 4]);
        assert_eq!(partition_leaves(&star).internal, vec![1]);

        let path = OscillatorNetwork::new(4, vec![(1, 2), (2, 3), (3, 4)], vec![1.0; 4], 0.5).unwrap();
        assert_eq!(partition_leaves(&path).leaves, vec![1, 4]);
        assert_eq!(partition_leaves(&path).internal, vec![2, 3]);
        assert_eq!(path.partition(), &partition_leaves(&path));

        let single = OscillatorNetwork::independent(vec![1.0]).unwrap();
        assert_eq!(partition_leaves(&single).leaves, vec![1]);
        assert!(partition_leaves(&single).internal.is_empty());
    }

    #[test]
    fn validate_examples() {
        assert!(validate_tree(&[(1, 2), (2, 3)], 3));
        assert!(!validate_tree(&[(1, 2), (1, 2)], 3));
        assert!(!validate_tree(&[(1, 2), (2, 3), (3, 1)], 3));
        assert!(!validate_tree(&[(1, 1)], 2));
        assert!(!validate_tree(&[(1, 4)], 2));
        assert!(validate_tree(&[], 1));
    }

    #[test]
    fn network_rejects_bad_inputs() {
        assert!(matches!(
            OscillatorNetwork::new(3, vec![(1, 2)], vec![1.0; 3], 0.1),
            Err(TopologyError::NotATree(3))
        ));
        assert!(matches!(
            OscillatorNetwork::new(2, vec![(1, 2)], vec![1.0, 0.0], 0.1),
            Err(TopologyError::NonPositiveFrequency { node: 2, .. })
        ));
        assert!(matches!(
            OscillatorNetwork::new(2, vec![(1, 2)], vec![1.0], 0.1),
            Err(TopologyError::FrequencyCount { .. })
        ));
        assert!(OscillatorNetwork::new(2, vec![(1, 2)], vec![1.0; 2], -1.0).is_err());
    }

    #[test]
    fn independent_collection_is_all_leaves() {
        let net = OscillatorNetwork::independent(vec![1.0, 1.1, 0.9]).unwrap();
        assert_eq!(net.leaves(), &[1, 2, 3]);
        assert_eq!(net.coupling(), 0.0);
    }

    #[test]
    fn zero_spread_gives_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_frequencies(&mut rng, 1.3, 0.0, 5), vec![1.3; 5]);
    }

    #[test]
    fn frequency_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let xs = sample_frequencies(&mut rng, 1.0, 0.1, 10_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn frequencies_reproducible_and_positive() {
        let a = sample_frequencies(&mut ChaCha8Rng::seed_from_u64(9), 1.0, 2.0, 200);
        let b = sample_frequencies(&mut ChaCha8Rng::seed_from_u64(9), 1.0, 2.0, 200);
        assert_eq!(a, b);
        assert!(a.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn network_file_parses() {
        let text = r#"{"n_nodes": 3, "edges": [[1,2],[2,3]], "coupling": 0.5}"#;
        let file: NetworkFile = serde_json::from_str(text).unwrap();
        assert!(file.frequencies.is_none());
        let net = file.build(|n| vec![1.0; n]).unwrap();
        assert_eq!(net.leaves(), &[1, 3]);
        assert_eq!(net.coupling(), 0.5);
    }

    proptest! {
        #[test]
        fn pruefer_round_trip(n in 3usize..=12, raw in proptest::collection::vec(1usize..=12, 10)) {
            let seq: Vec<usize> = raw[..n - 2].iter().map(|v| (v - 1) % n + 1).collect();
            let edges = decode_pruefer(&seq, n).unwrap();
            prop_assert!(validate_tree(&edges, n));
            prop_assert_eq!(encode_pruefer(&edges, n).unwrap(), seq);
        }

        #[test]
        fn partition_sizes(n in 2usize..=12, raw in proptest::collection::vec(1usize..=12, 10)) {
            let seq: Vec<usize> = raw[..n - 2].iter().map(|v| (v - 1) % n + 1).collect();
            let net = OscillatorNetwork::from_pruefer(&seq, vec![1.0; n], 0.1).unwrap();
            let part = partition_leaves(&net);
            prop_assert_eq!(part.leaves.len() + part.internal.len(), n);
            prop_assert!(part.leaves.len() >= 2);
        }

        #[test]
        fn frequency_sampling_is_index_equivariant(seed in 0u64..1000, n in 1usize..20) {
            // the first k draws do not depend on how many follow
            let long = sample_frequencies(&mut ChaCha8Rng::seed_from_u64(seed), 1.0, 0.1, n + 5);
            let short = sample_frequencies(&mut ChaCha8Rng::seed_from_u64(seed), 1.0, 0.1, n);
            prop_assert_eq!(&long[..n], &short[..]);
        }
    }
}
