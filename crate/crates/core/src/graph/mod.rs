//! Attributed graphs with train/validation/test splits.

mod io;
mod perturb;
pub mod synthetic;

use std::collections::BTreeSet;

pub use io::{load_graph, save_graph, Manifest};
pub use perturb::perturb_edges;

use crate::error::{Error, Result};
use crate::matrix::Csr;
use crate::scalar::Scalar;

/// Node role in the standard split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Undirected attributed graph. Immutable once built.
#[derive(Clone, Debug)]
pub struct Graph {
    name: String,
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
    /// Edge pairs exactly as listed in the source, used for lossless saving.
    raw_edges: Vec<(usize, usize)>,
    /// Unique undirected edges `(u, v)` with `u < v`, sorted; self-loops excluded.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Csr<f64>,
    labels: Vec<Option<usize>>,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    class_names: Option<Vec<String>>,
    checksum: String,
}

impl Graph {
    /// Builds and validates a graph. `raw_edges` may contain both directions,
    /// duplicates and self-loops; the undirected edge set is derived from it.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        num_nodes: usize,
        num_classes: usize,
        raw_edges: Vec<(usize, usize)>,
        features: Csr<f64>,
        labels: Vec<Option<usize>>,
        splits: &[(usize, Split)],
    ) -> Result<Self> {
        let name = name.into();
        let invalid = |msg: String| Error::InvalidArgument(format!("graph `{name}`: {msg}"));
        if features.rows() != num_nodes {
            return Err(invalid(format!(
                "{} feature rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if labels.len() != num_nodes {
            return Err(invalid(format!(
                "{} labels for {num_nodes} nodes",
                labels.len()
            )));
        }
        if let Some((i, c)) = labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&c| c >= num_classes).map(|c| (i, c)))
        {
            return Err(invalid(format!(
                "node {i} has label {c} >= {num_classes} classes"
            )));
        }
        let mut set = BTreeSet::new();
        for &(u, v) in &raw_edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(invalid(format!(
                    "edge ({u}, {v}) references a node >= {num_nodes}"
                )));
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        let mut role: Vec<Option<Split>> = vec![None; num_nodes];
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for &(node, split) in splits {
            if node >= num_nodes {
                return Err(invalid(format!(
                    "mask references node {node} >= {num_nodes}"
                )));
            }
            if let Some(prev) = role[node] {
                return Err(invalid(format!(
                    "node {node} is in both {} and {} masks",
                    prev.as_str(),
                    split.as_str()
                )));
            }
            role[node] = Some(split);
            match split {
                Split::Train => train.push(node),
                Split::Val => val.push(node),
                Split::Test => test.push(node),
            }
        }
        if let Some(&bad) = train.iter().find(|&&i| labels[i].is_none()) {
            return Err(invalid(format!("training node {bad} has no label")));
        }
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();

        Ok(Self {
            name,
            num_nodes,
            num_features: features.cols(),
            num_classes,
            raw_edges,
            edges,
            neighbors,
            features,
            labels,
            train,
            val,
            test,
            class_names: None,
            checksum: String::new(),
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "{} class names for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub(crate) fn with_checksum(mut self, checksum: String) -> Self {
        self.checksum = checksum;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Unique undirected edges, `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Count of undirected edges after symmetrization and deduplication.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edge pairs as listed in the source file.
    pub fn raw_edges(&self) -> &[(usize, usize)] {
        &self.raw_edges
    }

    pub fn raw_edge_count(&self) -> usize {
        self.raw_edges.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Csr<f64> {
        &self.features
    }

    pub fn features_as<T: Scalar>(&self) -> Csr<T> {
        self.features.cast()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.labels[node]
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn val(&self) -> &[usize] {
        &self.val
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    pub fn mask(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    /// SHA-256 over the dataset files this graph was loaded from (empty for in-memory graphs).
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Fraction of nodes in the training mask.
    pub fn label_rate(&self) -> f64 {
        if self.num_nodes == 0 {
            return 0.0;
        }
        self.train.len() as f64 / self.num_nodes as f64
    }

    /// `(node, split)` pairs in ascending node order per split.
    pub fn split_pairs(&self) -> Vec<(usize, Split)> {
        let mut out: Vec<(usize, Split)> = self
            .train
            .iter()
            .map(|&i| (i, Split::Train))
            .chain(self.val.iter().map(|&i| (i, Split::Val)))
            .chain(self.test.iter().map(|&i| (i, Split::Test)))
            .collect();
        out.sort_by_key(|&(i, _)| i);
        out
    }

    /// Copy with extra undirected edges appended to the edge list.
    pub(crate) fn with_added_edges(&self, extra: &[(usize, usize)]) -> Result<Self> {
        let mut raw = self.raw_edges.clone();
        raw.extend_from_slice(extra);
        let g = Graph::new(
            self.name.clone(),
            self.num_nodes,
            self.num_classes,
            raw,
            self.features.clone(),
            self.labels.clone(),
            &self.split_pairs(),
        )?;
        Ok(Graph {
            class_names: self.class_names.clone(),
            ..g
        })
    }
}

/// Symmetrically normalized adjacency with self-loops, `D^-1/2 (A + I) D^-1/2`.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency<T> {
    pub matrix: Csr<T>,
}

pub fn normalize_adjacency<T: Scalar>(g: &Graph) -> NormalizedAdjacency<T> {
    let n = g.num_nodes();
    // degree of A + I
    let deg: Vec<f64> = (0..n).map(|i| (g.degree(i) + 1) as f64).collect();
    let mut triplets = Vec::with_capacity(n + 2 * g.edge_count());
    for (i, &d) in deg.iter().enumerate() {
        triplets.push((i, i, T::from_f64_lossy(1.0 / d)));
    }
    for &(u, v) in g.edges() {
        let w = T::from_f64_lossy(1.0 / (deg[u] * deg[v]).sqrt());
        triplets.push((u, v, w));
        triplets.push((v, u, w));
    }
    let matrix = Csr::from_triplets(n, n, &triplets).expect("edge ids validated at construction");
    NormalizedAdjacency { matrix }
}
