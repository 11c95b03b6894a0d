//! Random-walk sub-graph sampling and windowed sub-path extraction.
//!
//! A perspective draws `batch_size` distinct start nodes and runs
//! `walks_per_start` uniform random walks from each. Every contiguous slice
//! of a walk with 2 to `window` nodes is a sub-path; its first and last
//! nodes form the scored pair.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{purpose, stream};

/// Node sequence produced by one random walk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Walk {
    pub nodes: Vec<usize>,
    /// Requested number of nodes; the walk is shorter if it hit a node without neighbors.
    pub nominal_length: usize,
}

impl Walk {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Contiguous slice of a walk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubPath {
    pub nodes: Vec<usize>,
}

impl SubPath {
    pub fn start(&self) -> usize {
        self.nodes[0]
    }

    pub fn end(&self) -> usize {
        *self
            .nodes
            .last()
            .expect("sub-paths have at least two nodes")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Uniform random walk of at most `length` nodes starting at `start`.
pub fn random_walk<R: Rng>(g: &Graph, start: usize, length: usize, rng: &mut R) -> Walk {
    let mut nodes = Vec::with_capacity(length);
    if length > 0 {
        nodes.push(start);
    }
    let mut cur = start;
    while nodes.len() < length {
        let nbrs = g.neighbors(cur);
        if nbrs.is_empty() {
            break;
        }
        cur = nbrs[rng.gen_range(0..nbrs.len())];
        nodes.push(cur);
    }
    Walk {
        nodes,
        nominal_length: length,
    }
}

/// Number of sub-paths `extract_subpaths` yields for a walk of `len` nodes.
pub fn subpath_count(len: usize, window: usize) -> usize {
    (2..=window.min(len)).map(|l| len - l + 1).sum()
}

/// All slices of 2..=min(window, |w|) nodes, shortest first, left to right.
pub fn extract_subpaths(w: &Walk, window: usize) -> Vec<SubPath> {
    let len = w.len();
    let mut out = Vec::with_capacity(subpath_count(len, window));
    for l in 2..=window.min(len) {
        for a in 0..=len - l {
            out.push(SubPath {
                nodes: w.nodes[a..a + l].to_vec(),
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub walks_per_start: usize,
    pub walk_length: usize,
    pub window: usize,
}

/// Identifies a perspective's RNG streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub epoch: u64,
    pub perspective: u64,
}

/// Walks of one perspective, grouped by start node in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct PerspectiveBatch {
    pub perspective: usize,
    pub starts: Vec<usize>,
    pub walks: Vec<Walk>,
    pub window: usize,
}

impl PerspectiveBatch {
    pub fn subpaths(&self) -> Vec<SubPath> {
        self.walks
            .iter()
            .flat_map(|w| extract_subpaths(w, self.window))
            .collect()
    }

    pub fn subpath_count(&self) -> usize {
        self.walks
            .iter()
            .map(|w| subpath_count(w.len(), self.window))
            .sum()
    }
}

/// Samples one perspective. Start nodes are drawn without replacement; each
/// start's walks use their own stream keyed by `(seed, epoch, perspective, start)`.
pub fn sample_perspective(
    g: &Graph,
    cfg: &SamplerConfig,
    key: StreamKey,
) -> Result<PerspectiveBatch> {
    let n = g.num_nodes();
    if cfg.batch_size > n {
        return Err(Error::InvalidArgument(format!(
            "sampling batch size {} exceeds node count {n}",
            cfg.batch_size
        )));
    }
    if cfg.window < 2 {
        return Err(Error::InvalidArgument(format!(
            "window must be >= 2, got {}",
            cfg.window
        )));
    }
    let mut rng = stream(key.seed, &[purpose::STARTS, key.epoch, key.perspective]);
    let starts = sample(&mut rng, n, cfg.batch_size).into_vec();
    Ok(sample_from_starts(
        g,
        &starts,
        cfg.walks_per_start,
        cfg.walk_length,
        cfg.window,
        key,
    ))
}

/// Walks from an explicit start set (used by the analyses).
pub fn sample_from_starts(
    g: &Graph,
    starts: &[usize],
    walks_per_start: usize,
    walk_length: usize,
    window: usize,
    key: StreamKey,
) -> PerspectiveBatch {
    let mut sorted = starts.to_vec();
    sorted.sort_unstable();
    let mut walks = Vec::with_capacity(sorted.len() * walks_per_start);
    for &s in &sorted {
        let mut wr = stream(
            key.seed,
            &[purpose::WALK, key.epoch, key.perspective, s as u64],
        );
        for _ in 0..walks_per_start {
            walks.push(random_walk(g, s, walk_length, &mut wr));
        }
    }
    PerspectiveBatch {
        perspective: key.perspective as usize,
        starts: sorted,
        walks,
        window,
    }
}
