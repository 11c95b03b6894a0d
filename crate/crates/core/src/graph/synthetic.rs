//! Seeded generator for small citation-like graphs with planted classes.
//!
//! Used for committed fixtures and desk-scale experiments. Nodes get a
//! uniformly random class; edges connect same-class pairs with probability
//! `homophily`; binary bag-of-words features draw most words from a
//! class-specific vocabulary block.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Split};
use crate::error::{Error, Result};
use crate::matrix::Csr;

#[derive(Clone, Debug)]
pub struct SyntheticParams {
    pub name: String,
    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    /// Target mean degree.
    pub mean_degree: f64,
    /// Probability an edge joins two nodes of the same class.
    pub homophily: f64,
    /// Words per node.
    pub words_per_node: usize,
    /// Probability a word comes from the node's class block.
    pub topic_purity: f64,
    pub train_per_class: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl SyntheticParams {
    pub fn small(name: &str, nodes: usize, classes: usize, seed: u64) -> Self {
        Self {
            name: name.to_owned(),
            nodes,
            classes,
            features: 8 * classes,
            mean_degree: 3.0,
            homophily: 0.8,
            words_per_node: 4,
            topic_purity: 0.7,
            train_per_class: 2,
            val: nodes / 4,
            test: nodes / 3,
            seed,
        }
    }
}

pub fn generate(params: &SyntheticParams) -> Result<Graph> {
    let c = params.classes;
    if c == 0 || params.nodes < c * params.train_per_class + params.val + params.test {
        return Err(Error::InvalidArgument(
            "synthetic graph too small for the requested split".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.nodes;
    // balanced classes, shuffled
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);
    let mut by_class = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let target = ((params.mean_degree * n as f64) / 2.0).round() as usize;
    let mut edges = Vec::with_capacity(target);
    let mut seen = std::collections::BTreeSet::new();
    let mut guard = 0;
    while edges.len() < target && guard < target * 50 {
        guard += 1;
        let u = rng.gen_range(0..n);
        let v = if rng.gen::<f64>() < params.homophily {
            *by_class[labels[u]]
                .choose(&mut rng)
                .expect("class has members")
        } else {
            rng.gen_range(0..n)
        };
        if u != v && seen.insert((u.min(v), u.max(v))) {
            edges.push((u, v));
        }
    }

    let block = (params.features / c).max(1);
    let mut triplets = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        let mut words = std::collections::BTreeSet::new();
        while words.len() < params.words_per_node.min(params.features) {
            let w = if rng.gen::<f64>() < params.topic_purity {
                (l * block + rng.gen_range(0..block)).min(params.features - 1)
            } else {
                rng.gen_range(0..params.features)
            };
            words.insert(w);
        }
        triplets.extend(words.into_iter().map(|w| (i, w, 1.0)));
    }
    let features = Csr::from_triplets(n, params.features, &triplets)?;

    let mut splits = Vec::new();
    let mut taken = vec![false; n];
    for members in &by_class {
        for &i in members.iter().take(params.train_per_class) {
            splits.push((i, Split::Train));
            taken[i] = true;
        }
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
    rest.shuffle(&mut rng);
    splits.extend(rest.iter().take(params.val).map(|&i| (i, Split::Val)));
    splits.extend(
        rest.iter()
            .skip(params.val)
            .take(params.test)
            .map(|&i| (i, Split::Test)),
    );

    let labels = labels.into_iter().map(Some).collect();
    Graph::new(params.name.clone(), n, c, edges, features, labels, &splits)
}
