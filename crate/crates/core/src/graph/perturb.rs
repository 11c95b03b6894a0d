use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};

/// Returns a copy of `g` with `floor(rate * |E|)` fake undirected edges,
/// sampled uniformly among non-adjacent distinct node pairs.
pub fn perturb_edges(g: &Graph, rate: f64, seed: u64) -> Result<Graph> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "perturbation rate {rate} must be >= 0"
        )));
    }
    let existing = g.edge_count();
    let count = (rate * existing as f64).floor() as usize;
    if count == 0 {
        return Ok(g.clone());
    }
    let n = g.num_nodes();
    let all_pairs = n * n.saturating_sub(1) / 2;
    let available = all_pairs - existing;
    if count > available {
        return Err(Error::InvalidArgument(format!(
            "cannot add {count} fake edges: only {available} non-adjacent pairs remain"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let fakes: Vec<(usize, usize)> = if count * 2 <= available {
        let mut chosen = BTreeSet::new();
        let mut order = Vec::with_capacity(count);
        while order.len() < count {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u == v || g.has_edge(u, v) {
                continue;
            }
            let pair = (u.min(v), u.max(v));
            if chosen.insert(pair) {
                order.push(pair);
            }
        }
        order
    } else {
        // Dense regime: enumerate candidates and sample without replacement.
        let mut candidates = Vec::with_capacity(available);
        for u in 0..n {
            for v in u + 1..n {
                if !g.has_edge(u, v) {
                    candidates.push((u, v));
                }
            }
        }
        sample(&mut rng, candidates.len(), count)
            .into_iter()
            .map(|i| candidates[i])
            .collect()
    };
    g.with_added_edges(&fakes)
}
