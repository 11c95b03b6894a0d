//! Semantic aggregation over the path-attention matrix, multi-hop
//! propagation and the fused classifier.

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{Bound, Linear, Lstm, Mlp, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Csr;
use crate::reweighter::{PathAttention, PathScorer};
use crate::scalar::Scalar;

/// `F_hat[j] = sum_i w[i, j] * F_tilde[i]` over the stored entries of `w`.
pub fn semantic_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    w: &PathAttention,
    encoded: Var,
) -> Result<Var> {
    let (n, _) = tape.shape(encoded);
    if w.num_nodes != n {
        return Err(Error::Shape(format!(
            "semantic_aggregate: attention over {} nodes, {} encoded rows",
            w.num_nodes, n
        )));
    }
    let src: Rc<[usize]> = w.pairs.iter().map(|p| p.0).collect();
    let dst: Rc<[usize]> = w.pairs.iter().map(|p| p.1).collect();
    tape.scatter_weighted(w.weights, encoded, src, dst)
}

/// Mean of `A^h X` for `h = 0..=hops`, by repeated sparse products.
pub fn multi_hop<T: Scalar>(
    tape: &mut Tape<T>,
    adjacency: Rc<Csr<T>>,
    x: Var,
    hops: usize,
) -> Result<Var> {
    let mut cur = x;
    let mut acc = x;
    for _ in 0..hops {
        cur = tape.sparse_matmul(adjacency.clone(), cur)?;
        acc = tape.add(acc, cur)?;
    }
    if hops == 0 {
        return Ok(acc);
    }
    Ok(tape.scale(acc, T::one() / T::from_usize(hops + 1).unwrap()))
}

/// Inverted dropout on the stored values of a sparse matrix.
pub fn drop_sparse<T: Scalar, R: Rng>(m: &Csr<T>, rate: f64, rng: &mut R) -> Result<Csr<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if rate == 0.0 {
        return Ok(m.clone());
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let values = m
        .values()
        .iter()
        .map(|&v| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                v * keep
            }
        })
        .collect();
    Ok(m.with_values(values))
}

/// Which embeddings feed the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// `F_dot ++ lambda * F_hat`
    Concat,
    /// `F_dot` only.
    MultiHopOnly,
    /// `F_hat` only.
    PathOnly,
}

impl Fusion {
    pub fn uses_paths(self) -> bool {
        self != Fusion::MultiHopOnly
    }

    pub fn uses_multi_hop(self) -> bool {
        self != Fusion::PathOnly
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub features: usize,
    pub embed: usize,
    pub lstm_hidden: usize,
    pub classes: usize,
}

/// Parameter handles of the full model. Values live in a [`ParamStore`].
#[derive(Clone, Copy, Debug)]
pub struct CustomGnn {
    pub encoder: ParamId,
    pub scorer: PathScorer,
    pub mlp: Mlp,
    pub dims: ModelDims,
    pub fusion: Fusion,
}

impl CustomGnn {
    /// Registers all parameters in `store` under the names
    /// `encoder`, `lstm.*`, `score_head.*` and `mlp.*`.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        dims: ModelDims,
        fusion: Fusion,
        rng: &mut R,
    ) -> Self {
        let encoder = store.add_weight("encoder", dims.features, dims.embed, rng);
        let scorer = PathScorer {
            lstm: Lstm::new(store, "lstm", dims.embed, dims.lstm_hidden, rng),
            head: Linear::new(store, "score_head", dims.lstm_hidden, 1, rng),
        };
        let input = if fusion == Fusion::Concat {
            2 * dims.embed
        } else {
            dims.embed
        };
        let mlp = Mlp::new(store, "mlp", input, dims.embed, dims.classes, rng);
        Self {
            encoder,
            scorer,
            mlp,
            dims,
            fusion,
        }
    }

    /// Row-stochastic class probabilities from the fused embeddings.
    #[allow(clippy::too_many_arguments)]
    pub fn predict<T: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        multi_hop: Option<Var>,
        aggregated: Option<Var>,
        tradeoff: f64,
        dropout_rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let input = match (self.fusion, multi_hop, aggregated) {
            (Fusion::Concat, Some(dot), Some(hat)) => {
                let hat = tape.scale(hat, T::from_f64_lossy(tradeoff));
                tape.concat_cols(dot, hat)?
            }
            (Fusion::MultiHopOnly, Some(dot), _) => dot,
            (Fusion::PathOnly, _, Some(hat)) => hat,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{:?} fusion is missing an input embedding",
                    self.fusion
                )))
            }
        };
        let logits = self
            .mlp
            .forward(tape, bound, input, dropout_rate, training, rng)?;
        Ok(tape.softmax_rows(logits))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::normalize_adjacency;
    use crate::graph::tests::tiny;
    use crate::matrix::Matrix;

    fn attention(
        tape: &mut Tape<f64>,
        n: usize,
        entries: &[((usize, usize), f64)],
    ) -> PathAttention {
        let weights = tape.param(Matrix::from_fn(entries.len(), 1, |i, _| entries[i].1));
        PathAttention {
            num_nodes: n,
            pairs: entries.iter().map(|e| e.0).collect(),
            counts: vec![1; entries.len()],
            weights,
        }
    }

    #[test]
    fn aggregate_identity_empty_and_hand_value() {
        let mut tape = Tape::new();
        let f = Matrix::from_f64_rows(&[&[2.0, 0.0], &[1.0, 3.0]]);
        let enc = tape.constant(f.clone());
        let eye = attention(&mut tape, 2, &[((0, 0), 1.0), ((1, 1), 1.0)]);
        let out = semantic_aggregate(&mut tape, &eye, enc).unwrap();
        assert_eq!(tape.value(out), &f);
        let empty = attention(&mut tape, 2, &[]);
        let out = semantic_aggregate(&mut tape, &empty, enc).unwrap();
        assert_eq!(tape.value(out).sum(), 0.0);
        let half = attention(&mut tape, 2, &[((0, 1), 0.5)]);
        let out = semantic_aggregate(&mut tape, &half, enc).unwrap();
        assert_eq!(tape.value(out).row(1), &[1.0, 0.0]);
        assert_eq!(tape.value(out).row(0), &[0.0, 0.0]);
    }

    #[test]
    fn multi_hop_zero_hops_and_two_node_example() {
        let g = tiny(2, vec![(0, 1)]);
        let adj = Rc::new(normalize_adjacency::<f64>(&g).matrix);
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::identity(2));
        let h0 = multi_hop(&mut tape, adj.clone(), x, 0).unwrap();
        assert_eq!(tape.value(h0), &Matrix::identity(2));
        let h1 = multi_hop(&mut tape, adj, x, 1).unwrap();
        let want = Matrix::from_f64_rows(&[&[0.75, 0.25], &[0.25, 0.75]]);
        assert!(tape.value(h1).max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn multi_hop_matches_dense_powers() {
        let g = tiny(7, vec![(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (2, 5)]);
        let adj = normalize_adjacency::<f64>(&g).matrix;
        let dense = adj.to_dense();
        let x = Matrix::from_fn(7, 3, |i, j| ((i * 5 + j) as f64).sin());
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = multi_hop(&mut tape, Rc::new(adj), xv, 4).unwrap();
        let mut term = x.clone();
        let mut acc = x;
        for _ in 0..4 {
            term = dense.matmul(&term).unwrap();
            acc.add_assign(&term);
        }
        assert!(tape.value(out).max_abs_diff(&acc.scale(0.2)) < 1e-10);
    }

    proptest! {
        #[test]
        fn multi_hop_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let g = tiny(6, vec![(0, 1), (1, 2), (3, 4), (4, 5), (5, 0)]);
            let adj = Rc::new(normalize_adjacency::<f64>(&g).matrix);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Matrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
            let y = Matrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
            let mut tape = Tape::new();
            let combo = tape.constant(x.zip_map(&y, |p, q| a * p + b * q));
            let (xv, yv) = (tape.constant(x), tape.constant(y));
            let lhs = multi_hop(&mut tape, adj.clone(), combo, 3).unwrap();
            let mx = multi_hop(&mut tape, adj.clone(), xv, 3).unwrap();
            let my = multi_hop(&mut tape, adj, yv, 3).unwrap();
            let rhs = tape.value(mx).zip_map(tape.value(my), |p, q| a * p + b * q);
            prop_assert!(tape.value(lhs).max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn row_scaled_attention_scales_output_rows() {
        let mut tape = Tape::new();
        let enc = tape.constant(Matrix::from_fn(3, 2, |i, j| (i + j) as f64 + 1.0));
        let base = [((0, 1), 0.3), ((2, 1), 0.6), ((1, 2), 0.9)];
        let w = attention(&mut tape, 3, &base);
        let scaled: Vec<_> = base
            .iter()
            .map(|&(p, v)| (p, if p.1 == 1 { 2.0 * v } else { v }))
            .collect();
        let w2 = attention(&mut tape, 3, &scaled);
        let a = semantic_aggregate(&mut tape, &w, enc).unwrap();
        let b = semantic_aggregate(&mut tape, &w2, enc).unwrap();
        for c in 0..2 {
            assert!((tape.value(b).get(1, c) - 2.0 * tape.value(a).get(1, c)).abs() < 1e-14);
            assert_eq!(tape.value(b).get(2, c), tape.value(a).get(2, c));
        }
    }

    fn model(fusion: Fusion) -> (CustomGnn, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let dims = ModelDims {
            features: 4,
            embed: 3,
            lstm_hidden: 2,
            classes: 5,
        };
        let m = CustomGnn::new(&mut store, dims, fusion, &mut ChaCha8Rng::seed_from_u64(0));
        (m, store)
    }

    #[test]
    fn zero_output_layer_gives_uniform_rows() {
        let (m, mut store) = model(Fusion::Concat);
        *store.value_mut(m.mlp.output.weight) = Matrix::zeros(3, 5);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let dot = tape.constant(Matrix::from_fn(4, 3, |i, j| (i * j) as f64));
        let hat = tape.constant(Matrix::from_fn(4, 3, |i, j| (i + j) as f64));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = m
            .predict(
                &mut tape,
                &bound,
                Some(dot),
                Some(hat),
                10.0,
                0.5,
                false,
                &mut rng,
            )
            .unwrap();
        assert!(tape
            .value(z)
            .as_slice()
            .iter()
            .all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn predict_rows_sum_to_one_and_permute_with_nodes() {
        let (m, store) = model(Fusion::Concat);
        let dot = Matrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).sin());
        let hat = Matrix::from_fn(4, 3, |i, j| ((i + 7 * j) as f64).cos());
        let perm = [2, 0, 3, 1];
        let permute = |x: &Matrix<f64>| Matrix::from_fn(4, 3, |i, j| x.get(perm[i], j));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let (d, h) = (tape.constant(dot.clone()), tape.constant(hat.clone()));
        let z = m
            .predict(
                &mut tape,
                &bound,
                Some(d),
                Some(h),
                1.0,
                0.0,
                false,
                &mut rng,
            )
            .unwrap();
        let (dp, hp) = (tape.constant(permute(&dot)), tape.constant(permute(&hat)));
        let zp = m
            .predict(
                &mut tape,
                &bound,
                Some(dp),
                Some(hp),
                1.0,
                0.0,
                false,
                &mut rng,
            )
            .unwrap();
        let z = tape.value(z).clone();
        for i in 0..4 {
            assert!((z.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for c in 0..5 {
                assert!((tape.value(zp).get(i, c) - z.get(perm[i], c)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_source_fusions_take_one_embedding() {
        let (m, store) = model(Fusion::MultiHopOnly);
        assert_eq!(store.value(m.mlp.hidden.weight).rows(), 3);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let dot = tape.constant(Matrix::zeros(2, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(m
            .predict(
                &mut tape,
                &bound,
                Some(dot),
                None,
                1.0,
                0.0,
                false,
                &mut rng
            )
            .is_ok());
        assert!(m
            .predict(
                &mut tape,
                &bound,
                None,
                Some(dot),
                1.0,
                0.0,
                false,
                &mut rng
            )
            .is_err());
    }

    #[test]
    fn sparse_dropout_keeps_pattern_and_scales() {
        let m = Csr::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, 4.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = drop_sparse(&m, 0.5, &mut rng).unwrap();
        assert_eq!(d.indices(), m.indices());
        for (a, b) in d.values().iter().zip(m.values()) {
            assert!(*a == 0.0 || *a == 2.0 * b);
        }
        assert_eq!(drop_sparse(&m, 0.0, &mut rng).unwrap(), m);
        assert!(drop_sparse(&m, 1.0, &mut rng).is_err());
    }
}
