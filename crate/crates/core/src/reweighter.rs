//! Feature encoding, LSTM scoring of sub-paths and the path-attention matrix.
//!
//! A sub-path's score is `sigmoid(head(h_last))` where `h_last` is the final
//! LSTM state over the encoded rows of its nodes. The attention entry for
//! `(start, end)` is the mean score over all sub-paths joining that pair.
//!
//! Sub-paths cut from the same walk at the same offset share their LSTM
//! prefix, so scoring runs one recurrence per `(walk, offset)` and reads a
//! score off every step from the second onwards. Runs are ordered by length
//! so the active batch at each step is a prefix and no padding is needed.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::autodiff::{Bound, Linear, Lstm, LstmState, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Csr;
use crate::sampler::PerspectiveBatch;
use crate::scalar::Scalar;

/// Parameters that turn encoded node rows into a path score.
#[derive(Clone, Copy, Debug)]
pub struct PathScorer {
    pub lstm: Lstm,
    pub head: Linear,
}

/// `F * theta1` with `F` sparse.
pub fn encode_features<T: Scalar>(
    tape: &mut Tape<T>,
    features: Rc<Csr<T>>,
    encoder: Var,
) -> Result<Var> {
    let (d, _) = tape.shape(encoder);
    if features.cols() != d {
        return Err(Error::Shape(format!(
            "encode_features: {}x{} features with a {}x{} encoder",
            features.rows(),
            features.cols(),
            d,
            tape.shape(encoder).1
        )));
    }
    tape.sparse_matmul(features, encoder)
}

impl PathScorer {
    /// Score in (0, 1) of a single node sequence, as a `1 x 1` node.
    pub fn score_subpath<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        encoded: Var,
        nodes: &[usize],
    ) -> Result<Var> {
        let rows = tape.gather_rows(encoded, Rc::from(nodes))?;
        let h = self.lstm.forward_sequence(tape, bound, rows)?;
        let logit = self.head.forward(tape, bound, h)?;
        Ok(tape.sigmoid(logit))
    }

    /// Scores every sub-path of `batch` with shared-prefix recurrences.
    pub fn score_batch<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        encoded: Var,
        batch: &PerspectiveBatch,
    ) -> Result<ScoredBatch> {
        let window = batch.window;
        let mut runs: Vec<(usize, usize, usize)> = Vec::new(); // (walk, offset, len)
        for (wi, w) in batch.walks.iter().enumerate() {
            for a in 0..w.len().saturating_sub(1) {
                runs.push((wi, a, window.min(w.len() - a)));
            }
        }
        // stable: equal lengths keep walk order
        runs.sort_by_key(|r| std::cmp::Reverse(r.2));
        let mut steps = Vec::new();
        if runs.is_empty() {
            return Ok(ScoredBatch { steps });
        }

        let projected = self.lstm.project(tape, bound, encoded)?;
        let node_at = |r: &(usize, usize, usize), t: usize| batch.walks[r.0].nodes[r.1 + t];
        let max_len = runs[0].2;
        let mut state: Option<LstmState> = None;
        let mut active_prev = runs.len();
        for t in 0..max_len {
            let active = runs.partition_point(|r| r.2 > t);
            if let Some(s) = state.as_mut() {
                if active < active_prev {
                    let keep: Rc<[usize]> = (0..active).collect();
                    s.hidden = tape.gather_rows(s.hidden, keep.clone())?;
                    s.cell = tape.gather_rows(s.cell, keep)?;
                }
            }
            let idx: Rc<[usize]> = runs[..active].iter().map(|r| node_at(r, t)).collect();
            let x = tape.gather_rows(projected, idx)?;
            let next = self.lstm.step(tape, bound, x, state)?;
            state = Some(next);
            active_prev = active;
            if t >= 1 {
                let logit = self.head.forward(tape, bound, next.hidden)?;
                let scores = tape.sigmoid(logit);
                let subpaths = runs[..active]
                    .iter()
                    .map(|r| SubPathRef {
                        walk: r.0,
                        offset: r.1,
                        len: t + 1,
                        start: node_at(r, 0),
                        end: node_at(r, t),
                    })
                    .collect();
                steps.push(StepScores { scores, subpaths });
            }
        }
        Ok(ScoredBatch { steps })
    }
}

/// Location of a scored sub-path within its batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubPathRef {
    pub walk: usize,
    pub offset: usize,
    pub len: usize,
    pub start: usize,
    pub end: usize,
}

/// Scores of all sub-paths of one length: `scores` is `k x 1`, row `i` belongs to `subpaths[i]`.
#[derive(Clone, Debug)]
pub struct StepScores {
    pub scores: Var,
    pub subpaths: Vec<SubPathRef>,
}

#[derive(Clone, Debug, Default)]
pub struct ScoredBatch {
    pub steps: Vec<StepScores>,
}

impl ScoredBatch {
    pub fn len(&self) -> usize {
        self.steps.iter().map(|s| s.subpaths.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(sub-path, score)` pairs read off the tape.
    pub fn collect<T: Scalar>(&self, tape: &Tape<T>) -> Vec<(SubPathRef, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for s in &self.steps {
            let vals = tape.value(s.scores).as_slice();
            out.extend(
                s.subpaths
                    .iter()
                    .zip(vals)
                    .map(|(&r, v)| (r, v.to_f64_lossy())),
            );
        }
        out
    }
}

/// Sparse path-attention matrix: `weights` (`k x 1`) holds `w[start, end]`
/// for each stored pair, in ascending `(start, end)` order.
#[derive(Clone, Debug)]
pub struct PathAttention {
    pub num_nodes: usize,
    pub pairs: Vec<(usize, usize)>,
    /// Number of sub-paths averaged into each entry.
    pub counts: Vec<usize>,
    pub weights: Var,
}

impl PathAttention {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get<T: Scalar>(&self, tape: &Tape<T>, start: usize, end: usize) -> Option<T> {
        self.pairs
            .binary_search(&(start, end))
            .ok()
            .map(|k| tape.value(self.weights).as_slice()[k])
    }

    /// Dense `n x n` copy of the weights, for inspection and small tests.
    pub fn to_dense<T: Scalar>(&self, tape: &Tape<T>) -> crate::matrix::Matrix<T> {
        let mut m = crate::matrix::Matrix::zeros(self.num_nodes, self.num_nodes);
        for (k, &(s, e)) in self.pairs.iter().enumerate() {
            m.set(s, e, tape.value(self.weights).as_slice()[k]);
        }
        m
    }
}

/// Averages sub-path scores into attention entries keyed by `(start, end)`.
pub fn build_attention<T: Scalar>(
    tape: &mut Tape<T>,
    scored: &ScoredBatch,
    num_nodes: usize,
) -> Result<PathAttention> {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for s in &scored.steps {
        for r in &s.subpaths {
            *counts.entry((r.start, r.end)).or_insert(0) += 1;
        }
    }
    let pairs: Vec<(usize, usize)> = counts.keys().copied().collect();
    let count_vec: Vec<usize> = counts.values().copied().collect();
    let slot: BTreeMap<(usize, usize), usize> =
        pairs.iter().enumerate().map(|(k, &p)| (p, k)).collect();

    let mut weights: Option<Var> = None;
    for s in &scored.steps {
        let index: Rc<[usize]> = s.subpaths.iter().map(|r| slot[&(r.start, r.end)]).collect();
        let coeff: Rc<[T]> = index
            .iter()
            .map(|&k| T::one() / T::from_usize(count_vec[k]).unwrap())
            .collect();
        let part = tape.index_add(s.scores, index, Some(coeff), pairs.len())?;
        weights = Some(match weights {
            Some(w) => tape.add(w, part)?,
            None => part,
        });
    }
    let weights = weights.unwrap_or_else(|| tape.constant(crate::matrix::Matrix::zeros(0, 1)));
    Ok(PathAttention {
        num_nodes,
        pairs,
        counts: count_vec,
        weights,
    })
}

/// Entry-wise sum of several attention matrices over the union of their pairs.
pub fn sum_attention<T: Scalar>(
    tape: &mut Tape<T>,
    parts: &[PathAttention],
) -> Result<PathAttention> {
    let num_nodes = parts.first().map_or(0, |p| p.num_nodes);
    let mut union: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for p in parts {
        for (&pair, &c) in p.pairs.iter().zip(&p.counts) {
            *union.entry(pair).or_insert(0) += c;
        }
    }
    let pairs: Vec<(usize, usize)> = union.keys().copied().collect();
    let counts: Vec<usize> = union.values().copied().collect();
    let mut total: Option<Var> = None;
    for p in parts {
        let index: Rc<[usize]> = p
            .pairs
            .iter()
            .map(|pair| pairs.binary_search(pair).expect("in union"))
            .collect();
        let part = tape.index_add(p.weights, index, None, pairs.len())?;
        total = Some(match total {
            Some(t) => tape.add(t, part)?,
            None => part,
        });
    }
    let weights = total.unwrap_or_else(|| tape.constant(crate::matrix::Matrix::zeros(0, 1)));
    Ok(PathAttention {
        num_nodes,
        pairs,
        counts,
        weights,
    })
}
