//! Supervised, consistency and triplet losses.

use std::rc::Rc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

const LOG_FLOOR: f64 = 1e-12;

/// Coefficients and sampling sizes of the unsupervised terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Trade-off between the supervised and unsupervised parts.
    pub unsup: f64,
    pub consistency: f64,
    pub triplet: f64,
    pub temperature: f64,
    pub margin: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Binary cross-entropy of each class column against one-hot targets,
/// summed over classes, averaged over `nodes` and then over perspectives.
pub fn supervised_loss<T: Scalar>(
    tape: &mut Tape<T>,
    predictions: &[Var],
    nodes: &[usize],
    labels: &[usize],
) -> Result<Var> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument(
            "supervised loss over an empty training mask".into(),
        ));
    }
    if predictions.is_empty() || nodes.len() != labels.len() {
        return Err(Error::InvalidArgument(
            "supervised loss needs predictions and one label per node".into(),
        ));
    }
    let classes = tape.shape(predictions[0]).1;
    let mut onehot = Matrix::zeros(nodes.len(), classes);
    for (r, &c) in labels.iter().enumerate() {
        if c >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {c} outside {classes} classes"
            )));
        }
        onehot.set(r, c, T::one());
    }
    let y = tape.constant(onehot.clone());
    let not_y = tape.constant(onehot.map(|v| T::one() - v));
    let index: Rc<[usize]> = Rc::from(nodes);
    let floor = T::from_f64_lossy(LOG_FLOOR);
    let mut total: Option<Var> = None;
    for &z in predictions {
        let zl = tape.gather_rows(z, index.clone())?;
        let log_z = tape.log(zl, floor);
        let one_minus = tape.affine(zl, -T::one(), T::one());
        let log_1mz = tape.log(one_minus, floor);
        let a = tape.mul(y, log_z)?;
        let b = tape.mul(not_y, log_1mz)?;
        let ab = tape.add(a, b)?;
        let s = tape.sum(ab);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let denom = T::from_usize(nodes.len() * predictions.len()).unwrap();
    Ok(tape.scale(total.expect("at least one prediction"), -T::one() / denom))
}

/// `row^(1/T)` renormalised.
pub fn sharpen(row: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature {temperature} must be > 0"
        )));
    }
    let powered: Vec<f64> = row
        .iter()
        .map(|&p| p.max(0.0).powf(1.0 / temperature))
        .collect();
    let total: f64 = powered.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        // Very small T can underflow every entry; fall back to the log domain.
        if row.iter().any(|&p| p > 0.0) {
            let logs: Vec<f64> = row
                .iter()
                .map(|&p| {
                    if p > 0.0 {
                        p.ln() / temperature
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
            let s: f64 = e.iter().sum();
            return Ok(e.into_iter().map(|v| v / s).collect());
        }
        return Err(Error::InvalidArgument(
            "cannot sharpen an all-zero row".into(),
        ));
    }
    Ok(powered.into_iter().map(|p| p / total).collect())
}

/// Row-wise mean of several prediction matrices.
pub fn mean_prediction<T: Scalar>(predictions: &[&Matrix<T>]) -> Result<Matrix<T>> {
    let first = predictions
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of zero predictions".into()))?;
    let mut acc = Matrix::zeros(first.rows(), first.cols());
    for p in predictions {
        if p.shape() != first.shape() {
            return Err(Error::Shape("mean_prediction: differing shapes".into()));
        }
        acc.add_assign(p);
    }
    Ok(acc.scale(T::one() / T::from_usize(predictions.len()).unwrap()))
}

/// Sharpened mean prediction, used as a fixed target.
pub fn sharpened_target<T: Scalar>(mean: &Matrix<T>, temperature: f64) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(mean.rows(), mean.cols());
    for i in 0..mean.rows() {
        let row: Vec<f64> = mean.row(i).iter().map(|v| v.to_f64_lossy()).collect();
        for (o, v) in out.row_mut(i).iter_mut().zip(sharpen(&row, temperature)?) {
            *o = T::from_f64_lossy(v);
        }
    }
    Ok(out)
}

/// Mean over perspectives and nodes of the squared distance to the
/// sharpened mean prediction. The target carries no gradient.
pub fn consistency_loss<T: Scalar>(
    tape: &mut Tape<T>,
    predictions: &[Var],
    temperature: f64,
) -> Result<Var> {
    if predictions.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "consistency needs at least 2 perspectives, got {}",
            predictions.len()
        )));
    }
    let values: Vec<&Matrix<T>> = predictions.iter().map(|&z| tape.value(z)).collect();
    let target = sharpened_target(&mean_prediction(&values)?, temperature)?;
    consistency_loss_to(tape, predictions, &target)
}

/// Consistency loss against an explicit constant target.
pub fn consistency_loss_to<T: Scalar>(
    tape: &mut Tape<T>,
    predictions: &[Var],
    target: &Matrix<T>,
) -> Result<Var> {
    let n = target.rows();
    let target = tape.constant(target.clone());
    let mut total: Option<Var> = None;
    for &z in predictions {
        let d = tape.sub(z, target)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum(sq);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let total =
        total.ok_or_else(|| Error::InvalidArgument("consistency over zero predictions".into()))?;
    let denom = T::from_usize(n.max(1) * predictions.len()).unwrap();
    Ok(tape.scale(total, T::one() / denom))
}

/// Training nodes keep their labels; every other node takes its argmax class.
pub fn pseudo_labels<T: Scalar>(
    mean: &Matrix<T>,
    train: &[usize],
    labels: &[Option<usize>],
) -> Vec<usize> {
    let mut out: Vec<usize> = (0..mean.rows()).map(|i| mean.row_argmax(i)).collect();
    for &i in train {
        if let Some(l) = labels[i] {
            out[i] = l;
        }
    }
    out
}

/// Sampled same-label and different-label node pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletBatch {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    /// Per positive pair: both labels were given rather than guessed.
    pub positive_given: Vec<bool>,
    pub negative_given: Vec<bool>,
}

/// Draws `n_pos` uniform same-label pairs and `n_neg` uniform different-label
/// pairs among nodes with `Some` label. `given[i]` marks real labels.
pub fn sample_triplets<R: Rng>(
    labels: &[Option<usize>],
    given: &[bool],
    n_pos: usize,
    n_neg: usize,
    rng: &mut R,
) -> Result<TripletBatch> {
    let nodes: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    let classes = labels.iter().flatten().max().map_or(0, |&c| c + 1);
    let mut members = vec![Vec::new(); classes];
    for &i in &nodes {
        members[labels[i].unwrap()].push(i);
    }
    let present = members.iter().filter(|m| !m.is_empty()).count();
    let mut batch = TripletBatch::default();

    // P(class) proportional to its number of unordered pairs
    let pair_counts: Vec<f64> = members
        .iter()
        .map(|m| (m.len() * m.len().saturating_sub(1) / 2) as f64)
        .collect();
    let total_pairs: f64 = pair_counts.iter().sum();
    if n_pos > 0 && total_pairs > 0.0 {
        let pick = WeightedIndex::new(&pair_counts).expect("positive total weight");
        for _ in 0..n_pos {
            let c = pick.sample(rng);
            let m = &members[c];
            let a = rng.gen_range(0..m.len());
            let mut b = rng.gen_range(0..m.len() - 1);
            if b >= a {
                b += 1;
            }
            let (u, v) = (m[a], m[b]);
            batch.positives.push((u, v));
            batch.positive_given.push(given[u] && given[v]);
        }
    }

    if n_neg > 0 {
        if present < 2 {
            return Err(Error::InvalidArgument(
                "negative pairs need at least two classes".into(),
            ));
        }
        while batch.negatives.len() < n_neg {
            let u = nodes[rng.gen_range(0..nodes.len())];
            let v = nodes[rng.gen_range(0..nodes.len())];
            if labels[u] != labels[v] {
                batch.negatives.push((u, v));
                batch.negative_given.push(given[u] && given[v]);
            }
        }
    }
    Ok(batch)
}

fn pair_distances<T: Scalar>(tape: &mut Tape<T>, x: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let a: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let b: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let xa = tape.gather_rows(x, a)?;
    let xb = tape.gather_rows(x, b)?;
    let d = tape.sub(xa, xb)?;
    Ok(tape.row_norm(d))
}

/// Mean positive distance plus mean hinge `relu(margin - d)` over negatives.
/// An empty side contributes 0.
pub fn triplet_loss<T: Scalar>(
    tape: &mut Tape<T>,
    batch: &TripletBatch,
    embeddings: Var,
    margin: f64,
) -> Result<Var> {
    if batch.positives.is_empty() && batch.negatives.is_empty() {
        return Err(Error::InvalidArgument("empty triplet batch".into()));
    }
    let mut parts = Vec::with_capacity(2);
    if !batch.positives.is_empty() {
        let d = pair_distances(tape, embeddings, &batch.positives)?;
        parts.push(tape.mean(d));
    }
    if !batch.negatives.is_empty() {
        let d = pair_distances(tape, embeddings, &batch.negatives)?;
        let gap = tape.affine(d, -T::one(), T::from_f64_lossy(margin));
        let hinge = tape.relu(gap);
        parts.push(tape.mean(hinge));
    }
    match parts[..] {
        [one] => Ok(one),
        [p, n] => tape.add(p, n),
        _ => unreachable!(),
    }
}

/// `sup + unsup * (consistency * con + triplet * tri)`; absent terms count as 0.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    supervised: Var,
    consistency: Option<Var>,
    triplet: Option<Var>,
    w: &LossWeights,
) -> Result<Var> {
    let mut total = supervised;
    for (term, coeff) in [(consistency, w.consistency), (triplet, w.triplet)] {
        if let Some(t) = term {
            let c = w.unsup * coeff;
            if c != 0.0 {
                let scaled = tape.scale(t, T::from_f64_lossy(c));
                total = tape.add(total, scaled)?;
            }
        }
    }
    Ok(total)
}
