//! Epoch loop over perspectives, optimisation, early stopping and inference.
//!
//! Each epoch runs, for every perspective `s`: feature encoding, sub-graph
//! sampling, path scoring into `W(s)`, semantic aggregation, the triplet
//! term, multi-hop propagation and prediction `Z(s)`. The supervised and
//! consistency terms over all `Z(s)` then join the triplet mean, and a single
//! Adam step updates every parameter.

mod config;
mod metrics;

use std::rc::Rc;

pub use config::{Plan, Precision, TrainConfig};
pub use metrics::{
    accuracy, cross_entropy, metrics_csv, write_metrics_csv, EpochRecord, METRICS_HEADER,
};
use rand::RngCore;

use crate::autodiff::{AdamConfig, AdamState, Bound, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::gnn::{drop_sparse, multi_hop, semantic_aggregate, CustomGnn, ModelDims};
use crate::graph::{normalize_adjacency, Graph};
use crate::losses::{
    consistency_loss, consistency_loss_to, mean_prediction, pseudo_labels, sample_triplets,
    supervised_loss, total_loss, triplet_loss,
};
use crate::matrix::{Csr, Matrix};
use crate::reweighter::{build_attention, sum_attention, PathAttention};
use crate::rng::{purpose, stream};
use crate::sampler::{sample_perspective, StreamKey};
use crate::scalar::Scalar;

/// Graph-derived constants shared by every epoch.
#[derive(Clone, Debug)]
pub struct Context<T> {
    pub features: Rc<Csr<T>>,
    pub adjacency: Rc<Csr<T>>,
    pub train_labels: Vec<usize>,
}

impl<T: Scalar> Context<T> {
    pub fn new(g: &Graph) -> Result<Self> {
        let train_labels = g
            .train()
            .iter()
            .map(|&i| {
                g.label(i)
                    .ok_or_else(|| Error::InvalidArgument(format!("train node {i} has no label")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            features: Rc::new(g.features_as()),
            adjacency: Rc::new(normalize_adjacency(g).matrix),
            train_labels,
        })
    }
}

/// Parameter handles together with their values.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: CustomGnn,
    pub params: ParamStore<T>,
}

/// Freshly initialised model for `g` under `cfg`'s ablation settings.
pub fn build_model<T: Scalar>(g: &Graph, cfg: &TrainConfig) -> Result<Model<T>> {
    let plan = cfg.plan(g.num_nodes())?;
    let dims = ModelDims {
        features: g.num_features(),
        embed: cfg.embed_dim,
        lstm_hidden: cfg.lstm_hidden,
        classes: g.num_classes(),
    };
    let mut params = ParamStore::new();
    let mut rng = stream(cfg.seed, &[purpose::INIT]);
    let net = CustomGnn::new(&mut params, dims, plan.fusion, &mut rng);
    Ok(Model { net, params })
}

/// Tape nodes of one training-loss evaluation.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: Var,
    pub sup: Var,
    pub con: Option<Var>,
    pub tri: Option<Var>,
    pub predictions: Vec<Var>,
}

/// Per-epoch inputs of [`training_loss`].
#[derive(Clone, Copy, Debug)]
pub struct EpochInputs<'a, T> {
    pub seed: u64,
    pub epoch: u64,
    /// Last epoch's labels for every node; without them triplets are drawn
    /// among training nodes only.
    pub pseudo: Option<&'a [usize]>,
    /// Fixed consistency target. By default the sharpened mean of this
    /// evaluation's predictions is used.
    pub consistency_target: Option<&'a Matrix<T>>,
}

/// Builds the full training loss of one epoch on `tape`.
pub fn training_loss<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    net: &CustomGnn,
    g: &Graph,
    ctx: &Context<T>,
    plan: &Plan,
    inputs: EpochInputs<'_, T>,
) -> Result<LossParts> {
    let EpochInputs {
        seed,
        epoch,
        pseudo,
        consistency_target,
    } = inputs;
    let n = g.num_nodes();
    let mut given = vec![false; n];
    for &i in g.train() {
        given[i] = true;
    }
    let triplet_labels: Vec<Option<usize>> = match pseudo {
        Some(p) => p.iter().map(|&l| Some(l)).collect(),
        None => (0..n)
            .map(|i| if given[i] { g.label(i) } else { None })
            .collect(),
    };

    let mut predictions = Vec::with_capacity(plan.perspectives);
    let mut triplet_terms = Vec::new();
    for s in 0..plan.perspectives as u64 {
        let mut drop_rng = stream(seed, &[purpose::DROPOUT, epoch, s]);
        let features = drop_sparse(&ctx.features, plan.dropout_encoder, &mut drop_rng)?;
        let encoded = tape.sparse_matmul(Rc::new(features), bound.var(net.encoder))?;

        let aggregated = if plan.fusion.uses_paths() {
            let batch = sample_perspective(
                g,
                &plan.sampler,
                StreamKey {
                    seed,
                    epoch,
                    perspective: s,
                },
            )?;
            let scored = net.scorer.score_batch(tape, bound, encoded, &batch)?;
            let mut attention = build_attention(tape, &scored, n)?;
            attention.weights = crate::autodiff::dropout(
                tape,
                attention.weights,
                plan.dropout_path,
                true,
                &mut drop_rng,
            )?;
            let hat = semantic_aggregate(tape, &attention, encoded)?;
            if plan.use_triplet {
                let mut trng = stream(seed, &[purpose::TRIPLET, epoch, s]);
                let w = &plan.weights;
                let batch = sample_triplets(&triplet_labels, &given, w.n_pos, w.n_neg, &mut trng)?;
                if !batch.positives.is_empty() || !batch.negatives.is_empty() {
                    triplet_terms.push(triplet_loss(tape, &batch, hat, w.margin)?);
                }
            }
            Some(hat)
        } else {
            None
        };

        let propagated = if plan.fusion.uses_multi_hop() {
            let adjacency = drop_sparse(&ctx.adjacency, plan.dropout_adjacency, &mut drop_rng)?;
            Some(multi_hop(tape, Rc::new(adjacency), encoded, plan.hops)?)
        } else {
            None
        };
        let z = net.predict(
            tape,
            bound,
            propagated,
            aggregated,
            plan.tradeoff,
            plan.dropout_mlp,
            true,
            &mut drop_rng,
        )?;
        predictions.push(z);
    }

    let sup = supervised_loss(tape, &predictions, g.train(), &ctx.train_labels)?;
    let con = match (plan.use_consistency, consistency_target) {
        (false, _) => None,
        (true, Some(target)) => Some(consistency_loss_to(tape, &predictions, target)?),
        (true, None) => Some(consistency_loss(
            tape,
            &predictions,
            plan.weights.temperature,
        )?),
    };
    let tri = match triplet_terms.len() {
        0 => None,
        k => {
            let mut acc = triplet_terms[0];
            for &t in &triplet_terms[1..] {
                acc = tape.add(acc, t)?;
            }
            Some(tape.scale(acc, T::one() / T::from_usize(k).unwrap()))
        }
    };
    let total = total_loss(tape, sup, con, tri, &plan.weights)?;
    Ok(LossParts {
        total,
        sup,
        con,
        tri,
        predictions,
    })
}

/// Loss values and mean training prediction of one epoch.
#[derive(Clone, Debug)]
pub struct EpochOutcome<T> {
    pub loss: f64,
    pub sup: f64,
    pub con: f64,
    pub tri: f64,
    pub mean_prediction: Matrix<T>,
}

/// One pass of the epoch loop followed by a single optimiser step.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<T: Scalar>(
    g: &Graph,
    ctx: &Context<T>,
    model: &mut Model<T>,
    adam: &mut AdamState<T>,
    plan: &Plan,
    seed: u64,
    epoch: u64,
    pseudo: Option<&[usize]>,
) -> Result<EpochOutcome<T>> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let inputs = EpochInputs {
        seed,
        epoch,
        pseudo,
        consistency_target: None,
    };
    let parts = training_loss(&mut tape, &bound, &model.net, g, ctx, plan, inputs)?;
    let read = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item().to_f64_lossy());
    let (loss, sup, con, tri) = (
        read(Some(parts.total)),
        read(Some(parts.sup)),
        read(parts.con),
        read(parts.tri),
    );
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { sup, con, tri });
    }
    let values: Vec<&Matrix<T>> = parts.predictions.iter().map(|&z| tape.value(z)).collect();
    let mean = mean_prediction(&values)?;
    let mut grads = tape.backward(parts.total)?;
    let grads = bound.collect(&model.params, &mut grads);
    adam.step(&mut model.params, &grads)?;
    Ok(EpochOutcome {
        loss,
        sup,
        con,
        tri,
        mean_prediction: mean,
    })
}

/// Encoded features without dropout.
pub fn encode_eval<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    net: &CustomGnn,
    ctx: &Context<T>,
) -> Result<Var> {
    tape.sparse_matmul(ctx.features.clone(), bound.var(net.encoder))
}

/// Evaluation-mode attention summed over `plan.perspectives` fresh samples.
#[allow(clippy::too_many_arguments)]
pub fn inference_attention<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    net: &CustomGnn,
    g: &Graph,
    plan: &Plan,
    encoded: Var,
    seed: u64,
    round: u64,
) -> Result<PathAttention> {
    let sample_seed = stream(seed, &[purpose::INFER, round]).next_u64();
    let mut parts = Vec::with_capacity(plan.perspectives);
    for s in 0..plan.perspectives as u64 {
        let batch = sample_perspective(
            g,
            &plan.sampler,
            StreamKey {
                seed: sample_seed,
                epoch: 0,
                perspective: s,
            },
        )?;
        let scored = net.scorer.score_batch(tape, bound, encoded, &batch)?;
        parts.push(build_attention(tape, &scored, g.num_nodes())?);
    }
    sum_attention(tape, &parts)
}

/// Class probabilities with dropout off and `W` summed over fresh perspectives.
/// `round` selects the sampling stream; equal inputs give bitwise-equal output.
pub fn infer<T: Scalar>(
    g: &Graph,
    ctx: &Context<T>,
    model: &Model<T>,
    plan: &Plan,
    seed: u64,
    round: u64,
) -> Result<Matrix<T>> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let net = &model.net;
    let encoded = encode_eval(&mut tape, &bound, net, ctx)?;
    let aggregated = if plan.fusion.uses_paths() {
        let w = inference_attention(&mut tape, &bound, net, g, plan, encoded, seed, round)?;
        Some(semantic_aggregate(&mut tape, &w, encoded)?)
    } else {
        None
    };
    let propagated = if plan.fusion.uses_multi_hop() {
        Some(multi_hop(
            &mut tape,
            ctx.adjacency.clone(),
            encoded,
            plan.hops,
        )?)
    } else {
        None
    };
    let mut unused = stream(seed, &[purpose::INFER, round, u64::MAX]);
    let z = net.predict(
        &mut tape,
        &bound,
        propagated,
        aggregated,
        plan.tradeoff,
        0.0,
        false,
        &mut unused,
    )?;
    Ok(tape.value(z).clone())
}

/// Validation-accuracy early stopping.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub best_val: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_val: f64::NEG_INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    /// Records an epoch's validation accuracy; true on strict improvement.
    pub fn update(&mut self, epoch: usize, val_acc: f64) -> bool {
        if val_acc > self.best_val {
            self.best_val = val_acc;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            true
        } else {
            self.since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_improvement >= self.patience
    }
}

/// Trained model restored to its best validation epoch.
#[derive(Clone, Debug)]
pub struct FitResult<T> {
    pub model: Model<T>,
    pub plan: Plan,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Test accuracy of the restored model (NaN without a test mask).
    pub test_acc: f64,
    /// Predictions of the restored model, using inference round `best_epoch`.
    pub predictions: Matrix<T>,
}

pub fn fit<T: Scalar>(g: &Graph, cfg: &TrainConfig) -> Result<FitResult<T>> {
    fit_with(g, cfg, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<T: Scalar>(
    g: &Graph,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult<T>> {
    if g.val().is_empty() {
        return Err(Error::InvalidArgument(
            "early stopping needs a non-empty validation mask".into(),
        ));
    }
    let plan = cfg.plan(g.num_nodes())?;
    let ctx = Context::<T>::new(g)?;
    let mut model = build_model::<T>(g, cfg)?;
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig::new(cfg.learning_rate, cfg.weight_decay),
    );
    let mut stop = EarlyStop::new(cfg.patience);
    let mut best = model.params.clone();
    let mut best_z: Option<Matrix<T>> = None;
    let mut history = Vec::new();
    let mut pseudo: Option<Vec<usize>> = None;
    let test_acc_of = |z: &Matrix<T>| {
        if g.test().is_empty() {
            Ok(f64::NAN)
        } else {
            accuracy(z, g, g.test())
        }
    };

    for epoch in 1..=cfg.max_epochs {
        let out = train_epoch(
            g,
            &ctx,
            &mut model,
            &mut adam,
            &plan,
            cfg.seed,
            epoch as u64,
            pseudo.as_deref(),
        )?;
        pseudo = Some(pseudo_labels(&out.mean_prediction, g.train(), g.labels()));

        let z = infer(g, &ctx, &model, &plan, cfg.seed, epoch as u64)?;
        let record = EpochRecord {
            epoch,
            loss: out.loss,
            sup: out.sup,
            con: out.con,
            tri: out.tri,
            train_ce: cross_entropy(&z, g, g.train())?,
            val_ce: cross_entropy(&z, g, g.val())?,
            train_acc: accuracy(&z, g, g.train())?,
            val_acc: accuracy(&z, g, g.val())?,
            test_acc: test_acc_of(&z)?,
        };
        on_epoch(&record);
        if stop.update(epoch, record.val_acc) {
            best = model.params.clone();
            best_z = Some(z);
        }
        history.push(record);
        if stop.should_stop() {
            break;
        }
    }

    model.params = best;
    let predictions = best_z.expect("at least one epoch ran");
    let test_acc = test_acc_of(&predictions)?;
    Ok(FitResult {
        model,
        plan,
        history,
        best_epoch: stop.best_epoch,
        best_val: stop.best_val,
        test_acc,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::{generate, SyntheticParams};

    fn small_config() -> TrainConfig {
        TrainConfig {
            embed_dim: 8,
            lstm_hidden: 6,
            hops: 2,
            perspectives: 2,
            batch_size: 10,
            walks_per_start: 2,
            walk_length: 4,
            window: 3,
            n_pos: 40,
            n_neg: 40,
            margin: 1.0,
            patience: 5,
            max_epochs: 12,
            seed: 3,
            ..TrainConfig::cora()
        }
    }

    #[test]
    fn early_stop_rules() {
        let mut s = EarlyStop::new(2);
        assert!(s.update(1, 0.5));
        assert!(!s.update(2, 0.5));
        assert!(!s.should_stop());
        assert!(s.update(3, 0.6));
        assert_eq!(s.since_improvement, 0);
        s.update(4, 0.1);
        s.update(5, 0.6);
        assert!(s.should_stop());
        assert_eq!(s.best_epoch, 3);
        let mut zero = EarlyStop::new(0);
        zero.update(1, 0.0);
        assert!(zero.should_stop());
    }

    #[test]
    fn fit_runs_and_is_deterministic() {
        let g = generate(&SyntheticParams::small("s", 40, 3, 1)).unwrap();
        let cfg = small_config();
        let a = fit::<f64>(&g, &cfg).unwrap();
        let b = fit::<f64>(&g, &cfg).unwrap();
        assert_eq!(metrics_csv(&a.history), metrics_csv(&b.history));
        assert!(a
            .history
            .iter()
            .all(|r| r.loss.is_finite() && r.con > 0.0 && r.tri > 0.0));
        assert!(a.best_epoch >= 1 && a.best_epoch <= a.history.len());
        let ctx = Context::new(&g).unwrap();
        let z = infer(&g, &ctx, &a.model, &a.plan, cfg.seed, a.best_epoch as u64).unwrap();
        assert_eq!(z, a.predictions);
        for i in 0..z.rows() {
            assert!((z.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_patience_runs_one_epoch() {
        let g = generate(&SyntheticParams::small("s", 40, 3, 1)).unwrap();
        let cfg = TrainConfig {
            patience: 0,
            ..small_config()
        };
        assert_eq!(fit::<f64>(&g, &cfg).unwrap().history.len(), 1);
    }

    #[test]
    fn every_ablation_trains() {
        let g = generate(&SyntheticParams::small("s", 40, 3, 2)).unwrap();
        let base = TrainConfig {
            max_epochs: 3,
            ..small_config()
        };
        for cfg in [
            TrainConfig {
                no_reweighting: true,
                ..base.clone()
            },
            TrainConfig {
                no_multihop: true,
                ..base.clone()
            },
            TrainConfig {
                no_triplet: true,
                ..base.clone()
            },
            TrainConfig {
                no_multiperspective: true,
                ..base.clone()
            },
        ] {
            let r = fit::<f64>(&g, &cfg).unwrap();
            assert_eq!(r.history.len(), 3);
            let last = r.history.last().unwrap();
            if cfg.no_reweighting {
                assert_eq!((last.con, last.tri), (0.0, 0.0));
            }
            if cfg.no_multiperspective {
                assert_eq!(last.con, 0.0);
            }
            if cfg.no_triplet {
                assert_eq!(last.tri, 0.0);
            }
        }
    }

    #[test]
    fn f32_training_runs() {
        let g = generate(&SyntheticParams::small("s", 40, 3, 1)).unwrap();
        let cfg = TrainConfig {
            max_epochs: 3,
            precision: Precision::F32,
            ..small_config()
        };
        let r = fit::<f32>(&g, &cfg).unwrap();
        assert!(r.history.iter().all(|h| h.loss.is_finite()));
    }

    #[test]
    fn single_perspective_inference_equals_its_attention() {
        let g = generate(&SyntheticParams::small("s", 30, 2, 4)).unwrap();
        let cfg = TrainConfig {
            perspectives: 1,
            ..small_config()
        };
        let plan = cfg.plan(g.num_nodes()).unwrap();
        let model = build_model::<f64>(&g, &cfg).unwrap();
        let ctx = Context::new(&g).unwrap();
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let enc = encode_eval(&mut tape, &bound, &model.net, &ctx).unwrap();
        let summed =
            inference_attention(&mut tape, &bound, &model.net, &g, &plan, enc, 9, 0).unwrap();
        let seed = stream(9, &[purpose::INFER, 0]).next_u64();
        let batch = sample_perspective(
            &g,
            &plan.sampler,
            StreamKey {
                seed,
                epoch: 0,
                perspective: 0,
            },
        )
        .unwrap();
        let scored = model
            .net
            .scorer
            .score_batch(&mut tape, &bound, enc, &batch)
            .unwrap();
        let single = build_attention(&mut tape, &scored, g.num_nodes()).unwrap();
        assert_eq!(summed.pairs, single.pairs);
        assert_eq!(summed.to_dense(&tape), single.to_dense(&tape));
    }
}
