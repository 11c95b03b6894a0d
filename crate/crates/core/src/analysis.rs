//! Studies of a trained model: category relevance, path-weight correlations,
//! generalisation gap and retraining sweeps. Every analysis only uses the
//! public trainer and reweighter interfaces and can be written as CSV.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{perturb_edges, Graph};
use crate::rng::{purpose, stream};
use crate::sampler::{sample_from_starts, StreamKey};
use crate::scalar::Scalar;
use crate::trainer::{encode_eval, fit, Context, EpochRecord, Model, TrainConfig};

/// Where analysis paths come from and how they are filtered.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSampling {
    /// Start nodes; empty means the test mask.
    pub starts: Vec<usize>,
    pub walks_per_start: usize,
    pub walk_length: usize,
    pub window: usize,
    pub seed: u64,
    /// Drop paths scoring below this before aggregating.
    pub min_weight: Option<f64>,
}

impl PathSampling {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            starts: Vec::new(),
            walks_per_start: cfg.walks_per_start,
            walk_length: cfg.walk_length,
            window: cfg.window,
            seed: cfg.seed,
            min_weight: None,
        }
    }
}

/// A scored path with its node sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPath {
    pub nodes: Vec<usize>,
    pub score: f64,
}

/// Scores every sub-path of fresh walks with the trained model, in evaluation mode.
pub fn score_paths<T: Scalar>(
    g: &Graph,
    model: &Model<T>,
    opts: &PathSampling,
) -> Result<Vec<ScoredPath>> {
    let ctx = Context::<T>::new(g)?;
    let starts = if opts.starts.is_empty() {
        g.test().to_vec()
    } else {
        opts.starts.clone()
    };
    if starts.is_empty() {
        return Err(Error::InvalidArgument(
            "no start nodes for path analysis".into(),
        ));
    }
    if opts.window < 2 {
        return Err(Error::InvalidArgument(format!(
            "window must be >= 2, got {}",
            opts.window
        )));
    }
    let key = StreamKey {
        seed: opts.seed,
        epoch: purpose::ANALYSIS,
        perspective: 0,
    };
    let batch = sample_from_starts(
        g,
        &starts,
        opts.walks_per_start,
        opts.walk_length,
        opts.window,
        key,
    );
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let encoded = encode_eval(&mut tape, &bound, &model.net, &ctx)?;
    let scored = model
        .net
        .scorer
        .score_batch(&mut tape, &bound, encoded, &batch)?;
    Ok(scored
        .collect(&tape)
        .into_iter()
        .filter(|(_, s)| opts.min_weight.is_none_or(|m| *s >= m))
        .map(|(r, score)| ScoredPath {
            nodes: batch.walks[r.walk].nodes[r.offset..r.offset + r.len].to_vec(),
            score,
        })
        .collect())
}

/// `values[i][j]`: mean weight of paths that start in category `j` and end in category `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

impl RelevanceMatrix {
    /// Cell means over paths with labelled endpoints; cells under `min_count` are missing.
    pub fn from_paths(g: &Graph, paths: &[ScoredPath], min_count: usize) -> Self {
        let c = g.num_classes();
        let mut sums = vec![vec![0.0; c]; c];
        let mut counts = vec![vec![0usize; c]; c];
        for p in paths {
            let (Some(a), Some(b)) = (g.label(p.nodes[0]), g.label(*p.nodes.last().unwrap()))
            else {
                continue;
            };
            sums[b][a] += p.score;
            counts[b][a] += 1;
        }
        let values = (0..c)
            .map(|i| {
                (0..c)
                    .map(|j| {
                        (counts[i][j] >= min_count.max(1)).then(|| sums[i][j] / counts[i][j] as f64)
                    })
                    .collect()
            })
            .collect();
        Self {
            names: class_names(g),
            values,
            counts,
        }
    }

    /// Entry-wise mean over several matrices; a cell is missing only if missing everywhere.
    pub fn mean(mats: &[RelevanceMatrix]) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero matrices".into()))?;
        let c = first.values.len();
        let mut out = first.clone();
        for i in 0..c {
            for j in 0..c {
                let present: Vec<f64> = mats.iter().filter_map(|m| m.values[i][j]).collect();
                out.values[i][j] = (!present.is_empty())
                    .then(|| present.iter().sum::<f64>() / present.len() as f64);
                out.counts[i][j] = mats.iter().map(|m| m.counts[i][j]).sum();
            }
        }
        Ok(out)
    }

    /// Per row: whether the diagonal exceeds the mean of the row's present off-diagonal entries.
    /// `None` when the diagonal or every off-diagonal entry is missing.
    pub fn diagonal_dominance(&self) -> Vec<Option<bool>> {
        let c = self.values.len();
        (0..c)
            .map(|i| {
                let diag = self.values[i][i]?;
                let off: Vec<f64> = (0..c)
                    .filter(|&j| j != i)
                    .filter_map(|j| self.values[i][j])
                    .collect();
                (!off.is_empty()).then(|| diag > off.iter().sum::<f64>() / off.len() as f64)
            })
            .collect()
    }

    /// Square CSV; missing cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("end\\start");
        for n in &self.names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (i, row) in self.values.iter().enumerate() {
            out.push_str(&self.names[i]);
            for v in row {
                match v {
                    Some(v) => {
                        let _ = write!(out, ",{v:?}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn class_names(g: &Graph) -> Vec<String> {
    match g.class_names() {
        Some(n) => n.to_vec(),
        None => (0..g.num_classes()).map(|c| format!("class{c}")).collect(),
    }
}

pub fn category_relevance<T: Scalar>(
    g: &Graph,
    model: &Model<T>,
    opts: &PathSampling,
    min_count: usize,
) -> Result<RelevanceMatrix> {
    Ok(RelevanceMatrix::from_paths(
        g,
        &score_paths(g, model, opts)?,
        min_count,
    ))
}

/// Mean path weight per value of some path property.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrelationSeries {
    pub points: Vec<SeriesPoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPoint {
    pub x: usize,
    pub mean_weight: f64,
    pub count: usize,
}

impl CorrelationSeries {
    pub fn bucket(items: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut acc: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
        for (x, w) in items {
            let e = acc.entry(x).or_insert((0.0, 0));
            e.0 += w;
            e.1 += 1;
        }
        let points = acc
            .into_iter()
            .map(|(x, (s, n))| SeriesPoint {
                x,
                mean_weight: s / n as f64,
                count: n,
            })
            .collect();
        Self { points }
    }

    pub fn to_csv(&self, x_name: &str) -> String {
        let mut out = format!("{x_name},mean_weight,count\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{:?},{}", p.x, p.mean_weight, p.count);
        }
        out
    }
}

/// Mean sub-path score by number of nodes.
pub fn weight_vs_length<T: Scalar>(
    g: &Graph,
    model: &Model<T>,
    opts: &PathSampling,
) -> Result<CorrelationSeries> {
    let paths = score_paths(g, model, opts)?;
    Ok(CorrelationSeries::bucket(
        paths.iter().map(|p| (p.nodes.len(), p.score)),
    ))
}

/// Number of distinct categories among the labelled nodes of a path.
pub fn diversity(g: &Graph, nodes: &[usize]) -> usize {
    nodes
        .iter()
        .filter_map(|&i| g.label(i))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Mean score of `fixed_length`-node paths by category diversity.
pub fn weight_vs_diversity<T: Scalar>(
    g: &Graph,
    model: &Model<T>,
    opts: &PathSampling,
    fixed_length: usize,
) -> Result<CorrelationSeries> {
    if opts.walk_length < fixed_length {
        return Err(Error::InvalidArgument(format!(
            "walk length {} is shorter than the fixed path length {fixed_length}",
            opts.walk_length
        )));
    }
    let opts = PathSampling {
        window: fixed_length,
        ..opts.clone()
    };
    let paths = score_paths(g, model, &opts)?;
    Ok(CorrelationSeries::bucket(
        paths
            .iter()
            .filter(|p| p.nodes.len() == fixed_length)
            .map(|p| (diversity(g, &p.nodes), p.score)),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapPoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub gap: f64,
}

/// Validation minus training cross-entropy per epoch.
pub fn generalization_gap(history: &[EpochRecord]) -> Vec<GapPoint> {
    history
        .iter()
        .map(|r| GapPoint {
            epoch: r.epoch,
            train_loss: r.train_ce,
            val_loss: r.val_ce,
            gap: r.val_ce - r.train_ce,
        })
        .collect()
}

pub fn gap_csv(series: &[(&str, Vec<GapPoint>)]) -> String {
    let mut out = String::from("model,epoch,train_loss,val_loss,gap\n");
    for (name, points) in series {
        for p in points {
            let _ = writeln!(
                out,
                "{name},{},{:?},{:?},{:?}",
                p.epoch, p.train_loss, p.val_loss, p.gap
            );
        }
    }
    out
}

/// Short hex digest of a config's JSON form.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let digest = Sha256::digest(cfg.to_json().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Outcome of one retraining run in a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub variant: String,
    pub parameter: String,
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
    pub val_acc: f64,
    pub test_acc: f64,
    pub epochs: usize,
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out =
        String::from("variant,parameter,value,seed,config_hash,val_acc,test_acc,epochs\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{:?},{},{},{:?},{:?},{}",
            p.variant, p.parameter, p.value, p.seed, p.config_hash, p.val_acc, p.test_acc, p.epochs
        );
    }
    out
}

/// Mean test accuracy per `(variant, value)`, in first-seen order.
pub fn sweep_means(points: &[SweepPoint]) -> Vec<(String, f64, f64)> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for p in points {
        if !keys.iter().any(|(v, x)| *v == p.variant && *x == p.value) {
            keys.push((p.variant.clone(), p.value));
        }
    }
    keys.into_iter()
        .map(|(v, x)| {
            let accs: Vec<f64> = points
                .iter()
                .filter(|p| p.variant == v && p.value == x)
                .map(|p| p.test_acc)
                .collect();
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            (v, x, mean)
        })
        .collect()
}

fn run_point<T: Scalar>(
    g: &Graph,
    cfg: &TrainConfig,
    variant: &str,
    parameter: &str,
    value: f64,
    on_point: &mut dyn FnMut(&SweepPoint),
) -> Result<SweepPoint> {
    let r = fit::<T>(g, cfg)?;
    let p = SweepPoint {
        variant: variant.to_owned(),
        parameter: parameter.to_owned(),
        value,
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        val_acc: r.best_val,
        test_acc: r.test_acc,
        epochs: r.history.len(),
    };
    on_point(&p);
    Ok(p)
}

/// Named configurations a sweep compares, e.g. the full model and an ablation.
pub type Variants<'a> = &'a [(&'a str, TrainConfig)];

/// Retrains on graphs with `rate * |E|` fake edges added.
pub fn robustness_sweep<T: Scalar>(
    g: &Graph,
    variants: Variants,
    rates: &[f64],
    seeds: &[u64],
    on_point: &mut dyn FnMut(&SweepPoint),
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &rate in rates {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "perturbation rate {rate} outside [0, 1]"
            )));
        }
        for &seed in seeds {
            let perturb_seed = stream(seed, &[purpose::ANALYSIS, rate.to_bits()]).next_u64();
            let perturbed = perturb_edges(g, rate, perturb_seed)?;
            for (name, base) in variants {
                let cfg = TrainConfig {
                    seed,
                    ..base.clone()
                };
                out.push(run_point::<T>(
                    &perturbed, &cfg, name, "rate", rate, on_point,
                )?);
            }
        }
    }
    Ok(out)
}

/// Retrains at paired depth settings `(hops, window)`.
pub fn oversmoothing_sweep<T: Scalar>(
    g: &Graph,
    variants: Variants,
    depths: &[(usize, usize)],
    seeds: &[u64],
    on_point: &mut dyn FnMut(&SweepPoint),
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &(hops, window) in depths {
        for &seed in seeds {
            for (name, base) in variants {
                let cfg = TrainConfig {
                    seed,
                    hops,
                    window,
                    walk_length: base.walk_length.max(window),
                    ..base.clone()
                };
                out.push(run_point::<T>(
                    g,
                    &cfg,
                    name,
                    "hops",
                    hops as f64,
                    on_point,
                )?);
            }
        }
    }
    Ok(out)
}

/// Retrains at each embedding dimension.
pub fn dimension_sweep<T: Scalar>(
    g: &Graph,
    variants: Variants,
    dims: &[usize],
    seeds: &[u64],
    on_point: &mut dyn FnMut(&SweepPoint),
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &d in dims {
        if d == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        for &seed in seeds {
            for (name, base) in variants {
                let cfg = TrainConfig {
                    seed,
                    embed_dim: d,
                    ..base.clone()
                };
                out.push(run_point::<T>(
                    g,
                    &cfg,
                    name,
                    "embed_dim",
                    d as f64,
                    on_point,
                )?);
            }
        }
    }
    Ok(out)
}
