use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Fraction of `nodes` whose argmax prediction (lowest index on ties) equals the label.
pub fn accuracy<T: Scalar>(z: &Matrix<T>, g: &Graph, nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument("accuracy over an empty mask".into()));
    }
    let mut hits = 0usize;
    for &i in nodes {
        let label = g.label(i).ok_or_else(|| {
            Error::InvalidArgument(format!("node {i} in an evaluation mask has no label"))
        })?;
        if z.row_argmax(i) == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / nodes.len() as f64)
}

/// Mean of `-ln z[i, y_i]` over `nodes`.
pub fn cross_entropy<T: Scalar>(z: &Matrix<T>, g: &Graph, nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument(
            "cross-entropy over an empty mask".into(),
        ));
    }
    let mut total = 0.0;
    for &i in nodes {
        let label = g.label(i).ok_or_else(|| {
            Error::InvalidArgument(format!("node {i} in an evaluation mask has no label"))
        })?;
        total -= z.get(i, label).to_f64_lossy().max(1e-12).ln();
    }
    Ok(total / nodes.len() as f64)
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub sup: f64,
    pub con: f64,
    pub tri: f64,
    pub train_ce: f64,
    pub val_ce: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,loss,sup,con,tri,train_ce,val_ce,train_acc,val_acc,test_acc";

/// CSV text with shortest round-trip float formatting, so equal values give equal bytes.
pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.epoch,
            r.loss,
            r.sup,
            r.con,
            r.tri,
            r.train_ce,
            r.val_ce,
            r.train_acc,
            r.val_acc,
            r.test_acc
        );
    }
    out
}

pub fn write_metrics_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(history))?;
    Ok(())
}
