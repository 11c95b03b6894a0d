//! Neutral on-disk dataset format, one directory per dataset:
//!
//! | file            | content                                     |
//! |-----------------|---------------------------------------------|
//! | `manifest.json` | `n`, `d`, `C` and record counts             |
//! | `edges.tsv`     | `u<TAB>v`, 0-based node ids                 |
//! | `features.tsv`  | `node<TAB>col<TAB>value` sparse triplets    |
//! | `labels.tsv`    | `node<TAB>class`                            |
//! | `masks.tsv`     | `node<TAB>train`, `val` or `test`           |
//!
//! UTF-8 with LF line endings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Graph, Split};
use crate::error::{Error, Result};
use crate::matrix::Csr;

pub const FILES: [&str; 5] = [
    "manifest.json",
    "edges.tsv",
    "features.tsv",
    "labels.tsv",
    "masks.tsv",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "C")]
    pub classes: usize,
    /// Number of lines in `edges.tsv`.
    pub edges: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_entries: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

fn parse_field<V: FromStr>(path: &Path, line_no: usize, field: &str) -> Result<V> {
    field
        .trim_end_matches('\r')
        .parse()
        .map_err(|_| Error::dataset(path, format!("line {line_no}: cannot parse `{field}`")))
}

/// Tab-separated records with exactly `width` fields; blank lines are skipped.
fn records<'a>(
    path: &'a Path,
    text: &'a str,
    width: usize,
) -> impl Iterator<Item = Result<(usize, Vec<&'a str>)>> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(move |(i, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != width {
                return Err(Error::dataset(
                    path,
                    format!(
                        "line {}: expected {width} tab-separated fields, found {}",
                        i + 1,
                        fields.len()
                    ),
                ));
            }
            Ok((i + 1, fields))
        })
}

fn check_count(path: &Path, what: &str, declared: Option<usize>, actual: usize) -> Result<()> {
    match declared {
        Some(d) if d != actual => Err(Error::dataset(
            path,
            format!("manifest declares {d} {what}, files contain {actual}"),
        )),
        _ => Ok(()),
    }
}

/// Loads a dataset directory in the neutral format.
pub fn load_graph(dir: &Path) -> Result<Graph> {
    if !dir.is_dir() {
        return Err(Error::dataset(dir, "not a directory"));
    }
    let mut texts = Vec::with_capacity(FILES.len());
    let mut hasher = Sha256::new();
    for file in FILES {
        let path = dir.join(file);
        let bytes =
            fs::read(&path).map_err(|e| Error::dataset(&path, format!("cannot read: {e}")))?;
        hasher.update(file.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
        let text =
            String::from_utf8(bytes).map_err(|_| Error::dataset(&path, "not valid UTF-8"))?;
        texts.push(text);
    }
    let checksum = hasher.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });

    let manifest_path = dir.join(FILES[0]);
    let manifest: Manifest = serde_json::from_str(&texts[0])
        .map_err(|e| Error::dataset(&manifest_path, format!("invalid manifest: {e}")))?;
    let n = manifest.n;
    let in_range = |path: &Path, line: usize, id: usize, bound: usize, what: &str| -> Result<()> {
        if id >= bound {
            return Err(Error::dataset(
                path,
                format!("line {line}: {what} {id} out of range (< {bound})"),
            ));
        }
        Ok(())
    };

    let edges_path = dir.join(FILES[1]);
    let mut raw_edges = Vec::new();
    for rec in records(&edges_path, &texts[1], 2) {
        let (line, f) = rec?;
        let u: usize = parse_field(&edges_path, line, f[0])?;
        let v: usize = parse_field(&edges_path, line, f[1])?;
        in_range(&edges_path, line, u, n, "node")?;
        in_range(&edges_path, line, v, n, "node")?;
        raw_edges.push((u, v));
    }
    check_count(&edges_path, "edges", Some(manifest.edges), raw_edges.len())?;

    let feat_path = dir.join(FILES[2]);
    let mut triplets = Vec::new();
    for rec in records(&feat_path, &texts[2], 3) {
        let (line, f) = rec?;
        let node: usize = parse_field(&feat_path, line, f[0])?;
        let col: usize = parse_field(&feat_path, line, f[1])?;
        let value: f64 = parse_field(&feat_path, line, f[2])?;
        in_range(&feat_path, line, node, n, "node")?;
        in_range(&feat_path, line, col, manifest.d, "feature column")?;
        triplets.push((node, col, value));
    }
    check_count(
        &feat_path,
        "feature entries",
        manifest.feature_entries,
        triplets.len(),
    )?;
    let features = Csr::from_triplets(n, manifest.d, &triplets)?;

    let labels_path = dir.join(FILES[3]);
    let mut labels = vec![None; n];
    let mut labeled = 0;
    for rec in records(&labels_path, &texts[3], 2) {
        let (line, f) = rec?;
        let node: usize = parse_field(&labels_path, line, f[0])?;
        let class: usize = parse_field(&labels_path, line, f[1])?;
        in_range(&labels_path, line, node, n, "node")?;
        in_range(&labels_path, line, class, manifest.classes, "class id")?;
        if labels[node].replace(class).is_some() {
            return Err(Error::dataset(
                &labels_path,
                format!("line {line}: node {node} labeled twice"),
            ));
        }
        labeled += 1;
    }
    check_count(&labels_path, "labels", manifest.labeled, labeled)?;

    let masks_path = dir.join(FILES[4]);
    let mut splits = Vec::new();
    for rec in records(&masks_path, &texts[4], 2) {
        let (line, f) = rec?;
        let node: usize = parse_field(&masks_path, line, f[0])?;
        in_range(&masks_path, line, node, n, "node")?;
        let split = Split::parse(f[1].trim_end_matches('\r')).ok_or_else(|| {
            Error::dataset(
                &masks_path,
                format!("line {line}: unknown split `{}`", f[1]),
            )
        })?;
        splits.push((node, split));
    }
    for (split, declared) in [
        (Split::Train, manifest.train),
        (Split::Val, manifest.val),
        (Split::Test, manifest.test),
    ] {
        let actual = splits.iter().filter(|(_, s)| *s == split).count();
        check_count(
            &masks_path,
            &format!("{} nodes", split.as_str()),
            declared,
            actual,
        )?;
    }

    let name = if manifest.name.is_empty() {
        dir.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    } else {
        manifest.name.clone()
    };
    let graph = Graph::new(
        name,
        n,
        manifest.classes,
        raw_edges,
        features,
        labels,
        &splits,
    )
    .map_err(|e| Error::dataset(dir, e.to_string()))?;
    let graph = match manifest.class_names {
        Some(names) => graph
            .with_class_names(names)
            .map_err(|e| Error::dataset(&manifest_path, e.to_string()))?,
        None => graph,
    };
    Ok(graph.with_checksum(checksum))
}

pub fn manifest_for(g: &Graph) -> Manifest {
    Manifest {
        name: g.name().to_owned(),
        n: g.num_nodes(),
        d: g.num_features(),
        classes: g.num_classes(),
        edges: g.raw_edge_count(),
        feature_entries: Some(g.features().nnz()),
        labeled: Some(g.labels().iter().filter(|l| l.is_some()).count()),
        train: Some(g.train().len()),
        val: Some(g.val().len()),
        test: Some(g.test().len()),
        class_names: g.class_names().map(<[String]>::to_vec),
    }
}

/// Writes `g` in the neutral format. Output is deterministic.
pub fn save_graph(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = serde_json::to_string_pretty(&manifest_for(g))?;
    manifest.push('\n');
    fs::write(dir.join("manifest.json"), manifest)?;

    let mut edges = String::new();
    for &(u, v) in g.raw_edges() {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    fs::write(dir.join("edges.tsv"), edges)?;

    let mut feats = String::new();
    for r in 0..g.num_nodes() {
        for (c, v) in g.features().row_entries(r) {
            let _ = writeln!(feats, "{r}\t{c}\t{v}");
        }
    }
    fs::write(dir.join("features.tsv"), feats)?;

    let mut labels = String::new();
    for (i, l) in g.labels().iter().enumerate() {
        if let Some(c) = l {
            let _ = writeln!(labels, "{i}\t{c}");
        }
    }
    fs::write(dir.join("labels.tsv"), labels)?;

    let mut masks = String::new();
    for (i, s) in g.split_pairs() {
        let _ = writeln!(masks, "{i}\t{}", s.as_str());
    }
    fs::write(dir.join("masks.tsv"), masks)?;
    Ok(())
}
