use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gnn::Fusion;
use crate::losses::LossWeights;
use crate::sampler::SamplerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

/// Every training hyperparameter, serialised as a flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Dataset directory; relative paths resolve against `CUSTOMGNN_DATA`.
    pub dataset: String,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout_mlp: f64,
    pub dropout_encoder: f64,
    pub dropout_path: f64,
    pub dropout_adjacency: f64,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub hops: usize,
    pub tradeoff: f64,
    pub perspectives: usize,
    pub batch_size: usize,
    pub walks_per_start: usize,
    pub walk_length: usize,
    pub window: usize,
    /// Weight of the unsupervised part of the loss.
    pub lambda_unsup: f64,
    pub coef_consistency: f64,
    pub coef_triplet: f64,
    pub temperature: f64,
    pub margin: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub no_reweighting: bool,
    pub no_multihop: bool,
    pub no_triplet: bool,
    pub no_multiperspective: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::cora()
    }
}

impl TrainConfig {
    pub fn cora() -> Self {
        Self {
            dataset: "cora".into(),
            learning_rate: 0.01,
            weight_decay: 5e-4,
            dropout_mlp: 0.5,
            dropout_encoder: 0.6,
            dropout_path: 0.6,
            dropout_adjacency: 0.5,
            embed_dim: 512,
            lstm_hidden: 128,
            hops: 8,
            tradeoff: 1.0,
            perspectives: 4,
            batch_size: 300,
            walks_per_start: 4,
            walk_length: 10,
            window: 10,
            lambda_unsup: 1.0,
            coef_consistency: 1.0,
            coef_triplet: 1.0,
            temperature: 0.5,
            margin: 0.1,
            n_pos: 15000,
            n_neg: 5000,
            patience: 300,
            max_epochs: 2000,
            seed: 0,
            precision: Precision::F64,
            no_reweighting: false,
            no_multihop: false,
            no_triplet: false,
            no_multiperspective: false,
        }
    }

    pub fn citeseer() -> Self {
        Self {
            dataset: "citeseer".into(),
            tradeoff: 10.0,
            window: 5,
            hops: 4,
            n_pos: 10000,
            n_neg: 10000,
            margin: 1.0,
            patience: 200,
            ..Self::cora()
        }
    }

    pub fn pubmed() -> Self {
        Self {
            dataset: "pubmed".into(),
            learning_rate: 0.1,
            dropout_mlp: 0.8,
            dropout_encoder: 0.5,
            embed_dim: 500,
            batch_size: 500,
            walk_length: 6,
            window: 5,
            hops: 5,
            n_pos: 5000,
            n_neg: 5000,
            margin: 1.0,
            temperature: 0.2,
            patience: 100,
            ..Self::cora()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "cora" => Some(Self::cora()),
            "citeseer" => Some(Self::citeseer()),
            "pubmed" => Some(Self::pubmed()),
            _ => None,
        }
    }

    pub fn keys() -> Vec<String> {
        match serde_json::to_value(Self::cora()) {
            Ok(Value::Object(m)) => m.keys().cloned().collect(),
            _ => unreachable!("config serialises to an object"),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(map) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let valid = Self::keys();
        if let Some(bad) = map.keys().find(|k| !valid.contains(k)) {
            return Err(unknown_key(bad, &valid));
        }
        let cfg: Self =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Applies a `key=value` override. The value is parsed as JSON, falling
    /// back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let Value::Object(mut map) = serde_json::to_value(&*self)? else {
            unreachable!()
        };
        if !map.contains_key(key) {
            return Err(unknown_key(key, &Self::keys()));
        }
        let value = serde_json::from_str(raw.trim())
            .unwrap_or_else(|_| Value::String(raw.trim().to_owned()));
        map.insert(key.to_owned(), value);
        let next: Self = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::Config(format!("bad value for `{key}`: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, rate) in [
            ("dropout_mlp", self.dropout_mlp),
            ("dropout_encoder", self.dropout_encoder),
            ("dropout_path", self.dropout_path),
            ("dropout_adjacency", self.dropout_adjacency),
        ] {
            if !(0.0..1.0).contains(&rate) {
                problems.push(format!("{name} must be in [0, 1)"));
            }
        }
        if !(self.learning_rate > 0.0) {
            problems.push("learning_rate must be > 0".into());
        }
        if !(self.temperature > 0.0) {
            problems.push("temperature must be > 0".into());
        }
        if !(self.margin >= 0.0) {
            problems.push("margin must be >= 0".into());
        }
        for (name, c) in [
            ("weight_decay", self.weight_decay),
            ("lambda_unsup", self.lambda_unsup),
            ("coef_consistency", self.coef_consistency),
            ("coef_triplet", self.coef_triplet),
        ] {
            if !(c >= 0.0) {
                problems.push(format!("{name} must be >= 0"));
            }
        }
        for (name, v) in [
            ("perspectives", self.perspectives),
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("batch_size", self.batch_size),
            ("walks_per_start", self.walks_per_start),
            ("max_epochs", self.max_epochs),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be >= 1"));
            }
        }
        if self.window < 2 {
            problems.push("window must be >= 2".into());
        }
        if self.walk_length < 2 {
            problems.push("walk_length must be >= 2".into());
        }
        if self.no_reweighting && self.no_multihop {
            problems.push("no_reweighting and no_multihop together leave no embedding".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Applies ablation switches for a graph of `num_nodes` nodes.
    pub fn plan(&self, num_nodes: usize) -> Result<Plan> {
        self.validate()?;
        let mut perspectives = self.perspectives;
        let mut batch_size = self.batch_size;
        let mut dropout_scale = 1.0;
        let fusion = if self.no_reweighting {
            Fusion::MultiHopOnly
        } else if self.no_multihop {
            batch_size = num_nodes.div_ceil(perspectives);
            Fusion::PathOnly
        } else {
            Fusion::Concat
        };
        if self.no_multiperspective {
            perspectives = 1;
            batch_size = num_nodes;
            dropout_scale = 0.5;
        }
        let unsup = if self.no_reweighting {
            0.0
        } else {
            self.lambda_unsup
        };
        let coef_triplet = if self.no_triplet {
            0.0
        } else {
            self.coef_triplet
        };
        let weights = LossWeights {
            unsup,
            consistency: self.coef_consistency,
            triplet: coef_triplet,
            temperature: self.temperature,
            margin: self.margin,
            n_pos: self.n_pos,
            n_neg: self.n_neg,
        };
        Ok(Plan {
            fusion,
            perspectives,
            sampler: SamplerConfig {
                batch_size: batch_size.min(num_nodes),
                walks_per_start: self.walks_per_start,
                walk_length: self.walk_length,
                window: self.window,
            },
            dropout_mlp: self.dropout_mlp * dropout_scale,
            dropout_encoder: self.dropout_encoder * dropout_scale,
            dropout_path: self.dropout_path * dropout_scale,
            dropout_adjacency: self.dropout_adjacency * dropout_scale,
            use_consistency: perspectives >= 2 && unsup * self.coef_consistency > 0.0,
            use_triplet: fusion.uses_paths()
                && unsup * coef_triplet > 0.0
                && self.n_pos + self.n_neg > 0,
            weights,
            hops: self.hops,
            tradeoff: self.tradeoff,
        })
    }
}

fn unknown_key(key: &str, valid: &[String]) -> Error {
    Error::Config(format!(
        "unknown config key `{key}`; valid keys: {}",
        valid.join(", ")
    ))
}

/// Run settings after ablation switches are applied.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub fusion: Fusion,
    pub perspectives: usize,
    pub sampler: SamplerConfig,
    pub dropout_mlp: f64,
    pub dropout_encoder: f64,
    pub dropout_path: f64,
    pub dropout_adjacency: f64,
    pub use_consistency: bool,
    pub use_triplet: bool,
    pub weights: LossWeights,
    pub hops: usize,
    pub tradeoff: f64,
}
