//! Fully-connected-layer embeddings and k-NN classification over a support set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{hidden_activations, NetworkParams, HIDDEN};
use crate::pairs::{Direction, VariablePair};
use crate::raster::{rasterize, RasterImage};

/// Which training data produced the network body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "CE")]
    CauseEffect,
    #[serde(rename = "MNIST")]
    Mnist,
}

impl Source {
    pub fn tag(self) -> &'static str {
        match self {
            Source::CauseEffect => "CE",
            Source::Mnist => "MNIST",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SupportSize {
    /// Every labeled training pair.
    #[serde(rename = "all")]
    All,
    /// The nine instruction exemplars.
    #[serde(rename = "9")]
    Nine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodConfig {
    pub source: Source,
    pub support: SupportSize,
    pub k: usize,
}

impl MethodConfig {
    pub const fn new(source: Source, support: SupportSize) -> Self {
        MethodConfig { source, support, k: 1 }
    }

    /// CE-all, CE-9, MNIST-all, MNIST-9 with k = 1.
    pub const ALL: [MethodConfig; 4] = [
        MethodConfig::new(Source::CauseEffect, SupportSize::All),
        MethodConfig::new(Source::CauseEffect, SupportSize::Nine),
        MethodConfig::new(Source::Mnist, SupportSize::All),
        MethodConfig::new(Source::Mnist, SupportSize::Nine),
    ];

    pub fn with_k(self, k: usize) -> Self {
        MethodConfig { k, ..self }
    }

    pub fn name(&self) -> String {
        let size = match self.support {
            SupportSize::All => "all",
            SupportSize::Nine => "9",
        };
        format!("{}-{size}", self.source.tag())
    }
}

impl fmt::Display for MethodConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for MethodConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodConfig::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method {s:?} (expected CE-all, CE-9, MNIST-all or MNIST-9)"
                ))
            })
    }
}

/// Post-ReLU activations of the 128-unit layer for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub pair_id: u64,
    pub label: Option<Direction>,
    pub source: Source,
    pub vector: Vec<f64>,
}

pub fn extract_embedding(params: &NetworkParams, source: Source, image: &RasterImage) -> Result<Embedding> {
    let mut v = hidden_activations(params, &[image.pixels()])?;
    Ok(Embedding {
        pair_id: image.source_id(),
        label: None,
        source,
        vector: v.pop().expect("one image in, one embedding out"),
    })
}

/// Rasterizes and embeds every pair, keeping ids and labels.
pub fn embed_pairs(params: &NetworkParams, source: Source, pairs: &[VariablePair]) -> Result<Vec<Embedding>> {
    let images = pairs.iter().map(rasterize).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = images.iter().map(RasterImage::pixels).collect();
    let vectors = hidden_activations(params, &refs)?;
    Ok(pairs
        .iter()
        .zip(vectors)
        .map(|(p, vector)| Embedding {
            pair_id: p.id(),
            label: p.label(),
            source,
            vector,
        })
        .collect())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority label among the `k` nearest labeled support embeddings.
///
/// Neighbors are ranked by (distance, label priority, pair id) with priority
/// forward > backward > no-causality; a tied vote goes to the
/// highest-priority tied label. The result does not depend on support order.
pub fn knn_classify(query: &[f64], support: &[Embedding], k: usize) -> Result<Direction> {
    if support.is_empty() {
        return Err(Error::invalid("k-NN support set is empty"));
    }
    if k == 0 || k > support.len() {
        return Err(Error::invalid(format!("k = {k} with {} support items", support.len())));
    }
    let mut ranked = support
        .iter()
        .map(|e| {
            if e.vector.len() != query.len() {
                return Err(Error::shape(format!(
                    "support item {} has dimension {}, query has {}",
                    e.pair_id,
                    e.vector.len(),
                    query.len()
                )));
            }
            let label = e
                .label
                .ok_or_else(|| Error::invalid(format!("support item {} is unlabeled", e.pair_id)))?;
            Ok((squared_distance(query, &e.vector), label.class_index(), e.pair_id))
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut votes = [0usize; 3];
    for &(_, class, _) in &ranked[..k] {
        votes[class] += 1;
    }
    let best = *votes.iter().max().expect("three classes");
    let class = votes.iter().position(|&v| v == best).expect("a maximum exists");
    Ok(Direction::from_class_index(class).expect("valid class index"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub k: usize,
    pub item_ids: Vec<u64>,
    pub predictions: Vec<Direction>,
    /// 1 where the prediction matches the truth, else 0.
    pub correctness: Vec<u8>,
    pub accuracy: f64,
}

impl MethodResult {
    pub fn from_predictions(
        config: &MethodConfig,
        item_ids: Vec<u64>,
        predictions: Vec<Direction>,
        truth: &[Direction],
    ) -> Result<Self> {
        if predictions.len() != truth.len() || item_ids.len() != truth.len() {
            return Err(Error::shape("predictions, ids and truth must align"));
        }
        if truth.is_empty() {
            return Err(Error::invalid("no test items"));
        }
        let correctness: Vec<u8> = predictions.iter().zip(truth).map(|(p, t)| u8::from(p == t)).collect();
        let accuracy = correctness.iter().map(|&c| f64::from(c)).sum::<f64>() / correctness.len() as f64;
        Ok(MethodResult {
            method: config.name(),
            k: config.k,
            item_ids,
            predictions,
            correctness,
            accuracy,
        })
    }
}

/// Classifies every test embedding against `support`.
pub fn evaluate_embeddings(config: &MethodConfig, support: &[Embedding], test: &[Embedding]) -> Result<MethodResult> {
    let truth = test
        .iter()
        .map(|e| {
            e.label
                .ok_or_else(|| Error::invalid(format!("test item {} is unlabeled", e.pair_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let predictions = test
        .iter()
        .map(|e| knn_classify(&e.vector, support, config.k))
        .collect::<Result<Vec<_>>>()?;
    MethodResult::from_predictions(config, test.iter().map(|e| e.pair_id).collect(), predictions, &truth)
}

/// The two trained network bodies; either may be absent.
#[derive(Debug, Clone, Copy, Default)]
pub struct Networks<'a> {
    pub cause_effect: Option<&'a NetworkParams>,
    pub mnist: Option<&'a NetworkParams>,
}

impl<'a> Networks<'a> {
    pub fn for_source(&self, source: Source) -> Result<&'a NetworkParams> {
        match source {
            Source::CauseEffect => self.cause_effect,
            Source::Mnist => self.mnist,
        }
        .ok_or_else(|| Error::NotFound(format!("no {}-trained network", source.tag())))
    }
}

/// Embeds support and test pairs with the configured network and scores k-NN.
pub fn evaluate_method(
    config: &MethodConfig,
    networks: &Networks<'_>,
    train: &[VariablePair],
    exemplars: &[VariablePair],
    test: &[VariablePair],
) -> Result<MethodResult> {
    let params = networks.for_source(config.source)?;
    let support_pairs = match config.support {
        SupportSize::All => train,
        SupportSize::Nine => {
            if exemplars.len() != 9 {
                return Err(Error::invalid(format!("expected 9 exemplars, got {}", exemplars.len())));
            }
            exemplars
        }
    };
    let support = embed_pairs(params, config.source, support_pairs)?;
    let test = embed_pairs(params, config.source, test)?;
    evaluate_embeddings(config, &support, &test)
}

fn label_field(label: Option<Direction>) -> String {
    label.map_or_else(|| "?".to_string(), |d| d.value().to_string())
}

/// CSV with header `pair_id,label,v0,...,v127`; unlabeled rows use `?`.
pub fn embeddings_to_csv(embeddings: &[Embedding]) -> String {
    let mut out = String::from("pair_id,label");
    for i in 0..HIDDEN {
        out.push_str(&format!(",v{i}"));
    }
    out.push('\n');
    for e in embeddings {
        out.push_str(&format!("{},{}", e.pair_id, label_field(e.label)));
        for v in &e.vector {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn embeddings_from_csv(text: &str, source: Source) -> Result<Vec<Embedding>> {
    let mut lines = text.lines().enumerate();
    let header_ok = lines.next().is_some_and(|(_, h)| h.starts_with("pair_id,label"));
    if !header_ok {
        return Err(Error::Parse {
            line: 1,
            message: "expected header pair_id,label,v0,...".into(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let mut fields = line.split(',');
        let pair_id = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| err("bad pair id".into()))?;
        let label = match fields.next().ok_or_else(|| err("missing label".into()))? {
            "?" => None,
            f => Some(f.parse::<Direction>().map_err(|_| err(format!("bad label {f:?}")))?),
        };
        let vector = fields
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("bad value {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if vector.is_empty() {
            return Err(err("no embedding values".into()));
        }
        out.push(Embedding {
            pair_id,
            label,
            source,
            vector,
        });
    }
    Ok(out)
}
