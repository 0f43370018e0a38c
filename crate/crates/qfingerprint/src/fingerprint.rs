//! Per-cluster fingerprint systems: similarity scoring, training, and
//! thresholded detection.
//!
//! A fingerprint system owns a cluster-local vocabulary and an auto-encoder
//! trained to reconstruct the cluster's feature vectors. Detection scores a
//! question by the Jaccard similarity between its active indices and the
//! equally-many top-ranked indices of the reconstruction.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{AutoencoderModel, TrainConfig};
use crate::corpus::QuestionRecord;
use crate::error::{Error, Result};
use crate::featurize::{
    build_vocabulary, hex_string, symbolize, vectorize, FeatureVector, GramSpec, Symbol,
    SymbolVocabulary, TAU,
};
use crate::parse::{bfs_labels, parse_bracketed};

/// Default detection threshold on the similarity score.
pub const DEFAULT_THETA: f64 = 0.9;

/// A trained pattern memory for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintSystem {
    pub cluster_id: usize,
    pub vocab: SymbolVocabulary,
    pub model: AutoencoderModel,
    pub threshold: f64,
    pub specs: Vec<GramSpec>,
}

/// Outcome of scoring one question against a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub id: String,
    pub sim: f64,
    pub detected: bool,
    pub oov_count: usize,
}

/// Jaccard similarity between the active indices of `x` and the indices of
/// the equally-many largest entries of `y`; ties in the ranking break toward
/// the lowest index. Returns 0 when `x` has no active entries.
pub fn sim(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let active: Vec<usize> = x
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == TAU)
        .map(|(i, _)| i)
        .collect();
    if active.is_empty() {
        return Ok(0.0);
    }
    let top = largest_indices(y, active.len());
    let mut in_top = vec![false; y.len()];
    for &i in &top {
        in_top[i] = true;
    }
    let intersection = active.iter().filter(|&&i| in_top[i]).count();
    let union = active.len() + top.len() - intersection;
    Ok(intersection as f64 / union as f64)
}

/// Indices of the `n` largest entries, lowest index first among ties.
fn largest_indices(y: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Symbols of a question's parse: parse the bracketed string, traverse
/// breadth-first (terminals excluded), and build the n-gram symbol set.
pub fn question_symbols(record: &QuestionRecord, specs: &[GramSpec]) -> Result<Vec<Symbol>> {
    if record.parse.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "record `{}` has no parse attached",
            record.id
        )));
    }
    let tree = parse_bracketed(&record.parse)?;
    let seq = bfs_labels(&tree, false);
    Ok(symbolize(&seq, specs))
}

/// Train a fingerprint system for one cluster: build the cluster-local
/// vocabulary from exactly these questions, vectorize, and train an
/// auto-encoder with the default tapered architecture. Questions that yield
/// no symbols are skipped; it is an error if none remain.
pub fn train_fingerprint(
    cluster_id: usize,
    questions: &[QuestionRecord],
    specs: &[GramSpec],
    cfg: &TrainConfig,
    init_seed: u64,
    threshold: f64,
) -> Result<FingerprintSystem> {
    if questions.is_empty() {
        return Err(Error::Unfeaturizable { cluster_id });
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let mut symbol_sets = Vec::with_capacity(questions.len());
    for q in questions {
        let syms = question_symbols(q, specs)?;
        if !syms.is_empty() {
            symbol_sets.push(syms);
        }
    }
    if symbol_sets.is_empty() {
        return Err(Error::Unfeaturizable { cluster_id });
    }
    let vocab = build_vocabulary(symbol_sets.iter().map(Vec::as_slice))?;
    let data: Vec<FeatureVector> = symbol_sets
        .iter()
        .map(|syms| vectorize(syms, &vocab).0)
        .collect();
    let mut model = AutoencoderModel::with_default_architecture(vocab.dim(), init_seed)?;
    model.train(&data, cfg)?;
    Ok(FingerprintSystem {
        cluster_id,
        vocab,
        model,
        threshold,
        specs: specs.to_vec(),
    })
}

impl FingerprintSystem {
    /// Feature vector of a question against this system's vocabulary, plus
    /// the count of dropped out-of-vocabulary symbols.
    pub fn featurize(&self, record: &QuestionRecord) -> Result<(FeatureVector, usize)> {
        let syms = question_symbols(record, &self.specs)?;
        Ok(vectorize(&syms, &self.vocab))
    }

    /// Similarity of a question to this memory, without thresholding.
    pub fn score(&self, record: &QuestionRecord) -> Result<(f64, usize)> {
        let (x, oov) = self.featurize(record)?;
        if x.is_zero() {
            return Ok((0.0, oov));
        }
        let y = self.model.forward(&x.weights)?;
        Ok((sim(&x.weights, &y)?, oov))
    }
}

/// Score one question and compare against the system threshold.
pub fn detect(system: &FingerprintSystem, record: &QuestionRecord) -> Result<DetectionResult> {
    let (sim, oov_count) = system.score(record)?;
    Ok(DetectionResult {
        id: record.id.clone(),
        sim,
        detected: sim >= system.threshold,
        oov_count,
    })
}

/// Order-preserving batch detection; also returns the detected subset.
pub fn detect_batch(
    system: &FingerprintSystem,
    records: &[QuestionRecord],
) -> Result<(Vec<DetectionResult>, Vec<QuestionRecord>)> {
    let mut results = Vec::with_capacity(records.len());
    let mut detected = Vec::new();
    for record in records {
        let r = detect(system, record)?;
        if r.detected {
            detected.push(record.clone());
        }
        results.push(r);
    }
    Ok((results, detected))
}

#[derive(Serialize, Deserialize)]
struct BundleSidecar {
    cluster_id: usize,
    threshold: f64,
    specs: Vec<GramSpec>,
    input_dim: usize,
}

impl FingerprintSystem {
    /// Write the bundle: `<base>.model.bin` (+ its hyperparameter sidecar),
    /// `<base>.vocab.txt`, and `<base>.json` carrying the threshold.
    pub fn save(&self, base: impl AsRef<Path>) -> Result<()> {
        let base = base.as_ref();
        self.model.save(bundle_model_path(base))?;
        self.vocab.save(bundle_vocab_path(base))?;
        let sidecar = BundleSidecar {
            cluster_id: self.cluster_id,
            threshold: self.threshold,
            specs: self.specs.clone(),
            input_dim: self.model.input_dim(),
        };
        let path = bundle_sidecar_path(base);
        fs::write(
            &path,
            serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(&path, e))?,
        )
        .map_err(|e| Error::io(&path, e))
    }

    pub fn load(base: impl AsRef<Path>) -> Result<Self> {
        let base = base.as_ref();
        let path = bundle_sidecar_path(base);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: BundleSidecar =
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let model = AutoencoderModel::load(bundle_model_path(base))?;
        let vocab = SymbolVocabulary::load(bundle_vocab_path(base))?;
        if model.input_dim() != vocab.dim() {
            return Err(Error::DimensionMismatch {
                expected: vocab.dim(),
                got: model.input_dim(),
            });
        }
        Ok(FingerprintSystem {
            cluster_id: sidecar.cluster_id,
            vocab,
            model,
            threshold: sidecar.threshold,
            specs: sidecar.specs,
        })
    }

    /// SHA-256 over the sorted ids of a record set; used by refinement
    /// history to distinguish equal-size but different detected sets.
    pub fn set_hash(records: &[QuestionRecord]) -> String {
        let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        let mut hasher = Sha256::new();
        for id in ids {
            hasher.update(id.as_bytes());
            hasher.update(b"\n");
        }
        hex_string(&hasher.finalize())
    }
}

fn bundle_model_path(base: &Path) -> PathBuf {
    append_ext(base, ".model.bin")
}

fn bundle_vocab_path(base: &Path) -> PathBuf {
    append_ext(base, ".vocab.txt")
}

fn bundle_sidecar_path(base: &Path) -> PathBuf {
    append_ext(base, ".json")
}

fn append_ext(base: &Path, ext: &str) -> PathBuf {
    let mut os = base.as_os_str().to_os_string();
    os.push(ext);
    PathBuf::from(os)
}
