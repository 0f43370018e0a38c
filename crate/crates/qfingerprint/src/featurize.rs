//! N-gram symbolization of label sequences and binary feature vectors.
//!
//! A label sequence becomes a set of n-gram symbols; the union over a corpus
//! in first-appearance order is the vocabulary that fixes the feature-vector
//! dimensionality. A question's vector holds 1 at the index of each of its
//! in-vocabulary symbols and 0 elsewhere.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::parse::LabelSequence;

/// Joins the labels of an n-gram into one symbol. Labels containing this
/// character are rejected by the tree parser.
pub const SYMBOL_DELIMITER: char = '·';

/// Weight given to a present symbol (indicator variant).
pub const TAU: f64 = 1.0;

/// An n-gram of parse-node labels, stored as the delimiter-joined text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Symbol {
    text: String,
    n: usize,
}

impl Symbol {
    pub fn from_labels(labels: &[String]) -> Self {
        Symbol {
            text: labels.join(&SYMBOL_DELIMITER.to_string()),
            n: labels.len(),
        }
    }

    /// Rebuild from the joined text form (used when loading vocabulary files).
    pub fn from_text(text: &str) -> Self {
        Symbol {
            text: text.to_string(),
            n: text.split(SYMBOL_DELIMITER).count(),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn gram_len(&self) -> usize {
        self.n
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// One windowing rule: gram length, window stride, and start offset.
/// The default corpus rules are `(3, 1)` and `(4, 1)`; the skip variants
/// use `stride = 2` with `offset` 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GramSpec {
    pub n: usize,
    pub stride: usize,
    #[serde(default)]
    pub offset: usize,
}

impl GramSpec {
    pub fn new(n: usize, stride: usize) -> Self {
        GramSpec {
            n,
            stride,
            offset: 0,
        }
    }
}

/// Trigrams and 4-grams with full overlap.
pub fn default_specs() -> Vec<GramSpec> {
    vec![GramSpec::new(3, 1), GramSpec::new(4, 1)]
}

/// Sliding windows `[i, i+n)` for `i = 0, stride, 2*stride, ...` while
/// `i + n <= |seq|`. Empty when the sequence is shorter than `n`.
pub fn ngrams(seq: &LabelSequence, n: usize, stride: usize) -> Vec<Symbol> {
    ngrams_spec(
        seq,
        &GramSpec {
            n,
            stride,
            offset: 0,
        },
    )
}

pub fn ngrams_spec(seq: &LabelSequence, spec: &GramSpec) -> Vec<Symbol> {
    assert!(spec.n >= 1 && spec.stride >= 1, "n and stride must be >= 1");
    let labels = &seq.labels;
    let mut out = Vec::new();
    let mut i = spec.offset;
    while i + spec.n <= labels.len() {
        out.push(Symbol::from_labels(&labels[i..i + spec.n]));
        i += spec.stride;
    }
    out
}

/// Union of n-grams over all specs, deduplicated, first-appearance order.
pub fn symbolize(seq: &LabelSequence, specs: &[GramSpec]) -> Vec<Symbol> {
    assert!(!specs.is_empty(), "specs must be non-empty");
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for spec in specs {
        for sym in ngrams_spec(seq, spec) {
            if seen.insert(sym.clone(), ()).is_none() {
                out.push(sym);
            }
        }
    }
    out
}

/// Ordered set of unique symbols; order is first appearance over the corpus
/// iteration order, and defines the feature-vector index of each symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVocabulary {
    symbols: Vec<Symbol>,
    index: HashMap<Symbol, usize>,
}

impl SymbolVocabulary {
    fn from_symbols(symbols: Vec<Symbol>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        SymbolVocabulary { symbols, index }
    }

    pub fn dim(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &Symbol) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol_at(&self, idx: usize) -> &Symbol {
        &self.symbols[idx]
    }

    /// Hex SHA-256 over the newline-joined symbol list; identifies the
    /// vocabulary in feature-matrix headers and manifests.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.symbols {
            hasher.update(s.text().as_bytes());
            hasher.update(b"\n");
        }
        hex_string(&hasher.finalize())
    }

    /// One symbol per line, in index order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(s.text());
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let symbols: Vec<Symbol> = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(Symbol::from_text)
            .collect();
        if symbols.is_empty() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "vocabulary file has no symbols".into(),
            });
        }
        Ok(Self::from_symbols(symbols))
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Union in first-appearance order over per-question symbol lists.
pub fn build_vocabulary<'a, I>(symbol_sets: I) -> Result<SymbolVocabulary>
where
    I: IntoIterator<Item = &'a [Symbol]>,
{
    let mut seen: HashMap<Symbol, usize> = HashMap::new();
    let mut symbols = Vec::new();
    for set in symbol_sets {
        for sym in set {
            if !seen.contains_key(sym) {
                seen.insert(sym.clone(), symbols.len());
                symbols.push(sym.clone());
            }
        }
    }
    if symbols.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    Ok(SymbolVocabulary { index: seen, symbols })
}

/// A question's weight vector; entries are 0 or [`TAU`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub weights: Vec<f64>,
}

impl FeatureVector {
    pub fn zeros(d: usize) -> Self {
        FeatureVector {
            weights: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Indices with weight `TAU` (the set A of the similarity function).
    pub fn active_indices(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w == TAU)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| *w == 0.0)
    }
}

/// Indicator vector over the vocabulary. Out-of-vocabulary symbols are
/// dropped; their count is returned alongside the vector.
pub fn vectorize(symbols: &[Symbol], vocab: &SymbolVocabulary) -> (FeatureVector, usize) {
    let mut v = FeatureVector::zeros(vocab.dim());
    let mut oov = 0;
    for sym in symbols {
        match vocab.index_of(sym) {
            Some(idx) => v.weights[idx] = TAU,
            None => oov += 1,
        }
    }
    (v, oov)
}

const MATRIX_MAGIC: &[u8; 8] = b"QFPFMTRX";
const MATRIX_VERSION: u32 = 1;

/// All corpus feature vectors against one vocabulary, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    d: usize,
    vocab_hash: String,
    rows: Vec<FeatureVector>,
}

impl FeatureMatrix {
    pub fn new(d: usize, vocab_hash: String, rows: Vec<FeatureVector>) -> Result<Self> {
        for row in &rows {
            if row.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.dim(),
                });
            }
        }
        Ok(FeatureMatrix { d, vocab_hash, rows })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &FeatureVector {
        &self.rows[i]
    }

    /// Header (d, n_rows, vocabulary hash) then row-major binary indicators,
    /// one byte per entry.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        use crate::persist::{push_u64, write_container};
        let path = path.as_ref();
        let hash_bytes = self.vocab_hash.as_bytes();
        let mut payload = Vec::with_capacity(24 + hash_bytes.len() + self.d * self.rows.len());
        push_u64(&mut payload, self.d as u64);
        push_u64(&mut payload, self.rows.len() as u64);
        push_u64(&mut payload, hash_bytes.len() as u64);
        payload.extend_from_slice(hash_bytes);
        for row in &self.rows {
            for w in &row.weights {
                payload.push(if *w == TAU { 1 } else { 0 });
            }
        }
        write_container(path, MATRIX_MAGIC, MATRIX_VERSION, &payload)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        use crate::persist::{read_container, Reader};
        let path = path.as_ref();
        let payload = read_container(path, MATRIX_MAGIC, MATRIX_VERSION)?;
        let mut r = Reader::new(&payload, path);
        let d = r.u64()? as usize;
        let n_rows = r.u64()? as usize;
        let hash_len = r.u64()? as usize;
        let vocab_hash = String::from_utf8(r.bytes(hash_len)?.to_vec()).map_err(|_| {
            Error::Format {
                path: path.to_path_buf(),
                reason: "vocab hash is not UTF-8".into(),
            }
        })?;
        let mut rows = Vec::with_capacity(n_rows);
        for _ in 0..n_rows {
            let raw = r.bytes(d)?;
            rows.push(FeatureVector {
                weights: raw.iter().map(|b| if *b == 1 { TAU } else { 0.0 }).collect(),
            });
        }
        r.finish()?;
        FeatureMatrix::new(d, vocab_hash, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(labels: &[&str]) -> LabelSequence {
        LabelSequence::new(labels.iter().map(|s| s.to_string()).collect())
    }

    fn texts(symbols: &[Symbol]) -> Vec<String> {
        symbols.iter().map(|s| s.text().to_string()).collect()
    }

    #[test]
    fn trigrams_with_stride_one() {
        let s = seq(&["A", "B", "C", "D"]);
        assert_eq!(texts(&ngrams(&s, 3, 1)), vec!["A·B·C", "B·C·D"]);
    }

    #[test]
    fn short_sequence_yields_nothing() {
        let s = seq(&["A", "B"]);
        assert!(ngrams(&s, 3, 1).is_empty());
    }

    #[test]
    fn four_grams() {
        let s = seq(&["A", "B", "C", "D", "E"]);
        assert_eq!(texts(&ngrams(&s, 4, 1)), vec!["A·B·C·D", "B·C·D·E"]);
    }

    #[test]
    fn stride_and_offset_variant() {
        let s = seq(&["A", "B", "C", "D", "E", "F"]);
        let even = ngrams_spec(
            &s,
            &GramSpec {
                n: 2,
                stride: 2,
                offset: 0,
            },
        );
        assert_eq!(texts(&even), vec!["A·B", "C·D", "E·F"]);
        let odd = ngrams_spec(
            &s,
            &GramSpec {
                n: 2,
                stride: 2,
                offset: 1,
            },
        );
        assert_eq!(texts(&odd), vec!["B·C", "D·E"]);
    }

    #[test]
    fn ngram_count_formula() {
        // count == max(0, floor((len - n) / stride) + 1), brute-force checked.
        for len in 0..12usize {
            let labels: Vec<String> = (0..len).map(|i| format!("L{i}")).collect();
            let s = LabelSequence::new(labels);
            for n in 1..6usize {
                for stride in 1..4usize {
                    let got = ngrams(&s, n, stride).len();
                    let expected = if len >= n { (len - n) / stride + 1 } else { 0 };
                    assert_eq!(got, expected, "len={len} n={n} stride={stride}");
                }
            }
        }
    }

    #[test]
    fn symbolize_unions_and_dedups() {
        let s = seq(&["A", "B", "C", "D"]);
        let syms = symbolize(&s, &default_specs());
        assert_eq!(texts(&syms), vec!["A·B·C", "B·C·D", "A·B·C·D"]);
    }

    #[test]
    fn symbolize_empty_when_too_short() {
        let s = seq(&["A"]);
        assert!(symbolize(&s, &[GramSpec::new(3, 1)]).is_empty());
    }

    #[test]
    fn symbolize_dedups_repeats() {
        let s = seq(&["A", "B", "A", "B", "A"]);
        let syms = symbolize(&s, &[GramSpec::new(3, 1)]);
        assert_eq!(texts(&syms), vec!["A·B·A", "B·A·B"]);
    }

    #[test]
    fn vocabulary_first_appearance_order() {
        let a = symbolize(&seq(&["a", "b"]), &[GramSpec::new(1, 1)]);
        let b = symbolize(&seq(&["b", "c"]), &[GramSpec::new(1, 1)]);
        let vocab = build_vocabulary([a.as_slice(), b.as_slice()]).unwrap();
        assert_eq!(
            texts(vocab.symbols()),
            vec!["a".to_string(), "b".to_string(), "c".to_string()]
        );
        assert_eq!(vocab.dim(), 3);
        assert_eq!(vocab.index_of(&Symbol::from_text("c")), Some(2));
    }

    #[test]
    fn vocabulary_single_set() {
        let a = symbolize(&seq(&["a"]), &[GramSpec::new(1, 1)]);
        let vocab = build_vocabulary([a.as_slice()]).unwrap();
        assert_eq!(vocab.dim(), 1);
    }

    #[test]
    fn vocabulary_all_empty_errors() {
        let empty: Vec<Symbol> = Vec::new();
        assert!(matches!(
            build_vocabulary([empty.as_slice()]),
            Err(Error::EmptyVocabulary)
        ));
    }

    #[test]
    fn vectorize_index_lookup() {
        let syms: Vec<Symbol> = ["a", "b", "c"].iter().map(|s| Symbol::from_text(s)).collect();
        let vocab = build_vocabulary([syms.as_slice()]).unwrap();

        let (v, oov) = vectorize(
            &[Symbol::from_text("c"), Symbol::from_text("a")],
            &vocab,
        );
        assert_eq!(v.weights, vec![1.0, 0.0, 1.0]);
        assert_eq!(oov, 0);

        let (v, oov) = vectorize(&[], &vocab);
        assert_eq!(v.weights, vec![0.0, 0.0, 0.0]);
        assert_eq!(oov, 0);
        assert!(v.is_zero());

        let (v, oov) = vectorize(
            &[Symbol::from_text("a"), Symbol::from_text("z")],
            &vocab,
        );
        assert_eq!(v.weights, vec![1.0, 0.0, 0.0]);
        assert_eq!(oov, 1);
    }

    #[test]
    fn vectorize_idempotent_in_multiplicity() {
        let syms: Vec<Symbol> = ["a", "b"].iter().map(|s| Symbol::from_text(s)).collect();
        let vocab = build_vocabulary([syms.as_slice()]).unwrap();
        let once = vectorize(&[Symbol::from_text("a")], &vocab);
        let thrice = vectorize(
            &[
                Symbol::from_text("a"),
                Symbol::from_text("a"),
                Symbol::from_text("a"),
            ],
            &vocab,
        );
        assert_eq!(once.0, thrice.0);
    }

    #[test]
    fn reordered_corpus_names_same_features() {
        // Permuting the corpus permutes D, but looking the active indices
        // back up by name yields the same symbol set.
        let q1 = symbolize(&seq(&["a", "b", "c"]), &[GramSpec::new(2, 1)]);
        let q2 = symbolize(&seq(&["c", "a"]), &[GramSpec::new(2, 1)]);

        let v_fwd = build_vocabulary([q1.as_slice(), q2.as_slice()]).unwrap();
        let v_rev = build_vocabulary([q2.as_slice(), q1.as_slice()]).unwrap();
        assert_ne!(texts(v_fwd.symbols()), texts(v_rev.symbols()));

        let names = |vocab: &SymbolVocabulary, syms: &[Symbol]| -> Vec<String> {
            let (vec, _) = vectorize(syms, vocab);
            let mut out: Vec<String> = vec
                .active_indices()
                .iter()
                .map(|&i| vocab.symbol_at(i).text().to_string())
                .collect();
            out.sort();
            out
        };
        assert_eq!(names(&v_fwd, &q1), names(&v_rev, &q1));
        assert_eq!(names(&v_fwd, &q2), names(&v_rev, &q2));
    }

    #[test]
    fn vocabulary_save_load_round_trip(){
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let syms = symbolize(&seq(&["A", "B", "C", "D"]), &default_specs());
        let vocab = build_vocabulary([syms.as_slice()]).unwrap();
        vocab.save(&path).unwrap();
        let loaded = SymbolVocabulary::load(&path).unwrap();
        assert_eq!(loaded, vocab);
        assert_eq!(loaded.content_hash(), vocab.content_hash());
    }

    #[test]
    fn feature_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.bin");
        let rows = vec![
            FeatureVector {
                weights: vec![1.0, 0.0, 1.0],
            },
            FeatureVector {
                weights: vec![0.0, 1.0, 0.0],
            },
        ];
        let m = FeatureMatrix::new(3, "abc123".into(), rows).unwrap();
        m.save(&path).unwrap();
        assert_eq!(FeatureMatrix::load(&path).unwrap(), m);
    }

    #[test]
    fn feature_matrix_rejects_ragged_rows() {
        let rows = vec![
            FeatureVector {
                weights: vec![1.0, 0.0],
            },
            FeatureVector {
                weights: vec![1.0],
            },
        ];
        assert!(FeatureMatrix::new(2, "h".into(), rows).is_err());
    }
}
