//! Question ingestion and the canonical JSONL corpus format.
//!
//! One record per line, UTF-8, fields `{id, text, parse, topic}`. Parse
//! strings arrive pre-computed from any external constituency parser via a
//! parse map (JSONL of `{id, parse}`).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parse::has_balanced_parens;

/// One question: id, raw text, bracketed parse string (may be empty until
/// parses are attached), optional topic tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub parse: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

/// Ordered set of question records with a provenance string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<QuestionRecord>,
    pub source: String,
}

impl Corpus {
    pub fn new(records: Vec<QuestionRecord>, source: impl Into<String>) -> Result<Self> {
        let corpus = Corpus {
            records,
            source: source.into(),
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Unique non-empty ids; balanced parentheses on any non-empty parse.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for rec in &self.records {
            if rec.id.is_empty() {
                return Err(Error::InvalidArgument("record with empty id".into()));
            }
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::DuplicateId { id: rec.id.clone() });
            }
            if !rec.parse.is_empty() && !has_balanced_parens(&rec.parse) {
                return Err(Error::UnbalancedParse { id: rec.id.clone() });
            }
        }
        Ok(())
    }

    /// One JSON object per line, in record order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).map_err(|e| Error::json(path, e))?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(serde_json::from_str(line).map_err(|e| Error::json(path, e))?);
        }
        if records.is_empty() {
            return Err(Error::EmptyCorpus {
                context: format!("loaded from {}", path.display()),
            });
        }
        Corpus::new(records, path.display().to_string())
    }
}

#[derive(Deserialize)]
struct SquadDoc {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
}

/// Extract questions from a SQuAD-v1.1-shaped JSON document, one record per
/// question in document order, topic set to the article title and parse left
/// empty. `topic_filter`, when given, keeps only the listed titles.
pub fn extract_squad_questions(
    squad_json: &str,
    topic_filter: Option<&[String]>,
) -> Result<Corpus> {
    let doc: SquadDoc = serde_json::from_str(squad_json).map_err(|e| Error::Ingest {
        path: "data.paragraphs.qas.question".into(),
        reason: e.to_string(),
    })?;
    let keep: Option<HashSet<&str>> =
        topic_filter.map(|ts| ts.iter().map(String::as_str).collect());
    let mut records = Vec::new();
    for article in &doc.data {
        if let Some(keep) = &keep {
            if !keep.contains(article.title.as_str()) {
                continue;
            }
        }
        for para in &article.paragraphs {
            for qa in &para.qas {
                records.push(QuestionRecord {
                    id: qa.id.clone(),
                    text: qa.question.clone(),
                    parse: String::new(),
                    topic: Some(article.title.clone()),
                });
            }
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus {
            context: "no questions extracted".into(),
        });
    }
    Corpus::new(records, "squad")
}

/// Populate each record's parse from an id -> parse-string map. Every corpus
/// id must be present; parses must have balanced parentheses.
pub fn attach_parses(corpus: &Corpus, parses: &HashMap<String, String>) -> Result<Corpus> {
    let missing: Vec<String> = corpus
        .records
        .iter()
        .filter(|r| !parses.contains_key(&r.id))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingParses { ids: missing });
    }
    let mut records = Vec::with_capacity(corpus.len());
    for rec in &corpus.records {
        let parse = parses[&rec.id].clone();
        if !has_balanced_parens(&parse) {
            return Err(Error::UnbalancedParse { id: rec.id.clone() });
        }
        records.push(QuestionRecord {
            parse,
            ..rec.clone()
        });
    }
    Corpus::new(records, corpus.source.clone())
}

#[derive(Serialize, Deserialize)]
struct ParseLine {
    id: String,
    parse: String,
}

/// Read a parse map from JSONL of `{id, parse}`.
pub fn load_parse_map(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let entry: ParseLine = serde_json::from_str(line).map_err(|e| Error::json(path, e))?;
        map.insert(entry.id, entry.parse);
    }
    Ok(map)
}

/// Write a parse map as JSONL of `{id, parse}` in the given order.
pub fn save_parse_map(path: impl AsRef<Path>, entries: &[(String, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (id, parse) in entries {
        let line = ParseLine {
            id: id.clone(),
            parse: parse.clone(),
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| Error::json(path, e))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
