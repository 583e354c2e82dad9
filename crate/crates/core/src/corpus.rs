//! Tagged-sequence corpora: column-format IO, label/POS vocabularies, IOB
//! chunk-label validation, and entity-relation pair records.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

/// One sentence with tokens, optional part-of-speech tags and gold labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSequence {
    pub tokens: Vec<String>,
    /// Either empty (no POS layer) or exactly one tag per token.
    pub pos_tags: Vec<String>,
    pub labels: Vec<String>,
}

impl TaggedSequence {
    /// Build a sequence, enforcing the per-token alignment of all layers.
    pub fn new(tokens: Vec<String>, pos_tags: Vec<String>, labels: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("sequence tokens"));
        }
        if labels.len() != tokens.len() {
            return Err(Error::LengthMismatch { left: tokens.len(), right: labels.len() });
        }
        if !pos_tags.is_empty() && pos_tags.len() != tokens.len() {
            return Err(Error::LengthMismatch { left: tokens.len(), right: pos_tags.len() });
        }
        Ok(TaggedSequence { tokens, pos_tags, labels })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_pos(&self) -> bool {
        !self.pos_tags.is_empty()
    }
}

/// A token counts as punctuation when it has no alphanumeric characters.
pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| !c.is_alphanumeric())
}

/// Index of the label set (and optionally the POS tag set) of a corpus, in
/// first-occurrence order so the mapping is reproducible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    labels: Vec<String>,
    pos_values: Vec<String>,
    label_ids: HashMap<String, usize>,
    pos_ids: HashMap<String, usize>,
}

impl LabelVocab {
    /// Build a vocabulary from explicit label and POS lists.
    pub fn new(labels: Vec<String>, pos_values: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("label set"));
        }
        let mut label_ids = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if label_ids.insert(l.clone(), i).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate label {l:?}")));
            }
        }
        let mut pos_ids = HashMap::new();
        for (i, p) in pos_values.iter().enumerate() {
            if pos_ids.insert(p.clone(), i).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate part-of-speech tag {p:?}")));
            }
        }
        Ok(LabelVocab { labels, pos_values, label_ids, pos_ids })
    }

    /// Collect labels and POS tags from a corpus in first-occurrence order.
    pub fn from_corpus(corpus: &[TaggedSequence]) -> Result<Self> {
        let mut labels = Vec::new();
        let mut pos_values = Vec::new();
        let mut seen_label = HashMap::new();
        let mut seen_pos = HashMap::new();
        for seq in corpus {
            for l in &seq.labels {
                if !seen_label.contains_key(l) {
                    seen_label.insert(l.clone(), labels.len());
                    labels.push(l.clone());
                }
            }
            for p in &seq.pos_tags {
                if !seen_pos.contains_key(p) {
                    seen_pos.insert(p.clone(), pos_values.len());
                    pos_values.push(p.clone());
                }
            }
        }
        if labels.is_empty() {
            return Err(Error::EmptyInput("corpus"));
        }
        Ok(LabelVocab { labels, pos_values, label_ids: seen_label, pos_ids: seen_pos })
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn pos_count(&self) -> usize {
        self.pos_values.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn pos_values(&self) -> &[String] {
        &self.pos_values
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.label_ids
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn pos_index(&self, tag: &str) -> Result<usize> {
        self.pos_ids
            .get(tag)
            .copied()
            .ok_or_else(|| Error::UnknownPosTag(tag.to_string()))
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }
}

/// Parse column-format text: one token per line with 2 (token, label) or
/// 3 (token, POS, label) whitespace-separated fields; blank lines separate
/// sentences.
pub fn parse_conll(text: &str) -> Result<Vec<TaggedSequence>> {
    let mut sequences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut pos_tags: Vec<String> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut width: Option<usize> = None;

    let mut flush = |tokens: &mut Vec<String>, pos_tags: &mut Vec<String>, labels: &mut Vec<String>| -> Result<()> {
        if !tokens.is_empty() {
            sequences.push(TaggedSequence::new(
                std::mem::take(tokens),
                std::mem::take(pos_tags),
                std::mem::take(labels),
            )?);
        }
        Ok(())
    };

    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            flush(&mut tokens, &mut pos_tags, &mut labels)?;
            width = None;
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::parse(n + 1, format!("expected {w} columns, got {}", fields.len())));
            }
            _ => {}
        }
        match fields.len() {
            2 => {
                tokens.push(fields[0].to_string());
                labels.push(fields[1].to_string());
            }
            3 => {
                tokens.push(fields[0].to_string());
                pos_tags.push(fields[1].to_string());
                labels.push(fields[2].to_string());
            }
            other => {
                return Err(Error::parse(n + 1, format!("expected 2 or 3 columns, got {other}")));
            }
        }
    }
    flush(&mut tokens, &mut pos_tags, &mut labels)?;
    if sequences.is_empty() {
        return Err(Error::EmptyInput("corpus file"));
    }
    Ok(sequences)
}

/// Render a corpus back into column format (tab-separated).
pub fn conll_to_text(corpus: &[TaggedSequence]) -> String {
    let mut out = String::new();
    for (i, seq) in corpus.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (t, token) in seq.tokens.iter().enumerate() {
            if seq.has_pos() {
                let _ = writeln!(out, "{token}\t{}\t{}", seq.pos_tags[t], seq.labels[t]);
            } else {
                let _ = writeln!(out, "{token}\t{}", seq.labels[t]);
            }
        }
    }
    out
}

/// Read a column-format corpus from disk.
pub fn read_conll(path: &Path) -> Result<Vec<TaggedSequence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text)
}

/// Write a column-format corpus atomically.
pub fn write_conll(path: &Path, corpus: &[TaggedSequence]) -> Result<()> {
    crate::write_atomic(path, &conll_to_text(corpus))
}

/// One labeled entity-relation record: an ordered entity pair, the relation
/// from source to target, and the relation seen from the target's side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErPairRecord {
    pub source: String,
    pub relation: String,
    pub target: String,
    pub reverse_relation: String,
}

/// Parse entity-relation records: one per line with 4 whitespace-separated
/// fields `source relation target reverse_relation`; `#` starts a comment.
pub fn parse_er_pairs(text: &str) -> Result<Vec<ErPairRecord>> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(n + 1, format!("expected 4 fields, got {}", fields.len())));
        }
        records.push(ErPairRecord {
            source: fields[0].to_string(),
            relation: fields[1].to_string(),
            target: fields[2].to_string(),
            reverse_relation: fields[3].to_string(),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("entity-relation records"));
    }
    Ok(records)
}

/// Read entity-relation records from disk.
pub fn read_er_pairs(path: &Path) -> Result<Vec<ErPairRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_er_pairs(&text)
}

/// A chunk label in IOB form: `O`, `B-<type>` or `I-<type>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IobTag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

/// Parse an IOB label, rejecting anything outside the three shapes.
pub fn parse_iob(label: &str) -> Result<IobTag<'_>> {
    if label == "O" {
        return Ok(IobTag::Outside);
    }
    if let Some(kind) = label.strip_prefix("B-") {
        if !kind.is_empty() {
            return Ok(IobTag::Begin(kind));
        }
    }
    if let Some(kind) = label.strip_prefix("I-") {
        if !kind.is_empty() {
            return Ok(IobTag::Inside(kind));
        }
    }
    Err(Error::InvalidIobLabel(label.to_string()))
}

/// Whether `next` may follow `prev` (`None` = sentence start): `I-X` requires
/// the previous label to be `B-X` or `I-X` of the same type.
pub fn iob_transition_ok(prev: Option<&str>, next: &str) -> Result<bool> {
    let next_tag = parse_iob(next)?;
    let prev_tag = match prev {
        Some(p) => Some(parse_iob(p)?),
        None => None,
    };
    Ok(match next_tag {
        IobTag::Outside | IobTag::Begin(_) => true,
        IobTag::Inside(kind) => matches!(
            prev_tag,
            Some(IobTag::Begin(p)) | Some(IobTag::Inside(p)) if p == kind
        ),
    })
}

/// Validate a whole label sequence against the IOB transition rules.
pub fn validate_iob(labels: &[String]) -> Result<()> {
    let mut prev: Option<&str> = None;
    for label in labels {
        if !iob_transition_ok(prev, label)? {
            return Err(Error::InvalidIobTransition {
                prev: prev.unwrap_or("<start>").to_string(),
                next: label.clone(),
            });
        }
        prev = Some(label);
    }
    Ok(())
}
