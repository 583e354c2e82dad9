//! First-order Markov sequence labeling: exact Viterbi decoding, beam search
//! filtered by learned constraint systems, margin-based training, and the
//! score-matrix file format for decoding externally scored sentences.

use crate::corpus::{is_punctuation, LabelVocab, TaggedSequence};
use crate::error::{Error, Result};
use crate::extraction::{is_feasible, ConstraintSystem};
use crate::features::{global_vector, window_vector, FeatureTemplate, TemplateScope};
use crate::rectifier::parse_floats;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

/// Per-sentence emission scores: one row per token, one column per label.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    emissions: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(emissions: Vec<Vec<f64>>) -> Result<Self> {
        if emissions.is_empty() {
            return Err(Error::EmptyInput("score matrix"));
        }
        let width = emissions[0].len();
        if width == 0 {
            return Err(Error::EmptyInput("score matrix row"));
        }
        for row in &emissions {
            if row.len() != width {
                return Err(Error::DimensionMismatch { expected: width, actual: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("emission scores must be finite".into()));
            }
        }
        Ok(ScoreMatrix { emissions })
    }

    pub fn len(&self) -> usize {
        self.emissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emissions.is_empty()
    }

    pub fn label_count(&self) -> usize {
        self.emissions[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.emissions
    }
}

/// Sentence emissions loaded from a score file, with the label header and an
/// optional shared transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub labels: Vec<String>,
    pub transitions: Option<Vec<Vec<f64>>>,
    pub sentences: Vec<ScoreMatrix>,
}

/// Token-level feature weights: `weights[f][l]` is the contribution of
/// feature `f` to label `l`.
#[derive(Debug, Clone, PartialEq)]
struct FeatureWeights {
    names: Vec<String>,
    ids: HashMap<String, usize>,
    weights: Vec<Vec<f64>>,
}

impl FeatureWeights {
    fn new() -> Self {
        FeatureWeights { names: Vec::new(), ids: HashMap::new(), weights: Vec::new() }
    }

    fn intern(&mut self, name: &str, label_count: usize) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        self.weights.push(vec![0.0; label_count]);
        id
    }

    fn lookup(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }
}

/// Surface features of one token: identity, lowercased form, 3-character
/// prefix and suffix, and digit/punctuation indicators.
fn token_features(token: &str) -> Vec<String> {
    let mut feats = Vec::with_capacity(6);
    feats.push(format!("w={token}"));
    feats.push(format!("lw={}", token.to_lowercase()));
    let chars: Vec<char> = token.chars().collect();
    let k = chars.len().min(3);
    feats.push(format!("p3={}", chars[..k].iter().collect::<String>()));
    feats.push(format!("s3={}", chars[chars.len() - k..].iter().collect::<String>()));
    if chars.iter().any(|c| c.is_ascii_digit()) {
        feats.push("has_digit".to_string());
    }
    if is_punctuation(token) {
        feats.push("is_punct".to_string());
    }
    feats
}

/// Line-oriented reader for the text formats in this module.
struct LineCursor<'a> {
    lines: Vec<&'a str>,
    at: usize,
}

impl<'a> LineCursor<'a> {
    fn new(text: &'a str) -> Self {
        LineCursor { lines: text.lines().collect(), at: 0 }
    }

    /// 1-based number of the most recently consumed line.
    fn here(&self) -> usize {
        self.at
    }

    fn next_line(&mut self, what: &str) -> Result<&'a str> {
        let line = self
            .lines
            .get(self.at)
            .copied()
            .ok_or_else(|| Error::parse(self.at, format!("missing {what}")))?;
        self.at += 1;
        Ok(line)
    }

    /// Consume a `key: value` line and return the value part.
    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line(&format!("{key:?} line"))?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(':'))
            .ok_or_else(|| Error::parse(self.at, format!("expected {key:?} line, got {line:?}")))
    }

    fn count_field(&mut self, key: &str) -> Result<usize> {
        let value = self.field(key)?;
        value
            .trim()
            .parse()
            .map_err(|_| Error::parse(self.here(), format!("{key} must be an integer")))
    }

    /// Consume one line of whitespace-separated floats of the given width.
    fn float_row(&mut self, width: usize, what: &str) -> Result<Vec<f64>> {
        let line = self.next_line(what)?;
        let row = parse_floats(line, self.here())?;
        if row.len() != width {
            return Err(Error::parse(
                self.here(),
                format!("expected {width} values, got {}", row.len()),
            ));
        }
        Ok(row)
    }

    fn labels_field(&mut self) -> Result<Vec<String>> {
        let labels: Vec<String> = self
            .field("labels")?
            .split('\t')
            .filter(|s| !s.is_empty())
            .map(|s| s.to_string())
            .collect();
        if labels.is_empty() {
            return Err(Error::parse(self.here(), "empty label header"));
        }
        Ok(labels)
    }

    fn expect_version(&mut self) -> Result<()> {
        if self.field("format_version")?.trim() != "1" {
            return Err(Error::parse(self.here(), "unsupported format version"));
        }
        Ok(())
    }
}

fn push_float_row(out: &mut String, row: &[f64], sep: char) {
    let mut first = true;
    for v in row {
        if !first || sep == '\t' {
            out.push(sep);
        }
        let _ = write!(out, "{v:.16e}");
        first = false;
    }
    out.push('\n');
}

/// A first-order Markov tagger: start scores, label-pair transition scores,
/// and (for models trained here) token-feature emission weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    labels: Vec<String>,
    label_ids: HashMap<String, usize>,
    transitions: Vec<Vec<f64>>,
    start_scores: Vec<f64>,
    emission: Option<FeatureWeights>,
}

impl SequenceModel {
    /// Model with explicit transition scores and no emission features, for
    /// decoding externally scored sentences.
    pub fn from_parts(labels: Vec<String>, transitions: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("label set"));
        }
        let l = labels.len();
        let transitions = match transitions {
            Some(t) => {
                if t.len() != l {
                    return Err(Error::DimensionMismatch { expected: l, actual: t.len() });
                }
                for row in &t {
                    if row.len() != l {
                        return Err(Error::DimensionMismatch { expected: l, actual: row.len() });
                    }
                }
                t
            }
            None => vec![vec![0.0; l]; l],
        };
        let mut label_ids = HashMap::new();
        for (i, label) in labels.iter().enumerate() {
            if label_ids.insert(label.clone(), i).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate label {label:?}")));
            }
        }
        Ok(SequenceModel {
            start_scores: vec![0.0; l],
            label_ids,
            labels,
            transitions,
            emission: None,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    pub fn start_scores(&self) -> &[f64] {
        &self.start_scores
    }

    /// Number of learned emission features (0 for matrix-only models).
    pub fn feature_count(&self) -> usize {
        self.emission.as_ref().map(|e| e.names.len()).unwrap_or(0)
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.label_ids
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Emission scores for a tokenized sentence from the model's feature
    /// weights; unseen features contribute nothing.
    pub fn emission_matrix(&self, tokens: &[String]) -> Result<ScoreMatrix> {
        let emission = self.emission.as_ref().ok_or_else(|| {
            Error::InvalidParameter("model has no emission features; supply a score matrix".into())
        })?;
        if tokens.is_empty() {
            return Err(Error::EmptyInput("sentence"));
        }
        let l = self.label_count();
        let rows = tokens
            .iter()
            .map(|token| {
                let mut row = vec![0.0; l];
                for feat in token_features(token) {
                    if let Some(f) = emission.lookup(&feat) {
                        for (r, w) in row.iter_mut().zip(&emission.weights[f]) {
                            *r += w;
                        }
                    }
                }
                row
            })
            .collect();
        ScoreMatrix::new(rows)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("format_version: 1\n");
        out.push_str("labels:");
        for label in &self.labels {
            let _ = write!(out, "\t{label}");
        }
        out.push('\n');
        out.push_str("start:");
        for v in &self.start_scores {
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
        out.push_str("transitions:\n");
        for row in &self.transitions {
            push_float_row(&mut out, row, ' ');
        }
        let empty = FeatureWeights::new();
        let emission = self.emission.as_ref().unwrap_or(&empty);
        let _ = writeln!(out, "features: {}", emission.names.len());
        for (name, row) in emission.names.iter().zip(&emission.weights) {
            let _ = write!(out, "{name}");
            push_float_row(&mut out, row, '\t');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cur = LineCursor::new(text);
        cur.expect_version()?;
        let labels = cur.labels_field()?;
        let l = labels.len();
        let start_line = cur.field("start")?.to_string();
        let start_scores = parse_floats(&start_line, cur.here())?;
        if start_scores.len() != l {
            return Err(Error::parse(
                cur.here(),
                format!("expected {l} start scores, got {}", start_scores.len()),
            ));
        }
        if !cur.field("transitions")?.trim().is_empty() {
            return Err(Error::parse(cur.here(), "transitions header takes no value"));
        }
        let mut transitions = Vec::with_capacity(l);
        for _ in 0..l {
            transitions.push(cur.float_row(l, "transition row")?);
        }
        let count = cur.count_field("features")?;
        let mut emission = FeatureWeights::new();
        for _ in 0..count {
            let line = cur.next_line("feature row")?;
            let mut parts = line.split('\t');
            let name = parts
                .next()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::parse(cur.here(), "feature row must start with a name"))?;
            let row: Vec<f64> = parts
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| Error::parse(cur.here(), format!("invalid number {tok:?}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != l {
                return Err(Error::parse(
                    cur.here(),
                    format!("expected {l} weights, got {}", row.len()),
                ));
            }
            if emission.lookup(name).is_some() {
                return Err(Error::parse(cur.here(), format!("duplicate feature {name:?}")));
            }
            let id = emission.intern(name, l);
            emission.weights[id] = row;
        }
        let mut model = SequenceModel::from_parts(labels, Some(transitions))?;
        model.start_scores = start_scores;
        if count > 0 {
            model.emission = Some(emission);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SequenceModel::from_text(&text)
    }
}

/// What a decoder sees of one sentence: tokens/POS when available, and
/// optionally a precomputed emission matrix that replaces model features.
#[derive(Debug, Clone, Copy)]
pub struct DecodeInput<'a> {
    pub tokens: &'a [String],
    pub pos_tags: &'a [String],
    pub scores: Option<&'a ScoreMatrix>,
}

impl<'a> DecodeInput<'a> {
    pub fn from_sequence(seq: &'a TaggedSequence) -> Self {
        DecodeInput { tokens: &seq.tokens, pos_tags: &seq.pos_tags, scores: None }
    }

    pub fn from_scores(scores: &'a ScoreMatrix) -> Self {
        DecodeInput { tokens: &[], pos_tags: &[], scores: Some(scores) }
    }

    pub fn with_scores(seq: &'a TaggedSequence, scores: &'a ScoreMatrix) -> Self {
        DecodeInput { tokens: &seq.tokens, pos_tags: &seq.pos_tags, scores: Some(scores) }
    }

    fn len(&self) -> usize {
        self.scores.map(|s| s.len()).unwrap_or(self.tokens.len())
    }
}

/// Resolve the emission matrix of an input, validating sizes against the model.
fn resolve_emissions(model: &SequenceModel, input: &DecodeInput) -> Result<Vec<Vec<f64>>> {
    let rows = match input.scores {
        Some(scores) => {
            if scores.label_count() != model.label_count() {
                return Err(Error::DimensionMismatch {
                    expected: model.label_count(),
                    actual: scores.label_count(),
                });
            }
            if !input.tokens.is_empty() && input.tokens.len() != scores.len() {
                return Err(Error::LengthMismatch { left: input.tokens.len(), right: scores.len() });
            }
            scores.rows().to_vec()
        }
        None => model.emission_matrix(input.tokens)?.rows().to_vec(),
    };
    if rows.is_empty() {
        return Err(Error::EmptyInput("sentence"));
    }
    Ok(rows)
}

/// Exact max-score path through an emission matrix. Ties pick the lower
/// label index at every step.
fn viterbi_on_matrix(emissions: &[Vec<f64>], transitions: &[Vec<f64>], start: &[f64]) -> Vec<usize> {
    let t_len = emissions.len();
    let l = start.len();
    let mut score = vec![vec![f64::NEG_INFINITY; l]; t_len];
    let mut back = vec![vec![0usize; l]; t_len];
    for li in 0..l {
        score[0][li] = start[li] + emissions[0][li];
    }
    for t in 1..t_len {
        for li in 0..l {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0usize;
            for prev in 0..l {
                let s = score[t - 1][prev] + transitions[prev][li];
                if s > best {
                    best = s;
                    arg = prev;
                }
            }
            score[t][li] = best + emissions[t][li];
            back[t][li] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0usize;
    for li in 0..l {
        if score[t_len - 1][li] > best {
            best = score[t_len - 1][li];
            arg = li;
        }
    }
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = arg;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    path
}

/// Exact decode: the label sequence with the maximum total score.
pub fn viterbi(model: &SequenceModel, input: &DecodeInput) -> Result<Vec<String>> {
    let emissions = resolve_emissions(model, input)?;
    let path = viterbi_on_matrix(&emissions, &model.transitions, &model.start_scores);
    Ok(path.into_iter().map(|l| model.labels[l].clone()).collect())
}

/// Total model score of a given label sequence on an input.
pub fn sequence_score(model: &SequenceModel, input: &DecodeInput, labels: &[String]) -> Result<f64> {
    let emissions = resolve_emissions(model, input)?;
    if labels.len() != emissions.len() {
        return Err(Error::LengthMismatch { left: labels.len(), right: emissions.len() });
    }
    let path: Vec<usize> = labels.iter().map(|l| model.label_index(l)).collect::<Result<_>>()?;
    Ok(path_score(&emissions, &model.transitions, &model.start_scores, &path))
}

fn path_score(emissions: &[Vec<f64>], transitions: &[Vec<f64>], start: &[f64], path: &[usize]) -> f64 {
    let mut total = start[path[0]] + emissions[0][path[0]];
    for t in 1..path.len() {
        total += transitions[path[t - 1]][path[t]] + emissions[t][path[t]];
    }
    total
}

/// One partial hypothesis in the beam.
#[derive(Debug, Clone)]
pub struct BeamState {
    /// Label indices assigned so far.
    pub prefix: Vec<usize>,
    /// Cached total score of the prefix.
    pub score: f64,
    /// False once the state survived only through a constraint restore.
    pub alive: bool,
}

/// Beam search knobs.
#[derive(Debug, Clone)]
pub struct BeamOptions {
    pub beam_width: usize,
    /// On true: restore pruned candidates when a step loses every candidate,
    /// and fall back to the unconstrained beam when no complete sequence
    /// satisfies the systems. On false those situations are errors.
    pub fallback: bool,
    /// Keep violating candidates in the beam, ranked after satisfying ones,
    /// instead of removing them.
    pub rerank: bool,
}

/// What happened during one constrained decode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecodeLog {
    /// Steps where every candidate violated a local system and the beam was
    /// restored unfiltered.
    pub mid_restores: usize,
    /// Whether the returned sequence came from the unconstrained beam.
    pub used_fallback: bool,
}

struct LocalChecker<'a> {
    system: &'a ConstraintSystem,
    template: &'a FeatureTemplate,
    n: usize,
}

struct GlobalChecker<'a> {
    system: &'a ConstraintSystem,
    template: &'a FeatureTemplate,
}

struct Candidate {
    parent: usize,
    label: usize,
    score: f64,
    violates: bool,
}

/// Constraint-filtered beam search. Local systems are checked on each newly
/// completed window; global systems are checked once on complete sequences.
/// Equal-score candidates are kept in lexicographic prefix order.
pub fn beam_decode(
    model: &SequenceModel,
    input: &DecodeInput,
    systems: &[(ConstraintSystem, FeatureTemplate)],
    beam_width: usize,
    fallback: bool,
) -> Result<Vec<String>> {
    let vocab = LabelVocab::new(model.labels.to_vec(), Vec::new())?;
    let options = BeamOptions { beam_width, fallback, rerank: false };
    Ok(beam_decode_full(model, input, systems, &vocab, &options)?.0)
}

/// Full-control variant of [`beam_decode`]: explicit vocabulary (labels must
/// match the model; POS values are needed by POS-window systems) and options.
pub fn beam_decode_full(
    model: &SequenceModel,
    input: &DecodeInput,
    systems: &[(ConstraintSystem, FeatureTemplate)],
    vocab: &LabelVocab,
    options: &BeamOptions,
) -> Result<(Vec<String>, DecodeLog)> {
    if options.beam_width == 0 {
        return Err(Error::InvalidParameter("beam width must be at least 1".into()));
    }
    if vocab.labels() != model.labels() {
        return Err(Error::InvalidParameter(
            "vocabulary labels do not match the model's label set".into(),
        ));
    }
    let t_len = input.len();
    let emissions = resolve_emissions(model, input)?;

    // Split systems by scope and resolve the context layers they need.
    let mut locals = Vec::new();
    let mut globals = Vec::new();
    let mut needs_pos = false;
    let mut needs_punct = false;
    for (system, template) in systems {
        if matches!(template, FeatureTemplate::PairIndicator { .. }) {
            return Err(Error::InvalidParameter(
                "pair-indicator systems do not apply to sequence decoding".into(),
            ));
        }
        let dim = template.dim(vocab)?;
        if dim != system.input_dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: system.input_dim });
        }
        match template.scope() {
            TemplateScope::Local => {
                let n = template.window().expect("local templates have a window");
                needs_pos |= matches!(template, FeatureTemplate::PosWindow { .. });
                needs_punct |= matches!(template, FeatureTemplate::PunctuationWindow { .. });
                locals.push(LocalChecker { system, template, n });
            }
            TemplateScope::Global => globals.push(GlobalChecker { system, template }),
        }
    }
    let pos_idx: Vec<usize> = if needs_pos {
        if input.pos_tags.len() != t_len {
            return Err(Error::MissingPosTags);
        }
        input.pos_tags.iter().map(|p| vocab.pos_index(p)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let punct: Vec<bool> = if needs_punct {
        if input.tokens.len() != t_len {
            return Err(Error::InvalidParameter(
                "punctuation-window systems need the sentence tokens".into(),
            ));
        }
        input.tokens.iter().map(|t| is_punctuation(t)).collect()
    } else {
        Vec::new()
    };

    let l = model.label_count();
    let track_shadow = options.fallback && !(locals.is_empty() && globals.is_empty());
    let mut log = DecodeLog::default();
    let mut beam = vec![BeamState { prefix: Vec::new(), score: 0.0, alive: true }];
    let mut shadow = if track_shadow {
        vec![BeamState { prefix: Vec::new(), score: 0.0, alive: true }]
    } else {
        Vec::new()
    };

    let expand = |beam: &[BeamState], t: usize| -> Vec<Candidate> {
        let mut out = Vec::with_capacity(beam.len() * l);
        for (parent, state) in beam.iter().enumerate() {
            for label in 0..l {
                let step = if t == 0 {
                    model.start_scores[label]
                } else {
                    model.transitions[*state.prefix.last().expect("nonempty prefix")][label]
                };
                out.push(Candidate {
                    parent,
                    label,
                    score: state.score + step + emissions[t][label],
                    violates: false,
                });
            }
        }
        out
    };

    // Order: score descending, then lexicographically smaller prefix first.
    let rank = |beam: &[BeamState], a: &Candidate, b: &Candidate| -> std::cmp::Ordering {
        b.score
            .total_cmp(&a.score)
            .then_with(|| beam[a.parent].prefix.cmp(&beam[b.parent].prefix))
            .then(a.label.cmp(&b.label))
    };
    let finish =
        |beam: &[BeamState], cands: Vec<Candidate>, width: usize| -> Vec<BeamState> {
            cands
                .into_iter()
                .take(width)
                .map(|c| {
                    let parent = &beam[c.parent];
                    let mut prefix = Vec::with_capacity(parent.prefix.len() + 1);
                    prefix.extend_from_slice(&parent.prefix);
                    prefix.push(c.label);
                    BeamState { prefix, score: c.score, alive: parent.alive && !c.violates }
                })
                .collect()
        };

    let mut window_buf: Vec<usize> = Vec::new();
    for t in 0..t_len {
        let mut candidates = expand(&beam, t);
        for cand in candidates.iter_mut() {
            for check in &locals {
                if t + 1 < check.n {
                    continue;
                }
                let start = t + 1 - check.n;
                window_buf.clear();
                window_buf.extend_from_slice(&beam[cand.parent].prefix[start..]);
                window_buf.push(cand.label);
                let (pos_slice, punct_slice): (&[usize], &[bool]) = match check.template {
                    FeatureTemplate::PosWindow { .. } => (&pos_idx[start..=t], &[]),
                    FeatureTemplate::PunctuationWindow { .. } => (&[], &punct[start..=t]),
                    _ => (&[], &[]),
                };
                let vector =
                    window_vector(check.template, vocab, pos_slice, punct_slice, &window_buf)?;
                if !is_feasible(check.system, &vector)? {
                    cand.violates = true;
                    break;
                }
            }
        }
        if options.rerank {
            // Violating candidates stay, ranked after every satisfying one.
            candidates
                .sort_by(|a, b| a.violates.cmp(&b.violates).then_with(|| rank(&beam, a, b)));
            beam = finish(&beam, candidates, options.beam_width);
        } else {
            let any_ok = candidates.iter().any(|c| !c.violates);
            let mut filtered: Vec<Candidate> = if any_ok {
                candidates.into_iter().filter(|c| !c.violates).collect()
            } else if options.fallback {
                // Every candidate violates a local system: restore the step
                // unfiltered rather than losing the beam.
                log.mid_restores += 1;
                candidates
            } else {
                return Err(Error::BeamDeadEnd { position: t });
            };
            filtered.sort_by(|a, b| rank(&beam, a, b));
            beam = finish(&beam, filtered, options.beam_width);
        }
        if track_shadow {
            let mut cands = expand(&shadow, t);
            cands.sort_by(|a, b| rank(&shadow, a, b));
            shadow = finish(&shadow, cands, options.beam_width);
        }
    }

    // Completion: global systems judge full sequences only.
    let passes_globals = |prefix: &[usize]| -> Result<bool> {
        for check in &globals {
            let vector = global_vector(check.template, vocab, prefix)?;
            if !is_feasible(check.system, &vector)? {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let mut chosen: Option<&BeamState> = None;
    for state in &beam {
        if state.alive && passes_globals(&state.prefix)? {
            chosen = Some(state);
            break; // the beam is already sorted best-first
        }
    }
    let chosen = match chosen {
        Some(state) => state,
        None if options.rerank => &beam[0],
        None if options.fallback => {
            log.used_fallback = true;
            if track_shadow {
                &shadow[0]
            } else {
                &beam[0]
            }
        }
        None => return Err(Error::BeamDeadEnd { position: t_len - 1 }),
    };
    debug_assert!(
        (chosen.score
            - path_score(&emissions, &model.transitions, &model.start_scores, &chosen.prefix))
        .abs()
            < 1e-9,
        "cached beam score drifted from recomputation"
    );
    Ok((
        chosen.prefix.iter().map(|&li| model.labels[li].clone()).collect(),
        log,
    ))
}

/// Which update rule [`train_markov`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Cost-augmented margin updates with L2 regularization.
    StructuredHinge,
    /// Classic perceptron updates with parameter averaging.
    AveragedPerceptron,
}

/// Hyperparameters for [`train_markov`].
#[derive(Debug, Clone)]
pub struct MarkovTrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub seed: u64,
    /// Step size for margin updates (the perceptron always steps by 1).
    pub learning_rate: f64,
    /// L2 regularization strength for the margin trainer; 0 disables it.
    pub trade_off: f64,
}

impl Default for MarkovTrainConfig {
    fn default() -> Self {
        MarkovTrainConfig {
            mode: TrainMode::StructuredHinge,
            epochs: 20,
            seed: 0,
            learning_rate: 0.1,
            trade_off: 0.0,
        }
    }
}

struct TrainState {
    model: SequenceModel,
    /// Accumulators for perceptron averaging, in the same layout.
    acc_emission: Vec<Vec<f64>>,
    acc_transitions: Vec<Vec<f64>>,
    acc_start: Vec<f64>,
    visits: u64,
}

/// Train a Markov tagger on a labeled corpus. Deterministic in the seed.
pub fn train_markov(corpus: &[TaggedSequence], config: &MarkovTrainConfig) -> Result<SequenceModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus"));
    }
    if config.epochs == 0 {
        return Err(Error::InvalidParameter("epochs must be at least 1".into()));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidParameter("learning_rate must be positive and finite".into()));
    }
    if !(config.trade_off >= 0.0 && config.trade_off.is_finite()) {
        return Err(Error::InvalidParameter("trade_off must be nonnegative and finite".into()));
    }
    let vocab = LabelVocab::from_corpus(corpus)?;
    let l = vocab.label_count();
    let mut model = SequenceModel::from_parts(vocab.labels().to_vec(), None)?;
    let mut emission = FeatureWeights::new();
    // Intern every feature up front so the weight layout is fixed.
    for seq in corpus {
        for token in &seq.tokens {
            for feat in token_features(token) {
                emission.intern(&feat, l);
            }
        }
    }
    model.emission = Some(emission);

    let golds: Vec<Vec<usize>> = corpus
        .iter()
        .map(|seq| seq.labels.iter().map(|lab| vocab.label_index(lab)).collect::<Result<_>>())
        .collect::<Result<_>>()?;

    let feature_count = model.emission.as_ref().unwrap().names.len();
    let mut state = TrainState {
        acc_emission: vec![vec![0.0; l]; feature_count],
        acc_transitions: vec![vec![0.0; l]; l],
        acc_start: vec![0.0; l],
        visits: 0,
        model,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let step = match config.mode {
        TrainMode::StructuredHinge => config.learning_rate,
        TrainMode::AveragedPerceptron => 1.0,
    };
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &si in &order {
            let seq = &corpus[si];
            let gold = &golds[si];
            let decay = config.learning_rate * config.trade_off;
            if config.mode == TrainMode::StructuredHinge && decay > 0.0 {
                scale_weights(&mut state.model, 1.0 - decay);
            }
            let emissions = state.model.emission_matrix(&seq.tokens)?.rows().to_vec();
            let pred = match config.mode {
                TrainMode::StructuredHinge => {
                    // Cost-augmented decode: every wrong label gets +1, so the
                    // margin must exceed the Hamming distance.
                    let augmented: Vec<Vec<f64>> = emissions
                        .iter()
                        .enumerate()
                        .map(|(t, row)| {
                            row.iter()
                                .enumerate()
                                .map(|(li, v)| if li == gold[t] { *v } else { v + 1.0 })
                                .collect()
                        })
                        .collect();
                    viterbi_on_matrix(&augmented, &state.model.transitions, &state.model.start_scores)
                }
                TrainMode::AveragedPerceptron => {
                    viterbi_on_matrix(&emissions, &state.model.transitions, &state.model.start_scores)
                }
            };
            if pred != *gold {
                apply_update(&mut state.model, seq, gold, &pred, step);
            }
            if config.mode == TrainMode::AveragedPerceptron {
                accumulate(&mut state);
            }
        }
    }
    if config.mode == TrainMode::AveragedPerceptron && state.visits > 0 {
        let scale = 1.0 / state.visits as f64;
        let emission = state.model.emission.as_mut().unwrap();
        for (row, acc) in emission.weights.iter_mut().zip(&state.acc_emission) {
            for (w, a) in row.iter_mut().zip(acc) {
                *w = a * scale;
            }
        }
        for (row, acc) in state.model.transitions.iter_mut().zip(&state.acc_transitions) {
            for (w, a) in row.iter_mut().zip(acc) {
                *w = a * scale;
            }
        }
        for (w, a) in state.model.start_scores.iter_mut().zip(&state.acc_start) {
            *w = a * scale;
        }
    }
    Ok(state.model)
}

fn scale_weights(model: &mut SequenceModel, factor: f64) {
    let emission = model.emission.as_mut().expect("trained models have features");
    for row in emission.weights.iter_mut() {
        for w in row.iter_mut() {
            *w *= factor;
        }
    }
    for row in model.transitions.iter_mut() {
        for w in row.iter_mut() {
            *w *= factor;
        }
    }
    for w in model.start_scores.iter_mut() {
        *w *= factor;
    }
}

/// Move the weights by `step * (features(gold) - features(pred))`.
fn apply_update(model: &mut SequenceModel, seq: &TaggedSequence, gold: &[usize], pred: &[usize], step: f64) {
    let emission = model.emission.as_mut().expect("trained models have features");
    for (t, token) in seq.tokens.iter().enumerate() {
        if gold[t] == pred[t] {
            continue;
        }
        for feat in token_features(token) {
            let f = emission.lookup(&feat).expect("features interned up front");
            emission.weights[f][gold[t]] += step;
            emission.weights[f][pred[t]] -= step;
        }
    }
    if gold[0] != pred[0] {
        model.start_scores[gold[0]] += step;
        model.start_scores[pred[0]] -= step;
    }
    for t in 1..gold.len() {
        if (gold[t - 1], gold[t]) != (pred[t - 1], pred[t]) {
            model.transitions[gold[t - 1]][gold[t]] += step;
            model.transitions[pred[t - 1]][pred[t]] -= step;
        }
    }
}

fn accumulate(state: &mut TrainState) {
    let emission = state.model.emission.as_ref().expect("trained models have features");
    for (acc, row) in state.acc_emission.iter_mut().zip(&emission.weights) {
        for (a, w) in acc.iter_mut().zip(row) {
            *a += w;
        }
    }
    for (acc, row) in state.acc_transitions.iter_mut().zip(&state.model.transitions) {
        for (a, w) in acc.iter_mut().zip(row) {
            *a += w;
        }
    }
    for (a, w) in state.acc_start.iter_mut().zip(&state.model.start_scores) {
        *a += w;
    }
    state.visits += 1;
}

/// Fraction of tokens labeled correctly across a decoded corpus.
pub fn token_accuracy(predicted: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch { left: predicted.len(), right: gold.len() });
    }
    let mut total = 0usize;
    let mut hits = 0usize;
    for (p, g) in predicted.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch { left: p.len(), right: g.len() });
        }
        total += g.len();
        hits += p.iter().zip(g).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        return Err(Error::EmptyInput("token sequences"));
    }
    Ok(hits as f64 / total as f64)
}

/// Serialize sentence emissions in the score-file format: a `labels:` header,
/// one tab-separated row per token, a blank line between sentences, and an
/// optional trailing transition block introduced by `transitions:`.
pub fn scores_to_text(file: &ScoreFile) -> String {
    let mut out = String::new();
    out.push_str("labels:");
    for label in &file.labels {
        let _ = write!(out, "\t{label}");
    }
    out.push('\n');
    fn push_tab_row(out: &mut String, row: &[f64]) {
        let mut first = true;
        for v in row {
            if !first {
                out.push('\t');
            }
            let _ = write!(out, "{v:.16e}");
            first = false;
        }
        out.push('\n');
    }
    for (i, sentence) in file.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for row in sentence.rows() {
            push_tab_row(&mut out, row);
        }
    }
    if let Some(rows) = &file.transitions {
        out.push_str("\ntransitions:\n");
        for row in rows {
            push_tab_row(&mut out, row);
        }
    }
    out
}

fn parse_tab_floats(line: &str, lineno: usize, width: usize) -> Result<Vec<f64>> {
    let row: Vec<f64> = line
        .split('\t')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(lineno, format!("invalid number {tok:?}")))
        })
        .collect::<Result<_>>()?;
    if row.len() != width {
        return Err(Error::parse(lineno, format!("expected {width} values, got {}", row.len())));
    }
    Ok(row)
}

/// Parse the score-file format produced by [`scores_to_text`].
pub fn parse_scores(text: &str) -> Result<ScoreFile> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "missing labels header"))?;
    let labels: Vec<String> = header
        .strip_prefix("labels:")
        .ok_or_else(|| Error::parse(1, format!("expected \"labels:\" header, got {header:?}")))?
        .split('\t')
        .filter(|s| !s.is_empty())
        .map(|s| s.to_string())
        .collect();
    if labels.is_empty() {
        return Err(Error::parse(1, "empty label header"));
    }
    let l = labels.len();
    let mut sentences = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    let mut transitions: Option<Vec<Vec<f64>>> = None;
    let mut in_transitions = false;
    let mut transition_rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if transitions.is_some() && !line.trim().is_empty() {
            return Err(Error::parse(lineno, "content after the transition block"));
        }
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(ScoreMatrix::new(std::mem::take(&mut current))?);
            }
            continue;
        }
        if line.trim_end() == "transitions:" {
            if !current.is_empty() {
                sentences.push(ScoreMatrix::new(std::mem::take(&mut current))?);
            }
            if in_transitions {
                return Err(Error::parse(lineno, "duplicate transition block"));
            }
            in_transitions = true;
            continue;
        }
        let row = parse_tab_floats(line, lineno, l)?;
        if in_transitions {
            transition_rows.push(row);
            if transition_rows.len() == l {
                transitions = Some(std::mem::take(&mut transition_rows));
                in_transitions = false;
            }
        } else {
            current.push(row);
        }
    }
    if in_transitions {
        return Err(Error::parse(
            0,
            format!("transition block needs {l} rows, got {}", transition_rows.len()),
        ));
    }
    if !current.is_empty() {
        sentences.push(ScoreMatrix::new(current)?);
    }
    if sentences.is_empty() {
        return Err(Error::EmptyInput("score file sentences"));
    }
    Ok(ScoreFile { labels, transitions, sentences })
}

/// Read a score file from disk.
pub fn load_scores(path: &Path) -> Result<ScoreFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text)
}

/// Write a score file atomically.
pub fn save_scores(path: &Path, file: &ScoreFile) -> Result<()> {
    crate::write_atomic(path, &scores_to_text(file))
}
