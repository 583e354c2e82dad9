//! Constraint feature templates: map labeled structures to the indicator
//! vectors a constraint network is trained on, and generate the invalid
//! counterparts of observed structures.

use crate::corpus::{is_punctuation, ErPairRecord, LabelVocab, TaggedSequence};
use crate::error::{Error, Result};
use crate::rectifier::LabeledFeatureExample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Fixed entity label set for entity-relation pair templates.
pub const ENTITY_LABELS: [&str; 4] = ["NoEnt", "Person", "Location", "Organization"];
/// Fixed relation label set for entity-relation pair templates.
pub const RELATION_LABELS: [&str; 6] = ["NoRel", "Kill", "LiveIn", "WorkFor", "LocatedAt", "OrgBasedIn"];

/// Whether a template produces one vector per sequence or one per window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateScope {
    Global,
    Local,
}

/// Which side of an entity-relation pair a pair template constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairRole {
    /// (source entity, outgoing relation) pairs.
    SourceRelation,
    /// (outgoing relation, target entity) pairs.
    RelationTarget,
    /// (forward relation, backward relation) pairs.
    RelationRelation,
}

/// A feature template over labeled structures.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureTemplate {
    /// One global vector: bit j says whether the label n-gram with code j
    /// occurs anywhere in the sequence.
    LabelExistence { n: usize },
    /// One global vector of per-label occurrence counts.
    LabelCounts,
    /// One local vector per window: a one-hot of the window's label n-gram.
    NgramLabels { n: usize },
    /// One local vector per window: POS one-hots for the n positions
    /// followed by label one-hots for the n positions.
    PosWindow { n: usize },
    /// One local vector per window: punctuation indicator bits for the n
    /// positions followed by label one-hots.
    PunctuationWindow { n: usize },
    /// One vector per entity-relation pair: two concatenated one-hots.
    PairIndicator { role: PairRole },
}

impl FeatureTemplate {
    pub fn scope(&self) -> TemplateScope {
        match self {
            FeatureTemplate::LabelExistence { .. } | FeatureTemplate::LabelCounts => TemplateScope::Global,
            FeatureTemplate::NgramLabels { .. }
            | FeatureTemplate::PosWindow { .. }
            | FeatureTemplate::PunctuationWindow { .. } => TemplateScope::Local,
            FeatureTemplate::PairIndicator { .. } => TemplateScope::Local,
        }
    }

    /// Window width for templates that slide over the sequence.
    pub fn window(&self) -> Option<usize> {
        match self {
            FeatureTemplate::NgramLabels { n }
            | FeatureTemplate::PosWindow { n }
            | FeatureTemplate::PunctuationWindow { n } => Some(*n),
            _ => None,
        }
    }

    fn check_n(&self) -> Result<usize> {
        match self {
            FeatureTemplate::LabelExistence { n }
            | FeatureTemplate::NgramLabels { n }
            | FeatureTemplate::PosWindow { n }
            | FeatureTemplate::PunctuationWindow { n } => {
                if *n == 0 {
                    Err(Error::InvalidParameter("template width n must be at least 1".into()))
                } else {
                    Ok(*n)
                }
            }
            _ => Ok(0),
        }
    }

    /// Feature dimension under `vocab`.
    pub fn dim(&self, vocab: &LabelVocab) -> Result<usize> {
        self.check_n()?;
        let nl = vocab.label_count();
        match self {
            FeatureTemplate::LabelExistence { n } | FeatureTemplate::NgramLabels { n } => ngram_space(nl, *n),
            FeatureTemplate::LabelCounts => Ok(nl),
            FeatureTemplate::PosWindow { n } => {
                if vocab.pos_count() == 0 {
                    return Err(Error::MissingPosTags);
                }
                Ok(n * (vocab.pos_count() + nl))
            }
            FeatureTemplate::PunctuationWindow { n } => Ok(n * (1 + nl)),
            FeatureTemplate::PairIndicator { role } => Ok(match role {
                PairRole::SourceRelation | PairRole::RelationTarget => {
                    ENTITY_LABELS.len() + RELATION_LABELS.len()
                }
                PairRole::RelationRelation => 2 * RELATION_LABELS.len(),
            }),
        }
    }

    /// Canonical string form, e.g. `ngram-labels:2`, used to tag extracted
    /// systems so a decoder can recover the template later.
    pub fn spec_string(&self) -> String {
        match self {
            FeatureTemplate::LabelExistence { n } => format!("label-existence:{n}"),
            FeatureTemplate::LabelCounts => "label-counts".into(),
            FeatureTemplate::NgramLabels { n } => format!("ngram-labels:{n}"),
            FeatureTemplate::PosWindow { n } => format!("pos-window:{n}"),
            FeatureTemplate::PunctuationWindow { n } => format!("punct-window:{n}"),
            FeatureTemplate::PairIndicator { role } => match role {
                PairRole::SourceRelation => "pair-source-relation".into(),
                PairRole::RelationTarget => "pair-relation-target".into(),
                PairRole::RelationRelation => "pair-relation-relation".into(),
            },
        }
    }

    /// Parse the string form produced by [`Self::spec_string`]; a missing
    /// `:n` suffix picks the template's customary width.
    pub fn parse_spec(s: &str) -> Result<FeatureTemplate> {
        let (kind, n) = match s.split_once(':') {
            Some((kind, num)) => {
                let n: usize = num
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("invalid template width {num:?} in {s:?}")))?;
                (kind, Some(n))
            }
            None => (s, None),
        };
        let template = match kind {
            "label-existence" => FeatureTemplate::LabelExistence { n: n.unwrap_or(1) },
            "label-counts" => FeatureTemplate::LabelCounts,
            "ngram-labels" => FeatureTemplate::NgramLabels { n: n.unwrap_or(2) },
            "pos-window" => FeatureTemplate::PosWindow { n: n.unwrap_or(2) },
            "punct-window" => FeatureTemplate::PunctuationWindow { n: n.unwrap_or(2) },
            "pair-source-relation" => FeatureTemplate::PairIndicator { role: PairRole::SourceRelation },
            "pair-relation-target" => FeatureTemplate::PairIndicator { role: PairRole::RelationTarget },
            "pair-relation-relation" => FeatureTemplate::PairIndicator { role: PairRole::RelationRelation },
            other => return Err(Error::InvalidParameter(format!("unknown template {other:?}"))),
        };
        if n.is_some() && template.window().is_none() && !matches!(template, FeatureTemplate::LabelExistence { .. }) {
            return Err(Error::InvalidParameter(format!("template {kind:?} takes no width")));
        }
        template.check_n()?;
        Ok(template)
    }
}

/// `n_labels ^ n` with an overflow/blowup guard.
fn ngram_space(n_labels: usize, n: usize) -> Result<usize> {
    const LIMIT: usize = 10_000_000;
    let mut size: usize = 1;
    for _ in 0..n {
        size = size
            .checked_mul(n_labels)
            .filter(|s| *s <= LIMIT)
            .ok_or_else(|| {
                Error::InvalidParameter(format!("label n-gram space {n_labels}^{n} is too large"))
            })?;
    }
    Ok(size)
}

/// Code of a label n-gram: the first position is the most significant digit
/// in base `n_labels`, so enumerating codes in ascending order enumerates
/// tuples lexicographically.
fn ngram_code(window: &[usize], n_labels: usize) -> usize {
    window.iter().fold(0, |acc, &i| acc * n_labels + i)
}

fn onehot_into(vec: &mut [f64], offset: usize, index: usize) {
    vec[offset + index] = 1.0;
}

/// Build the vector of one local window from already-resolved indices.
/// `pos_window` and `punct_window` are consulted only by the templates that
/// need them; `label_window` always has the template's width.
pub(crate) fn window_vector(
    template: &FeatureTemplate,
    vocab: &LabelVocab,
    pos_window: &[usize],
    punct_window: &[bool],
    label_window: &[usize],
) -> Result<Vec<f64>> {
    let nl = vocab.label_count();
    match template {
        FeatureTemplate::NgramLabels { n } => {
            debug_assert_eq!(label_window.len(), *n);
            let mut v = vec![0.0; ngram_space(nl, *n)?];
            v[ngram_code(label_window, nl)] = 1.0;
            Ok(v)
        }
        FeatureTemplate::PosWindow { n } => {
            debug_assert_eq!(label_window.len(), *n);
            debug_assert_eq!(pos_window.len(), *n);
            let np = vocab.pos_count();
            let mut v = vec![0.0; n * (np + nl)];
            for (slot, &p) in pos_window.iter().enumerate() {
                onehot_into(&mut v, slot * np, p);
            }
            for (slot, &l) in label_window.iter().enumerate() {
                onehot_into(&mut v, n * np + slot * nl, l);
            }
            Ok(v)
        }
        FeatureTemplate::PunctuationWindow { n } => {
            debug_assert_eq!(label_window.len(), *n);
            debug_assert_eq!(punct_window.len(), *n);
            let mut v = vec![0.0; n * (1 + nl)];
            for (slot, &flag) in punct_window.iter().enumerate() {
                if flag {
                    v[slot] = 1.0;
                }
            }
            for (slot, &l) in label_window.iter().enumerate() {
                onehot_into(&mut v, n + slot * nl, l);
            }
            Ok(v)
        }
        other => Err(Error::InvalidParameter(format!(
            "template {:?} does not produce window vectors",
            other.spec_string()
        ))),
    }
}

/// Build the single global vector of a sequence from resolved label indices.
pub(crate) fn global_vector(
    template: &FeatureTemplate,
    vocab: &LabelVocab,
    label_indices: &[usize],
) -> Result<Vec<f64>> {
    let nl = vocab.label_count();
    match template {
        FeatureTemplate::LabelExistence { n } => {
            let mut v = vec![0.0; ngram_space(nl, *n)?];
            if label_indices.len() >= *n {
                for window in label_indices.windows(*n) {
                    v[ngram_code(window, nl)] = 1.0;
                }
            }
            Ok(v)
        }
        FeatureTemplate::LabelCounts => {
            let mut v = vec![0.0; nl];
            for &l in label_indices {
                v[l] += 1.0;
            }
            Ok(v)
        }
        other => Err(Error::InvalidParameter(format!(
            "template {:?} is not a global template",
            other.spec_string()
        ))),
    }
}

fn label_indices(seq: &TaggedSequence, vocab: &LabelVocab) -> Result<Vec<usize>> {
    seq.labels.iter().map(|l| vocab.label_index(l)).collect()
}

fn pos_indices(seq: &TaggedSequence, vocab: &LabelVocab) -> Result<Vec<usize>> {
    if !seq.has_pos() {
        return Err(Error::MissingPosTags);
    }
    seq.pos_tags.iter().map(|p| vocab.pos_index(p)).collect()
}

/// Extract all feature vectors of one sequence under a template: exactly one
/// vector for a global template, one per window for a local one (none when
/// the sequence is shorter than the window).
pub fn extract(template: &FeatureTemplate, seq: &TaggedSequence, vocab: &LabelVocab) -> Result<Vec<Vec<f64>>> {
    let n = template.check_n()?;
    let labels = label_indices(seq, vocab)?;
    match template {
        FeatureTemplate::LabelExistence { .. } | FeatureTemplate::LabelCounts => {
            Ok(vec![global_vector(template, vocab, &labels)?])
        }
        FeatureTemplate::NgramLabels { .. } => {
            let mut out = Vec::new();
            if labels.len() >= n {
                for window in labels.windows(n) {
                    out.push(window_vector(template, vocab, &[], &[], window)?);
                }
            }
            Ok(out)
        }
        FeatureTemplate::PosWindow { .. } => {
            let pos = pos_indices(seq, vocab)?;
            let mut out = Vec::new();
            if labels.len() >= n {
                for start in 0..=labels.len() - n {
                    out.push(window_vector(
                        template,
                        vocab,
                        &pos[start..start + n],
                        &[],
                        &labels[start..start + n],
                    )?);
                }
            }
            Ok(out)
        }
        FeatureTemplate::PunctuationWindow { .. } => {
            let punct: Vec<bool> = seq.tokens.iter().map(|t| is_punctuation(t)).collect();
            let mut out = Vec::new();
            if labels.len() >= n {
                for start in 0..=labels.len() - n {
                    out.push(window_vector(
                        template,
                        vocab,
                        &[],
                        &punct[start..start + n],
                        &labels[start..start + n],
                    )?);
                }
            }
            Ok(out)
        }
        FeatureTemplate::PairIndicator { .. } => Err(Error::InvalidParameter(
            "pair-indicator templates apply to entity-relation records, not sequences".into(),
        )),
    }
}

fn bits_key(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Deduplicated feature vectors of every valid structure in the corpus,
/// labeled +1. Extraction failures are wrapped with the sequence index.
pub fn build_positive_set(
    template: &FeatureTemplate,
    corpus: &[TaggedSequence],
    vocab: &LabelVocab,
) -> Result<Vec<LabeledFeatureExample>> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus"));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, seq) in corpus.iter().enumerate() {
        let vectors = extract(template, seq, vocab).map_err(|e| Error::in_sequence(i, e))?;
        for v in vectors {
            if seen.insert(bits_key(&v)) {
                out.push(LabeledFeatureExample::new(v, 1)?);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("positive examples"));
    }
    Ok(out)
}

/// How window-template negatives are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowNegativeScheme {
    /// Cross observed context windows with observed label windows and keep
    /// the combinations never seen together.
    Enumerate,
    /// Randomly relabel one slot of each observed window.
    RandomPerturb,
}

/// Knobs for [`generate_negatives_with`].
#[derive(Debug, Clone)]
pub struct NegativeGenOptions {
    /// Upper bound on emitted negatives; excess is subsampled with the seed.
    pub cap: usize,
    /// Scheme for POS and punctuation window templates.
    pub window_scheme: WindowNegativeScheme,
    /// Perturbation attempts per structure for randomized schemes.
    pub perturb_attempts: usize,
}

impl Default for NegativeGenOptions {
    fn default() -> Self {
        NegativeGenOptions {
            cap: 50_000,
            window_scheme: WindowNegativeScheme::Enumerate,
            perturb_attempts: 10,
        }
    }
}

/// Distinct ordered values helper: insertion-ordered set of index windows.
struct OrderedWindows<T> {
    seen: HashSet<Vec<T>>,
    items: Vec<Vec<T>>,
}

impl<T: Clone + std::hash::Hash + Eq> OrderedWindows<T> {
    fn new() -> Self {
        OrderedWindows { seen: HashSet::new(), items: Vec::new() }
    }

    fn insert(&mut self, w: &[T]) {
        if self.seen.insert(w.to_vec()) {
            self.items.push(w.to_vec());
        }
    }

    fn contains(&self, w: &[T]) -> bool {
        self.seen.contains(w)
    }
}

/// Generate invalid feature vectors for a template with default options.
pub fn generate_negatives(
    template: &FeatureTemplate,
    corpus: &[TaggedSequence],
    vocab: &LabelVocab,
    positives: &[LabeledFeatureExample],
    seed: u64,
) -> Result<Vec<LabeledFeatureExample>> {
    generate_negatives_with(template, corpus, vocab, positives, seed, &NegativeGenOptions::default())
}

/// Generate invalid feature vectors: structures close to the observed ones
/// that never occur in the corpus. Every emitted vector is distinct, disjoint
/// from the positives, and the whole procedure is deterministic in `seed`.
pub fn generate_negatives_with(
    template: &FeatureTemplate,
    corpus: &[TaggedSequence],
    vocab: &LabelVocab,
    positives: &[LabeledFeatureExample],
    seed: u64,
    options: &NegativeGenOptions,
) -> Result<Vec<LabeledFeatureExample>> {
    if options.cap == 0 {
        return Err(Error::InvalidParameter("negative cap must be at least 1".into()));
    }
    let n = template.check_n()?;
    let nl = vocab.label_count();
    let positive_keys: HashSet<Vec<u64>> = positives.iter().map(|e| bits_key(&e.psi)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emitted = HashSet::new();
    let mut out: Vec<Vec<f64>> = Vec::new();
    let push = |v: Vec<f64>, out: &mut Vec<Vec<f64>>, emitted: &mut HashSet<Vec<u64>>| {
        let key = bits_key(&v);
        if !positive_keys.contains(&key) && emitted.insert(key) {
            out.push(v);
        }
    };

    match template {
        FeatureTemplate::LabelExistence { .. } => {
            // Flip each bit of each observed existence vector.
            for p in positives {
                for j in 0..p.psi.len() {
                    let mut v = p.psi.clone();
                    v[j] = if v[j] == 0.0 { 1.0 } else { 0.0 };
                    push(v, &mut out, &mut emitted);
                }
            }
        }
        FeatureTemplate::LabelCounts => {
            // Relabel one random position per attempt and keep novel counts.
            for seq in corpus {
                let labels = label_indices(seq, vocab)?;
                let base = global_vector(template, vocab, &labels)?;
                if nl < 2 {
                    continue;
                }
                for _ in 0..options.perturb_attempts {
                    let pos = rng.random_range(0..labels.len());
                    let old = labels[pos];
                    let mut new = rng.random_range(0..nl - 1);
                    if new >= old {
                        new += 1;
                    }
                    let mut v = base.clone();
                    v[old] -= 1.0;
                    v[new] += 1.0;
                    push(v, &mut out, &mut emitted);
                }
            }
        }
        FeatureTemplate::NgramLabels { .. } => {
            let mut seen = OrderedWindows::new();
            let mut seen_sub = OrderedWindows::new();
            for seq in corpus {
                let labels = label_indices(seq, vocab)?;
                if labels.len() >= n {
                    for w in labels.windows(n) {
                        seen.insert(w);
                    }
                }
                if n > 1 && labels.len() >= n - 1 {
                    for w in labels.windows(n - 1) {
                        seen_sub.insert(w);
                    }
                }
            }
            // Enumerate the full n-gram space in code order; for widths past
            // 2, keep only candidates sharing an observed (n-1)-gram so the
            // negatives stay near the data distribution.
            let space = ngram_space(nl, n)?;
            let mut window = vec![0usize; n];
            for code in 0..space {
                let mut rest = code;
                for slot in (0..n).rev() {
                    window[slot] = rest % nl;
                    rest /= nl;
                }
                if seen.contains(&window) {
                    continue;
                }
                if n > 2 {
                    let prefix_seen = seen_sub.contains(&window[..n - 1]);
                    let suffix_seen = seen_sub.contains(&window[1..]);
                    if !prefix_seen && !suffix_seen {
                        continue;
                    }
                }
                push(window_vector(template, vocab, &[], &[], &window)?, &mut out, &mut emitted);
            }
        }
        FeatureTemplate::PosWindow { .. } | FeatureTemplate::PunctuationWindow { .. } => {
            let is_pos = matches!(template, FeatureTemplate::PosWindow { .. });
            let mut contexts = OrderedWindows::new();
            let mut label_windows = OrderedWindows::new();
            let mut seen_pairs: HashSet<(Vec<usize>, Vec<usize>)> = HashSet::new();
            let mut occurrences: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
            for seq in corpus {
                let labels = label_indices(seq, vocab)?;
                if labels.len() < n {
                    continue;
                }
                let context: Vec<usize> = if is_pos {
                    pos_indices(seq, vocab)?
                } else {
                    seq.tokens.iter().map(|t| usize::from(is_punctuation(t))).collect()
                };
                for start in 0..=labels.len() - n {
                    let c = &context[start..start + n];
                    let l = &labels[start..start + n];
                    contexts.insert(c);
                    label_windows.insert(l);
                    if seen_pairs.insert((c.to_vec(), l.to_vec())) {
                        occurrences.push((c.to_vec(), l.to_vec()));
                    }
                }
            }
            let build = |context: &[usize], labels: &[usize]| -> Result<Vec<f64>> {
                if is_pos {
                    window_vector(template, vocab, context, &[], labels)
                } else {
                    let punct: Vec<bool> = context.iter().map(|&c| c == 1).collect();
                    window_vector(template, vocab, &[], &punct, labels)
                }
            };
            match options.window_scheme {
                WindowNegativeScheme::Enumerate => {
                    // Cross every observed context with every observed label
                    // window; the pairs never seen together become negatives.
                    for c in &contexts.items {
                        for l in &label_windows.items {
                            if seen_pairs.contains(&(c.clone(), l.clone())) {
                                continue;
                            }
                            push(build(c, l)?, &mut out, &mut emitted);
                        }
                    }
                }
                WindowNegativeScheme::RandomPerturb => {
                    if nl >= 2 {
                        for (c, l) in &occurrences {
                            for _ in 0..options.perturb_attempts {
                                let slot = rng.random_range(0..n);
                                let old = l[slot];
                                let mut new = rng.random_range(0..nl - 1);
                                if new >= old {
                                    new += 1;
                                }
                                let mut labels = l.clone();
                                labels[slot] = new;
                                if seen_pairs.contains(&(c.clone(), labels.clone())) {
                                    continue;
                                }
                                push(build(c, &labels)?, &mut out, &mut emitted);
                            }
                        }
                    }
                }
            }
        }
        FeatureTemplate::PairIndicator { .. } => {
            return Err(Error::InvalidParameter(
                "pair-indicator negatives come from pair_indicator_examples".into(),
            ));
        }
    }

    if out.is_empty() {
        return Err(Error::DegenerateTemplate);
    }
    if out.len() > options.cap {
        let mut keep = rand::seq::index::sample(&mut rng, out.len(), options.cap).into_vec();
        keep.sort_unstable();
        out = keep.into_iter().map(|i| std::mem::take(&mut out[i])).collect();
    }
    out.into_iter().map(|v| LabeledFeatureExample::new(v, -1)).collect()
}

/// A labeled two-class dataset produced by a template over a corpus.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub positives: Vec<LabeledFeatureExample>,
    pub negatives: Vec<LabeledFeatureExample>,
    /// The template that produced the vectors; `None` when the features are
    /// raw structures (e.g. ILP assignments used as their own features).
    pub template: Option<FeatureTemplate>,
    pub dim: usize,
}

impl GeneratedDataset {
    /// Bundle positives and negatives, checking dimensions and disjointness.
    pub fn new(
        positives: Vec<LabeledFeatureExample>,
        negatives: Vec<LabeledFeatureExample>,
        template: Option<FeatureTemplate>,
        dim: usize,
    ) -> Result<Self> {
        let ds = GeneratedDataset { positives, negatives, template, dim };
        ds.validate()?;
        Ok(ds)
    }

    /// Check the dataset invariants: correct labels, uniform dimension, and
    /// no vector on both sides.
    pub fn validate(&self) -> Result<()> {
        for e in &self.positives {
            if e.label != 1 {
                return Err(Error::InvalidSign(e.label));
            }
        }
        for e in &self.negatives {
            if e.label != -1 {
                return Err(Error::InvalidSign(e.label));
            }
        }
        for e in self.positives.iter().chain(&self.negatives) {
            if e.psi.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, actual: e.psi.len() });
            }
        }
        let pos: HashSet<Vec<u64>> = self.positives.iter().map(|e| bits_key(&e.psi)).collect();
        for e in &self.negatives {
            if pos.contains(&bits_key(&e.psi)) {
                return Err(Error::InvalidParameter(
                    "dataset classes overlap: a vector is both positive and negative".into(),
                ));
            }
        }
        Ok(())
    }

    /// All examples, positives first.
    pub fn combined(&self) -> Vec<LabeledFeatureExample> {
        self.positives.iter().chain(&self.negatives).cloned().collect()
    }
}

/// Convenience wrapper: positives and negatives for a template in one call.
pub fn generate_dataset(
    template: &FeatureTemplate,
    corpus: &[TaggedSequence],
    vocab: &LabelVocab,
    seed: u64,
    options: &NegativeGenOptions,
) -> Result<GeneratedDataset> {
    let positives = build_positive_set(template, corpus, vocab)?;
    let negatives = generate_negatives_with(template, corpus, vocab, &positives, seed, options)?;
    let dim = template.dim(vocab)?;
    GeneratedDataset::new(positives, negatives, Some(template.clone()), dim)
}

pub(crate) fn entity_index(label: &str) -> Result<usize> {
    ENTITY_LABELS
        .iter()
        .position(|l| *l == label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))
}

pub(crate) fn relation_index(label: &str) -> Result<usize> {
    RELATION_LABELS
        .iter()
        .position(|l| *l == label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))
}

pub(crate) fn pair_vector(role: PairRole, first: usize, second: usize) -> Vec<f64> {
    let (first_size, second_size) = match role {
        PairRole::SourceRelation => (ENTITY_LABELS.len(), RELATION_LABELS.len()),
        PairRole::RelationTarget => (RELATION_LABELS.len(), ENTITY_LABELS.len()),
        PairRole::RelationRelation => (RELATION_LABELS.len(), RELATION_LABELS.len()),
    };
    let mut v = vec![0.0; first_size + second_size];
    v[first] = 1.0;
    v[first_size + second] = 1.0;
    v
}

/// Build the two-class dataset of a pair template: positives are the label
/// pairs observed in the records (each record is read from both directions),
/// negatives are every other combination of the fixed vocabularies.
pub fn pair_indicator_examples(role: PairRole, records: &[ErPairRecord]) -> Result<GeneratedDataset> {
    if records.is_empty() {
        return Err(Error::EmptyInput("entity-relation records"));
    }
    let mut seen = HashSet::new();
    let mut positive_pairs = Vec::new();
    let mut add = |pair: (usize, usize)| {
        if seen.insert(pair) {
            positive_pairs.push(pair);
        }
    };
    for r in records {
        let source = entity_index(&r.source)?;
        let target = entity_index(&r.target)?;
        let relation = relation_index(&r.relation)?;
        let reverse = relation_index(&r.reverse_relation)?;
        match role {
            PairRole::SourceRelation => {
                // The target emits the reverse relation, so it is a source too.
                add((source, relation));
                add((target, reverse));
            }
            PairRole::RelationTarget => {
                add((relation, target));
                add((reverse, source));
            }
            PairRole::RelationRelation => {
                add((relation, reverse));
                add((reverse, relation));
            }
        }
    }
    let (first_size, second_size) = match role {
        PairRole::SourceRelation => (ENTITY_LABELS.len(), RELATION_LABELS.len()),
        PairRole::RelationTarget => (RELATION_LABELS.len(), ENTITY_LABELS.len()),
        PairRole::RelationRelation => (RELATION_LABELS.len(), RELATION_LABELS.len()),
    };
    let positives: Vec<LabeledFeatureExample> = positive_pairs
        .iter()
        .map(|&(a, b)| LabeledFeatureExample::new(pair_vector(role, a, b), 1))
        .collect::<Result<_>>()?;
    let mut negatives = Vec::new();
    for a in 0..first_size {
        for b in 0..second_size {
            if !seen.contains(&(a, b)) {
                negatives.push(LabeledFeatureExample::new(pair_vector(role, a, b), -1)?);
            }
        }
    }
    if negatives.is_empty() {
        return Err(Error::DegenerateTemplate);
    }
    GeneratedDataset::new(positives, negatives, Some(FeatureTemplate::PairIndicator { role }), first_size + second_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_conll;

    /// The running example: a 21-token citation with six label segments.
    fn citation() -> TaggedSequence {
        let tokens: Vec<String> = [
            "A.", ".", "M.", ".", "Turing", ".", // Author x6
            "Computing", "machinery", "and", "intelligence", ".", // Title x5
            "Mind", ",", // Journal x2
            "59", ",", // Volume x2
            "433-460", ".", // Pages x2
            "October", ",", "1950", ".", // Date x4
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let pos: Vec<String> = [
            "NNP", "PUNCT", "NNP", "PUNCT", "NNP", "PUNCT", "NN", "NN", "CC", "NN", "PUNCT",
            "NNP", "PUNCT", "CD", "PUNCT", "CD", "PUNCT", "NNP", "PUNCT", "CD", "PUNCT",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let labels: Vec<String> = std::iter::repeat("Author")
            .take(6)
            .chain(std::iter::repeat("Title").take(5))
            .chain(std::iter::repeat("Journal").take(2))
            .chain(std::iter::repeat("Volume").take(2))
            .chain(std::iter::repeat("Pages").take(2))
            .chain(std::iter::repeat("Date").take(4))
            .map(|s| s.to_string())
            .collect();
        TaggedSequence::new(tokens, pos, labels).unwrap()
    }

    fn citation_vocab() -> LabelVocab {
        LabelVocab::from_corpus(&[citation()]).unwrap()
    }

    #[test]
    fn existence_vector_marks_every_present_label() {
        let seq = citation();
        let vocab = citation_vocab();
        let template = FeatureTemplate::LabelExistence { n: 1 };
        let vectors = extract(&template, &seq, &vocab).unwrap();
        assert_eq!(vectors, vec![vec![1.0; 6]]);

        // Drop the date segment: its existence bit goes out.
        let short = TaggedSequence::new(
            seq.tokens[..17].to_vec(),
            seq.pos_tags[..17].to_vec(),
            seq.labels[..17].to_vec(),
        )
        .unwrap();
        let vectors = extract(&template, &short, &vocab).unwrap();
        assert_eq!(vectors, vec![vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0]]);
    }

    #[test]
    fn counts_vector_matches_segment_lengths() {
        let vectors = extract(&FeatureTemplate::LabelCounts, &citation(), &citation_vocab()).unwrap();
        assert_eq!(vectors, vec![vec![6.0, 5.0, 2.0, 2.0, 2.0, 4.0]]);
    }

    #[test]
    fn bigram_windows_cover_the_sequence_in_order() {
        let seq = citation();
        let vocab = citation_vocab();
        let template = FeatureTemplate::NgramLabels { n: 2 };
        let vectors = extract(&template, &seq, &vocab).unwrap();
        assert_eq!(vectors.len(), 20);
        assert_eq!(vectors[0].len(), 36);
        // First window is (Author, Author) = code 0.
        assert_eq!(vectors[0][0], 1.0);
        // Window 5 is (Author, Title) = code 0*6 + 1.
        assert_eq!(vectors[5][1], 1.0);
        // The code is order-sensitive: (Title, Author) would be 6.
        assert_eq!(vectors[5][6], 0.0);
        for v in &vectors {
            assert_eq!(v.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn local_templates_on_short_sequences_yield_nothing() {
        let seq = TaggedSequence::new(
            vec!["Mind".into()],
            vec!["NNP".into()],
            vec!["Journal".into()],
        )
        .unwrap();
        let vocab = citation_vocab();
        let vectors = extract(&FeatureTemplate::NgramLabels { n: 2 }, &seq, &vocab).unwrap();
        assert!(vectors.is_empty());
    }

    #[test]
    fn pos_window_concatenates_tag_and_label_onehots() {
        let seq = citation();
        let vocab = citation_vocab();
        let template = FeatureTemplate::PosWindow { n: 2 };
        let vectors = extract(&template, &seq, &vocab).unwrap();
        // POS vocab: NNP, PUNCT, NN, CC, CD (first occurrence order).
        assert_eq!(vocab.pos_values(), ["NNP", "PUNCT", "NN", "CC", "CD"]);
        assert_eq!(vectors[0].len(), 2 * (5 + 6));
        // Window 0: tags (NNP, PUNCT), labels (Author, Author).
        let v = &vectors[0];
        assert_eq!(v[0], 1.0); // slot 0 tag NNP
        assert_eq!(v[5 + 1], 1.0); // slot 1 tag PUNCT
        assert_eq!(v[10], 1.0); // slot 0 label Author
        assert_eq!(v[16], 1.0); // slot 1 label Author
        assert_eq!(v.iter().sum::<f64>(), 4.0);

        let bare = TaggedSequence::new(vec!["a".into(), "b".into()], vec![], vec!["Author".into(), "Title".into()]).unwrap();
        assert!(matches!(extract(&template, &bare, &vocab), Err(Error::MissingPosTags)));
    }

    #[test]
    fn punctuation_window_flags_symbol_tokens() {
        let seq = citation();
        let vocab = citation_vocab();
        let template = FeatureTemplate::PunctuationWindow { n: 2 };
        let vectors = extract(&template, &seq, &vocab).unwrap();
        assert_eq!(vectors[0].len(), 2 * (1 + 6));
        // Window 0: tokens ("A.", "."): only the second is pure punctuation.
        assert_eq!(vectors[0][0], 0.0);
        assert_eq!(vectors[0][1], 1.0);
        // Window 15: tokens ("433-460", "."): the dash token is not punctuation.
        assert_eq!(vectors[15][0], 0.0);
        assert_eq!(vectors[15][1], 1.0);
    }

    #[test]
    fn positive_set_deduplicates_repeated_windows() {
        let corpus = [citation()];
        let vocab = citation_vocab();
        let positives =
            build_positive_set(&FeatureTemplate::NgramLabels { n: 2 }, &corpus, &vocab).unwrap();
        // 20 windows collapse to the 11 distinct label bigrams.
        assert_eq!(positives.len(), 11);
        assert!(positives.iter().all(|e| e.label == 1));
    }

    #[test]
    fn bigram_negatives_enumerate_the_unseen_pairs() {
        let corpus = [citation()];
        let vocab = citation_vocab();
        let template = FeatureTemplate::NgramLabels { n: 2 };
        let positives = build_positive_set(&template, &corpus, &vocab).unwrap();
        let negatives = generate_negatives(&template, &corpus, &vocab, &positives, 0).unwrap();
        assert_eq!(negatives.len(), 36 - 11);
        assert!(negatives.iter().all(|e| e.label == -1));
        // (Title, Author) was never observed: code 1*6 + 0 = 6.
        assert!(negatives.iter().any(|e| e.psi[6] == 1.0));
        // Disjointness with the positives.
        let pos_keys: std::collections::HashSet<Vec<u64>> =
            positives.iter().map(|e| bits_key(&e.psi)).collect();
        assert!(negatives.iter().all(|e| !pos_keys.contains(&bits_key(&e.psi))));
    }

    #[test]
    fn trigram_negatives_require_an_observed_subgram() {
        let corpus = [citation()];
        let vocab = citation_vocab();
        let template = FeatureTemplate::NgramLabels { n: 3 };
        let positives = build_positive_set(&template, &corpus, &vocab).unwrap();
        let negatives = generate_negatives(&template, &corpus, &vocab, &positives, 0).unwrap();
        // Every emitted trigram shares a seen bigram prefix or suffix.
        let mut seen_bigrams = HashSet::new();
        for w in extract(&FeatureTemplate::NgramLabels { n: 2 }, &corpus[0], &vocab).unwrap() {
            seen_bigrams.insert(w.iter().position(|x| *x == 1.0).unwrap());
        }
        for e in &negatives {
            let code = e.psi.iter().position(|x| *x == 1.0).unwrap();
            let (a, b, c) = (code / 36, (code / 6) % 6, code % 6);
            let prefix = a * 6 + b;
            let suffix = b * 6 + c;
            assert!(
                seen_bigrams.contains(&prefix) || seen_bigrams.contains(&suffix),
                "trigram ({a},{b},{c}) shares no observed bigram"
            );
        }
        // A trigram with both halves unseen, e.g. (Journal, Author, Pages),
        // must not appear: (2,0) and (0,4) are unseen bigrams.
        let bad_code = 2 * 36 + 0 * 6 + 4;
        assert!(negatives.iter().all(|e| e.psi[bad_code] == 0.0));
    }

    #[test]
    fn existence_negatives_are_single_bit_flips() {
        let corpus = [citation()];
        let vocab = citation_vocab();
        let template = FeatureTemplate::LabelExistence { n: 1 };
        let positives = build_positive_set(&template, &corpus, &vocab).unwrap();
        let negatives = generate_negatives(&template, &corpus, &vocab, &positives, 0).unwrap();
        // The all-ones vector has six flips, all novel.
        assert_eq!(negatives.len(), 6);
        for e in &negatives {
            assert_eq!(e.psi.iter().filter(|x| **x == 0.0).count(), 1);
        }
    }

    #[test]
    fn counts_negatives_shift_mass_between_two_labels() {
        let corpus = [citation()];
        let vocab = citation_vocab();
        let template = FeatureTemplate::LabelCounts;
        let positives = build_positive_set(&template, &corpus, &vocab).unwrap();
        let negatives = generate_negatives(&template, &corpus, &vocab, &positives, 9).unwrap();
        assert!(!negatives.is_empty());
        for e in &negatives {
            // Total token count is preserved; exactly one label lost a token.
            assert_eq!(e.psi.iter().sum::<f64>(), 21.0);
            let diff: Vec<f64> =
                e.psi.iter().zip(&positives[0].psi).map(|(a, b)| a - b).collect();
            assert_eq!(diff.iter().filter(|d| **d == 1.0).count(), 1);
            assert_eq!(diff.iter().filter(|d| **d == -1.0).count(), 1);
        }
    }

    #[test]
    fn window_negatives_cross_contexts_with_label_windows() {
        let corpus = [citation()];
        let vocab = citation_vocab();
        let template = FeatureTemplate::PosWindow { n: 2 };
        let positives = build_positive_set(&template, &corpus, &vocab).unwrap();
        let negatives = generate_negatives(&template, &corpus, &vocab, &positives, 0).unwrap();
        assert!(!negatives.is_empty());
        // Every negative reuses an observed tag window and an observed label
        // window (both one-hots land in observed blocks), just never together.
        let np = vocab.pos_count();
        let observed_tags: HashSet<Vec<u64>> =
            positives.iter().map(|e| bits_key(&e.psi[..2 * np])).collect();
        let observed_labels: HashSet<Vec<u64>> =
            positives.iter().map(|e| bits_key(&e.psi[2 * np..])).collect();
        for e in &negatives {
            assert!(observed_tags.contains(&bits_key(&e.psi[..2 * np])));
            assert!(observed_labels.contains(&bits_key(&e.psi[2 * np..])));
        }
    }

    #[test]
    fn random_perturb_scheme_is_deterministic_and_disjoint() {
        let corpus = [citation()];
        let vocab = citation_vocab();
        let template = FeatureTemplate::PosWindow { n: 2 };
        let positives = build_positive_set(&template, &corpus, &vocab).unwrap();
        let options = NegativeGenOptions {
            window_scheme: WindowNegativeScheme::RandomPerturb,
            ..NegativeGenOptions::default()
        };
        let a = generate_negatives_with(&template, &corpus, &vocab, &positives, 5, &options).unwrap();
        let b = generate_negatives_with(&template, &corpus, &vocab, &positives, 5, &options).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(x, y)| x.psi == y.psi));
        let c = generate_negatives_with(&template, &corpus, &vocab, &positives, 6, &options).unwrap();
        assert!(!c.is_empty());
    }

    #[test]
    fn cap_subsamples_deterministically() {
        let corpus = [citation()];
        let vocab = citation_vocab();
        let template = FeatureTemplate::NgramLabels { n: 2 };
        let positives = build_positive_set(&template, &corpus, &vocab).unwrap();
        let options = NegativeGenOptions { cap: 10, ..NegativeGenOptions::default() };
        let a = generate_negatives_with(&template, &corpus, &vocab, &positives, 3, &options).unwrap();
        let b = generate_negatives_with(&template, &corpus, &vocab, &positives, 3, &options).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.iter().zip(&b).all(|(x, y)| x.psi == y.psi));
    }

    #[test]
    fn dataset_validation_catches_class_overlap() {
        let ex = |v: &[f64], l: i32| LabeledFeatureExample::new(v.to_vec(), l).unwrap();
        let ds = GeneratedDataset {
            positives: vec![ex(&[1.0, 0.0], 1)],
            negatives: vec![ex(&[1.0, 0.0], -1)],
            template: None,
            dim: 2,
        };
        assert!(ds.validate().is_err());
    }

    #[test]
    fn pair_examples_read_records_from_both_directions() {
        let records = crate::corpus::parse_er_pairs(
            "Person Kill Person NoRel\nPerson LiveIn Location NoRel\nNoEnt NoRel NoEnt NoRel\n",
        )
        .unwrap();
        let ds = pair_indicator_examples(PairRole::SourceRelation, &records).unwrap();
        assert_eq!(ds.dim, 10);
        // Distinct source pairs: (Person,Kill), (Person,NoRel), (Person,LiveIn),
        // (Location,NoRel), (NoEnt,NoRel).
        assert_eq!(ds.positives.len(), 5);
        assert_eq!(ds.negatives.len(), 24 - 5);

        let rt = pair_indicator_examples(PairRole::RelationTarget, &records).unwrap();
        // Reversed edges point back at the source: (Kill,Person), (NoRel,Person),
        // (LiveIn,Location), (NoRel,NoEnt).
        assert_eq!(rt.positives.len(), 4);

        let rr = pair_indicator_examples(PairRole::RelationRelation, &records).unwrap();
        assert_eq!(rr.dim, 12);
        // (Kill,NoRel), (NoRel,Kill), (LiveIn,NoRel), (NoRel,LiveIn), (NoRel,NoRel).
        assert_eq!(rr.positives.len(), 5);

        let bad = crate::corpus::parse_er_pairs("Person Married Person NoRel\n").unwrap();
        assert!(matches!(
            pair_indicator_examples(PairRole::SourceRelation, &bad),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn template_spec_strings_round_trip() {
        let templates = [
            FeatureTemplate::LabelExistence { n: 1 },
            FeatureTemplate::LabelCounts,
            FeatureTemplate::NgramLabels { n: 3 },
            FeatureTemplate::PosWindow { n: 2 },
            FeatureTemplate::PunctuationWindow { n: 4 },
            FeatureTemplate::PairIndicator { role: PairRole::RelationTarget },
        ];
        for t in templates {
            assert_eq!(FeatureTemplate::parse_spec(&t.spec_string()).unwrap(), t);
        }
        assert_eq!(
            FeatureTemplate::parse_spec("ngram-labels").unwrap(),
            FeatureTemplate::NgramLabels { n: 2 }
        );
        assert!(FeatureTemplate::parse_spec("word-shapes").is_err());
        assert!(FeatureTemplate::parse_spec("ngram-labels:0").is_err());
        assert!(FeatureTemplate::parse_spec("label-counts:3").is_err());
    }

    #[test]
    fn generate_dataset_runs_end_to_end_on_a_parsed_corpus() {
        let text = "a\tX\nb\tY\nc\tZ\n\nd\tX\ne\tZ\n";
        let corpus = parse_conll(text).unwrap();
        let vocab = LabelVocab::from_corpus(&corpus).unwrap();
        let template = FeatureTemplate::NgramLabels { n: 2 };
        let ds = generate_dataset(&template, &corpus, &vocab, 0, &NegativeGenOptions::default()).unwrap();
        ds.validate().unwrap();
        // Observed bigrams: (X,Y), (Y,Z), (X,Z) of 9 possible.
        assert_eq!(ds.positives.len(), 3);
        assert_eq!(ds.negatives.len(), 6);
        assert_eq!(ds.combined().len(), 9);
    }
}
