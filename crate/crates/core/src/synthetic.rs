//! Synthetic citation-style corpora with a planted structural regularity:
//! field segments always appear in one of a few orders, and the bigram
//! (Date, Author) never occurs. Decoders constrained by a learned bigram
//! system can therefore be checked against a known ground truth.

use crate::corpus::TaggedSequence;
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The label bigram that never appears in a planted corpus.
pub const PLANTED_FORBIDDEN_BIGRAM: (&str, &str) = ("Date", "Author");

/// Field labels used by the planted corpus, in first-occurrence order.
pub const PLANTED_LABELS: [&str; 6] = ["Author", "Title", "Journal", "Volume", "Pages", "Date"];

/// The segment orders sequences cycle through. Every adjacent label pair
/// other than the forbidden one has support, and every label that occurs
/// mid-sequence somewhere has at least one successor.
const SEGMENT_TEMPLATES: [&[&str]; 5] = [
    &["Author", "Title", "Journal", "Volume", "Pages", "Date"],
    &["Author", "Title", "Journal", "Pages", "Date"],
    &["Author", "Title", "Journal", "Volume", "Pages"],
    &["Author", "Date", "Title", "Journal", "Pages"],
    &["Title", "Author", "Journal", "Date"],
];

const INITIALS: [&str; 4] = ["A.", "J.", "M.", "R."];
// "Turing" and "Mind" recur in other fields below, so token identity alone
// does not decide the label.
const SURNAMES: [&str; 5] = ["Turing", "Shannon", "McCarthy", "Hopper", "Curie"];
const TITLE_WORDS: [&str; 10] =
    ["On", "Computable", "Numbers", "Machines", "Learning", "Systems", "Logic", "Mind", "Theory", "Turing"];
const JOURNALS: [&str; 4] = ["Mind", "Nature", "Science", "Annals"];
const VOLUMES: [&str; 4] = ["59", "12", "7", "128"];
const PAGES: [&str; 4] = ["433-460", "12-17", "230-265", "85-105"];
const MONTHS: [&str; 3] = ["October", "May", "June"];
const YEARS: [&str; 3] = ["1950", "1936", "2003"];

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

/// Content tokens of one field segment (the caller appends the separator).
fn segment_tokens(rng: &mut ChaCha8Rng, label: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    match label {
        "Author" => {
            for _ in 0..rng.random_range(1..=2usize) {
                tokens.push(pick(rng, &INITIALS).to_string());
            }
            tokens.push(pick(rng, &SURNAMES).to_string());
        }
        "Title" => {
            for _ in 0..rng.random_range(2..=4usize) {
                tokens.push(pick(rng, &TITLE_WORDS).to_string());
            }
        }
        "Journal" => tokens.push(pick(rng, &JOURNALS).to_string()),
        "Volume" => tokens.push(pick(rng, &VOLUMES).to_string()),
        "Pages" => tokens.push(pick(rng, &PAGES).to_string()),
        "Date" => {
            tokens.push(pick(rng, &MONTHS).to_string());
            tokens.push(pick(rng, &YEARS).to_string());
        }
        other => unreachable!("unknown planted label {other}"),
    }
    tokens
}

/// Generate `count` labeled citation-style sequences. Segment orders cycle
/// through the five templates, so any split that keeps at least one of each
/// preserves full bigram coverage. Deterministic in the seed.
pub fn planted_citation_corpus(seed: u64, count: usize) -> Result<Vec<TaggedSequence>> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(count);
    for i in 0..count {
        let template = SEGMENT_TEMPLATES[i % SEGMENT_TEMPLATES.len()];
        let mut tokens = Vec::new();
        let mut labels = Vec::new();
        for (j, label) in template.iter().enumerate() {
            let segment = segment_tokens(&mut rng, label);
            for token in segment {
                tokens.push(token);
                labels.push(label.to_string());
            }
            // Field separator, labeled with the field it closes.
            tokens.push(if j + 1 == template.len() { ".".to_string() } else { ",".to_string() });
            labels.push(label.to_string());
        }
        corpus.push(TaggedSequence::new(tokens, Vec::new(), labels)?);
    }
    Ok(corpus)
}
