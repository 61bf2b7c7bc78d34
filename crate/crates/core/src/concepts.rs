//! Concept-set construction from a report corpus.
//!
//! Reports are tokenized on whitespace, each token normalized, kept if the
//! configured strategy classifies it as a noun and it is not a stopword, then
//! counted. Concepts at or above `min_frequency` are ordered by descending
//! frequency with lexicographic tie-break.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor_io::{parse_lines, IdIndex};

/// Part-of-speech tags treated as nouns in a pretagged corpus.
pub const NOUN_TAGS: [&str; 4] = ["NN", "NNS", "NNP", "NNPS"];

pub const DEFAULT_MAX_TOKEN_LENGTH: usize = 32;

/// Suffixes the heuristic strategy treats as marking a non-noun
/// (adverbs, participles, adjectives).
pub const NON_NOUN_SUFFIXES: [&str; 13] = [
    "ly", "ing", "ed", "ous", "ful", "ive", "less", "able", "ible", "ic", "al", "ary", "ish",
];

const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "been", "before", "being", "below", "between", "both", "but", "by",
    "can", "could", "did", "do", "does", "during", "each", "few", "for", "from", "further", "had",
    "has", "have", "he", "her", "here", "his", "how", "if", "in", "into", "is", "it", "its",
    "more", "most", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other",
    "our", "out", "over", "own", "same", "she", "should", "so", "some", "such", "than", "that",
    "the", "their", "them", "then", "there", "these", "they", "this", "those", "through", "to",
    "too", "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "within", "without", "would", "you",
];

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// How tokens are classified as nouns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    /// Keep tokens found in a supplied noun word list.
    Lexicon(BTreeSet<String>),
    /// Trust the part-of-speech tags carried by a tagged corpus.
    Pretagged,
    /// Suffix rules over [`NON_NOUN_SUFFIXES`].
    Heuristic,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Lexicon(_) => "lexicon",
            Strategy::Pretagged => "pretagged",
            Strategy::Heuristic => "heuristic",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExtractionParams {
    pub strategy: Strategy,
    pub min_frequency: u32,
    pub stopwords: BTreeSet<String>,
    pub max_token_length: usize,
}

impl ExtractionParams {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            min_frequency: 1,
            stopwords: default_stopwords(),
            max_token_length: DEFAULT_MAX_TOKEN_LENGTH,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min_frequency < 1 {
            return Err(Error::InvalidParam("min_frequency must be >= 1".into()));
        }
        if self.max_token_length < 2 {
            return Err(Error::InvalidParam("max_token_length must be >= 2".into()));
        }
        if let Strategy::Lexicon(words) = &self.strategy {
            if words.is_empty() {
                return Err(Error::InvalidParam("lexicon is empty".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedToken {
    pub token: String,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Corpus {
    /// Raw report texts.
    Plain(Vec<String>),
    /// Reports as `(token, tag)` sequences.
    Tagged(Vec<Vec<TaggedToken>>),
}

impl Corpus {
    pub fn len(&self) -> usize {
        match self {
            Corpus::Plain(r) => r.len(),
            Corpus::Tagged(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Plain corpus file: reports separated by one or more blank lines.
    pub fn parse_plain(text: &str) -> Self {
        let mut reports = Vec::new();
        let mut current = String::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                if !current.is_empty() {
                    reports.push(std::mem::take(&mut current));
                }
            } else {
                if !current.is_empty() {
                    current.push('\n');
                }
                current.push_str(line);
            }
        }
        if !current.is_empty() {
            reports.push(current);
        }
        Corpus::Plain(reports)
    }

    /// Pretagged corpus file: `token<TAB>tag` per line, reports separated by blank lines.
    pub fn parse_tagged(text: &str) -> Result<Self> {
        let mut reports = Vec::new();
        let mut current = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                if !current.is_empty() {
                    reports.push(std::mem::take(&mut current));
                }
                continue;
            }
            let (token, tag) = line
                .split_once('\t')
                .filter(|(t, g)| !t.is_empty() && !g.trim().is_empty())
                .ok_or_else(|| {
                    Error::InvalidParam(format!("line {}: expected token<TAB>tag", i + 1))
                })?;
            current.push(TaggedToken {
                token: token.to_string(),
                tag: tag.trim().to_string(),
            });
        }
        if !current.is_empty() {
            reports.push(current);
        }
        Ok(Corpus::Tagged(reports))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus_id: String,
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_frequency: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopwords_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon_digest: Option<String>,
}

/// Ordered, unique, normalized concept strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptSet {
    concepts: IdIndex,
    pub provenance: Provenance,
}

impl ConceptSet {
    /// Validates and wraps an externally supplied concept list.
    pub fn new(concepts: Vec<String>, provenance: Provenance) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::EmptyConceptSet("concept list is empty".into()));
        }
        if let Some(bad) = concepts.iter().find(|c| !is_normalized_concept(c)) {
            return Err(Error::NotNormalized(bad.clone()));
        }
        let concepts = IdIndex::new("concept set", concepts).map_err(|e| match e {
            Error::DuplicateId { id, .. } => Error::DuplicateConcept(id),
            other => other,
        })?;
        Ok(Self {
            concepts,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[String] {
        self.concepts.ids()
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.concepts.get(index)
    }

    pub fn index_of(&self, concept: &str) -> Option<usize> {
        self.concepts.index_of(concept)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for c in self.concepts() {
            s.push_str(c);
            s.push('\n');
        }
        s
    }
}

/// Lowercase, trimmed, non-empty, no control characters.
pub fn is_normalized_concept(s: &str) -> bool {
    !s.is_empty()
        && s.trim() == s
        && !s.chars().any(char::is_control)
        && s.chars().flat_map(char::to_lowercase).eq(s.chars())
}

/// Lowercases and strips surrounding punctuation. Returns `None` for tokens that
/// contain digits or other non-letter interior characters (single hyphens between
/// letters are allowed), or whose length falls outside `2..=max_len` characters.
pub fn normalize_token(raw: &str, max_len: usize) -> Option<String> {
    let core = raw.trim_matches(|c: char| !c.is_alphanumeric());
    if core.is_empty() || core.chars().any(|c| c.is_numeric()) {
        return None;
    }
    let lowered: String = core.chars().flat_map(char::to_lowercase).collect();
    let len = lowered.chars().count();
    if len < 2 || len > max_len {
        return None;
    }
    let mut prev_hyphen = false;
    for c in lowered.chars() {
        if c == '-' {
            if prev_hyphen {
                return None;
            }
            prev_hyphen = true;
        } else if c.is_alphabetic() {
            prev_hyphen = false;
        } else {
            return None;
        }
    }
    Some(lowered)
}

fn heuristic_is_noun(token: &str) -> bool {
    let head = token.rsplit('-').next().unwrap_or(token);
    head.chars().count() >= 3 && !NON_NOUN_SUFFIXES.iter().any(|s| head.ends_with(s))
}

fn digest_words<'a>(words: impl IntoIterator<Item = &'a String>) -> String {
    let mut hasher = Sha256::new();
    for w in words {
        hasher.update(w.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

fn count_report<'a, I>(tokens: I, params: &ExtractionParams, lexicon: Option<&BTreeSet<String>>) -> HashMap<String, u64>
where
    I: Iterator<Item = (&'a str, Option<&'a str>)>,
{
    let mut counts = HashMap::new();
    for (raw, tag) in tokens {
        let Some(token) = normalize_token(raw, params.max_token_length) else {
            continue;
        };
        let is_noun = match &params.strategy {
            Strategy::Lexicon(_) => lexicon.is_some_and(|l| l.contains(&token)),
            Strategy::Pretagged => tag.is_some_and(|t| NOUN_TAGS.contains(&t)),
            Strategy::Heuristic => heuristic_is_noun(&token),
        };
        if is_noun && !params.stopwords.contains(&token) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    counts
}

/// Extracts the concept set from a corpus.
pub fn extract_concepts(corpus: &Corpus, corpus_id: &str, params: &ExtractionParams) -> Result<ConceptSet> {
    params.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus has no reports".into()));
    }
    // Lexicon entries go through the same normalization as corpus tokens.
    let lexicon: Option<BTreeSet<String>> = match &params.strategy {
        Strategy::Lexicon(words) => Some(
            words
                .iter()
                .filter_map(|w| normalize_token(w, params.max_token_length))
                .collect(),
        ),
        _ => None,
    };
    let lexicon = lexicon.as_ref();

    let per_report: Vec<HashMap<String, u64>> = match corpus {
        Corpus::Plain(reports) => {
            if params.strategy == Strategy::Pretagged {
                return Err(Error::InvalidParam(
                    "pretagged strategy requires a tagged corpus".into(),
                ));
            }
            reports
                .par_iter()
                .map(|r| count_report(r.split_whitespace().map(|t| (t, None)), params, lexicon))
                .collect()
        }
        Corpus::Tagged(reports) => reports
            .par_iter()
            .map(|r| {
                count_report(
                    r.iter().map(|t| (t.token.as_str(), Some(t.tag.as_str()))),
                    params,
                    lexicon,
                )
            })
            .collect(),
    };

    let mut totals: HashMap<String, u64> = HashMap::new();
    for counts in per_report {
        for (token, n) in counts {
            *totals.entry(token).or_insert(0) += n;
        }
    }
    let mut ranked: Vec<(String, u64)> = totals
        .into_iter()
        .filter(|(_, n)| *n >= u64::from(params.min_frequency))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if ranked.is_empty() {
        return Err(Error::EmptyConceptSet(format!(
            "strategy {} with min_frequency {} kept no tokens",
            params.strategy.name(),
            params.min_frequency
        )));
    }

    let provenance = Provenance {
        corpus_id: corpus_id.to_string(),
        strategy: params.strategy.name().to_string(),
        min_frequency: Some(params.min_frequency),
        stopwords_digest: Some(digest_words(&params.stopwords)),
        lexicon_digest: lexicon.map(digest_words),
    };
    ConceptSet::new(ranked.into_iter().map(|(c, _)| c).collect(), provenance)
}

pub fn parse_concept_list(text: &str, source: &str) -> Result<ConceptSet> {
    let lines = parse_lines(text)?;
    ConceptSet::new(
        lines,
        Provenance {
            corpus_id: source.to_string(),
            strategy: "external".into(),
            min_frequency: None,
            stopwords_digest: None,
            lexicon_digest: None,
        },
    )
}

/// Loads a concept-set file, preserving file order.
pub fn load_concept_list(path: impl AsRef<Path>) -> Result<ConceptSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_concept_list(&text, &path.display().to_string())
}

pub fn save_concept_list(set: &ConceptSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, set.to_file_string()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, proptest, prop_assert, prop_assert_eq};

    fn lexicon(words: &[&str]) -> Strategy {
        Strategy::Lexicon(words.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_token("Consolidation.", 32).as_deref(), Some("consolidation"));
        assert_eq!(normalize_token("XR-2019", 32), None);
        assert_eq!(normalize_token("Pleural-based", 32).as_deref(), Some("pleural-based"));
        assert_eq!(normalize_token("(effusion),", 32).as_deref(), Some("effusion"));
        assert_eq!(normalize_token("a", 32), None);
        assert_eq!(normalize_token("heart's", 32), None);
        assert_eq!(normalize_token("left--lower", 32), None);
        assert_eq!(normalize_token("-", 32), None);
        assert_eq!(normalize_token("cardiomediastinal", 10), None);
    }

    /// Rule table applied by hand: (raw, expected).
    #[test]
    fn normalize_rule_table() {
        let table = [
            ("Pleural-based", Some("pleural-based")),
            ("\"Lungs\"", Some("lungs")),
            ("T12", None),
            ("...", None),
            ("AP/PA", None),
            ("Édema", Some("édema")),
            ("no.", Some("no")),
            ("x", None),
        ];
        for (raw, want) in table {
            assert_eq!(normalize_token(raw, 32).as_deref(), want, "{raw}");
        }
    }

    #[test]
    fn single_word_corpus() {
        let corpus = Corpus::Plain(vec!["heart heart heart".into()]);
        let set = extract_concepts(&corpus, "t", &ExtractionParams::new(lexicon(&["heart"]))).unwrap();
        assert_eq!(set.concepts(), &["heart".to_string()]);
        assert_eq!(set.provenance.strategy, "lexicon");
        assert!(set.provenance.lexicon_digest.is_some());
    }

    #[test]
    fn ordering_is_frequency_then_lexicographic() {
        let corpus = Corpus::Plain(vec!["lung heart effusion".into(), "lung effusion".into()]);
        let params = ExtractionParams::new(lexicon(&["lung", "heart", "effusion"]));
        let set = extract_concepts(&corpus, "t", &params).unwrap();
        assert_eq!(set.concepts(), &["effusion", "lung", "heart"]);
    }

    #[test]
    fn negation_still_contributes_the_noun() {
        let corpus = Corpus::Plain(vec!["No consolidation.".into()]);
        let set = extract_concepts(&corpus, "t", &ExtractionParams::new(lexicon(&["consolidation"]))).unwrap();
        assert_eq!(set.concepts(), &["consolidation"]);
    }

    #[test]
    fn empty_result_is_an_error() {
        let corpus = Corpus::Plain(vec!["the and of".into()]);
        let err = extract_concepts(&corpus, "t", &ExtractionParams::new(Strategy::Heuristic)).unwrap_err();
        assert!(matches!(err, Error::EmptyConceptSet(_)));
    }

    #[test]
    fn invalid_params() {
        let corpus = Corpus::Plain(vec!["heart".into()]);
        let mut params = ExtractionParams::new(lexicon(&["heart"]));
        params.min_frequency = 0;
        assert!(matches!(extract_concepts(&corpus, "t", &params), Err(Error::InvalidParam(_))));
        let empty_lex = ExtractionParams::new(Strategy::Lexicon(BTreeSet::new()));
        assert!(matches!(extract_concepts(&corpus, "t", &empty_lex), Err(Error::InvalidParam(_))));
        let tagged = ExtractionParams::new(Strategy::Pretagged);
        assert!(matches!(extract_concepts(&corpus, "t", &tagged), Err(Error::InvalidParam(_))));
        assert!(matches!(
            extract_concepts(&Corpus::Plain(vec![]), "t", &ExtractionParams::new(Strategy::Heuristic)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn pretagged_keeps_noun_tags() {
        let text = "The\tDT\nheart\tNN\nis\tVBZ\nnormal\tJJ\n\nLungs\tNNS\nclear\tJJ\nheart\tNN\n";
        let corpus = Corpus::parse_tagged(text).unwrap();
        assert_eq!(corpus.len(), 2);
        let set = extract_concepts(&corpus, "t", &ExtractionParams::new(Strategy::Pretagged)).unwrap();
        assert_eq!(set.concepts(), &["heart", "lungs"]);
    }

    #[test]
    fn pretagged_requires_tags() {
        assert!(Corpus::parse_tagged("heart\tNN\nlungs\n").is_err());
        assert!(Corpus::parse_tagged("heart\t\n").is_err());
    }

    #[test]
    fn heuristic_rules() {
        let corpus = Corpus::Plain(vec!["Mildly enlarged cardiac silhouette with small effusion".into()]);
        let set = extract_concepts(&corpus, "t", &ExtractionParams::new(Strategy::Heuristic)).unwrap();
        assert_eq!(set.concepts(), &["cardiac", "effusion", "silhouette", "small"]);
    }

    #[test]
    fn plain_corpus_splits_on_blank_lines() {
        let corpus = Corpus::parse_plain("first report\nline two\n\n\nsecond\n");
        assert_eq!(
            corpus,
            Corpus::Plain(vec!["first report\nline two".into(), "second".into()])
        );
    }

    #[test]
    fn concept_list_validation() {
        let set = parse_concept_list("atelectasis\neffusion\n", "f").unwrap();
        assert_eq!(set.len(), 2);
        assert!(matches!(parse_concept_list("Atelectasis\n", "f"), Err(Error::NotNormalized(c)) if c == "Atelectasis"));
        assert!(matches!(parse_concept_list("a\na\n", "f"), Err(Error::DuplicateConcept(c)) if c == "a"));
        assert!(matches!(parse_concept_list("a\n\nb\n", "f"), Err(Error::EmptyLine(2))));
        assert!(matches!(parse_concept_list(" a\n", "f"), Err(Error::NotNormalized(_))));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in "[A-Za-z0-9.,;:()'\"-]{0,20}") {
            if let Some(once) = normalize_token(&raw, 32) {
                prop_assert_eq!(normalize_token(&once, 32), Some(once.clone()));
                prop_assert!(is_normalized_concept(&once));
            }
        }

        #[test]
        fn raising_min_frequency_gives_subset(
            reports in prop::collection::vec(
                prop::collection::vec(prop::sample::select(vec!["lung", "heart", "effusion", "mass", "the", "rib"]), 1..12),
                1..10),
            floor in 1u32..4,
        ) {
            let corpus = Corpus::Plain(reports.iter().map(|r| r.join(" ")).collect());
            let params = |f| {
                let mut p = ExtractionParams::new(lexicon(&["lung", "heart", "effusion", "mass", "rib"]));
                p.min_frequency = f;
                p
            };
            let low = extract_concepts(&corpus, "t", &params(floor));
            let high = extract_concepts(&corpus, "t", &params(floor + 1));
            if let Ok(high) = high {
                let low = low.expect("lower floor keeps at least as much");
                for c in high.concepts() {
                    prop_assert!(low.index_of(c).is_some());
                }
            }
        }
    }
}
