//! Sentence-level inverted index with TF-IDF cosine ranking.
//!
//! Weights are `tf * ln(1 + N / df)` with raw term counts. Every dot product
//! and norm is summed in ascending term order, so `sim(a, b)` and
//! `sim(b, a)` are bit-identical.
//!
//! When an [`Analyzer`] carries a lexicon, each sentence also gets one
//! `concept:<predicate>` term per predicate whose trigger it mentions.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;
use std::{fs, io};

use thiserror::Error;

use crate::extraction::Lexicon;
use crate::kb::SourceId;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("sentence {index} of `{doc}` appears twice")]
    DuplicateSentence { doc: String, index: usize },
    #[error("cannot read `{path}`: {source}")]
    Io { path: String, source: io::Error },
    #[error("corpus file name `{0}` is not a valid source id")]
    BadFileName(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(BTreeSet<String>);

impl Stopwords {
    /// One word per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Stopwords {
        Stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn bundled() -> &'static Stopwords {
        static WORDS: OnceLock<Stopwords> = OnceLock::new();
        WORDS.get_or_init(|| Stopwords::parse(BUNDLED_STOPWORDS))
    }

    pub fn load(path: &Path) -> Result<Stopwords, RetrievalError> {
        fs::read_to_string(path)
            .map(|t| Stopwords::parse(&t))
            .map_err(|source| RetrievalError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Tokenizes with the bundled stopword list.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with(text, Stopwords::bundled())
}

/// Lowercase, split on non-alphanumerics, drop stopwords, strip a plural
/// `s` from tokens of four or more chars that do not end in `ss`.
pub fn tokenize_with(text: &str, stopwords: &Stopwords) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !stopwords.contains(t))
        .map(|t| {
            if t.chars().count() >= 4 && t.ends_with('s') && !t.ends_with("ss") {
                t[..t.len() - 1].to_string()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// Turns text into index terms.
#[derive(Debug, Clone)]
pub struct Analyzer {
    stopwords: Stopwords,
    lexicon: Option<Lexicon>,
}

impl Default for Analyzer {
    fn default() -> Self {
        Analyzer::new(Stopwords::bundled().clone())
    }
}

impl Analyzer {
    pub fn new(stopwords: Stopwords) -> Analyzer {
        Analyzer {
            stopwords,
            lexicon: None,
        }
    }

    pub fn with_concepts(mut self, lexicon: Lexicon) -> Analyzer {
        self.lexicon = Some(lexicon);
        self
    }

    pub fn tokens(&self, text: &str) -> Vec<String> {
        tokenize_with(text, &self.stopwords)
    }

    pub fn concepts(&self, text: &str) -> Vec<String> {
        match &self.lexicon {
            Some(lex) => lex
                .predicates_mentioned(text)
                .into_iter()
                .map(|p| format!("concept:{p}"))
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn terms(&self, text: &str) -> Vec<String> {
        let mut terms = self.tokens(text);
        terms.extend(self.concepts(text));
        terms
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRecord {
    pub doc: SourceId,
    pub index: usize,
    pub text: String,
    pub tokens: Vec<String>,
    pub concepts: Vec<String>,
}

impl SentenceRecord {
    pub fn new(doc: SourceId, index: usize, text: impl Into<String>, analyzer: &Analyzer) -> SentenceRecord {
        let text = text.into();
        SentenceRecord {
            doc,
            index,
            tokens: analyzer.tokens(&text),
            concepts: analyzer.concepts(&text),
            text,
        }
    }

    fn key(&self) -> (&SourceId, usize) {
        (&self.doc, self.index)
    }

    fn terms(&self) -> impl Iterator<Item = &String> {
        self.tokens.iter().chain(self.concepts.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Posting {
    pub doc: SourceId,
    pub index: usize,
    pub tf: usize,
}

type Vector = Vec<(String, f64)>;

#[derive(Debug, Clone)]
pub struct Index {
    analyzer: Analyzer,
    sentences: Vec<SentenceRecord>,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_freq: BTreeMap<String, usize>,
    vectors: Vec<Vector>,
    norms: Vec<f64>,
}

fn term_counts<'a>(terms: impl Iterator<Item = &'a String>) -> BTreeMap<&'a str, usize> {
    let mut counts = BTreeMap::new();
    for t in terms {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

fn norm(v: &Vector) -> f64 {
    v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
}

/// Cosine of two term-sorted vectors. Identical vectors score exactly 1.
fn cosine(a: &Vector, na: f64, b: &Vector, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

impl Index {
    /// Builds the index. Sentences are stored in `(doc, index)` order.
    pub fn build(mut sentences: Vec<SentenceRecord>, analyzer: Analyzer) -> Result<Index, RetrievalError> {
        sentences.sort_by(|a, b| a.key().cmp(&b.key()));
        for pair in sentences.windows(2) {
            if pair[0].key() == pair[1].key() {
                return Err(RetrievalError::DuplicateSentence {
                    doc: pair[0].doc.to_string(),
                    index: pair[0].index,
                });
            }
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for s in &sentences {
            for (term, tf) in term_counts(s.terms()) {
                postings.entry(term.to_string()).or_default().push(Posting {
                    doc: s.doc.clone(),
                    index: s.index,
                    tf,
                });
            }
        }
        let doc_freq = postings.iter().map(|(t, p)| (t.clone(), p.len())).collect();
        let mut index = Index {
            analyzer,
            sentences,
            postings,
            doc_freq,
            vectors: Vec::new(),
            norms: Vec::new(),
        };
        index.vectors = index
            .sentences
            .iter()
            .map(|s| index.weigh(term_counts(s.terms())))
            .collect();
        index.norms = index.vectors.iter().map(norm).collect();
        Ok(index)
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn sentences(&self) -> &[SentenceRecord] {
        &self.sentences
    }

    pub fn total_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.doc_freq.keys().map(String::as_str)
    }

    /// `ln(1 + N / df)`, zero for unseen terms.
    pub fn idf(&self, term: &str) -> f64 {
        match self.doc_freq(term) {
            0 => 0.0,
            df => (1.0 + self.total_sentences() as f64 / df as f64).ln(),
        }
    }

    fn weigh(&self, counts: BTreeMap<&str, usize>) -> Vector {
        counts
            .into_iter()
            .map(|(t, tf)| (t.to_string(), tf as f64 * self.idf(t)))
            .filter(|(_, w)| *w > 0.0)
            .collect()
    }

    fn position(&self, doc: &SourceId, index: usize) -> Option<usize> {
        self.sentences.binary_search_by(|s| s.key().cmp(&(doc, index))).ok()
    }

    /// Cosine similarity between two indexed sentences (by position).
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        cosine(&self.vectors[a], self.norms[a], &self.vectors[b], self.norms[b])
    }

    /// Best `k` sentences for `query`, scores descending, ties by
    /// `(doc, index)`. Only positive scores are returned.
    pub fn top_k(&self, query: &str, k: usize) -> Vec<(&SentenceRecord, f64)> {
        self.top_k_where(query, k, |_| true)
    }

    pub fn top_k_where(
        &self,
        query: &str,
        k: usize,
        keep: impl Fn(&SentenceRecord) -> bool,
    ) -> Vec<(&SentenceRecord, f64)> {
        let terms = self.analyzer.terms(query);
        let qv = self.weigh(term_counts(terms.iter()));
        let qn = norm(&qv);
        let mut candidates = BTreeSet::new();
        for (term, _) in &qv {
            for p in self.postings(term) {
                candidates.insert(
                    self.position(&p.doc, p.index)
                        .expect("postings point at indexed sentences"),
                );
            }
        }
        let mut hits: Vec<(usize, f64)> = candidates
            .into_iter()
            .filter(|&i| keep(&self.sentences[i]))
            .map(|i| (i, cosine(&qv, qn, &self.vectors[i], self.norms[i])))
            .filter(|(_, score)| *score > 0.0)
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        hits.into_iter().map(|(i, s)| (&self.sentences[i], s)).collect()
    }

    /// Every cross-document pair scoring at least `threshold`, each once with
    /// the lower doc first, by descending score then position.
    pub fn candidate_pairs(&self, threshold: f64) -> Vec<(&SentenceRecord, &SentenceRecord, f64)> {
        let n = self.sentences.len();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.sentences[i].doc == self.sentences[j].doc {
                    continue;
                }
                let score = self.similarity(i, j);
                if score >= threshold {
                    pairs.push((i, j, score));
                }
            }
        }
        pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        pairs
            .into_iter()
            .map(|(i, j, s)| (&self.sentences[i], &self.sentences[j], s))
            .collect()
    }
}

/// Reads a corpus directory: every `*.txt` file is one document whose file
/// stem is its source id, with one sentence per non-blank line.
pub fn read_corpus(dir: &Path) -> Result<Vec<(SourceId, Vec<String>)>, RetrievalError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| RetrievalError::Io { path, source }
    };
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    let mut docs = Vec::new();
    for path in files {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let id = SourceId::new(stem.clone()).map_err(|_| RetrievalError::BadFileName(stem))?;
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        docs.push((id, lines));
    }
    Ok(docs)
}

/// Sentence records for a corpus read by [`read_corpus`].
pub fn corpus_records(docs: &[(SourceId, Vec<String>)], analyzer: &Analyzer) -> Vec<SentenceRecord> {
    docs.iter()
        .flat_map(|(doc, lines)| {
            lines
                .iter()
                .enumerate()
                .map(move |(i, line)| SentenceRecord::new(doc.clone(), i, line.clone(), analyzer))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src(s: &str) -> SourceId {
        SourceId::new(s).unwrap()
    }

    fn index(sentences: &[(&str, usize, &str)]) -> Index {
        let analyzer = Analyzer::default();
        let records = sentences
            .iter()
            .map(|(d, i, t)| SentenceRecord::new(src(d), *i, *t, &analyzer))
            .collect();
        Index::build(records, analyzer).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Biennial screening mammography is recommended."),
            vec!["biennial", "screening", "mammography", "recommended"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("women aged 50 to 74"), vec!["women", "aged", "50", "74"]);
        assert_eq!(
            tokenize("Mammograms every 2 years; glass"),
            vec!["mammogram", "every", "2", "year", "glass"]
        );
    }

    #[test]
    fn bundled_stopwords() {
        let n = Stopwords::bundled().len();
        assert!((110..=130).contains(&n), "{n}");
    }

    #[test]
    fn doc_freq_counts_sentences() {
        let idx = index(&[
            ("A", 0, "Annual mammography. Mammography again."),
            ("B", 0, "Biennial mammography."),
        ]);
        assert_eq!(idx.doc_freq("mammography"), 2);
        assert_eq!(idx.postings("mammography")[0].tf, 2);
        assert_eq!(idx.doc_freq("annual"), 1);
    }

    #[test]
    fn empty_index() {
        let idx = index(&[]);
        assert_eq!(idx.total_sentences(), 0);
        assert!(idx.top_k("mammography", 3).is_empty());
        assert!(idx.candidate_pairs(0.0).is_empty());
    }

    #[test]
    fn duplicate_sentences_are_rejected() {
        let analyzer = Analyzer::default();
        let records = vec![
            SentenceRecord::new(src("A"), 0, "x", &analyzer),
            SentenceRecord::new(src("A"), 0, "y", &analyzer),
        ];
        assert!(matches!(
            Index::build(records, analyzer),
            Err(RetrievalError::DuplicateSentence { .. })
        ));
    }

    #[test]
    fn self_query_ranks_first() {
        let idx = index(&[
            ("A", 0, "Annual screening mammography for women aged 40 to 49."),
            ("A", 1, "Clinical breast exam is not recommended."),
            ("B", 0, "Biennial screening mammography for women aged 50 to 74."),
        ]);
        let hits = idx.top_k("Biennial screening mammography for women aged 50 to 74.", 3);
        assert_eq!(hits[0].0.doc.as_str(), "B");
        assert!((hits[0].1 - 1.0).abs() < 1e-9);
        assert!(hits.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn unknown_query_is_empty() {
        let idx = index(&[("A", 0, "mammography")]);
        assert!(idx.top_k("colonoscopy", 5).is_empty());
        assert!(idx.top_k("", 5).is_empty());
    }

    #[test]
    fn pairs_are_cross_document() {
        let idx = index(&[
            ("A", 0, "annual mammography"),
            ("A", 1, "biennial mammography"),
            ("B", 0, "annual mammography"),
            ("C", 0, "unrelated words"),
        ]);
        assert_eq!(idx.candidate_pairs(0.0).len(), 5);
        let exact = idx.candidate_pairs(1.0);
        assert_eq!(exact.len(), 1);
        assert_eq!((exact[0].0.doc.as_str(), exact[0].1.doc.as_str()), ("A", "B"));
        for (a, b, _) in idx.candidate_pairs(0.0) {
            assert!(a.doc < b.doc);
        }
    }

    #[test]
    fn similarity_is_symmetric() {
        let idx = index(&[
            ("A", 0, "annual mammography for women aged 40 to 49"),
            ("B", 0, "biennial mammography for women aged 50 to 74"),
        ]);
        assert_eq!(idx.similarity(0, 1).to_bits(), idx.similarity(1, 0).to_bits());
    }
}
