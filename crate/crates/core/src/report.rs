//! Drivers behind the `glc` subcommands: checking a knowledge base, running
//! the retrieve-extract-classify pipeline over a corpus, and scoring that
//! pipeline against gold labels.
//!
//! Reports serialize to JSON with sorted keys and no timestamps, so two runs
//! over the same inputs produce identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::{env, fs};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dsl::{format_atom, parse_kb, ParseError};
use crate::extraction::{extract_atom, load_lexicon, ExtractionResult, Lexicon, Span};
use crate::kb::{
    check_internal_consistency, classify_pair, find_findings, lattice_and, Atom, Classification, Finding, FindingKind,
    KbError, KnowledgeBase, NotComparableReason, SourceId, Violation,
};
use crate::retrieval::{corpus_records, read_corpus, Analyzer, Index, RetrievalError, SentenceRecord, Stopwords};

/// Environment variable naming a replacement stopword file.
pub const STOPWORDS_ENV: &str = "GLC_STOPWORDS";
/// Default similarity threshold for `pipeline` candidate pairs.
pub const DEFAULT_PAIR_THRESHOLD: f64 = 0.2;
/// Default minimum score of the sentence chosen for an evaluation cell.
pub const DEFAULT_EVAL_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{path}: {} parse error(s)", errors.len())]
    Parse { path: String, errors: Vec<ParseError> },
    #[error("{} internal consistency violation(s)", .0.len())]
    Inconsistent(Vec<Violation>),
    #[error("cannot read `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("{0}")]
    Input(String),
    #[error("output failed schema validation")]
    Schema,
}

impl AppError {
    /// Detail lines for standard error.
    pub fn details(&self, kb: Option<&KnowledgeBase>) -> Vec<String> {
        match self {
            AppError::Parse { path, errors } => errors.iter().map(|e| format!("{path}:{e}")).collect(),
            AppError::Inconsistent(violations) => violations
                .iter()
                .map(|v| {
                    let atom = kb
                        .and_then(|kb| format_atom(kb, &v.atom).ok())
                        .unwrap_or_else(|| v.atom.predicate.clone());
                    format!("source {}: bottom on {} in {}", v.source, v.sorts.join(", "), atom)
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

fn read(path: &Path) -> Result<String, AppError> {
    fs::read_to_string(path).map_err(|source| AppError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_kb_file(path: &Path) -> Result<KnowledgeBase, AppError> {
    parse_kb(&read(path)?).map_err(|errors| AppError::Parse {
        path: path.display().to_string(),
        errors,
    })
}

pub fn load_lexicon_file(path: &Path, header: &KnowledgeBase) -> Result<Lexicon, AppError> {
    load_lexicon(&read(path)?, header).map_err(|errors| AppError::Parse {
        path: path.display().to_string(),
        errors,
    })
}

/// Stopwords from `flag`, else from `$GLC_STOPWORDS`, else the bundled list.
pub fn resolve_stopwords(flag: Option<&Path>) -> Result<(Stopwords, Option<String>), AppError> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| env::var_os(STOPWORDS_ENV).map(PathBuf::from));
    match path {
        Some(p) => Ok((Stopwords::load(&p)?, Some(p.display().to_string()))),
        None => Ok((Stopwords::bundled().clone(), None)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRef {
    pub doc: String,
    pub index: usize,
    pub text: String,
    pub spans: Vec<Span>,
}

impl SentenceRef {
    fn of(record: &SentenceRecord, spans: Vec<Span>) -> SentenceRef {
        SentenceRef {
            doc: record.doc.to_string(),
            index: record.index,
            text: record.text.clone(),
            spans,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingRecord {
    pub kind: FindingKind,
    pub predicate: String,
    pub conflict_sorts: Vec<String>,
    pub refined_sorts: Vec<String>,
    pub condition_scope: bool,
    pub condition_overlap: BTreeMap<String, String>,
    pub derived_params: BTreeMap<String, String>,
    pub derived_atom: String,
    pub provenances: Vec<String>,
    pub source_atoms: Vec<String>,
    pub sentences: Vec<SentenceRef>,
}

impl FindingRecord {
    fn new(kb: &KnowledgeBase, finding: &Finding, sentences: Vec<SentenceRef>) -> Result<FindingRecord, AppError> {
        let render = |m: &BTreeMap<String, crate::lattice::ParamValue>| {
            m.iter().map(|(k, v)| (k.clone(), v.to_string())).collect()
        };
        let derived = Atom {
            predicate: finding.predicate.clone(),
            params: finding.derived_params.clone(),
            provenance: finding.provenances.clone(),
        };
        Ok(FindingRecord {
            kind: finding.kind,
            predicate: finding.predicate.clone(),
            conflict_sorts: finding.conflict_sorts.clone(),
            refined_sorts: finding.refined_sorts.clone(),
            condition_scope: finding.condition_scope,
            condition_overlap: render(&finding.condition_overlap),
            derived_params: render(&finding.derived_params),
            derived_atom: format_atom(kb, &derived)?,
            provenances: finding.provenances.iter().map(ToString::to_string).collect(),
            source_atoms: finding
                .source_atoms
                .iter()
                .map(|a| format_atom(kb, a))
                .collect::<Result<_, _>>()?,
            sentences,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSide {
    pub atom: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sentence: Option<SentenceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub left: PairSide,
    pub right: PairSide,
    pub classification: Classification,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceFailure {
    pub doc: String,
    pub index: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub left: SentenceRef,
    pub right: SentenceRef,
    pub score: f64,
    pub failures: Vec<SentenceFailure>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub compared_pairs: usize,
    pub agreements: usize,
    pub disagreements: usize,
    pub contradictions: usize,
    pub not_comparable: usize,
    pub extraction_failures: usize,
    pub findings: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kb_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub corpus: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lexicon: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub header: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub queries: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gold: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stopwords: Option<String>,
}

/// Outcome of `check` or `pipeline`.
///
/// Every compared pair lands in exactly one of `conflicts`, `agreements`,
/// `not_comparable` or `extraction_failures`. `findings` lists the derived
/// conflicts with provenance: closure-derived for `check`, one per
/// conflicting pair for `pipeline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: String,
    pub config: ConfigEcho,
    pub findings: Vec<FindingRecord>,
    pub conflicts: Vec<PairRecord>,
    pub agreements: Vec<PairRecord>,
    pub not_comparable: Vec<PairRecord>,
    pub extraction_failures: Vec<PairFailure>,
    pub sentence_failures: Vec<SentenceFailure>,
    pub stats: Stats,
}

impl Report {
    fn new(mode: &str, config: ConfigEcho) -> Report {
        Report {
            mode: mode.to_string(),
            config,
            findings: Vec::new(),
            conflicts: Vec::new(),
            agreements: Vec::new(),
            not_comparable: Vec::new(),
            extraction_failures: Vec::new(),
            sentence_failures: Vec::new(),
            stats: Stats::default(),
        }
    }

    fn file_pair(&mut self, pair: PairRecord) {
        self.stats.compared_pairs += 1;
        match &pair.classification {
            Classification::Agreement => {
                self.stats.agreements += 1;
                self.agreements.push(pair);
            }
            Classification::Disagreement { .. } => {
                self.stats.disagreements += 1;
                self.conflicts.push(pair);
            }
            Classification::Contradiction { .. } => {
                self.stats.contradictions += 1;
                self.conflicts.push(pair);
            }
            Classification::NotComparable { .. } => {
                self.stats.not_comparable += 1;
                self.not_comparable.push(pair);
            }
        }
    }

    pub fn has_contradictions(&self) -> bool {
        self.findings.iter().any(|f| f.kind == FindingKind::Contradiction)
    }

    /// Sorted-key JSON, checked by reading it back into a `Report`.
    pub fn to_json(&self) -> Result<String, AppError> {
        to_sorted_json(self)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let s = &self.stats;
        let _ = writeln!(
            out,
            "glc {}: {} contradiction(s), {} disagreement(s) in findings; {} pair(s) compared \
             ({} agree, {} disagree, {} contradict, {} not comparable, {} extraction failure(s))",
            self.mode,
            self.findings
                .iter()
                .filter(|f| f.kind == FindingKind::Contradiction)
                .count(),
            self.findings
                .iter()
                .filter(|f| f.kind == FindingKind::Disagreement)
                .count(),
            s.compared_pairs,
            s.agreements,
            s.disagreements,
            s.contradictions,
            s.not_comparable,
            s.extraction_failures,
        );
        for f in &self.findings {
            let kind = match f.kind {
                FindingKind::Contradiction => "CONTRADICTION",
                FindingKind::Disagreement if f.condition_scope => "DISAGREEMENT (condition scope)",
                FindingKind::Disagreement => "DISAGREEMENT",
            };
            let _ = writeln!(out, "\n{kind} {} on {}", f.predicate, f.conflict_sorts.join(", "));
            let also: Vec<&String> = f
                .refined_sorts
                .iter()
                .filter(|s| !f.conflict_sorts.contains(s))
                .collect();
            if !also.is_empty() {
                let joined: Vec<&str> = also.iter().map(|s| s.as_str()).collect();
                let _ = writeln!(out, "  also refines: {}", joined.join(", "));
            }
            let _ = writeln!(out, "  sources: {}", f.provenances.join(", "));
            if !f.condition_overlap.is_empty() {
                let conds: Vec<String> = f.condition_overlap.iter().map(|(k, v)| format!("{k} {v}")).collect();
                let _ = writeln!(out, "  conditions: {}", conds.join(", "));
            }
            let _ = writeln!(out, "  derived: {}", f.derived_atom);
            for a in &f.source_atoms {
                let _ = writeln!(out, "  from:    {a}");
            }
            for sref in &f.sentences {
                let _ = writeln!(out, "  [{}#{}] {}", sref.doc, sref.index, sref.text);
            }
        }
        if !self.sentence_failures.is_empty() {
            let _ = writeln!(out, "\nsentences without an extracted recommendation:");
            for f in &self.sentence_failures {
                let _ = writeln!(out, "  [{}#{}] {}: {}", f.doc, f.index, f.reason, f.text);
            }
        }
        out
    }
}

/// Rebuilds every JSON object with keys in ascending order, whatever map
/// type serde_json was compiled with.
fn sort_keys(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sort_keys(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

fn to_sorted_json<T>(value: &T) -> Result<String, AppError>
where
    T: Serialize + for<'de> Deserialize<'de> + PartialEq,
{
    let tree = serde_json::to_value(value).map_err(|_| AppError::Schema)?;
    let text = serde_json::to_string_pretty(&sort_keys(tree)).map_err(|_| AppError::Schema)?;
    let back: T = serde_json::from_str(&text).map_err(|_| AppError::Schema)?;
    if back != *value {
        return Err(AppError::Schema);
    }
    Ok(text + "\n")
}

/// Checks a parsed knowledge base: per-source consistency, all same-predicate
/// cross-source pairs, and closure-derived findings.
pub fn check_kb(kb: KnowledgeBase, config: ConfigEcho) -> Result<Report, AppError> {
    let mut violations = Vec::new();
    for source in kb.sources() {
        violations.extend(check_internal_consistency(&kb, source.as_str())?);
    }
    if !violations.is_empty() {
        return Err(AppError::Inconsistent(violations));
    }
    let validated = kb.validate().map_err(|e| AppError::Inconsistent(e.1))?;
    let kb = validated.kb();

    let mut report = Report::new("check", config);
    let atoms = kb.atoms();
    for i in 0..atoms.len() {
        for j in (i + 1)..atoms.len() {
            let (x, y) = (&atoms[i], &atoms[j]);
            if x.predicate != y.predicate || !x.provenance.is_disjoint(&y.provenance) {
                continue;
            }
            let classification = classify_pair(kb, x, y)?;
            report.file_pair(PairRecord {
                left: PairSide {
                    atom: format_atom(kb, x)?,
                    sentence: None,
                },
                right: PairSide {
                    atom: format_atom(kb, y)?,
                    sentence: None,
                },
                classification,
                score: None,
            });
        }
    }
    for finding in find_findings(&validated)? {
        report.findings.push(FindingRecord::new(kb, &finding, Vec::new())?);
    }
    report.stats.findings = report.findings.len();
    Ok(report)
}

pub fn run_check(path: &Path) -> Result<Report, AppError> {
    let kb = load_kb_file(path)?;
    check_kb(
        kb,
        ConfigEcho {
            kb_file: Some(path.display().to_string()),
            ..Default::default()
        },
    )
}

/// Loaded inputs shared by `pipeline` and `eval`.
pub struct Corpus {
    pub header: KnowledgeBase,
    pub lexicon: Lexicon,
    pub index: Index,
}

impl Corpus {
    pub fn new(
        header: KnowledgeBase,
        lexicon: Lexicon,
        docs: &[(SourceId, Vec<String>)],
        stopwords: Stopwords,
    ) -> Result<Corpus, AppError> {
        for (doc, _) in docs {
            if header.source(doc.as_str()).is_none() {
                return Err(AppError::Input(format!(
                    "corpus document `{doc}` is not declared as a source in the header"
                )));
            }
        }
        let analyzer = Analyzer::new(stopwords).with_concepts(lexicon.clone());
        let records = corpus_records(docs, &analyzer);
        let index = Index::build(records, analyzer)?;
        Ok(Corpus { header, lexicon, index })
    }

    pub fn load(corpus: &Path, lexicon: &Path, header: &Path, stopwords: Stopwords) -> Result<Corpus, AppError> {
        let header = load_kb_file(header)?;
        let lexicon = load_lexicon_file(lexicon, &header)?;
        let docs = read_corpus(corpus)?;
        Corpus::new(header, lexicon, &docs, stopwords)
    }

    fn extract(&self, record: &SentenceRecord) -> Result<(Atom, Vec<Span>), String> {
        match extract_atom(&record.text, &self.lexicon, &record.doc) {
            Ok(ExtractionResult::Extracted { atom, matched_spans }) => Ok((atom, matched_spans)),
            Ok(ExtractionResult::NoRecommendation { reason }) => Err(reason),
            Err(e) => Err(e.to_string()),
        }
    }
}

pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub lexicon: PathBuf,
    pub header: PathBuf,
    pub threshold: f64,
    pub stopwords: Option<PathBuf>,
}

/// Retrieve candidate pairs, extract both sentences, classify.
pub fn pipeline(corpus: &Corpus, threshold: f64, config: ConfigEcho) -> Result<Report, AppError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(AppError::Input(format!("threshold {threshold} is outside [0, 1]")));
    }
    let kb = &corpus.header;
    let mut report = Report::new("pipeline", config);

    let extracted: Vec<Result<(Atom, Vec<Span>), String>> =
        corpus.index.sentences().iter().map(|r| corpus.extract(r)).collect();
    let position = |r: &SentenceRecord| {
        corpus
            .index
            .sentences()
            .iter()
            .position(|s| s.doc == r.doc && s.index == r.index)
            .expect("record comes from the index")
    };
    for (record, result) in corpus.index.sentences().iter().zip(&extracted) {
        if let Err(reason) = result {
            report.sentence_failures.push(SentenceFailure {
                doc: record.doc.to_string(),
                index: record.index,
                text: record.text.clone(),
                reason: reason.clone(),
            });
        }
    }

    for (a, b, score) in corpus.index.candidate_pairs(threshold) {
        let (ea, eb) = (&extracted[position(a)], &extracted[position(b)]);
        let ((xa, sa), (xb, sb)) = match (ea, eb) {
            (Ok(x), Ok(y)) => (x, y),
            _ => {
                let failures = [(a, ea), (b, eb)]
                    .into_iter()
                    .filter_map(|(r, e)| {
                        e.as_ref().err().map(|reason| SentenceFailure {
                            doc: r.doc.to_string(),
                            index: r.index,
                            text: r.text.clone(),
                            reason: reason.clone(),
                        })
                    })
                    .collect();
                report.stats.compared_pairs += 1;
                report.stats.extraction_failures += 1;
                report.extraction_failures.push(PairFailure {
                    left: SentenceRef::of(a, Vec::new()),
                    right: SentenceRef::of(b, Vec::new()),
                    score,
                    failures,
                });
                continue;
            }
        };
        let classification = classify_pair(kb, xa, xb)?;
        let (ra, rb) = (SentenceRef::of(a, sa.clone()), SentenceRef::of(b, sb.clone()));
        if classification.is_conflict() {
            let derived = lattice_and(kb, xa, xb)?;
            if let Some(finding) = Finding::from_derived(kb, &derived, &[xa.clone(), xb.clone()]) {
                report
                    .findings
                    .push(FindingRecord::new(kb, &finding, vec![ra.clone(), rb.clone()])?);
            }
        }
        report.file_pair(PairRecord {
            left: PairSide {
                atom: format_atom(kb, xa)?,
                sentence: Some(ra),
            },
            right: PairSide {
                atom: format_atom(kb, xb)?,
                sentence: Some(rb),
            },
            classification,
            score: Some(score),
        });
    }
    report.stats.findings = report.findings.len();
    Ok(report)
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<Report, AppError> {
    let (stopwords, stop_path) = resolve_stopwords(config.stopwords.as_deref())?;
    let corpus = Corpus::load(&config.corpus, &config.lexicon, &config.header, stopwords)?;
    pipeline(
        &corpus,
        config.threshold,
        ConfigEcho {
            corpus: Some(config.corpus.display().to_string()),
            lexicon: Some(config.lexicon.display().to_string()),
            header: Some(config.header.display().to_string()),
            threshold: Some(config.threshold),
            stopwords: stop_path,
            ..Default::default()
        },
    )
}

/// Gold and predicted cell labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Agreement,
    Disagreement,
    Contradiction,
    NotComparable,
    NoRecommendation,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Agreement,
        Label::Disagreement,
        Label::Contradiction,
        Label::NotComparable,
        Label::NoRecommendation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Label::Agreement => "Agreement",
            Label::Disagreement => "Disagreement",
            Label::Contradiction => "Contradiction",
            Label::NotComparable => "NotComparable",
            Label::NoRecommendation => "NoRecommendation",
        }
    }

    pub fn is_conflict(self) -> bool {
        matches!(self, Label::Disagreement | Label::Contradiction)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldLabel {
    pub query_id: String,
    pub doc: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldFile {
    pub labels: Vec<GoldLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

/// One `id: sentence` per line; blank lines and `#` comments are skipped.
pub fn parse_queries(text: &str) -> Result<Vec<Query>, AppError> {
    let mut queries: Vec<Query> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, body) = line
            .split_once(':')
            .ok_or_else(|| AppError::Input(format!("queries line {}: expected `id: sentence`", n + 1)))?;
        let (id, body) = (id.trim(), body.trim());
        if id.is_empty() || body.is_empty() {
            return Err(AppError::Input(format!("queries line {}: empty id or sentence", n + 1)));
        }
        if queries.iter().any(|q| q.id == id) {
            return Err(AppError::Input(format!("queries line {}: duplicate id `{id}`", n + 1)));
        }
        queries.push(Query {
            id: id.to_string(),
            text: body.to_string(),
        });
    }
    Ok(queries)
}

pub fn parse_gold(text: &str) -> Result<GoldFile, AppError> {
    let gold: GoldFile = serde_json::from_str(text).map_err(|e| AppError::Input(format!("gold file: {e}")))?;
    let mut seen = BTreeSet::new();
    for l in &gold.labels {
        if !seen.insert((l.query_id.as_str(), l.doc.as_str())) {
            return Err(AppError::Input(format!(
                "gold file: duplicate cell ({}, {})",
                l.query_id, l.doc
            )));
        }
    }
    Ok(gold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub query_id: String,
    pub doc: String,
    pub gold: Label,
    pub predicted: Label,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sentence: Option<SentenceRef>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    /// `None` when the class was never predicted.
    pub precision: Option<f64>,
    /// `None` when the class never occurs in the gold labels.
    pub recall: Option<f64>,
}

/// Conflict (contradiction or disagreement) versus everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConfigEcho,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// gold label → predicted label → count.
    pub confusion: BTreeMap<Label, BTreeMap<Label, usize>>,
    pub binary: BinaryMetrics,
    pub errors: Vec<CellResult>,
    pub cells: Vec<CellResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, AppError> {
        to_sorted_json(self)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "accuracy: {:.4} ({}/{})   binary conflict accuracy: {:.4}   FP: {}   FN: {}",
            self.accuracy,
            self.correct,
            self.total,
            self.binary.accuracy,
            self.binary.false_positives,
            self.binary.false_negatives
        );
        let _ = writeln!(
            out,
            "\n{:<18} {:>5} {:>5} {:>5} {:>9} {:>7}",
            "class", "gold", "pred", "ok", "precision", "recall"
        );
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        for m in &self.per_class {
            let _ = writeln!(
                out,
                "{:<18} {:>5} {:>5} {:>5} {:>9} {:>7}",
                m.label.name(),
                m.gold,
                m.predicted,
                m.correct,
                fmt(m.precision),
                fmt(m.recall)
            );
        }
        let _ = writeln!(out, "\nconfusion (rows gold, columns predicted):");
        let _ = write!(out, "{:<18}", "");
        for l in Label::ALL {
            let _ = write!(out, " {:>6}", &l.name()[..6]);
        }
        let _ = writeln!(out);
        for g in Label::ALL {
            let _ = write!(out, "{:<18}", g.name());
            for p in Label::ALL {
                let n = self.confusion.get(&g).and_then(|r| r.get(&p)).copied().unwrap_or(0);
                let _ = write!(out, " {n:>6}");
            }
            let _ = writeln!(out);
        }
        if !self.errors.is_empty() {
            let _ = writeln!(out, "\nerrors:");
            for c in &self.errors {
                let _ = writeln!(
                    out,
                    "  {} x {}: gold {} predicted {}{}",
                    c.query_id,
                    c.doc,
                    c.gold.name(),
                    c.predicted.name(),
                    c.sentence
                        .as_ref()
                        .map(|s| format!(" [{}#{}] {}", s.doc, s.index, s.text))
                        .unwrap_or_default()
                );
            }
        }
        out
    }
}

/// Labels one (query, document) cell.
///
/// Candidates are the document's sentences that mention the query's
/// predicate, in retrieval order. The first one scoring at least `threshold`
/// whose extracted atom has the query's predicate and overlapping conditions
/// decides the label. When none qualifies, the top candidate decides. No
/// candidate, a top score below `threshold`, a failed extraction or a
/// different predicate all mean the document makes no recommendation on the
/// query's subject.
fn label_cell(
    corpus: &Corpus,
    query: &Query,
    query_atom: &Atom,
    doc: &SourceId,
    threshold: f64,
) -> Result<CellResult, AppError> {
    let mut cell = CellResult {
        query_id: query.id.clone(),
        doc: doc.to_string(),
        gold: Label::NoRecommendation,
        predicted: Label::NoRecommendation,
        sentence: None,
        score: None,
        note: None,
    };
    let concept = format!("concept:{}", query_atom.predicate);
    let hits = corpus.index.top_k_where(&query.text, usize::MAX, |s| {
        &s.doc == doc && s.concepts.contains(&concept)
    });
    let Some(&(top, top_score)) = hits.first() else {
        cell.note = Some(format!("no sentence mentions {}", query_atom.predicate));
        return Ok(cell);
    };
    if top_score < threshold {
        cell.score = Some(top_score);
        cell.sentence = Some(SentenceRef::of(top, Vec::new()));
        cell.note = Some("best sentence below threshold".to_string());
        return Ok(cell);
    }

    let mut chosen = None;
    for (rank, &(record, score)) in hits.iter().enumerate().take_while(|(_, (_, s))| *s >= threshold) {
        let Ok((atom, spans)) = corpus.extract(record) else {
            continue;
        };
        let classification = classify_pair(&corpus.header, query_atom, &atom)?;
        if !matches!(classification, Classification::NotComparable { .. }) {
            if rank > 0 {
                cell.note = Some(format!("condition match at rank {}", rank + 1));
            }
            chosen = Some((record, score, spans, classification));
            break;
        }
    }
    let (record, score, spans, classification) = match chosen {
        Some(c) => c,
        None => match corpus.extract(top) {
            Ok((atom, spans)) => {
                let classification = classify_pair(&corpus.header, query_atom, &atom)?;
                (top, top_score, spans, classification)
            }
            Err(reason) => {
                cell.score = Some(top_score);
                cell.sentence = Some(SentenceRef::of(top, Vec::new()));
                cell.note = Some(reason);
                return Ok(cell);
            }
        },
    };
    cell.score = Some(score);
    cell.sentence = Some(SentenceRef::of(record, spans));
    cell.predicted = match classification {
        Classification::Agreement => Label::Agreement,
        Classification::Disagreement { .. } => Label::Disagreement,
        Classification::Contradiction { .. } => Label::Contradiction,
        Classification::NotComparable {
            reason: NotComparableReason::PredicateMismatch,
        } => {
            cell.note = Some("best sentence concerns a different predicate".to_string());
            Label::NoRecommendation
        }
        Classification::NotComparable { .. } => Label::NotComparable,
    };
    Ok(cell)
}

/// Scores every (query, document) cell against `gold`.
pub fn evaluate(
    corpus: &Corpus,
    queries: &[Query],
    gold: &GoldFile,
    threshold: f64,
    config: ConfigEcho,
) -> Result<EvalReport, AppError> {
    let docs: Vec<SourceId> = {
        let mut d: Vec<SourceId> = corpus.index.sentences().iter().map(|s| s.doc.clone()).collect();
        d.dedup();
        d
    };
    let gold_map: BTreeMap<(&str, &str), Label> = gold
        .labels
        .iter()
        .map(|l| ((l.query_id.as_str(), l.doc.as_str()), l.label))
        .collect();
    for l in &gold.labels {
        if !queries.iter().any(|q| q.id == l.query_id) {
            return Err(AppError::Input(format!(
                "gold references unknown query `{}`",
                l.query_id
            )));
        }
        if !docs.iter().any(|d| d.as_str() == l.doc) {
            return Err(AppError::Input(format!("gold references unknown document `{}`", l.doc)));
        }
    }

    let query_source = SourceId::new("query").expect("non-empty");
    let mut cells = Vec::new();
    for query in queries {
        let query_atom = match extract_atom(&query.text, &corpus.lexicon, &query_source) {
            Ok(ExtractionResult::Extracted { atom, .. }) => atom,
            Ok(ExtractionResult::NoRecommendation { reason }) => {
                return Err(AppError::Input(format!("query `{}`: {reason}", query.id)))
            }
            Err(e) => return Err(AppError::Input(format!("query `{}`: {e}", query.id))),
        };
        for doc in &docs {
            let gold_label = *gold_map
                .get(&(query.id.as_str(), doc.as_str()))
                .ok_or_else(|| AppError::Input(format!("gold has no label for ({}, {doc})", query.id)))?;
            let mut cell = label_cell(corpus, query, &query_atom, doc, threshold)?;
            cell.gold = gold_label;
            cells.push(cell);
        }
    }
    Ok(score_cells(cells, config))
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn score_cells(cells: Vec<CellResult>, config: ConfigEcho) -> EvalReport {
    let total = cells.len();
    let correct = cells.iter().filter(|c| c.gold == c.predicted).count();
    let mut confusion: BTreeMap<Label, BTreeMap<Label, usize>> = BTreeMap::new();
    for c in &cells {
        *confusion.entry(c.gold).or_default().entry(c.predicted).or_insert(0) += 1;
    }
    let per_class = Label::ALL
        .iter()
        .map(|&label| {
            let gold = cells.iter().filter(|c| c.gold == label).count();
            let predicted = cells.iter().filter(|c| c.predicted == label).count();
            let ok = cells.iter().filter(|c| c.gold == label && c.predicted == label).count();
            ClassMetrics {
                label,
                gold,
                predicted,
                correct: ok,
                precision: ratio(ok, predicted),
                recall: ratio(ok, gold),
            }
        })
        .collect();
    let count = |g: bool, p: bool| {
        cells
            .iter()
            .filter(|c| c.gold.is_conflict() == g && c.predicted.is_conflict() == p)
            .count()
    };
    let (tp, fp, fn_, tn) = (
        count(true, true),
        count(false, true),
        count(true, false),
        count(false, false),
    );
    let binary = BinaryMetrics {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
        accuracy: ratio(tp + tn, total).unwrap_or(0.0),
    };
    EvalReport {
        config,
        total,
        correct,
        accuracy: ratio(correct, total).unwrap_or(0.0),
        per_class,
        confusion,
        binary,
        errors: cells.iter().filter(|c| c.gold != c.predicted).cloned().collect(),
        cells,
    }
}

pub struct EvalConfig {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub gold: PathBuf,
    pub lexicon: PathBuf,
    pub header: PathBuf,
    pub threshold: f64,
    pub stopwords: Option<PathBuf>,
}

pub fn run_eval(config: &EvalConfig) -> Result<EvalReport, AppError> {
    let (stopwords, stop_path) = resolve_stopwords(config.stopwords.as_deref())?;
    let corpus = Corpus::load(&config.corpus, &config.lexicon, &config.header, stopwords)?;
    let queries = parse_queries(&read(&config.queries)?)?;
    let gold = parse_gold(&read(&config.gold)?)?;
    evaluate(
        &corpus,
        &queries,
        &gold,
        config.threshold,
        ConfigEcho {
            corpus: Some(config.corpus.display().to_string()),
            lexicon: Some(config.lexicon.display().to_string()),
            header: Some(config.header.display().to_string()),
            queries: Some(config.queries.display().to_string()),
            gold: Some(config.gold.display().to_string()),
            threshold: Some(config.threshold),
            stopwords: stop_path,
            ..Default::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE1: &str = "\
sort age: interval(years) role condition;
sort frequency: interval(months) role action;
sort modality: set {mammography, cbe} role action;
source o1; source o2;
recommend breast_screening { age: [50,74], frequency: [12,12], modality: {mammography, cbe} } @ o1;
recommend breast_screening { age: [50,74], frequency: [24,24], modality: {mammography} } @ o2;
";

    #[test]
    fn check_example1() {
        let report = check_kb(parse_kb(EXAMPLE1).unwrap(), ConfigEcho::default()).unwrap();
        assert!(report.has_contradictions());
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.stats.compared_pairs, 1);
        assert_eq!(report.stats.contradictions, 1);
        assert_eq!(report.findings[0].derived_params["frequency"], "bottom");
        let text = report.render_text();
        assert!(text.contains("CONTRADICTION breast_screening on frequency"));
        assert!(text.contains("also refines: modality"));
    }

    #[test]
    fn check_empty_kb() {
        let report = check_kb(KnowledgeBase::default(), ConfigEcho::default()).unwrap();
        assert!(report.findings.is_empty());
        assert_eq!(report.stats, Stats::default());
    }

    #[test]
    fn check_rejects_inconsistent_source() {
        let text = "\
sort f: interval(m) role action; source A;
recommend p { f: [12,12] } @ A;
recommend p { f: [24,24] } @ A;
";
        let err = check_kb(parse_kb(text).unwrap(), ConfigEcho::default()).unwrap_err();
        let AppError::Inconsistent(v) = &err else {
            panic!("{err}")
        };
        assert_eq!(v.len(), 1);
        assert!(err.details(None)[0].contains("bottom on f"));
    }

    #[test]
    fn json_keys_are_sorted_and_round_trip() {
        let report = check_kb(parse_kb(EXAMPLE1).unwrap(), ConfigEcho::default()).unwrap();
        let json = report.to_json().unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let top: Vec<&str> = json
            .lines()
            .filter(|l| l.starts_with("  \""))
            .map(|l| l.trim().split('"').nth(1).unwrap())
            .collect();
        let mut sorted = top.clone();
        sorted.sort();
        assert_eq!(top, sorted);
    }

    #[test]
    fn queries_file() {
        let q = parse_queries("# c\nq01: Annual mammography.\n\nq02: Biennial: yes\n").unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q[1].text, "Biennial: yes");
        assert!(parse_queries("no colon").is_err());
        assert!(parse_queries("a: x\na: y").is_err());
    }

    #[test]
    fn gold_file() {
        let g = parse_gold(r#"{"labels": [{"query_id": "q1", "doc": "A", "label": "Contradiction"}]}"#).unwrap();
        assert_eq!(g.labels[0].label, Label::Contradiction);
        assert!(parse_gold(r#"{"labels": [{"query_id": "q1", "doc": "A", "label": "Maybe"}]}"#).is_err());
        let dup = r#"{"labels": [{"query_id": "q1", "doc": "A", "label": "Agreement"},
                                {"query_id": "q1", "doc": "A", "label": "Agreement"}]}"#;
        assert!(parse_gold(dup).is_err());
    }

    #[test]
    fn metrics() {
        let cell = |g, p| CellResult {
            query_id: "q".into(),
            doc: "d".into(),
            gold: g,
            predicted: p,
            sentence: None,
            score: None,
            note: None,
        };
        let r = score_cells(
            vec![
                cell(Label::Contradiction, Label::Contradiction),
                cell(Label::Agreement, Label::Disagreement),
                cell(Label::Disagreement, Label::NoRecommendation),
                cell(Label::NoRecommendation, Label::NoRecommendation),
            ],
            ConfigEcho::default(),
        );
        assert_eq!((r.correct, r.total), (2, 4));
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.binary.false_positives, 1);
        assert_eq!(r.binary.false_negatives, 1);
        assert_eq!(r.binary.true_positives, 1);
        let agreement = &r.per_class[0];
        assert_eq!(agreement.precision, None);
        assert_eq!(agreement.recall, Some(0.0));
        assert_eq!(r.confusion[&Label::Agreement][&Label::Disagreement], 1);
        assert_eq!(r.errors.len(), 2);
    }
}
