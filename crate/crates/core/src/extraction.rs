//! Lexicon-driven extraction of recommendation atoms from single sentences.
//!
//! A lexicon is one JSON document:
//!
//! ```json
//! {
//!   "predicates": [{ "id": "breast_screening", "triggers": ["mammography"],
//!                    "implies": { "stance": "recommend" } }],
//!   "phrase_rules": [{ "sort": "frequency", "phrase": "annually", "value": "[12,12]" }],
//!   "number_patterns": [{ "sort": "age", "pattern": "aged (\\d+) to (\\d+)", "build": "range" }],
//!   "negation_cues": ["not recommended"]
//! }
//! ```
//!
//! Values are written in `.gkb` value syntax and checked against the sorts
//! of a companion knowledge-base header. All phrases are lowercase.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{parse_value, ParseError};
use crate::kb::{Atom, KnowledgeBase, SourceId};
use crate::lattice::{parse_decimal, Bound, ParamValue, Rational, Sort, SortKind};

/// Name of the sort that negation cues write to.
pub const STANCE_SORT: &str = "stance";
/// Value negation cues assign to the stance sort.
pub const NOT_RECOMMEND: &str = "not_recommend";

/// Half-open character range `[start, end)` into the original sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("ambiguous extraction for sort `{sort}`: `{first_text}` ({first}) vs `{second_text}` ({second})")]
    Ambiguous {
        sort: String,
        first: Span,
        first_text: String,
        second: Span,
        second_text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractionResult {
    Extracted { atom: Atom, matched_spans: Vec<Span> },
    NoRecommendation { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Build {
    /// One capture `n` → `[n, n]`.
    Exact,
    /// One capture `n` → `[n, +inf]`.
    AtLeast,
    /// One capture `n` → `[-inf, n]`.
    AtMost,
    /// Two captures `a`, `b` → `[a, b]`.
    Range,
}

impl Build {
    fn arity(self) -> usize {
        match self {
            Build::Range => 2,
            _ => 1,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    #[serde(default)]
    predicates: Vec<PredicateEntry>,
    #[serde(default)]
    phrase_rules: Vec<PhraseEntry>,
    #[serde(default)]
    number_patterns: Vec<NumberEntry>,
    #[serde(default)]
    negation_cues: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredicateEntry {
    id: String,
    triggers: Vec<String>,
    #[serde(default)]
    implies: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhraseEntry {
    sort: String,
    phrase: String,
    value: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NumberEntry {
    sort: String,
    pattern: String,
    build: Build,
    #[serde(default)]
    scale: Option<String>,
}

#[derive(Debug, Clone)]
struct Phrase {
    regex: Regex,
}

impl Phrase {
    fn new(text: &str) -> Phrase {
        let starts_word = text.chars().next().is_some_and(char::is_alphanumeric);
        let ends_word = text.chars().last().is_some_and(char::is_alphanumeric);
        let pattern = format!(
            "{}{}{}",
            if starts_word { r"\b" } else { "" },
            regex::escape(text),
            if ends_word { r"\b" } else { "" }
        );
        Phrase {
            regex: Regex::new(&pattern).expect("escaped phrase is a valid regex"),
        }
    }
}

#[derive(Debug, Clone)]
struct PredicateRule {
    id: String,
    triggers: Vec<Phrase>,
    implies: BTreeMap<String, ParamValue>,
}

#[derive(Debug, Clone)]
struct PhraseRule {
    sort: String,
    phrase: Phrase,
    value: ParamValue,
}

#[derive(Debug, Clone)]
struct NumberRule {
    sort: String,
    regex: Regex,
    build: Build,
    scale: Rational,
}

/// A validated, compiled lexicon.
#[derive(Debug, Clone)]
pub struct Lexicon {
    sorts: Vec<Sort>,
    predicates: Vec<PredicateRule>,
    phrase_rules: Vec<PhraseRule>,
    number_patterns: Vec<NumberRule>,
    negation_cues: Vec<Phrase>,
    stance: Option<Sort>,
}

/// Line and column of the first occurrence of `"needle"` in `text`.
fn locate(text: &str, needle: &str) -> (usize, usize) {
    let quoted = serde_json::to_string(needle).unwrap_or_default();
    let Some(byte) = text.find(&quoted) else {
        return (1, 1);
    };
    let before = &text[..byte];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn error_at(text: &str, needle: &str, message: String) -> ParseError {
    let (line, column) = locate(text, needle);
    ParseError {
        line,
        column,
        message,
        excerpt: needle.to_string(),
    }
}

/// Loads a lexicon, resolving every sort against `header`.
pub fn load_lexicon(text: &str, header: &KnowledgeBase) -> Result<Lexicon, Vec<ParseError>> {
    let file: LexiconFile = serde_json::from_str(text).map_err(|e| {
        vec![ParseError {
            line: e.line().max(1),
            column: e.column().max(1),
            message: format!("malformed lexicon: {e}"),
            excerpt: String::new(),
        }]
    })?;

    let mut errors = Vec::new();
    let mut used_sorts: BTreeSet<String> = BTreeSet::new();
    let mut sort_named = |name: &str, errors: &mut Vec<ParseError>| -> Option<Sort> {
        match header.sort(name) {
            Some(s) => {
                used_sorts.insert(name.to_string());
                Some(s.clone())
            }
            None => {
                errors.push(error_at(text, name, format!("unknown sort `{name}`")));
                None
            }
        }
    };
    let check_phrase = |phrase: &str, what: &str, errors: &mut Vec<ParseError>| -> bool {
        if phrase.trim().is_empty() {
            errors.push(error_at(text, phrase, format!("empty {what}")));
            false
        } else if phrase != phrase.to_lowercase() || phrase != phrase.trim() {
            errors.push(error_at(
                text,
                phrase,
                format!("{what} `{phrase}` must be trimmed lowercase"),
            ));
            false
        } else {
            true
        }
    };

    let mut predicates = Vec::new();
    for entry in &file.predicates {
        if !crate::lattice::is_identifier(&entry.id) {
            errors.push(error_at(
                text,
                &entry.id,
                format!("invalid predicate id `{}`", entry.id),
            ));
            continue;
        }
        if predicates.iter().any(|p: &PredicateRule| p.id == entry.id) {
            errors.push(error_at(
                text,
                &entry.id,
                format!("predicate `{}` defined twice", entry.id),
            ));
            continue;
        }
        if entry.triggers.is_empty() {
            errors.push(error_at(
                text,
                &entry.id,
                format!("predicate `{}` has no triggers", entry.id),
            ));
        }
        let mut triggers = Vec::new();
        for t in &entry.triggers {
            if check_phrase(t, "trigger", &mut errors) {
                triggers.push(Phrase::new(t));
            }
        }
        let mut implies = BTreeMap::new();
        for (sort_name, value) in &entry.implies {
            if let Some(sort) = sort_named(sort_name, &mut errors) {
                match parse_value(value, &sort) {
                    Ok(v) => {
                        implies.insert(sort_name.clone(), v);
                    }
                    Err(e) => errors.push(error_at(
                        text,
                        value,
                        format!("bad value for `{sort_name}`: {}", e.message),
                    )),
                }
            }
        }
        predicates.push(PredicateRule {
            id: entry.id.clone(),
            triggers,
            implies,
        });
    }

    let mut phrase_rules = Vec::new();
    for entry in &file.phrase_rules {
        let Some(sort) = sort_named(&entry.sort, &mut errors) else {
            continue;
        };
        if !check_phrase(&entry.phrase, "phrase", &mut errors) {
            continue;
        }
        match parse_value(&entry.value, &sort) {
            Ok(value) => phrase_rules.push(PhraseRule {
                sort: entry.sort.clone(),
                phrase: Phrase::new(&entry.phrase),
                value,
            }),
            Err(e) => errors.push(error_at(
                text,
                &entry.value,
                format!("bad value for `{}`: {}", entry.sort, e.message),
            )),
        }
    }

    let mut number_patterns = Vec::new();
    for entry in &file.number_patterns {
        let Some(sort) = sort_named(&entry.sort, &mut errors) else {
            continue;
        };
        if !matches!(sort.kind(), SortKind::Interval { .. }) {
            errors.push(error_at(
                text,
                &entry.pattern,
                format!("number pattern targets non-interval sort `{}`", entry.sort),
            ));
            continue;
        }
        let regex = match Regex::new(&entry.pattern) {
            Ok(r) => r,
            Err(e) => {
                errors.push(error_at(text, &entry.pattern, format!("invalid pattern: {e}")));
                continue;
            }
        };
        if regex.captures_len() - 1 != entry.build.arity() {
            errors.push(error_at(
                text,
                &entry.pattern,
                format!(
                    "pattern has {} capture(s), `{:?}` needs {}",
                    regex.captures_len() - 1,
                    entry.build,
                    entry.build.arity()
                ),
            ));
            continue;
        }
        let scale = match entry.scale.as_deref().map(parse_decimal) {
            None => Rational::from_integer(1),
            Some(Some(s)) if s > Rational::from_integer(0) => s,
            Some(_) => {
                errors.push(error_at(
                    text,
                    entry.scale.as_deref().unwrap_or_default(),
                    "scale must be a positive decimal".to_string(),
                ));
                continue;
            }
        };
        number_patterns.push(NumberRule {
            sort: entry.sort.clone(),
            regex,
            build: entry.build,
            scale,
        });
    }

    let mut negation_cues = Vec::new();
    for cue in &file.negation_cues {
        if check_phrase(cue, "negation cue", &mut errors) {
            negation_cues.push(Phrase::new(cue));
        }
    }
    let stance = header.sort(STANCE_SORT).cloned();
    if let Some(sort) = &stance {
        if !negation_cues.is_empty() && sort.check(&ParamValue::symbol(NOT_RECOMMEND)).is_err() {
            errors.push(ParseError {
                line: 1,
                column: 1,
                message: format!("negation cues need sort `{STANCE_SORT}` to be an enum containing `{NOT_RECOMMEND}`"),
                excerpt: STANCE_SORT.to_string(),
            });
        }
        used_sorts.insert(STANCE_SORT.to_string());
    }

    if !errors.is_empty() {
        errors.sort_by_key(|e| (e.line, e.column));
        return Err(errors);
    }
    Ok(Lexicon {
        sorts: header
            .sorts()
            .iter()
            .filter(|s| used_sorts.contains(s.name()))
            .cloned()
            .collect(),
        predicates,
        phrase_rules,
        number_patterns,
        negation_cues,
        stance,
    })
}

impl Lexicon {
    pub fn phrase_rule_count(&self) -> usize {
        self.phrase_rules.len()
    }

    pub fn predicate_ids(&self) -> impl Iterator<Item = &str> {
        self.predicates.iter().map(|p| p.id.as_str())
    }

    fn is_set_sort(&self, name: &str) -> bool {
        self.sorts
            .iter()
            .any(|s| s.name() == name && matches!(s.kind(), SortKind::Set { .. }))
    }

    /// Ids of every predicate with at least one trigger in `text`.
    pub fn predicates_mentioned(&self, text: &str) -> Vec<String> {
        let lower = Lowered::new(text);
        self.predicates
            .iter()
            .filter(|p| p.triggers.iter().any(|t| t.regex.is_match(&lower.text)))
            .map(|p| p.id.clone())
            .collect()
    }
}

/// A lowercased copy of a sentence that keeps one char per original char, so
/// character offsets line up with the input.
struct Lowered {
    text: String,
    /// Char index of every byte offset that starts a char, plus the end.
    char_at_byte: Vec<usize>,
}

impl Lowered {
    fn new(original: &str) -> Lowered {
        let text: String = original.chars().map(|c| c.to_lowercase().next().unwrap_or(c)).collect();
        let mut char_at_byte = vec![0; text.len() + 1];
        let mut count = 0;
        for (byte, _) in text.char_indices() {
            char_at_byte[byte] = count;
            count += 1;
        }
        char_at_byte[text.len()] = count;
        Lowered { text, char_at_byte }
    }

    fn span(&self, start: usize, end: usize) -> Span {
        Span {
            start: self.char_at_byte[start],
            end: self.char_at_byte[end],
        }
    }

    fn slice(&self, span: Span) -> String {
        self.text.chars().skip(span.start).take(span.end - span.start).collect()
    }
}

struct Candidate {
    sort: String,
    span: Span,
    value: ParamValue,
    rule: usize,
}

fn capture_value(text: &str, scale: Rational) -> Option<Bound> {
    parse_decimal(text).map(|n| Bound::Finite(n * scale))
}

/// Extracts one recommendation atom from `sentence`.
///
/// The longest matching predicate trigger selects the predicate (earliest
/// position breaks ties). Its implied params act as defaults. Phrase rules,
/// number patterns and negation cues are then matched left to right: set
/// sorts accumulate the union of every match; for other sorts the first
/// match wins, overlapping matches are ignored, and a later disjoint match
/// with a different value is an ambiguity error.
pub fn extract_atom(sentence: &str, lexicon: &Lexicon, source: &SourceId) -> Result<ExtractionResult, ExtractError> {
    let lower = Lowered::new(sentence);

    let mut best: Option<(usize, usize, Span)> = None;
    for (pi, pred) in lexicon.predicates.iter().enumerate() {
        for trigger in &pred.triggers {
            for m in trigger.regex.find_iter(&lower.text) {
                let span = lower.span(m.start(), m.end());
                let len = span.end - span.start;
                let better = match best {
                    None => true,
                    Some((_, best_len, best_span)) => {
                        len > best_len || (len == best_len && span.start < best_span.start)
                    }
                };
                if better {
                    best = Some((pi, len, span));
                }
            }
        }
    }
    let Some((pi, _, trigger_span)) = best else {
        return Ok(ExtractionResult::NoRecommendation {
            reason: "no predicate trigger".to_string(),
        });
    };
    let predicate = &lexicon.predicates[pi];

    let mut candidates = Vec::new();
    let mut rule = 0;
    for pr in &lexicon.phrase_rules {
        for m in pr.phrase.regex.find_iter(&lower.text) {
            candidates.push(Candidate {
                sort: pr.sort.clone(),
                span: lower.span(m.start(), m.end()),
                value: pr.value.clone(),
                rule,
            });
        }
        rule += 1;
    }
    for np in &lexicon.number_patterns {
        for caps in np.regex.captures_iter(&lower.text) {
            let whole = caps.get(0).expect("group 0 always matches");
            let nums: Option<Vec<Bound>> = (1..=np.build.arity())
                .map(|i| caps.get(i).and_then(|c| capture_value(c.as_str(), np.scale)))
                .collect();
            let Some(nums) = nums else { continue };
            let value = match np.build {
                Build::Exact => ParamValue::interval(nums[0], nums[0]),
                Build::AtLeast => ParamValue::interval(nums[0], Bound::PosInf),
                Build::AtMost => ParamValue::interval(Bound::NegInf, nums[0]),
                Build::Range => ParamValue::interval(nums[0], nums[1]),
            };
            // A reversed range in the text is not a usable constraint.
            let Ok(value) = value else { continue };
            candidates.push(Candidate {
                sort: np.sort.clone(),
                span: lower.span(whole.start(), whole.end()),
                value,
                rule,
            });
        }
        rule += 1;
    }
    if lexicon.stance.is_some() {
        for cue in &lexicon.negation_cues {
            for m in cue.regex.find_iter(&lower.text) {
                candidates.push(Candidate {
                    sort: STANCE_SORT.to_string(),
                    span: lower.span(m.start(), m.end()),
                    value: ParamValue::symbol(NOT_RECOMMEND),
                    rule,
                });
            }
            rule += 1;
        }
    }
    candidates.sort_by_key(|c| (c.span.start, std::cmp::Reverse(c.span.end), c.rule));

    let mut chosen: BTreeMap<String, (ParamValue, Vec<Span>)> = BTreeMap::new();
    for c in candidates {
        let is_set = lexicon.is_set_sort(&c.sort);
        match chosen.get_mut(&c.sort) {
            None => {
                chosen.insert(c.sort, (c.value, vec![c.span]));
            }
            Some((value, spans)) => {
                if spans.iter().any(|s| s.overlaps(&c.span)) {
                    continue;
                }
                if is_set {
                    if let (ParamValue::Set(acc), ParamValue::Set(more)) = (&mut *value, &c.value) {
                        acc.extend(more.iter().cloned());
                    }
                    spans.push(c.span);
                } else if *value == c.value {
                    spans.push(c.span);
                } else {
                    let first = spans[0];
                    return Err(ExtractError::Ambiguous {
                        first_text: lower.slice(first),
                        second_text: lower.slice(c.span),
                        sort: c.sort,
                        first,
                        second: c.span,
                    });
                }
            }
        }
    }

    let mut atom = Atom::new(predicate.id.clone(), source.clone());
    atom.params = predicate.implies.clone();
    let mut matched_spans = vec![trigger_span];
    for (sort, (value, spans)) in chosen {
        atom.params.insert(sort, value);
        matched_spans.extend(spans);
    }
    matched_spans.sort();
    matched_spans.dedup();
    Ok(ExtractionResult::Extracted { atom, matched_spans })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_kb;

    const HEADER: &str = "\
sort age: interval(years) role condition;
sort frequency: interval(months) role action;
sort modality: set {mammography, cbe} role action;
sort duration: interval(minutes_per_week) role action;
source ACS; source USPSTF; source ACOG; source O1;
";

    const SCREENING: &str = r#"{
  "predicates": [
    { "id": "breast_screening",
      "triggers": ["mammography", "mammogram", "screening mammography", "screening with mammography"] },
    { "id": "exercise", "triggers": ["minutes per week"] }
  ],
  "phrase_rules": [
    { "sort": "frequency", "phrase": "annually", "value": "[12,12]" },
    { "sort": "frequency", "phrase": "biennial", "value": "[24,24]" },
    { "sort": "frequency", "phrase": "every two years", "value": "[24,24]" },
    { "sort": "modality", "phrase": "mammography", "value": "{mammography}" },
    { "sort": "modality", "phrase": "mammogram", "value": "{mammography}" },
    { "sort": "modality", "phrase": "clinical breast exam", "value": "{cbe}" }
  ],
  "number_patterns": [
    { "sort": "age", "pattern": "\\bover age (\\d+)", "build": "at_least" },
    { "sort": "age", "pattern": "\\baged (\\d+) to (\\d+)", "build": "range" },
    { "sort": "duration", "pattern": "at least (\\d+) minutes", "build": "at_least" },
    { "sort": "duration", "pattern": "minimum of (\\d+) minutes", "build": "at_least" }
  ]
}"#;

    fn header() -> KnowledgeBase {
        parse_kb(HEADER).unwrap()
    }

    fn lexicon() -> Lexicon {
        load_lexicon(SCREENING, &header()).unwrap()
    }

    fn extract(s: &str) -> Result<ExtractionResult, ExtractError> {
        extract_atom(s, &lexicon(), &SourceId::new("ACS").unwrap())
    }

    fn atom_of(s: &str) -> Atom {
        match extract(s).unwrap() {
            ExtractionResult::Extracted { atom, .. } => atom,
            other => panic!("no atom for {s:?}: {other:?}"),
        }
    }

    #[test]
    fn biennial_screening_mammography() {
        let atom = atom_of("Biennial screening mammography is recommended.");
        let expected = Atom::new("breast_screening", SourceId::new("ACS").unwrap())
            .with("modality", ParamValue::set(["mammography"]).unwrap())
            .with("frequency", ParamValue::point(24));
        assert_eq!(atom, expected);
    }

    #[test]
    fn mammography_and_cbe_annually() {
        let atom = atom_of("Screening with mammography and clinical breast exam annually.");
        assert_eq!(atom.predicate, "breast_screening");
        assert_eq!(
            atom.params["modality"],
            ParamValue::set(["mammography", "cbe"]).unwrap()
        );
        assert_eq!(atom.params["frequency"], ParamValue::point(12));
        assert_eq!(atom.params.len(), 2);
    }

    #[test]
    fn women_over_forty() {
        let atom = atom_of("women over age 40 get a mammography annually");
        assert_eq!(atom.params["modality"], ParamValue::set(["mammography"]).unwrap());
        assert_eq!(atom.params["frequency"], ParamValue::point(12));
        assert_eq!(atom.params["age"], ParamValue::at_least(40));
    }

    #[test]
    fn minimum_minutes() {
        let atom = atom_of("at least 150 minutes per week");
        assert_eq!(atom.predicate, "exercise");
        assert_eq!(atom.params["duration"], ParamValue::at_least(150));
    }

    #[test]
    fn no_trigger() {
        assert_eq!(
            extract("Patients should discuss diet with their physician.").unwrap(),
            ExtractionResult::NoRecommendation {
                reason: "no predicate trigger".to_string()
            }
        );
    }

    #[test]
    fn conflicting_frequencies_are_ambiguous() {
        let err = extract("Get a mammogram annually or every two years.").unwrap_err();
        let ExtractError::Ambiguous {
            sort,
            first_text,
            second_text,
            ..
        } = err;
        assert_eq!(sort, "frequency");
        assert_eq!(first_text, "annually");
        assert_eq!(second_text, "every two years");
    }

    #[test]
    fn spans_cover_matched_text() {
        let s = "Women aged 50 to 74: Biennial screening mammography.";
        let ExtractionResult::Extracted { matched_spans, .. } = extract(s).unwrap() else {
            panic!()
        };
        let texts: Vec<String> = matched_spans
            .iter()
            .map(|sp| {
                s.chars()
                    .skip(sp.start)
                    .take(sp.end - sp.start)
                    .collect::<String>()
                    .to_lowercase()
            })
            .collect();
        assert!(texts.contains(&"aged 50 to 74".to_string()));
        assert!(texts.contains(&"biennial".to_string()));
        assert!(texts.contains(&"screening mammography".to_string()));
    }

    #[test]
    fn word_boundaries_are_respected() {
        // "mammograms" must not match the "mammogram" trigger.
        assert!(matches!(
            extract("Mammograms are common.").unwrap(),
            ExtractionResult::NoRecommendation { .. }
        ));
    }

    #[test]
    fn minimal_lexicon() {
        let lex = load_lexicon(
            r#"{"phrase_rules": [{"sort": "frequency", "phrase": "annually", "value": "[12,12]"}]}"#,
            &header(),
        )
        .unwrap();
        assert_eq!(lex.phrase_rule_count(), 1);
    }

    #[test]
    fn undeclared_sort_is_rejected() {
        let errs = load_lexicon(
            r#"{"phrase_rules": [{"sort": "dose", "phrase": "daily", "value": "[1,1]"}]}"#,
            &header(),
        )
        .unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].message.contains("unknown sort `dose`"));
        assert_eq!(errs[0].line, 1);
    }

    #[test]
    fn lexicon_validation() {
        let text = r#"{
  "predicates": [{"id": "p", "triggers": ["Mammography"]}],
  "number_patterns": [{"sort": "age", "pattern": "aged (\\d+)", "build": "range"}],
  "phrase_rules": [{"sort": "frequency", "phrase": "yearly", "value": "yearly"}]
}"#;
        let errs = load_lexicon(text, &header()).unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:#?}");
        assert_eq!(errs[0].line, 2);
        let malformed = load_lexicon("{ \"predicates\": [", &header()).unwrap_err();
        assert!(malformed[0].message.starts_with("malformed lexicon"));
    }

    #[test]
    fn negation_sets_stance_when_declared() {
        let header = parse_kb(
            "sort stance: enum {recommend, not_recommend, individualize} role action; \
             sort modality: set {cbe} role action; source A;",
        )
        .unwrap();
        let lex = load_lexicon(
            r#"{"predicates": [{"id": "cbe", "triggers": ["clinical breast exam"], "implies": {"stance": "recommend"}}],
                "negation_cues": ["not recommended"]}"#,
            &header,
        )
        .unwrap();
        let src = SourceId::new("A").unwrap();
        let ExtractionResult::Extracted { atom, .. } =
            extract_atom("Clinical breast exam is not recommended.", &lex, &src).unwrap()
        else {
            panic!()
        };
        assert_eq!(atom.params["stance"], ParamValue::symbol("not_recommend"));
        let ExtractionResult::Extracted { atom, .. } =
            extract_atom("Clinical breast exam is recommended.", &lex, &src).unwrap()
        else {
            panic!()
        };
        assert_eq!(atom.params["stance"], ParamValue::symbol("recommend"));
    }

    #[test]
    fn extraction_is_deterministic() {
        let s = "Screening with mammography and clinical breast exam annually.";
        assert_eq!(extract(s), extract(s));
    }

    #[test]
    fn non_ascii_offsets_are_in_chars() {
        let s = "Ärzte: biennial mammography.";
        let ExtractionResult::Extracted { matched_spans, .. } = extract(s).unwrap() else {
            panic!()
        };
        assert_eq!(matched_spans[0], Span { start: 7, end: 15 });
    }
}
