//! Contradiction and disagreement detection for clinical guideline
//! recommendations.
//!
//! Recommendations are atoms `p(A:a, ..., {sources})` whose parameters live in
//! per-sort meet-semilattices. Two recommendations contradict when some action
//! parameter meets at bottom, and disagree when every meet exists but strictly
//! refines one side. Around that core sit a textual knowledge-base format, a
//! lexicon-driven sentence extractor, a TF-IDF sentence index and the report
//! and evaluation drivers used by the `glc` binary.

pub mod dsl;
pub mod extraction;
pub mod kb;
pub mod lattice;
pub mod report;
pub mod retrieval;

pub use dsl::{format_atom, format_kb, parse_kb, parse_value, ParseError};
pub use extraction::{extract_atom, load_lexicon, ExtractError, ExtractionResult, Lexicon, Span};
pub use kb::{
    check_internal_consistency, classify_pair, closure, closure_with_support, find_findings, lattice_and, Atom,
    Classification, Finding, FindingKind, KbError, KnowledgeBase, NotComparableReason, SourceId, ValidatedKb,
};
pub use lattice::{is_bottom, leq, meet, Bound, ParamValue, Rational, Role, Sort, SortKind};
pub use retrieval::{tokenize, Analyzer, Index, SentenceRecord, Stopwords};
