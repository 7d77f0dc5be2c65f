//! Parameterized atoms with provenance, the lattice-meet inference rule,
//! derivation closure and the contradiction / disagreement verdicts.
//!
//! An atom `p(A:a, B:b, ..., {o1, o2})` is a predicate, a map from sort names
//! to lattice values and a non-empty set of sources. A sort missing from an
//! atom is unconstrained (it behaves as a top element).
//!
//! Two atoms with the same predicate combine parameter-wise by meet, and
//! their provenance sets are unioned. A derived atom with a bottom action
//! parameter is a contradiction; one that strictly refines a contributor
//! without reaching bottom is a disagreement.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{self, LatticeError, ParamValue, Role, Sort};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KbError {
    #[error("sort `{0}` is declared twice")]
    DuplicateSort(String),
    #[error("source `{0}` is declared twice")]
    DuplicateSource(String),
    #[error("source id must be non-empty")]
    EmptySource,
    #[error("source id `{0}` is not an identifier")]
    InvalidSource(String),
    #[error("predicate `{0}` is not an identifier")]
    InvalidPredicate(String),
    #[error("atom `{predicate}` references undeclared sort `{sort}`")]
    UndeclaredSort { predicate: String, sort: String },
    #[error("atom `{predicate}` references undeclared source `{source_id}`")]
    UndeclaredSource { predicate: String, source_id: String },
    #[error("atom `{0}` has an empty provenance set")]
    EmptyProvenance(String),
    #[error("atom `{predicate}`, sort `{sort}`: {error}")]
    InvalidParam {
        predicate: String,
        sort: String,
        error: LatticeError,
    },
    #[error("lattice rule not applicable: predicates `{0}` and `{1}` differ")]
    RuleNotApplicable(String, String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("source `{source_id}` is internally inconsistent ({count} violation(s))")]
    Inconsistent { source_id: String, count: usize },
}

/// Identifies a guideline document (typically an organization acronym).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(String);

impl SourceId {
    pub fn new(id: impl Into<String>) -> Result<Self, KbError> {
        let id = id.into();
        if id.is_empty() {
            return Err(KbError::EmptySource);
        }
        if !lattice::is_identifier(&id) {
            return Err(KbError::InvalidSource(id));
        }
        Ok(SourceId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A parameterized proposition with provenance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub predicate: String,
    pub params: BTreeMap<String, ParamValue>,
    pub provenance: BTreeSet<SourceId>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, source: SourceId) -> Self {
        Atom {
            predicate: predicate.into(),
            params: BTreeMap::new(),
            provenance: BTreeSet::from([source]),
        }
    }

    pub fn with(mut self, sort: impl Into<String>, value: ParamValue) -> Self {
        self.params.insert(sort.into(), value);
        self
    }

    pub fn get(&self, sort: &str) -> Option<&ParamValue> {
        self.params.get(sort)
    }

    /// Canonical ordering key: predicate, then provenance, then params.
    fn order_key(&self) -> (&str, &BTreeSet<SourceId>, &BTreeMap<String, ParamValue>) {
        (&self.predicate, &self.provenance, &self.params)
    }
}

/// Sorts, sources and base atoms. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    sorts: Vec<Sort>,
    sources: Vec<SourceId>,
    atoms: Vec<Atom>,
}

impl KnowledgeBase {
    pub fn new(sorts: Vec<Sort>, sources: Vec<SourceId>, atoms: Vec<Atom>) -> Result<Self, KbError> {
        let mut kb = KnowledgeBase::default();
        for sort in sorts {
            if kb.sort(sort.name()).is_some() {
                return Err(KbError::DuplicateSort(sort.name().to_string()));
            }
            kb.sorts.push(sort);
        }
        for source in sources {
            if kb.sources.contains(&source) {
                return Err(KbError::DuplicateSource(source.0));
            }
            kb.sources.push(source);
        }
        for atom in atoms {
            kb.check_atom(&atom)?;
            if atom.provenance.iter().any(|s| !kb.sources.contains(s)) {
                let missing = atom.provenance.iter().find(|s| !kb.sources.contains(s)).unwrap();
                return Err(KbError::UndeclaredSource {
                    predicate: atom.predicate.clone(),
                    source_id: missing.0.clone(),
                });
            }
            kb.atoms.push(atom);
        }
        Ok(kb)
    }

    /// Same sorts and sources, different atoms.
    pub fn with_atoms(&self, atoms: Vec<Atom>) -> Result<Self, KbError> {
        KnowledgeBase::new(self.sorts.clone(), self.sources.clone(), atoms)
    }

    pub fn sorts(&self) -> &[Sort] {
        &self.sorts
    }

    pub fn sources(&self) -> &[SourceId] {
        &self.sources
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn sort(&self, name: &str) -> Option<&Sort> {
        self.sorts.iter().find(|s| s.name() == name)
    }

    pub fn source(&self, id: &str) -> Option<&SourceId> {
        self.sources.iter().find(|s| s.as_str() == id)
    }

    fn sort_for(&self, atom: &Atom, name: &str) -> Result<&Sort, KbError> {
        self.sort(name).ok_or_else(|| KbError::UndeclaredSort {
            predicate: atom.predicate.clone(),
            sort: name.to_string(),
        })
    }

    /// Validates params and provenance shape. Does not require the
    /// provenance to be declared, so derived or query atoms pass.
    pub fn check_atom(&self, atom: &Atom) -> Result<(), KbError> {
        if !lattice::is_identifier(&atom.predicate) {
            return Err(KbError::InvalidPredicate(atom.predicate.clone()));
        }
        if atom.provenance.is_empty() {
            return Err(KbError::EmptyProvenance(atom.predicate.clone()));
        }
        for (name, value) in &atom.params {
            let sort = self.sort_for(atom, name)?;
            sort.check(value).map_err(|error| KbError::InvalidParam {
                predicate: atom.predicate.clone(),
                sort: name.clone(),
                error,
            })?;
        }
        Ok(())
    }

    fn role_of(&self, name: &str) -> Role {
        self.sort(name).map(Sort::role).unwrap_or(Role::Action)
    }

    /// Runs the consistency check for every source. The error carries the
    /// first failure and every violation found.
    pub fn validate(self) -> Result<ValidatedKb, Box<(KbError, Vec<Violation>)>> {
        let mut all = Vec::new();
        let mut first = None;
        for source in &self.sources {
            let violations =
                check_internal_consistency(&self, source.as_str()).map_err(|e| Box::new((e, Vec::new())))?;
            if !violations.is_empty() && first.is_none() {
                first = Some(KbError::Inconsistent {
                    source_id: source.0.clone(),
                    count: violations.len(),
                });
            }
            all.extend(violations);
        }
        match first {
            Some(err) => Err(Box::new((err, all))),
            None => Ok(ValidatedKb(self)),
        }
    }
}

/// A knowledge base whose sources have each passed the internal consistency
/// check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedKb(KnowledgeBase);

impl ValidatedKb {
    pub fn kb(&self) -> &KnowledgeBase {
        &self.0
    }

    pub fn into_inner(self) -> KnowledgeBase {
        self.0
    }
}

impl std::ops::Deref for ValidatedKb {
    type Target = KnowledgeBase;

    fn deref(&self) -> &KnowledgeBase {
        &self.0
    }
}

/// The lattice-meet inference rule: combine two same-predicate atoms
/// parameter-wise and union their provenance. Bottom results are kept.
pub fn lattice_and(kb: &KnowledgeBase, x: &Atom, y: &Atom) -> Result<Atom, KbError> {
    if x.predicate != y.predicate {
        return Err(KbError::RuleNotApplicable(x.predicate.clone(), y.predicate.clone()));
    }
    kb.check_atom(x)?;
    kb.check_atom(y)?;
    Ok(combine(kb, x, y))
}

/// `lattice_and` without validation, for atoms already checked.
fn combine(kb: &KnowledgeBase, x: &Atom, y: &Atom) -> Atom {
    let mut params = x.params.clone();
    for (name, value) in &y.params {
        let merged = match params.get(name) {
            Some(existing) => {
                let sort = kb.sort(name).expect("checked atom");
                lattice::meet(sort, existing, value).expect("checked atom")
            }
            None => value.clone(),
        };
        params.insert(name.clone(), merged);
    }
    Atom {
        predicate: x.predicate.clone(),
        params,
        provenance: x.provenance.union(&y.provenance).cloned().collect(),
    }
}

/// Condition-role sorts present in both atoms whose meet is bottom.
fn disjoint_conditions(kb: &KnowledgeBase, x: &Atom, y: &Atom) -> Vec<String> {
    x.params
        .iter()
        .filter(|(name, _)| kb.role_of(name) == Role::Condition)
        .filter_map(|(name, xv)| {
            let yv = y.params.get(name)?;
            let sort = kb.sort(name)?;
            let m = lattice::meet(sort, xv, yv).ok()?;
            m.is_bottom().then(|| name.clone())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "sorts")]
pub enum NotComparableReason {
    PredicateMismatch,
    DisjointConditions(Vec<String>),
}

/// Verdict for a pair of atoms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Classification {
    Agreement,
    Disagreement { sorts: Vec<String> },
    Contradiction { sorts: Vec<String> },
    NotComparable { reason: NotComparableReason },
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Agreement => "Agreement",
            Classification::Disagreement { .. } => "Disagreement",
            Classification::Contradiction { .. } => "Contradiction",
            Classification::NotComparable { .. } => "NotComparable",
        }
    }

    pub fn is_conflict(&self) -> bool {
        matches!(
            self,
            Classification::Disagreement { .. } | Classification::Contradiction { .. }
        )
    }
}

/// Classifies a pair of atoms.
///
/// Order of evaluation: predicate mismatch, disjoint conditions, bottom
/// action meets (contradiction), any strict refinement including
/// present-versus-absent (disagreement), otherwise agreement.
pub fn classify_pair(kb: &KnowledgeBase, x: &Atom, y: &Atom) -> Result<Classification, KbError> {
    kb.check_atom(x)?;
    kb.check_atom(y)?;
    if x.predicate != y.predicate {
        return Ok(Classification::NotComparable {
            reason: NotComparableReason::PredicateMismatch,
        });
    }
    let disjoint = disjoint_conditions(kb, x, y);
    if !disjoint.is_empty() {
        return Ok(Classification::NotComparable {
            reason: NotComparableReason::DisjointConditions(disjoint),
        });
    }

    let names: BTreeSet<&String> = x.params.keys().chain(y.params.keys()).collect();
    let mut bottoms = Vec::new();
    let mut refined = Vec::new();
    for name in names {
        let (xv, yv) = (x.params.get(name), y.params.get(name));
        let m = match (xv, yv) {
            (Some(a), Some(b)) => lattice::meet(kb.sort(name).expect("checked"), a, b).expect("checked"),
            (Some(a), None) | (None, Some(a)) => a.clone(),
            (None, None) => unreachable!(),
        };
        if m.is_bottom() && kb.role_of(name) == Role::Action {
            bottoms.push(name.clone());
        }
        if xv != Some(&m) || yv != Some(&m) {
            refined.push(name.clone());
        }
    }
    Ok(if !bottoms.is_empty() {
        Classification::Contradiction { sorts: bottoms }
    } else if !refined.is_empty() {
        Classification::Disagreement { sorts: refined }
    } else {
        Classification::Agreement
    })
}

/// A closure atom together with every base atom (by index into the knowledge
/// base) that can take part in deriving it: same predicate, provenance
/// within the atom's, and params at or above the atom's. Their meet is the
/// atom and their provenance union is its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Derivation {
    pub atom: Atom,
    pub support: BTreeSet<usize>,
}

/// Least fixpoint of [`lattice_and`] over all same-predicate atom pairs whose
/// condition meets are non-bottom, base atoms included.
pub fn closure(kb: &KnowledgeBase) -> Result<Vec<Atom>, KbError> {
    Ok(closure_with_support(kb)?.into_iter().map(|d| d.atom).collect())
}

pub fn closure_with_support(kb: &KnowledgeBase) -> Result<Vec<Derivation>, KbError> {
    closure_of(kb, &(0..kb.atoms.len()).collect::<Vec<_>>())
}

fn closure_of(kb: &KnowledgeBase, indices: &[usize]) -> Result<Vec<Derivation>, KbError> {
    let mut by_predicate: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        let atom = &kb.atoms[i];
        kb.check_atom(atom)?;
        by_predicate.entry(&atom.predicate).or_default().push(i);
    }

    let mut out = Vec::new();
    for (predicate, members) in by_predicate {
        let mut known: BTreeMap<Atom, BTreeSet<usize>> = BTreeMap::new();
        let mut processed: Vec<Atom> = Vec::new();
        let mut queue: VecDeque<Atom> = VecDeque::new();
        for &i in &members {
            let atom = kb.atoms[i].clone();
            if !known.contains_key(&atom) {
                known.insert(atom.clone(), BTreeSet::from([i]));
                queue.push_back(atom);
            }
        }
        // Each pair is combined when the later of its two members is dequeued.
        while let Some(next) = queue.pop_front() {
            for other in &processed {
                if !disjoint_conditions(kb, &next, other).is_empty() {
                    continue;
                }
                let derived = combine(kb, &next, other);
                if !known.contains_key(&derived) {
                    let support = known[&next].union(&known[other]).copied().collect();
                    known.insert(derived.clone(), support);
                    queue.push_back(derived);
                }
            }
            processed.push(next);
        }
        debug!(
            "closure for `{predicate}`: {} atoms from {} base",
            known.len(),
            members.len()
        );
        for (atom, first) in known {
            let mut support = first;
            for &i in &members {
                let base = &kb.atoms[i];
                if base.provenance.is_subset(&atom.provenance) && combine(kb, &atom, base) == atom {
                    support.insert(i);
                }
            }
            out.push(Derivation { atom, support });
        }
    }
    out.sort_by(|a, b| a.atom.order_key().cmp(&b.atom.order_key()));
    Ok(out)
}

/// An internally contradictory atom derivable from one source alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub source: SourceId,
    pub atom: Atom,
    pub sorts: Vec<String>,
    pub contributors: Vec<Atom>,
}

fn bottom_action_sorts(kb: &KnowledgeBase, atom: &Atom) -> Vec<String> {
    atom.params
        .iter()
        .filter(|(name, v)| v.is_bottom() && kb.role_of(name) == Role::Action)
        .map(|(name, _)| name.clone())
        .collect()
}

/// Returns every atom derivable from `source`'s own atoms that carries a
/// bottom action parameter. An empty list means the source is consistent.
pub fn check_internal_consistency(kb: &KnowledgeBase, source: &str) -> Result<Vec<Violation>, KbError> {
    let source = kb
        .source(source)
        .ok_or_else(|| KbError::UnknownSource(source.to_string()))?
        .clone();
    let only = BTreeSet::from([source.clone()]);
    let own: Vec<usize> = (0..kb.atoms.len())
        .filter(|&i| kb.atoms[i].provenance == only)
        .collect();
    let derived = closure_of(kb, &own)?;
    Ok(derived
        .into_iter()
        .filter_map(|d| {
            let sorts = bottom_action_sorts(kb, &d.atom);
            (!sorts.is_empty()).then(|| Violation {
                source: source.clone(),
                contributors: d.support.iter().map(|&i| kb.atoms[i].clone()).collect(),
                atom: d.atom,
                sorts,
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FindingKind {
    Contradiction,
    Disagreement,
}

/// A reported conflict between sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub kind: FindingKind,
    pub predicate: String,
    /// Bottom action sorts for a contradiction, refined sorts for a
    /// disagreement.
    pub conflict_sorts: Vec<String>,
    /// Non-bottom sorts where the derived value is strictly below some
    /// contributor's value (absent counts as top). For a disagreement this
    /// equals `conflict_sorts`.
    pub refined_sorts: Vec<String>,
    /// True for a disagreement that only concerns condition-role sorts.
    pub condition_scope: bool,
    pub condition_overlap: BTreeMap<String, ParamValue>,
    pub derived_params: BTreeMap<String, ParamValue>,
    pub provenances: BTreeSet<SourceId>,
    pub source_atoms: Vec<Atom>,
}

impl Finding {
    /// Builds the finding for a derived atom, or `None` when the contributors
    /// agree.
    pub fn from_derived(kb: &KnowledgeBase, derived: &Atom, sources: &[Atom]) -> Option<Finding> {
        let bottoms = bottom_action_sorts(kb, derived);
        let refined: Vec<String> = derived
            .params
            .iter()
            .filter(|(name, v)| !v.is_bottom() && sources.iter().any(|s| s.params.get(*name) != Some(*v)))
            .map(|(name, _)| name.clone())
            .collect();
        let kind = if !bottoms.is_empty() {
            FindingKind::Contradiction
        } else if !refined.is_empty() {
            FindingKind::Disagreement
        } else {
            return None;
        };
        let condition_overlap = derived
            .params
            .iter()
            .filter(|(name, _)| kb.role_of(name) == Role::Condition)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let conflict_sorts = match kind {
            FindingKind::Contradiction => bottoms,
            FindingKind::Disagreement => refined.clone(),
        };
        let condition_scope =
            kind == FindingKind::Disagreement && conflict_sorts.iter().all(|s| kb.role_of(s) == Role::Condition);
        Some(Finding {
            kind,
            predicate: derived.predicate.clone(),
            conflict_sorts,
            refined_sorts: refined,
            condition_scope,
            condition_overlap,
            derived_params: derived.params.clone(),
            provenances: derived.provenance.clone(),
            source_atoms: sources.to_vec(),
        })
    }
}

/// Every contradiction and disagreement derivable from two or more sources.
///
/// A finding is dropped when another finding has the same predicate and
/// derived params over a strictly larger provenance set.
pub fn find_findings(kb: &ValidatedKb) -> Result<Vec<Finding>, KbError> {
    let kb = kb.kb();
    let derived = closure_with_support(kb)?;
    let findings: Vec<Finding> = derived
        .iter()
        .filter(|d| d.atom.provenance.len() >= 2)
        .filter_map(|d| {
            let sources: Vec<Atom> = d.support.iter().map(|&i| kb.atoms[i].clone()).collect();
            Finding::from_derived(kb, &d.atom, &sources)
        })
        .collect();
    let subsumed = |f: &Finding| {
        findings.iter().any(|g| {
            g.predicate == f.predicate
                && g.derived_params == f.derived_params
                && g.provenances.len() > f.provenances.len()
                && g.provenances.is_superset(&f.provenances)
        })
    };
    let kept: Vec<Finding> = findings.iter().filter(|f| !subsumed(f)).cloned().collect();
    Ok(kept)
}
