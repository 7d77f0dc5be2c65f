//! Closure and classification against brute-force subset enumeration.

use std::collections::{BTreeMap, BTreeSet};

use glc_core::kb::{classify_pair, closure, closure_with_support, find_findings, lattice_and, Finding, FindingKind};
use glc_core::lattice::{meet, Bound, ParamValue, Role, Sort};
use glc_core::{Atom, Classification, KnowledgeBase, SourceId};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Kind {
    Interval,
    Enum,
    Set,
}

fn sort_strategy(i: usize) -> impl Strategy<Value = Sort> {
    (
        prop_oneof![Just(Kind::Interval), Just(Kind::Enum), Just(Kind::Set)],
        prop_oneof![Just(Role::Condition), Just(Role::Action)],
        1usize..=3,
    )
        .prop_map(move |(kind, role, n)| {
            let name = format!("s{i}");
            let alphabet: Vec<String> = (0..n).map(|k| format!("v{k}")).collect();
            match kind {
                Kind::Interval => Sort::interval(name, "u", role),
                Kind::Enum => Sort::enumeration(name, alphabet, role),
                Kind::Set => Sort::set(name, alphabet, role),
            }
            .unwrap()
        })
}

fn value_for(sort: &Sort, seed: (u8, u8, u8)) -> ParamValue {
    let (a, b, c) = seed;
    match sort.kind() {
        glc_core::SortKind::Interval { .. } => {
            let bound = |x: u8| match x % 8 {
                0 => Bound::NegInf,
                1 => Bound::PosInf,
                _ => Bound::int(i64::from(x % 6)),
            };
            let (mut lo, mut hi) = (bound(a), bound(b));
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            ParamValue::interval(lo, hi).unwrap_or(ParamValue::point(i64::from(c % 6)))
        }
        _ => {
            let elements = sort.elements().unwrap();
            elements[usize::from(a) % elements.len()].clone()
        }
    }
}

/// Random knowledge base with at most 3 sorts, 3 sources, 6 atoms and two
/// predicates.
fn kb_strategy() -> impl Strategy<Value = KnowledgeBase> {
    (1usize..=3)
        .prop_flat_map(|n| (0..n).map(sort_strategy).collect::<Vec<_>>())
        .prop_flat_map(|sorts| {
            let atom = (
                0u8..2,
                0u8..3,
                proptest::collection::vec((any::<bool>(), any::<(u8, u8, u8)>()), sorts.len()),
            );
            (Just(sorts), proptest::collection::vec(atom, 0..=6))
        })
        .prop_map(|(sorts, raw)| {
            let sources: Vec<SourceId> = ["A", "B", "C"].iter().map(|s| SourceId::new(*s).unwrap()).collect();
            let atoms = raw
                .into_iter()
                .map(|(p, s, params)| {
                    let mut atom = Atom::new(if p == 0 { "p" } else { "q" }, sources[usize::from(s)].clone());
                    for (sort, (present, seed)) in sorts.iter().zip(params) {
                        if present {
                            atom = atom.with(sort.name(), value_for(sort, seed));
                        }
                    }
                    atom
                })
                .collect();
            KnowledgeBase::new(sorts, sources, atoms).unwrap()
        })
}

fn meet_all(kb: &KnowledgeBase, atoms: &[&Atom]) -> Atom {
    let mut params: BTreeMap<String, ParamValue> = BTreeMap::new();
    let mut provenance = BTreeSet::new();
    for a in atoms {
        for (k, v) in &a.params {
            let merged = match params.get(k) {
                Some(old) => meet(kb.sort(k).unwrap(), old, v).unwrap(),
                None => v.clone(),
            };
            params.insert(k.clone(), merged);
        }
        provenance.extend(a.provenance.iter().cloned());
    }
    Atom {
        predicate: atoms[0].predicate.clone(),
        params,
        provenance,
    }
}

fn conditions_ok(kb: &KnowledgeBase, atom: &Atom) -> bool {
    atom.params
        .iter()
        .all(|(k, v)| kb.sort(k).unwrap().role() != Role::Condition || !v.is_bottom())
}

/// Meets of every non-empty same-predicate subset whose condition meets
/// stay above bottom.
fn brute_closure(kb: &KnowledgeBase) -> BTreeSet<Atom> {
    let atoms = kb.atoms();
    let mut out = BTreeSet::new();
    for mask in 1u32..(1 << atoms.len()) {
        let subset: Vec<&Atom> = (0..atoms.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &atoms[i])
            .collect();
        if subset.iter().any(|a| a.predicate != subset[0].predicate) {
            continue;
        }
        let m = meet_all(kb, &subset);
        if conditions_ok(kb, &m) {
            out.insert(m);
        }
    }
    out
}

fn has_bottom_action(kb: &KnowledgeBase, atom: &Atom) -> bool {
    atom.params
        .iter()
        .any(|(k, v)| v.is_bottom() && kb.sort(k).unwrap().role() == Role::Action)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn closure_equals_subset_meets(kb in kb_strategy()) {
        let got: BTreeSet<Atom> = closure(&kb).unwrap().into_iter().collect();
        prop_assert_eq!(got, brute_closure(&kb));
    }

    #[test]
    fn support_reproduces_each_derived_atom(kb in kb_strategy()) {
        for d in closure_with_support(&kb).unwrap() {
            let contributors: Vec<&Atom> = d.support.iter().map(|&i| &kb.atoms()[i]).collect();
            prop_assert!(!contributors.is_empty());
            let union: BTreeSet<SourceId> = contributors.iter().flat_map(|a| a.provenance.iter().cloned()).collect();
            prop_assert_eq!(&d.atom.provenance, &union);
            prop_assert_eq!(meet_all(&kb, &contributors), d.atom.clone());
        }
    }

    #[test]
    fn pair_classification_matches_derived_atom(kb in kb_strategy()) {
        let closure: BTreeSet<Atom> = closure(&kb).unwrap().into_iter().collect();
        let findings = kb.clone().validate().ok().map(|v| find_findings(&v).unwrap());
        let atoms = kb.atoms();
        for i in 0..atoms.len() {
            for j in (i + 1)..atoms.len() {
                let (x, y) = (&atoms[i], &atoms[j]);
                if x.predicate != y.predicate {
                    let is_mismatch = matches!(classify_pair(&kb, x, y).unwrap(), Classification::NotComparable { .. });
                    prop_assert!(is_mismatch);
                    continue;
                }
                let derived = lattice_and(&kb, x, y).unwrap();
                let class = classify_pair(&kb, x, y).unwrap();
                if !conditions_ok(&kb, &derived) {
                    let is_nc = matches!(class, Classification::NotComparable { .. });
                    prop_assert!(is_nc);
                    continue;
                }
                prop_assert!(closure.contains(&derived));
                let refined = derived.params.iter().any(|(k, v)| !v.is_bottom() && (x.params.get(k) != Some(v) || y.params.get(k) != Some(v)));
                let contradiction = has_bottom_action(&kb, &derived);
                prop_assert_eq!(matches!(class, Classification::Contradiction { .. }), contradiction);
                let cross_source = derived.provenance.len() >= 2;
                prop_assert_eq!(
                    matches!(class, Classification::Disagreement { .. }),
                    !contradiction && refined
                );
                let finding = Finding::from_derived(&kb, &derived, &[x.clone(), y.clone()]);
                match &class {
                    Classification::Contradiction { .. } => prop_assert_eq!(finding.map(|f| f.kind), Some(FindingKind::Contradiction)),
                    Classification::Disagreement { .. } => prop_assert_eq!(finding.map(|f| f.kind), Some(FindingKind::Disagreement)),
                    _ => prop_assert!(finding.is_none()),
                }
                if let (Some(all), true) = (&findings, cross_source && class.is_conflict()) {
                    let covered = all.iter().any(|f| {
                        f.predicate == derived.predicate
                            && f.derived_params == derived.params
                            && f.provenances.is_superset(&derived.provenance)
                    });
                    prop_assert!(covered, "no finding covers {:?}", derived);
                }
            }
        }
    }
}

#[test]
fn empty_kb_has_empty_closure() {
    assert!(closure(&KnowledgeBase::default()).unwrap().is_empty());
}
