//! Parameter sorts and their meet-semilattices.
//!
//! Every sort carries a total `meet`. Three kinds are supported:
//!
//! * `Interval` sorts over the extended rationals, ordered by containment
//!   (meet = intersection);
//! * `Enum` sorts, a flat antichain (meet of distinct symbols is bottom);
//! * `Set` sorts, non-empty subsets of an alphabet ordered by inclusion.
//!
//! Each sort has a single least element, [`ParamValue::Bottom`]. There is no
//! stored top element: an atom that omits a sort is unconstrained on it, and
//! that convention lives in [`crate::kb`].

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact rational used for interval endpoints.
pub type Rational = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatticeError {
    #[error("value `{value}` does not belong to sort `{sort}` ({kind})")]
    SortMismatch {
        sort: String,
        kind: &'static str,
        value: String,
    },
    #[error("`{member}` is not in the alphabet of sort `{sort}`")]
    NotInAlphabet { sort: String, member: String },
    #[error("interval lower bound exceeds upper bound: [{lo},{hi}]")]
    EmptyInterval { lo: String, hi: String },
    #[error("interval [{lo},{hi}] has an endpoint on the wrong side of infinity")]
    DegenerateInterval { lo: String, hi: String },
    #[error("set value must have at least one member")]
    EmptySet,
    #[error("alphabet of sort `{0}` is empty")]
    EmptyAlphabet(String),
    #[error("alphabet of sort `{sort}` lists `{member}` twice")]
    DuplicateMember { sort: String, member: String },
    #[error("`{0}` is reserved and cannot be an alphabet member")]
    ReservedMember(String),
    #[error("interval sort `{0}` needs a non-empty unit")]
    EmptyUnit(String),
    #[error("`{0}` is not an identifier (letters, digits and `_`, not starting with a digit)")]
    InvalidName(String),
}

/// Names that survive a trip through the textual format: ASCII letters,
/// digits and `_`, not starting with a digit.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Endpoint of an interval: a rational or one of the two infinities.
///
/// Variant order gives the natural order `-inf < finite < +inf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bound {
    NegInf,
    Finite(Rational),
    PosInf,
}

impl Bound {
    pub fn int(n: i64) -> Self {
        Bound::Finite(Rational::from_integer(n))
    }
}

impl From<i64> for Bound {
    fn from(n: i64) -> Self {
        Bound::int(n)
    }
}

impl From<Rational> for Bound {
    fn from(r: Rational) -> Self {
        Bound::Finite(r)
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::NegInf => f.write_str("-inf"),
            Bound::PosInf => f.write_str("inf"),
            Bound::Finite(r) => f.write_str(&format_rational(r)),
        }
    }
}

/// Renders a rational exactly: integers plainly, terminating fractions as
/// decimals, everything else as `n/d`.
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        return r.numer().to_string();
    }
    let mut den = *r.denom();
    let (mut twos, mut fives) = (0u32, 0u32);
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let digits = twos.max(fives);
    let scale = match 10i64.checked_pow(digits) {
        Some(s) => s,
        None => return format!("{}/{}", r.numer(), r.denom()),
    };
    let scaled = match r.numer().checked_mul(scale / r.denom()) {
        Some(s) => s,
        None => return format!("{}/{}", r.numer(), r.denom()),
    };
    let sign = if r.is_negative() { "-" } else { "" };
    let abs = scaled.unsigned_abs();
    let int_part = abs / scale as u64;
    let frac_part = abs % scale as u64;
    format!("{sign}{int_part}.{frac_part:0width$}", width = digits as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Describes who a recommendation applies to (age, risk group).
    Condition,
    /// Describes what is prescribed (frequency, modality, stance).
    Action,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Condition => "condition",
            Role::Action => "action",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SortKind {
    Interval { unit: String },
    Enum { alphabet: Vec<String> },
    Set { alphabet: Vec<String> },
}

impl SortKind {
    pub fn name(&self) -> &'static str {
        match self {
            SortKind::Interval { .. } => "interval",
            SortKind::Enum { .. } => "enum",
            SortKind::Set { .. } => "set",
        }
    }
}

/// Value literal reserved for the least element in the textual format.
pub const BOTTOM_KEYWORD: &str = "bottom";

/// A named parameter dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sort {
    name: String,
    kind: SortKind,
    role: Role,
}

impl Sort {
    pub fn new(name: impl Into<String>, kind: SortKind, role: Role) -> Result<Self, LatticeError> {
        let name = name.into();
        if !is_identifier(&name) {
            return Err(LatticeError::InvalidName(name));
        }
        match &kind {
            SortKind::Interval { unit } => {
                if unit.is_empty() {
                    return Err(LatticeError::EmptyUnit(name));
                }
                if !is_identifier(unit) {
                    return Err(LatticeError::InvalidName(unit.clone()));
                }
            }
            SortKind::Enum { alphabet } | SortKind::Set { alphabet } => {
                if alphabet.is_empty() {
                    return Err(LatticeError::EmptyAlphabet(name));
                }
                let mut seen = BTreeSet::new();
                for member in alphabet {
                    if !is_identifier(member) {
                        return Err(LatticeError::InvalidName(member.clone()));
                    }
                    if member == BOTTOM_KEYWORD {
                        return Err(LatticeError::ReservedMember(member.clone()));
                    }
                    if !seen.insert(member) {
                        return Err(LatticeError::DuplicateMember {
                            sort: name,
                            member: member.clone(),
                        });
                    }
                }
            }
        }
        Ok(Sort { name, kind, role })
    }

    pub fn interval(name: impl Into<String>, unit: impl Into<String>, role: Role) -> Result<Self, LatticeError> {
        Sort::new(name, SortKind::Interval { unit: unit.into() }, role)
    }

    pub fn enumeration<I, S>(name: impl Into<String>, alphabet: I, role: Role) -> Result<Self, LatticeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let alphabet = alphabet.into_iter().map(Into::into).collect();
        Sort::new(name, SortKind::Enum { alphabet }, role)
    }

    pub fn set<I, S>(name: impl Into<String>, alphabet: I, role: Role) -> Result<Self, LatticeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let alphabet = alphabet.into_iter().map(Into::into).collect();
        Sort::new(name, SortKind::Set { alphabet }, role)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &SortKind {
        &self.kind
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Checks that `value` is a well-formed element of this sort.
    pub fn check(&self, value: &ParamValue) -> Result<(), LatticeError> {
        let mismatch = || LatticeError::SortMismatch {
            sort: self.name.clone(),
            kind: self.kind.name(),
            value: value.to_string(),
        };
        match (&self.kind, value) {
            (_, ParamValue::Bottom) => Ok(()),
            (SortKind::Interval { .. }, ParamValue::Interval { lo, hi }) => check_interval(*lo, *hi),
            (SortKind::Enum { alphabet }, ParamValue::Enum(sym)) => self.check_member(alphabet, sym),
            (SortKind::Set { alphabet }, ParamValue::Set(members)) => {
                if members.is_empty() {
                    return Err(LatticeError::EmptySet);
                }
                members.iter().try_for_each(|m| self.check_member(alphabet, m))
            }
            _ => Err(mismatch()),
        }
    }

    fn check_member(&self, alphabet: &[String], sym: &str) -> Result<(), LatticeError> {
        if alphabet.iter().any(|a| a == sym) {
            Ok(())
        } else {
            Err(LatticeError::NotInAlphabet {
                sort: self.name.clone(),
                member: sym.to_string(),
            })
        }
    }

    /// Every non-bottom element of a finite sort, in a fixed order. `None` for
    /// interval sorts.
    pub fn elements(&self) -> Option<Vec<ParamValue>> {
        match &self.kind {
            SortKind::Interval { .. } => None,
            SortKind::Enum { alphabet } => Some(alphabet.iter().map(|s| ParamValue::Enum(s.clone())).collect()),
            SortKind::Set { alphabet } => {
                let n = alphabet.len();
                if n >= 20 {
                    return None;
                }
                let values = (1u32..(1 << n))
                    .map(|mask| {
                        let members = alphabet
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| mask & (1 << i) != 0)
                            .map(|(_, s)| s.clone())
                            .collect();
                        ParamValue::Set(members)
                    })
                    .collect();
                Some(values)
            }
        }
    }
}

fn check_interval(lo: Bound, hi: Bound) -> Result<(), LatticeError> {
    if lo == Bound::PosInf || hi == Bound::NegInf {
        return Err(LatticeError::DegenerateInterval {
            lo: lo.to_string(),
            hi: hi.to_string(),
        });
    }
    if lo > hi {
        return Err(LatticeError::EmptyInterval {
            lo: lo.to_string(),
            hi: hi.to_string(),
        });
    }
    Ok(())
}

/// An element of some sort's lattice.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamValue {
    Bottom,
    /// Closed interval `[lo, hi]`, never empty.
    Interval {
        lo: Bound,
        hi: Bound,
    },
    Enum(String),
    Set(BTreeSet<String>),
}

impl ParamValue {
    pub fn interval(lo: impl Into<Bound>, hi: impl Into<Bound>) -> Result<Self, LatticeError> {
        let (lo, hi) = (lo.into(), hi.into());
        check_interval(lo, hi)?;
        Ok(ParamValue::Interval { lo, hi })
    }

    /// `[n, n]`.
    pub fn point(n: i64) -> Self {
        ParamValue::Interval {
            lo: Bound::int(n),
            hi: Bound::int(n),
        }
    }

    /// `[n, +inf]`.
    pub fn at_least(n: i64) -> Self {
        ParamValue::Interval {
            lo: Bound::int(n),
            hi: Bound::PosInf,
        }
    }

    /// `[-inf, n]`.
    pub fn at_most(n: i64) -> Self {
        ParamValue::Interval {
            lo: Bound::NegInf,
            hi: Bound::int(n),
        }
    }

    pub fn range(lo: i64, hi: i64) -> Result<Self, LatticeError> {
        ParamValue::interval(lo, hi)
    }

    pub fn symbol(s: impl Into<String>) -> Self {
        ParamValue::Enum(s.into())
    }

    pub fn set<I, S>(members: I) -> Result<Self, LatticeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let members: BTreeSet<String> = members.into_iter().map(Into::into).collect();
        if members.is_empty() {
            return Err(LatticeError::EmptySet);
        }
        Ok(ParamValue::Set(members))
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, ParamValue::Bottom)
    }

    /// Meet of two values of the same kind. Callers guarantee kinds agree.
    fn meet_same_kind(&self, other: &ParamValue) -> ParamValue {
        match (self, other) {
            (ParamValue::Bottom, _) | (_, ParamValue::Bottom) => ParamValue::Bottom,
            (ParamValue::Interval { lo: l1, hi: h1 }, ParamValue::Interval { lo: l2, hi: h2 }) => {
                let lo = *l1.max(l2);
                let hi = *h1.min(h2);
                if lo > hi {
                    ParamValue::Bottom
                } else {
                    ParamValue::Interval { lo, hi }
                }
            }
            (ParamValue::Enum(a), ParamValue::Enum(b)) => {
                if a == b {
                    self.clone()
                } else {
                    ParamValue::Bottom
                }
            }
            (ParamValue::Set(a), ParamValue::Set(b)) => {
                let common: BTreeSet<String> = a.intersection(b).cloned().collect();
                if common.is_empty() {
                    ParamValue::Bottom
                } else {
                    ParamValue::Set(common)
                }
            }
            _ => unreachable!("meet of values of different kinds"),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bottom => f.write_str(BOTTOM_KEYWORD),
            ParamValue::Interval { lo, hi } => write!(f, "[{lo},{hi}]"),
            ParamValue::Enum(s) => f.write_str(s),
            ParamValue::Set(members) => {
                f.write_str("{")?;
                for (i, m) in members.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    f.write_str(m)?;
                }
                f.write_str("}")
            }
        }
    }
}

/// Greatest lower bound of `x` and `y` in `sort`.
pub fn meet(sort: &Sort, x: &ParamValue, y: &ParamValue) -> Result<ParamValue, LatticeError> {
    sort.check(x)?;
    sort.check(y)?;
    Ok(x.meet_same_kind(y))
}

/// The order induced by meet: `x ⊑ y` iff `x ∧ y = x`.
pub fn leq(sort: &Sort, x: &ParamValue, y: &ParamValue) -> Result<bool, LatticeError> {
    Ok(meet(sort, x, y)? == *x)
}

pub fn is_bottom(x: &ParamValue) -> bool {
    x.is_bottom()
}

/// Compares two values of a sort under the lattice order. Incomparable
/// values yield `None`.
pub fn partial_cmp(sort: &Sort, x: &ParamValue, y: &ParamValue) -> Result<Option<Ordering>, LatticeError> {
    let le = leq(sort, x, y)?;
    let ge = leq(sort, y, x)?;
    Ok(match (le, ge) {
        (true, true) => Some(Ordering::Equal),
        (true, false) => Some(Ordering::Less),
        (false, true) => Some(Ordering::Greater),
        (false, false) => None,
    })
}

/// Parses a decimal literal (`12`, `-3`, `0.25`) into an exact rational.
pub fn parse_decimal(text: &str) -> Option<Rational> {
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if digits.contains('.') && (frac_part.is_empty() || !frac_part.bytes().all(|b| b.is_ascii_digit())) {
        return None;
    }
    let mut numer: i64 = 0;
    for b in int_part.bytes().chain(frac_part.bytes()) {
        numer = numer.checked_mul(10)?.checked_add(i64::from(b - b'0'))?;
    }
    let denom = 10i64.checked_pow(u32::try_from(frac_part.len()).ok()?)?;
    let r = Rational::new(numer, denom);
    Some(if neg && !r.is_zero() { -r } else { r })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn freq() -> Sort {
        Sort::interval("frequency", "months", Role::Action).unwrap()
    }

    fn duration() -> Sort {
        Sort::interval("duration", "minutes", Role::Action).unwrap()
    }

    fn modality() -> Sort {
        Sort::set("modality", ["mammography", "cbe"], Role::Action).unwrap()
    }

    #[test]
    fn twenty_or_more_meets_thirty_or_more() {
        let m = meet(&duration(), &ParamValue::at_least(20), &ParamValue::at_least(30)).unwrap();
        assert_eq!(m, ParamValue::at_least(30));
    }

    #[test]
    fn annual_and_biennial_meet_at_bottom() {
        let m = meet(&freq(), &ParamValue::point(12), &ParamValue::point(24)).unwrap();
        assert_eq!(m, ParamValue::Bottom);
        assert!(is_bottom(&m));
    }

    #[test]
    fn annual_within_one_to_two_years() {
        let m = meet(&freq(), &ParamValue::point(12), &ParamValue::range(12, 24).unwrap()).unwrap();
        assert_eq!(m, ParamValue::point(12));
    }

    #[test]
    fn set_meet_is_intersection() {
        let both = ParamValue::set(["mammography", "cbe"]).unwrap();
        let mammo = ParamValue::set(["mammography"]).unwrap();
        assert_eq!(meet(&modality(), &both, &mammo).unwrap(), mammo);
        let cbe = ParamValue::set(["cbe"]).unwrap();
        assert_eq!(meet(&modality(), &cbe, &mammo).unwrap(), ParamValue::Bottom);
    }

    #[test]
    fn enum_is_flat() {
        let stance = Sort::enumeration("stance", ["recommend", "not_recommend"], Role::Action).unwrap();
        let r = ParamValue::symbol("recommend");
        let n = ParamValue::symbol("not_recommend");
        assert_eq!(meet(&stance, &r, &r).unwrap(), r);
        assert_eq!(meet(&stance, &r, &n).unwrap(), ParamValue::Bottom);
    }

    #[test]
    fn leq_examples() {
        let d = duration();
        assert!(leq(&d, &ParamValue::at_least(30), &ParamValue::at_least(20)).unwrap());
        assert!(!leq(&freq(), &ParamValue::point(12), &ParamValue::point(24)).unwrap());
        assert!(leq(&freq(), &ParamValue::Bottom, &ParamValue::point(12)).unwrap());
        assert_eq!(
            partial_cmp(&freq(), &ParamValue::point(12), &ParamValue::point(24)).unwrap(),
            None
        );
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let err = meet(&freq(), &ParamValue::point(12), &ParamValue::symbol("annual")).unwrap_err();
        assert!(matches!(err, LatticeError::SortMismatch { .. }));
        let err = meet(&modality(), &ParamValue::set(["mri"]).unwrap(), &ParamValue::Bottom).unwrap_err();
        assert!(matches!(err, LatticeError::NotInAlphabet { .. }));
    }

    #[test]
    fn bottom_is_absorbing() {
        assert_eq!(
            meet(&freq(), &ParamValue::Bottom, &ParamValue::point(3)).unwrap(),
            ParamValue::Bottom
        );
        assert!(!is_bottom(&ParamValue::point(12)));
    }

    #[test]
    fn sort_invariants() {
        assert!(matches!(
            Sort::enumeration("e", Vec::<String>::new(), Role::Action),
            Err(LatticeError::EmptyAlphabet(_))
        ));
        assert!(matches!(
            Sort::set("s", ["a", "a"], Role::Action),
            Err(LatticeError::DuplicateMember { .. })
        ));
        assert!(matches!(
            Sort::interval("i", "", Role::Action),
            Err(LatticeError::EmptyUnit(_))
        ));
        assert!(matches!(
            Sort::enumeration("e", ["bottom"], Role::Action),
            Err(LatticeError::ReservedMember(_))
        ));
    }

    #[test]
    fn interval_invariants() {
        assert!(matches!(
            ParamValue::interval(24, 12),
            Err(LatticeError::EmptyInterval { .. })
        ));
        assert!(matches!(
            ParamValue::interval(Bound::PosInf, Bound::PosInf),
            Err(LatticeError::DegenerateInterval { .. })
        ));
        assert!(ParamValue::interval(Bound::NegInf, Bound::PosInf).is_ok());
    }

    #[test]
    fn rationals_render_exactly() {
        assert_eq!(format_rational(&Rational::from_integer(12)), "12");
        assert_eq!(format_rational(&Rational::new(1, 4)), "0.25");
        assert_eq!(format_rational(&Rational::new(-5, 2)), "-2.5");
        assert_eq!(format_rational(&Rational::new(1, 3)), "1/3");
        assert_eq!(format_rational(&Rational::new(3, 40)), "0.075");
    }

    #[test]
    fn decimals_parse_exactly() {
        assert_eq!(parse_decimal("12"), Some(Rational::from_integer(12)));
        assert_eq!(parse_decimal("0.25"), Some(Rational::new(1, 4)));
        assert_eq!(parse_decimal("-2.50"), Some(Rational::new(-5, 2)));
        assert_eq!(parse_decimal("1."), None);
        assert_eq!(parse_decimal(".5"), None);
        assert_eq!(parse_decimal("99999999999999999999"), None);
    }

    #[test]
    fn set_elements_enumerate_all_nonempty_subsets() {
        assert_eq!(modality().elements().unwrap().len(), 3);
        assert!(freq().elements().is_none());
    }
}
