//! The `.gkb` knowledge-base format.
//!
//! ```text
//! # comment
//! sort frequency: interval(months) role action;
//! sort modality: set {mammography, cbe} role action;
//! source ACS;
//! recommend breast_screening { frequency: [12,12], modality: {mammography} } @ ACS;
//! ```
//!
//! Numbers are exact decimals (`12`, `0.5`, `-3`) or fractions (`1/3`);
//! `inf` and `-inf` are the unbounded endpoints. The value keyword `bottom`
//! denotes the least element and the provenance after `@` may list several
//! comma-separated sources, so derived atoms can be written back out.
//!
//! Parsing is two-phase: statements are read with recovery at `;`, then
//! declarations are resolved. All errors from both phases are reported.

use std::collections::BTreeSet;
use std::fmt;

use num_traits::CheckedDiv;

use crate::kb::{Atom, KbError, KnowledgeBase, SourceId};
use crate::lattice::{parse_decimal, Bound, ParamValue, Rational, Role, Sort, SortKind, BOTTOM_KEYWORD};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub excerpt: String,
}

impl ParseError {
    fn at(pos: Pos, message: impl Into<String>, excerpt: impl Into<String>) -> Self {
        ParseError {
            line: pos.line,
            column: pos.column,
            message: message.into(),
            excerpt: excerpt.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)?;
        if !self.excerpt.is_empty() {
            write!(f, " (at `{}`)", self.excerpt)?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Pos {
    line: usize,
    column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Number(String),
    Punct(char),
    Invalid(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Pos,
}

impl Token {
    fn text(&self) -> String {
        match &self.tok {
            Tok::Ident(s) | Tok::Number(s) => s.clone(),
            Tok::Punct(c) | Tok::Invalid(c) => c.to_string(),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

fn lex(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1usize, 1usize);
    while let Some(&c) = chars.peek() {
        let pos = Pos { line, column };
        if c == '\n' {
            chars.next();
            line += 1;
            column = 1;
        } else if c.is_whitespace() {
            chars.next();
            column += 1;
        } else if c == '#' {
            while chars.peek().is_some_and(|&c| c != '\n') {
                chars.next();
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while let Some(&c) = chars.peek().filter(|c| c.is_ascii_alphanumeric() || **c == '_') {
                s.push(c);
                chars.next();
                column += 1;
            }
            out.push(Token {
                tok: Tok::Ident(s),
                pos,
            });
        } else if c.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&c) = chars.peek().filter(|c| c.is_ascii_digit() || **c == '.') {
                s.push(c);
                chars.next();
                column += 1;
            }
            out.push(Token {
                tok: Tok::Number(s),
                pos,
            });
        } else {
            chars.next();
            column += 1;
            let tok = if ":;,[]{}()@-/".contains(c) {
                Tok::Punct(c)
            } else {
                Tok::Invalid(c)
            };
            out.push(Token { tok, pos });
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, column },
    });
    out
}

#[derive(Debug, Clone)]
struct Name {
    text: String,
    pos: Pos,
}

#[derive(Debug, Clone)]
enum KindAst {
    Interval(Name),
    Enum(Vec<Name>),
    Set(Vec<Name>),
}

#[derive(Debug, Clone)]
enum ValueAst {
    Interval { lo: Bound, hi: Bound },
    Ident(String),
    Set(Vec<Name>),
}

#[derive(Debug, Clone)]
struct Value {
    ast: ValueAst,
    pos: Pos,
    excerpt: String,
}

#[derive(Debug, Clone)]
enum Stmt {
    Sort {
        name: Name,
        kind: KindAst,
        role: Role,
    },
    Source {
        name: Name,
    },
    Atom {
        predicate: Name,
        params: Vec<(Name, Value)>,
        provenance: Vec<Name>,
    },
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn new(text: &str) -> Self {
        Parser {
            tokens: lex(text),
            at: 0,
        }
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.at]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if t.tok != Tok::Eof {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let t = self.peek();
        let message = match t.tok {
            Tok::Invalid(c) => format!("unexpected character `{c}`"),
            _ => format!("expected {expected}, found `{}`", t.text()),
        };
        ParseError::at(t.pos, message, t.text())
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek().tok == Tok::Punct(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> PResult<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{c}`")))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<Name> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let name = Name {
                    text: s.clone(),
                    pos: self.peek().pos,
                };
                self.bump();
                Ok(name)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        match &self.peek().tok {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            _ => Err(self.unexpected(&format!("`{kw}`"))),
        }
    }

    /// Skips past the next `;`.
    fn recover(&mut self) {
        loop {
            match self.bump().tok {
                Tok::Punct(';') | Tok::Eof => return,
                _ => {}
            }
        }
    }

    fn parse_all(&mut self) -> (Vec<Stmt>, Vec<ParseError>) {
        let mut stmts = Vec::new();
        let mut errors = Vec::new();
        while self.peek().tok != Tok::Eof {
            match self.statement() {
                Ok(s) => stmts.push(s),
                Err(e) => {
                    errors.push(e);
                    self.recover();
                }
            }
        }
        (stmts, errors)
    }

    fn statement(&mut self) -> PResult<Stmt> {
        let head = self.ident("`sort`, `source` or `recommend`")?;
        match head.text.as_str() {
            "sort" => self.sort_decl(),
            "source" => {
                let name = self.ident("source id")?;
                self.expect(';')?;
                Ok(Stmt::Source { name })
            }
            "recommend" => self.atom_decl(),
            _ => Err(ParseError::at(
                head.pos,
                "expected `sort`, `source` or `recommend`",
                head.text,
            )),
        }
    }

    fn sort_decl(&mut self) -> PResult<Stmt> {
        let name = self.ident("sort name")?;
        self.expect(':')?;
        let kind_name = self.ident("`interval`, `enum` or `set`")?;
        let kind = match kind_name.text.as_str() {
            "interval" => {
                self.expect('(')?;
                let unit = self.ident("unit name")?;
                self.expect(')')?;
                KindAst::Interval(unit)
            }
            "enum" => KindAst::Enum(self.braced_ids()?),
            "set" => KindAst::Set(self.braced_ids()?),
            _ => {
                return Err(ParseError::at(
                    kind_name.pos,
                    "expected `interval`, `enum` or `set`",
                    kind_name.text,
                ))
            }
        };
        self.keyword("role")?;
        let role_name = self.ident("`condition` or `action`")?;
        let role = match role_name.text.as_str() {
            "condition" => Role::Condition,
            "action" => Role::Action,
            _ => {
                return Err(ParseError::at(
                    role_name.pos,
                    "expected `condition` or `action`",
                    role_name.text,
                ))
            }
        };
        self.expect(';')?;
        Ok(Stmt::Sort { name, kind, role })
    }

    fn braced_ids(&mut self) -> PResult<Vec<Name>> {
        self.expect('{')?;
        let ids = self.id_list()?;
        self.expect('}')?;
        Ok(ids)
    }

    fn id_list(&mut self) -> PResult<Vec<Name>> {
        let mut ids = vec![self.ident("identifier")?];
        while self.eat(',') {
            ids.push(self.ident("identifier")?);
        }
        Ok(ids)
    }

    fn atom_decl(&mut self) -> PResult<Stmt> {
        let predicate = self.ident("predicate name")?;
        self.expect('{')?;
        let mut params = Vec::new();
        if !self.eat('}') {
            loop {
                let sort = self.ident("sort name")?;
                self.expect(':')?;
                let value = self.value()?;
                params.push((sort, value));
                if self.eat('}') {
                    break;
                }
                self.expect(',')?;
            }
        }
        self.expect('@')?;
        let provenance = self.id_list()?;
        self.expect(';')?;
        Ok(Stmt::Atom {
            predicate,
            params,
            provenance,
        })
    }

    fn value(&mut self) -> PResult<Value> {
        let start = self.at;
        let pos = self.peek().pos;
        let ast = match &self.peek().tok {
            Tok::Punct('[') => {
                self.bump();
                let lo = self.bound()?;
                self.expect(',')?;
                let hi = self.bound()?;
                self.expect(']')?;
                ValueAst::Interval { lo, hi }
            }
            Tok::Punct('{') => ValueAst::Set(self.braced_ids()?),
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                ValueAst::Ident(s)
            }
            _ => return Err(self.unexpected("a value")),
        };
        let excerpt = self.tokens[start..self.at].iter().map(Token::text).collect();
        Ok(Value { ast, pos, excerpt })
    }

    fn bound(&mut self) -> PResult<Bound> {
        let negative = self.eat('-');
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident(s) if s == "inf" => {
                self.bump();
                Ok(if negative { Bound::NegInf } else { Bound::PosInf })
            }
            Tok::Number(_) => {
                let r = self.rational()?;
                Ok(Bound::Finite(if negative { -r } else { r }))
            }
            _ => Err(self.unexpected("a number, `inf` or `-inf`")),
        }
    }

    fn rational(&mut self) -> PResult<Rational> {
        let t = self.bump();
        let Tok::Number(text) = &t.tok else {
            return Err(ParseError::at(t.pos, "expected a number", t.text()));
        };
        let numer = parse_decimal(text)
            .ok_or_else(|| ParseError::at(t.pos, "malformed or out-of-range number", text.clone()))?;
        if !self.eat('/') {
            return Ok(numer);
        }
        let d = self.bump();
        let denom = match &d.tok {
            Tok::Number(s) => parse_decimal(s),
            _ => None,
        }
        .filter(|r| *r != Rational::from_integer(0))
        .ok_or_else(|| ParseError::at(d.pos, "expected a non-zero denominator", d.text()))?;
        numer
            .checked_div(&denom)
            .ok_or_else(|| ParseError::at(t.pos, "fraction out of range", t.text()))
    }
}

/// Parses a `.gkb` document.
pub fn parse_kb(text: &str) -> Result<KnowledgeBase, Vec<ParseError>> {
    let mut parser = Parser::new(text);
    let (stmts, mut errors) = parser.parse_all();

    let mut sorts: Vec<Sort> = Vec::new();
    let mut sources: Vec<SourceId> = Vec::new();
    for stmt in &stmts {
        match stmt {
            Stmt::Sort { name, kind, role } => {
                if sorts.iter().any(|s| s.name() == name.text) {
                    errors.push(ParseError::at(
                        name.pos,
                        format!("sort `{}` is declared twice", name.text),
                        &name.text,
                    ));
                    continue;
                }
                let kind = match kind {
                    KindAst::Interval(unit) => SortKind::Interval {
                        unit: unit.text.clone(),
                    },
                    KindAst::Enum(ids) => SortKind::Enum {
                        alphabet: ids.iter().map(|n| n.text.clone()).collect(),
                    },
                    KindAst::Set(ids) => SortKind::Set {
                        alphabet: ids.iter().map(|n| n.text.clone()).collect(),
                    },
                };
                match Sort::new(name.text.clone(), kind, *role) {
                    Ok(sort) => sorts.push(sort),
                    Err(e) => errors.push(ParseError::at(name.pos, e.to_string(), &name.text)),
                }
            }
            Stmt::Source { name } => {
                if sources.iter().any(|s| s.as_str() == name.text) {
                    errors.push(ParseError::at(
                        name.pos,
                        format!("source `{}` is declared twice", name.text),
                        &name.text,
                    ));
                    continue;
                }
                sources.push(SourceId::new(name.text.clone()).expect("identifiers are non-empty"));
            }
            Stmt::Atom { .. } => {}
        }
    }

    let mut atoms = Vec::new();
    for stmt in &stmts {
        if let Stmt::Atom {
            predicate,
            params,
            provenance,
        } = stmt
        {
            match resolve_atom(&sorts, &sources, predicate, params, provenance) {
                Ok(atom) => atoms.push(atom),
                Err(mut errs) => errors.append(&mut errs),
            }
        }
    }

    if !errors.is_empty() {
        errors.sort_by_key(|e| (e.line, e.column));
        return Err(errors);
    }
    KnowledgeBase::new(sorts, sources, atoms).map_err(|e| {
        vec![ParseError {
            line: 1,
            column: 1,
            message: e.to_string(),
            excerpt: String::new(),
        }]
    })
}

fn resolve_atom(
    sorts: &[Sort],
    sources: &[SourceId],
    predicate: &Name,
    params: &[(Name, Value)],
    provenance: &[Name],
) -> Result<Atom, Vec<ParseError>> {
    let mut errors = Vec::new();
    let mut atom = Atom {
        predicate: predicate.text.clone(),
        params: Default::default(),
        provenance: BTreeSet::new(),
    };
    for (name, value) in params {
        let Some(sort) = sorts.iter().find(|s| s.name() == name.text) else {
            errors.push(ParseError::at(
                name.pos,
                format!("unknown sort `{}`", name.text),
                &name.text,
            ));
            continue;
        };
        if atom.params.contains_key(&name.text) {
            errors.push(ParseError::at(
                name.pos,
                format!("duplicate parameter for sort `{}`", name.text),
                &name.text,
            ));
            continue;
        }
        match resolve_value(sort, value) {
            Ok(v) => {
                atom.params.insert(name.text.clone(), v);
            }
            Err(e) => errors.push(e),
        }
    }
    for name in provenance {
        match sources.iter().find(|s| s.as_str() == name.text) {
            Some(s) => {
                atom.provenance.insert(s.clone());
            }
            None => errors.push(ParseError::at(
                name.pos,
                format!("unknown source `{}`", name.text),
                &name.text,
            )),
        }
    }
    if errors.is_empty() {
        Ok(atom)
    } else {
        Err(errors)
    }
}

fn resolve_value(sort: &Sort, value: &Value) -> Result<ParamValue, ParseError> {
    let err = |message: String| ParseError::at(value.pos, message, &value.excerpt);
    let resolved = match (&value.ast, sort.kind()) {
        (ValueAst::Ident(s), _) if s == BOTTOM_KEYWORD => ParamValue::Bottom,
        (ValueAst::Interval { lo, hi }, SortKind::Interval { .. }) => {
            if lo > hi {
                return Err(err("interval lower bound exceeds upper bound".to_string()));
            }
            ParamValue::Interval { lo: *lo, hi: *hi }
        }
        (ValueAst::Ident(s), SortKind::Enum { .. }) => ParamValue::Enum(s.clone()),
        (ValueAst::Set(ids), SortKind::Set { .. }) => {
            let mut members = BTreeSet::new();
            for id in ids {
                if !members.insert(id.text.clone()) {
                    return Err(ParseError::at(id.pos, format!("`{}` listed twice", id.text), &id.text));
                }
            }
            ParamValue::Set(members)
        }
        (_, kind) => {
            return Err(err(format!(
                "value does not fit {} sort `{}`",
                kind.name(),
                sort.name()
            )))
        }
    };
    sort.check(&resolved).map_err(|e| err(e.to_string()))?;
    Ok(resolved)
}

/// Parses a single value literal against `sort`.
pub fn parse_value(text: &str, sort: &Sort) -> Result<ParamValue, ParseError> {
    let mut parser = Parser::new(text);
    let value = parser.value()?;
    if parser.peek().tok != Tok::Eof {
        return Err(parser.unexpected("end of value"));
    }
    resolve_value(sort, &value)
}

pub fn format_value(value: &ParamValue) -> String {
    value.to_string()
}

/// Canonical text for one atom: params sorted by sort name, provenance
/// comma-separated after `@`.
pub fn format_atom(kb: &KnowledgeBase, atom: &Atom) -> Result<String, KbError> {
    kb.check_atom(atom)?;
    let params: Vec<String> = atom.params.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    let provenance: Vec<&str> = atom.provenance.iter().map(SourceId::as_str).collect();
    let body = if params.is_empty() {
        "{}".to_string()
    } else {
        format!("{{ {} }}", params.join(", "))
    };
    Ok(format!(
        "recommend {} {} @ {};",
        atom.predicate,
        body,
        provenance.join(",")
    ))
}

pub fn format_sort(sort: &Sort) -> String {
    let kind = match sort.kind() {
        SortKind::Interval { unit } => format!("interval({unit})"),
        SortKind::Enum { alphabet } => format!("enum {{{}}}", alphabet.join(", ")),
        SortKind::Set { alphabet } => format!("set {{{}}}", alphabet.join(", ")),
    };
    format!("sort {}: {} role {};", sort.name(), kind, sort.role())
}

/// Writes a whole knowledge base back out; `parse_kb` reads it back to an
/// equal value.
pub fn format_kb(kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    for sort in kb.sorts() {
        out.push_str(&format_sort(sort));
        out.push('\n');
    }
    for source in kb.sources() {
        out.push_str(&format!("source {source};\n"));
    }
    for atom in kb.atoms() {
        out.push_str(&format_atom(kb, atom).expect("atoms of a knowledge base are valid"));
        out.push('\n');
    }
    out
}
