//! Lemma rules: a casing script followed by an edit script.
//!
//! A rule is induced from a `(form, lemma)` pair by lowercasing both, taking
//! their longest common substring as the root and recording minimal
//! copy/delete/insert programs for the prefix and the suffix around it. When
//! nothing is shared the lemma is stored verbatim (an *absolute* rule). The
//! casing script then restores the lemma's capitalization on top of the
//! lowercase result.
//!
//! Text form:
//!
//! ```text
//! rule   := casing ";" edit
//! casing := caseop ("¦" caseop)*        caseop := ("↑" | "↓") index
//! edit   := "a" literal | "d" ops "¦" ops
//! op     := "→" (copy) | "-" (delete) | "+" char (insert)
//! ```
//!
//! For example `↑0¦↓1;d¦` keeps `Bush` as is and `↓0;d¦-+v+e` turns `has`
//! into `have`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::conllu::Corpus;

const UP: char = '↑';
const DOWN: char = '↓';
const SEP: char = '¦';
const COPY: char = '→';
const DELETE: char = '-';
const INSERT: char = '+';

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum InduceError {
    #[error("cannot induce a lemma rule from an empty form or lemma")]
    EmptyInput,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ApplyError {
    #[error("rule consumes {needed} characters but the form has {available}")]
    FormTooShort { needed: usize, available: usize },
    #[error("rule would produce an empty lemma")]
    EmptyLemma,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("invalid lemma rule at character {position}: {message}")]
pub struct RuleParseError {
    pub position: usize,
    pub message: &'static str,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Case {
    Upper,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CasingOp {
    pub case: Case,
    pub start: usize,
}

/// Case-setting operations; each governs from its start to the next op.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CasingScript {
    ops: Vec<CasingOp>,
}

impl CasingScript {
    /// `↓0`: everything lowercase.
    pub fn lowercase() -> Self {
        CasingScript {
            ops: alloc::vec![CasingOp {
                case: Case::Lower,
                start: 0
            }],
        }
    }

    /// Validates ordering: the first op starts at 0, starts strictly increase.
    pub fn new(ops: Vec<CasingOp>) -> Option<Self> {
        let starts_at_zero = ops.first().map(|op| op.start) == Some(0);
        let increasing = ops.windows(2).all(|w| w[0].start < w[1].start);
        (starts_at_zero && increasing).then_some(CasingScript { ops })
    }

    /// One op per maximal run of same-cased characters.
    pub fn of(lemma: &str) -> Self {
        let mut ops: Vec<CasingOp> = Vec::new();
        for (i, c) in lemma.chars().enumerate() {
            let case = if is_upper(c) {
                Case::Upper
            } else {
                Case::Lower
            };
            if ops.last().map(|op| op.case) != Some(case) {
                ops.push(CasingOp { case, start: i });
            }
        }
        if ops.is_empty() {
            return Self::lowercase();
        }
        CasingScript { ops }
    }

    pub fn ops(&self) -> &[CasingOp] {
        &self.ops
    }

    fn apply(&self, chars: &mut [char]) {
        for (i, op) in self.ops.iter().enumerate() {
            let end = self
                .ops
                .get(i + 1)
                .map_or(chars.len(), |next| next.start.min(chars.len()));
            let start = op.start.min(end);
            for c in &mut chars[start..end] {
                *c = match op.case {
                    Case::Upper => upper_char(*c),
                    Case::Lower => lower_char(*c),
                };
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EditOp {
    Copy,
    Delete,
    Insert(char),
}

impl EditOp {
    fn consumes(self) -> bool {
        !matches!(self, EditOp::Insert(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EditScript {
    /// Ignore the form and emit this (lowercase) lemma.
    Absolute(String),
    /// Edit the form prefix and suffix, keeping the root between them.
    Delta {
        prefix: Vec<EditOp>,
        suffix: Vec<EditOp>,
    },
}

impl EditScript {
    /// Characters consumed from the form's prefix and suffix.
    fn budget(&self) -> (usize, usize) {
        match self {
            EditScript::Absolute(_) => (0, 0),
            EditScript::Delta { prefix, suffix } => (
                prefix.iter().filter(|op| op.consumes()).count(),
                suffix.iter().filter(|op| op.consumes()).count(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LemmaRule {
    pub casing: CasingScript,
    pub edit: EditScript,
}

impl LemmaRule {
    /// `↓0;d¦`: the lowercased form.
    pub fn identity() -> Self {
        LemmaRule {
            casing: CasingScript::lowercase(),
            edit: EditScript::Delta {
                prefix: Vec::new(),
                suffix: Vec::new(),
            },
        }
    }

    pub fn is_absolute(&self) -> bool {
        matches!(self.edit, EditScript::Absolute(_))
    }
}

/// Lowercase mapping restricted to characters whose one-to-one lowercase maps
/// back to them under uppercasing; everything else is treated as caseless.
pub fn lower_char(c: char) -> char {
    match single(c.to_lowercase()) {
        Some(lower) if lower != c && single(lower.to_uppercase()) == Some(c) => lower,
        _ => c,
    }
}

/// Inverse of [`lower_char`] on the characters it changes.
pub fn upper_char(c: char) -> char {
    match single(c.to_uppercase()) {
        Some(upper) if upper != c && lower_char(upper) == c => upper,
        _ => c,
    }
}

fn is_upper(c: char) -> bool {
    lower_char(c) != c
}

fn single(mut chars: impl Iterator<Item = char>) -> Option<char> {
    let first = chars.next()?;
    chars.next().is_none().then_some(first)
}

fn lowered(text: &str) -> Vec<char> {
    text.chars().map(lower_char).collect()
}

/// Start positions (in `form`, then `lemma`) and length of the longest common
/// substring; the leftmost occurrence in `form` wins, then in `lemma`.
fn longest_common_substring(form: &[char], lemma: &[char]) -> (usize, usize, usize) {
    let mut best = (0, 0, 0);
    for f in 0..form.len() {
        for l in 0..lemma.len() {
            let len = form[f..]
                .iter()
                .zip(&lemma[l..])
                .take_while(|(a, b)| a == b)
                .count();
            if len > best.2 {
                best = (f, l, len);
            }
        }
    }
    best
}

/// Minimal copy/delete/insert program turning `source` into `target`.
///
/// Among equal-cost programs the table fill prefers, at every cell, an insert
/// over a delete over a copy whenever the predecessor cell is strictly cheaper
/// than the current best; this yields `--+b` rather than `+b--`.
fn min_edit_script(source: &[char], target: &[char]) -> Vec<EditOp> {
    let rows = source.len() + 1;
    let cols = target.len() + 1;
    let worst = source.len() + target.len() + 1;
    // (cost, predecessor move)
    let mut table: Vec<(usize, Option<EditOp>)> = alloc::vec![(worst, None); rows * cols];
    let at = |i: usize, j: usize| i * cols + j;
    table[0] = (0, None);
    for i in 0..rows {
        for j in 0..cols {
            if i == 0 && j == 0 {
                continue;
            }
            let mut cell = table[at(i, j)];
            if i > 0
                && j > 0
                && source[i - 1] == target[j - 1]
                && table[at(i - 1, j - 1)].0 < cell.0
            {
                cell = (table[at(i - 1, j - 1)].0, Some(EditOp::Copy));
            }
            if i > 0 && table[at(i - 1, j)].0 < cell.0 {
                cell = (table[at(i - 1, j)].0 + 1, Some(EditOp::Delete));
            }
            if j > 0 && table[at(i, j - 1)].0 < cell.0 {
                cell = (
                    table[at(i, j - 1)].0 + 1,
                    Some(EditOp::Insert(target[j - 1])),
                );
            }
            table[at(i, j)] = cell;
        }
    }

    let mut ops = Vec::new();
    let (mut i, mut j) = (source.len(), target.len());
    while let Some(op) = table[at(i, j)].1 {
        ops.push(op);
        match op {
            EditOp::Copy => {
                i -= 1;
                j -= 1;
            }
            EditOp::Delete => i -= 1,
            EditOp::Insert(_) => j -= 1,
        }
    }
    ops.reverse();
    ops
}

/// Induces the rule that rewrites `form` into `lemma`.
pub fn induce_rule(form: &str, lemma: &str) -> Result<LemmaRule, InduceError> {
    if form.is_empty() || lemma.is_empty() {
        return Err(InduceError::EmptyInput);
    }
    let casing = CasingScript::of(lemma);
    let form = lowered(form);
    let lemma = lowered(lemma);

    let (f, l, len) = longest_common_substring(&form, &lemma);
    let edit = if len == 0 {
        EditScript::Absolute(lemma.iter().collect())
    } else {
        EditScript::Delta {
            prefix: min_edit_script(&form[..f], &lemma[..l]),
            suffix: min_edit_script(&form[f + len..], &lemma[l + len..]),
        }
    };
    Ok(LemmaRule { casing, edit })
}

/// Applies a rule to a form.
pub fn apply_rule(rule: &LemmaRule, form: &str) -> Result<String, ApplyError> {
    let mut lemma: Vec<char> = match &rule.edit {
        EditScript::Absolute(literal) => literal.chars().collect(),
        EditScript::Delta { prefix, suffix } => {
            let form = lowered(form);
            let (head, tail) = rule.edit.budget();
            if head + tail > form.len() {
                return Err(ApplyError::FormTooShort {
                    needed: head + tail,
                    available: form.len(),
                });
            }
            let mut out = Vec::with_capacity(form.len() + 4);
            run_ops(prefix, &form[..head], &mut out);
            out.extend_from_slice(&form[head..form.len() - tail]);
            run_ops(suffix, &form[form.len() - tail..], &mut out);
            out
        }
    };
    if lemma.is_empty() {
        return Err(ApplyError::EmptyLemma);
    }
    rule.casing.apply(&mut lemma);
    Ok(lemma.into_iter().collect())
}

fn run_ops(ops: &[EditOp], source: &[char], out: &mut Vec<char>) {
    let mut source = source.iter();
    for op in ops {
        match op {
            EditOp::Copy => out.extend(source.next()),
            EditOp::Delete => {
                source.next();
            }
            EditOp::Insert(c) => out.push(*c),
        }
    }
}

/// Whether [`apply_rule`] succeeds on `form`.
pub fn is_applicable(rule: &LemmaRule, form: &str) -> bool {
    match &rule.edit {
        EditScript::Absolute(literal) => !literal.is_empty(),
        EditScript::Delta { prefix, suffix } => {
            let (head, tail) = rule.edit.budget();
            let length = form.chars().count();
            if head + tail > length {
                return false;
            }
            let inserted = prefix
                .iter()
                .chain(suffix)
                .filter(|op| !op.consumes())
                .count();
            let copied = prefix
                .iter()
                .chain(suffix)
                .filter(|op| **op == EditOp::Copy)
                .count();
            inserted + copied + (length - head - tail) > 0
        }
    }
}

pub fn serialize_rule(rule: &LemmaRule) -> String {
    rule.to_string()
}

pub fn parse_rule(text: &str) -> Result<LemmaRule, RuleParseError> {
    text.parse()
}

fn write_ops(ops: &[EditOp], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for op in ops {
        match op {
            EditOp::Copy => write!(f, "{COPY}")?,
            EditOp::Delete => write!(f, "{DELETE}")?,
            EditOp::Insert(c) => write!(f, "{INSERT}{c}")?,
        }
    }
    Ok(())
}

impl fmt::Display for LemmaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, op) in self.casing.ops.iter().enumerate() {
            if i > 0 {
                write!(f, "{SEP}")?;
            }
            let symbol = match op.case {
                Case::Upper => UP,
                Case::Lower => DOWN,
            };
            write!(f, "{symbol}{}", op.start)?;
        }
        f.write_str(";")?;
        match &self.edit {
            EditScript::Absolute(literal) => write!(f, "a{literal}"),
            EditScript::Delta { prefix, suffix } => {
                f.write_str("d")?;
                write_ops(prefix, f)?;
                write!(f, "{SEP}")?;
                write_ops(suffix, f)
            }
        }
    }
}

struct Cursor<'a> {
    chars: core::iter::Peekable<core::str::Chars<'a>>,
    position: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        self.position += 1;
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn error(&self, message: &'static str) -> RuleParseError {
        RuleParseError {
            position: self.position,
            message,
        }
    }
}

fn parse_ops(
    cursor: &mut Cursor<'_>,
    stop_at_separator: bool,
) -> Result<Vec<EditOp>, RuleParseError> {
    let mut ops = Vec::new();
    loop {
        match cursor.peek() {
            None if stop_at_separator => {
                return Err(cursor.error("expected `¦` after prefix edits"))
            }
            None => return Ok(ops),
            Some(SEP) if stop_at_separator => {
                cursor.next();
                return Ok(ops);
            }
            Some(COPY) => {
                cursor.next();
                ops.push(EditOp::Copy);
            }
            Some(DELETE) => {
                cursor.next();
                ops.push(EditOp::Delete);
            }
            Some(INSERT) => {
                cursor.next();
                let c = cursor
                    .next()
                    .ok_or_else(|| cursor.error("`+` must be followed by a character"))?;
                ops.push(EditOp::Insert(c));
            }
            Some(_) => return Err(cursor.error("unknown edit operation")),
        }
    }
}

impl FromStr for LemmaRule {
    type Err = RuleParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut cursor = Cursor {
            chars: text.chars().peekable(),
            position: 0,
        };

        let mut ops = Vec::new();
        loop {
            let case = match cursor.peek() {
                Some(UP) => Case::Upper,
                Some(DOWN) => Case::Lower,
                _ => return Err(cursor.error("expected `↑` or `↓`")),
            };
            cursor.next();
            let digits_at = cursor.position;
            let mut digits = String::new();
            while let Some(c) = cursor.peek().filter(char::is_ascii_digit) {
                digits.push(c);
                cursor.next();
            }
            // canonical indices carry no leading zeros
            if digits.is_empty() || (digits.len() > 1 && digits.starts_with('0')) {
                return Err(RuleParseError {
                    position: digits_at,
                    message: "expected a casing index",
                });
            }
            let start = digits.parse().map_err(|_| RuleParseError {
                position: digits_at,
                message: "casing index out of range",
            })?;
            ops.push(CasingOp { case, start });
            match cursor.peek() {
                Some(SEP) => cursor.next(),
                Some(';') => {
                    cursor.next();
                    break;
                }
                _ => return Err(cursor.error("expected `¦` or `;` after a casing op")),
            };
        }
        let casing = CasingScript::new(ops).ok_or(RuleParseError {
            position: 0,
            message: "casing ops must start at 0 and strictly increase",
        })?;

        let kind = cursor.peek();
        if !matches!(kind, Some('a' | 'd')) {
            return Err(cursor.error("expected `a` or `d`"));
        }
        cursor.next();
        let edit = match kind {
            Some('a') => {
                let literal: String = cursor.chars.collect();
                if literal.is_empty() {
                    return Err(RuleParseError {
                        position: cursor.position,
                        message: "absolute rule needs a non-empty lemma",
                    });
                }
                EditScript::Absolute(literal)
            }
            _ => {
                let prefix = parse_ops(&mut cursor, true)?;
                let suffix = parse_ops(&mut cursor, false)?;
                EditScript::Delta { prefix, suffix }
            }
        };
        Ok(LemmaRule { casing, edit })
    }
}

/// Rule counts over a corpus, most frequent first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RuleInventory {
    pub entries: Vec<(String, usize)>,
}

impl RuleInventory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, rule: &str) -> usize {
        self.entries
            .iter()
            .find(|(r, _)| r == rule)
            .map_or(0, |(_, n)| *n)
    }
}

/// Counts the induced rule of every token with a gold lemma. Ties in
/// frequency are ordered by rule text.
pub fn rule_inventory(corpus: &Corpus) -> RuleInventory {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for token in corpus.tokens() {
        let Some(lemma) = token.lemma() else { continue };
        match induce_rule(token.form(), lemma) {
            Ok(rule) => *counts.entry(rule.to_string()).or_default() += 1,
            Err(e) => log::warn!("skipping `{}`: {e}", token.form()),
        }
    }
    let mut entries: Vec<(String, usize)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    RuleInventory { entries }
}

/// Convenience used by tests and tools: induce and serialize in one go.
pub fn rule_text(form: &str, lemma: &str) -> Result<String, InduceError> {
    induce_rule(form, lemma).map(|r| r.to_string())
}

/// Lowercases with [`lower_char`], the mapping rules are matched under.
pub fn lowercase(text: &str) -> String {
    text.chars().map(lower_char).collect()
}
