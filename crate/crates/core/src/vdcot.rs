//! `<Task>`-delimited reasoning blocks declaring what an answer will
//! decode, and the consistency check between a block and a parsed
//! answer.

use std::collections::BTreeSet;
use std::fmt;

use regex::Regex;
use thiserror::Error;

use crate::trp::{self, AnswerAst, TokenKind};

/// One declared concept: name, unit set, instance count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CotEntry {
    pub name: String,
    pub units: BTreeSet<String>,
    pub num: usize,
}

/// A parsed task block. `entries` is empty iff `decode` is false.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CotBlock {
    pub decode: bool,
    pub entries: Vec<CotEntry>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CotParseError {
    #[error("missing <Task>...</Task> tags")]
    MissingTaskTags,
    #[error("more than one <Task> block")]
    MultipleTaskBlocks,
    #[error("malformed decode line: {0:?}")]
    MalformedDecodeLine(String),
    #[error("malformed entry line: {0:?}")]
    MalformedEntryLine(String),
}

/// Parse the single `<Task>` block in `source`. Duplicate
/// (name, unit-set) entries are merged by summing `num`; each merge is
/// reported as a notice.
pub fn parse_cot_with_notices(source: &str) -> Result<(CotBlock, Vec<String>), CotParseError> {
    let open = TokenKind::TaskOpen.surface();
    let close = TokenKind::TaskClose.surface();
    let start = source.find(open).ok_or(CotParseError::MissingTaskTags)?;
    if source[start + open.len()..].contains(open) {
        return Err(CotParseError::MultipleTaskBlocks);
    }
    let body_start = start + open.len();
    let end = source[body_start..]
        .find(close)
        .ok_or(CotParseError::MissingTaskTags)?;
    let body = &source[body_start..body_start + end];
    if source[body_start + end + close.len()..].contains(close) {
        return Err(CotParseError::MultipleTaskBlocks);
    }

    let mut lines = body.lines().map(str::trim).filter(|l| !l.is_empty());
    let decode_line = lines.next().unwrap_or("");
    let decode = if decode_line.starts_with("Unit decode (True)") {
        true
    } else if decode_line.starts_with("Unit decode (False)") {
        false
    } else {
        return Err(CotParseError::MalformedDecodeLine(decode_line.to_string()));
    };

    let entry_re = Regex::new(r"^-\s*Name:\s*(.+?)\s+Unit:\s*(.+?)\s+Num:\s*(\d+)\s*$").unwrap();
    let mut entries: Vec<CotEntry> = Vec::new();
    let mut notices = Vec::new();
    for line in lines {
        if !decode {
            return Err(CotParseError::MalformedEntryLine(format!(
                "entry after 'Unit decode (False)': {line:?}"
            )));
        }
        let caps = entry_re
            .captures(line)
            .ok_or_else(|| CotParseError::MalformedEntryLine(line.to_string()))?;
        let name = caps[1].trim().to_string();
        let units: BTreeSet<String> = caps[2]
            .split(',')
            .map(|u| u.trim().to_string())
            .filter(|u| !u.is_empty())
            .collect();
        if units.is_empty() {
            return Err(CotParseError::MalformedEntryLine(line.to_string()));
        }
        let num: usize = caps[3]
            .parse()
            .map_err(|_| CotParseError::MalformedEntryLine(line.to_string()))?;
        if num == 0 {
            return Err(CotParseError::MalformedEntryLine(line.to_string()));
        }
        let key = trp::normalize_phrase(&name);
        if let Some(existing) = entries
            .iter_mut()
            .find(|e| trp::normalize_phrase(&e.name) == key && e.units == units)
        {
            notices.push(format!(
                "duplicate entry for ({key:?}, {units:?}): merged by summing Num"
            ));
            existing.num += num;
        } else {
            entries.push(CotEntry { name, units, num });
        }
    }
    Ok((CotBlock { decode, entries }, notices))
}

pub fn parse_cot(source: &str) -> Result<CotBlock, CotParseError> {
    parse_cot_with_notices(source).map(|(b, _)| b)
}

/// Canonical emission; `parse_cot(emit_cot(b))` round-trips.
pub fn emit_cot(block: &CotBlock) -> String {
    let mut out = String::new();
    out.push_str(TokenKind::TaskOpen.surface());
    out.push('\n');
    if block.decode {
        out.push_str("Unit decode (True). Class name, target unit and number:\n");
        for e in &block.entries {
            let units: Vec<&str> = e.units.iter().map(String::as_str).collect();
            out.push_str(&format!(
                "- Name: {} Unit: {} Num: {}\n",
                e.name,
                units.join(", "),
                e.num
            ));
        }
    } else {
        out.push_str("Unit decode (False).\n");
    }
    out.push_str(TokenKind::TaskClose.surface());
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// decode=false but the answer contains a triplet
    UnexpectedTriplet { triplet: usize },
    /// entry's ref total across matching bindings differs from Num
    RefCountMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    /// an answer binding matched no declared entry
    UnclaimedTriplet {
        triplet: usize,
        phrase: String,
        units: Vec<String>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnexpectedTriplet { triplet } => {
                write!(f, "triplet {triplet} present but decode is False")
            }
            Violation::RefCountMismatch { name, expected, got } => {
                write!(f, "entry {name:?}: expected {expected} refs, got {got}")
            }
            Violation::UnclaimedTriplet { triplet, phrase, units } => write!(
                f,
                "triplet {triplet} ({phrase:?}, {units:?}) not claimed by any entry"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConsistencyReport {
    pub violations: Vec<Violation>,
    /// non-fatal observations, e.g. one entry satisfied by several triplets
    pub notices: Vec<String>,
}

impl ConsistencyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check a (block, answer) pair. Clean iff: a false decode flag implies
/// zero triplets; every entry's Num equals the total ref count of the
/// bindings it claims; every binding is claimed by exactly one entry.
pub fn check_consistency_detailed(cot: &CotBlock, ast: &AnswerAst) -> ConsistencyReport {
    let mut report = ConsistencyReport::default();
    let triplets: Vec<_> = ast.triplets().collect();
    if !cot.decode {
        for (ti, _) in triplets.iter().enumerate() {
            report.violations.push(Violation::UnexpectedTriplet { triplet: ti });
        }
        return report;
    }
    // per-entry tallies: (ref total, matching triplet count)
    let mut tallies = vec![(0usize, 0usize); cot.entries.len()];
    for (ti, t) in triplets.iter().enumerate() {
        let phrase_key = t.phrase.normalized_text();
        for b in &t.bindings {
            let bset: BTreeSet<String> = b.units.iter().cloned().collect();
            let claimed = cot.entries.iter().position(|e| {
                trp::normalize_phrase(&e.name) == phrase_key && e.units == bset
            });
            match claimed {
                Some(ei) => {
                    tallies[ei].0 += b.refs.len();
                    tallies[ei].1 += 1;
                }
                None => report.violations.push(Violation::UnclaimedTriplet {
                    triplet: ti,
                    phrase: phrase_key.clone(),
                    units: b.units.clone(),
                }),
            }
        }
    }
    for (e, &(got, matched)) in cot.entries.iter().zip(&tallies) {
        if got != e.num {
            report.violations.push(Violation::RefCountMismatch {
                name: e.name.clone(),
                expected: e.num,
                got,
            });
        }
        if matched > 1 {
            report.notices.push(format!(
                "entry {:?} satisfied by {matched} separate triplets",
                e.name
            ));
        }
    }
    report
}

pub fn check_consistency(cot: &CotBlock, ast: &AnswerAst) -> Vec<Violation> {
    check_consistency_detailed(cot, ast).violations
}
