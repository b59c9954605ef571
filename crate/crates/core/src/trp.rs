//! Tokenizer, parser, emitter, and validator for the triplet-based
//! referring answer format.
//!
//! An answer interleaves plain text with *triplets*: a `<Phrase>`-tagged
//! concept, immediately followed by a parenthesized decode-spec listing
//! one or more `<Unit>` bindings, each binding carrying indexed `<REF>`
//! placeholders (`[0]<REF>[1]<REF>` ...).

use std::fmt;

use thiserror::Error;

/// The closed table of special tokens. No other surface string is ever
/// treated as a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    PhraseOpen,
    PhraseClose,
    UnitOpen,
    UnitClose,
    Ref,
    TaskOpen,
    TaskClose,
    Vpt,
    Pad,
    ImagePlaceholder,
}

impl TokenKind {
    pub const ALL: [TokenKind; 10] = [
        TokenKind::PhraseClose,
        TokenKind::PhraseOpen,
        TokenKind::UnitClose,
        TokenKind::TaskClose,
        TokenKind::ImagePlaceholder,
        TokenKind::UnitOpen,
        TokenKind::TaskOpen,
        TokenKind::Ref,
        TokenKind::Vpt,
        TokenKind::Pad,
    ];

    /// Bit-exact surface form.
    pub fn surface(self) -> &'static str {
        match self {
            TokenKind::PhraseOpen => "<Phrase>",
            TokenKind::PhraseClose => "</Phrase>",
            TokenKind::UnitOpen => "<Unit>",
            TokenKind::UnitClose => "</Unit>",
            TokenKind::Ref => "<REF>",
            TokenKind::TaskOpen => "<Task>",
            TokenKind::TaskClose => "</Task>",
            TokenKind::Vpt => "[VPT]",
            TokenKind::Pad => "[PAD]",
            TokenKind::ImagePlaceholder => "<image>",
        }
    }
}

/// One lexed item: a special token or a run of plain text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Special { kind: TokenKind, pos: usize },
    Text { text: String, pos: usize },
}

/// Longest-match at byte offset `pos`. `ALL` is ordered longest-first so
/// the first hit wins.
fn match_special(src: &str, pos: usize) -> Option<TokenKind> {
    let rest = &src[pos..];
    TokenKind::ALL
        .iter()
        .copied()
        .find(|k| rest.starts_with(k.surface()))
}

/// Total, lossless lexer: concatenating all surfaces and text runs
/// reproduces the input exactly. Unmatched angle-bracket text degrades
/// to a text run.
pub fn tokenize(source: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut text_start = 0usize;
    let mut pos = 0usize;
    while pos < source.len() {
        if let Some(kind) = match_special(source, pos) {
            if text_start < pos {
                out.push(Token::Text {
                    text: source[text_start..pos].to_string(),
                    pos: text_start,
                });
            }
            out.push(Token::Special { kind, pos });
            pos += kind.surface().len();
            text_start = pos;
        } else {
            // advance one char, not one byte
            pos += source[pos..].chars().next().map_or(1, char::len_utf8);
        }
    }
    if text_start < source.len() {
        out.push(Token::Text {
            text: source[text_start..].to_string(),
            pos: text_start,
        });
    }
    out
}

/// A `[i]<REF>` reference. `source_position` is the byte offset of the
/// `<REF>` token in the source; ignored by structural equality.
#[derive(Debug, Clone, Eq)]
pub struct RefToken {
    pub index: usize,
    pub source_position: usize,
}

impl PartialEq for RefToken {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index
    }
}

/// One `<Unit>...</Unit>` binding with its references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitBinding {
    pub units: Vec<String>,
    pub refs: Vec<RefToken>,
}

#[derive(Debug, Clone, Eq)]
pub enum PhraseChild {
    Text(String),
    Phrase(PhraseNode),
}

impl PartialEq for PhraseChild {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (PhraseChild::Text(a), PhraseChild::Text(b)) => a == b,
            (PhraseChild::Phrase(a), PhraseChild::Phrase(b)) => a == b,
            _ => false,
        }
    }
}

/// A `<Phrase>` node; may contain nested phrases. `span` holds byte
/// offsets in the source and is ignored by structural equality.
#[derive(Debug, Clone, Eq)]
pub struct PhraseNode {
    pub children: Vec<PhraseChild>,
    pub span: (usize, usize),
}

impl PartialEq for PhraseNode {
    fn eq(&self, other: &Self) -> bool {
        self.children == other.children
    }
}

impl PhraseNode {
    /// Raw concatenation of all text content, nested phrases included.
    pub fn text(&self) -> String {
        let mut s = String::new();
        self.collect_text(&mut s);
        s
    }

    fn collect_text(&self, out: &mut String) {
        for c in &self.children {
            match c {
                PhraseChild::Text(t) => out.push_str(t),
                PhraseChild::Phrase(p) => p.collect_text(out),
            }
        }
    }

    /// Matching key: lowercase, punctuation-stripped, whitespace-collapsed.
    pub fn normalized_text(&self) -> String {
        normalize_phrase(&self.text())
    }
}

/// Normalization used for every phrase/name comparison downstream.
pub fn normalize_phrase(s: &str) -> String {
    let mut out = String::new();
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

/// Phrase + decode-spec bindings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub phrase: PhraseNode,
    pub bindings: Vec<UnitBinding>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    Triplet(Triplet),
}

/// Parsed answer: an ordered interleaving of plain text and triplets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnswerAst {
    pub segments: Vec<Segment>,
}

impl AnswerAst {
    pub fn triplets(&self) -> impl Iterator<Item = &Triplet> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Triplet(t) => Some(t),
            Segment::Text(_) => None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unbalanced <Phrase> tags at byte {0}")]
    UnbalancedPhrase(usize),
    #[error("malformed decode-spec at byte {0}: {1}")]
    MalformedDecodeSpec(usize, String),
    #[error("ref indices {indices:?} are not contiguous from 0 (byte {pos})")]
    BadRefIndex { pos: usize, indices: Vec<usize> },
    #[error("<REF> outside a decode-spec at byte {0}")]
    DanglingRef(usize),
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn eof(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek_special(&self) -> Option<TokenKind> {
        match_special(self.src, self.pos)
    }

    fn eat_special(&mut self, kind: TokenKind) -> bool {
        if self.peek_special() == Some(kind) {
            self.pos += kind.surface().len();
            true
        } else {
            false
        }
    }

    fn peek_char(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let ch = self.peek_char()?;
        self.pos += ch.len_utf8();
        Some(ch)
    }

    fn skip_ws(&mut self) {
        while self.peek_char().is_some_and(|c| c.is_whitespace()) {
            self.bump();
        }
    }

    fn eat_char(&mut self, c: char) -> bool {
        if self.peek_char() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }
}

/// Parse an answer string into an [`AnswerAst`].
pub fn parse_answer(source: &str) -> Result<AnswerAst, ParseError> {
    let mut cur = Cursor { src: source, pos: 0 };
    let mut segments: Vec<Segment> = Vec::new();
    let mut text = String::new();
    let mut text_is_open = false;
    while !cur.eof() {
        match cur.peek_special() {
            Some(TokenKind::PhraseOpen) => {
                if text_is_open {
                    segments.push(Segment::Text(std::mem::take(&mut text)));
                    text_is_open = false;
                }
                let triplet = parse_triplet(&mut cur)?;
                segments.push(Segment::Triplet(triplet));
            }
            Some(TokenKind::PhraseClose) => return Err(ParseError::UnbalancedPhrase(cur.pos)),
            Some(TokenKind::Ref) => return Err(ParseError::DanglingRef(cur.pos)),
            Some(other) => {
                // other special tokens are literal content at answer level
                text.push_str(other.surface());
                text_is_open = true;
                cur.pos += other.surface().len();
            }
            None => {
                text.push(cur.bump().expect("not eof"));
                text_is_open = true;
            }
        }
    }
    if text_is_open {
        segments.push(Segment::Text(text));
    }
    Ok(AnswerAst { segments })
}

fn parse_triplet(cur: &mut Cursor) -> Result<Triplet, ParseError> {
    let phrase = parse_phrase(cur)?;
    cur.skip_ws();
    if !cur.eat_char('(') {
        return Err(ParseError::MalformedDecodeSpec(
            cur.pos,
            "expected '(' after </Phrase>".into(),
        ));
    }
    let mut bindings = Vec::new();
    loop {
        cur.skip_ws();
        // tolerate one extra paren around a binding (typographic noise)
        let wrapped = cur.eat_char('(');
        if wrapped {
            cur.skip_ws();
        }
        bindings.push(parse_binding(cur)?);
        if wrapped {
            cur.skip_ws();
            if !cur.eat_char(')') {
                return Err(ParseError::MalformedDecodeSpec(
                    cur.pos,
                    "unclosed '(' around binding".into(),
                ));
            }
        }
        cur.skip_ws();
        if cur.eat_char(',') {
            continue;
        }
        if cur.eat_char(')') {
            break;
        }
        return Err(ParseError::MalformedDecodeSpec(
            cur.pos,
            "expected ',' or ')' after binding".into(),
        ));
    }
    Ok(Triplet { phrase, bindings })
}

fn parse_phrase(cur: &mut Cursor) -> Result<PhraseNode, ParseError> {
    let start = cur.pos;
    assert!(cur.eat_special(TokenKind::PhraseOpen));
    let mut children = Vec::new();
    let mut text = String::new();
    loop {
        if cur.eof() {
            return Err(ParseError::UnbalancedPhrase(start));
        }
        match cur.peek_special() {
            Some(TokenKind::PhraseOpen) => {
                if !text.is_empty() {
                    children.push(PhraseChild::Text(std::mem::take(&mut text)));
                }
                children.push(PhraseChild::Phrase(parse_phrase(cur)?));
            }
            Some(TokenKind::PhraseClose) => {
                cur.eat_special(TokenKind::PhraseClose);
                break;
            }
            Some(TokenKind::Ref) => return Err(ParseError::DanglingRef(cur.pos)),
            // decode-spec tokens inside a phrase mean the phrase never closed
            Some(TokenKind::UnitOpen) | Some(TokenKind::UnitClose) => {
                return Err(ParseError::UnbalancedPhrase(start))
            }
            Some(other) => {
                text.push_str(other.surface());
                cur.pos += other.surface().len();
            }
            None => text.push(cur.bump().expect("not eof")),
        }
    }
    if !text.is_empty() {
        children.push(PhraseChild::Text(text));
    }
    Ok(PhraseNode {
        children,
        span: (start, cur.pos),
    })
}

fn parse_binding(cur: &mut Cursor) -> Result<UnitBinding, ParseError> {
    let spec_pos = cur.pos;
    if !cur.eat_special(TokenKind::UnitOpen) {
        return Err(ParseError::MalformedDecodeSpec(
            cur.pos,
            "expected <Unit>".into(),
        ));
    }
    // unit list runs up to </Unit>; any special token before it is malformed
    let mut raw = String::new();
    loop {
        if cur.eof() {
            return Err(ParseError::MalformedDecodeSpec(
                cur.pos,
                "unterminated <Unit>".into(),
            ));
        }
        match cur.peek_special() {
            Some(TokenKind::UnitClose) => {
                cur.eat_special(TokenKind::UnitClose);
                break;
            }
            Some(_) => {
                return Err(ParseError::MalformedDecodeSpec(
                    cur.pos,
                    "special token inside unit list".into(),
                ))
            }
            None => raw.push(cur.bump().expect("not eof")),
        }
    }
    let units: Vec<String> = raw
        .split(',')
        .map(|u| u.trim().to_string())
        .collect();
    if units.iter().any(String::is_empty) {
        return Err(ParseError::MalformedDecodeSpec(
            spec_pos,
            "empty unit name".into(),
        ));
    }
    let mut refs = Vec::new();
    loop {
        cur.skip_ws();
        if cur.peek_char() != Some('[') {
            break;
        }
        cur.bump();
        let mut digits = String::new();
        while cur.peek_char().is_some_and(|c| c.is_ascii_digit()) {
            digits.push(cur.bump().expect("digit"));
        }
        if digits.is_empty() || !cur.eat_char(']') {
            return Err(ParseError::MalformedDecodeSpec(
                cur.pos,
                "expected [index]".into(),
            ));
        }
        let index: usize = digits.parse().map_err(|_| {
            ParseError::MalformedDecodeSpec(cur.pos, "index out of range".into())
        })?;
        cur.skip_ws();
        let ref_pos = cur.pos;
        if !cur.eat_special(TokenKind::Ref) {
            return Err(ParseError::MalformedDecodeSpec(
                cur.pos,
                "expected <REF> after [index]".into(),
            ));
        }
        refs.push(RefToken {
            index,
            source_position: ref_pos,
        });
    }
    if refs.is_empty() {
        return Err(ParseError::MalformedDecodeSpec(
            spec_pos,
            "binding has no references".into(),
        ));
    }
    let indices: Vec<usize> = refs.iter().map(|r| r.index).collect();
    if indices.iter().enumerate().any(|(i, &ix)| ix != i) {
        return Err(ParseError::BadRefIndex {
            pos: spec_pos,
            indices,
        });
    }
    Ok(UnitBinding { units, refs })
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmitError {
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

/// Emit an answer in canonical form: no space inside brackets, a single
/// space after commas in unit lists, bindings joined by ", ".
pub fn emit_answer(ast: &AnswerAst) -> Result<String, EmitError> {
    let mut out = String::new();
    for seg in &ast.segments {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Triplet(t) => emit_triplet(t, &mut out)?,
        }
    }
    Ok(out)
}

fn emit_triplet(t: &Triplet, out: &mut String) -> Result<(), EmitError> {
    if t.bindings.is_empty() {
        return Err(EmitError::InvariantViolation("triplet has no bindings".into()));
    }
    emit_phrase(&t.phrase, out)?;
    out.push('(');
    for (i, b) in t.bindings.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        if b.units.is_empty() {
            return Err(EmitError::InvariantViolation("binding has no units".into()));
        }
        if b.units.iter().any(|u| {
            u.is_empty() || !u.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        }) {
            return Err(EmitError::InvariantViolation(format!(
                "bad unit name in {:?}",
                b.units
            )));
        }
        if b.refs.is_empty() {
            return Err(EmitError::InvariantViolation("binding has no refs".into()));
        }
        if b.refs.iter().enumerate().any(|(i, r)| r.index != i) {
            return Err(EmitError::InvariantViolation(format!(
                "ref indices {:?} not contiguous from 0",
                b.refs.iter().map(|r| r.index).collect::<Vec<_>>()
            )));
        }
        out.push_str(TokenKind::UnitOpen.surface());
        out.push_str(&b.units.join(", "));
        out.push_str(TokenKind::UnitClose.surface());
        for r in &b.refs {
            out.push('[');
            out.push_str(&r.index.to_string());
            out.push(']');
            out.push_str(TokenKind::Ref.surface());
        }
    }
    out.push(')');
    Ok(())
}

fn emit_phrase(p: &PhraseNode, out: &mut String) -> Result<(), EmitError> {
    if p.normalized_text().is_empty() {
        return Err(EmitError::InvariantViolation("empty phrase text".into()));
    }
    out.push_str(TokenKind::PhraseOpen.surface());
    for c in &p.children {
        match c {
            PhraseChild::Text(t) => out.push_str(t),
            PhraseChild::Phrase(nested) => emit_phrase(nested, out)?,
        }
    }
    out.push_str(TokenKind::PhraseClose.surface());
    Ok(())
}

/// Canonical form of a valid answer string.
pub fn canonicalize(source: &str) -> Result<String, ParseError> {
    let ast = parse_answer(source)?;
    Ok(emit_answer(&ast).expect("parsed AST satisfies invariants"))
}

/// Structural violations reported (not thrown) by [`validate_triplets`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    BadRefIndex {
        triplet: usize,
        binding: usize,
        indices: Vec<usize>,
    },
    DuplicateUnitBinding {
        triplet: usize,
        units: Vec<String>,
    },
    BadUnitName {
        triplet: usize,
        unit: String,
    },
    EmptyPhrase {
        triplet: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadRefIndex { triplet, binding, indices } => write!(
                f,
                "triplet {triplet} binding {binding}: ref indices {indices:?} not contiguous from 0"
            ),
            Violation::DuplicateUnitBinding { triplet, units } => {
                write!(f, "triplet {triplet}: duplicate unit binding {units:?}")
            }
            Violation::BadUnitName { triplet, unit } => {
                write!(f, "triplet {triplet}: bad unit name {unit:?}")
            }
            Violation::EmptyPhrase { triplet } => write!(f, "triplet {triplet}: empty phrase"),
        }
    }
}

fn unit_set(units: &[String]) -> Vec<String> {
    let mut s: Vec<String> = units.to_vec();
    s.sort();
    s.dedup();
    s
}

/// Check structural invariants of an AST (also those enforced by the
/// parser, since ASTs may be constructed programmatically).
pub fn validate_triplets(ast: &AnswerAst) -> Vec<Violation> {
    let mut out = Vec::new();
    for (ti, t) in ast.triplets().enumerate() {
        if t.phrase.normalized_text().is_empty() {
            out.push(Violation::EmptyPhrase { triplet: ti });
        }
        let mut seen_sets: Vec<Vec<String>> = Vec::new();
        for (bi, b) in t.bindings.iter().enumerate() {
            let indices: Vec<usize> = b.refs.iter().map(|r| r.index).collect();
            if b.refs.is_empty() || indices.iter().enumerate().any(|(i, &ix)| ix != i) {
                out.push(Violation::BadRefIndex {
                    triplet: ti,
                    binding: bi,
                    indices,
                });
            }
            for u in &b.units {
                if u.is_empty()
                    || !u.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
                {
                    out.push(Violation::BadUnitName {
                        triplet: ti,
                        unit: u.clone(),
                    });
                }
            }
            let set = unit_set(&b.units);
            if seen_sets.contains(&set) {
                out.push(Violation::DuplicateUnitBinding {
                    triplet: ti,
                    units: set.clone(),
                });
            } else {
                seen_sets.push(set);
            }
        }
    }
    out
}

/// Seeded generation of valid ASTs, used by round-trip and fuzz tests.
pub mod testgen {
    use super::*;
    use rand::Rng;

    const WORDS: &[&str] = &[
        "dog", "park", "two men", "electric boat", "red apple", "baseball cap", "car",
        "street", "skyscraper", "a small one", "couch", "person", "monitor",
    ];
    const UNITS: &[&str] = &["box", "mask", "keypoint", "depth", "point"];

    fn random_phrase<R: Rng>(rng: &mut R, depth: usize) -> PhraseNode {
        let mut children = Vec::new();
        let word = WORDS[rng.gen_range(0..WORDS.len())];
        if depth < 2 && rng.gen_bool(0.25) {
            // adjacent text runs merge on parse, so keep them merged here
            children.push(PhraseChild::Text(format!("{word} in ")));
            children.push(PhraseChild::Phrase(random_phrase(rng, depth + 1)));
        } else {
            children.push(PhraseChild::Text(word.to_string()));
        }
        PhraseNode { children, span: (0, 0) }
    }

    fn random_binding<R: Rng>(rng: &mut R, exclude: &[Vec<String>]) -> Option<UnitBinding> {
        // draw a unit set not already used by this triplet
        for _ in 0..8 {
            let k = rng.gen_range(1..=2);
            let mut units: Vec<String> = (0..k)
                .map(|_| UNITS[rng.gen_range(0..UNITS.len())].to_string())
                .collect();
            units.dedup();
            if exclude.contains(&super::unit_set(&units)) {
                continue;
            }
            let n = rng.gen_range(1..=4);
            let refs = (0..n)
                .map(|i| RefToken { index: i, source_position: 0 })
                .collect();
            return Some(UnitBinding { units, refs });
        }
        None
    }

    /// A random AST satisfying every type invariant.
    pub fn random_answer_ast<R: Rng>(rng: &mut R) -> AnswerAst {
        let mut segments = Vec::new();
        let n = rng.gen_range(0..=5);
        for i in 0..n {
            if i > 0 || rng.gen_bool(0.5) {
                segments.push(Segment::Text(format!(
                    " {} ",
                    WORDS[rng.gen_range(0..WORDS.len())]
                )));
            }
            let mut bindings = Vec::new();
            let mut used = Vec::new();
            let nb = rng.gen_range(1..=2);
            for _ in 0..nb {
                if let Some(b) = random_binding(rng, &used) {
                    used.push(super::unit_set(&b.units));
                    bindings.push(b);
                }
            }
            segments.push(Segment::Triplet(Triplet {
                phrase: random_phrase(rng, 0),
                bindings,
            }));
        }
        AnswerAst { segments }
    }
}
