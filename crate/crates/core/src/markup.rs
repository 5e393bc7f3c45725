//! Grounding tag markup: `<gdo>`, `<gda>` and `<gdl>` spans linking caption
//! text to object ids.
//!
//! Grammar accepted by [`parse_caption`]:
//!
//! ```text
//! caption := (text | tag)*
//! tag     := '<' name ' '+ 'class="' value '"' (' '+ id)+ ' '* '>' body '</' name '>'
//! name    := 'gdo' | 'gda' | 'gdl'
//! id      := [a-z-]+ '-' [0-9]+
//! body    := non-empty text without '<'
//! ```
//!
//! A bare `<` anywhere outside a well-formed tag is a syntax error, tags never
//! nest and a close tag must match its open tag.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagKind {
    /// Object.
    Gdo,
    /// Action.
    Gda,
    /// Location.
    Gdl,
}

impl TagKind {
    pub const ALL: [TagKind; 3] = [TagKind::Gdo, TagKind::Gda, TagKind::Gdl];

    pub fn name(self) -> &'static str {
        match self {
            TagKind::Gdo => "gdo",
            TagKind::Gda => "gda",
            TagKind::Gdl => "gdl",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "gdo" => Some(TagKind::Gdo),
            "gda" => Some(TagKind::Gda),
            "gdl" => Some(TagKind::Gdl),
            _ => None,
        }
    }
}

impl fmt::Display for TagKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSpan {
    pub kind: TagKind,
    pub class_attr: String,
    pub ref_ids: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Segment {
    Text { text: String },
    Tag(TagSpan),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionAst {
    segments: Vec<Segment>,
}

impl CaptionAst {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Appends plain text, merging it into a preceding text segment.
    pub fn push_text(&mut self, text: &str) {
        if text.is_empty() {
            return;
        }
        if let Some(Segment::Text { text: prev }) = self.segments.last_mut() {
            prev.push_str(text);
        } else {
            self.segments.push(Segment::Text { text: text.to_owned() });
        }
    }

    pub fn push_tag(&mut self, span: TagSpan) {
        self.segments.push(Segment::Tag(span));
    }

    pub fn spans(&self) -> impl Iterator<Item = &TagSpan> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Tag(t) => Some(t),
            Segment::Text { .. } => None,
        })
    }

    /// Caption prose with markup removed; tag bodies are kept.
    pub fn plain_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Text { text } => text.as_str(),
                Segment::Tag(t) => t.text.as_str(),
            })
            .collect()
    }

    /// Checks the structural rules a serializable AST must satisfy.
    pub fn check(&self) -> Result<(), String> {
        let mut prev_text = false;
        for seg in &self.segments {
            match seg {
                Segment::Text { text } => {
                    if text.is_empty() {
                        return Err("empty text segment".into());
                    }
                    if prev_text {
                        return Err("adjacent text segments must be merged".into());
                    }
                    if text.contains('<') {
                        return Err("text contains `<`".into());
                    }
                    prev_text = true;
                }
                Segment::Tag(t) => {
                    prev_text = false;
                    if t.text.is_empty() || t.text.contains('<') {
                        return Err(format!("invalid span text {:?}", t.text));
                    }
                    if !valid_class_value(&t.class_attr) {
                        return Err(format!("invalid class attribute {:?}", t.class_attr));
                    }
                    if t.ref_ids.is_empty() {
                        return Err("empty id list".into());
                    }
                    if let Some(bad) = t.ref_ids.iter().find(|id| !is_object_id(id)) {
                        return Err(format!("invalid object id {bad:?}"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxError {
    /// Byte offset into the caption text.
    pub position: usize,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}: {}", self.position, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{} syntax error(s), first {}", errors.len(), errors[0])]
pub struct ParseError {
    pub errors: Vec<SyntaxError>,
}

/// `[a-z-]+ '-' [0-9]+`
pub fn is_object_id(s: &str) -> bool {
    let Some(dash) = s.rfind('-') else {
        return false;
    };
    let (prefix, digits) = (&s[..dash], &s[dash + 1..]);
    !prefix.is_empty()
        && !digits.is_empty()
        && prefix.bytes().all(|b| b.is_ascii_lowercase() || b == b'-')
        && digits.bytes().all(|b| b.is_ascii_digit())
}

fn valid_class_value(s: &str) -> bool {
    !s.is_empty() && !s.contains(['"', '<', '>'])
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    errors: Vec<SyntaxError>,
}

#[derive(Debug)]
struct TagError {
    position: usize,
    message: String,
    /// Where scanning resumes after the malformed tag.
    resume: usize,
}

impl<'a> Parser<'a> {
    fn err(&mut self, position: usize, message: impl Into<String>) {
        self.errors.push(SyntaxError {
            position,
            message: message.into(),
        });
    }

    fn run(mut self) -> Result<CaptionAst, ParseError> {
        let mut ast = CaptionAst::new();
        while self.pos < self.src.len() {
            let rest = &self.src[self.pos..];
            match rest.find('<') {
                None => {
                    ast.push_text(rest);
                    self.pos = self.src.len();
                }
                Some(0) => match self.tag() {
                    Ok(span) => ast.push_tag(span),
                    Err(e) => {
                        self.err(e.position, e.message);
                        self.pos = e.resume;
                    }
                },
                Some(off) => {
                    ast.push_text(&rest[..off]);
                    self.pos += off;
                }
            }
        }
        if self.errors.is_empty() {
            Ok(ast)
        } else {
            Err(ParseError { errors: self.errors })
        }
    }

    /// Parses one tag starting at `self.pos`, which points at `<`.
    fn tag(&mut self) -> Result<TagSpan, TagError> {
        let src = self.src;
        let start = self.pos;
        let after_lt = start + 1;
        let fail = |position: usize, message: String, resume: usize| TagError {
            position,
            message,
            resume,
        };
        // Resume after the next '>' when the open tag itself is broken.
        let next_gt = |from: usize| src[from..].find('>').map_or(src.len(), |i| from + i + 1);

        if src[after_lt..].starts_with('/') {
            let end = next_gt(after_lt);
            return Err(fail(start, "closing tag without matching open tag".into(), end));
        }
        let name_len = src[after_lt..]
            .bytes()
            .take_while(|b| b.is_ascii_alphanumeric())
            .count();
        let name = &src[after_lt..after_lt + name_len];
        let Some(kind) = TagKind::from_name(name) else {
            let msg = if name.is_empty() {
                "bare `<` in text".to_string()
            } else {
                format!("unknown tag name `{name}`")
            };
            let resume = if name.is_empty() {
                after_lt
            } else {
                let open_end = next_gt(after_lt);
                let close = format!("</{name}>");
                src[open_end..]
                    .find(&close)
                    .map_or(open_end, |i| open_end + i + close.len())
            };
            return Err(fail(start, msg, resume));
        };

        let open_end = match src[after_lt..].find(['>', '<']) {
            Some(i) if src.as_bytes()[after_lt + i] == b'>' => after_lt + i,
            Some(i) => return Err(fail(start, format!("unterminated <{name}> open tag"), after_lt + i)),
            None => return Err(fail(start, format!("unterminated <{name}> open tag"), src.len())),
        };
        let close_tag = format!("</{name}>");
        // Skip past the body on attribute errors so the body is not reported twice.
        let skip_body = || {
            src[open_end..]
                .find(&close_tag)
                .map_or(open_end + 1, |i| open_end + i + close_tag.len())
        };

        let attrs_start = after_lt + name_len;
        let attrs = &src[attrs_start..open_end];
        let (class_attr, ref_ids) =
            parse_attrs(attrs).map_err(|(off, msg)| fail(attrs_start + off, msg, skip_body()))?;

        let body_start = open_end + 1;
        let body_len = src[body_start..].find('<').unwrap_or(src.len() - body_start);
        let body_end = body_start + body_len;
        let text = &src[body_start..body_end];
        if body_end >= src.len() {
            return Err(fail(start, format!("unclosed <{name}> tag"), src.len()));
        }
        let tail = &src[body_end..];
        if tail.starts_with(&close_tag) {
            if text.is_empty() {
                return Err(fail(
                    body_start,
                    format!("empty <{name}> span text"),
                    body_end + close_tag.len(),
                ));
            }
            self.pos = body_end + close_tag.len();
            return Ok(TagSpan {
                kind,
                class_attr,
                ref_ids,
                text: text.to_owned(),
            });
        }
        if let Some(other) = tail.strip_prefix("</") {
            let other_name: String = other.chars().take_while(|c| *c != '>').collect();
            let resume = next_gt(body_end);
            return Err(fail(
                body_end,
                format!("mismatched close tag </{other_name}> for <{name}>"),
                resume,
            ));
        }
        let inner_is_tag = tail[1..].get(..3).and_then(TagKind::from_name).is_some();
        if inner_is_tag {
            Err(fail(
                body_end,
                format!("nested tag inside <{name}>"),
                skip_body().max(body_end + 1),
            ))
        } else {
            Err(fail(
                body_end,
                format!("bare `<` inside <{name}> span"),
                skip_body().max(body_end + 1),
            ))
        }
    }
}

/// Parses ` class="value" id id ...` (the part between the name and `>`).
/// Errors carry an offset relative to `attrs`.
fn parse_attrs(attrs: &str) -> Result<(String, Vec<String>), (usize, String)> {
    if attrs.is_empty() {
        return Err((0, "missing class attribute".into()));
    }
    if !attrs.starts_with(' ') {
        return Err((0, "expected space after tag name".into()));
    }
    let mut pos = attrs.len() - attrs.trim_start_matches(' ').len();
    let rest = &attrs[pos..];
    let Some(value_and_more) = rest.strip_prefix("class=\"") else {
        return Err((pos, "missing class attribute".into()));
    };
    let Some(q) = value_and_more.find('"') else {
        return Err((pos, "unterminated class attribute".into()));
    };
    let class = &value_and_more[..q];
    if class.is_empty() {
        return Err((pos, "empty class attribute".into()));
    }
    pos += "class=\"".len() + q + 1;

    let mut ids = Vec::new();
    loop {
        let rest = &attrs[pos..];
        if rest.is_empty() {
            break;
        }
        let spaces = rest.len() - rest.trim_start_matches(' ').len();
        if spaces == 0 {
            return Err((pos, "expected space before object id".into()));
        }
        pos += spaces;
        let rest = &attrs[pos..];
        if rest.is_empty() {
            break;
        }
        let tok_len = rest.find(' ').unwrap_or(rest.len());
        let tok = &rest[..tok_len];
        if !is_object_id(tok) {
            return Err((pos, format!("invalid object id `{tok}`")));
        }
        ids.push(tok.to_owned());
        pos += tok_len;
    }
    if ids.is_empty() {
        return Err((attrs.len(), "empty id list".into()));
    }
    Ok((class.to_owned(), ids))
}

pub fn parse_caption(text: &str) -> Result<CaptionAst, ParseError> {
    Parser {
        src: text,
        pos: 0,
        errors: Vec::new(),
    }
    .run()
}

pub fn serialize_caption(ast: &CaptionAst) -> String {
    let mut out = String::new();
    for seg in &ast.segments {
        match seg {
            Segment::Text { text } => out.push_str(text),
            Segment::Tag(t) => {
                out.push('<');
                out.push_str(t.kind.name());
                out.push_str(" class=\"");
                out.push_str(&t.class_attr);
                out.push('"');
                for id in &t.ref_ids {
                    out.push(' ');
                    out.push_str(id);
                }
                out.push('>');
                out.push_str(&t.text);
                out.push_str("</");
                out.push_str(t.kind.name());
                out.push('>');
            }
        }
    }
    out
}

impl fmt::Display for CaptionAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_caption(self))
    }
}

pub fn referenced_ids(ast: &CaptionAst) -> BTreeSet<String> {
    ast.spans().flat_map(|s| s.ref_ids.iter().cloned()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindMismatch {
    pub span: TagSpan,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub syntax_errors: Vec<SyntaxError>,
    pub unknown_ids: BTreeSet<String>,
    pub kind_mismatches: Vec<KindMismatch>,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.syntax_errors.is_empty() && self.unknown_ids.is_empty() && self.kind_mismatches.is_empty()
    }

    pub fn from_parse_error(err: &ParseError) -> Self {
        Self {
            syntax_errors: err.errors.clone(),
            ..Self::default()
        }
    }
}

pub fn validate_against_frame(ast: &CaptionAst, frame: &Frame) -> Diagnostics {
    let classes: BTreeMap<&str, &str> = frame
        .objects
        .iter()
        .map(|o| (o.object_id.as_str(), o.class_name.as_str()))
        .collect();
    let mut diag = Diagnostics::default();
    for span in ast.spans() {
        for id in &span.ref_ids {
            match classes.get(id.as_str()) {
                None => {
                    diag.unknown_ids.insert(id.clone());
                }
                // Action classes name the action, not the object.
                Some(_) if span.kind == TagKind::Gda => {}
                Some(class) if *class != span.class_attr => {
                    diag.kind_mismatches.push(KindMismatch {
                        span: span.clone(),
                        reason: format!(
                            "{id} is a `{class}` but the {} span says class=\"{}\"",
                            span.kind, span.class_attr
                        ),
                    });
                }
                Some(_) => {}
            }
        }
    }
    diag
}

/// Parses and validates in one step; parse failures become syntax diagnostics.
pub fn validate_text(text: &str, frame: &Frame) -> (Option<CaptionAst>, Diagnostics) {
    match parse_caption(text) {
        Ok(ast) => {
            let diag = validate_against_frame(&ast, frame);
            (Some(ast), diag)
        }
        Err(e) => (None, Diagnostics::from_parse_error(&e)),
    }
}

/// Removes markup, keeping the text of each span.
pub fn strip_tags(text: &str) -> String {
    match parse_caption(text) {
        Ok(ast) => ast.plain_text(),
        Err(_) => {
            // Best effort for malformed captions: drop anything that looks like a tag.
            let mut out = String::with_capacity(text.len());
            let mut rest = text;
            while let Some(i) = rest.find('<') {
                out.push_str(&rest[..i]);
                match rest[i..].find('>') {
                    Some(j) => rest = &rest[i + j + 1..],
                    None => {
                        rest = "";
                    }
                }
            }
            out.push_str(rest);
            out
        }
    }
}
