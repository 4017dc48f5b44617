//! Rule-based observation compression.
//!
//! HTML observations lose presentation attributes, scripts, styles and
//! comments while every piece of visible text and every navigational
//! attribute survives. Plain text only gets whitespace normalisation;
//! anything semantic is left to the backend pass.
//!
//! Both passes keep leading `Key: value` metadata lines (`Address:`,
//! `Viewport:` and similar) verbatim, never expand their input and are
//! idempotent.

use serde::{Deserialize, Serialize};

/// Attributes carrying navigation or interaction data.
pub const KEPT_ATTRIBUTES: [&str; 7] = ["href", "src", "alt", "title", "aria-label", "placeholder", "value"];

/// Elements removed together with their content.
const DROPPED_ELEMENTS: [&str; 2] = ["script", "style"];

/// Elements whose text keeps its whitespace.
const PREFORMATTED: [&str; 2] = ["pre", "textarea"];

const MIN_TAG_PAIRS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentKind {
    Html,
    PlainText,
    SubAgentReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurifiedObservation {
    pub content: String,
    pub original_length: usize,
    pub purified_length: usize,
    pub kind: ContentKind,
    pub metadata_lines: Vec<String>,
}

impl PurifiedObservation {
    fn build(original: &str, metadata: Vec<&str>, body: String, kind: ContentKind) -> Self {
        let mut content = metadata.join("\n");
        if !metadata.is_empty() && !body.is_empty() {
            content.push('\n');
        }
        content.push_str(&body);
        Self {
            original_length: original.chars().count(),
            purified_length: content.chars().count(),
            content,
            kind,
            metadata_lines: metadata.into_iter().map(str::to_string).collect(),
        }
    }

    /// Fraction of characters removed, in `[0, 1]`.
    pub fn reduction(&self) -> f64 {
        if self.original_length == 0 {
            0.0
        } else {
            1.0 - self.purified_length as f64 / self.original_length as f64
        }
    }
}

/// Detects the content kind and applies the matching pass. Sub-agent
/// reports get the conservative text pass.
pub fn purify(text: &str, marker: &str) -> PurifiedObservation {
    match detect_kind(text, marker) {
        ContentKind::Html => purify_html(text),
        ContentKind::PlainText => purify_text(text),
        ContentKind::SubAgentReport => {
            let mut out = purify_text(text);
            out.kind = ContentKind::SubAgentReport;
            out
        }
    }
}

pub fn detect_kind(text: &str, marker: &str) -> ContentKind {
    if !marker.is_empty() && text.contains(marker) {
        return ContentKind::SubAgentReport;
    }
    let lower = text.to_ascii_lowercase();
    if ["<!doctype", "<html", "<body"].iter().any(|t| lower.contains(t)) {
        return ContentKind::Html;
    }
    if matched_tag_pairs(&lower) >= MIN_TAG_PAIRS {
        ContentKind::Html
    } else {
        ContentKind::PlainText
    }
}

fn matched_tag_pairs(lower: &str) -> usize {
    use std::collections::HashMap;
    let bytes = lower.as_bytes();
    let mut opens: HashMap<&str, usize> = HashMap::new();
    let mut closes: HashMap<&str, usize> = HashMap::new();
    let mut i = 0;
    while let Some(off) = lower[i..].find('<') {
        let at = i + off;
        let closing = bytes.get(at + 1) == Some(&b'/');
        let name_start = if closing { at + 2 } else { at + 1 };
        let name_end = scan_name(bytes, name_start);
        if name_end > name_start && bytes[name_start].is_ascii_alphabetic() {
            match bytes.get(name_end) {
                Some(b'>') | Some(b'/') => {}
                Some(c) if c.is_ascii_whitespace() && !closing => {}
                _ => {
                    i = at + 1;
                    continue;
                }
            }
            let name = &lower[name_start..name_end];
            *if closing { &mut closes } else { &mut opens }.entry(name).or_default() += 1;
        }
        i = at + 1;
    }
    closes.iter().map(|(name, c)| (*c).min(opens.get(name).copied().unwrap_or(0))).sum()
}

fn scan_name(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || matches!(bytes[i], b'-' | b':' | b'_')) {
        i += 1;
    }
    i
}

/// Splits off leading `Key: value` lines. A line qualifies when it has no
/// markup, starts with 1 to 20 letters or spaces followed by a colon, and
/// the colon is followed by whitespace.
fn split_metadata(text: &str) -> (Vec<&str>, &str) {
    let mut lines = Vec::new();
    let mut rest = text;
    loop {
        let (line, after, had_newline) = match rest.find('\n') {
            Some(n) => (&rest[..n], &rest[n + 1..], true),
            None => (rest, "", false),
        };
        if !is_metadata_line(line, had_newline) {
            break;
        }
        lines.push(line);
        rest = after;
        if !had_newline {
            break;
        }
    }
    (lines, rest)
}

fn is_metadata_line(line: &str, had_newline: bool) -> bool {
    if line.contains('<') {
        return false;
    }
    let Some(colon) = line.find(':') else {
        return false;
    };
    let key = &line[..colon];
    if key.is_empty() || key.len() > 20 || !key.chars().all(|c| c.is_ascii_alphabetic() || c == ' ') {
        return false;
    }
    match line[colon + 1..].chars().next() {
        Some(c) => c.is_whitespace(),
        None => had_newline,
    }
}

pub fn purify_html(text: &str) -> PurifiedObservation {
    let (metadata, rest) = split_metadata(text);
    let body = HtmlPass::new(rest).run();
    PurifiedObservation::build(text, metadata, body, ContentKind::Html)
}

struct HtmlPass<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    out: String,
    text: String,
    preformatted: usize,
}

struct Attribute<'a> {
    name: &'a str,
    value: Option<&'a str>,
}

impl<'a> HtmlPass<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            out: String::with_capacity(src.len() / 2),
            text: String::new(),
            preformatted: 0,
        }
    }

    fn run(mut self) -> String {
        while self.pos < self.bytes.len() {
            if self.bytes[self.pos] == b'<' && self.markup() {
                continue;
            }
            let next = self.src[self.pos + 1..].find('<').map_or(self.src.len(), |n| self.pos + 1 + n);
            self.text.push_str(&self.src[self.pos..next]);
            self.pos = next;
        }
        self.flush_text();
        let trimmed = self.out.trim();
        if trimmed.len() == self.out.len() {
            self.out
        } else {
            trimmed.to_string()
        }
    }

    /// Handles markup at `self.pos`; returns false when the `<` is literal text.
    fn markup(&mut self) -> bool {
        let rest = &self.src[self.pos..];
        if let Some(body) = rest.strip_prefix("<!--") {
            return match body.find("-->") {
                Some(end) => {
                    self.pos += 4 + end + 3;
                    true
                }
                None => false,
            };
        }
        match self.bytes.get(self.pos + 1) {
            Some(b'!') | Some(b'?') => match rest.find('>') {
                Some(end) => {
                    self.flush_text();
                    self.out.push_str(&rest[..=end]);
                    self.pos += end + 1;
                    true
                }
                None => false,
            },
            Some(b'/') if self.bytes.get(self.pos + 2).is_some_and(u8::is_ascii_alphabetic) => self.closing_tag(),
            Some(c) if c.is_ascii_alphabetic() => self.opening_tag(),
            _ => false,
        }
    }

    fn closing_tag(&mut self) -> bool {
        let name_start = self.pos + 2;
        let name_end = scan_name(self.bytes, name_start);
        let Some(gt) = self.src[name_end..].find('>') else {
            return false;
        };
        let name = &self.src[name_start..name_end];
        self.flush_text();
        if self.preformatted > 0 && is_one_of(name, &PREFORMATTED) {
            self.preformatted -= 1;
        }
        self.out.push_str("</");
        self.out.push_str(name);
        self.out.push('>');
        self.pos = name_end + gt + 1;
        true
    }

    fn opening_tag(&mut self) -> bool {
        let name_start = self.pos + 1;
        let name_end = scan_name(self.bytes, name_start);
        let name = &self.src[name_start..name_end];
        let Some((attrs, self_closing, end)) = self.attributes(name_end) else {
            return false;
        };
        if is_one_of(name, &DROPPED_ELEMENTS) && !self_closing {
            let close = format!("</{}", name.to_ascii_lowercase());
            self.pos = match find_ascii_ci(self.src, &close, end) {
                Some(at) => self.src[at..].find('>').map_or(self.src.len(), |gt| at + gt + 1),
                None => self.src.len(),
            };
            return true;
        }
        self.flush_text();
        self.out.push('<');
        self.out.push_str(name);
        for attr in attrs.iter().filter(|a| is_one_of(a.name, &KEPT_ATTRIBUTES)) {
            self.out.push(' ');
            self.out.push_str(attr.name);
            if let Some(v) = attr.value {
                self.out.push('=');
                self.out.push_str(v);
            }
        }
        self.out.push_str(if self_closing { "/>" } else { ">" });
        if !self_closing && is_one_of(name, &PREFORMATTED) {
            self.preformatted += 1;
        }
        self.pos = end;
        true
    }

    /// Parses attributes from `i` up to the closing `>`. Returns the
    /// attributes, whether the tag self-closes, and the index past `>`.
    fn attributes(&self, mut i: usize) -> Option<(Vec<Attribute<'a>>, bool, usize)> {
        let b = self.bytes;
        let mut attrs = Vec::new();
        loop {
            while i < b.len() && b[i].is_ascii_whitespace() {
                i += 1;
            }
            match b.get(i)? {
                b'>' => return Some((attrs, false, i + 1)),
                b'/' if b.get(i + 1) == Some(&b'>') => return Some((attrs, true, i + 2)),
                b'/' => {
                    i += 1;
                    continue;
                }
                _ => {}
            }
            let name_start = i;
            while i < b.len() && !b[i].is_ascii_whitespace() && !matches!(b[i], b'=' | b'>' | b'/') {
                i += 1;
            }
            if i == name_start {
                // stray `=`
                i += 1;
                continue;
            }
            let name = &self.src[name_start..i];
            let mut j = i;
            while j < b.len() && b[j].is_ascii_whitespace() {
                j += 1;
            }
            if b.get(j) != Some(&b'=') {
                attrs.push(Attribute { name, value: None });
                continue;
            }
            j += 1;
            while j < b.len() && b[j].is_ascii_whitespace() {
                j += 1;
            }
            let value_start = j;
            match b.get(j)? {
                q @ (b'"' | b'\'') => {
                    let close = self.src[j + 1..].find(*q as char)?;
                    j += close + 2;
                }
                _ => {
                    while j < b.len() && !b[j].is_ascii_whitespace() && b[j] != b'>' {
                        j += 1;
                    }
                }
            }
            attrs.push(Attribute { name, value: Some(&self.src[value_start..j]) });
            i = j;
        }
    }

    fn flush_text(&mut self) {
        if self.text.is_empty() {
            return;
        }
        if self.preformatted > 0 {
            self.out.push_str(&self.text);
        } else {
            collapse_whitespace_into(&self.text, &mut self.out);
        }
        self.text.clear();
    }
}

fn collapse_whitespace_into(text: &str, out: &mut String) {
    let mut in_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            if !in_space {
                out.push(' ');
            }
            in_space = true;
        } else {
            out.push(c);
            in_space = false;
        }
    }
}

fn is_one_of(name: &str, set: &[&str]) -> bool {
    set.iter().any(|s| s.eq_ignore_ascii_case(name))
}

/// ASCII case-insensitive search for a lowercase ASCII needle.
fn find_ascii_ci(hay: &str, needle: &str, from: usize) -> Option<usize> {
    let h = hay.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (from..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

/// Whitespace normalisation only: blank-line runs shrink to one, inner runs
/// of spaces and tabs shrink to one space, trailing whitespace goes.
/// Leading indentation is kept so nested lists stay nested.
pub fn purify_text(text: &str) -> PurifiedObservation {
    let (metadata, rest) = split_metadata(text);
    let mut lines: Vec<String> = Vec::new();
    let mut prev_blank = false;
    for raw in rest.split('\n') {
        let line = raw.trim_end();
        let blank = line.is_empty();
        if blank && prev_blank {
            continue;
        }
        prev_blank = blank;
        let indent_len = line.len() - line.trim_start_matches([' ', '\t']).len();
        let (indent, body) = line.split_at(indent_len);
        let mut out = String::with_capacity(line.len());
        out.push_str(indent);
        let mut in_space = false;
        for c in body.chars() {
            if c == ' ' || c == '\t' {
                if !in_space {
                    out.push(' ');
                }
                in_space = true;
            } else {
                out.push(c);
                in_space = false;
            }
        }
        lines.push(out);
    }
    let body = if rest.is_empty() { String::new() } else { lines.join("\n") };
    PurifiedObservation::build(text, metadata, body, ContentKind::PlainText)
}
