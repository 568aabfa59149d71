//! Line grammar shared by prompts and responses:
//!
//! ```text
//! CHAIN(<parent id>)?: node (-> | -[relation]->) node ... -> TARGET[title]
//! node := ITEM[title] | ATTR[name] | TARGET[title] | free-text concept
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::prompt::MASK_TOKEN;
use crate::domain::{canonicalize_label, ReasoningChain, DEFAULT_RELATION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "label", rename_all = "lowercase")]
pub enum ChainToken {
    Item(String),
    Attr(String),
    Concept(String),
    Target(String),
    Mask,
}

impl ChainToken {
    fn render(&self) -> String {
        match self {
            ChainToken::Item(l) => format!("ITEM[{l}]"),
            ChainToken::Attr(l) => format!("ATTR[{l}]"),
            ChainToken::Target(l) => format!("TARGET[{l}]"),
            ChainToken::Concept(l) => l.clone(),
            ChainToken::Mask => MASK_TOKEN.to_string(),
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            ChainToken::Item(l) | ChainToken::Attr(l) | ChainToken::Concept(l) | ChainToken::Target(l) => {
                Some(l)
            }
            ChainToken::Mask => None,
        }
    }
}

pub fn render_tokens(id: Option<&str>, tokens: &[ChainToken], relations: &[String]) -> String {
    let mut s = match id {
        Some(id) => format!("CHAIN({id}): "),
        None => "CHAIN: ".to_string(),
    };
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            match relations.get(i - 1).map(String::as_str) {
                Some(rel) if rel != DEFAULT_RELATION => s.push_str(&format!(" -[{rel}]-> ")),
                _ => s.push_str(" -> "),
            }
        }
        s.push_str(&t.render());
    }
    s
}

/// Renders a chain as one response line, with its parent link if any.
pub fn render_chain(chain: &ReasoningChain) -> String {
    let view = super::ChainView::from_chain(chain);
    render_tokens(chain.parent.as_deref(), &view.tokens, &view.relations)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedChain {
    /// Parent chain id named in `CHAIN(<id>)`.
    pub link: Option<String>,
    pub tokens: Vec<ChainToken>,
    pub relations: Vec<String>,
}

impl ParsedChain {
    pub fn target(&self) -> &str {
        self.tokens.last().and_then(ChainToken::label).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutcome {
    pub chains: Vec<ParsedChain>,
    pub skipped: usize,
}

fn strip_bullet(line: &str) -> &str {
    let mut s = line.trim();
    s = s.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            s = r.trim_start();
        }
    }
    s
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len() && s.is_char_boundary(prefix.len()) && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}

fn bracketed<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    strip_prefix_ci(s, prefix)?.strip_suffix(']')
}

fn parse_token(raw: &str) -> Option<ChainToken> {
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case(MASK_TOKEN) {
        return Some(ChainToken::Mask);
    }
    let canon = |s: &str| canonicalize_label(s).ok();
    if let Some(l) = bracketed(raw, "ITEM[") {
        return canon(l).map(ChainToken::Item);
    }
    if let Some(l) = bracketed(raw, "ATTR[") {
        return canon(l).map(ChainToken::Attr);
    }
    if let Some(l) = bracketed(raw, "TARGET[") {
        return canon(l).map(ChainToken::Target);
    }
    canon(raw).map(ChainToken::Concept)
}

/// Splits a chain body on arrows outside brackets.
fn split_body(body: &str) -> Option<(Vec<&str>, Vec<String>)> {
    let bytes = body.as_bytes();
    let mut parts = Vec::new();
    let mut relations = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'[' => depth += 1,
            b']' => depth -= 1,
            b'-' if depth == 0 => {
                if bytes.get(i + 1) == Some(&b'>') {
                    parts.push(&body[start..i]);
                    relations.push(DEFAULT_RELATION.to_string());
                    i += 2;
                    start = i;
                    continue;
                }
                if bytes.get(i + 1) == Some(&b'[') {
                    let rest = &body[i + 2..];
                    let end = rest.find("]->")?;
                    let rel = canonicalize_label(&rest[..end]).ok()?;
                    parts.push(&body[start..i]);
                    relations.push(rel);
                    i += 2 + end + 3;
                    start = i;
                    continue;
                }
            }
            _ => {}
        }
        if depth < 0 {
            return None;
        }
        i += 1;
    }
    parts.push(&body[start..]);
    Some((parts, relations))
}

fn parse_line(line: &str) -> Option<ParsedChain> {
    let line = strip_bullet(line);
    let rest = strip_prefix_ci(line, "CHAIN")?;
    let rest = rest.trim_start();
    let (link, rest) = if let Some(r) = rest.strip_prefix('(') {
        let end = r.find(')')?;
        let id = r[..end].trim();
        let link = if id.is_empty() { None } else { Some(id.to_string()) };
        (link, &r[end + 1..])
    } else {
        (None, rest)
    };
    let body = rest.trim_start().strip_prefix(':')?;
    let (parts, relations) = split_body(body)?;
    let tokens: Vec<ChainToken> = parts.into_iter().map(parse_token).collect::<Option<_>>()?;
    if tokens.len() < 2 || !matches!(tokens.last(), Some(ChainToken::Target(_))) {
        return None;
    }
    let body_ok = tokens[..tokens.len() - 1]
        .iter()
        .all(|t| !matches!(t, ChainToken::Target(_) | ChainToken::Mask));
    if !body_ok {
        return None;
    }
    Some(ParsedChain {
        link,
        tokens,
        relations,
    })
}

/// Parses every well-formed `CHAIN:` line; other non-blank lines are skipped.
pub fn parse_chains(raw: &str) -> Result<ParseOutcome> {
    let mut chains = Vec::new();
    let mut skipped = 0;
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        match parse_line(line) {
            Some(c) => chains.push(c),
            None => skipped += 1,
        }
    }
    if chains.is_empty() {
        return Err(Error::NoChains { skipped });
    }
    Ok(ParseOutcome { chains, skipped })
}

/// Item titles named as `ITEM[..]` (or `TARGET[..]`), canonicalized and deduplicated.
pub fn parse_items(raw: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for line in raw.lines() {
        let line = strip_bullet(line);
        let label = bracketed(line, "ITEM[").or_else(|| bracketed(line, "TARGET["));
        if let Some(l) = label.and_then(|l| canonicalize_label(l).ok()) {
            if seen.insert(l.clone()) {
                out.push(l);
            }
        }
    }
    out
}

/// The single `FILL[..]` answer, or the first non-blank line as a fallback.
pub fn parse_fill(raw: &str) -> Option<String> {
    for line in raw.lines() {
        let line = strip_bullet(line);
        if let Some(l) = bracketed(line, "FILL[") {
            return canonicalize_label(l).ok();
        }
    }
    raw.lines()
        .map(strip_bullet)
        .find(|l| !l.is_empty())
        .and_then(|l| canonicalize_label(l).ok())
}
