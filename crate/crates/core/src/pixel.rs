//! Pixel ID extraction from archived landing-page HTML.
//!
//! Matching is pattern based: archived markup is routinely malformed, and
//! the base code snippet that installs the Pixel follows a known template.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::bytes::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid pixel id {0:?}: expected 5 to 20 decimal digits")]
pub struct InvalidPixelId(pub String);

/// Meta-assigned numeric Pixel identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PixelId(String);

impl PixelId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for PixelId {
    type Err = InvalidPixelId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if (5..=20).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_digit()) {
            Ok(Self(s.to_string()))
        } else {
            Err(InvalidPixelId(s.to_string()))
        }
    }
}

impl TryFrom<String> for PixelId {
    type Error = InvalidPixelId;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PixelId> for String {
    fn from(p: PixelId) -> Self {
        p.0
    }
}

impl fmt::Display for PixelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    /// `fbq('init', '<id>')`
    FbqInit,
    /// `facebook.com/tr?id=<id>` (usually the noscript image)
    TrackingEndpoint,
    /// `connect.facebook.net/signals/config/<id>`
    ConfigScriptUrl,
}

impl EvidenceKind {
    fn pattern(self) -> &'static Regex {
        static INIT: OnceLock<Regex> = OnceLock::new();
        static TR: OnceLock<Regex> = OnceLock::new();
        static CFG: OnceLock<Regex> = OnceLock::new();
        match self {
            Self::FbqInit => INIT.get_or_init(|| {
                Regex::new(r#"(?i)fbq\s*\(\s*(?:'|"|\\")init(?:'|"|\\")\s*,\s*(?:'|"|\\")?\s*([0-9]{5,20})"#)
                    .expect("valid regex")
            }),
            Self::TrackingEndpoint => TR.get_or_init(|| {
                Regex::new(r#"(?i)facebook\.com/tr/?\?(?:[^"'\s<>]*?[&;])?id=([0-9]{5,20})"#)
                    .expect("valid regex")
            }),
            Self::ConfigScriptUrl => CFG.get_or_init(|| {
                Regex::new(r"(?i)connect\.facebook\.net/signals/config/([0-9]{5,20})")
                    .expect("valid regex")
            }),
        }
    }

    pub const ALL: [EvidenceKind; 3] = [Self::FbqInit, Self::TrackingEndpoint, Self::ConfigScriptUrl];
}

/// Where and how a Pixel ID was found. Offsets index the original input.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Evidence {
    pub pixel_id: PixelId,
    pub kind: EvidenceKind,
    pub start: usize,
    pub end: usize,
    pub in_comment: bool,
}

impl Evidence {
    /// Re-check this evidence against the bytes it was extracted from.
    pub fn verify(&self, html: &[u8]) -> bool {
        let Some(window) = html.get(self.start..self.end) else {
            return false;
        };
        let stripped = strip_archive_rewrites(window);
        self.kind
            .pattern()
            .captures(&stripped)
            .and_then(|c| c.get(1))
            .is_some_and(|m| m.as_bytes() == self.pixel_id.as_str().as_bytes())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub pixel_ids: BTreeSet<PixelId>,
    pub evidence: Vec<Evidence>,
}

impl Extraction {
    /// IDs with at least one piece of evidence outside comments.
    pub fn active_ids(&self) -> BTreeSet<PixelId> {
        self.evidence
            .iter()
            .filter(|e| !e.in_comment)
            .map(|e| e.pixel_id.clone())
            .collect()
    }
}

fn archive_prefix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)(?:(?:https?:)?//web\.archive\.org)?/web/[0-9]{1,14}[a-z_]*/((?:https?:)?//)")
            .expect("valid regex")
    })
}

/// Remove archive replay prefixes so embedded URLs show their original hosts.
pub fn strip_archive_rewrites(html: &[u8]) -> Vec<u8> {
    strip_with_map(html).0
}

/// Stripped bytes plus `(stripped_offset, cumulative_removed)` breakpoints.
fn strip_with_map(html: &[u8]) -> (Vec<u8>, Vec<(usize, usize)>) {
    let mut out = Vec::with_capacity(html.len());
    let mut map = Vec::new();
    let mut removed = 0;
    let mut last = 0;
    for caps in archive_prefix().captures_iter(html) {
        let whole = caps.get(0).expect("match");
        let keep = caps.get(1).expect("scheme group");
        out.extend_from_slice(&html[last..whole.start()]);
        removed += keep.start() - whole.start();
        map.push((out.len(), removed));
        last = keep.start();
    }
    out.extend_from_slice(&html[last..]);
    (out, map)
}

fn to_original(offset: usize, map: &[(usize, usize)]) -> usize {
    let idx = map.partition_point(|(pos, _)| *pos <= offset);
    if idx == 0 {
        offset
    } else {
        offset + map[idx - 1].1
    }
}

/// Byte ranges of HTML comments and JS block/line comments.
fn comment_ranges(text: &[u8]) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let find = |hay: &[u8], needle: &[u8], from: usize| {
        hay[from..]
            .windows(needle.len())
            .position(|w| w == needle)
            .map(|p| p + from)
    };
    let mut i = 0;
    while let Some(s) = find(text, b"<!--", i) {
        let e = find(text, b"-->", s + 4).map_or(text.len(), |e| e + 3);
        ranges.push((s, e));
        i = e;
    }
    i = 0;
    while let Some(s) = find(text, b"/*", i) {
        let e = find(text, b"*/", s + 2).map_or(text.len(), |e| e + 2);
        ranges.push((s, e));
        i = e;
    }
    // `//` line comments, ignoring the `//` of scheme-relative or absolute URLs
    let mut line_start = 0;
    for (pos, &b) in text.iter().enumerate().chain(std::iter::once((text.len(), &b'\n'))) {
        if b != b'\n' {
            continue;
        }
        let line = &text[line_start..pos];
        let trimmed = line.iter().position(|c| !c.is_ascii_whitespace());
        if let Some(t) = trimmed {
            if line[t..].starts_with(b"//") {
                ranges.push((line_start + t, pos));
            }
        }
        line_start = pos + 1;
    }
    ranges
}

/// Find every Pixel ID statically visible in `html`.
pub fn extract_pixel_ids(html: &[u8]) -> Extraction {
    let (stripped, map) = strip_with_map(html);
    let comments = comment_ranges(html);
    let mut out = Extraction::default();
    for kind in EvidenceKind::ALL {
        for caps in kind.pattern().captures_iter(&stripped) {
            let whole = caps.get(0).expect("match");
            let id_match = caps.get(1).expect("id group");
            let Ok(id) = std::str::from_utf8(id_match.as_bytes())
                .ok()
                .and_then(|s| s.parse::<PixelId>().ok())
                .ok_or(())
            else {
                continue;
            };
            let start = to_original(whole.start(), &map);
            let end = to_original(whole.end() - 1, &map) + 1;
            let in_comment = comments.iter().any(|(s, e)| *s <= start && start < *e);
            out.pixel_ids.insert(id.clone());
            out.evidence.push(Evidence {
                pixel_id: id,
                kind,
                start,
                end,
                in_comment,
            });
        }
    }
    out.evidence.sort();
    out
}
