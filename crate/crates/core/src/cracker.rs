//! Dictionary reversal of SHA-256 hashed parameter names.
//!
//! Candidates come from operator-supplied wordlists (one entry per line),
//! plaintext keys seen in blacklisted rules, and spelling variants of both.

use std::collections::{BTreeSet, HashMap};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::sha256_hex;

#[derive(Debug, Error)]
pub enum CrackError {
    #[error("dictionary is empty: no candidates loaded")]
    EmptyDictionary,
    #[error("reading wordlist {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Wordlist,
    ObservedBlacklisted,
    Variant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrackResult {
    pub digest: String,
    pub plaintext: Option<String>,
    pub source: Option<Source>,
    /// For variant hits, the entry the variant was generated from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_of: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrackReport {
    pub results: Vec<CrackResult>,
    pub cracked: usize,
    pub total: usize,
    pub reversal_rate: f64,
}

#[derive(Debug, Clone)]
struct Candidate {
    plaintext: String,
    source: Source,
    variant_of: Option<String>,
}

/// Precomputed digest → candidate index.
#[derive(Debug, Clone, Default)]
pub struct Dictionary {
    index: HashMap<String, Candidate>,
}

const PREFIXES: &[&str] = &["txt", "str"];
const SUFFIXES: &[&str] = &["Id", "txt", "str"];

fn tokens(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = word.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if matches!(c, '_' | '-' | ' ' | '.') {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        let boundary = c.is_uppercase()
            && i > 0
            && (chars[i - 1].is_lowercase()
                || chars[i - 1].is_ascii_digit()
                || (chars[i - 1].is_uppercase()
                    && chars.get(i + 1).is_some_and(|n| n.is_lowercase())));
        if boundary && !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out.into_iter().map(|t| t.to_lowercase()).collect()
}

fn capitalize(t: &str) -> String {
    let mut c = t.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn camel(toks: &[String]) -> String {
    toks.iter()
        .enumerate()
        .map(|(i, t)| if i == 0 { t.clone() } else { capitalize(t) })
        .collect()
}

/// Spelling variants of one entry, including the entry itself.
pub fn variants(word: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let word = word.trim();
    if word.is_empty() {
        return out;
    }
    out.insert(word.to_string());
    out.insert(word.to_lowercase());
    let toks = tokens(word);
    if toks.is_empty() {
        return out;
    }
    let camel_form = camel(&toks);
    let pascal: String = toks.iter().map(|t| capitalize(t)).collect();
    let snake = toks.join("_");
    out.insert(toks.concat());
    out.insert(snake.clone());
    out.insert(toks.join("-"));
    out.insert(camel_form.clone());
    out.insert(pascal.clone());
    for p in PREFIXES {
        out.insert(format!("{p}{pascal}"));
        out.insert(format!("{p}_{snake}"));
    }
    for s in SUFFIXES {
        out.insert(format!("{camel_form}{}", capitalize(s)));
        out.insert(format!("{snake}_{}", s.to_lowercase()));
    }
    // Strip a recognized affix so "txtEmail" also yields "email".
    let first = toks[0].as_str();
    let last = toks[toks.len() - 1].as_str();
    if toks.len() > 1 && PREFIXES.contains(&first) {
        out.extend(variants_core(&toks[1..]));
    }
    if toks.len() > 1 && SUFFIXES.iter().any(|s| s.eq_ignore_ascii_case(last)) {
        out.extend(variants_core(&toks[..toks.len() - 1]));
    }
    out
}

fn variants_core(toks: &[String]) -> [String; 4] {
    [toks.concat(), toks.join("_"), toks.join("-"), camel(toks)]
}

impl Dictionary {
    /// Build from in-memory entries. Earlier sources take precedence when
    /// two candidates share a digest.
    pub fn from_entries<'a>(
        wordlist: impl IntoIterator<Item = &'a str>,
        observed: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, CrackError> {
        let words: Vec<&str> = wordlist.into_iter().map(str::trim).filter(|w| !w.is_empty()).collect();
        let observed: Vec<&str> = observed.into_iter().map(str::trim).filter(|w| !w.is_empty()).collect();
        let mut d = Dictionary::default();
        for w in &words {
            d.insert(w, Source::Wordlist, None);
        }
        for w in &observed {
            d.insert(w, Source::ObservedBlacklisted, None);
        }
        for w in words.iter().chain(&observed) {
            for v in variants(w) {
                d.insert(&v, Source::Variant, Some(w));
            }
        }
        if d.index.is_empty() {
            return Err(CrackError::EmptyDictionary);
        }
        Ok(d)
    }

    fn insert(&mut self, plaintext: &str, source: Source, variant_of: Option<&str>) {
        self.index.entry(sha256_hex(plaintext)).or_insert_with(|| Candidate {
            plaintext: plaintext.to_string(),
            source,
            variant_of: variant_of.map(str::to_string),
        });
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains_plaintext(&self, plaintext: &str) -> bool {
        self.index.contains_key(&sha256_hex(plaintext))
    }

    pub fn lookup(&self, digest: &str) -> CrackResult {
        let digest = digest.trim().to_ascii_lowercase();
        match self.index.get(&digest) {
            Some(c) => CrackResult {
                plaintext: Some(c.plaintext.clone()),
                source: Some(c.source),
                variant_of: c.variant_of.clone(),
                digest,
            },
            None => CrackResult { digest, plaintext: None, source: None, variant_of: None },
        }
    }
}

/// Load wordlists from disk and fold in observed blacklisted keys.
pub fn build_dictionary(
    wordlists: &[impl AsRef<Path>],
    observed_keys: &BTreeSet<String>,
) -> Result<Dictionary, CrackError> {
    let mut text = String::new();
    for path in wordlists {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| CrackError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        text.push_str(&String::from_utf8_lossy(&bytes));
        text.push('\n');
    }
    Dictionary::from_entries(text.lines(), observed_keys.iter().map(String::as_str))
}

/// Match every digest against the dictionary. Results are sorted by digest.
pub fn crack(digests: &BTreeSet<String>, dict: &Dictionary) -> CrackReport {
    let normalized: BTreeSet<String> = digests.iter().map(|d| d.trim().to_ascii_lowercase()).collect();
    let results: Vec<CrackResult> = normalized.iter().map(|d| dict.lookup(d)).collect();
    let cracked = results.iter().filter(|r| r.plaintext.is_some()).count();
    let total = results.len();
    CrackReport {
        reversal_rate: if total == 0 { 0.0 } else { cracked as f64 / total as f64 },
        results,
        cracked,
        total,
    }
}
