//! Parsing of per-Pixel configuration scripts.
//!
//! Only the structured tail of a configuration script is interpreted: the
//! `instance.optIn`, `config.set` and `fbq.set` calls inside the
//! `fbq.registerPlugin(...)` region. The minified remainder is skipped by a
//! literal-aware scanner.

pub mod features;
mod lenient_json;
mod render;
mod scanner;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use crate::pixel::PixelId;
pub use features::{config_feature_vector, FeatureVector, FEATURE_NAMES};
pub use lenient_json::parse_lenient;
pub use render::render_script;
pub use scanner::{find_calls, CallKind};

use crate::hashing::is_sha256_hex;

/// The match-key codes Automatic Advanced Matching may collect.
pub const MATCH_KEY_CODES: [&str; 11] = [
    "em", "ph", "fn", "ln", "ge", "db", "ct", "st", "zp", "country", "external_id",
];

/// aux_sets key under which unrecognized selectedMatchKeys codes are kept.
pub const UNKNOWN_MATCH_KEYS: &str = "selectedMatchKeys.unknown";

pub mod opt_in {
    pub const AUTOMATIC_SETUP: &str = "AutomaticSetup";
    pub const INFERRED_EVENTS: &str = "InferredEvents";
    pub const FIRST_PARTY_COOKIES: &str = "FirstPartyCookies";
    pub const AUTOMATIC_MATCHING: &str = "AutomaticMatching";
    pub const UNWANTED_DATA: &str = "UnwantedData";
    pub const PROTECTED_DATA_MODE: &str = "ProtectedDataMode";
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("no structured configuration calls found")]
    NoRegisterPluginRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub offset: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    fn warn(offset: impl Into<Option<usize>>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warn,
            offset: offset.into(),
            message: message.into(),
        }
    }
}

/// Per-event parameter names, split by where they appear.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRules {
    #[serde(default)]
    pub cd: BTreeSet<String>,
    #[serde(default)]
    pub url: BTreeSet<String>,
}

impl KeyRules {
    pub fn is_empty(&self) -> bool {
        self.cd.is_empty() && self.url.is_empty()
    }
}

/// A `sensitive_keys` entry that is not a full SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RejectedDigest {
    pub event: String,
    pub field: String,
    pub raw: String,
}

/// Plaintext (`blacklisted`) and hashed (`sensitive`) filter rules per event.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnwantedDataRules {
    pub blacklisted: BTreeMap<String, KeyRules>,
    /// Values are lowercase 64-hex SHA-256 digests of parameter names.
    pub sensitive: BTreeMap<String, KeyRules>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_sensitive: Vec<RejectedDigest>,
}

impl UnwantedDataRules {
    pub fn has_blacklisted(&self) -> bool {
        self.blacklisted.values().any(|r| !r.is_empty())
    }

    pub fn has_sensitive(&self) -> bool {
        self.sensitive.values().any(|r| !r.is_empty())
    }

    pub fn is_empty(&self) -> bool {
        !self.has_blacklisted() && !self.has_sensitive() && self.rejected_sensitive.is_empty()
    }
}

/// An Event Setup Tool rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstRule {
    pub condition: Value,
    pub trigger_values: Vec<String>,
    pub derived_event_name: String,
    pub rule_id: String,
}

/// Operators treated as exact string equality when evaluating EST conditions.
const EQUALITY_OPERATORS: &[&str] = &["eq", "equals", "==", "===", "is", "exact"];

impl EstRule {
    /// `value` strings whose condition is plain equality, plus the
    /// operators of any conditions that are not.
    pub fn equality_values(&self) -> (Vec<&str>, Vec<&str>) {
        let mut values = Vec::new();
        let mut unsupported = Vec::new();
        walk_conditions(&self.condition, &mut values, &mut unsupported);
        (values, unsupported)
    }
}

fn walk_conditions<'a>(v: &'a Value, values: &mut Vec<&'a str>, unsupported: &mut Vec<&'a str>) {
    match v {
        Value::Object(map) => {
            if let Some(Value::String(s)) = map.get("value") {
                match map.get("operator").and_then(Value::as_str) {
                    Some(op) if !EQUALITY_OPERATORS.contains(&op.to_ascii_lowercase().as_str()) => {
                        unsupported.push(op)
                    }
                    _ => values.push(s),
                }
            }
            for child in map.values() {
                walk_conditions(child, values, unsupported);
            }
        }
        Value::Array(items) => items.iter().for_each(|c| walk_conditions(c, values, unsupported)),
        _ => {}
    }
}

fn collect_values(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            if let Some(Value::String(s)) = map.get("value") {
                out.push(s.clone());
            }
            map.values().for_each(|c| collect_values(c, out));
        }
        Value::Array(items) => items.iter().for_each(|c| collect_values(c, out)),
        _ => {}
    }
}

/// Typed view of one configuration script's structured calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelConfiguration {
    pub pixel_id: PixelId,
    pub opt_ins: BTreeMap<String, bool>,
    /// Opt-ins whose flag argument was neither `true` nor `false`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub undetermined_opt_ins: BTreeMap<String, String>,
    pub selected_match_keys: Vec<String>,
    pub unwanted_data: UnwantedDataRules,
    pub est_rules: Vec<EstRule>,
    pub aux_sets: BTreeMap<String, Value>,
}

impl PixelConfiguration {
    pub fn empty(pixel_id: PixelId) -> Self {
        Self {
            pixel_id,
            opt_ins: BTreeMap::new(),
            undetermined_opt_ins: BTreeMap::new(),
            selected_match_keys: Vec::new(),
            unwanted_data: UnwantedDataRules::default(),
            est_rules: Vec::new(),
            aux_sets: BTreeMap::new(),
        }
    }

    /// True only for an explicit `optIn(..., name, true)`.
    pub fn opted_in(&self, name: &str) -> bool {
        self.opt_ins.get(name).copied().unwrap_or(false)
    }

    pub fn set_opt_in(&mut self, name: &str, on: bool) -> &mut Self {
        self.opt_ins.insert(name.to_string(), on);
        self
    }

    /// Remove an opt-in call entirely, as if patched out of the script.
    pub fn remove_opt_in(&mut self, name: &str) -> &mut Self {
        self.opt_ins.remove(name);
        self.undetermined_opt_ins.remove(name);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedConfig {
    pub config: PixelConfiguration,
    pub diagnostics: Vec<Diagnostic>,
    /// Pixel IDs seen in calls that differ from the expected one.
    pub foreign_pixel_ids: BTreeSet<PixelId>,
}

fn string_arg(arg: &str) -> Option<String> {
    scanner::unquote_js(arg).or_else(|| {
        // minified scripts sometimes pass the pixel id as a bare number
        arg.bytes().all(|b| b.is_ascii_digit()).then(|| arg.to_string())
    })
}

fn bool_arg(arg: &str) -> Option<bool> {
    match arg {
        "true" | "!0" => Some(true),
        "false" | "!1" => Some(false),
        _ => None,
    }
}

struct Builder {
    expected: Option<PixelId>,
    ids_seen: Vec<PixelId>,
    opt_ins: BTreeMap<String, bool>,
    undetermined: BTreeMap<String, String>,
    match_keys: Vec<String>,
    unwanted: UnwantedDataRules,
    est_rules: Vec<EstRule>,
    aux: BTreeMap<String, Value>,
    diags: Vec<Diagnostic>,
}

impl Builder {
    fn note_pixel(&mut self, raw: &str, offset: usize) {
        match string_arg(raw).and_then(|s| s.parse::<PixelId>().ok()) {
            Some(id) => self.ids_seen.push(id),
            None if raw == "null" => {}
            None => self
                .diags
                .push(Diagnostic::warn(offset, format!("pixel id argument {raw:?} is not a pixel id"))),
        }
    }

    fn put_aux(&mut self, name: &str, value: Value) {
        let mut key = name.to_string();
        let mut n = 2;
        while self.aux.contains_key(&key) {
            key = format!("{name}#{n}");
            n += 1;
        }
        self.aux.insert(key, value);
    }

    fn payload(&mut self, raw: &str, name: &str, offset: usize) -> Option<Value> {
        match parse_lenient(raw) {
            Ok(v) => Some(v),
            Err(e) => {
                self.diags.push(Diagnostic::warn(
                    offset,
                    format!("payload of {name:?} is not decodable ({e}); kept raw"),
                ));
                self.put_aux(name, Value::String(raw.to_string()));
                None
            }
        }
    }

    fn opt_in(&mut self, args: &[&str], offset: usize) {
        if args.len() != 3 {
            self.diags.push(Diagnostic::warn(offset, "optIn call without three arguments"));
            return;
        }
        self.note_pixel(args[0], offset);
        let Some(name) = string_arg(args[1]) else {
            self.diags.push(Diagnostic::warn(offset, "optIn name is not a string literal"));
            return;
        };
        match bool_arg(args[2]) {
            Some(b) => {
                self.opt_ins.insert(name, b);
            }
            None => {
                self.diags.push(Diagnostic::warn(
                    offset,
                    format!("optIn {name:?} flag {:?} is not a boolean literal", args[2]),
                ));
                self.undetermined.insert(name, args[2].to_string());
            }
        }
    }

    fn config_set(&mut self, args: &[&str], offset: usize) {
        if args.len() != 3 {
            self.diags.push(Diagnostic::warn(offset, "config.set call without three arguments"));
            return;
        }
        self.note_pixel(args[0], offset);
        let Some(name) = string_arg(args[1]) else {
            self.diags.push(Diagnostic::warn(offset, "config.set name is not a string literal"));
            return;
        };
        let Some(value) = self.payload(args[2], &name, offset) else {
            return;
        };
        match name.as_str() {
            "unwantedData" => self.unwanted_data(&value, offset),
            "automaticMatching" => self.automatic_matching(value, offset),
            _ => self.put_aux(&name, value),
        }
    }

    fn fbq_set(&mut self, args: &[&str], offset: usize) {
        let Some(name) = args.first().and_then(|a| string_arg(a)) else {
            self.diags.push(Diagnostic::warn(offset, "fbq.set name is not a string literal"));
            return;
        };
        let payload_arg = match args.len() {
            2 => args[1],
            3 => {
                self.note_pixel(args[1], offset);
                args[2]
            }
            _ => {
                self.diags.push(Diagnostic::warn(offset, "fbq.set call with unexpected arity"));
                return;
            }
        };
        let Some(value) = self.payload(payload_arg, &name, offset) else {
            return;
        };
        if name == "estRules" {
            self.est_rules(value, offset);
        } else {
            self.put_aux(&name, value);
        }
    }

    fn automatic_matching(&mut self, value: Value, offset: usize) {
        let Some(keys) = value.get("selectedMatchKeys").and_then(Value::as_array) else {
            self.diags.push(Diagnostic::warn(offset, "automaticMatching without selectedMatchKeys"));
            self.put_aux("automaticMatching", value);
            return;
        };
        let mut unknown = Vec::new();
        for k in keys {
            match k.as_str() {
                Some(code) if MATCH_KEY_CODES.contains(&code) => {
                    if !self.match_keys.iter().any(|m| m == code) {
                        self.match_keys.push(code.to_string());
                    }
                }
                _ => unknown.push(k.clone()),
            }
        }
        if !unknown.is_empty() {
            self.diags.push(Diagnostic::warn(offset, format!("unknown match keys {unknown:?}")));
            match self.aux.get_mut(UNKNOWN_MATCH_KEYS) {
                Some(Value::Array(existing)) => existing.extend(unknown),
                _ => {
                    self.aux.insert(UNKNOWN_MATCH_KEYS.into(), Value::Array(unknown));
                }
            }
        }
    }

    fn unwanted_data(&mut self, value: &Value, offset: usize) {
        let groups = [("blacklisted_keys", false), ("sensitive_keys", true)];
        for (group, hashed) in groups {
            let Some(events) = value.get(group) else { continue };
            let Some(events) = events.as_object() else {
                self.diags.push(Diagnostic::warn(offset, format!("{group} is not an object")));
                continue;
            };
            for (event, fields) in events {
                let mut rules = KeyRules::default();
                for (field, target) in [("cd", &mut rules.cd), ("url", &mut rules.url)] {
                    let Some(list) = fields.get(field) else { continue };
                    for item in list.as_array().into_iter().flatten() {
                        let Some(key) = item.as_str() else {
                            self.diags.push(Diagnostic::warn(
                                offset,
                                format!("non-string key in {group}.{event}.{field}"),
                            ));
                            continue;
                        };
                        if hashed {
                            let lower = key.to_ascii_lowercase();
                            if is_sha256_hex(&lower) {
                                target.insert(lower);
                            } else {
                                self.diags.push(Diagnostic::warn(
                                    offset,
                                    format!(
                                        "sensitive key {key:?} for {event}.{field} is not a full SHA-256 digest"
                                    ),
                                ));
                                self.unwanted.rejected_sensitive.push(RejectedDigest {
                                    event: event.clone(),
                                    field: field.to_string(),
                                    raw: key.to_string(),
                                });
                            }
                        } else {
                            target.insert(key.to_string());
                        }
                    }
                }
                let map = if hashed {
                    &mut self.unwanted.sensitive
                } else {
                    &mut self.unwanted.blacklisted
                };
                let entry = map.entry(event.clone()).or_default();
                entry.cd.extend(rules.cd);
                entry.url.extend(rules.url);
            }
        }
    }

    fn est_rules(&mut self, value: Value, offset: usize) {
        let items = match value {
            Value::Array(items) => items,
            obj @ Value::Object(_) => vec![obj],
            other => {
                self.diags.push(Diagnostic::warn(offset, "estRules payload is not a list"));
                self.put_aux("estRules", other);
                return;
            }
        };
        for item in items {
            let name = item.get("derived_event_name").and_then(Value::as_str).unwrap_or("");
            let rule_id = match item.get("rule_id") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => String::new(),
            };
            if name.is_empty() || rule_id.is_empty() || !rule_id.bytes().all(|b| b.is_ascii_digit()) {
                self.diags.push(Diagnostic::warn(
                    offset,
                    "estRules entry lacks derived_event_name or a numeric rule_id",
                ));
                self.put_aux("estRules.invalid", item);
                continue;
            }
            let condition = item.get("condition").cloned().unwrap_or(Value::Null);
            let mut trigger_values = Vec::new();
            collect_values(&condition, &mut trigger_values);
            let rule = EstRule {
                condition,
                trigger_values,
                derived_event_name: name.to_string(),
                rule_id,
            };
            let (_, unsupported) = rule.equality_values();
            if !unsupported.is_empty() {
                self.diags.push(Diagnostic {
                    severity: Severity::Info,
                    offset: Some(offset),
                    message: format!(
                        "rule {} uses unsupported operators {unsupported:?}; those conditions never match",
                        rule.rule_id
                    ),
                });
            }
            self.est_rules.push(rule);
        }
    }
}

/// Parse a configuration script's structured calls into a [`PixelConfiguration`].
///
/// Never fails on malformed payloads; those are kept raw in `aux_sets` with
/// a diagnostic. Fails only when no structured call is present at all.
pub fn parse_config_script(
    script: &[u8],
    expected_pixel_id: Option<&PixelId>,
) -> Result<ParsedConfig, ConfigError> {
    let text = String::from_utf8_lossy(script);
    let scan = find_calls(&text);
    if scan.calls.is_empty() {
        return Err(ConfigError::NoRegisterPluginRegion);
    }
    let mut b = Builder {
        expected: expected_pixel_id.cloned(),
        ids_seen: Vec::new(),
        opt_ins: BTreeMap::new(),
        undetermined: BTreeMap::new(),
        match_keys: Vec::new(),
        unwanted: UnwantedDataRules::default(),
        est_rules: Vec::new(),
        aux: BTreeMap::new(),
        diags: Vec::new(),
    };
    for off in &scan.unterminated {
        b.diags.push(Diagnostic::warn(*off, "call argument list is not terminated"));
    }
    for call in &scan.calls {
        match call.kind {
            CallKind::OptIn => b.opt_in(&call.args, call.offset),
            CallKind::ConfigSet => b.config_set(&call.args, call.offset),
            CallKind::FbqSet => b.fbq_set(&call.args, call.offset),
        }
    }

    let pixel_id = match &b.expected {
        Some(id) => id.clone(),
        None => most_common(&b.ids_seen).ok_or(ConfigError::NoRegisterPluginRegion)?,
    };
    let foreign: BTreeSet<PixelId> = b.ids_seen.iter().filter(|id| **id != pixel_id).cloned().collect();
    if !foreign.is_empty() {
        b.diags.push(Diagnostic::warn(
            None,
            format!(
                "calls reference other pixel ids: {}",
                foreign.iter().map(PixelId::as_str).collect::<Vec<_>>().join(", ")
            ),
        ));
    }
    if !b.match_keys.is_empty() && !b.opt_ins.contains_key(opt_in::AUTOMATIC_MATCHING) {
        b.diags.push(Diagnostic::warn(
            None,
            "selectedMatchKeys present without an AutomaticMatching opt-in",
        ));
    }

    Ok(ParsedConfig {
        config: PixelConfiguration {
            pixel_id,
            opt_ins: b.opt_ins,
            undetermined_opt_ins: b.undetermined,
            selected_match_keys: b.match_keys,
            unwanted_data: b.unwanted,
            est_rules: b.est_rules,
            aux_sets: b.aux,
        },
        diagnostics: b.diags,
        foreign_pixel_ids: foreign,
    })
}

fn most_common(ids: &[PixelId]) -> Option<PixelId> {
    let mut counts: BTreeMap<&PixelId, (usize, usize)> = BTreeMap::new();
    for (pos, id) in ids.iter().enumerate() {
        let e = counts.entry(id).or_insert((0, pos));
        e.0 += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(id, _)| id.clone())
}

#[cfg(test)]
mod tests;
