use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{opt_in, PixelConfiguration, MATCH_KEY_CODES};

/// Flat boolean projection of a configuration onto the tracked features.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub BTreeMap<String, bool>);

impl FeatureVector {
    pub fn get(&self, name: &str) -> bool {
        self.0.get(name).copied().unwrap_or(false)
    }

    /// OR-merge: a feature is on if it is on in either vector.
    pub fn merge(&mut self, other: &FeatureVector) {
        for (k, v) in &other.0 {
            *self.0.entry(k.clone()).or_insert(false) |= *v;
        }
    }

    pub fn any(&self) -> bool {
        self.0.values().any(|v| *v)
    }
}

pub const AUTOMATIC_EVENTS: &str = "AutomaticEvents";
pub const MICRODATA_CAPABLE: &str = "MicrodataCapable";
pub const BUTTON_CLICK_CAPABLE: &str = "SubscribedButtonClickCapable";
pub const EVENT_SETUP_TOOL: &str = "EventSetupTool";
pub const UNWANTED_BLACKLISTED: &str = "UnwantedData.blacklisted";
pub const UNWANTED_SENSITIVE: &str = "UnwantedData.sensitive";
pub const CORE_SETUP: &str = "CoreSetup";

/// Every feature name the projection emits, in output order.
pub static FEATURE_NAMES: std::sync::LazyLock<Vec<String>> = std::sync::LazyLock::new(|| {
    let mut names: Vec<String> = [
        AUTOMATIC_EVENTS,
        opt_in::AUTOMATIC_SETUP,
        opt_in::INFERRED_EVENTS,
        MICRODATA_CAPABLE,
        BUTTON_CLICK_CAPABLE,
        EVENT_SETUP_TOOL,
        opt_in::FIRST_PARTY_COOKIES,
        opt_in::AUTOMATIC_MATCHING,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend(MATCH_KEY_CODES.iter().map(|c| format!("AutomaticMatching.{c}")));
    names.extend(
        [opt_in::UNWANTED_DATA, UNWANTED_BLACKLISTED, UNWANTED_SENSITIVE, CORE_SETUP]
            .iter()
            .map(|s| s.to_string()),
    );
    names
});

/// Project a configuration onto the feature taxonomy.
pub fn config_feature_vector(cfg: &PixelConfiguration) -> FeatureVector {
    let setup = cfg.opted_in(opt_in::AUTOMATIC_SETUP);
    let inferred = cfg.opted_in(opt_in::INFERRED_EVENTS);
    let aam = cfg.opted_in(opt_in::AUTOMATIC_MATCHING);
    let mut v = BTreeMap::new();
    v.insert(AUTOMATIC_EVENTS.to_string(), setup || inferred);
    v.insert(opt_in::AUTOMATIC_SETUP.to_string(), setup);
    v.insert(opt_in::INFERRED_EVENTS.to_string(), inferred);
    v.insert(MICRODATA_CAPABLE.to_string(), setup);
    v.insert(BUTTON_CLICK_CAPABLE.to_string(), setup || inferred);
    v.insert(EVENT_SETUP_TOOL.to_string(), !cfg.est_rules.is_empty());
    v.insert(
        opt_in::FIRST_PARTY_COOKIES.to_string(),
        cfg.opted_in(opt_in::FIRST_PARTY_COOKIES),
    );
    v.insert(opt_in::AUTOMATIC_MATCHING.to_string(), aam);
    for code in MATCH_KEY_CODES {
        let selected = cfg.selected_match_keys.iter().any(|k| k == code);
        v.insert(format!("AutomaticMatching.{code}"), aam && selected);
    }
    v.insert(opt_in::UNWANTED_DATA.to_string(), cfg.opted_in(opt_in::UNWANTED_DATA));
    v.insert(UNWANTED_BLACKLISTED.to_string(), cfg.unwanted_data.has_blacklisted());
    v.insert(UNWANTED_SENSITIVE.to_string(), cfg.unwanted_data.has_sensitive());
    v.insert(CORE_SETUP.to_string(), cfg.opted_in(opt_in::PROTECTED_DATA_MODE));
    FeatureVector(v)
}
