//! Executable model of how a Pixel configuration shapes outgoing events.
//!
//! Given a parsed configuration, a synthetic page and an interaction,
//! [`Simulator::simulate`] produces the event payloads the Pixel would send.
//! Each tracked feature contributes its behavior through the
//! [`TrackingFeature`] registry, so removing a feature from a configuration
//! and re-simulating reproduces a patch-and-replay experiment.

mod diff;
mod features;
pub mod url_params;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diff::{diff_payloads, flatten, BehaviorDelta, ChangeKind, EventRef, ParamChange};
pub use features::{
    AutomaticEvents, AutomaticMatching, CoreSetup, EventSetupTool, FeatureRegistry,
    FirstPartyCookies, TrackingFeature, UnwantedData, sanitize_payload,
};

use crate::config::{opt_in, PixelConfiguration};
use crate::hashing::{is_sha256_hex, sha256_hex};

pub mod events {
    pub const PAGE_VIEW: &str = "PageView";
    pub const MICRODATA: &str = "Microdata";
    pub const BUTTON_CLICK: &str = "SubscribedButtonClick";
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BehaviorError {
    #[error("interaction index {index} out of range ({available} buttons)")]
    InvalidInteraction { index: usize, available: usize },
    #[error("page_url {0:?} is not an absolute URL with a host")]
    InvalidPageUrl(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Button {
    pub text: String,
    /// Names of the fields of the form this button submits, if any.
    #[serde(default)]
    pub form_fields: Vec<String>,
}

/// A synthetic page visit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PageContext {
    pub page_url: String,
    #[serde(default)]
    pub referrer_url: String,
    #[serde(default)]
    pub fbclid: Option<String>,
    #[serde(default)]
    pub microdata_blobs: Vec<serde_json::Map<String, serde_json::Value>>,
    #[serde(default)]
    pub buttons: Vec<Button>,
    /// Raw form input keyed by match-key code (`em`, `ph`, ...).
    #[serde(default)]
    pub form_values: BTreeMap<String, String>,
    /// User data the site passes explicitly; sent as `ud[...]` on every event.
    #[serde(default)]
    pub manual_user_data: BTreeMap<String, String>,
    #[serde(default)]
    pub visit_time_ms: u64,
}

impl PageContext {
    pub fn new(page_url: impl Into<String>) -> Self {
        Self {
            page_url: page_url.into(),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), BehaviorError> {
        match url::Url::parse(&self.page_url) {
            Ok(u) if u.has_host() => Ok(()),
            _ => Err(BehaviorError::InvalidPageUrl(self.page_url.clone())),
        }
    }

    fn button(&self, index: usize) -> Result<&Button, BehaviorError> {
        self.buttons.get(index).ok_or(BehaviorError::InvalidInteraction {
            index,
            available: self.buttons.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interaction {
    PageLoad,
    ButtonClick { index: usize },
    FormSubmit { index: usize },
    /// An explicit `fbq('track', event, custom_data)` call by the site.
    Track {
        event: String,
        #[serde(default)]
        custom_data: BTreeMap<String, String>,
    },
}

/// One simulated request to the tracking endpoint.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventPayload {
    pub event_name: String,
    pub dl: String,
    pub rl: String,
    pub cd: BTreeMap<String, String>,
    pub ud: BTreeMap<String, String>,
    pub udff: BTreeMap<String, String>,
    pub fbp: Option<String>,
    pub fbc: Option<String>,
    pub rule_id: Option<String>,
}

impl EventPayload {
    pub fn new(event_name: impl Into<String>, ctx: &PageContext) -> Self {
        Self {
            event_name: event_name.into(),
            dl: ctx.page_url.clone(),
            rl: ctx.referrer_url.clone(),
            cd: BTreeMap::new(),
            ud: ctx.manual_user_data.clone(),
            udff: BTreeMap::new(),
            fbp: None,
            fbc: None,
            rule_id: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// Match query/custom-data parameter names against filter rules
    /// ignoring ASCII case. Off by default.
    #[serde(default)]
    pub case_insensitive_params: bool,
}

/// Runs the registered features over base events.
pub struct Simulator {
    registry: FeatureRegistry,
    options: SimulationOptions,
}

impl Default for Simulator {
    fn default() -> Self {
        Self::new(FeatureRegistry::standard(), SimulationOptions::default())
    }
}

impl Simulator {
    pub fn new(registry: FeatureRegistry, options: SimulationOptions) -> Self {
        Self { registry, options }
    }

    pub fn registry(&self) -> &FeatureRegistry {
        &self.registry
    }

    pub fn simulate(
        &self,
        cfg: &PixelConfiguration,
        ctx: &PageContext,
        interaction: &Interaction,
    ) -> Result<Vec<EventPayload>, BehaviorError> {
        ctx.validate()?;
        let mut events = Vec::new();
        match interaction {
            Interaction::PageLoad => events.push(EventPayload::new(events::PAGE_VIEW, ctx)),
            Interaction::ButtonClick { index } | Interaction::FormSubmit { index } => {
                ctx.button(*index)?;
            }
            Interaction::Track { event, custom_data } => {
                let mut p = EventPayload::new(event.clone(), ctx);
                p.cd = custom_data.clone();
                events.push(p);
            }
        }
        for feature in self.registry.iter() {
            feature.apply(cfg, ctx, interaction, &self.options, &mut events);
        }
        Ok(events)
    }
}

/// Simulate with the standard feature set and default options.
pub fn simulate(
    cfg: &PixelConfiguration,
    ctx: &PageContext,
    interaction: &Interaction,
) -> Result<Vec<EventPayload>, BehaviorError> {
    Simulator::default().simulate(cfg, ctx, interaction)
}

/// Normalize a raw form value for its match-key code and hash it.
pub fn hash_match_value(key_code: &str, raw: &str) -> String {
    let trimmed = raw.trim();
    let normalized: String = match key_code {
        "ph" => trimmed.chars().filter(char::is_ascii_digit).collect(),
        "ct" | "st" => trimmed
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect(),
        _ => trimmed.to_lowercase(),
    };
    sha256_hex(normalized)
}

/// A Core Setup page that still ships a hashed URL as user data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircumventionFinding {
    pub event_name: String,
    pub parameter: String,
    pub value: String,
}

/// Flag `ud[dl]`/`ud[rl]` digests carried while ProtectedDataMode is on.
pub fn detect_circumvention(
    cfg: &PixelConfiguration,
    payloads: &[EventPayload],
) -> Vec<CircumventionFinding> {
    if !cfg.opted_in(opt_in::PROTECTED_DATA_MODE) {
        return Vec::new();
    }
    payloads
        .iter()
        .flat_map(|p| {
            ["dl", "rl"].into_iter().filter_map(move |k| {
                let v = p.ud.get(k)?;
                is_sha256_hex(&v.to_ascii_lowercase()).then(|| CircumventionFinding {
                    event_name: p.event_name.clone(),
                    parameter: format!("ud[{k}]"),
                    value: v.clone(),
                })
            })
        })
        .collect()
}
