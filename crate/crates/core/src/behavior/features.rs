use std::collections::BTreeMap;

use serde_json::Value;

use super::url_params::{redact_query, truncate_to_origin};
use super::{events, hash_match_value, EventPayload, Interaction, PageContext, SimulationOptions};
use crate::config::{features as fv, opt_in, KeyRules, PixelConfiguration, UnwantedDataRules};
use crate::hashing::sha256_hex;

/// One configurable Pixel behavior.
///
/// `apply` runs after the base events for the interaction exist and may add
/// events or rewrite fields. `remove` is the configuration patch that turns
/// the feature off, mirroring deletion of the corresponding script call.
pub trait TrackingFeature: Send + Sync {
    fn name(&self) -> &'static str;
    fn enabled(&self, cfg: &PixelConfiguration) -> bool;
    fn remove(&self, cfg: &mut PixelConfiguration);
    fn apply(
        &self,
        cfg: &PixelConfiguration,
        ctx: &PageContext,
        interaction: &Interaction,
        opts: &SimulationOptions,
        events: &mut Vec<EventPayload>,
    );
}

/// Ordered collection of features. Order matters: Core Setup must run last.
pub struct FeatureRegistry {
    features: Vec<Box<dyn TrackingFeature>>,
}

impl FeatureRegistry {
    pub fn empty() -> Self {
        Self { features: Vec::new() }
    }

    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(AutomaticEvents));
        r.register(Box::new(EventSetupTool));
        r.register(Box::new(AutomaticMatching));
        r.register(Box::new(FirstPartyCookies));
        r.register(Box::new(UnwantedData));
        r.register(Box::new(CoreSetup));
        r
    }

    pub fn register(&mut self, feature: Box<dyn TrackingFeature>) {
        self.features.push(feature);
    }

    pub fn get(&self, name: &str) -> Option<&dyn TrackingFeature> {
        self.features.iter().find(|f| f.name() == name).map(|f| f.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.features.iter().map(|f| f.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn TrackingFeature> {
        self.features.iter().map(|f| f.as_ref())
    }
}

fn clicked(interaction: &Interaction) -> Option<usize> {
    match interaction {
        Interaction::ButtonClick { index } | Interaction::FormSubmit { index } => Some(*index),
        _ => None,
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Microdata and SubscribedButtonClick.
pub struct AutomaticEvents;

impl TrackingFeature for AutomaticEvents {
    fn name(&self) -> &'static str {
        fv::AUTOMATIC_EVENTS
    }

    fn enabled(&self, cfg: &PixelConfiguration) -> bool {
        cfg.opted_in(opt_in::AUTOMATIC_SETUP) || cfg.opted_in(opt_in::INFERRED_EVENTS)
    }

    fn remove(&self, cfg: &mut PixelConfiguration) {
        cfg.remove_opt_in(opt_in::AUTOMATIC_SETUP);
        cfg.remove_opt_in(opt_in::INFERRED_EVENTS);
    }

    fn apply(
        &self,
        cfg: &PixelConfiguration,
        ctx: &PageContext,
        interaction: &Interaction,
        _opts: &SimulationOptions,
        events: &mut Vec<EventPayload>,
    ) {
        if matches!(interaction, Interaction::PageLoad) && cfg.opted_in(opt_in::AUTOMATIC_SETUP) {
            for blob in &ctx.microdata_blobs {
                let mut p = EventPayload::new(events::MICRODATA, ctx);
                p.cd = blob.iter().map(|(k, v)| (k.clone(), value_text(v))).collect();
                events.push(p);
            }
        }
        if let Some(index) = clicked(interaction) {
            if !self.enabled(cfg) {
                return;
            }
            let Some(button) = ctx.buttons.get(index) else { return };
            let mut p = EventPayload::new(events::BUTTON_CLICK, ctx);
            p.cd.insert("buttonText".into(), button.text.clone());
            if !button.form_fields.is_empty() {
                p.cd.insert(
                    "formFeatures".into(),
                    Value::from(button.form_fields.clone()).to_string(),
                );
            }
            events.push(p);
        }
    }
}

/// Event Setup Tool rules fired by button text.
pub struct EventSetupTool;

impl TrackingFeature for EventSetupTool {
    fn name(&self) -> &'static str {
        fv::EVENT_SETUP_TOOL
    }

    fn enabled(&self, cfg: &PixelConfiguration) -> bool {
        !cfg.est_rules.is_empty()
    }

    fn remove(&self, cfg: &mut PixelConfiguration) {
        cfg.est_rules.clear();
    }

    fn apply(
        &self,
        cfg: &PixelConfiguration,
        ctx: &PageContext,
        interaction: &Interaction,
        _opts: &SimulationOptions,
        events: &mut Vec<EventPayload>,
    ) {
        let Some(button) = clicked(interaction).and_then(|i| ctx.buttons.get(i)) else {
            return;
        };
        for rule in &cfg.est_rules {
            let (values, _unsupported) = rule.equality_values();
            if values.iter().any(|v| *v == button.text) {
                let mut p = EventPayload::new(rule.derived_event_name.clone(), ctx);
                p.rule_id = Some(rule.rule_id.clone());
                events.push(p);
            }
        }
    }
}

/// Hashed form values as `udff[...]` on form submission.
pub struct AutomaticMatching;

impl TrackingFeature for AutomaticMatching {
    fn name(&self) -> &'static str {
        opt_in::AUTOMATIC_MATCHING
    }

    fn enabled(&self, cfg: &PixelConfiguration) -> bool {
        cfg.opted_in(opt_in::AUTOMATIC_MATCHING)
    }

    fn remove(&self, cfg: &mut PixelConfiguration) {
        cfg.remove_opt_in(opt_in::AUTOMATIC_MATCHING);
    }

    fn apply(
        &self,
        cfg: &PixelConfiguration,
        ctx: &PageContext,
        interaction: &Interaction,
        _opts: &SimulationOptions,
        events: &mut Vec<EventPayload>,
    ) {
        if !matches!(interaction, Interaction::FormSubmit { .. }) || !self.enabled(cfg) {
            return;
        }
        let udff: BTreeMap<String, String> = cfg
            .selected_match_keys
            .iter()
            .filter_map(|k| ctx.form_values.get(k).map(|raw| (k.clone(), hash_match_value(k, raw))))
            .collect();
        for p in events.iter_mut() {
            p.udff.extend(udff.clone());
        }
    }
}

/// `_fbp` / `_fbc` first-party cookie values.
pub struct FirstPartyCookies;

fn context_hash(ctx: &PageContext) -> u64 {
    let digest = sha256_hex(serde_json::to_vec(ctx).unwrap_or_default());
    u64::from_str_radix(&digest[..15], 16).unwrap_or(0) % 10_000_000_000
}

impl TrackingFeature for FirstPartyCookies {
    fn name(&self) -> &'static str {
        opt_in::FIRST_PARTY_COOKIES
    }

    fn enabled(&self, cfg: &PixelConfiguration) -> bool {
        cfg.opted_in(opt_in::FIRST_PARTY_COOKIES)
    }

    fn remove(&self, cfg: &mut PixelConfiguration) {
        cfg.remove_opt_in(opt_in::FIRST_PARTY_COOKIES);
    }

    fn apply(
        &self,
        cfg: &PixelConfiguration,
        ctx: &PageContext,
        _interaction: &Interaction,
        _opts: &SimulationOptions,
        events: &mut Vec<EventPayload>,
    ) {
        if !self.enabled(cfg) {
            return;
        }
        let fbp = format!("fb.1.{}.{:010}", ctx.visit_time_ms, context_hash(ctx));
        let fbc = ctx
            .fbclid
            .as_ref()
            .map(|id| format!("fb.1.{}.{id}", ctx.visit_time_ms));
        for p in events.iter_mut() {
            p.fbp = Some(fbp.clone());
            p.fbc = fbc.clone();
        }
    }
}

/// Per-event parameter filtering from blacklisted and sensitive keys.
pub struct UnwantedData;

fn name_matches(
    name: &str,
    event: &str,
    field: fn(&KeyRules) -> &std::collections::BTreeSet<String>,
    rules: &UnwantedDataRules,
    opts: &SimulationOptions,
) -> bool {
    let plain = rules.blacklisted.get(event).map(field);
    let hashed = rules.sensitive.get(event).map(field);
    if opts.case_insensitive_params {
        plain.is_some_and(|s| s.iter().any(|k| k.eq_ignore_ascii_case(name)))
            || hashed.is_some_and(|s| {
                s.contains(&sha256_hex(name)) || s.contains(&sha256_hex(name.to_ascii_lowercase()))
            })
    } else {
        plain.is_some_and(|s| s.contains(name)) || hashed.is_some_and(|s| s.contains(&sha256_hex(name)))
    }
}

/// Apply the unwanted-data rules for `p.event_name` to one payload.
/// Idempotent.
pub fn sanitize_payload(rules: &UnwantedDataRules, opts: &SimulationOptions, p: &mut EventPayload) {
    let event = p.event_name.clone();
    let url_hit = |n: &str| name_matches(n, &event, |r| &r.url, rules, opts);
    p.dl = redact_query(&p.dl, url_hit);
    p.rl = redact_query(&p.rl, url_hit);
    p.cd.retain(|k, _| !name_matches(k, &event, |r| &r.cd, rules, opts));
}

impl TrackingFeature for UnwantedData {
    fn name(&self) -> &'static str {
        opt_in::UNWANTED_DATA
    }

    fn enabled(&self, cfg: &PixelConfiguration) -> bool {
        cfg.unwanted_data.has_blacklisted() || cfg.unwanted_data.has_sensitive()
    }

    fn remove(&self, cfg: &mut PixelConfiguration) {
        cfg.unwanted_data = UnwantedDataRules::default();
        cfg.remove_opt_in(opt_in::UNWANTED_DATA);
    }

    fn apply(
        &self,
        cfg: &PixelConfiguration,
        _ctx: &PageContext,
        _interaction: &Interaction,
        opts: &SimulationOptions,
        events: &mut Vec<EventPayload>,
    ) {
        if !self.enabled(cfg) {
            return;
        }
        for p in events.iter_mut() {
            sanitize_payload(&cfg.unwanted_data, opts, p);
        }
    }
}

/// ProtectedDataMode: no custom data, URLs cut to the origin.
pub struct CoreSetup;

impl TrackingFeature for CoreSetup {
    fn name(&self) -> &'static str {
        fv::CORE_SETUP
    }

    fn enabled(&self, cfg: &PixelConfiguration) -> bool {
        cfg.opted_in(opt_in::PROTECTED_DATA_MODE)
    }

    fn remove(&self, cfg: &mut PixelConfiguration) {
        cfg.remove_opt_in(opt_in::PROTECTED_DATA_MODE);
    }

    fn apply(
        &self,
        cfg: &PixelConfiguration,
        _ctx: &PageContext,
        _interaction: &Interaction,
        _opts: &SimulationOptions,
        events: &mut Vec<EventPayload>,
    ) {
        if !self.enabled(cfg) {
            return;
        }
        for p in events.iter_mut() {
            p.cd.clear();
            p.dl = truncate_to_origin(&p.dl);
            p.rl = truncate_to_origin(&p.rl);
        }
    }
}
