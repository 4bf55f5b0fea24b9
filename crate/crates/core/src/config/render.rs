use serde_json::{json, Map, Value};

use super::{PixelConfiguration, UNKNOWN_MATCH_KEYS};

fn js_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// Render a configuration back into the structured call region of a
/// configuration script. Parsing the result yields an equal configuration.
pub fn render_script(cfg: &PixelConfiguration) -> String {
    let id = js_str(cfg.pixel_id.as_str());
    let mut out = format!(
        "fbq.registerPlugin({id}, {{__fbEventsPlugin: 1, plugin: function(fbq, instance, config) {{\n"
    );

    let unknown_keys = cfg
        .aux_sets
        .get(UNKNOWN_MATCH_KEYS)
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    if !cfg.selected_match_keys.is_empty() || !unknown_keys.is_empty() {
        let mut keys: Vec<Value> = cfg.selected_match_keys.iter().map(|k| json!(k)).collect();
        keys.extend(unknown_keys);
        out.push_str(&format!(
            "config.set({id}, \"automaticMatching\", {});\nfbq.loadPlugin(\"automaticmatching\");\n",
            json!({ "selectedMatchKeys": keys })
        ));
    }

    let rules = &cfg.unwanted_data;
    if !(rules.blacklisted.is_empty() && rules.sensitive.is_empty() && rules.rejected_sensitive.is_empty()) {
        let group = |map: &std::collections::BTreeMap<String, super::KeyRules>,
                     rejected: &[super::RejectedDigest]| {
            let mut events = Map::new();
            for (event, r) in map {
                events.insert(event.clone(), json!({ "cd": r.cd, "url": r.url }));
            }
            for rej in rejected {
                let entry = events
                    .entry(rej.event.clone())
                    .or_insert_with(|| json!({ "cd": [], "url": [] }));
                if let Some(Value::Array(list)) = entry.get_mut(&rej.field) {
                    list.push(json!(rej.raw));
                } else if let Some(obj) = entry.as_object_mut() {
                    obj.insert(rej.field.clone(), json!([rej.raw]));
                }
            }
            Value::Object(events)
        };
        let payload = json!({
            "blacklisted_keys": group(&rules.blacklisted, &[]),
            "sensitive_keys": group(&rules.sensitive, &rules.rejected_sensitive),
        });
        out.push_str(&format!("config.set({id}, \"unwantedData\", {payload});\n"));
    }

    if !cfg.est_rules.is_empty() {
        let list: Vec<Value> = cfg
            .est_rules
            .iter()
            .map(|r| {
                json!({
                    "condition": r.condition,
                    "derived_event_name": r.derived_event_name,
                    "rule_id": r.rule_id,
                })
            })
            .collect();
        out.push_str(&format!("fbq.set(\"estRules\", {id}, {});\n", Value::Array(list)));
    }

    for (name, value) in &cfg.aux_sets {
        if name == UNKNOWN_MATCH_KEYS {
            continue;
        }
        out.push_str(&format!("config.set({id}, {}, {value});\n", js_str(name)));
    }

    for (name, on) in &cfg.opt_ins {
        out.push_str(&format!("instance.optIn({id}, {}, {on});\n", js_str(name)));
    }
    for (name, raw) in &cfg.undetermined_opt_ins {
        out.push_str(&format!("instance.optIn({id}, {}, {raw});\n", js_str(name)));
    }
    out.push_str(&format!("instance.configLoaded({id});\n}}}});\n"));
    out
}
