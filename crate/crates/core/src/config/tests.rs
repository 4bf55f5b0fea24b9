use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::hashing::sha256_hex;

const OPT_IN: &str = include_str!("../../tests/fixtures/optin.js");
const UNWANTED: &str = include_str!("../../tests/fixtures/unwanted_data.js");
const EST_RULES: &str = include_str!("../../tests/fixtures/est_rules.js");
const AAM: &str = include_str!("../../tests/fixtures/automatic_matching.js");

fn pid(s: &str) -> PixelId {
    s.parse().unwrap()
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[test]
fn opt_in_script() {
    let p = parse_config_script(OPT_IN.as_bytes(), None).unwrap();
    assert_eq!(p.config.pixel_id.as_str(), "1234567891234567");
    assert_eq!(p.config.opt_ins.get("UnwantedData"), Some(&true));
    assert!(p.diagnostics.is_empty());
}

#[test]
fn unwanted_data_script() {
    let p = parse_config_script(UNWANTED.as_bytes(), Some(&pid("1234567891234567"))).unwrap();
    let rules = &p.config.unwanted_data;
    let vc = &rules.blacklisted["ViewContent"];
    assert_eq!(vc.cd, set(&["em"]));
    assert_eq!(vc.url, set(&["lat", "lng"]));
    // the printed digest is elided, so it is kept aside rather than trusted
    assert!(rules.sensitive["PageView"].cd.is_empty());
    assert_eq!(rules.rejected_sensitive.len(), 1);
    assert!(rules.rejected_sensitive[0].raw.starts_with("d3857b12b4cea"));
    assert_eq!(rules.rejected_sensitive[0].event, "PageView");
    assert!(p
        .diagnostics
        .iter()
        .any(|d| d.message.contains("d3857b12b4cea") && d.severity == Severity::Warn));
}

#[test]
fn full_sensitive_digest_is_accepted() {
    let digest = sha256_hex("lat");
    let script = format!(
        r#"config.set("1234567891234567","unwantedData",{{"sensitive_keys":{{"PageView":{{"url":["{}"]}}}}}});"#,
        digest.to_uppercase()
    );
    let p = parse_config_script(script.as_bytes(), None).unwrap();
    assert_eq!(p.config.unwanted_data.sensitive["PageView"].url, set(&[&digest]));
    assert!(p.config.unwanted_data.rejected_sensitive.is_empty());
}

#[test]
fn est_rule_script() {
    let p = parse_config_script(EST_RULES.as_bytes(), None).unwrap();
    assert_eq!(p.config.est_rules.len(), 1);
    let r = &p.config.est_rules[0];
    assert_eq!(r.derived_event_name, "SubmitApplication");
    assert_eq!(r.rule_id, "3690133590227007");
    assert_eq!(r.trigger_values, vec!["Submit my portfolio".to_string()]);
    assert_eq!(r.equality_values().0, vec!["Submit my portfolio"]);
}

#[test]
fn automatic_matching_keys() {
    let p = parse_config_script(AAM.as_bytes(), None).unwrap();
    assert_eq!(p.config.pixel_id.as_str(), "1286678629287552");
    assert_eq!(p.config.selected_match_keys, MATCH_KEY_CODES.map(String::from).to_vec());
    // keys without the opt-in are allowed but warned about
    assert!(p.diagnostics.iter().any(|d| d.message.contains("AutomaticMatching")));
}

#[test]
fn unknown_match_keys_go_to_aux() {
    let s = r#"instance.optIn("12345","AutomaticMatching",true);config.set("12345","automaticMatching",{"selectedMatchKeys":["em","zz"]});"#;
    let p = parse_config_script(s.as_bytes(), None).unwrap();
    assert_eq!(p.config.selected_match_keys, ["em"]);
    assert_eq!(p.config.aux_sets[UNKNOWN_MATCH_KEYS], json!(["zz"]));
}

#[test]
fn no_structured_calls() {
    assert_eq!(
        parse_config_script(b"!function(){var a=1;}();", None).unwrap_err(),
        ConfigError::NoRegisterPluginRegion
    );
    assert!(parse_config_script(b"", None).is_err());
}

#[test]
fn non_literal_flag_is_undetermined() {
    let s = r#"instance.optIn("12345","InferredEvents",a.b());instance.optIn("12345","AutomaticSetup",!0);"#;
    let p = parse_config_script(s.as_bytes(), None).unwrap();
    assert_eq!(p.config.undetermined_opt_ins["InferredEvents"], "a.b()");
    assert!(!p.config.opted_in("InferredEvents"));
    assert!(p.config.opted_in("AutomaticSetup"));
    assert_eq!(p.diagnostics.len(), 1);
}

#[test]
fn malformed_payload_degrades_to_raw() {
    let s = r#"config.set("12345","batching",{maxBatchSize: someVar});instance.optIn("12345","X",true);"#;
    let p = parse_config_script(s.as_bytes(), None).unwrap();
    assert_eq!(p.config.aux_sets["batching"], json!("{maxBatchSize: someVar}"));
    assert!(p.config.opted_in("X"));
    assert!(p.diagnostics.iter().any(|d| d.message.contains("batching")));
}

#[test]
fn foreign_pixel_ids_are_flagged() {
    let s = r#"instance.optIn("11111","A",true);instance.optIn("22222","B",true);"#;
    let p = parse_config_script(s.as_bytes(), Some(&pid("11111"))).unwrap();
    assert_eq!(p.foreign_pixel_ids, [pid("22222")].into_iter().collect());
    assert!(p.config.opted_in("B"));
}

#[test]
fn two_arg_fbq_set_and_null_config_ids() {
    let s = r#"fbq.set("experiments",{"x":1});config.set(null,"batching",{"maxBatchSize":10});instance.optIn("12345","A",true);"#;
    let p = parse_config_script(s.as_bytes(), None).unwrap();
    assert_eq!(p.config.aux_sets["experiments"], json!({"x":1}));
    assert_eq!(p.config.aux_sets["batching"], json!({"maxBatchSize":10}));
    assert!(p.diagnostics.is_empty());
}

#[test]
fn unsupported_operator_is_reported() {
    let s = r#"fbq.set("estRules","12345",[{"condition":{"type":"AND","conditions":[{"operator":"caseInsensitiveIncludes","value":"Buy"}]},"derived_event_name":"Purchase","rule_id":"77"}]);"#;
    let p = parse_config_script(s.as_bytes(), None).unwrap();
    let r = &p.config.est_rules[0];
    assert_eq!(r.trigger_values, ["Buy"]);
    let (eq, unsupported) = r.equality_values();
    assert!(eq.is_empty());
    assert_eq!(unsupported, ["caseInsensitiveIncludes"]);
    assert!(p.diagnostics.iter().any(|d| d.severity == Severity::Info));
}

#[test]
fn invalid_est_rule_is_kept_aside() {
    let s = r#"fbq.set("estRules","12345",[{"derived_event_name":"","rule_id":"x"}]);"#;
    let p = parse_config_script(s.as_bytes(), None).unwrap();
    assert!(p.config.est_rules.is_empty());
    assert!(p.config.aux_sets.contains_key("estRules.invalid"));
}

#[test]
fn feature_vector_only_inferred_events() {
    let mut cfg = PixelConfiguration::empty(pid("12345"));
    cfg.set_opt_in("InferredEvents", true);
    let v = config_feature_vector(&cfg);
    assert!(v.get("AutomaticEvents"));
    assert!(v.get("SubscribedButtonClickCapable"));
    assert!(!v.get("MicrodataCapable"));
}

#[test]
fn feature_vector_empty_config() {
    let v = config_feature_vector(&PixelConfiguration::empty(pid("12345")));
    assert!(!v.any());
    assert_eq!(v.0.keys().cloned().collect::<Vec<_>>().len(), FEATURE_NAMES.len());
    for name in FEATURE_NAMES.iter() {
        assert!(v.0.contains_key(name), "{name}");
    }
}

#[test]
fn feature_vector_core_setup_and_est_are_independent() {
    let mut s = EST_RULES.to_string();
    s.push_str(r#"instance.optIn("1234567891234567","ProtectedDataMode",true);"#);
    let cfg = parse_config_script(s.as_bytes(), None).unwrap().config;
    let v = config_feature_vector(&cfg);
    assert!(v.get("CoreSetup"));
    assert!(v.get("EventSetupTool"));
}

#[test]
fn reference_scripts_round_trip() {
    for src in [OPT_IN, UNWANTED, EST_RULES, AAM] {
        let cfg = parse_config_script(src.as_bytes(), None).unwrap().config;
        let again = parse_config_script(render_script(&cfg).as_bytes(), None)
            .unwrap()
            .config;
        assert_eq!(cfg, again);
    }
}

fn arb_config() -> impl Strategy<Value = PixelConfiguration> {
    let name = "[A-Z][A-Za-z]{2,12}";
    let key = "[a-z_]{1,8}";
    (
        "[0-9]{5,16}",
        prop::collection::btree_map(name, any::<bool>(), 0..6),
        prop::sample::subsequence(MATCH_KEY_CODES.to_vec(), 0..=11),
        prop::collection::btree_map(name, prop::collection::btree_set(key, 0..3), 0..3),
        prop::collection::btree_map(name, prop::collection::btree_set(key, 0..3), 0..3),
        prop::collection::vec(("[A-Za-z ]{1,12}", name, "[0-9]{1,16}"), 0..3),
    )
        .prop_map(|(id, opt_ins, keys, black, sens, rules)| {
            let mut cfg = PixelConfiguration::empty(id.parse().unwrap());
            cfg.opt_ins = opt_ins;
            cfg.selected_match_keys = keys.into_iter().map(String::from).collect();
            for (ev, cd) in black {
                cfg.unwanted_data.blacklisted.insert(
                    ev,
                    KeyRules {
                        url: cd.clone(),
                        cd,
                    },
                );
            }
            for (ev, cd) in sens {
                cfg.unwanted_data.sensitive.insert(
                    ev,
                    KeyRules {
                        cd: cd.iter().map(sha256_hex).collect(),
                        url: BTreeSet::new(),
                    },
                );
            }
            cfg.est_rules = rules
                .into_iter()
                .map(|(text, ev, rid)| EstRule {
                    condition: json!({"conditions": [{"value": text}]}),
                    trigger_values: vec![text],
                    derived_event_name: ev,
                    rule_id: rid,
                })
                .collect();
            cfg
        })
}

/// Minified-looking junk that never spells out a structured call head.
fn arb_junk() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        Just("!function(a,b){var c=a.length;return c>1?b:a}(window,document);".to_string()),
        Just("var s='instance'+'.optIn';".to_string()),
        Just("x=/[\"']+/g;".to_string()),
        Just("/* config */".to_string()),
        Just("t.exports={set:function(e){return e}};".to_string()),
        Just("y=\"fbq.set(\\\"a\\\",1,2)\";".to_string()),
        "[a-zA-Z0-9_=+;.(){}\\[\\] ]{0,40}".prop_filter("no call heads", |s| {
            !s.contains("optIn") && !s.contains(".set")
        }),
    ];
    prop::collection::vec(piece, 0..12).prop_map(|v| v.concat() + ";\n")
}

proptest! {
    #[test]
    fn render_then_parse_is_identity(cfg in arb_config()) {
        prop_assume!(!cfg.opt_ins.is_empty() || !cfg.selected_match_keys.is_empty()
            || !cfg.unwanted_data.blacklisted.is_empty() || !cfg.unwanted_data.sensitive.is_empty()
            || !cfg.est_rules.is_empty());
        let parsed = parse_config_script(render_script(&cfg).as_bytes(), None).unwrap();
        prop_assert_eq!(parsed.config, cfg);
    }

    #[test]
    fn junk_prefix_does_not_change_parse(junk in arb_junk()) {
        for src in [OPT_IN, UNWANTED, EST_RULES, AAM] {
            let plain = parse_config_script(src.as_bytes(), None).unwrap();
            let prefixed = parse_config_script(format!("{junk}{src}").as_bytes(), None).unwrap();
            prop_assert_eq!(&plain.config, &prefixed.config);
        }
    }

    #[test]
    fn parser_is_total(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let mut s = b"config.set(\"12345\",\"x\",".to_vec();
        s.extend(bytes);
        let _ = parse_config_script(&s, None);
    }
}
