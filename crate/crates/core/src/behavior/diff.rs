use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EventPayload;

/// An event identified by name and its occurrence among same-named events.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventRef {
    pub event_name: String,
    pub occurrence: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Added,
    Removed,
    Changed,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamChange {
    pub event: EventRef,
    pub parameter: String,
    pub change: ChangeKind,
    pub before: Option<String>,
    pub after: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorDelta {
    pub only_before: Vec<EventRef>,
    pub only_after: Vec<EventRef>,
    pub changes: Vec<ParamChange>,
}

impl BehaviorDelta {
    pub fn is_empty(&self) -> bool {
        self.only_before.is_empty() && self.only_after.is_empty() && self.changes.is_empty()
    }
}

/// Flatten a payload into `name → value` using the wire parameter names.
pub fn flatten(p: &EventPayload) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    out.insert("dl".to_string(), p.dl.clone());
    out.insert("rl".to_string(), p.rl.clone());
    for (prefix, map) in [("cd", &p.cd), ("ud", &p.ud), ("udff", &p.udff)] {
        for (k, v) in map {
            out.insert(format!("{prefix}[{k}]"), v.clone());
        }
    }
    for (name, v) in [("fbp", &p.fbp), ("fbc", &p.fbc), ("rule_id", &p.rule_id)] {
        if let Some(v) = v {
            out.insert(name.to_string(), v.clone());
        }
    }
    out
}

fn keyed(list: &[EventPayload]) -> BTreeMap<EventRef, &EventPayload> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    list.iter()
        .map(|p| {
            let n = seen.entry(&p.event_name).or_default();
            let r = EventRef { event_name: p.event_name.clone(), occurrence: *n };
            *n += 1;
            (r, p)
        })
        .collect()
}

pub fn diff_payloads(before: &[EventPayload], after: &[EventPayload]) -> BehaviorDelta {
    let b = keyed(before);
    let a = keyed(after);
    let mut delta = BehaviorDelta::default();
    for (r, pb) in &b {
        let Some(pa) = a.get(r) else {
            delta.only_before.push(r.clone());
            continue;
        };
        let (fb, fa) = (flatten(pb), flatten(pa));
        let mut names: Vec<&String> = fb.keys().chain(fa.keys()).collect();
        names.sort();
        names.dedup();
        for name in names {
            let (vb, va) = (fb.get(name), fa.get(name));
            let change = match (vb, va) {
                (Some(x), Some(y)) if x == y => continue,
                (Some(_), Some(_)) => ChangeKind::Changed,
                (Some(_), None) => ChangeKind::Removed,
                (None, Some(_)) => ChangeKind::Added,
                (None, None) => continue,
            };
            delta.changes.push(ParamChange {
                event: r.clone(),
                parameter: name.clone(),
                change,
                before: vb.cloned(),
                after: va.cloned(),
            });
        }
    }
    delta.only_after = a.keys().filter(|r| !b.contains_key(r)).cloned().collect();
    delta
}
