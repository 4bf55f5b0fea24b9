//! A declarative synthetic corpus for hermetic end-to-end runs.
//!
//! Twenty sites (ten per cohort) over 2017–2024. Each site-year lists the
//! Pixel IDs its homepage HTML carries and how they are embedded; each Pixel
//! lists the configuration captures the archive holds. [`Corpus::captures`]
//! renders everything into archive captures for [`crate::mock_archive`].
//!
//! A few entries are deliberate traps:
//! * a Pixel whose configuration is archived in years its site never shows it,
//! * a site carrying a second Pixel in its July snapshot only,
//! * a Pixel that only appears inside an HTML comment,
//! * a decoy Pixel whose ID has another Pixel's ID as a prefix,
//! * a redirect capture sitting closer to the January anchor than the real one,
//! * a Pixel whose configuration was never archived.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use serde_json::json;

use crate::config::{opt_in, render_script, EstRule, KeyRules, PixelConfiguration, MATCH_KEY_CODES};
use crate::hashing::sha256_hex;
use crate::mock_archive::MockCapture;
use crate::pixel::PixelId;
use crate::store::Cohort;

pub const FIXTURE_YEARS: RangeInclusive<i32> = 2017..=2024;

/// How a Pixel is embedded in a page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    FbqInit,
    ConfigScriptSrc,
    TrackingPixel,
    /// `fbq('init', ...)` inside an HTML comment.
    Commented,
}

/// Which of the year's two homepage snapshots carries the Pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    Both,
    JulyOnly,
}

/// Settings of one archived configuration script.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigTruth {
    pub automatic_setup: bool,
    pub inferred_events: bool,
    pub first_party_cookies: bool,
    pub automatic_matching: bool,
    pub match_keys: Vec<&'static str>,
    pub est_rule: bool,
    /// ViewContent: cd [em], url [lat, lng] in plaintext.
    pub blacklisted: bool,
    /// PageView: hashed cd [dob], url [condition].
    pub sensitive: bool,
    pub protected_data_mode: bool,
}

impl ConfigTruth {
    pub fn to_configuration(&self, pixel_id: &PixelId, rule_id: &str) -> PixelConfiguration {
        let mut c = PixelConfiguration::empty(pixel_id.clone());
        let flags = [
            (opt_in::AUTOMATIC_SETUP, self.automatic_setup),
            (opt_in::INFERRED_EVENTS, self.inferred_events),
            (opt_in::FIRST_PARTY_COOKIES, self.first_party_cookies),
            (opt_in::AUTOMATIC_MATCHING, self.automatic_matching),
            (opt_in::UNWANTED_DATA, self.blacklisted || self.sensitive),
            (opt_in::PROTECTED_DATA_MODE, self.protected_data_mode),
        ];
        for (name, on) in flags {
            c.set_opt_in(name, on);
        }
        if self.automatic_matching {
            c.selected_match_keys = self.match_keys.iter().map(|k| k.to_string()).collect();
        }
        if self.blacklisted {
            c.unwanted_data.blacklisted.insert(
                "ViewContent".into(),
                KeyRules {
                    cd: BTreeSet::from(["em".to_string()]),
                    url: BTreeSet::from(["lat".to_string(), "lng".to_string()]),
                },
            );
        }
        if self.sensitive {
            c.unwanted_data.sensitive.insert(
                "PageView".into(),
                KeyRules {
                    cd: BTreeSet::from([sha256_hex("dob")]),
                    url: BTreeSet::from([sha256_hex("condition")]),
                },
            );
        }
        if self.est_rule {
            c.est_rules.push(EstRule {
                condition: json!({"type": "button", "conditions": [
                    {"field": "innerText", "operator": "eq", "value": "Book appointment"}
                ]}),
                trigger_values: vec!["Book appointment".into()],
                derived_event_name: "Schedule".into(),
                rule_id: rule_id.into(),
            });
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct SiteTruth {
    pub domain: String,
    pub cohort: Cohort,
    /// Years with archived homepage snapshots; the list may be empty.
    pub years: BTreeMap<i32, Vec<(PixelId, Placement, Half)>>,
}

impl SiteTruth {
    pub fn homepage(&self) -> String {
        format!("https://www.{}/", self.domain)
    }
}

#[derive(Debug, Clone)]
pub struct ConfigCaptureTruth {
    pub timestamp: String,
    pub config: ConfigTruth,
}

#[derive(Debug, Clone)]
pub struct PixelTruth {
    pub id: PixelId,
    pub captures: Vec<ConfigCaptureTruth>,
}

impl PixelTruth {
    pub fn config_url(&self) -> String {
        config_url(&self.id)
    }
}

pub fn config_url(id: &PixelId) -> String {
    format!("https://connect.facebook.net/signals/config/{id}?v=2.9.48&r=stable")
}

/// A redirect capture that must never be used as a snapshot.
#[derive(Debug, Clone)]
pub struct NoiseCapture {
    pub url: String,
    pub timestamp: String,
    pub status: u16,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub sites: Vec<SiteTruth>,
    pub pixels: Vec<PixelTruth>,
    pub noise: Vec<NoiseCapture>,
}

fn pid(s: &str) -> PixelId {
    s.parse().expect("fixture pixel id")
}

fn main_pixel(i: usize) -> PixelId {
    match i {
        3 => pid("7000000000001"),
        _ => pid(&format!("{}", 100_000_000_000_000u64 + i as u64 * 1111)),
    }
}

const SECOND_PIXEL: &str = "5550000000002";
const LATE_PIXEL: &str = "8880000000004";
const COMMENTED_PIXEL: &str = "9990000000006";
const DECOY_PIXEL: &str = "70000000000015";
const NO_CONFIG_SITE: usize = 8;
const NO_PIXEL_SITES: [usize; 2] = [9, 19];

fn truth_for(i: usize, y: i32) -> ConfigTruth {
    let (iu, yu) = (i as i64, y as i64);
    let aam = (iu + 2 * yu) % 5 == 0 || (i % 2 == 1 && y >= 2022);
    ConfigTruth {
        automatic_setup: y <= 2020 && (iu + yu) % 2 == 0,
        inferred_events: (iu + yu) % 3 != 0,
        first_party_cookies: (iu * yu) % 4 != 1,
        automatic_matching: aam,
        match_keys: if aam { MATCH_KEY_CODES[..(i % 11) + 1].to_vec() } else { Vec::new() },
        est_rule: (iu * 7 + yu) % 6 == 0,
        blacklisted: i % 2 == 0 && y >= 2020,
        sensitive: (iu + yu) % 7 == 0,
        protected_data_mode: y >= 2023 && i % 3 == 0,
    }
}

fn everything_on() -> ConfigTruth {
    ConfigTruth {
        automatic_setup: true,
        inferred_events: true,
        first_party_cookies: true,
        automatic_matching: true,
        match_keys: MATCH_KEY_CODES.to_vec(),
        est_rule: true,
        blacklisted: true,
        sensitive: true,
        protected_data_mode: true,
    }
}

impl Corpus {
    /// The bundled corpus.
    pub fn standard() -> Self {
        let mut sites = Vec::new();
        let mut pixels = Vec::new();
        for i in 0..20usize {
            let health = i < 10;
            let cohort = if health { Cohort::Health } else { Cohort::Control };
            let domain = format!("{}{i:02}.example", if health { "clinic" } else { "shop" });
            let id = main_pixel(i);
            let mut years = BTreeMap::new();
            for y in FIXTURE_YEARS {
                if i % 5 == 0 && y == 2017 + ((i * 5) % 8) as i32 {
                    continue; // no snapshot archived this year
                }
                let mut placed = Vec::new();
                if !NO_PIXEL_SITES.contains(&i) && y >= 2017 + (i % 4) as i32 {
                    let style = [Placement::FbqInit, Placement::ConfigScriptSrc, Placement::TrackingPixel]
                        [(i + y as usize) % 3];
                    placed.push((id.clone(), style, Half::Both));
                }
                if i == 2 && y >= 2019 {
                    placed.push((pid(SECOND_PIXEL), Placement::FbqInit, Half::JulyOnly));
                }
                if i == 4 && y == 2021 {
                    placed.push((pid(LATE_PIXEL), Placement::TrackingPixel, Half::Both));
                }
                if i == 6 {
                    placed.push((pid(COMMENTED_PIXEL), Placement::Commented, Half::Both));
                }
                years.insert(y, placed);
            }
            sites.push(SiteTruth { domain, cohort, years });

            if NO_PIXEL_SITES.contains(&i) || i == NO_CONFIG_SITE {
                continue;
            }
            let mut captures = Vec::new();
            for y in FIXTURE_YEARS {
                if (i * 3 + y as usize) % 5 == 0 {
                    continue; // not archived this year
                }
                let month_day = if i % 2 == 0 { "0210" } else { "0705" };
                captures.push(ConfigCaptureTruth {
                    timestamp: format!("{y}{month_day}08{i:02}00"),
                    config: truth_for(i, y),
                });
                if i == 7 && y == 2020 {
                    // second capture the same year with different settings
                    let mut later = truth_for(i, y);
                    later.first_party_cookies = !later.first_party_cookies;
                    later.protected_data_mode = true;
                    captures.push(ConfigCaptureTruth { timestamp: format!("{y}0920120000"), config: later });
                }
            }
            pixels.push(PixelTruth { id, captures });
        }

        let yearly = |f: &dyn Fn(i32) -> ConfigTruth, month_day: &str| -> Vec<ConfigCaptureTruth> {
            FIXTURE_YEARS
                .map(|y| ConfigCaptureTruth { timestamp: format!("{y}{month_day}101010"), config: f(y) })
                .collect()
        };
        let fpc_aam = |_y: i32| ConfigTruth {
            first_party_cookies: true,
            automatic_matching: true,
            match_keys: vec!["em", "ph"],
            ..ConfigTruth::default()
        };
        let pdm_only = |_y: i32| ConfigTruth { protected_data_mode: true, ..ConfigTruth::default() };
        pixels.push(PixelTruth { id: pid(SECOND_PIXEL), captures: yearly(&fpc_aam, "0801") });
        pixels.push(PixelTruth {
            id: pid(LATE_PIXEL),
            captures: yearly(&pdm_only, "0301").into_iter().filter(|c| &c.timestamp[..4] >= "2019").collect(),
        });
        pixels.push(PixelTruth { id: pid(COMMENTED_PIXEL), captures: yearly(&|_| everything_on(), "0401") });
        pixels.push(PixelTruth { id: pid(DECOY_PIXEL), captures: yearly(&|_| everything_on(), "0115") });

        let noise = vec![NoiseCapture {
            url: sites[0].homepage(),
            timestamp: "20200101000100".into(),
            status: 302,
        }];
        Corpus { sites, pixels, noise }
    }

    pub fn pixel(&self, id: &PixelId) -> Option<&PixelTruth> {
        self.pixels.iter().find(|p| &p.id == id)
    }

    /// One registrable domain per line, as a site-list file.
    pub fn site_list(&self, cohort: Cohort) -> String {
        self.sites
            .iter()
            .filter(|s| s.cohort == cohort)
            .map(|s| format!("{}\n", s.domain))
            .collect()
    }

    /// Homepage snapshot timestamps of site `i` for `year`.
    pub fn snapshot_times(i: usize, year: i32) -> [String; 2] {
        [format!("{year}0102{:02}3000", i % 24), format!("{year}0629{:02}1500", i % 24)]
    }

    pub fn captures(&self) -> Vec<MockCapture> {
        let mut out = Vec::new();
        for (i, site) in self.sites.iter().enumerate() {
            for (year, placed) in &site.years {
                let [jan, jul] = Self::snapshot_times(i, *year);
                for (ts, july) in [(jan, false), (jul, true)] {
                    let present: Vec<_> = placed
                        .iter()
                        .filter(|(_, _, half)| july || *half == Half::Both)
                        .map(|(id, style, _)| (id, *style))
                        .collect();
                    let html = homepage_html(&site.domain, &ts, &present);
                    out.push(MockCapture::html(&site.homepage(), &ts, html));
                }
            }
        }
        for (n, p) in self.pixels.iter().enumerate() {
            for c in &p.captures {
                let rule_id = format!("36901335902{n:02}{}", &c.timestamp[..4]);
                let cfg = c.config.to_configuration(&p.id, &rule_id);
                out.push(MockCapture::script(&p.config_url(), &c.timestamp, config_script(&cfg)));
            }
        }
        for nz in &self.noise {
            let mut c = MockCapture::html(&nz.url, &nz.timestamp, "<html><body>Moved</body></html>");
            c.status = nz.status;
            out.push(c);
        }
        out
    }
}

fn snippet(id: &PixelId, style: Placement, ts: &str) -> String {
    let prefix = format!("https://web.archive.org/web/{ts}");
    match style {
        Placement::FbqInit => format!(
            "<script>!function(f,b,e,v,n,t,s){{if(f.fbq)return;n=f.fbq=function(){{n.callMethod?\
             n.callMethod.apply(n,arguments):n.queue.push(arguments)}};n.queue=[];t=b.createElement(e);\
             t.async=!0;t.src=v;s=b.getElementsByTagName(e)[0];s.parentNode.insertBefore(t,s)}}\
             (window,document,'script','{prefix}js_/https://connect.facebook.net/en_US/fbevents.js');\
             fbq('init', '{id}');fbq('track', 'PageView');</script>"
        ),
        Placement::ConfigScriptSrc => format!(
            "<script async src=\"{prefix}js_/https://connect.facebook.net/signals/config/{id}?v=2.9.48&amp;r=stable\"></script>"
        ),
        Placement::TrackingPixel => format!(
            "<noscript><img height=\"1\" width=\"1\" style=\"display:none\" \
             src=\"{prefix}im_/https://www.facebook.com/tr?id={id}&amp;ev=PageView&amp;noscript=1\"/></noscript>"
        ),
        Placement::Commented => format!("<!-- old tracking: <script>fbq(\"init\", \"{id}\");</script> -->"),
    }
}

fn homepage_html(domain: &str, ts: &str, pixels: &[(&PixelId, Placement)]) -> String {
    let snippets: String = pixels.iter().map(|(id, s)| snippet(id, *s, ts)).collect();
    format!(
        "<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>{domain}</title>{snippets}</head>\
         <body><h1>Welcome to {domain}</h1><p>Archived {ts}.</p>\
         <form><input name=\"email\"><button>Book appointment</button></form></body></html>"
    )
}

const JUNK_HEAD: &str = "/**\n* Copyright (c) 2017-present, Facebook, Inc. All rights reserved.\n*/\n\
(function(a,b){var c=\"config.set(\\\"1\\\", \\\"x\\\", {})\";var d=/instance\\.optIn\\(/g;\
function e(f){return f&&f.__esModule?f:{default:f}}a.fbq=a.fbq||{};/* fbq.set(\"estRules\") */\
var g=[1,2,3].map(function(h){return h*2});b.push(c,d,g)})(window,[]);\n";
const JUNK_TAIL: &str = "\n(function(){var x='instance.configLoaded';return x.length})();\n";

/// A configuration script body: minified preamble, the structured region, trailer.
pub fn config_script(cfg: &PixelConfiguration) -> String {
    format!("{JUNK_HEAD}{}{JUNK_TAIL}", render_script(cfg))
}
