use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use super::*;
use crate::store::ConfigRef;

fn obs(domain: &str, cohort: Cohort, year: i32, hashes: &[&str]) -> SiteYearObservation {
    let pid: crate::PixelId = "12345".parse().unwrap();
    SiteYearObservation {
        domain: domain.into(),
        cohort,
        year,
        pixel_ids: BTreeSet::from([pid.clone()]),
        config_refs: hashes
            .iter()
            .map(|h| ConfigRef { pixel_id: pid.clone(), content_hash: h.to_string() })
            .collect(),
    }
}

fn fv(pairs: &[(&str, bool)]) -> FeatureVector {
    FeatureVector(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
}

#[test]
fn margin_boundaries() {
    assert_eq!(margin_of_error(0.0, 50), Some(0.0));
    assert_eq!(margin_of_error(1.0, 50), Some(0.0));
    assert_eq!(margin_of_error(0.5, 1), None);
    // n = 2: one degree of freedom, t = tan(0.475 π).
    let want = (std::f64::consts::PI * 0.475).tan() * (0.25f64 / 2.0).sqrt() * 100.0;
    assert!((margin_of_error(0.5, 2).unwrap() - want).abs() < 1e-8);
}

#[test]
fn equal_proportions() {
    let t = two_proportion_z(0.3, 40, 0.3, 90).unwrap();
    assert_eq!(t.z, 0.0);
    assert!((t.p_value - 1.0).abs() < 1e-15);
    assert!(matches!(two_proportion_z(1.0, 10, 1.0, 20), Err(StatsError::DegenerateTest(_))));
    assert!(matches!(two_proportion_z(0.0, 10, 0.0, 20), Err(StatsError::DegenerateTest(_))));
    assert!(matches!(two_proportion_z(0.5, 0, 0.5, 20), Err(StatsError::InvalidInput(_))));
}

#[test]
fn z_by_hand() {
    // pooled = 0.7, se = sqrt(0.21 * 0.02)
    let t = two_proportion_z(0.9, 100, 0.5, 100).unwrap();
    let want = 0.4 / (0.7f64 * 0.3 * 0.02).sqrt();
    assert!((t.z - want).abs() < 1e-12);
    assert!(t.p_value < 1e-9);
}

#[test]
fn cohens_h_values() {
    assert_eq!(cohens_h(0.4, 0.4), 0.0);
    assert!((cohens_h(1.0, 0.0) - std::f64::consts::PI).abs() < 1e-15);
    // asin(sqrt p) = atan(sqrt(p / (1 - p)))
    let alt = |p: f64| 2.0 * (p / (1.0 - p)).sqrt().atan();
    let h = cohens_h(0.984, 0.830);
    assert!((h - (alt(0.984) - alt(0.830)).abs()).abs() < 1e-12);
    assert!(h > 0.1 && h < 1.0, "{h}");
    assert_eq!(cohens_h(0.2, 0.6), cohens_h(0.6, 0.2));
}

#[test]
fn at_least_one_pixel_rule() {
    let name = "FirstPartyCookies".to_string();
    let features = BTreeMap::from([
        ("on".to_string(), fv(&[(&name, true)])),
        ("off".to_string(), fv(&[(&name, false)])),
    ]);
    let observations = vec![
        obs("a.org", Cohort::Health, 2020, &["on", "off"]),
        obs("b.org", Cohort::Health, 2020, &["off"]),
        obs("c.org", Cohort::Health, 2020, &[]),
        obs("d.org", Cohort::Health, 2020, &["unparsed"]),
    ];
    let rows = adoption_stats(&observations, &features, &[name]);
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r.n, r.adopters, r.sites_with_pixels), (2, 1, 4));
    assert_eq!(r.p, 0.5);
    assert!(r.z.is_none() && r.cohens_h.is_none());
}

#[test]
fn cross_cohort_fields_are_antisymmetric() {
    let name = "CoreSetup".to_string();
    let features = BTreeMap::from([
        ("on".to_string(), fv(&[(&name, true)])),
        ("off".to_string(), fv(&[(&name, false)])),
    ]);
    let mut observations = Vec::new();
    for i in 0..10 {
        observations.push(obs(&format!("h{i}.org"), Cohort::Health, 2022, &[if i < 7 { "on" } else { "off" }]));
        observations.push(obs(&format!("c{i}.org"), Cohort::Control, 2022, &[if i < 3 { "on" } else { "off" }]));
    }
    let rows = adoption_stats(&observations, &features, &[name]);
    let (c, h) = (&rows[0], &rows[1]);
    assert_eq!((c.cohort, h.cohort), (Cohort::Control, Cohort::Health));
    assert_eq!(c.z.unwrap(), -h.z.unwrap());
    assert_eq!(c.p_value, h.p_value);
    assert_eq!(c.cohens_h, h.cohens_h);
    assert!(to_csv(&rows).lines().count() == 3);
    assert!(plot_series(&rows)["CoreSetup"][&Cohort::Health][0].significant == (h.p_value.unwrap() < 0.05));
}

#[test]
fn single_site_is_flagged() {
    let name = "X".to_string();
    let features = BTreeMap::from([("on".to_string(), fv(&[("X", true)]))]);
    let rows = adoption_stats(&[obs("a.org", Cohort::Control, 2017, &["on"])], &features, &[name]);
    assert!(rows[0].insufficient_sample);
    assert!(rows[0].margin.is_none());
}

#[test]
fn stable_cohort_by_enumeration() {
    // site i has configuration data in years 2017..2017+i
    let mut observations = Vec::new();
    for i in 0..10 {
        for y in 2017..2025 {
            let has = y < 2017 + i;
            observations.push(obs(&format!("s{i}.org"), Cohort::Health, y, if has { &["h"] } else { &[] }));
        }
    }
    let kept = stable_cohort(&observations, 4).unwrap();
    let sites: BTreeSet<_> = kept.iter().map(|o| o.domain.clone()).collect();
    let want: BTreeSet<_> = (4..10).map(|i| format!("s{i}.org")).collect();
    assert_eq!(sites, want);
    assert_eq!(kept.len(), 6 * 8);

    let all = stable_cohort(&observations, 1).unwrap();
    assert_eq!(all.len(), 9 * 8);
    assert!(stable_cohort(&observations, 0).is_err());

    let short: Vec<_> = (2018..=2020).map(|y| obs("x.org", Cohort::Control, y, &["h"])).collect();
    assert!(stable_cohort(&short, 4).unwrap().is_empty());
}

fn sites(spec: &[&[&str]]) -> BTreeMap<String, BTreeSet<String>> {
    spec.iter()
        .enumerate()
        .map(|(i, keys)| (format!("site{i:03}"), keys.iter().map(|k| k.to_string()).collect()))
        .collect()
}

#[test]
fn one_key_everywhere() {
    let c = key_overlap_cdf(&sites(&[&["dob"], &["dob", "ssn"], &["dob"]]));
    assert_eq!(c.points[0], (0.0, 0.0));
    assert_eq!(c.points[1].1, 1.0);
    assert_eq!(c.keys_for_coverage(1.0), Some(1));
}

#[test]
fn unique_keys_are_linear() {
    let c = key_overlap_cdf(&sites(&[&["a"], &["b"], &["c"], &["d"]]));
    for (x, y) in &c.points {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn ties_break_lexicographically() {
    let c = key_overlap_cdf(&sites(&[&["zeta", "alpha"], &["zeta", "alpha"], &["mid"], &[]]));
    let order: Vec<_> = c.ranked_keys.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(order, ["alpha", "zeta", "mid"]);
    assert_eq!(c.points.last().unwrap().1, 0.75);
    assert_eq!(c.keys_for_coverage(0.5), Some(1));
    assert_eq!(c.keys_for_coverage(0.9), None);
}

proptest! {
    #[test]
    fn margin_shrinks_with_n(p in 0.01f64..0.99, n in 2u64..5000) {
        prop_assert!(margin_of_error(p, n + 1).unwrap() < margin_of_error(p, n).unwrap());
    }

    #[test]
    fn z_antisymmetry(a in 0u64..50, n1 in 1u64..50, b in 0u64..50, n2 in 1u64..50) {
        let (a, b) = (a.min(n1), b.min(n2));
        let (p1, p2) = (a as f64 / n1 as f64, b as f64 / n2 as f64);
        match (two_proportion_z(p1, n1, p2, n2), two_proportion_z(p2, n2, p1, n1)) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x.z + y.z).abs() < 1e-12);
                prop_assert!((x.p_value - y.p_value).abs() < 1e-15);
            }
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "asymmetric outcome {:?}", other),
        }
    }

    #[test]
    fn cdf_is_monotone(per_site in proptest::collection::btree_map(
        "[a-z]{3}", proptest::collection::btree_set("[a-e]", 0..4), 0..30)) {
        let c = key_overlap_cdf(&per_site);
        prop_assert_eq!(c.points[0], (0.0, 0.0));
        for w in c.points.windows(2) {
            prop_assert!(w[1].0 > w[0].0 && w[1].1 >= w[0].1);
        }
        let with_any = per_site.values().filter(|k| !k.is_empty()).count();
        let last = c.points.last().unwrap().1;
        let want = if per_site.is_empty() { 0.0 } else { with_any as f64 / per_site.len() as f64 };
        prop_assert_eq!(last, want);
        // brute force: coverage of top-k by direct scan
        for k in 0..=c.ranked_keys.len() {
            let top: BTreeSet<&str> = c.ranked_keys[..k].iter().map(|(s, _)| s.as_str()).collect();
            let n = per_site.values().filter(|ks| ks.iter().any(|x| top.contains(x.as_str()))).count();
            prop_assert_eq!(c.covered[k], n);
        }
    }
}
