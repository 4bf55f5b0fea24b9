//! Longitudinal adoption statistics per cohort, year and feature.

pub mod special;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::FeatureVector;
use crate::store::{Cohort, SiteYearObservation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("two-proportion test is undefined: pooled proportion is {0}")]
    DegenerateTest(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Half-width of the 95% t-interval for a proportion, in percentage points:
/// `t(0.975, n-1) * sqrt(p(1-p)/n) * 100`. `None` when n < 2.
pub fn margin_of_error(p: f64, n: u64) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let n = n as f64;
    let t = special::t_quantile(0.975, n - 1.0);
    Some(t * (p * (1.0 - p) / n).sqrt() * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub p_value: f64,
}

/// Pooled two-proportion z-test, two-sided.
pub fn two_proportion_z(p1: f64, n1: u64, p2: f64, n2: u64) -> Result<ZTest, StatsError> {
    if n1 == 0 || n2 == 0 {
        return Err(StatsError::InvalidInput("sample sizes must be at least 1".into()));
    }
    for p in [p1, p2] {
        if !(0.0..=1.0).contains(&p) {
            return Err(StatsError::InvalidInput(format!("proportion {p} outside [0, 1]")));
        }
    }
    let (f1, f2) = (n1 as f64, n2 as f64);
    let pooled = (p1 * f1 + p2 * f2) / (f1 + f2);
    let var = pooled * (1.0 - pooled) * (1.0 / f1 + 1.0 / f2);
    if var <= 0.0 {
        return Err(StatsError::DegenerateTest(pooled));
    }
    let z = (p1 - p2) / var.sqrt();
    Ok(ZTest { z, p_value: special::normal_two_sided_p(z) })
}

/// Cohen's h as an absolute arcsine difference.
pub fn cohens_h(p1: f64, p2: f64) -> f64 {
    let phi = |p: f64| 2.0 * p.clamp(0.0, 1.0).sqrt().asin();
    (phi(p1) - phi(p2)).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortYearStat {
    pub cohort: Cohort,
    pub year: i32,
    pub feature: String,
    /// Sites with at least one parsed configuration that year.
    pub n: u64,
    /// Sites with at least one Pixel ID in their HTML that year.
    pub sites_with_pixels: u64,
    pub adopters: u64,
    pub p: f64,
    pub margin: Option<f64>,
    pub insufficient_sample: bool,
    /// Against the other cohort, same year and feature (this − other).
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    pub cohens_h: Option<f64>,
}

/// OR-merged feature vector per (domain, cohort, year), for site-years with
/// at least one configuration whose features are known.
pub fn merged_site_features(
    observations: &[SiteYearObservation],
    features: &BTreeMap<String, FeatureVector>,
) -> BTreeMap<(String, Cohort, i32), FeatureVector> {
    let mut out = BTreeMap::new();
    for o in observations {
        let mut merged: Option<FeatureVector> = None;
        for r in &o.config_refs {
            if let Some(fv) = features.get(&r.content_hash) {
                merged.get_or_insert_with(FeatureVector::default).merge(fv);
            }
        }
        if let Some(m) = merged {
            out.entry((o.domain.clone(), o.cohort, o.year))
                .or_insert_with(FeatureVector::default)
                .merge(&m);
        }
    }
    out
}

/// Adoption per (feature, cohort, year), with cross-cohort tests where both
/// cohorts have data. Rows are ordered by `feature_names`, then cohort, then year.
pub fn adoption_stats(
    observations: &[SiteYearObservation],
    features: &BTreeMap<String, FeatureVector>,
    feature_names: &[String],
) -> Vec<CohortYearStat> {
    let merged = merged_site_features(observations, features);
    let mut with_pixels: BTreeMap<(Cohort, i32), BTreeSet<&str>> = BTreeMap::new();
    let mut years: BTreeSet<(Cohort, i32)> = BTreeSet::new();
    for o in observations {
        years.insert((o.cohort, o.year));
        if !o.pixel_ids.is_empty() {
            with_pixels.entry((o.cohort, o.year)).or_default().insert(&o.domain);
        }
    }

    let mut counts: BTreeMap<(Cohort, i32), (u64, BTreeMap<&str, u64>)> = BTreeMap::new();
    for ((_, cohort, year), fv) in &merged {
        let entry = counts.entry((*cohort, *year)).or_default();
        entry.0 += 1;
        for name in feature_names {
            if fv.get(name) {
                *entry.1.entry(name.as_str()).or_default() += 1;
            }
        }
    }

    let mut rows = Vec::new();
    for name in feature_names {
        for &(cohort, year) in &years {
            let (n, adopters) = counts
                .get(&(cohort, year))
                .map(|(n, a)| (*n, a.get(name.as_str()).copied().unwrap_or(0)))
                .unwrap_or((0, 0));
            let p = if n == 0 { 0.0 } else { adopters as f64 / n as f64 };
            let mut row = CohortYearStat {
                cohort,
                year,
                feature: name.clone(),
                n,
                sites_with_pixels: with_pixels.get(&(cohort, year)).map_or(0, |s| s.len() as u64),
                adopters,
                p,
                margin: margin_of_error(p, n),
                insufficient_sample: n < 2,
                z: None,
                p_value: None,
                cohens_h: None,
            };
            let other = match cohort {
                Cohort::Control => Cohort::Health,
                Cohort::Health => Cohort::Control,
            };
            if let Some((n2, a2)) = counts.get(&(other, year)) {
                let adopters2 = a2.get(name.as_str()).copied().unwrap_or(0);
                if n > 0 && *n2 > 0 {
                    let p2 = adopters2 as f64 / *n2 as f64;
                    row.cohens_h = Some(cohens_h(p, p2));
                    if let Ok(t) = two_proportion_z(p, n, p2, *n2) {
                        row.z = Some(t.z);
                        row.p_value = Some(t.p_value);
                    }
                }
            }
            rows.push(row);
        }
    }
    rows
}

/// Keep every observation of the sites (domain, cohort) that have
/// configuration data in at least `min_years` distinct years.
pub fn stable_cohort(
    observations: &[SiteYearObservation],
    min_years: usize,
) -> Result<Vec<SiteYearObservation>, StatsError> {
    if min_years == 0 {
        return Err(StatsError::InvalidInput("min_years must be at least 1".into()));
    }
    let mut years: BTreeMap<(&str, Cohort), BTreeSet<i32>> = BTreeMap::new();
    for o in observations.iter().filter(|o| !o.config_refs.is_empty()) {
        years.entry((&o.domain, o.cohort)).or_default().insert(o.year);
    }
    Ok(observations
        .iter()
        .filter(|o| years.get(&(o.domain.as_str(), o.cohort)).is_some_and(|y| y.len() >= min_years))
        .cloned()
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyOverlapCurve {
    /// Keys by site frequency, most common first; ties lexicographic.
    pub ranked_keys: Vec<(String, usize)>,
    /// (fraction of distinct keys, fraction of sites covered), from (0, 0).
    pub points: Vec<(f64, f64)>,
    pub total_sites: usize,
    /// Sites covered by the top-k keys, for k = 0..=K.
    pub covered: Vec<usize>,
}

impl KeyOverlapCurve {
    /// Smallest number of top keys covering at least `fraction` of sites.
    pub fn keys_for_coverage(&self, fraction: f64) -> Option<usize> {
        if self.total_sites == 0 {
            return None;
        }
        let need = (fraction * self.total_sites as f64).ceil() as usize;
        self.covered.iter().position(|&c| c >= need)
    }
}

pub fn key_overlap_cdf(per_site_keys: &BTreeMap<String, BTreeSet<String>>) -> KeyOverlapCurve {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for keys in per_site_keys.values() {
        for k in keys {
            *freq.entry(k).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().map(|(k, c)| (k.to_string(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let rank: BTreeMap<&str, usize> = ranked.iter().enumerate().map(|(i, (k, _))| (k.as_str(), i)).collect();
    // A site is first covered at the best rank among its keys.
    let mut first_cover = vec![0usize; ranked.len() + 1];
    for keys in per_site_keys.values() {
        if let Some(best) = keys.iter().filter_map(|k| rank.get(k.as_str())).min() {
            first_cover[best + 1] += 1;
        }
    }
    let mut covered = Vec::with_capacity(first_cover.len());
    let mut acc = 0;
    for c in first_cover {
        acc += c;
        covered.push(acc);
    }
    let total = per_site_keys.len();
    let k = ranked.len();
    let points = covered
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let x = if k == 0 { 0.0 } else { i as f64 / k as f64 };
            let y = if total == 0 { 0.0 } else { c as f64 / total as f64 };
            (x, y)
        })
        .collect();
    KeyOverlapCurve { ranked_keys: ranked, points, total_sites: total, covered }
}

/// Render stats as CSV with a header row.
pub fn to_csv(rows: &[CohortYearStat]) -> String {
    fn opt(v: Option<f64>) -> String {
        v.map(|x| format!("{x}")).unwrap_or_default()
    }
    let mut out = String::from(
        "feature,cohort,year,n,sites_with_pixels,adopters,p,margin,insufficient_sample,z,p_value,cohens_h\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.feature,
            r.cohort.as_str(),
            r.year,
            r.n,
            r.sites_with_pixels,
            r.adopters,
            r.p,
            opt(r.margin),
            r.insufficient_sample,
            opt(r.z),
            opt(r.p_value),
            opt(r.cohens_h),
        ));
    }
    out
}

/// One point of a per-figure series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub year: i32,
    pub p: f64,
    pub margin: Option<f64>,
    pub significant: bool,
}

/// Per (feature, cohort) series for plotting; significance at alpha = 0.05.
pub fn plot_series(rows: &[CohortYearStat]) -> BTreeMap<String, BTreeMap<Cohort, Vec<PlotPoint>>> {
    let mut out: BTreeMap<String, BTreeMap<Cohort, Vec<PlotPoint>>> = BTreeMap::new();
    for r in rows {
        out.entry(r.feature.clone()).or_default().entry(r.cohort).or_default().push(PlotPoint {
            year: r.year,
            p: r.p,
            margin: r.margin,
            significant: r.p_value.is_some_and(|p| p < 0.05),
        });
    }
    out
}

#[cfg(test)]
mod tests;
