use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::archive::{ArchiveEndpoints, FetchPolicy};
use crate::store::Cohort;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl Default for YearRange {
    fn default() -> Self {
        Self { start: 2017, end: 2024 }
    }
}

impl YearRange {
    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.start..=self.end
    }

    pub fn contains(&self, year: i32) -> bool {
        self.years().contains(&year)
    }
}

fn default_min_stable_years() -> usize {
    4
}

fn default_jobs() -> usize {
    1
}

/// Pipeline settings, read from a JSON file.
///
/// Relative paths are resolved against the directory of the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// One site-list file per cohort: a domain per line, `#` comments.
    #[serde(default)]
    pub site_lists: BTreeMap<Cohort, PathBuf>,
    #[serde(default)]
    pub years: YearRange,
    #[serde(default)]
    pub endpoints: ArchiveEndpoints,
    #[serde(default)]
    pub policy: FetchPolicy,
    pub storage_root: PathBuf,
    #[serde(default)]
    pub wordlists: Vec<PathBuf>,
    /// Years of configuration data a site needs to enter the stable cohort.
    #[serde(default = "default_min_stable_years")]
    pub min_stable_years: usize,
    /// Also treat Pixel IDs found only inside HTML comments as installed.
    #[serde(default)]
    pub include_commented_pixels: bool,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteEntry {
    pub domain: String,
    pub cohort: Cohort,
    /// Listed under both cohorts.
    pub overlap: bool,
}

/// Lowercase host without scheme, `www.`, path, port or trailing dot.
pub fn normalize_domain(raw: &str) -> Option<String> {
    let s = raw.trim().to_ascii_lowercase();
    let s = s.split_once("://").map_or(s.as_str(), |(_, rest)| rest);
    let host = s.split(['/', '?', '#']).next()?;
    let host = host.rsplit_once('@').map_or(host, |(_, h)| h);
    let host = host.split(':').next()?.trim_end_matches('.');
    let host = host.strip_prefix("www.").unwrap_or(host);
    (!host.is_empty() && host.contains('.')).then(|| host.to_string())
}

impl PipelineConfig {
    /// Defaults with no site lists, storing under `root`.
    pub fn for_root(root: impl Into<PathBuf>) -> Self {
        Self {
            site_lists: BTreeMap::new(),
            years: YearRange::default(),
            endpoints: ArchiveEndpoints::default(),
            policy: FetchPolicy::default(),
            storage_root: root.into(),
            wordlists: Vec::new(),
            min_stable_years: default_min_stable_years(),
            include_commented_pixels: false,
            jobs: default_jobs(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.storage_root);
        cfg.site_lists.values_mut().for_each(resolve);
        cfg.wordlists.iter_mut().for_each(resolve);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.years.start > self.years.end {
            return Err(PipelineError::Config(format!(
                "empty study range {}..={}",
                self.years.start, self.years.end
            )));
        }
        if self.min_stable_years == 0 {
            return Err(PipelineError::Config("min_stable_years must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(PipelineError::Config("jobs must be at least 1".into()));
        }
        self.policy.validate()?;
        Ok(())
    }

    /// Load and normalize the site lists. Sites listed under both cohorts
    /// are kept in both and flagged.
    pub fn sites(&self) -> Result<Vec<SiteEntry>, PipelineError> {
        let mut by_cohort: BTreeMap<Cohort, Vec<String>> = BTreeMap::new();
        for (cohort, path) in &self.site_lists {
            let text = std::fs::read_to_string(path)
                .map_err(|source| PipelineError::Io { path: path.clone(), source })?;
            let mut domains: Vec<String> = text
                .lines()
                .map(|l| l.split('#').next().unwrap_or(""))
                .filter_map(normalize_domain)
                .collect();
            domains.sort();
            domains.dedup();
            by_cohort.insert(*cohort, domains);
        }
        let mut out = Vec::new();
        for (cohort, domains) in &by_cohort {
            for d in domains {
                let overlap = by_cohort
                    .iter()
                    .any(|(c, ds)| c != cohort && ds.binary_search(d).is_ok());
                out.push(SiteEntry { domain: d.clone(), cohort: *cohort, overlap });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domains_normalize() {
        assert_eq!(normalize_domain("https://WWW.Example.org/path?q").as_deref(), Some("example.org"));
        assert_eq!(normalize_domain("example.org.").as_deref(), Some("example.org"));
        assert_eq!(normalize_domain("http://user@host.example:8080").as_deref(), Some("host.example"));
        assert_eq!(normalize_domain("  "), None);
        assert_eq!(normalize_domain("localhost"), None);
    }

    #[test]
    fn overlapping_sites_are_flagged() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("h.txt"), "# health\nclinic.org\nshared.org\n").unwrap();
        std::fs::write(dir.path().join("c.txt"), "www.shared.org\nshop.org # note\n").unwrap();
        let json = r#"{"storage_root": "out", "site_lists": {"health": "h.txt", "control": "c.txt"},
                       "years": {"start": 2018, "end": 2019}}"#;
        let path = dir.path().join("pipeline.json");
        std::fs::write(&path, json).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.storage_root, dir.path().join("out"));
        assert_eq!(cfg.min_stable_years, 4);
        let sites = cfg.sites().unwrap();
        assert_eq!(sites.len(), 4);
        let shared: Vec<_> = sites.iter().filter(|s| s.domain == "shared.org").collect();
        assert_eq!(shared.len(), 2);
        assert!(shared.iter().all(|s| s.overlap));
        assert!(sites.iter().filter(|s| s.domain != "shared.org").all(|s| !s.overlap));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = PipelineConfig::for_root("x");
        cfg.years = YearRange { start: 2020, end: 2019 };
        assert!(cfg.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(&path, r#"{"storage_root": "x", "typo": 1}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(PipelineError::Config(_))));
    }
}
