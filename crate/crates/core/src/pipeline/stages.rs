use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{PipelineContext, PipelineError, Stage, StageSummary};
use crate::archive::{
    select_semiannual, ArchiveError, ArchiveTimestamp, CdxTarget, SnapshotRecord, DEFAULT_MAX_ANCHOR_DISTANCE,
};
use crate::config::{
    config_feature_vector, parse_config_script, Diagnostic, FeatureVector, PixelConfiguration, FEATURE_NAMES,
};
use crate::cracker::{build_dictionary, crack, CrackError, CrackReport, CrackResult};
use crate::pixel::{extract_pixel_ids, Evidence};
use crate::stats::{
    adoption_stats, key_overlap_cdf, plot_series, stable_cohort, to_csv, CohortYearStat, KeyOverlapCurve,
};
use crate::store::{
    attribute_configs, read_jsonl, write_jsonl, BlobKind, Cohort, ConfigCapture, SiteYearObservation,
    SiteYearPixels, SnapshotStore, StoreError,
};
use crate::PixelId;

// Derived output names, relative to the storage root.
const SITE_SNAPSHOTS: &str = "site_snapshots";
const CRAWL_ERRORS: &str = "crawl_errors";
const SITE_YEAR_PIXELS: &str = "site_year_pixels";
const PIXEL_EVIDENCE: &str = "pixel_evidence";
const CONFIG_CAPTURES: &str = "config_captures";
const CONFIG_CRAWL_ERRORS: &str = "config_crawl_errors";
const PARSED_CONFIGS: &str = "parsed_configs";
const CRACKED_KEYS: &str = "cracked_keys";
const OBSERVATIONS: &str = "observations";
const UNATTRIBUTED: &str = "unattributed_configs";
const ADOPTION: &str = "adoption";
const ADOPTION_STABLE: &str = "adoption_stable";

/// One homepage snapshot kept for a site-year.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteSnapshot {
    pub domain: String,
    pub cohort: Cohort,
    /// Year of the anchor that selected the capture.
    pub year: i32,
    pub original_url: String,
    pub timestamp: ArchiveTimestamp,
    pub timestamp_iso: String,
    pub content_hash: String,
    pub overlap: bool,
}

/// A site or Pixel the crawl could not complete. The run continues past it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrawlFailure {
    pub target: String,
    pub timestamp: Option<ArchiveTimestamp>,
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigCaptureRow {
    pub pixel_id: PixelId,
    pub timestamp: ArchiveTimestamp,
    pub timestamp_iso: String,
    pub content_hash: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedConfigRow {
    pub pixel_id: PixelId,
    pub content_hash: String,
    pub config: Option<PixelConfiguration>,
    pub features: Option<FeatureVector>,
    pub diagnostics: Vec<Diagnostic>,
    pub foreign_pixel_ids: BTreeSet<PixelId>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct EvidenceRow {
    domain: String,
    cohort: Cohort,
    year: i32,
    timestamp: ArchiveTimestamp,
    evidence: Vec<Evidence>,
}

fn derived(store: &SnapshotStore, name: &str) -> std::path::PathBuf {
    store.derived_path(name)
}

fn archive_kind(e: &ArchiveError) -> &'static str {
    match e {
        ArchiveError::ArchiveUnavailable { .. } => "ArchiveUnavailable",
        ArchiveError::MalformedCdxResponse(_) => "MalformedCdxResponse",
        ArchiveError::SnapshotFetchFailed { .. } => "SnapshotFetchFailed",
        ArchiveError::ArchiveErrorPage { .. } => "ArchiveErrorPage",
        ArchiveError::Http { .. } => "Http",
        ArchiveError::InvalidTimestamp(_) => "InvalidTimestamp",
        ArchiveError::InvalidPolicy(_) => "InvalidPolicy",
        ArchiveError::InvalidQuery(_) => "InvalidQuery",
    }
}

fn failure(target: &str, timestamp: Option<&ArchiveTimestamp>, e: &ArchiveError) -> CrawlFailure {
    CrawlFailure {
        target: target.to_string(),
        timestamp: timestamp.cloned(),
        error: archive_kind(e).to_string(),
        message: e.to_string(),
    }
}

/// Map `f` over `items` on up to `jobs` threads, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result lock").into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Captures already in the store, keyed by (original url, timestamp).
fn known_blobs(store: &SnapshotStore, kind: BlobKind) -> Result<HashMap<(String, String), String>, StoreError> {
    Ok(store
        .index_rows(kind)?
        .into_iter()
        .filter(|r| store.has_blob(&r.content_hash))
        .map(|r| ((r.record.original_url, r.record.timestamp.as_str().to_string()), r.content_hash))
        .collect())
}

/// Return the stored hash for `record`, fetching it first if needed.
fn fetch_or_reuse(
    ctx: &PipelineContext,
    known: &HashMap<(String, String), String>,
    kind: BlobKind,
    record: &SnapshotRecord,
) -> Result<String, ArchiveError> {
    let key = (record.original_url.clone(), record.timestamp.as_str().to_string());
    if let Some(hash) = known.get(&key) {
        return Ok(hash.clone());
    }
    let fetched = ctx.client.fetch_snapshot(record)?;
    match ctx.store.put_blob(kind, record, &fetched.body) {
        Ok(h) => Ok(h),
        Err(StoreError::EmptyBody) => Err(ArchiveError::ArchiveErrorPage {
            url: fetched.final_url,
            marker: "empty body".into(),
        }),
        Err(e) => Err(ArchiveError::SnapshotFetchFailed {
            url: fetched.final_url,
            attempts: fetched.attempts,
            reason: e.to_string(),
        }),
    }
}

pub struct CrawlSites;

impl Stage for CrawlSites {
    fn name(&self) -> &'static str {
        "crawl_sites"
    }

    fn prerequisites(&self) -> &'static [&'static str] {
        &[]
    }

    fn run(&self, ctx: &PipelineContext) -> Result<StageSummary, PipelineError> {
        let sites = ctx.config.sites()?;
        let known = known_blobs(&ctx.store, BlobKind::HtmlSnapshot)?;
        let years = ctx.config.years;
        let results = parallel_map(&sites, ctx.config.jobs, |site| {
            let mut snaps = Vec::new();
            let mut fails = Vec::new();
            let listing = match ctx.client.query_cdx(&CdxTarget::exact(&site.domain), years.start) {
                Ok(l) => l,
                Err(e) => {
                    log::warn!("{}: {e}", site.domain);
                    fails.push(failure(&site.domain, None, &e));
                    return (snaps, fails);
                }
            };
            let usable: Vec<SnapshotRecord> = listing
                .records
                .into_iter()
                .filter(|r| r.status_code == 200 && r.mime.to_ascii_lowercase().contains("html"))
                .collect();
            for year in years.years() {
                for rec in select_semiannual(&usable, year, DEFAULT_MAX_ANCHOR_DISTANCE) {
                    match fetch_or_reuse(ctx, &known, BlobKind::HtmlSnapshot, &rec) {
                        Ok(hash) => snaps.push(SiteSnapshot {
                            domain: site.domain.clone(),
                            cohort: site.cohort,
                            year,
                            original_url: rec.original_url.clone(),
                            timestamp_iso: rec.timestamp.iso8601(),
                            timestamp: rec.timestamp,
                            content_hash: hash,
                            overlap: site.overlap,
                        }),
                        Err(e) => {
                            log::warn!("{} @ {}: {e}", site.domain, rec.timestamp.as_str());
                            fails.push(failure(&site.domain, Some(&rec.timestamp), &e));
                        }
                    }
                }
            }
            (snaps, fails)
        });
        let mut snapshots = Vec::new();
        let mut failures = Vec::new();
        for (s, f) in results {
            snapshots.extend(s);
            failures.extend(f);
        }
        snapshots.sort_by(|a, b| {
            (&a.domain, a.cohort, a.year, &a.timestamp).cmp(&(&b.domain, b.cohort, b.year, &b.timestamp))
        });
        failures.sort();
        write_jsonl(&derived(&ctx.store, SITE_SNAPSHOTS), &snapshots)?;
        write_jsonl(&derived(&ctx.store, CRAWL_ERRORS), &failures)?;
        let mut s = StageSummary::new(self.name());
        s.set("sites", sites.len())
            .set("overlapping_sites", sites.iter().filter(|x| x.overlap).count())
            .set("snapshots", snapshots.len())
            .set("failures", failures.len());
        Ok(s)
    }
}

pub struct ExtractPixels;

impl Stage for ExtractPixels {
    fn name(&self) -> &'static str {
        "extract_pixels"
    }

    fn prerequisites(&self) -> &'static [&'static str] {
        &["crawl_sites"]
    }

    fn run(&self, ctx: &PipelineContext) -> Result<StageSummary, PipelineError> {
        let snapshots: Vec<SiteSnapshot> = read_jsonl(&derived(&ctx.store, SITE_SNAPSHOTS))?;
        let mut by_site_year: BTreeMap<(String, Cohort, i32), BTreeSet<PixelId>> = BTreeMap::new();
        let mut evidence = Vec::new();
        for snap in &snapshots {
            let html = ctx.store.get_blob(&snap.content_hash)?;
            let ex = extract_pixel_ids(&html);
            let ids = if ctx.config.include_commented_pixels { ex.pixel_ids.clone() } else { ex.active_ids() };
            by_site_year.entry((snap.domain.clone(), snap.cohort, snap.year)).or_default().extend(ids);
            if !ex.evidence.is_empty() {
                evidence.push(EvidenceRow {
                    domain: snap.domain.clone(),
                    cohort: snap.cohort,
                    year: snap.year,
                    timestamp: snap.timestamp.clone(),
                    evidence: ex.evidence,
                });
            }
        }
        let rows: Vec<SiteYearPixels> = by_site_year
            .into_iter()
            .map(|((domain, cohort, year), pixel_ids)| SiteYearPixels { domain, cohort, year, pixel_ids })
            .collect();
        write_jsonl(&derived(&ctx.store, SITE_YEAR_PIXELS), &rows)?;
        write_jsonl(&derived(&ctx.store, PIXEL_EVIDENCE), &evidence)?;
        let distinct: BTreeSet<&PixelId> = rows.iter().flat_map(|r| &r.pixel_ids).collect();
        let mut s = StageSummary::new(self.name());
        s.set("site_years", rows.len())
            .set("site_years_with_pixels", rows.iter().filter(|r| !r.pixel_ids.is_empty()).count())
            .set("distinct_pixels", distinct.len());
        Ok(s)
    }
}

/// The Pixel ID a config-script URL names, if any.
fn config_url_pixel(url: &str) -> Option<&str> {
    let (_, rest) = url.split_once("/signals/config/")?;
    let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    Some(&rest[..end])
}

pub struct CrawlConfigs;

impl Stage for CrawlConfigs {
    fn name(&self) -> &'static str {
        "crawl_configs"
    }

    fn prerequisites(&self) -> &'static [&'static str] {
        &["extract_pixels"]
    }

    fn run(&self, ctx: &PipelineContext) -> Result<StageSummary, PipelineError> {
        let site_years: Vec<SiteYearPixels> = read_jsonl(&derived(&ctx.store, SITE_YEAR_PIXELS))?;
        let pixels: Vec<PixelId> =
            site_years.iter().flat_map(|r| r.pixel_ids.iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
        let known = known_blobs(&ctx.store, BlobKind::ConfigScript)?;
        let years = ctx.config.years;
        let results = parallel_map(&pixels, ctx.config.jobs, |pid| {
            let mut rows = Vec::new();
            let mut fails = Vec::new();
            let target = CdxTarget::prefix(format!("connect.facebook.net/signals/config/{pid}"));
            let listing = match ctx.client.query_cdx(&target, years.start) {
                Ok(l) => l,
                Err(e) => {
                    fails.push(failure(pid.as_str(), None, &e));
                    return (rows, fails);
                }
            };
            // Prefix queries also return longer IDs sharing these digits.
            let usable: Vec<SnapshotRecord> = listing
                .records
                .into_iter()
                .filter(|r| r.status_code == 200 && config_url_pixel(&r.original_url) == Some(pid.as_str()))
                .collect();
            let mut chosen: BTreeMap<(ArchiveTimestamp, String), SnapshotRecord> = BTreeMap::new();
            for year in years.years() {
                for rec in select_semiannual(&usable, year, DEFAULT_MAX_ANCHOR_DISTANCE) {
                    if years.contains(rec.timestamp.year()) {
                        chosen.insert((rec.timestamp.clone(), rec.original_url.clone()), rec);
                    }
                }
            }
            for rec in chosen.into_values() {
                match fetch_or_reuse(ctx, &known, BlobKind::ConfigScript, &rec) {
                    Ok(hash) => rows.push(ConfigCaptureRow {
                        pixel_id: pid.clone(),
                        timestamp_iso: rec.timestamp.iso8601(),
                        timestamp: rec.timestamp,
                        content_hash: hash,
                        url: rec.original_url,
                    }),
                    Err(e) => fails.push(failure(pid.as_str(), Some(&rec.timestamp), &e)),
                }
            }
            (rows, fails)
        });
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for (r, f) in results {
            rows.extend(r);
            failures.extend(f);
        }
        failures.sort();
        write_jsonl(&derived(&ctx.store, CONFIG_CAPTURES), &rows)?;
        write_jsonl(&derived(&ctx.store, CONFIG_CRAWL_ERRORS), &failures)?;
        let mut s = StageSummary::new(self.name());
        s.set("pixels", pixels.len())
            .set("pixels_with_configs", rows.iter().map(|r| &r.pixel_id).collect::<BTreeSet<_>>().len())
            .set("captures", rows.len())
            .set("failures", failures.len());
        Ok(s)
    }
}

pub struct ParseConfigs;

impl Stage for ParseConfigs {
    fn name(&self) -> &'static str {
        "parse_configs"
    }

    fn prerequisites(&self) -> &'static [&'static str] {
        &["crawl_configs"]
    }

    fn run(&self, ctx: &PipelineContext) -> Result<StageSummary, PipelineError> {
        let captures: Vec<ConfigCaptureRow> = read_jsonl(&derived(&ctx.store, CONFIG_CAPTURES))?;
        let distinct: BTreeSet<(PixelId, String)> =
            captures.into_iter().map(|c| (c.pixel_id, c.content_hash)).collect();
        let mut rows = Vec::with_capacity(distinct.len());
        for (pid, hash) in distinct {
            let body = ctx.store.get_blob(&hash)?;
            let row = match parse_config_script(&body, Some(&pid)) {
                Ok(p) => ParsedConfigRow {
                    features: Some(config_feature_vector(&p.config)),
                    config: Some(p.config),
                    diagnostics: p.diagnostics,
                    foreign_pixel_ids: p.foreign_pixel_ids,
                    error: None,
                    pixel_id: pid,
                    content_hash: hash,
                },
                Err(e) => ParsedConfigRow {
                    pixel_id: pid,
                    content_hash: hash,
                    config: None,
                    features: None,
                    diagnostics: Vec::new(),
                    foreign_pixel_ids: BTreeSet::new(),
                    error: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
        write_jsonl(&derived(&ctx.store, PARSED_CONFIGS), &rows)?;
        let failed = rows.iter().filter(|r| r.error.is_some()).count();
        let mut s = StageSummary::new(self.name());
        s.set("configs", rows.len()).set("parsed", rows.len() - failed).set("failed", failed);
        Ok(s)
    }
}

fn parsed_configs(store: &SnapshotStore) -> Result<Vec<ParsedConfigRow>, StoreError> {
    read_jsonl(&derived(store, PARSED_CONFIGS))
}

/// Sensitive digests and blacklisted plaintext keys across all parsed configs.
fn unwanted_keys(rows: &[ParsedConfigRow]) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut digests = BTreeSet::new();
    let mut plain = BTreeSet::new();
    for cfg in rows.iter().filter_map(|r| r.config.as_ref()) {
        for rules in cfg.unwanted_data.sensitive.values() {
            digests.extend(rules.cd.iter().chain(&rules.url).cloned());
        }
        for rules in cfg.unwanted_data.blacklisted.values() {
            plain.extend(rules.cd.iter().chain(&rules.url).cloned());
        }
    }
    (digests, plain)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CrackSummary {
    total: usize,
    cracked: usize,
    reversal_rate: f64,
    dictionary_size: usize,
}

pub struct CrackKeys;

impl Stage for CrackKeys {
    fn name(&self) -> &'static str {
        "crack_keys"
    }

    fn prerequisites(&self) -> &'static [&'static str] {
        &["parse_configs"]
    }

    fn run(&self, ctx: &PipelineContext) -> Result<StageSummary, PipelineError> {
        let rows = parsed_configs(&ctx.store)?;
        let (digests, observed) = unwanted_keys(&rows);
        let (report, dictionary_size) = if digests.is_empty() {
            (crack(&digests, &Default::default()), 0)
        } else {
            match build_dictionary(&ctx.config.wordlists, &observed) {
                Ok(dict) => (crack(&digests, &dict), dict.len()),
                Err(CrackError::EmptyDictionary) => {
                    log::warn!("no wordlists and no observed keys; every digest stays uncracked");
                    let results: Vec<CrackResult> = digests
                        .iter()
                        .map(|d| CrackResult { digest: d.clone(), plaintext: None, source: None, variant_of: None })
                        .collect();
                    let total = results.len();
                    (CrackReport { results, cracked: 0, total, reversal_rate: 0.0 }, 0)
                }
                Err(e) => return Err(e.into()),
            }
        };
        write_jsonl(&derived(&ctx.store, CRACKED_KEYS), &report.results)?;
        let summary = CrackSummary {
            total: report.total,
            cracked: report.cracked,
            reversal_rate: report.reversal_rate,
            dictionary_size,
        };
        write_json(&ctx.store.root().join("crack_summary.json"), &summary)?;
        let mut s = StageSummary::new(self.name());
        s.set("digests", report.total).set("cracked", report.cracked).set("dictionary_size", dictionary_size);
        Ok(s)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Per-cohort key-overlap curves: blacklisted plaintext keys and sensitive
/// digests each site's configurations carried in any year.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct KeyOverlap {
    cohort: Cohort,
    keys_for_full_coverage: Option<usize>,
    curve: KeyOverlapCurve,
}

fn key_overlap(observations: &[SiteYearObservation], configs: &BTreeMap<String, &PixelConfiguration>) -> Vec<KeyOverlap> {
    let mut per_site: BTreeMap<Cohort, BTreeMap<String, BTreeSet<String>>> = BTreeMap::new();
    for o in observations {
        for r in &o.config_refs {
            let Some(cfg) = configs.get(&r.content_hash) else { continue };
            let u = &cfg.unwanted_data;
            if u.is_empty() {
                continue;
            }
            let keys = per_site.entry(o.cohort).or_default().entry(o.domain.clone()).or_default();
            for rules in u.blacklisted.values().chain(u.sensitive.values()) {
                keys.extend(rules.cd.iter().chain(&rules.url).cloned());
            }
        }
    }
    per_site
        .into_iter()
        .map(|(cohort, sites)| {
            let curve = key_overlap_cdf(&sites);
            KeyOverlap { cohort, keys_for_full_coverage: curve.keys_for_coverage(1.0), curve }
        })
        .collect()
}

pub struct Analyze;

impl Stage for Analyze {
    fn name(&self) -> &'static str {
        "analyze"
    }

    fn prerequisites(&self) -> &'static [&'static str] {
        &["extract_pixels", "parse_configs"]
    }

    fn run(&self, ctx: &PipelineContext) -> Result<StageSummary, PipelineError> {
        let store = &ctx.store;
        let site_years: Vec<SiteYearPixels> = read_jsonl(&derived(store, SITE_YEAR_PIXELS))?;
        let captures: Vec<ConfigCaptureRow> = read_jsonl(&derived(store, CONFIG_CAPTURES))?;
        let parsed = parsed_configs(store)?;

        let attribution = attribute_configs(
            site_years,
            captures.into_iter().map(|c| ConfigCapture {
                pixel_id: c.pixel_id,
                timestamp: c.timestamp,
                content_hash: c.content_hash,
            }),
        );
        let mut features: BTreeMap<String, FeatureVector> = BTreeMap::new();
        let mut configs: BTreeMap<String, &PixelConfiguration> = BTreeMap::new();
        for row in &parsed {
            if let (Some(cfg), Some(fv)) = (&row.config, &row.features) {
                features.entry(row.content_hash.clone()).or_insert_with(|| fv.clone());
                configs.entry(row.content_hash.clone()).or_insert(cfg);
            }
        }
        let obs = &attribution.observations;
        let rows = adoption_stats(obs, &features, &FEATURE_NAMES);
        let stable_obs = stable_cohort(obs, ctx.config.min_stable_years)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let stable_rows = adoption_stats(&stable_obs, &features, &FEATURE_NAMES);
        let overlap = key_overlap(obs, &configs);

        write_jsonl(&derived(store, OBSERVATIONS), obs)?;
        write_jsonl(&derived(store, UNATTRIBUTED), &attribution.unattributed)?;
        write_jsonl(&derived(store, ADOPTION), &rows)?;
        write_jsonl(&derived(store, ADOPTION_STABLE), &stable_rows)?;
        write_text(&store.root().join("adoption.csv"), &to_csv(&rows))?;
        write_text(&store.root().join("adoption_stable.csv"), &to_csv(&stable_rows))?;
        write_json(&store.root().join("key_overlap.json"), &overlap)?;
        write_json(
            &store.root().join("plot_data.json"),
            &serde_json::json!({ "all": plot_series(&rows), "stable": plot_series(&stable_rows) }),
        )?;

        let with_config = obs.iter().filter(|o| !o.config_refs.is_empty()).count();
        let stable_sites: BTreeSet<_> = stable_obs.iter().map(|o| (&o.domain, o.cohort)).collect();
        let mut s = StageSummary::new(self.name());
        s.set("site_years", obs.len())
            .set("site_years_with_config", with_config)
            .set("unattributed_configs", attribution.unattributed.len())
            .set("stable_sites", stable_sites.len())
            .set("rows", rows.len());
        Ok(s)
    }
}

pub struct Report;

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

fn render_markdown(
    summaries: &[StageSummary],
    rows: &[CohortYearStat],
    crack: Option<&CrackSummary>,
) -> String {
    let mut md = String::from("# Meta Pixel configuration report\n\n## Pipeline\n\n");
    for s in summaries {
        let counts: Vec<String> = s.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(md, "- {}: {}", s.stage, counts.join(", "));
    }
    if let Some(c) = crack {
        let _ = writeln!(
            md,
            "\n## Sensitive key hashes\n\nReversed {} of {} ({}%).",
            c.cracked,
            c.total,
            pct(c.reversal_rate)
        );
    }
    let years: BTreeSet<i32> = rows.iter().map(|r| r.year).collect();
    md.push_str("\n## Adoption (% of sites with configuration data)\n\n| feature | cohort |");
    for y in &years {
        let _ = write!(md, " {y} |");
    }
    md.push_str("\n|---|---|");
    md.push_str(&"---:|".repeat(years.len()));
    md.push('\n');
    let mut grouped: BTreeMap<(usize, &str, Cohort), BTreeMap<i32, &CohortYearStat>> = BTreeMap::new();
    let order: BTreeMap<&str, usize> = FEATURE_NAMES.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    for r in rows {
        let rank = order.get(r.feature.as_str()).copied().unwrap_or(usize::MAX);
        grouped.entry((rank, &r.feature, r.cohort)).or_default().insert(r.year, r);
    }
    for ((_, feature, cohort), by_year) in &grouped {
        let _ = write!(md, "| {feature} | {} |", cohort.as_str());
        for y in &years {
            match by_year.get(y) {
                Some(r) if r.n > 0 => {
                    let mark = if r.p_value.is_some_and(|p| p < 0.05) { "*" } else { "" };
                    let _ = write!(md, " {}{mark} |", pct(r.p));
                }
                _ => md.push_str(" - |"),
            }
        }
        md.push('\n');
    }
    md.push_str("\n`*` marks a cohort difference with p < 0.05.\n");
    md
}

impl Stage for Report {
    fn name(&self) -> &'static str {
        "report"
    }

    fn prerequisites(&self) -> &'static [&'static str] {
        &["analyze", "crack_keys"]
    }

    fn run(&self, ctx: &PipelineContext) -> Result<StageSummary, PipelineError> {
        let summaries: Vec<StageSummary> = ["crawl_sites", "extract_pixels", "crawl_configs", "parse_configs", "crack_keys", "analyze"]
            .iter()
            .filter_map(|n| ctx.summary_of(n))
            .collect();
        let rows: Vec<CohortYearStat> = read_jsonl(&derived(&ctx.store, ADOPTION))?;
        let crack: Option<CrackSummary> = std::fs::read_to_string(ctx.store.root().join("crack_summary.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let report = serde_json::json!({
            "stages": summaries,
            "crack": crack,
            "adoption": rows,
        });
        write_json(&ctx.store.root().join("report.json"), &report)?;
        write_text(&ctx.store.root().join("report.md"), &render_markdown(&summaries, &rows, crack.as_ref()))?;
        let mut s = StageSummary::new(self.name());
        s.set("rows", rows.len());
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_urls_name_exact_ids() {
        assert_eq!(
            config_url_pixel("https://connect.facebook.net/signals/config/70000000000015?v=2.9.48&r=stable"),
            Some("70000000000015")
        );
        assert_eq!(config_url_pixel("https://connect.facebook.net/signals/config/123"), Some("123"));
        assert_eq!(config_url_pixel("https://example.org/"), None);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u32> = (0..100).collect();
        assert_eq!(parallel_map(&items, 7, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(parallel_map(&Vec::<u32>::new(), 4, |x| *x).is_empty());
    }
}
