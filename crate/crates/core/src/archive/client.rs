use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use chrono::{Datelike, Utc};
use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pacing::{Clock, HostRateLimiter, SystemClock};
use super::record::{ArchiveTimestamp, SnapshotRecord, DEFAULT_CDX_ENDPOINT, DEFAULT_REPLAY_TEMPLATE};
use super::transport::{HttpResponse, Transport, TransportError, UreqTransport};
use super::ArchiveError;

const CDX_FIELDS: &str = "urlkey,timestamp,original,mimetype,statuscode,digest,length";

/// Retry and pacing knobs for talking to the archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchPolicy {
    pub max_cdx_retries: u32,
    pub max_snapshot_retries: u32,
    pub batch_limit: u32,
    /// Minimum spacing between request starts to one host, in milliseconds.
    pub min_request_interval_ms: u64,
    pub request_timeout_ms: u64,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self {
            max_cdx_retries: 5,
            max_snapshot_retries: 10,
            batch_limit: 100_000,
            min_request_interval_ms: 1_000,
            request_timeout_ms: 30_000,
            backoff_base_ms: 1_000,
            backoff_cap_ms: 60_000,
        }
    }
}

impl FetchPolicy {
    pub fn validate(&self) -> Result<(), ArchiveError> {
        let counts = [
            ("max_cdx_retries", self.max_cdx_retries),
            ("max_snapshot_retries", self.max_snapshot_retries),
            ("batch_limit", self.batch_limit),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(ArchiveError::InvalidPolicy(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn min_request_interval(&self) -> Duration {
        Duration::from_millis(self.min_request_interval_ms)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let exp = self
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.saturating_sub(1).min(20));
        let capped = exp.min(self.backoff_cap_ms);
        let jitter: f64 = rand::rng().random_range(0.5..=1.0);
        Duration::from_millis((capped as f64 * jitter) as u64)
    }
}

/// Endpoint templates; overridable so tests can target a local mock archive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchiveEndpoints {
    pub cdx_url: String,
    pub replay_template: String,
}

impl Default for ArchiveEndpoints {
    fn default() -> Self {
        Self {
            cdx_url: DEFAULT_CDX_ENDPOINT.into(),
            replay_template: DEFAULT_REPLAY_TEMPLATE.into(),
        }
    }
}

impl ArchiveEndpoints {
    /// Endpoints rooted at a base URL serving `/cdx/search/cdx` and `/web/...`.
    pub fn rooted_at(base: &str) -> Self {
        let base = base.trim_end_matches('/');
        Self {
            cdx_url: format!("{base}/cdx/search/cdx"),
            replay_template: format!("{base}/web/{{timestamp}}/{{url}}"),
        }
    }

    /// Apply `PIXELSCOPE_CDX_URL` / `PIXELSCOPE_REPLAY_TEMPLATE` overrides.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(v) = std::env::var("PIXELSCOPE_CDX_URL") {
            self.cdx_url = v;
        }
        if let Ok(v) = std::env::var("PIXELSCOPE_REPLAY_TEMPLATE") {
            self.replay_template = v;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchType {
    Exact,
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdxTarget {
    pub url: String,
    pub match_type: MatchType,
}

impl CdxTarget {
    pub fn exact(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            match_type: MatchType::Exact,
        }
    }

    pub fn prefix(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            match_type: MatchType::Prefix,
        }
    }
}

/// Merged result of a paginated CDX query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CdxListing {
    pub records: Vec<SnapshotRecord>,
    /// Rows that could not be turned into a record and were skipped.
    pub malformed_rows: usize,
    pub pages: usize,
}

#[derive(Debug, Clone)]
pub struct FetchedSnapshot {
    pub body: Vec<u8>,
    pub final_url: String,
    pub attempts: u32,
}

enum AttemptError {
    Permanent(u16),
    Exhausted { attempts: u32, last: String },
}

pub struct ArchiveClient {
    endpoints: ArchiveEndpoints,
    policy: FetchPolicy,
    transport: Arc<dyn Transport>,
    limiter: Arc<HostRateLimiter>,
}

impl ArchiveClient {
    pub fn new(endpoints: ArchiveEndpoints, policy: FetchPolicy) -> Result<Self, ArchiveError> {
        policy.validate()?;
        let transport = Arc::new(UreqTransport::new(Duration::from_millis(
            policy.request_timeout_ms,
        )));
        let limiter = Arc::new(HostRateLimiter::new(
            policy.min_request_interval(),
            Arc::new(SystemClock::default()),
        ));
        Ok(Self {
            endpoints,
            policy,
            transport,
            limiter,
        })
    }

    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.limiter = Arc::new(HostRateLimiter::new(self.policy.min_request_interval(), clock));
        self
    }

    pub fn limiter(&self) -> &Arc<HostRateLimiter> {
        &self.limiter
    }

    pub fn policy(&self) -> &FetchPolicy {
        &self.policy
    }

    pub fn endpoints(&self) -> &ArchiveEndpoints {
        &self.endpoints
    }

    fn cdx_page_url(&self, target: &CdxTarget, from_year: i32, resume: Option<&str>) -> String {
        let mut params: Vec<(&str, String)> = vec![
            ("url", target.url.clone()),
            ("output", "json".into()),
            ("fl", CDX_FIELDS.into()),
            ("from", from_year.to_string()),
            ("limit", self.policy.batch_limit.to_string()),
            ("showResumeKey", "true".into()),
        ];
        if target.match_type == MatchType::Prefix {
            params.push(("matchType", "prefix".into()));
        }
        if let Some(key) = resume {
            params.push(("resumeKey", key.to_string()));
        }
        match url::Url::parse_with_params(&self.endpoints.cdx_url, &params) {
            Ok(u) => u.to_string(),
            Err(_) => {
                // leave malformed endpoints to surface as connection errors
                let qs = url::form_urlencoded::Serializer::new(String::new())
                    .extend_pairs(params.iter().map(|(k, v)| (*k, v.as_str())))
                    .finish();
                format!("{}?{}", self.endpoints.cdx_url, qs)
            }
        }
    }

    fn host_of(url: &str) -> String {
        url::Url::parse(url)
            .ok()
            .and_then(|u| {
                u.host_str()
                    .map(|h| format!("{h}:{}", u.port_or_known_default().unwrap_or(0)))
            })
            .unwrap_or_default()
    }

    /// GET with pacing and retry. 429, 5xx and network failures are retried;
    /// any other non-2xx status ends the attempt sequence immediately.
    fn get_with_retry(
        &self,
        url: &str,
        max_attempts: u32,
    ) -> Result<(HttpResponse, u32), AttemptError> {
        let host = Self::host_of(url);
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            self.limiter.acquire(&host);
            match self.transport.get(url) {
                Ok(resp) if (200..300).contains(&resp.status) => return Ok((resp, attempt)),
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    last = format!("HTTP {}", resp.status);
                }
                Ok(resp) => return Err(AttemptError::Permanent(resp.status)),
                Err(e @ (TransportError::Timeout(_) | TransportError::Connection(_))) => {
                    last = e.to_string();
                }
            }
            debug!("attempt {attempt}/{max_attempts} for {url} failed: {last}");
            if attempt < max_attempts {
                self.limiter.clock().sleep(self.policy.backoff(attempt));
            }
        }
        Err(AttemptError::Exhausted {
            attempts: max_attempts,
            last,
        })
    }

    /// List every capture of `target` from `from_year` onward, following
    /// resume keys across pages of at most `batch_limit` rows.
    pub fn query_cdx(&self, target: &CdxTarget, from_year: i32) -> Result<CdxListing, ArchiveError> {
        if from_year > Utc::now().year() {
            return Err(ArchiveError::InvalidQuery(format!(
                "from_year {from_year} is in the future"
            )));
        }
        if target.url.trim().is_empty() {
            return Err(ArchiveError::InvalidQuery("empty target".into()));
        }
        let mut merged: BTreeMap<(ArchiveTimestamp, String), SnapshotRecord> = BTreeMap::new();
        let mut listing = CdxListing::default();
        let mut total_rows = 0usize;
        let mut resume: Option<String> = None;
        loop {
            let url = self.cdx_page_url(target, from_year, resume.as_deref());
            let (resp, _) = self
                .get_with_retry(&url, self.policy.max_cdx_retries)
                .map_err(|e| match e {
                    AttemptError::Permanent(status) => ArchiveError::Http { url: url.clone(), status },
                    AttemptError::Exhausted { attempts, last } => ArchiveError::ArchiveUnavailable {
                        attempts,
                        reason: last,
                    },
                })?;
            let page = parse_cdx_page(&resp.body)?;
            listing.pages += 1;
            total_rows += page.rows;
            listing.malformed_rows += page.malformed;
            for rec in page.records {
                merged.insert((rec.timestamp.clone(), rec.original_url.clone()), rec);
            }
            match page.resume_key {
                Some(k) if Some(&k) != resume.as_ref() => resume = Some(k),
                Some(_) => {
                    warn!("CDX resume key did not advance; stopping pagination");
                    break;
                }
                None => break,
            }
        }
        if total_rows > 0 && listing.malformed_rows == total_rows {
            return Err(ArchiveError::MalformedCdxResponse(format!(
                "all {total_rows} rows failed to parse"
            )));
        }
        listing.records = merged.into_values().collect();
        Ok(listing)
    }

    /// Fetch the replayed body of one capture.
    pub fn fetch_snapshot(&self, record: &SnapshotRecord) -> Result<FetchedSnapshot, ArchiveError> {
        let url = record.archive_url_with(&self.endpoints.replay_template);
        self.fetch_url(&url)
    }

    pub fn fetch_url(&self, url: &str) -> Result<FetchedSnapshot, ArchiveError> {
        let (resp, attempts) = self
            .get_with_retry(url, self.policy.max_snapshot_retries)
            .map_err(|e| match e {
                AttemptError::Permanent(status) => ArchiveError::Http {
                    url: url.to_string(),
                    status,
                },
                AttemptError::Exhausted { attempts, last } => ArchiveError::SnapshotFetchFailed {
                    url: url.to_string(),
                    attempts,
                    reason: last,
                },
            })?;
        if let Some(marker) = archive_error_marker(&resp.body) {
            return Err(ArchiveError::ArchiveErrorPage {
                url: url.to_string(),
                marker: marker.to_string(),
            });
        }
        Ok(FetchedSnapshot {
            body: resp.body,
            final_url: resp.final_url,
            attempts,
        })
    }
}

struct CdxPage {
    records: Vec<SnapshotRecord>,
    rows: usize,
    malformed: usize,
    resume_key: Option<String>,
}

fn parse_cdx_page(body: &[u8]) -> Result<CdxPage, ArchiveError> {
    let mut page = CdxPage {
        records: Vec::new(),
        rows: 0,
        malformed: 0,
        resume_key: None,
    };
    if body.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(page);
    }
    let rows: Vec<Vec<serde_json::Value>> = serde_json::from_slice(body)
        .map_err(|e| ArchiveError::MalformedCdxResponse(format!("not a JSON row array: {e}")))?;
    let Some((header, rest)) = rows.split_first() else {
        return Ok(page);
    };
    let column = |name: &str| header.iter().position(|h| h.as_str() == Some(name));
    let (Some(ts_col), Some(url_col)) = (column("timestamp"), column("original")) else {
        return Err(ArchiveError::MalformedCdxResponse(
            "header row lacks timestamp/original".into(),
        ));
    };
    let status_col = column("statuscode");
    let digest_col = column("digest");
    let mime_col = column("mimetype");

    let mut iter = rest.iter();
    for row in iter.by_ref() {
        if row.is_empty() {
            // an empty row separates data from the resume key
            break;
        }
        page.rows += 1;
        let cell = |i: Option<usize>| i.and_then(|i| row.get(i)).and_then(|v| v.as_str());
        let parsed = (|| {
            let timestamp: ArchiveTimestamp = cell(Some(ts_col))?.parse().ok()?;
            let original_url = cell(Some(url_col))?.to_string();
            if original_url.is_empty() {
                return None;
            }
            let status_code = match cell(status_col) {
                Some(s) => s.parse().ok()?,
                None => 200,
            };
            Some(SnapshotRecord {
                original_url,
                timestamp,
                status_code,
                digest: cell(digest_col).unwrap_or("").to_string(),
                mime: cell(mime_col).unwrap_or("").to_string(),
            })
        })();
        match parsed {
            Some(r) => page.records.push(r),
            None => page.malformed += 1,
        }
    }
    page.resume_key = iter
        .next()
        .and_then(|r| r.first())
        .and_then(|v| v.as_str())
        .map(str::to_string);
    Ok(page)
}

const ERROR_MARKERS: &[&str] = &[
    "Access Denied",
    "504 Gateway Timeout",
    "Wayback Machine has not archived that URL",
    "This URL has been excluded from the Wayback Machine",
];

/// Recognize archive status/error pages served in place of a capture.
pub fn archive_error_marker(body: &[u8]) -> Option<&'static str> {
    let text = String::from_utf8_lossy(body);
    const TOOLBAR_END: &str = "<!-- END WAYBACK TOOLBAR INSERT -->";
    let has_toolbar = text.contains("<!-- BEGIN WAYBACK TOOLBAR INSERT -->");
    if has_toolbar {
        let content = text.split(TOOLBAR_END).nth(1).unwrap_or("");
        if visible_text_is_empty(content) {
            return Some("empty content frame");
        }
    }
    // status markers only count on small pages, not inside real content
    let is_status_page = has_toolbar || text.len() < 16 * 1024;
    if is_status_page {
        for m in ERROR_MARKERS {
            if text.contains(m) {
                return Some(m);
            }
        }
    }
    None
}

fn visible_text_is_empty(html: &str) -> bool {
    let stripped = strip_blocks(&strip_blocks(html, "script"), "style");
    let mut in_tag = false;
    for c in stripped.chars() {
        match c {
            '<' => in_tag = true,
            '>' => in_tag = false,
            c if !in_tag && !c.is_whitespace() => return false,
            _ => {}
        }
    }
    true
}

fn strip_blocks(html: &str, tag: &str) -> String {
    let lower = html.to_ascii_lowercase();
    let (open, close) = (format!("<{tag}"), format!("</{tag}>"));
    let mut out = String::with_capacity(html.len());
    let mut i = 0;
    while let Some(start) = lower[i..].find(&open) {
        out.push_str(&html[i..i + start]);
        match lower[i + start..].find(&close) {
            Some(end) => i = i + start + end + close.len(),
            None => return out,
        }
    }
    out.push_str(&html[i..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdx_page_with_resume_key() {
        let body = br#"[["urlkey","timestamp","original","mimetype","statuscode","digest","length"],
            ["com,example)/","20190101000000","https://example.com/","text/html","200","AAA","10"],
            ["com,example)/","bogus","https://example.com/","text/html","200","BBB","10"],
            [],
            ["com,example)/ 20190102000000"]]"#;
        let page = parse_cdx_page(body).unwrap();
        assert_eq!(page.rows, 2);
        assert_eq!(page.malformed, 1);
        assert_eq!(page.records[0].digest, "AAA");
        assert_eq!(page.resume_key.as_deref(), Some("com,example)/ 20190102000000"));
    }

    #[test]
    fn cdx_columns_are_positional_by_header() {
        let body = br#"[["original","statuscode","timestamp"],["https://a.org/","301","20200101000000"]]"#;
        let page = parse_cdx_page(body).unwrap();
        assert_eq!(page.records[0].status_code, 301);
        assert_eq!(page.records[0].timestamp.as_str(), "20200101000000");
    }

    #[test]
    fn empty_cdx_bodies() {
        assert_eq!(parse_cdx_page(b"").unwrap().rows, 0);
        assert_eq!(parse_cdx_page(b"[]").unwrap().rows, 0);
        assert!(parse_cdx_page(b"<html>").is_err());
    }

    #[test]
    fn error_page_detection() {
        assert_eq!(
            archive_error_marker(b"<html><body><h1>504 Gateway Timeout</h1></body></html>"),
            Some("504 Gateway Timeout")
        );
        let wrapped = b"<html><!-- BEGIN WAYBACK TOOLBAR INSERT --><div>toolbar</div>\
            <!-- END WAYBACK TOOLBAR INSERT --><body> <script>var x;</script> </body></html>";
        assert_eq!(archive_error_marker(wrapped), Some("empty content frame"));
        let real = b"<html><!-- BEGIN WAYBACK TOOLBAR INSERT --><div>tb</div>\
            <!-- END WAYBACK TOOLBAR INSERT --><body><p>Welcome to our clinic</p></body></html>";
        assert_eq!(archive_error_marker(real), None);
        assert_eq!(archive_error_marker(b"<html><p>hello</p></html>"), None);
    }

    #[test]
    fn backoff_is_capped() {
        let p = FetchPolicy {
            backoff_base_ms: 1_000,
            backoff_cap_ms: 60_000,
            ..FetchPolicy::default()
        };
        for attempt in 1..30 {
            assert!(p.backoff(attempt) <= Duration::from_secs(60));
        }
        assert!(p.backoff(1) >= Duration::from_millis(500));
    }

    #[test]
    fn policy_validation() {
        let bad = FetchPolicy {
            batch_limit: 0,
            ..FetchPolicy::default()
        };
        assert!(bad.validate().is_err());
        assert!(FetchPolicy::default().validate().is_ok());
    }
}
