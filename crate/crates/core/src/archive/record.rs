use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::ArchiveError;

/// Default replay template; `{timestamp}` and `{url}` are substituted.
pub const DEFAULT_REPLAY_TEMPLATE: &str = "https://web.archive.org/web/{timestamp}/{url}";
pub const DEFAULT_CDX_ENDPOINT: &str = "https://web.archive.org/cdx/search/cdx";

/// 14-digit archive capture time (`YYYYMMDDhhmmss`, UTC).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArchiveTimestamp(String);

impl ArchiveTimestamp {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn datetime(&self) -> DateTime<Utc> {
        // validated on construction
        NaiveDateTime::parse_from_str(&self.0, "%Y%m%d%H%M%S")
            .expect("validated timestamp")
            .and_utc()
    }

    pub fn year(&self) -> i32 {
        self.0[..4].parse().expect("validated timestamp")
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Result<Self, ArchiveError> {
        dt.format("%Y%m%d%H%M%S").to_string().parse()
    }

    /// ISO-8601 rendering, e.g. `2019-07-01T00:00:00Z`.
    pub fn iso8601(&self) -> String {
        self.datetime().format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }
}

impl FromStr for ArchiveTimestamp {
    type Err = ArchiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ArchiveError::InvalidTimestamp(s.to_string());
        if s.len() != 14 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let dt = NaiveDateTime::parse_from_str(s, "%Y%m%d%H%M%S")
            .map_err(|_| bad())?
            .and_utc();
        let floor = NaiveDate::from_ymd_opt(1996, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .expect("constant date")
            .and_utc();
        if dt < floor || dt > Utc::now() {
            return Err(bad());
        }
        Ok(Self(s.to_string()))
    }
}

impl TryFrom<String> for ArchiveTimestamp {
    type Error = ArchiveError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ArchiveTimestamp> for String {
    fn from(ts: ArchiveTimestamp) -> Self {
        ts.0
    }
}

impl fmt::Display for ArchiveTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One archived capture of a URL, as listed by the CDX index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub original_url: String,
    pub timestamp: ArchiveTimestamp,
    pub status_code: u16,
    pub digest: String,
    pub mime: String,
}

impl SnapshotRecord {
    /// Replay URL for this capture under the public archive template.
    pub fn archive_url(&self) -> String {
        self.archive_url_with(DEFAULT_REPLAY_TEMPLATE)
    }

    pub fn archive_url_with(&self, template: &str) -> String {
        template
            .replace("{timestamp}", self.timestamp.as_str())
            .replace("{url}", &self.original_url)
    }

    pub fn year(&self) -> i32 {
        self.timestamp.year()
    }
}
