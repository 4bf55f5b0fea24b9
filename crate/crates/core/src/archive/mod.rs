//! Web-archive access: CDX index queries, semiannual capture selection and
//! replay fetches with retry and per-host pacing.

mod client;
mod pacing;
mod record;
mod transport;

use chrono::{DateTime, NaiveDate, Utc};
use thiserror::Error;

pub use client::{
    archive_error_marker, ArchiveClient, ArchiveEndpoints, CdxListing, CdxTarget, FetchPolicy,
    FetchedSnapshot, MatchType,
};
pub use pacing::{Clock, HostRateLimiter, SystemClock, VirtualClock};
pub use record::{ArchiveTimestamp, SnapshotRecord, DEFAULT_CDX_ENDPOINT, DEFAULT_REPLAY_TEMPLATE};
pub use transport::{HttpResponse, Transport, TransportError, UreqTransport};

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive index unavailable after {attempts} attempts: {reason}")]
    ArchiveUnavailable { attempts: u32, reason: String },
    #[error("malformed CDX response: {0}")]
    MalformedCdxResponse(String),
    #[error("snapshot fetch of {url} failed after {attempts} attempts: {reason}")]
    SnapshotFetchFailed {
        url: String,
        attempts: u32,
        reason: String,
    },
    #[error("archive served an error page for {url} ({marker})")]
    ArchiveErrorPage { url: String, marker: String },
    #[error("HTTP {status} for {url}")]
    Http { url: String, status: u16 },
    #[error("invalid archive timestamp {0:?}")]
    InvalidTimestamp(String),
    #[error("invalid fetch policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

/// Default distance from an anchor within which a capture is eligible.
pub const DEFAULT_MAX_ANCHOR_DISTANCE: chrono::Duration = chrono::Duration::days(183);

fn anchor(year: i32, month: u32) -> Option<DateTime<Utc>> {
    NaiveDate::from_ymd_opt(year, month, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|d| d.and_utc())
}

/// Pick the captures closest to January 1 and July 1 of `year`.
///
/// Each anchor selects at most one record, and only within `max_distance`.
/// Ties go to the earlier capture. A record chosen by both anchors is
/// returned once.
pub fn select_semiannual(
    records: &[SnapshotRecord],
    year: i32,
    max_distance: chrono::Duration,
) -> Vec<SnapshotRecord> {
    let mut picked: Vec<&SnapshotRecord> = Vec::with_capacity(2);
    for month in [1, 7] {
        let Some(at) = anchor(year, month) else {
            continue;
        };
        let best = records
            .iter()
            .map(|r| ((r.timestamp.datetime() - at).abs(), r))
            .filter(|(d, _)| *d <= max_distance)
            .min_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.timestamp.cmp(&b.1.timestamp)));
        if let Some((_, r)) = best {
            if !picked.iter().any(|p| *p == r) {
                picked.push(r);
            }
        }
    }
    picked.into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ts: &str) -> SnapshotRecord {
        SnapshotRecord {
            original_url: "https://example.com/".into(),
            timestamp: ts.parse().unwrap(),
            status_code: 200,
            digest: String::new(),
            mime: "text/html".into(),
        }
    }

    /// Day-of-year for midnight dates in a non-leap year, from month lengths.
    fn day_of_year_nonleap(month: usize, day: i64) -> i64 {
        const LEN: [i64; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
        LEN[..month - 1].iter().sum::<i64>() + day - 1
    }

    #[test]
    fn both_anchors_selected() {
        let recs = [rec("20200103000000"), rec("20200628000000")];
        let got = select_semiannual(&recs, 2020, DEFAULT_MAX_ANCHOR_DISTANCE);
        assert_eq!(got, recs.to_vec());
    }

    #[test]
    fn single_march_capture_only_reaches_january_anchor() {
        // calendar arithmetic oracle: 59 days after Jan 1, 122 days before Jul 1
        let mar1 = day_of_year_nonleap(3, 1);
        let jul1 = day_of_year_nonleap(7, 1);
        assert_eq!((mar1, jul1 - mar1), (59, 122));

        let recs = [rec("20190301000000")];
        let got = select_semiannual(&recs, 2019, chrono::Duration::days(90));
        assert_eq!(got.len(), 1);
        assert_eq!(
            select_semiannual(&recs, 2019, chrono::Duration::days(mar1 - 1)),
            vec![]
        );
        assert_eq!(
            select_semiannual(&recs, 2019, chrono::Duration::days(jul1 - mar1)).len(),
            1,
            "both anchors pick the same record and it is returned once"
        );
    }

    #[test]
    fn nothing_in_reach() {
        let recs = [rec("20150101000000"), rec("20230101000000")];
        assert!(select_semiannual(&recs, 2019, DEFAULT_MAX_ANCHOR_DISTANCE).is_empty());
        assert!(select_semiannual(&[], 2019, DEFAULT_MAX_ANCHOR_DISTANCE).is_empty());
    }

    #[test]
    fn neighbouring_year_capture_can_serve_january() {
        let recs = [rec("20181230000000"), rec("20190420000000")];
        let got = select_semiannual(&recs, 2019, DEFAULT_MAX_ANCHOR_DISTANCE);
        assert_eq!(got[0].timestamp.as_str(), "20181230000000");
        assert_eq!(got[1].timestamp.as_str(), "20190420000000");
    }

    #[test]
    fn default_distance_covers_whole_year() {
        // every day of a year is within 183 days of one anchor
        for doy in 0..366 {
            let dt = anchor(2020, 1).unwrap() + chrono::Duration::days(doy);
            let r = rec(&dt.format("%Y%m%d%H%M%S").to_string());
            assert!(!select_semiannual(&[r], 2020, DEFAULT_MAX_ANCHOR_DISTANCE).is_empty());
        }
    }
}
