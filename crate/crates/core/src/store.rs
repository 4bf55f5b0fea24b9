//! Content-addressed blob storage with append-only JSONL indexes, and the
//! rule that ties configuration captures to site-years.
//!
//! Layout under the store root:
//!
//! ```text
//! blobs/<first two hex chars>/<sha256>   raw bodies
//! index/html_snapshot.jsonl              one IndexRow per (record, kind)
//! index/config_script.jsonl
//! <derived>.jsonl                        stage outputs (observations, parses, ...)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{ArchiveTimestamp, SnapshotRecord};
use crate::hashing::sha256_hex;
use crate::pixel::PixelId;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage I/O on {path}: {source}")]
    StorageIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("refusing to store an empty body")]
    EmptyBody,
    #[error("blob {0} not found")]
    NotFound(String),
    #[error("blob {hash} is corrupt: content hashes to {actual}")]
    HashMismatch { hash: String, actual: String },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::StorageIo { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobKind {
    HtmlSnapshot,
    ConfigScript,
}

impl BlobKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlobKind::HtmlSnapshot => "html_snapshot",
            BlobKind::ConfigScript => "config_script",
        }
    }
}

/// One line of `index/<kind>.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub content_hash: String,
    pub kind: BlobKind,
    pub record: SnapshotRecord,
    /// ISO-8601 form of `record.timestamp`.
    pub timestamp_iso: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredBlob {
    pub content_hash: String,
    pub kind: BlobKind,
    pub source_record: SnapshotRecord,
    pub body: Vec<u8>,
}

pub struct SnapshotStore {
    root: PathBuf,
    // Serializes index appends and remembers which rows exist.
    seen: Mutex<HashSet<(BlobKind, String, String, String)>>,
}

fn row_key(kind: BlobKind, record: &SnapshotRecord, hash: &str) -> (BlobKind, String, String, String) {
    (
        kind,
        record.original_url.clone(),
        record.timestamp.as_str().to_string(),
        hash.to_string(),
    )
}

impl SnapshotStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["blobs", "index"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let store = Self { root, seen: Mutex::new(HashSet::new()) };
        let mut seen = HashSet::new();
        for kind in [BlobKind::HtmlSnapshot, BlobKind::ConfigScript] {
            for row in store.index_rows(kind)? {
                seen.insert(row_key(kind, &row.record, &row.content_hash));
            }
        }
        *store.seen.lock().expect("store lock") = seen;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn blob_path(&self, hash: &str) -> PathBuf {
        self.root.join("blobs").join(&hash[..2.min(hash.len())]).join(hash)
    }

    fn index_path(&self, kind: BlobKind) -> PathBuf {
        self.root.join("index").join(format!("{}.jsonl", kind.as_str()))
    }

    /// Store `body` under its SHA-256 and index it against `record`.
    pub fn put_blob(
        &self,
        kind: BlobKind,
        record: &SnapshotRecord,
        body: &[u8],
    ) -> Result<String, StoreError> {
        if body.is_empty() {
            return Err(StoreError::EmptyBody);
        }
        let hash = sha256_hex(body);
        let path = self.blob_path(&hash);
        if !path.exists() {
            let dir = path.parent().expect("blob path has a parent");
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let tmp = dir.join(format!(".{hash}.{}.tmp", std::process::id()));
            fs::write(&tmp, body).map_err(io_err(&tmp))?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        let key = row_key(kind, record, &hash);
        let mut seen = self.seen.lock().expect("store lock");
        if !seen.contains(&key) {
            let row = IndexRow {
                content_hash: hash.clone(),
                kind,
                record: record.clone(),
                timestamp_iso: record.timestamp.iso8601(),
            };
            append_jsonl(&self.index_path(kind), &row)?;
            seen.insert(key);
        }
        Ok(hash)
    }

    pub fn has_blob(&self, hash: &str) -> bool {
        crate::hashing::is_sha256_hex(hash) && self.blob_path(hash).exists()
    }

    /// Read a blob back, verifying its content hash.
    pub fn get_blob(&self, hash: &str) -> Result<Vec<u8>, StoreError> {
        if !crate::hashing::is_sha256_hex(hash) {
            return Err(StoreError::NotFound(hash.to_string()));
        }
        let path = self.blob_path(hash);
        let body = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(hash.to_string()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let actual = sha256_hex(&body);
        if actual != hash {
            return Err(StoreError::HashMismatch { hash: hash.to_string(), actual });
        }
        Ok(body)
    }

    pub fn get(&self, row: &IndexRow) -> Result<StoredBlob, StoreError> {
        Ok(StoredBlob {
            body: self.get_blob(&row.content_hash)?,
            content_hash: row.content_hash.clone(),
            kind: row.kind,
            source_record: row.record.clone(),
        })
    }

    pub fn index_rows(&self, kind: BlobKind) -> Result<Vec<IndexRow>, StoreError> {
        read_jsonl(&self.index_path(kind))
    }

    /// Path of a derived JSONL output kept alongside the blobs.
    pub fn derived_path(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.jsonl"))
    }
}

/// Append one JSON line, creating the file if needed.
pub fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut line = serde_json::to_vec(value).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    f.write_all(&line).map_err(io_err(path))
}

/// Replace `path` with the given records, atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<(), StoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = io::BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
        for v in values {
            serde_json::to_writer(&mut f, v).map_err(|e| StoreError::Corrupt {
                path: tmp.clone(),
                line: 0,
                message: e.to_string(),
            })?;
            f.write_all(b"\n").map_err(io_err(&tmp))?;
        }
        f.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Read every record of a JSONL file. A missing file reads as empty; a
/// torn final line (no trailing newline) from an interrupted append is skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(f);
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let text = buf.trim();
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str(text) {
            Ok(v) => out.push(v),
            Err(_) if !complete => break,
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    Control,
    Health,
}

impl Cohort {
    pub const ALL: [Cohort; 2] = [Cohort::Control, Cohort::Health];

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Control => "control",
            Cohort::Health => "health",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigRef {
    pub pixel_id: PixelId,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteYearObservation {
    pub domain: String,
    pub cohort: Cohort,
    pub year: i32,
    pub pixel_ids: BTreeSet<PixelId>,
    pub config_refs: BTreeSet<ConfigRef>,
}

/// Pixel IDs seen in one site's HTML for one year.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteYearPixels {
    pub domain: String,
    pub cohort: Cohort,
    pub year: i32,
    pub pixel_ids: BTreeSet<PixelId>,
}

/// One archived configuration script.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigCapture {
    pub pixel_id: PixelId,
    pub timestamp: ArchiveTimestamp,
    pub content_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub observations: Vec<SiteYearObservation>,
    pub unattributed: Vec<ConfigCapture>,
}

/// Attach each config capture to the site-years whose HTML showed its Pixel
/// ID in the capture's calendar year. Repeated site-year inputs (one per
/// semiannual snapshot) are unioned. Output is sorted by (domain, cohort, year).
pub fn attribute_configs(
    observations: impl IntoIterator<Item = SiteYearPixels>,
    configs: impl IntoIterator<Item = ConfigCapture>,
) -> Attribution {
    let mut sites: BTreeMap<(String, Cohort, i32), SiteYearObservation> = BTreeMap::new();
    let mut by_pixel_year: BTreeMap<(PixelId, i32), Vec<(String, Cohort, i32)>> = BTreeMap::new();
    for o in observations {
        let key = (o.domain.clone(), o.cohort, o.year);
        let entry = sites.entry(key).or_insert_with(|| SiteYearObservation {
            domain: o.domain,
            cohort: o.cohort,
            year: o.year,
            pixel_ids: BTreeSet::new(),
            config_refs: BTreeSet::new(),
        });
        entry.pixel_ids.extend(o.pixel_ids);
    }
    for (key, o) in &sites {
        for p in &o.pixel_ids {
            by_pixel_year.entry((p.clone(), o.year)).or_default().push(key.clone());
        }
    }
    let mut unattributed = Vec::new();
    for c in configs {
        let year = c.timestamp.year();
        match by_pixel_year.get(&(c.pixel_id.clone(), year)) {
            Some(keys) => {
                for k in keys {
                    if let Some(o) = sites.get_mut(k) {
                        o.config_refs.insert(ConfigRef {
                            pixel_id: c.pixel_id.clone(),
                            content_hash: c.content_hash.clone(),
                        });
                    }
                }
            }
            None => unattributed.push(c),
        }
    }
    unattributed.sort();
    unattributed.dedup();
    Attribution { observations: sites.into_values().collect(), unattributed }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pid(s: &str) -> PixelId {
        s.parse().unwrap()
    }

    fn record(ts: &str) -> SnapshotRecord {
        SnapshotRecord {
            original_url: "https://example.org/".into(),
            timestamp: ts.parse().unwrap(),
            status_code: 200,
            digest: "ABC".into(),
            mime: "text/html".into(),
        }
    }

    fn site(domain: &str, year: i32, ids: &[&str]) -> SiteYearPixels {
        SiteYearPixels {
            domain: domain.into(),
            cohort: Cohort::Health,
            year,
            pixel_ids: ids.iter().map(|s| pid(s)).collect(),
        }
    }

    fn capture(id: &str, ts: &str, hash: &str) -> ConfigCapture {
        ConfigCapture { pixel_id: pid(id), timestamp: ts.parse().unwrap(), content_hash: hash.into() }
    }

    #[test]
    fn idempotent_put() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        let r = record("20190101000000");
        let h1 = store.put_blob(BlobKind::HtmlSnapshot, &r, b"<html>a</html>").unwrap();
        let h2 = store.put_blob(BlobKind::HtmlSnapshot, &r, b"<html>a</html>").unwrap();
        assert_eq!(h1, h2);
        assert_eq!(store.index_rows(BlobKind::HtmlSnapshot).unwrap().len(), 1);
        let h3 = store.put_blob(BlobKind::HtmlSnapshot, &r, b"<html>b</html>").unwrap();
        assert_ne!(h1, h3);
        let blobs: usize = walk_count(&dir.path().join("blobs"));
        assert_eq!(blobs, 2);

        // Reopening keeps dedup state.
        drop(store);
        let store = SnapshotStore::open(dir.path()).unwrap();
        store.put_blob(BlobKind::HtmlSnapshot, &r, b"<html>a</html>").unwrap();
        let rows = store.index_rows(BlobKind::HtmlSnapshot).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].timestamp_iso, "2019-01-01T00:00:00Z");
        assert_eq!(store.get(&rows[0]).unwrap().body, b"<html>a</html>");
    }

    fn walk_count(dir: &Path) -> usize {
        fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                if p.is_dir() { walk_count(&p) } else { 1 }
            })
            .sum()
    }

    #[test]
    fn empty_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        assert!(matches!(
            store.put_blob(BlobKind::ConfigScript, &record("20200101000000"), b""),
            Err(StoreError::EmptyBody)
        ));
        let absent = sha256_hex("nothing");
        assert!(matches!(store.get_blob(&absent), Err(StoreError::NotFound(_))));
        assert!(!store.has_blob(&absent));
    }

    #[test]
    fn corrupt_blob_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        let h = store.put_blob(BlobKind::ConfigScript, &record("20200101000000"), b"x").unwrap();
        fs::write(store.blob_path(&h), b"y").unwrap();
        assert!(matches!(store.get_blob(&h), Err(StoreError::HashMismatch { .. })));
    }

    #[test]
    fn torn_last_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(&path, "{\"a\":1}\n{\"a\":2}\n{\"a\":").unwrap();
        let rows: Vec<serde_json::Value> = read_jsonl(&path).unwrap();
        assert_eq!(rows.len(), 2);
        fs::write(&path, "{\"a\":1}\nnot json\n").unwrap();
        assert!(matches!(
            read_jsonl::<serde_json::Value>(&path),
            Err(StoreError::Corrupt { line: 2, .. })
        ));
    }

    #[test]
    fn attached_when_html_shows_pixel_that_year() {
        let a = attribute_configs(
            [site("clinic.org", 2019, &["11111"])],
            [capture("11111", "20190315000000", "h1")],
        );
        assert_eq!(a.observations[0].config_refs.len(), 1);
        assert!(a.unattributed.is_empty());
    }

    #[test]
    fn not_attached_to_a_year_without_the_pixel() {
        let a = attribute_configs(
            [site("clinic.org", 2019, &["22222"]), site("clinic.org", 2020, &["11111"])],
            [capture("11111", "20190315000000", "h1")],
        );
        assert!(a.observations.iter().all(|o| o.config_refs.is_empty()));
        assert_eq!(a.unattributed.len(), 1);
    }

    #[test]
    fn empty_config_stream() {
        let input = vec![site("a.org", 2018, &["11111"]), site("b.org", 2018, &[])];
        let a = attribute_configs(input.clone(), []);
        assert_eq!(a.observations.len(), 2);
        assert!(a.observations.iter().all(|o| o.config_refs.is_empty()));
        assert_eq!(a.observations[0].pixel_ids, input[0].pixel_ids);
    }

    #[test]
    fn semiannual_snapshots_union() {
        let a = attribute_configs(
            [site("a.org", 2021, &["11111"]), site("a.org", 2021, &["22222"])],
            [capture("22222", "20211201000000", "h2"), capture("11111", "20210101000000", "h1")],
        );
        assert_eq!(a.observations.len(), 1);
        assert_eq!(a.observations[0].pixel_ids.len(), 2);
        assert_eq!(a.observations[0].config_refs.len(), 2);
    }
}
