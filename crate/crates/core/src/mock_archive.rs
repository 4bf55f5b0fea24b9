//! In-process stand-in for the web archive: a CDX endpoint with resume-key
//! pagination plus a replay endpoint, served over plain HTTP on localhost.
//!
//! Responses can be scripted per path substring to exercise retry logic
//! (status sequences, hangs past the client timeout).

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::archive::ArchiveEndpoints;

#[derive(Debug, Clone)]
pub struct MockCapture {
    pub original_url: String,
    pub timestamp: String,
    pub status: u16,
    pub mime: String,
    pub body: Vec<u8>,
}

impl MockCapture {
    pub fn html(url: &str, timestamp: &str, body: impl Into<Vec<u8>>) -> Self {
        Self {
            original_url: url.into(),
            timestamp: timestamp.into(),
            status: 200,
            mime: "text/html".into(),
            body: body.into(),
        }
    }

    pub fn script(url: &str, timestamp: &str, body: impl Into<Vec<u8>>) -> Self {
        Self {
            mime: "application/x-javascript".into(),
            ..Self::html(url, timestamp, body)
        }
    }

    fn digest(&self) -> String {
        crate::hashing::sha256_hex(&self.body)[..32].to_uppercase()
    }
}

/// A canned reply that overrides normal serving for matching paths.
#[derive(Debug, Clone)]
pub enum Scripted {
    Status(u16, Vec<u8>),
    /// Sleep before closing the connection without a response.
    Hang(Duration),
}

#[derive(Debug, Clone)]
pub struct LoggedRequest {
    pub target: String,
    pub at: Instant,
}

#[derive(Default)]
struct State {
    captures: Vec<MockCapture>,
    queued: Vec<(String, VecDeque<Scripted>)>,
    always: Vec<(String, Scripted)>,
}

#[derive(Default, Clone)]
pub struct MockArchive {
    state: Arc<RwLock<State>>,
    log: Arc<Mutex<Vec<LoggedRequest>>>,
}

impl MockArchive {
    pub fn new(captures: Vec<MockCapture>) -> Self {
        let archive = Self::default();
        archive.state.write().unwrap().captures = captures;
        archive
    }

    pub fn add_capture(&self, capture: MockCapture) {
        self.state.write().unwrap().captures.push(capture);
    }

    /// Serve `responses` in order to requests whose target contains `pattern`;
    /// once exhausted, normal serving resumes.
    pub fn script(&self, pattern: &str, responses: Vec<Scripted>) {
        self.state
            .write()
            .unwrap()
            .queued
            .push((pattern.to_string(), responses.into()));
    }

    /// Answer every request containing `pattern` with `response`.
    pub fn always(&self, pattern: &str, response: Scripted) {
        self.state
            .write()
            .unwrap()
            .always
            .push((pattern.to_string(), response));
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn requests_matching(&self, pattern: &str) -> usize {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.target.contains(pattern))
            .count()
    }

    pub fn serve(&self) -> std::io::Result<MockServer> {
        self.serve_on("127.0.0.1:0")
    }

    pub fn serve_on(&self, addr: &str) -> std::io::Result<MockServer> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let archive = self.clone();
        let stop_flag = stop.clone();
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let archive = archive.clone();
                std::thread::spawn(move || {
                    let _ = archive.handle(stream);
                });
            }
        });
        Ok(MockServer {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    fn handle(&self, mut stream: TcpStream) -> std::io::Result<()> {
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut request_line = String::new();
        reader.read_line(&mut request_line)?;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
                break;
            }
        }
        let target = request_line
            .split_whitespace()
            .nth(1)
            .unwrap_or("/")
            .to_string();
        self.log.lock().unwrap().push(LoggedRequest {
            target: target.clone(),
            at: Instant::now(),
        });

        match self.scripted_for(&target) {
            Some(Scripted::Hang(d)) => {
                std::thread::sleep(d);
                return Ok(());
            }
            Some(Scripted::Status(status, body)) => {
                return write_response(&mut stream, status, "text/html", &body);
            }
            None => {}
        }

        let (status, mime, body) = if let Some(query) = target.strip_prefix("/cdx/search/cdx") {
            let query = query.strip_prefix('?').unwrap_or("");
            (200, "application/json".to_string(), self.cdx(query))
        } else if let Some(rest) = target.strip_prefix("/web/") {
            self.replay(rest)
        } else {
            (404, "text/plain".into(), b"not found".to_vec())
        };
        write_response(&mut stream, status, &mime, &body)
    }

    fn scripted_for(&self, target: &str) -> Option<Scripted> {
        let mut state = self.state.write().unwrap();
        for (pattern, queue) in state.queued.iter_mut() {
            if target.contains(pattern.as_str()) {
                if let Some(r) = queue.pop_front() {
                    return Some(r);
                }
            }
        }
        state
            .always
            .iter()
            .find(|(p, _)| target.contains(p.as_str()))
            .map(|(_, r)| r.clone())
    }

    fn cdx(&self, query: &str) -> Vec<u8> {
        let params: HashMap<String, String> = url::form_urlencoded::parse(query.as_bytes())
            .into_owned()
            .collect();
        let target = params.get("url").map(|u| canonical(u)).unwrap_or_default();
        let prefix = params.get("matchType").map(String::as_str) == Some("prefix");
        let from = params.get("from").cloned().unwrap_or_default();
        let limit: usize = params
            .get("limit")
            .and_then(|l| l.parse().ok())
            .unwrap_or(usize::MAX);
        let offset: usize = params
            .get("resumeKey")
            .and_then(|k| k.strip_prefix("offset:"))
            .and_then(|o| o.parse().ok())
            .unwrap_or(0);
        let fields: Vec<String> = params
            .get("fl")
            .map(|f| f.split(',').map(str::to_string).collect())
            .unwrap_or_else(|| {
                ["urlkey", "timestamp", "original", "mimetype", "statuscode", "digest", "length"]
                    .map(String::from)
                    .to_vec()
            });

        let state = self.state.read().unwrap();
        let mut matching: Vec<&MockCapture> = state
            .captures
            .iter()
            .filter(|c| {
                let url = canonical(&c.original_url);
                let hit = if prefix { url.starts_with(&target) } else { url == target };
                hit && c.timestamp.as_str() >= from.as_str()
            })
            .collect();
        matching.sort_by(|a, b| {
            (canonical(&a.original_url), &a.timestamp).cmp(&(canonical(&b.original_url), &b.timestamp))
        });

        let mut rows: Vec<serde_json::Value> = vec![serde_json::json!(fields)];
        let page: Vec<&&MockCapture> = matching.iter().skip(offset).take(limit).collect();
        for c in &page {
            let row: Vec<String> = fields
                .iter()
                .map(|f| match f.as_str() {
                    "urlkey" => canonical(&c.original_url),
                    "timestamp" => c.timestamp.clone(),
                    "original" => c.original_url.clone(),
                    "mimetype" => c.mime.clone(),
                    "statuscode" => c.status.to_string(),
                    "digest" => c.digest(),
                    "length" => c.body.len().to_string(),
                    _ => "-".into(),
                })
                .collect();
            rows.push(serde_json::json!(row));
        }
        let next = offset.saturating_add(page.len());
        if params.get("showResumeKey").map(String::as_str) == Some("true") && next < matching.len() {
            rows.push(serde_json::json!([]));
            rows.push(serde_json::json!([format!("offset:{next}")]));
        }
        if rows.len() == 1 {
            return b"[]".to_vec();
        }
        serde_json::to_vec(&rows).expect("rows serialize")
    }

    fn replay(&self, rest: &str) -> (u16, String, Vec<u8>) {
        let Some((stamp, url)) = rest.split_once('/') else {
            return (404, "text/plain".into(), b"bad replay path".to_vec());
        };
        let ts: String = stamp.chars().take_while(char::is_ascii_digit).collect();
        let want = canonical(url);
        let state = self.state.read().unwrap();
        match state
            .captures
            .iter()
            .find(|c| c.timestamp == ts && canonical(&c.original_url) == want)
        {
            Some(c) => (c.status, c.mime.clone(), c.body.clone()),
            None => (404, "text/html".into(), b"<html>not archived</html>".to_vec()),
        }
    }
}

/// Loose URL canonicalization: scheme, `www.` and trailing slash dropped.
fn canonical(url: &str) -> String {
    let lower = url.trim().to_ascii_lowercase();
    let no_scheme = lower
        .strip_prefix("https://")
        .or_else(|| lower.strip_prefix("http://"))
        .unwrap_or(&lower);
    let no_www = no_scheme.strip_prefix("www.").unwrap_or(no_scheme);
    no_www.trim_end_matches('/').to_string()
}

fn write_response(stream: &mut TcpStream, status: u16, mime: &str, body: &[u8]) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let head = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: {mime}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    stream.write_all(head.as_bytes())?;
    stream.write_all(body)?;
    stream.flush()?;
    // drain anything the client still sends so close doesn't reset the socket
    let _ = stream.set_read_timeout(Some(Duration::from_millis(10)));
    let _ = stream.read(&mut [0u8; 64]);
    Ok(())
}

/// Handle to a running mock server; stops on drop.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn endpoints(&self) -> ArchiveEndpoints {
        ArchiveEndpoints::rooted_at(&self.base_url())
    }

    /// Block the calling thread until the process is interrupted.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
