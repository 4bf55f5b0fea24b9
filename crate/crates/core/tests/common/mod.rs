#![allow(dead_code)]

use std::path::Path;

use pixelscope::archive::FetchPolicy;
use pixelscope::fixtures::Corpus;
use pixelscope::mock_archive::{MockArchive, MockServer};
use pixelscope::pipeline::{PipelineConfig, PipelineContext};
use pixelscope::store::Cohort;

/// Retry policy for local runs: no pacing, short backoff.
pub fn fast_policy() -> FetchPolicy {
    FetchPolicy {
        min_request_interval_ms: 0,
        request_timeout_ms: 5_000,
        backoff_base_ms: 1,
        backoff_cap_ms: 5,
        max_snapshot_retries: 3,
        ..FetchPolicy::default()
    }
}

/// Serve `corpus` and write site lists plus a pipeline config under `dir`.
pub fn corpus_setup(corpus: &Corpus, dir: &Path, jobs: usize) -> (MockServer, PipelineContext) {
    let server = MockArchive::new(corpus.captures()).serve().expect("mock archive binds");
    let mut cfg = PipelineConfig::for_root(dir.join("store"));
    for cohort in Cohort::ALL {
        let path = dir.join(format!("{}.txt", cohort.as_str()));
        std::fs::write(&path, corpus.site_list(cohort)).unwrap();
        cfg.site_lists.insert(cohort, path);
    }
    cfg.endpoints = server.endpoints();
    cfg.policy = fast_policy();
    cfg.jobs = jobs;
    let ctx = PipelineContext::new(cfg).expect("valid pipeline config");
    (server, ctx)
}
