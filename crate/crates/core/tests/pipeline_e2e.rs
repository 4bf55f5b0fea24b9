mod common;

use std::collections::BTreeSet;
use std::fs;

use pixelscope::fixtures::Corpus;
use pixelscope::mock_archive::{MockArchive, Scripted};
use pixelscope::pipeline::{
    ConfigCaptureRow, CrawlFailure, PipelineConfig, PipelineContext, PipelineError, SiteSnapshot, StageRegistry,
};
use pixelscope::store::{read_jsonl, Cohort, ConfigCapture, SiteYearObservation, SiteYearPixels};

fn read<T: serde::de::DeserializeOwned>(ctx: &PipelineContext, name: &str) -> Vec<T> {
    read_jsonl(&ctx.store.derived_path(name)).unwrap()
}

#[test]
fn full_run_on_fixture_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::standard();
    let (_server, ctx) = common::corpus_setup(&corpus, dir.path(), 4);
    let registry = StageRegistry::standard();
    let summaries = registry.run_all(&ctx).unwrap();
    assert_eq!(summaries.len(), 7);

    let snaps: Vec<SiteSnapshot> = read(&ctx, "site_snapshots");
    let want: usize = corpus.sites.iter().map(|s| s.years.len() * 2).sum();
    assert_eq!(snaps.len(), want);
    assert!(snaps.iter().all(|s| s.timestamp.as_str() != "20200101000100"), "redirect capture used");
    assert!(read::<CrawlFailure>(&ctx, "crawl_errors").is_empty());

    let pixels: Vec<SiteYearPixels> = read(&ctx, "site_year_pixels");
    let all_ids: BTreeSet<String> =
        pixels.iter().flat_map(|p| p.pixel_ids.iter().map(|i| i.to_string())).collect();
    assert!(!all_ids.contains("9990000000006"), "commented pixel counted as installed");
    assert!(all_ids.contains("5550000000002"));

    let captures: Vec<ConfigCaptureRow> = read(&ctx, "config_captures");
    assert!(captures.iter().all(|c| c.pixel_id.as_str() != "70000000000015"), "prefix decoy crawled");
    // Nearest to 2021-01-01 for this pixel; it still counts toward 2020.
    assert!(captures.iter().any(|c| c.timestamp.as_str() == "20200920120000"));

    let obs: Vec<SiteYearObservation> = read(&ctx, "observations");
    for o in &obs {
        for r in &o.config_refs {
            assert!(o.pixel_ids.contains(&r.pixel_id));
        }
    }
    let late: Vec<_> = obs
        .iter()
        .filter(|o| o.config_refs.iter().any(|r| r.pixel_id.as_str() == "8880000000004"))
        .map(|o| (o.domain.as_str(), o.year))
        .collect();
    assert_eq!(late, [("clinic04.example", 2021)]);
    let unattributed: Vec<ConfigCapture> = read(&ctx, "unattributed_configs");
    assert_eq!(unattributed.iter().filter(|c| c.pixel_id.as_str() == "8880000000004").count(), 5);

    let md = fs::read_to_string(ctx.store.root().join("report.md")).unwrap();
    assert!(md.contains("| FirstPartyCookies | health |"));
}

#[test]
fn rerunning_analysis_is_byte_identical_and_reuses_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::standard();
    let archive = MockArchive::new(corpus.captures());
    let server = archive.serve().unwrap();
    let mut cfg = PipelineConfig::for_root(dir.path().join("store"));
    for cohort in Cohort::ALL {
        let path = dir.path().join(format!("{}.txt", cohort.as_str()));
        fs::write(&path, corpus.site_list(cohort)).unwrap();
        cfg.site_lists.insert(cohort, path);
    }
    cfg.endpoints = server.endpoints();
    cfg.policy = common::fast_policy();
    let ctx = PipelineContext::new(cfg).unwrap();
    let registry = StageRegistry::standard();
    registry.run_all(&ctx).unwrap();

    let outputs = ["observations.jsonl", "adoption.jsonl", "adoption.csv", "key_overlap.json", "plot_data.json", "report.md", "report.json"];
    let before: Vec<Vec<u8>> = outputs.iter().map(|f| fs::read(ctx.store.root().join(f)).unwrap()).collect();
    let replays = archive.requests_matching("/web/");

    // A fresh context over the same store: everything already fetched.
    let ctx = PipelineContext::new(ctx.config.clone()).unwrap();
    registry.run_all(&ctx).unwrap();
    assert_eq!(archive.requests_matching("/web/"), replays, "snapshots fetched twice");
    let after: Vec<Vec<u8>> = outputs.iter().map(|f| fs::read(ctx.store.root().join(f)).unwrap()).collect();
    for ((name, a), b) in outputs.iter().zip(&before).zip(&after) {
        assert!(a == b, "{name} changed between runs");
    }
}

#[test]
fn one_unreachable_site_does_not_stop_the_crawl() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::standard();
    let archive = MockArchive::new(corpus.captures());
    archive.always("url=clinic01.example", Scripted::Status(503, b"busy".to_vec()));
    let server = archive.serve().unwrap();
    let mut cfg = PipelineConfig::for_root(dir.path().join("store"));
    let path = dir.path().join("health.txt");
    fs::write(&path, corpus.site_list(Cohort::Health)).unwrap();
    cfg.site_lists.insert(Cohort::Health, path);
    cfg.endpoints = server.endpoints();
    cfg.policy = common::fast_policy();
    let ctx = PipelineContext::new(cfg).unwrap();
    let summary = StageRegistry::standard().run_stage("crawl_sites", &ctx).unwrap();
    assert_eq!(summary.get("failures"), 1);
    let failures: Vec<CrawlFailure> = read(&ctx, "crawl_errors");
    assert_eq!(failures[0].target, "clinic01.example");
    assert_eq!(failures[0].error, "ArchiveUnavailable");
    let snaps: Vec<SiteSnapshot> = read(&ctx, "site_snapshots");
    let domains: BTreeSet<_> = snaps.iter().map(|s| s.domain.as_str()).collect();
    assert_eq!(domains.len(), 9);
}

#[test]
fn analysis_without_inputs_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = PipelineContext::new(PipelineConfig::for_root(dir.path())).unwrap();
    let err = StageRegistry::standard().run_stage("analyze", &ctx).unwrap_err();
    assert!(matches!(err, PipelineError::MissingPrerequisite { .. }));
    assert_eq!(err.kind(), "MissingPrerequisite");
}
