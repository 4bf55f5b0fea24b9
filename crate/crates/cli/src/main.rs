use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use pixelscope::archive::{ArchiveClient, ArchiveEndpoints, FetchPolicy};
use pixelscope::behavior::{detect_circumvention, diff_payloads, FeatureRegistry, Interaction, PageContext, Simulator};
use pixelscope::config::{config_feature_vector, parse_config_script, PixelConfiguration};
use pixelscope::cracker::{build_dictionary, crack};
use pixelscope::fixtures::Corpus;
use pixelscope::mock_archive::MockArchive;
use pixelscope::pipeline::{PipelineConfig, PipelineContext, StageRegistry};
use pixelscope::pixel::{extract_pixel_ids, strip_archive_rewrites};
use pixelscope::store::Cohort;
use pixelscope::PixelId;

#[derive(Parser)]
#[command(name = "pixelscope", version, about = "Historical Meta Pixel configuration measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Worker threads for crawling stages.
    #[arg(long, short)]
    jobs: Option<usize>,
    /// CDX endpoint override (also PIXELSCOPE_CDX_URL).
    #[arg(long)]
    cdx_url: Option<String>,
    /// Replay URL template override, with {timestamp} and {url} (also PIXELSCOPE_REPLAY_TEMPLATE).
    #[arg(long)]
    replay_template: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Query the archive and store semiannual homepage snapshots.
    CrawlSites(StageArgs),
    /// Find Pixel IDs in stored homepage snapshots.
    ExtractPixels(StageArgs),
    /// Fetch archived configuration scripts for every Pixel found.
    CrawlConfigs(StageArgs),
    /// Parse stored configuration scripts.
    ParseConfigs(StageArgs),
    /// Reverse sensitive-key digests with the configured wordlists.
    CrackKeys(StageArgs),
    /// Attribute configs to site-years and compute adoption statistics.
    Analyze(StageArgs),
    /// Write report.json and report.md.
    Report(StageArgs),
    /// Run every stage in order.
    RunAll(StageArgs),
    /// Extract Pixel IDs from an HTML file, or from a URL with --live.
    Extract {
        /// HTML file, or `-` for stdin.
        input: Option<PathBuf>,
        /// Fetch this URL instead of reading a file.
        #[arg(long, conflicts_with = "input")]
        live: Option<String>,
    },
    /// Parse a configuration script and print the structure and features.
    DumpConfig {
        script: PathBuf,
        #[arg(long)]
        pixel_id: Option<String>,
    },
    /// Simulate the event payloads a configuration produces.
    Simulate {
        /// Configuration script, or a JSON-encoded configuration.
        config: PathBuf,
        /// Page context JSON.
        context: PathBuf,
        /// Interaction JSON, e.g. '{"kind":"button_click","index":0}'.
        #[arg(long, default_value = r#"{"kind":"page_load"}"#)]
        interaction: String,
        /// Also simulate with this feature removed and print the difference.
        #[arg(long)]
        remove: Option<String>,
        /// Match filter rules against parameter names case-insensitively.
        #[arg(long)]
        case_insensitive: bool,
    },
    /// Compare two payload lists (JSON arrays).
    Diff { before: PathBuf, after: PathBuf },
    /// Reverse SHA-256 digests (one per line) against wordlists.
    Crack {
        /// Digest file, or `-` for stdin.
        digests: PathBuf,
        #[arg(long, short, required = true)]
        wordlist: Vec<PathBuf>,
    },
    /// Serve the bundled synthetic corpus as a local archive.
    MockArchive {
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
        /// Write site lists and a pipeline config pointing at the server here.
        #[arg(long)]
        write_config: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl std::fmt::Display) -> Self {
        Self { kind, message: message.to_string() }
    }
}

impl From<pixelscope::pipeline::PipelineError> for CliError {
    fn from(e: pixelscope::pipeline::PipelineError) -> Self {
        Self::new(e.kind(), e)
    }
}

type CliResult = Result<Value, CliError>;

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).map_err(|e| CliError::new("Io", e))?;
        return Ok(buf);
    }
    std::fs::read(path).map_err(|e| CliError::new("Io", format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(&read_input(path)?).map_err(|e| CliError::new("InvalidInput", format!("{}: {e}", path.display())))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable output")
}

fn run_stage(name: Option<&str>, args: &StageArgs) -> CliResult {
    let mut cfg = PipelineConfig::load(&args.config)?;
    cfg.endpoints = cfg.endpoints.with_env_overrides();
    if let Some(u) = &args.cdx_url {
        cfg.endpoints.cdx_url = u.clone();
    }
    if let Some(t) = &args.replay_template {
        cfg.endpoints.replay_template = t.clone();
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    let ctx = PipelineContext::new(cfg)?;
    let registry = StageRegistry::standard();
    match name {
        Some(n) => Ok(to_value(&registry.run_stage(n, &ctx)?)),
        None => Ok(to_value(&registry.run_all(&ctx)?)),
    }
}

fn load_configuration(path: &Path) -> Result<PixelConfiguration, CliError> {
    let bytes = read_input(path)?;
    if let Ok(cfg) = serde_json::from_slice::<PixelConfiguration>(&bytes) {
        return Ok(cfg);
    }
    parse_config_script(&bytes, None)
        .map(|p| p.config)
        .map_err(|e| CliError::new("ConfigParse", format!("{}: {e}", path.display())))
}

fn simulate_cmd(
    config: &Path,
    context: &Path,
    interaction: &str,
    remove: Option<&str>,
    case_insensitive: bool,
) -> CliResult {
    let cfg = load_configuration(config)?;
    let ctx: PageContext = read_json(context)?;
    let interaction: Interaction =
        serde_json::from_str(interaction).map_err(|e| CliError::new("InvalidInput", format!("interaction: {e}")))?;
    let options = pixelscope::behavior::SimulationOptions { case_insensitive_params: case_insensitive };
    let sim = Simulator::new(FeatureRegistry::standard(), options);
    let run = |c: &PixelConfiguration| sim.simulate(c, &ctx, &interaction).map_err(|e| CliError::new("InvalidInput", e));
    let payloads = run(&cfg)?;
    let flags = detect_circumvention(&cfg, &payloads);
    let Some(feature) = remove else {
        return Ok(json!({ "payloads": payloads, "circumvention": flags }));
    };
    let f = sim
        .registry()
        .get(feature)
        .ok_or_else(|| CliError::new("InvalidInput", format!("unknown feature {feature:?}; known: {:?}", sim.registry().names())))?;
    let mut patched = cfg.clone();
    f.remove(&mut patched);
    let after = run(&patched)?;
    Ok(json!({
        "payloads": payloads,
        "circumvention": flags,
        "removed": feature,
        "patched_payloads": after,
        "delta": diff_payloads(&payloads, &after),
    }))
}

fn mock_archive_cmd(addr: &str, write_config: Option<&Path>) -> CliResult {
    let corpus = Corpus::standard();
    let server = MockArchive::new(corpus.captures()).serve_on(addr).map_err(|e| CliError::new("Io", e))?;
    if let Some(dir) = write_config {
        let io = |e: std::io::Error| CliError::new("Io", e);
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut lists = serde_json::Map::new();
        for cohort in Cohort::ALL {
            let name = format!("{}.txt", cohort.as_str());
            std::fs::write(dir.join(&name), corpus.site_list(cohort)).map_err(io)?;
            lists.insert(cohort.as_str().into(), json!(name));
        }
        let cfg = json!({
            "site_lists": lists,
            "endpoints": server.endpoints(),
            "policy": { "min_request_interval_ms": 0, "backoff_base_ms": 10, "backoff_cap_ms": 100 },
            "storage_root": "store",
        });
        let text = serde_json::to_string_pretty(&cfg).expect("json") + "\n";
        std::fs::write(dir.join("pipeline.json"), text).map_err(io)?;
    }
    eprintln!("serving {} synthetic sites at {} (ctrl-c to stop)", corpus.sites.len(), server.base_url());
    server.wait();
    Ok(Value::Null)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::CrawlSites(a) => run_stage(Some("crawl_sites"), &a),
        Command::ExtractPixels(a) => run_stage(Some("extract_pixels"), &a),
        Command::CrawlConfigs(a) => run_stage(Some("crawl_configs"), &a),
        Command::ParseConfigs(a) => run_stage(Some("parse_configs"), &a),
        Command::CrackKeys(a) => run_stage(Some("crack_keys"), &a),
        Command::Analyze(a) => run_stage(Some("analyze"), &a),
        Command::Report(a) => run_stage(Some("report"), &a),
        Command::RunAll(a) => run_stage(None, &a),
        Command::Extract { input, live } => {
            let html = match (input, live) {
                (_, Some(url)) => {
                    let client = ArchiveClient::new(ArchiveEndpoints::default(), FetchPolicy::default())
                        .map_err(|e| CliError::new("InvalidPolicy", e))?;
                    client.fetch_url(&url).map_err(|e| CliError::new("Fetch", e))?.body
                }
                (Some(path), None) => read_input(&path)?,
                (None, None) => read_input(Path::new("-"))?,
            };
            let ex = extract_pixel_ids(&html);
            let stripped = strip_archive_rewrites(&html);
            Ok(json!({
                "pixel_ids": ex.pixel_ids,
                "active_ids": ex.active_ids(),
                "evidence": ex.evidence,
                "archive_prefixes_stripped": stripped.len() != html.len(),
            }))
        }
        Command::DumpConfig { script, pixel_id } => {
            let pid: Option<PixelId> = match pixel_id {
                Some(s) => Some(s.parse().map_err(|e| CliError::new("InvalidInput", e))?),
                None => None,
            };
            let parsed = parse_config_script(&read_input(&script)?, pid.as_ref())
                .map_err(|e| CliError::new("ConfigParse", e))?;
            Ok(json!({
                "config": parsed.config,
                "features": config_feature_vector(&parsed.config),
                "diagnostics": parsed.diagnostics,
                "foreign_pixel_ids": parsed.foreign_pixel_ids,
            }))
        }
        Command::Simulate { config, context, interaction, remove, case_insensitive } => {
            simulate_cmd(&config, &context, &interaction, remove.as_deref(), case_insensitive)
        }
        Command::Diff { before, after } => {
            let b: Vec<pixelscope::behavior::EventPayload> = read_json(&before)?;
            let a: Vec<pixelscope::behavior::EventPayload> = read_json(&after)?;
            Ok(to_value(&diff_payloads(&b, &a)))
        }
        Command::Crack { digests, wordlist } => {
            let text = String::from_utf8_lossy(&read_input(&digests)?).into_owned();
            let set: BTreeSet<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
            let dict = build_dictionary(&wordlist, &BTreeSet::new()).map_err(|e| {
                let kind = match e {
                    pixelscope::cracker::CrackError::EmptyDictionary => "EmptyDictionary",
                    _ => "Io",
                };
                CliError::new(kind, e)
            })?;
            Ok(to_value(&crack(&set, &dict)))
        }
        Command::MockArchive { addr, write_config } => mock_archive_cmd(&addr, write_config.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).expect("json");
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind, "message": e.message }));
            ExitCode::FAILURE
        }
    }
}
