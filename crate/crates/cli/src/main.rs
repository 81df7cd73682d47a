use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cosentinel_client::{Client, TextFormat};
use cosentinel_core::domain::{assess, HazardBand};
use cosentinel_core::geo::{export_geojson, load_site_registry, SiteRegistry};
use cosentinel_core::ingest::{ingest_stream, load_store, IngestSession, IngestStats, Store};
use cosentinel_core::report::{campaign_report, RenderedReport};
use cosentinel_core::simulator::{
    default_profiles, emit_frames, generate_campaign, load_profiles, CampaignConfig, DEFAULT_DAYS,
    DEFAULT_TZ_OFFSET_MINUTES,
};
use cosentinel_service::frames::serve_frames;
use cosentinel_service::{router, shared, AppState};
use tokio::net::TcpListener;

const TZ_ENV: &str = "COSENTINEL_TZ_OFFSET_MIN";

#[derive(Parser)]
#[command(name = "cosentinel", version, about = "Carbon-monoxide sensor pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic campaign as frame lines.
    Simulate(SimulateArgs),
    /// Decode frame lines and append them to a store.
    Ingest(IngestArgs),
    /// Print per-site, per-time-of-day means.
    Report(ReportArgs),
    /// Write the report as a GeoJSON FeatureCollection.
    ExportGeojson(GeojsonArgs),
    /// Classify one concentration in ppm.
    Classify(ClassifyArgs),
    /// Run the HTTP API (and optionally a TCP frame listener).
    Serve(ServeArgs),
}

#[derive(Args)]
struct TzArg {
    /// Local time zone offset from UTC, in minutes.
    #[arg(long = "tz-offset-min", env = TZ_ENV, default_value_t = DEFAULT_TZ_OFFSET_MINUTES, allow_negative_numbers = true)]
    minutes: i32,
}

#[derive(Args)]
struct SimulateArgs {
    /// Device profile CSV (site_id,device_id,lat,lng,morning,noon,afternoon,sigma,per_bucket).
    #[arg(long)]
    sites: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DAYS)]
    days: u32,
    /// Fixed noise standard deviation in ppm for every device.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Readings per device per reported time bucket.
    #[arg(long = "per-bucket")]
    per_bucket: Option<u32>,
    /// Output file, or - for stdout.
    #[arg(long, default_value = "-")]
    out: String,
    /// First local calendar day of the campaign (YYYY-MM-DD).
    #[arg(long = "start-date")]
    start_date: Option<NaiveDate>,
    #[command(flatten)]
    tz: TzArg,
}

#[derive(Args)]
struct IngestArgs {
    /// Frame file, or - for stdin.
    #[arg(long = "in", conflicts_with = "listen", required_unless_present = "listen")]
    input: Option<String>,
    /// Accept frame lines over TCP on this port instead.
    #[arg(long)]
    listen: Option<u16>,
    #[arg(long, default_value = "127.0.0.1", requires = "listen")]
    bind: IpAddr,
    /// Stop after this many TCP connections have been served.
    #[arg(long = "max-conns", requires = "listen")]
    max_conns: Option<usize>,
    /// Site registry CSV (site_id,name,lat,lng); the bundled sites by default.
    #[arg(long)]
    sites: Option<PathBuf>,
    #[arg(long)]
    store: PathBuf,
    #[command(flatten)]
    tz: TzArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, required_unless_present = "server", conflicts_with = "server")]
    store: Option<PathBuf>,
    /// Base URL of a running `cosentinel serve`.
    #[arg(long)]
    server: Option<String>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Lowest band whose sites are recommended for monitoring.
    #[arg(long = "recommend-min-band", default_value = "Danger30Heart")]
    recommend_min_band: HazardBand,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tz: TzArg,
}

#[derive(Args)]
struct GeojsonArgs {
    #[arg(long, required_unless_present = "server", conflicts_with = "server")]
    store: Option<PathBuf>,
    #[arg(long)]
    server: Option<String>,
    #[arg(long)]
    sites: Option<PathBuf>,
    /// Output file, or - for stdout.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(allow_negative_numbers = true)]
    ppm: String,
    #[arg(long)]
    server: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    sites: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Also accept raw frame lines over TCP on this port.
    #[arg(long = "frames-port")]
    frames_port: Option<u16>,
    #[command(flatten)]
    tz: TzArg,
}

enum Failure {
    Usage(anyhow::Error),
    Operational(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Operational(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();

    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::from(1);
        }
    };
    let result = runtime.block_on(run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Operational(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

async fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Ingest(a) => ingest(a).await,
        Command::Report(a) => report(a).await,
        Command::ExportGeojson(a) => geojson(a).await,
        Command::Classify(a) => classify(a).await,
        Command::Serve(a) => serve(a).await,
    }
}

fn open_output(out: &str) -> anyhow::Result<Box<dyn Write>> {
    Ok(if out == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        let f = File::create(out).with_context(|| format!("creating {out}"))?;
        Box::new(BufWriter::new(f))
    })
}

fn write_text(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn registry(path: Option<&Path>) -> anyhow::Result<SiteRegistry> {
    match path {
        Some(p) => load_site_registry(p).with_context(|| format!("loading sites from {}", p.display())),
        None => Ok(SiteRegistry::bundled()),
    }
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let profiles = match &a.sites {
        Some(p) => load_profiles(p).with_context(|| format!("loading profiles from {}", p.display()))?,
        None => default_profiles(),
    };
    let mut cfg = CampaignConfig::new(profiles);
    if let Some(sigma) = a.sigma {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(usage(format!("--sigma must be a non-negative number, got {sigma}")));
        }
        cfg = cfg.with_sigma(sigma);
    }
    if let Some(n) = a.per_bucket {
        cfg = cfg.with_readings_per_bucket(n);
    }
    cfg.days = a.days;
    cfg.seed = a.seed;
    cfg.tz_offset_minutes = a.tz.minutes;
    if let Some(d) = a.start_date {
        cfg.start_date = d;
    }
    cfg.validate().map_err(usage)?;

    let readings = generate_campaign(&cfg).context("generating campaign")?;
    let mut sink = open_output(&a.out)?;
    let n = emit_frames(&readings, &mut sink).context("writing frames")?;
    tracing::info!(frames = n, "simulation written");
    Ok(())
}

fn print_stats(stats: &IngestStats) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(stats)?);
    Ok(())
}

async fn ingest(a: IngestArgs) -> CmdResult {
    let reg = registry(a.sites.as_deref())?;
    let store = Store::open(&a.store)?;
    let tz = a.tz.minutes;

    if let Some(port) = a.listen {
        let session = shared(IngestSession::new(reg, store, tz).context("starting ingest")?);
        let listener = TcpListener::bind((a.bind, port))
            .await
            .with_context(|| format!("binding {}:{port}", a.bind))?;
        eprintln!("listening for frames on {}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        let stats = serve_frames(listener, session, a.max_conns, shutdown)
            .await
            .context("frame listener")?;
        print_stats(&stats)?;
        return Ok(());
    }

    let input = a.input.expect("clap requires --in without --listen");
    let stats = tokio::task::spawn_blocking(move || -> anyhow::Result<IngestStats> {
        let source: Box<dyn BufRead> = if input == "-" {
            Box::new(io::stdin().lock())
        } else {
            let f = File::open(&input).with_context(|| format!("opening {input}"))?;
            Box::new(BufReader::new(f))
        };
        ingest_stream(source, &reg, store, tz).map_err(|e| {
            if let Some(partial) = e.partial_stats() {
                eprintln!("partial: {}", serde_json::to_string(partial).unwrap_or_default());
            }
            anyhow::Error::new(e)
        })
    })
    .await
    .context("ingest task")??;
    print_stats(&stats)?;
    Ok(())
}

async fn report(a: ReportArgs) -> CmdResult {
    let text = if let Some(url) = &a.server {
        let client = Client::new(url.as_str());
        let res = match a.format {
            Format::Json => client
                .report(a.recommend_min_band)
                .await
                .map(|r| serde_json::to_string_pretty(&r).expect("report serializes") + "\n"),
            Format::Table => client.report_text(a.recommend_min_band, TextFormat::Table).await,
            Format::Csv => client.report_text(a.recommend_min_band, TextFormat::Csv).await,
        };
        res.with_context(|| format!("querying {url}"))?
    } else {
        let path = a.store.as_deref().expect("clap requires --store without --server");
        let loaded = load_store(path)?;
        let rendered = RenderedReport::new(campaign_report(&loaded.records), a.recommend_min_band, a.tz.minutes);
        match a.format {
            Format::Table => rendered.to_table(),
            Format::Csv => rendered.to_csv(),
            Format::Json => serde_json::to_string_pretty(&rendered).context("serializing report")? + "\n",
        }
    };
    write_text(a.out.as_deref(), &text)?;
    Ok(())
}

async fn geojson(a: GeojsonArgs) -> CmdResult {
    let doc = if let Some(url) = &a.server {
        Client::new(url.as_str())
            .geojson()
            .await
            .with_context(|| format!("querying {url}"))?
    } else {
        let reg = registry(a.sites.as_deref())?;
        let path = a.store.as_deref().expect("clap requires --store without --server");
        let loaded = load_store(path)?;
        export_geojson(&campaign_report(&loaded.records), &reg).context("building GeoJSON")?
    };
    let mut sink = open_output(&a.out)?;
    sink.write_all(doc.as_bytes())?;
    if !doc.ends_with('\n') {
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

async fn classify(a: ClassifyArgs) -> CmdResult {
    let ppm: f64 = a
        .ppm
        .trim()
        .parse()
        .map_err(|_| usage(format!("{:?} is not a number", a.ppm)))?;
    let assessment = match &a.server {
        Some(url) => match Client::new(url.as_str()).classify(ppm).await {
            Ok(x) => x,
            Err(e) if e.is_client_error() => return Err(usage(e)),
            Err(e) => return Err(anyhow::Error::new(e).context(format!("querying {url}")).into()),
        },
        None => assess(ppm).map_err(usage)?,
    };
    println!("band: {}", assessment.band);
    println!("description: {}", assessment.description);
    println!("max safe exposure: {} min", assessment.max_safe_minutes);
    Ok(())
}

async fn serve(a: ServeArgs) -> CmdResult {
    let reg = registry(a.sites.as_deref())?;
    let store = Store::open(&a.store)?;
    let session = shared(IngestSession::new(reg, store, a.tz.minutes).context("starting ingest")?);
    let state = AppState::new(session.clone(), &a.store).await;

    let listener = TcpListener::bind(a.addr)
        .await
        .with_context(|| format!("binding {}", a.addr))?;
    eprintln!("http api on http://{}", listener.local_addr()?);

    let frames = match a.frames_port {
        Some(port) => {
            let l = TcpListener::bind((a.addr.ip(), port))
                .await
                .with_context(|| format!("binding frame port {port}"))?;
            eprintln!("listening for frames on {}", l.local_addr()?);
            let session = session.clone();
            Some(tokio::spawn(async move {
                serve_frames(l, session, None, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            }))
        }
        None => None,
    };

    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .context("http server")?;

    if let Some(task) = frames {
        let stats = task.await.context("frame listener task")?.context("frame listener")?;
        print_stats(&stats)?;
    }
    Ok(())
}
