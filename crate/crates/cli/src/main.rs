//! `rcm-teleop`: scripted runs, log replay, trajectory analysis and the live service.
//!
//! Exit status: 0 success, 2 configuration or argument error, 3 unreadable or
//! malformed input (scenario, log, CSV), 4 runtime failure.

mod analyze;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rcm_core::config::{ConfigError, SessionFile};
use rcm_core::protocol::ConfigPatch;
use rcm_core::session::{self, CommandLog, SessionError};
use rcm_core::simulator::scenario::{self, Scenario, ScenarioError};
use rcm_core::telemetry::{write_trajectory_csv, RunSummary, TelemetryFrame};
use rcm_service::{Service, ServiceConfig, ServiceError};

use analyze::Metric;

#[derive(Debug, Parser)]
#[command(name = "rcm-teleop", version, about = "Pivot-constrained forceps teleoperation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a scripted scenario and write its trajectory.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Trajectory CSV output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a recorded command log and write its trajectory.
    Replay {
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a metric over a trajectory or a generic `t,...` CSV.
    Analyze {
        csv: PathBuf,
        #[arg(long, value_enum)]
        metric: Metric,
        /// Signal column. For rms-accel, a position prefix (`tip` reads tip_x, tip_y, tip_z).
        #[arg(long)]
        column: Option<String>,
        /// Window length (s).
        #[arg(long, default_value_t = 0.5)]
        window: f64,
        /// Window hop (s).
        #[arg(long, default_value_t = 0.5)]
        hop: f64,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accept one live operator at a time and stream telemetry back.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        /// NDJSON-over-TCP endpoint.
        #[arg(long, env = "RCM_LISTEN", default_value = "127.0.0.1:7878")]
        listen: SocketAddr,
        /// WebSocket endpoint for browser clients.
        #[arg(long, env = "RCM_WS_LISTEN", default_value = "127.0.0.1:7879")]
        ws_listen: SocketAddr,
        #[arg(long)]
        no_ws: bool,
        /// Directory for per-session command logs.
        #[arg(long)]
        record_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Session configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tick rate (Hz).
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    alpha_t: Option<f64>,
    #[arg(long)]
    alpha_r: Option<f64>,
    /// Drift correction gain (1/s).
    #[arg(long)]
    gain_k: Option<f64>,
    /// Initial pivot distance back from the tip (m).
    #[arg(long)]
    rcm_offset: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn session_file(&self) -> Result<SessionFile, ConfigError> {
        let mut file = match &self.config {
            Some(path) => SessionFile::load(path)?,
            None => SessionFile::default(),
        };
        if let Some(rate) = self.rate {
            file.rate = rate;
        }
        if let Some(seed) = self.seed {
            file.seed = seed;
        }
        if let Some(offset) = self.rcm_offset {
            file.geometry.rcm_offset = offset;
        }
        let c = &mut file.controller;
        c.alpha_t = self.alpha_t.unwrap_or(c.alpha_t);
        c.alpha_r = self.alpha_r.unwrap_or(c.alpha_r);
        c.gain_k = self.gain_k.unwrap_or(c.gain_k);
        file.resolve()?;
        Ok(file)
    }

    /// Flags win over the scenario's own settings.
    fn override_scenario(&self, sc: &mut Scenario) {
        if self.rate.is_some() {
            sc.rate = self.rate;
        }
        if self.seed.is_some() {
            sc.seed = self.seed;
        }
        if let Some(patch) = &mut sc.controller {
            let ConfigPatch {
                alpha_t,
                alpha_r,
                gain_k,
                ..
            } = patch;
            *alpha_t = self.alpha_t.or(*alpha_t);
            *alpha_r = self.alpha_r.or(*alpha_r);
            *gain_k = self.gain_k.or(*gain_k);
        }
    }
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Input(String),
    Runtime(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Input(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Input(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Config(e) => e.into(),
            ScenarioError::Session(e) => e.into(),
            e => Failure::Input(e.to_string()),
        }
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Config(e) => e.into(),
            SessionError::Log { .. } => Failure::Input(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Config(e) => e.into(),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run {
            scenario,
            config,
            out,
        } => run(&scenario, &config, &out),
        Cmd::Replay { log, out } => replay(&log, &out),
        Cmd::Analyze {
            csv,
            metric,
            column,
            window,
            hop,
            out,
        } => analyze::run(&csv, metric, column.as_deref(), window, hop, out.as_deref()),
        Cmd::Serve {
            config,
            listen,
            ws_listen,
            no_ws,
            record_dir,
        } => serve(&config, listen, (!no_ws).then_some(ws_listen), record_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(scenario_path: &Path, config: &ConfigArgs, out: &Path) -> Result<(), Failure> {
    let base = config.session_file()?;
    let mut sc = Scenario::load(scenario_path)?;
    config.override_scenario(&mut sc);
    let rate = sc.session_file(&base)?.resolve()?.rate;
    let frames = scenario::run_scenario(&sc, &base)?;
    finish(&frames, rate, out)
}

fn replay(log_path: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(log_path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", log_path.display())))?;
    let log = CommandLog::from_ndjson(&text)?;
    let rate = log.config.resolve()?.rate;
    let frames = session::replay(&log)?;
    finish(&frames, rate, out)
}

fn finish(frames: &[TelemetryFrame], rate: f64, out: &Path) -> Result<(), Failure> {
    write_csv(out, |w| write_trajectory_csv(frames, w))?;
    let s = RunSummary::from_frames(frames, rate);
    println!("ticks: {}", s.ticks);
    println!("rms_accel_tip_m_s2: {:e}", s.rms_accel_tip);
    println!("max_rcm_drift_m: {:e}", s.max_rcm_drift);
    println!("min_clearance_m: {:e}", s.min_clearance);
    Ok(())
}

fn write_csv(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), Failure> {
    let fail = |e: std::io::Error| Failure::Runtime(format!("cannot write {}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(fail)?);
    body(&mut w).map_err(fail)?;
    w.flush().map_err(fail)
}

fn serve(
    config: &ConfigArgs,
    listen: SocketAddr,
    ws_listen: Option<SocketAddr>,
    record_dir: Option<PathBuf>,
) -> Result<(), Failure> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(tracing_subscriber::filter::LevelFilter::INFO)
        .init();
    let session = config.session_file()?;
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| Failure::Runtime(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let mut service = Service::bind(ServiceConfig {
            session,
            listen,
            ws_listen,
            record_dir,
        })
        .await?;
        let addr = service
            .local_addr()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("tcp {addr}");
        if let Some(ws) = service.ws_addr() {
            println!("ws ws://{ws}/");
        }
        let _ = std::io::stdout().flush();
        if let Some(mut reports) = service.take_reports() {
            tokio::spawn(async move {
                while let Some(r) = reports.recv().await {
                    let path = r
                        .log_path
                        .as_ref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_else(|| "-".into());
                    println!(
                        "session {} ended: {} ticks, {} deadline misses, log {path}{}",
                        r.id,
                        r.ticks,
                        r.deadline_misses,
                        r.fault.map(|f| format!(", fault: {f}")).unwrap_or_default()
                    );
                    let _ = std::io::stdout().flush();
                }
            });
        }
        service.run(shutdown_signal()).await?;
        Ok(())
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
