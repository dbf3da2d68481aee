use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regie_net::config::{load_level_and_cuesheet, parse_udp_endpoint, DEFAULT_TICK_RATE};
use regie_net::mocap::{load_frames, simulate_mocap};
use regie_net::{load_show, run_service, ServiceConfig, StartupError};

#[derive(Parser)]
#[command(name = "regie", version, about = "Show control for mixed live and virtual stages")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the show service.
    Run {
        #[arg(long)]
        level: PathBuf,
        #[arg(long)]
        cuesheet: PathBuf,
        #[arg(long)]
        clips: PathBuf,
        /// Engine tick rate in Hz (10..=240).
        #[arg(long, default_value_t = DEFAULT_TICK_RATE)]
        tick: u32,
        #[arg(long, default_value = "udp://0.0.0.0:7000")]
        mocap: String,
        #[arg(long, default_value = "udp://0.0.0.0:8000")]
        osc_in: String,
        #[arg(long, default_value = "udp://127.0.0.1:9000")]
        osc_out: String,
        /// Address for the WebSocket client channel.
        #[arg(long, default_value = "127.0.0.1:8080")]
        serve: String,
    },
    /// Validate a level and cuesheet (and optionally a clip catalog).
    Check {
        level: PathBuf,
        cuesheet: PathBuf,
        #[arg(long)]
        clips: Option<PathBuf>,
    },
    /// Replay a recorded frames file as mocap datagrams.
    SimulateMocap {
        frames: PathBuf,
        #[arg(long)]
        to: String,
        /// Send everything at once instead of following the timestamps.
        #[arg(long)]
        no_pace: bool,
    },
}

fn run_config(cmd: Cmd) -> Result<ServiceConfig, StartupError> {
    let Cmd::Run {
        level,
        cuesheet,
        clips,
        tick,
        mocap,
        osc_in,
        osc_out,
        serve,
    } = cmd
    else {
        unreachable!("only called for run")
    };
    let mut config = ServiceConfig::new(level, cuesheet, clips);
    config.tick_rate = tick;
    config.mocap = parse_udp_endpoint(&mocap)?;
    config.osc_in = parse_udp_endpoint(&osc_in)?;
    config.osc_out = parse_udp_endpoint(&osc_out)?;
    config.serve = serve.parse().map_err(|_| StartupError::Endpoint(serve))?;
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REGIE_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        cmd @ Cmd::Run { .. } => run_config(cmd).and_then(|config| {
            tokio::runtime::Runtime::new()
                .expect("tokio runtime")
                .block_on(run_service(config))
        }),
        Cmd::Check { level, cuesheet, clips } => {
            let checked = match &clips {
                Some(clips) => load_show(&level, &cuesheet, clips).map(|_| ()),
                None => load_level_and_cuesheet(&level, &cuesheet).map(|_| ()),
            };
            checked.map(|()| println!("ok: {} and {} are valid", level.display(), cuesheet.display()))
        }
        Cmd::SimulateMocap { frames, to, no_pace } => simulate(&frames, &to, !no_pace),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn simulate(path: &PathBuf, to: &str, pace: bool) -> Result<(), StartupError> {
    let to = parse_udp_endpoint(to)?;
    let text = std::fs::read_to_string(path).map_err(|source| StartupError::Read {
        path: path.clone(),
        source,
    })?;
    let frames = load_frames(&text).map_err(|(line, e)| StartupError::Invalid {
        path: path.clone(),
        diagnostics: vec![format!("  - line {line}: {e}")],
    })?;
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    let sent = runtime
        .block_on(simulate_mocap(&frames, to, pace))
        .map_err(|source| StartupError::Io {
            what: "sending mocap frames",
            source,
        })?;
    log::info!("sent {sent} frames to {to}");
    Ok(())
}
