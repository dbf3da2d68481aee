use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use regie_core::cueengine::{parse_cuesheet, Cuesheet};
use regie_core::motionplayer::{load_clip_catalog, ClipCatalog};
use regie_core::scene::{load_level, Level};
use regie_core::world::check_clip_refs;
use thiserror::Error;

pub const DEFAULT_TICK_RATE: u32 = 60;
pub const TICK_RATE_RANGE: std::ops::RangeInclusive<u32> = 10..=240;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("tick rate {0} Hz is outside 10..=240")]
    TickRate(u32),
    #[error("invalid endpoint `{0}`, expected udp://host:port")]
    Endpoint(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is invalid:\n{}", .diagnostics.join("\n"))]
    Invalid { path: PathBuf, diagnostics: Vec<String> },
    #[error("cannot bind {what} on {addr}: {source}")]
    Bind {
        what: &'static str,
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("{what} failed: {source}")]
    Io {
        what: &'static str,
        #[source]
        source: std::io::Error,
    },
}

/// Parses `udp://host:port`; a bare `host:port` is accepted too.
pub fn parse_udp_endpoint(text: &str) -> Result<SocketAddr, StartupError> {
    let bare = text.strip_prefix("udp://").unwrap_or(text);
    bare.parse().map_err(|_| StartupError::Endpoint(text.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub tick_rate: u32,
    pub mocap: SocketAddr,
    pub osc_in: SocketAddr,
    pub osc_out: SocketAddr,
    pub serve: SocketAddr,
    pub level: PathBuf,
    pub cuesheet: PathBuf,
    pub clips: PathBuf,
}

impl ServiceConfig {
    /// Default endpoints for the given show files.
    pub fn new(level: impl Into<PathBuf>, cuesheet: impl Into<PathBuf>, clips: impl Into<PathBuf>) -> Self {
        let addr = |s: &str| s.parse().expect("literal address");
        ServiceConfig {
            tick_rate: DEFAULT_TICK_RATE,
            mocap: addr("0.0.0.0:7000"),
            osc_in: addr("0.0.0.0:8000"),
            osc_out: addr("127.0.0.1:9000"),
            serve: addr("127.0.0.1:8080"),
            level: level.into(),
            cuesheet: cuesheet.into(),
            clips: clips.into(),
        }
    }

    pub fn validate(&self) -> Result<(), StartupError> {
        if !TICK_RATE_RANGE.contains(&self.tick_rate) {
            return Err(StartupError::TickRate(self.tick_rate));
        }
        for path in [&self.level, &self.cuesheet, &self.clips] {
            std::fs::metadata(path).map_err(|source| StartupError::Read {
                path: path.clone(),
                source,
            })?;
        }
        Ok(())
    }
}

/// Everything loaded from disk that a show needs.
#[derive(Debug, Clone)]
pub struct Show {
    pub level: Arc<Level>,
    pub cuesheet: Arc<Cuesheet>,
    pub catalog: Arc<ClipCatalog>,
}

fn read(path: &Path) -> Result<String, StartupError> {
    std::fs::read_to_string(path).map_err(|source| StartupError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn invalid<E: ToString>(path: &Path, errors: Vec<E>) -> StartupError {
    StartupError::Invalid {
        path: path.to_path_buf(),
        diagnostics: errors.iter().map(|e| format!("  - {}", e.to_string())).collect(),
    }
}

pub fn load_level_and_cuesheet(level: &Path, cuesheet: &Path) -> Result<(Level, Cuesheet), StartupError> {
    let lvl = load_level(&read(level)?).map_err(|e| invalid(level, e))?;
    let cs = parse_cuesheet(&read(cuesheet)?, &lvl).map_err(|e| invalid(cuesheet, e))?;
    Ok((lvl, cs))
}

pub fn load_show(level: &Path, cuesheet: &Path, clips: &Path) -> Result<Show, StartupError> {
    let (lvl, cs) = load_level_and_cuesheet(level, cuesheet)?;
    let catalog = load_clip_catalog(&read(clips)?).map_err(|e| invalid(clips, e))?;
    let errors = check_clip_refs(&cs, &catalog);
    if !errors.is_empty() {
        return Err(invalid(cuesheet, errors));
    }
    Ok(Show {
        level: Arc::new(lvl),
        cuesheet: Arc::new(cs),
        catalog: Arc::new(catalog),
    })
}
