//! The running service: socket readers feed a single engine task that ticks
//! at a fixed rate and fans snapshots out to WebSocket clients.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use regie_core::stagemath::SkeletonFrame;
use regie_core::world::{Command, Input, World};
use tokio::net::{TcpListener, UdpSocket};
use tokio::sync::{broadcast, mpsc, watch};
use tokio::task::JoinHandle;
use tokio::time::{Instant, MissedTickBehavior};

use crate::config::{load_show, ServiceConfig, Show, StartupError};
use crate::mocap::{MocapDecoder, MocapError};
use crate::osc::{decode_osc, encode_osc, inbound_input};
use crate::snapshot::{show_summary, snapshot, ServerMessage};

type Mailbox = Arc<Mutex<BTreeMap<String, SkeletonFrame>>>;
type Json = Arc<str>;

const BROADCAST_DEPTH: usize = 64;

/// Bound addresses and control of a started service.
pub struct ServiceHandle {
    pub mocap_addr: SocketAddr,
    pub osc_in_addr: SocketAddr,
    pub http_addr: SocketAddr,
    queue: mpsc::UnboundedSender<Input>,
    snapshots: broadcast::Sender<Json>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    /// Serialized server messages, one snapshot per tick.
    pub fn subscribe(&self) -> broadcast::Receiver<Json> {
        self.snapshots.subscribe()
    }

    /// Enqueues an input as if it had arrived on a socket.
    pub fn enqueue(&self, input: Input) {
        let _ = self.queue.send(input);
    }

    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        for task in self.tasks {
            let _ = task.await;
        }
    }
}

async fn bind_udp(what: &'static str, addr: SocketAddr) -> Result<UdpSocket, StartupError> {
    UdpSocket::bind(addr)
        .await
        .map_err(|source| StartupError::Bind { what, addr, source })
}

/// Binds every socket and starts the engine loop. Port 0 picks a free port;
/// the handle reports what was bound.
pub async fn start_service(config: &ServiceConfig, show: Show) -> Result<ServiceHandle, StartupError> {
    if !crate::config::TICK_RATE_RANGE.contains(&config.tick_rate) {
        return Err(StartupError::TickRate(config.tick_rate));
    }
    let world = World::new(show.cuesheet, show.level, show.catalog).map_err(|errors| StartupError::Invalid {
        path: config.clips.clone(),
        diagnostics: errors.iter().map(|e| format!("  - {e}")).collect(),
    })?;

    let mocap = bind_udp("mocap input", config.mocap).await?;
    let osc_in = bind_udp("OSC input", config.osc_in).await?;
    let out_bind: SocketAddr = if config.osc_out.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }
        .parse()
        .expect("literal address");
    let osc_out = bind_udp("OSC output", out_bind).await?;
    let listener = TcpListener::bind(config.serve).await.map_err(|source| StartupError::Bind {
        what: "client channel",
        addr: config.serve,
        source,
    })?;
    let addr_of = |r: std::io::Result<SocketAddr>| r.expect("bound socket has an address");
    let (mocap_addr, osc_in_addr, http_addr) = (
        addr_of(mocap.local_addr()),
        addr_of(osc_in.local_addr()),
        addr_of(listener.local_addr()),
    );

    let (queue, queue_rx) = mpsc::unbounded_channel();
    let (snapshots, _) = broadcast::channel(BROADCAST_DEPTH);
    let (shutdown, shutdown_rx) = watch::channel(false);
    let mailbox = Mailbox::default();
    let summary: Json = ServerMessage::Show(show_summary(&world)).to_json().into();
    let (latest_tx, latest_rx) = watch::channel(Json::from(""));
    let started = Instant::now();

    let engine = EngineLoop {
        world,
        inputs: queue_rx,
        mailbox: mailbox.clone(),
        osc_out,
        osc_out_addr: config.osc_out,
        snapshots: snapshots.clone(),
        latest: latest_tx,
        tick_rate: config.tick_rate,
    };
    let app = Router::new()
        .route("/ws", get(ws_route))
        .route("/snapshot", get(latest_snapshot))
        .with_state(ClientContext {
            queue: queue.clone(),
            snapshots: snapshots.clone(),
            latest: latest_rx,
            summary,
            shutdown: shutdown_rx.clone(),
        });
    let mut http_shutdown = shutdown_rx.clone();
    let tasks = vec![
        tokio::spawn(engine.run(shutdown_rx.clone())),
        tokio::spawn(mocap_reader(mocap, mailbox, shutdown_rx.clone())),
        tokio::spawn(osc_reader(osc_in, queue.clone(), started, shutdown_rx)),
        tokio::spawn(async move {
            let stop = async move {
                let _ = http_shutdown.changed().await;
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(stop).await {
                log::error!("client channel stopped: {e}");
            }
        }),
    ];
    log::info!("mocap on udp://{mocap_addr}, OSC in on udp://{osc_in_addr}, clients on ws://{http_addr}/ws");
    Ok(ServiceHandle {
        mocap_addr,
        osc_in_addr,
        http_addr,
        queue,
        snapshots,
        shutdown,
        tasks,
    })
}

/// Loads the show, runs until Ctrl-C, then shuts down cleanly.
pub async fn run_service(config: ServiceConfig) -> Result<(), StartupError> {
    config.validate()?;
    let show = load_show(&config.level, &config.cuesheet, &config.clips)?;
    let handle = start_service(&config, show).await?;
    if let Err(e) = tokio::signal::ctrl_c().await {
        log::error!("cannot wait for Ctrl-C: {e}");
    }
    log::info!("shutting down");
    handle.shutdown().await;
    Ok(())
}

struct EngineLoop {
    world: World,
    inputs: mpsc::UnboundedReceiver<Input>,
    mailbox: Mailbox,
    osc_out: UdpSocket,
    osc_out_addr: SocketAddr,
    snapshots: broadcast::Sender<Json>,
    latest: watch::Sender<Json>,
    tick_rate: u32,
}

impl EngineLoop {
    async fn run(mut self, mut shutdown: watch::Receiver<bool>) {
        let dt = 1.0 / f64::from(self.tick_rate);
        let mut interval = tokio::time::interval(Duration::from_secs_f64(dt));
        interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                _ = interval.tick() => {}
                _ = shutdown.changed() => break,
            }
            let mut inputs = Vec::new();
            while let Ok(input) = self.inputs.try_recv() {
                inputs.push(input);
            }
            let frames: Vec<SkeletonFrame> = std::mem::take(&mut *self.mailbox.lock().expect("mailbox poisoned"))
                .into_values()
                .collect();
            for msg in self.world.tick(inputs, frames, dt) {
                match encode_osc(&msg) {
                    Ok(bytes) => {
                        if let Err(e) = self.osc_out.send_to(&bytes, self.osc_out_addr).await {
                            log::warn!("OSC send to {} failed: {e}", self.osc_out_addr);
                        }
                    }
                    Err(e) => log::warn!("cannot encode {msg}: {e}"),
                }
            }
            let json: Json = ServerMessage::Snapshot(snapshot(&self.world)).to_json().into();
            self.latest.send_replace(json.clone());
            let _ = self.snapshots.send(json);
        }
    }
}

async fn mocap_reader(socket: UdpSocket, mailbox: Mailbox, mut shutdown: watch::Receiver<bool>) {
    let mut decoder = MocapDecoder::new();
    let mut buf = vec![0u8; 65536];
    loop {
        let n = tokio::select! {
            r = socket.recv_from(&mut buf) => match r {
                Ok((n, _)) => n,
                Err(e) => {
                    log::warn!("mocap receive failed: {e}");
                    continue;
                }
            },
            _ = shutdown.changed() => break,
        };
        for line in String::from_utf8_lossy(&buf[..n]).lines().filter(|l| !l.trim().is_empty()) {
            match decoder.decode_mocap_line(line) {
                Ok(frame) => {
                    mailbox
                        .lock()
                        .expect("mailbox poisoned")
                        .insert(frame.subject.clone(), frame);
                }
                Err(e @ MocapError::StaleFrame { .. }) => {
                    log::debug!("{e} ({} dropped so far)", decoder.stale_count())
                }
                Err(e) => log::warn!("{e}"),
            }
        }
    }
}

async fn osc_reader(
    socket: UdpSocket,
    queue: mpsc::UnboundedSender<Input>,
    started: Instant,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut buf = vec![0u8; 65536];
    loop {
        let (n, from) = tokio::select! {
            r = socket.recv_from(&mut buf) => match r {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("OSC receive failed: {e}");
                    continue;
                }
            },
            _ = shutdown.changed() => break,
        };
        let input = decode_osc(&buf[..n])
            .map_err(|e| e.to_string())
            .and_then(|msg| inbound_input(&msg, started.elapsed().as_secs_f64()).map_err(|e| e.to_string()));
        match input {
            Ok(input) => {
                let _ = queue.send(input);
            }
            Err(e) => log::warn!("OSC from {from}: {e}"),
        }
    }
}

#[derive(Clone)]
struct ClientContext {
    queue: mpsc::UnboundedSender<Input>,
    snapshots: broadcast::Sender<Json>,
    latest: watch::Receiver<Json>,
    summary: Json,
    shutdown: watch::Receiver<bool>,
}

async fn ws_route(ws: WebSocketUpgrade, State(ctx): State<ClientContext>) -> Response {
    ws.on_upgrade(move |socket| serve_client(socket, ctx))
}

async fn latest_snapshot(State(ctx): State<ClientContext>) -> Response {
    let body = ctx.latest.borrow().to_string();
    ([(axum::http::header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn text(json: &str) -> Message {
    Message::Text(json.into())
}

/// One client: show summary first, then every snapshot; commands flow back.
/// Any send failure drops this client only.
async fn serve_client(mut socket: WebSocket, mut ctx: ClientContext) {
    let mut snapshots = ctx.snapshots.subscribe();
    if socket.send(text(&ctx.summary)).await.is_err() {
        return;
    }
    let latest = ctx.latest.borrow().clone();
    if !latest.is_empty() && socket.send(text(&latest)).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            snap = snapshots.recv() => match snap {
                Ok(json) => {
                    if socket.send(text(&json)).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("client lagged by {n} snapshots"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(body))) => match serde_json::from_str::<Command>(&body) {
                    Ok(cmd) => {
                        let _ = ctx.queue.send(Input::Command(cmd));
                    }
                    Err(e) => {
                        let reply = ServerMessage::Error { message: format!("bad command: {e}") }.to_json();
                        if socket.send(text(&reply)).await.is_err() {
                            break;
                        }
                    }
                },
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
            _ = ctx.shutdown.changed() => break,
        }
    }
}
