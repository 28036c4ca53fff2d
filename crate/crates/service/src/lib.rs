//! Live teleoperation service.
//!
//! One operator at a time connects over plain TCP (one JSON message per line) or
//! WebSocket (one JSON message per text frame). Each connection gets a fresh
//! [`Session`] driven at the configured rate by a dedicated control thread. Input
//! messages reach the loop through a latest-value mailbox; telemetry leaves through
//! a bounded broadcast channel that drops frames when the client falls behind.

use std::fmt::Display;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{Sink, SinkExt, Stream, StreamExt};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio_util::codec::{FramedRead, FramedWrite, LinesCodec};

use rcm_core::config::{ConfigError, SessionFile};
use rcm_core::protocol::{CommandMessage, Decoder, ServerMessage};
use rcm_core::session::{CommandLog, Session};

/// Longest accepted input line (bytes).
pub const MAX_LINE: usize = 64 * 1024;
/// Telemetry frames buffered per client before the oldest are dropped.
pub const TELEMETRY_BUFFER: usize = 256;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("cannot create record directory {path}: {source}")]
    RecordDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub session: SessionFile,
    /// NDJSON over TCP.
    pub listen: SocketAddr,
    /// WebSocket endpoint, served at `/`.
    pub ws_listen: Option<SocketAddr>,
    /// Each finished session's command log is written here.
    pub record_dir: Option<PathBuf>,
}

/// Outcome of one operator session.
#[derive(Debug, Clone)]
pub struct SessionReport {
    pub id: u64,
    pub ticks: u64,
    /// Ticks that finished after their scheduled deadline.
    pub deadline_misses: u64,
    pub log: CommandLog,
    pub log_path: Option<PathBuf>,
    /// Set when the loop stopped on a simulation fault.
    pub fault: Option<String>,
}

struct Shared {
    file: SessionFile,
    rate: f64,
    decimation: u64,
    record_dir: Option<PathBuf>,
    operator: AtomicBool,
    next_id: AtomicU64,
    reports: mpsc::UnboundedSender<SessionReport>,
    shutdown: watch::Receiver<bool>,
}

/// Releases the operator slot when dropped.
struct OperatorSlot(Arc<Shared>);

impl OperatorSlot {
    fn claim(shared: &Arc<Shared>) -> Option<Self> {
        shared
            .operator
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| Self(shared.clone()))
    }
}

impl Drop for OperatorSlot {
    fn drop(&mut self) {
        self.0.operator.store(false, Ordering::Release);
    }
}

/// Latest message of each kind, waiting for the next tick.
#[derive(Default)]
struct Mailbox {
    slots: Mutex<[Option<CommandMessage>; 5]>,
}

impl Mailbox {
    fn put(&self, msg: CommandMessage) {
        let slot = match msg.command.kind() {
            "twist" => 0,
            "gripper" => 1,
            "pedal" => 2,
            "set_rcm" => 3,
            _ => 4,
        };
        self.slots.lock().expect("mailbox lock")[slot] = Some(msg);
    }

    fn take(&self) -> Vec<CommandMessage> {
        let mut out: Vec<_> = self
            .slots
            .lock()
            .expect("mailbox lock")
            .iter_mut()
            .filter_map(Option::take)
            .collect();
        out.sort_by_key(|m| m.seq);
        out
    }
}

pub struct Service {
    tcp: TcpListener,
    ws: Option<TcpListener>,
    shared: Arc<Shared>,
    shutdown: watch::Sender<bool>,
    reports: Option<mpsc::UnboundedReceiver<SessionReport>>,
}

impl Service {
    pub async fn bind(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let resolved = cfg.session.resolve()?;
        if let Some(dir) = &cfg.record_dir {
            std::fs::create_dir_all(dir).map_err(|source| ServiceError::RecordDir {
                path: dir.clone(),
                source,
            })?;
        }
        let bind = |addr: SocketAddr| async move {
            TcpListener::bind(addr)
                .await
                .map_err(|source| ServiceError::Bind { addr, source })
        };
        let tcp = bind(cfg.listen).await?;
        let ws = match cfg.ws_listen {
            Some(addr) => Some(bind(addr).await?),
            None => None,
        };
        let (reports_tx, reports_rx) = mpsc::unbounded_channel();
        let (shutdown, shutdown_rx) = watch::channel(false);
        Ok(Self {
            tcp,
            ws,
            shared: Arc::new(Shared {
                file: cfg.session,
                rate: resolved.rate,
                decimation: resolved.telemetry_decimation as u64,
                record_dir: cfg.record_dir,
                operator: AtomicBool::new(false),
                next_id: AtomicU64::new(1),
                reports: reports_tx,
                shutdown: shutdown_rx,
            }),
            shutdown,
            reports: Some(reports_rx),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.tcp.local_addr()
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws.as_ref().and_then(|l| l.local_addr().ok())
    }

    /// Reports of finished sessions, in completion order. Available once.
    pub fn take_reports(&mut self) -> Option<mpsc::UnboundedReceiver<SessionReport>> {
        self.reports.take()
    }

    /// Serves until `shutdown` resolves, then ends any active session.
    pub async fn run(self, shutdown: impl std::future::Future<Output = ()> + Send) -> Result<(), ServiceError> {
        let Service {
            tcp,
            ws,
            shared,
            shutdown: stop,
            ..
        } = self;
        let ws_task = ws.map(|listener| {
            let app = Router::new()
                .route("/", get(ws_upgrade))
                .with_state(shared.clone());
            let mut rx = shared.shutdown.clone();
            tokio::spawn(async move {
                axum::serve(listener, app)
                    .with_graceful_shutdown(async move {
                        let _ = rx.wait_for(|s| *s).await;
                    })
                    .await
            })
        });
        let accept = async {
            loop {
                let (stream, peer) = tcp.accept().await?;
                let shared = shared.clone();
                tokio::spawn(async move {
                    let _ = stream.set_nodelay(true);
                    let (r, w) = stream.into_split();
                    let incoming = FramedRead::new(r, LinesCodec::new_with_max_length(MAX_LINE))
                        .map(|item| item.map_err(|e| e.to_string()));
                    let outgoing = FramedWrite::new(w, LinesCodec::new());
                    tracing::info!(%peer, "tcp operator connected");
                    serve_operator(shared, incoming, outgoing).await;
                    tracing::info!(%peer, "tcp operator disconnected");
                });
            }
            #[allow(unreachable_code)]
            Ok::<(), std::io::Error>(())
        };
        tokio::select! {
            r = accept => r?,
            _ = shutdown => {}
        }
        let _ = stop.send(true);
        if let Some(task) = ws_task {
            if let Ok(r) = task.await {
                r?;
            }
        }
        // Give an active session a moment to write its log.
        let deadline = Instant::now() + Duration::from_secs(2);
        while shared.operator.load(Ordering::Acquire) && Instant::now() < deadline {
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        Ok(())
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket: WebSocket| async move {
        let (sink, stream) = socket.split();
        let incoming = stream
            .take_while(|m| futures::future::ready(matches!(m, Ok(m) if !matches!(m, Message::Close(_)))))
            .filter_map(|m| async move {
                match m {
                    Ok(Message::Text(t)) => Some(Ok(t.to_string())),
                    Ok(Message::Binary(b)) => {
                        Some(String::from_utf8(b.to_vec()).map_err(|e| e.to_string()))
                    }
                    _ => None,
                }
            });
        let outgoing = sink.with(|line: String| async move {
            Ok::<_, axum::Error>(Message::Text(line.into()))
        });
        tracing::info!("websocket operator connected");
        serve_operator(shared, Box::pin(incoming), Box::pin(outgoing)).await;
        tracing::info!("websocket operator disconnected");
    })
}

/// Runs one operator connection to completion.
async fn serve_operator<S, K>(shared: Arc<Shared>, mut incoming: S, mut outgoing: K)
where
    S: Stream<Item = Result<String, String>> + Unpin,
    K: Sink<String> + Unpin + Send + 'static,
    K::Error: Display,
{
    let Some(slot) = OperatorSlot::claim(&shared) else {
        let busy = ServerMessage::error("busy", "another operator is connected", None);
        let _ = outgoing.send(busy.to_line()).await;
        let _ = outgoing.close().await;
        return;
    };
    let session = match Session::recorded(&shared.file) {
        Ok(s) => s,
        Err(e) => {
            let _ = outgoing.send(ServerMessage::error(e.code(), e.to_string(), None).to_line()).await;
            return;
        }
    };
    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let mailbox = Arc::new(Mailbox::default());
    let stop = Arc::new(AtomicBool::new(false));
    let (telemetry, mut telemetry_rx) = broadcast::channel::<String>(TELEMETRY_BUFFER);
    let (replies, mut replies_rx) = mpsc::channel::<String>(64);

    let loop_handle = {
        let (mailbox, stop, shared) = (mailbox.clone(), stop.clone(), shared.clone());
        let (done_tx, done_rx) = oneshot::channel();
        std::thread::Builder::new()
            .name("control".into())
            .spawn(move || {
                let outcome = control_loop(
                    session,
                    &mailbox,
                    &telemetry,
                    &stop,
                    shared.rate,
                    shared.decimation,
                );
                let _ = done_tx.send(outcome);
            })
            .expect("spawn control thread");
        done_rx
    };

    let writer = tokio::spawn(async move {
        let mut replies_open = true;
        loop {
            let line = tokio::select! {
                biased;
                r = replies_rx.recv(), if replies_open => match r {
                    Some(line) => line,
                    None => { replies_open = false; continue; }
                },
                t = telemetry_rx.recv() => match t {
                    Ok(line) => line,
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            };
            if outgoing.send(line).await.is_err() {
                break;
            }
        }
        while let Ok(line) = replies_rx.try_recv() {
            let _ = outgoing.send(line).await;
        }
        let _ = outgoing.close().await;
    });

    let mut shutdown = shared.shutdown.clone();
    let reader = async {
        let mut decoder = Decoder::new();
        while let Some(item) = incoming.next().await {
            let reply = match item {
                Ok(line) => match decoder.decode(&line) {
                    Ok(msg) => {
                        mailbox.put(msg);
                        None
                    }
                    Err(e) => Some(ServerMessage::error(e.code(), e.to_string(), None)),
                },
                Err(e) => Some(ServerMessage::error("syntax", e, None)),
            };
            if let Some(r) = reply {
                if replies.send(r.to_line()).await.is_err() {
                    break;
                }
            }
        }
    };
    tokio::select! {
        _ = reader => {}
        _ = shutdown.wait_for(|s| *s) => {}
        _ = wait_until(&stop) => {}
    }
    stop.store(true, Ordering::Release);
    drop(replies);
    let outcome = loop_handle.await.expect("control loop panicked");
    let _ = writer.await;

    let log = outcome.session.command_log().cloned().expect("recorded session");
    let log_path = shared.record_dir.as_ref().and_then(|dir| {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let path = dir.join(format!("session-{stamp}-{id}.ndjson"));
        match std::fs::write(&path, log.to_ndjson()) {
            Ok(()) => Some(path),
            Err(e) => {
                tracing::error!(path = %path.display(), "cannot write command log: {e}");
                None
            }
        }
    });
    tracing::info!(
        id,
        ticks = log.ticks,
        misses = outcome.deadline_misses,
        "session finished"
    );
    let _ = shared.reports.send(SessionReport {
        id,
        ticks: log.ticks,
        deadline_misses: outcome.deadline_misses,
        log,
        log_path,
        fault: outcome.fault,
    });
    drop(slot);
}

async fn wait_until(flag: &AtomicBool) {
    while !flag.load(Ordering::Acquire) {
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

struct LoopOutcome {
    session: Session,
    deadline_misses: u64,
    fault: Option<String>,
}

/// Fixed-rate loop; runs until `stop` is set or the simulation faults.
fn control_loop(
    mut session: Session,
    mailbox: &Mailbox,
    telemetry: &broadcast::Sender<String>,
    stop: &AtomicBool,
    rate: f64,
    decimation: u64,
) -> LoopOutcome {
    let period = Duration::from_secs_f64(1.0 / rate);
    let mut deadline = Instant::now() + period;
    let mut misses = 0;
    let mut fault = None;
    while !stop.load(Ordering::Acquire) {
        for msg in mailbox.take() {
            if let Err(e) = session.apply(&msg) {
                let _ = telemetry.send(ServerMessage::error(e.code(), e.to_string(), Some(msg.seq)).to_line());
            }
        }
        match session.tick() {
            Ok(frame) => {
                if session.ticks().is_multiple_of(decimation) {
                    let _ = telemetry.send(ServerMessage::Telemetry(frame).to_line());
                }
            }
            Err(e) => {
                let _ = telemetry.send(ServerMessage::error(e.code(), e.to_string(), None).to_line());
                fault = Some(e.to_string());
                stop.store(true, Ordering::Release);
                break;
            }
        }
        let now = Instant::now();
        if now > deadline {
            misses += 1;
            if now - deadline > period * 10 {
                deadline = now;
            }
        } else {
            sleep_until(deadline);
        }
        deadline += period;
    }
    LoopOutcome {
        session,
        deadline_misses: misses,
        fault,
    }
}

/// Sleeps to just short of `deadline`, then yields until it passes; plain sleeps
/// overshoot by more than a tick period often enough to matter at 1 kHz.
fn sleep_until(deadline: Instant) {
    const SPIN: Duration = Duration::from_micros(300);
    let now = Instant::now();
    if deadline > now + SPIN {
        std::thread::sleep(deadline - now - SPIN);
    }
    while Instant::now() < deadline {
        std::thread::yield_now();
    }
}
