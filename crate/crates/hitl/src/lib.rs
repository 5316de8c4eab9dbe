//! Websocket server for the live mode.
//!
//! One tick thread owns the [`LiveSession`] and steps it at `hitl.tick_hz`.
//! Clients connect to `/ws`. Each one gets every frame through its own
//! bounded queue, and a slow client loses its oldest frames without holding
//! up anyone else. The first client to send a command becomes the steering
//! client until it disconnects. Everyone else may watch, but their commands
//! are refused with "session busy".

use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use atm_core::config::Config;
use atm_core::live::{AgentMode, ClientMessage, LiveError, LiveSession, RunState, ServerMessage};
use atm_core::world::Scenario;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};

struct Shared {
    frames: broadcast::Sender<Arc<str>>,
    commands: mpsc::UnboundedSender<ClientMessage>,
    /// Connection holding the steering session.
    owner: Mutex<Option<u64>>,
    next_id: AtomicU64,
    paused: AtomicBool,
    /// Last frame sent, for clients that join between ticks.
    latest: Mutex<Option<Arc<str>>>,
}

impl Shared {
    fn publish(&self, msg: &ServerMessage) {
        let text: Arc<str> = serde_json::to_string(msg).expect("messages serialize").into();
        if matches!(msg, ServerMessage::Frame(_)) {
            *self.latest.lock().unwrap_or_else(|p| p.into_inner()) = Some(text.clone());
        }
        // No receivers just means nobody is watching.
        let _ = self.frames.send(text);
    }
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    ticker: JoinHandle<()>,
}

impl Server {
    /// Binds the port and starts the tick loop. The session starts running.
    pub async fn bind(addr: SocketAddr, scenario: &Scenario, cfg: Arc<Config>, mode: AgentMode) -> Result<Self, BindError> {
        let session = LiveSession::new(scenario, cfg.clone(), mode)?;
        let listener = TcpListener::bind(addr).await?;
        let (frames, _) = broadcast::channel(cfg.hitl.client_queue);
        let (commands, inbox) = mpsc::unbounded_channel();
        let shared = Arc::new(Shared {
            frames,
            commands,
            owner: Mutex::new(None),
            next_id: AtomicU64::new(1),
            paused: AtomicBool::new(false),
            latest: Mutex::new(None),
        });
        let stop = Arc::new(AtomicBool::new(false));
        let ticker = {
            let (shared, stop) = (shared.clone(), stop.clone());
            std::thread::spawn(move || tick_loop(session, inbox, &shared, &stop))
        };
        Ok(Self {
            listener,
            shared,
            stop,
            ticker,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `shutdown` resolves, then stops the tick loop.
    pub async fn run_until(self, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        let app = Router::new()
            .route("/", get(|| async { "live session: connect a websocket to /ws\n" }))
            .route("/ws", get(upgrade))
            .with_state(self.shared.clone());
        let served = axum::serve(self.listener, app).with_graceful_shutdown(shutdown).await;
        self.stop.store(true, Ordering::Relaxed);
        let _ = tokio::task::spawn_blocking(move || self.ticker.join()).await;
        served
    }
}

#[derive(Debug)]
pub enum BindError {
    Session(LiveError),
    Io(std::io::Error),
}

impl std::fmt::Display for BindError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Session(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for BindError {}

impl From<LiveError> for BindError {
    fn from(e: LiveError) -> Self {
        Self::Session(e)
    }
}

impl From<std::io::Error> for BindError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

fn tick_loop(mut session: LiveSession, mut inbox: mpsc::UnboundedReceiver<ClientMessage>, shared: &Shared, stop: &AtomicBool) {
    let period = Duration::from_secs_f64(1.0 / session.tick_hz());
    shared.publish(&ServerMessage::Frame(session.frame()));
    let mut next = Instant::now() + period;
    while !stop.load(Ordering::Relaxed) {
        while let Ok(msg) = inbox.try_recv() {
            match session.apply(&msg) {
                Ok(state) => {
                    shared.paused.store(state == RunState::Paused, Ordering::Relaxed);
                    if msg == ClientMessage::Reset {
                        shared.publish(&ServerMessage::Frame(session.frame()));
                    }
                }
                Err(e) => shared.publish(&ServerMessage::error(e.to_string())),
            }
        }
        match session.tick() {
            Ok(Some(frame)) => shared.publish(&ServerMessage::Frame(frame)),
            Ok(None) => {}
            Err(e) => shared.publish(&ServerMessage::error(e.to_string())),
        }
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
            next += period;
        } else {
            // Overran: drop the missed ticks rather than bursting.
            next = now + period;
        }
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, shared))
}

fn send_text(msg: &ServerMessage) -> Message {
    Message::Text(serde_json::to_string(msg).expect("messages serialize").into())
}

/// What a command leaves the session in, for the acknowledgement.
fn state_after(msg: &ClientMessage, paused: bool) -> RunState {
    match msg {
        ClientMessage::Reset | ClientMessage::Pause => RunState::Paused,
        ClientMessage::Start => RunState::Running,
        ClientMessage::Steer(_) if paused => RunState::Paused,
        ClientMessage::Steer(_) => RunState::Running,
    }
}

/// Checks the message may be applied: claims the free session, refuses
/// commands while another client holds it.
fn admit(shared: &Shared, id: u64, token: &str, msg: &ClientMessage) -> Result<(), String> {
    if let ClientMessage::Steer(s) = msg {
        if s.session.as_deref().is_some_and(|t| t != token) {
            return Err("unknown session token".into());
        }
    }
    let mut owner = shared.owner.lock().unwrap_or_else(|p| p.into_inner());
    match *owner {
        Some(o) if o != id => Err("session busy".into()),
        _ => {
            *owner = Some(id);
            Ok(())
        }
    }
}

async fn client(mut socket: WebSocket, shared: Arc<Shared>) {
    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let token = format!("s{id}");
    let mut frames = shared.frames.subscribe();
    let hello = ServerMessage::Ack {
        state: if shared.paused.load(Ordering::Relaxed) {
            RunState::Paused
        } else {
            RunState::Running
        },
        session: Some(token.clone()),
    };
    let latest = shared.latest.lock().unwrap_or_else(|p| p.into_inner()).clone();
    let mut ok = socket.send(send_text(&hello)).await.is_ok();
    if let Some(frame) = latest {
        ok &= socket.send(Message::Text(frame.to_string().into())).await.is_ok();
    }
    while ok {
        tokio::select! {
            out = frames.recv() => match out {
                Ok(text) => ok = socket.send(Message::Text(text.to_string().into())).await.is_ok(),
                // This client fell behind; the oldest frames are gone.
                Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => ok = false,
            },
            incoming = socket.recv() => {
                let reply = match incoming {
                    Some(Ok(Message::Text(text))) => match serde_json::from_str::<ClientMessage>(&text) {
                        Ok(msg) => match admit(&shared, id, &token, &msg) {
                            Ok(()) => {
                                let paused = shared.paused.load(Ordering::Relaxed);
                                let ack = (!matches!(msg, ClientMessage::Steer(_))).then(|| ServerMessage::Ack {
                                    state: state_after(&msg, paused),
                                    session: Some(token.clone()),
                                });
                                let _ = shared.commands.send(msg);
                                ack
                            }
                            Err(e) => Some(ServerMessage::error(e)),
                        },
                        Err(e) => Some(ServerMessage::error(format!("malformed message: {e}"))),
                    },
                    Some(Ok(Message::Binary(_))) => Some(ServerMessage::error("expected a text message")),
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => {
                        ok = false;
                        None
                    }
                    Some(Ok(_)) => None,
                };
                if let Some(r) = reply {
                    ok &= socket.send(send_text(&r)).await.is_ok();
                }
            }
        }
    }
    let mut owner = shared.owner.lock().unwrap_or_else(|p| p.into_inner());
    if *owner == Some(id) {
        *owner = None;
    }
}
