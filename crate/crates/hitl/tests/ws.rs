use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use atm_core::config::Config;
use atm_core::live::{AgentMode, Frame, FrameEvent, RunState, ServerMessage};
use atm_core::world::Scenario;
use atm_hitl::Server;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio::sync::oneshot;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

const HITL: &str = include_str!("../../../scenarios/hitl.toml");

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Running {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Running {
    async fn start(mode: AgentMode) -> Self {
        let sc = Scenario::from_toml(HITL).unwrap();
        let server = Server::bind("127.0.0.1:0".parse().unwrap(), &sc, Arc::new(Config::default()), mode)
            .await
            .unwrap();
        let addr = server.local_addr().unwrap();
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(server.run_until(async {
            let _ = rx.await;
        }));
        Self {
            addr,
            stop: Some(tx),
            task,
        }
    }

    /// Connects and reads the greeting, which carries the session token.
    async fn connect(&self) -> (Ws, String) {
        let mut ws = connect_async(format!("ws://{}/ws", self.addr)).await.unwrap().0;
        let ServerMessage::Ack { session: Some(token), .. } = next(&mut ws).await else {
            panic!("expected the greeting ack");
        };
        (ws, token)
    }

    async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.await.unwrap().unwrap();
    }
}

async fn next(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = timeout(Duration::from_secs(5), ws.next()).await.expect("server silent").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn next_frame(ws: &mut Ws) -> Frame {
    loop {
        if let ServerMessage::Frame(f) = next(ws).await {
            return f;
        }
    }
}

/// Skips frames until a non-frame message arrives.
async fn reply(ws: &mut Ws) -> ServerMessage {
    loop {
        match next(ws).await {
            ServerMessage::Frame(_) => {}
            other => return other,
        }
    }
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::Text(text.into())).await.unwrap();
}

fn person(f: &Frame) -> (f64, f64) {
    let p = f.entities.iter().find(|e| e.id == "person").unwrap();
    (p.x, p.y)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn frames_stream_without_commands() {
    let server = Running::start(AgentMode::Inline).await;
    let (mut ws, _) = server.connect().await;
    let first = next_frame(&mut ws).await;
    let mut last_t = first.t;
    for _ in 0..10 {
        let f = next_frame(&mut ws).await;
        assert!(f.t > last_t);
        last_t = f.t;
        assert_eq!(person(&f), person(&first));
        let ids: Vec<&str> = f.entities.iter().map(|e| e.id.as_str()).collect();
        assert!(f.subjective_visible_ids.iter().all(|id| ids.contains(&id.as_str())));
        assert!(!f.subjective_visible_ids.iter().any(|id| id == "ball"));
    }
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn steering_is_clamped_and_applied_within_two_ticks() {
    let server = Running::start(AgentMode::Inline).await;
    let (mut ws, _) = server.connect().await;
    let before = next_frame(&mut ws).await;
    send(&mut ws, r#"{"type":"steer","vx":5.0,"vy":0.0}"#).await;
    let mut frames = Vec::new();
    for _ in 0..4 {
        frames.push(next_frame(&mut ws).await);
    }
    let moved = frames.iter().position(|f| person(f) != person(&before)).expect("person never moved");
    // The frame in flight when the command landed, then at most two ticks.
    assert!(moved <= 2, "moved after {} frames", moved + 1);
    for w in frames[moved..].windows(2) {
        let (a, b) = (person(&w[0]), person(&w[1]));
        let step = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let dt = w[1].t - w[0].t;
        assert!(step <= 0.5 * dt + 1e-9, "step {step} over {dt}");
    }
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn second_client_cannot_steer_but_can_watch() {
    let server = Running::start(AgentMode::Inline).await;
    let (mut a, _) = server.connect().await;
    let (mut b, token) = server.connect().await;
    send(&mut a, r#"{"type":"start"}"#).await;
    assert!(matches!(reply(&mut a).await, ServerMessage::Ack { .. }));
    send(&mut b, r#"{"type":"steer","vx":0.5,"vy":0.0}"#).await;
    let ServerMessage::Error { message } = reply(&mut b).await else {
        panic!("expected an error");
    };
    assert_eq!(message, "session busy");
    next_frame(&mut b).await;

    // Once the steering client leaves, the session is free again.
    a.close(None).await.unwrap();
    drop(a);
    tokio::time::sleep(Duration::from_millis(100)).await;
    send(&mut b, r#"{"type":"start"}"#).await;
    assert!(matches!(reply(&mut b).await, ServerMessage::Ack { state: RunState::Running, .. }));
    send(&mut b, r#"{"type":"steer","vx":0.5,"vy":0.0,"session":"nope"}"#).await;
    assert!(matches!(reply(&mut b).await, ServerMessage::Error { .. }));
    send(&mut b, &format!(r#"{{"type":"steer","vx":0.5,"vy":0.0,"session":"{token}"}}"#)).await;
    let start = next_frame(&mut b).await;
    let mut moved = false;
    for _ in 0..5 {
        moved |= person(&next_frame(&mut b).await) != person(&start);
    }
    assert!(moved);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_messages_get_errors_and_keep_the_connection() {
    let server = Running::start(AgentMode::Inline).await;
    let (mut ws, _) = server.connect().await;
    for bad in ["not json", r#"{"type":"fly"}"#, r#"{"type":"steer","vx":"fast"}"#] {
        send(&mut ws, bad).await;
        assert!(matches!(reply(&mut ws).await, ServerMessage::Error { .. }), "{bad}");
    }
    // Still connected and streaming.
    next_frame(&mut ws).await;
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_reset_and_start() {
    let server = Running::start(AgentMode::Inline).await;
    let (mut ws, _) = server.connect().await;
    next_frame(&mut ws).await;
    send(&mut ws, r#"{"type":"pause"}"#).await;
    assert!(matches!(reply(&mut ws).await, ServerMessage::Ack { state: RunState::Paused, .. }));
    // Let frames already in flight arrive, then expect silence.
    tokio::time::sleep(Duration::from_millis(100)).await;
    while timeout(Duration::from_millis(10), ws.next()).await.is_ok() {}
    assert!(timeout(Duration::from_millis(150), ws.next()).await.is_err(), "frame while paused");

    send(&mut ws, r#"{"type":"reset"}"#).await;
    assert!(matches!(reply(&mut ws).await, ServerMessage::Ack { state: RunState::Paused, .. }));
    let f = next_frame(&mut ws).await;
    assert_eq!(f.t, 0.0);
    let sc = Scenario::from_toml(HITL).unwrap();
    let home = sc.entity("person").unwrap().pose;
    assert_eq!(person(&f), (home.x, home.y));

    send(&mut ws, r#"{"type":"start"}"#).await;
    assert!(matches!(reply(&mut ws).await, ServerMessage::Ack { state: RunState::Running, .. }));
    let f = next_frame(&mut ws).await;
    assert!((f.t - 0.05).abs() < 1e-9, "resumed at {}", f.t);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn driving_at_the_couch_shows_risk_then_action() {
    let server = Running::start(AgentMode::Threaded).await;
    let (mut ws, _) = server.connect().await;
    send(&mut ws, r#"{"type":"steer","vx":0.5,"vy":0.0}"#).await;
    let mut events = Vec::new();
    let mut plan_after_action = false;
    // The person reaches the ball about three seconds in.
    for _ in 0..120 {
        let f = next_frame(&mut ws).await;
        if f.event != FrameEvent::None {
            events.push(f.event);
        }
        if events.contains(&FrameEvent::ActionCommitted) && !f.robot_plan.is_empty() {
            plan_after_action = true;
            break;
        }
    }
    let risk = events.iter().position(|e| *e == FrameEvent::RiskDetected);
    let action = events.iter().position(|e| *e == FrameEvent::ActionCommitted);
    assert!(matches!((risk, action), (Some(r), Some(a)) if r < a), "{events:?}");
    assert!(plan_after_action);
    server.stop().await;
}
