//! HTTP/WebSocket front end. Each connection gets a hello frame, then a
//! state frame every broadcast interval; its text frames are parsed into
//! commands and posted to the mailbox.

use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use arc_swap::ArcSwap;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State as Extract;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use tankbarrier::Scenario;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::time::MissedTickBehavior;

use crate::engine::{ClientId, ControlLoop, Engine, Mailbox, Snapshot};
use crate::protocol::{parse_command, Body, Frame, Hello, Rejection};
use crate::ServiceError;

/// Default state broadcast period.
pub const DEFAULT_BROADCAST_INTERVAL: Duration = Duration::from_millis(16);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub broadcast_interval: Duration,
    /// Wall-clock period of a control cycle; the scenario step when `None`.
    pub cycle_period: Option<Duration>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            broadcast_interval: DEFAULT_BROADCAST_INTERVAL,
            cycle_period: None,
        }
    }
}

struct Shared {
    mailbox: Arc<Mailbox>,
    snapshot: Arc<Snapshot>,
    hello: Hello,
    task_dim: usize,
    broadcast_interval: Duration,
    next_client: AtomicU64,
    shutdown: watch::Receiver<bool>,
}

/// A running control loop plus everything the network side needs.
pub struct LiveService {
    shared: Arc<Shared>,
    control: ControlLoop,
    shutdown: watch::Sender<bool>,
}

impl LiveService {
    /// Validates the scenario and starts the control loop.
    pub fn start(scenario: Scenario, config: ServiceConfig) -> Result<Self, ServiceError> {
        if config.broadcast_interval.is_zero() {
            return Err(ServiceError::Config(
                "broadcast interval must be positive".into(),
            ));
        }
        let engine = Engine::new(scenario)?;
        let period = config
            .cycle_period
            .unwrap_or_else(|| Duration::from_secs_f64(engine.simulation().dt()));
        if period.is_zero() {
            return Err(ServiceError::Config("cycle period must be positive".into()));
        }
        let hello = engine.hello(config.broadcast_interval);
        let task_dim = hello.task_dim;
        let snapshot = Arc::new(ArcSwap::from_pointee(engine.state()));
        let (mailbox, control_rx) = Mailbox::new();
        let mailbox = Arc::new(mailbox);
        let control = ControlLoop::spawn(
            engine,
            mailbox.clone(),
            control_rx,
            snapshot.clone(),
            period,
        );
        let (shutdown, shutdown_rx) = watch::channel(false);
        Ok(Self {
            shared: Arc::new(Shared {
                mailbox,
                snapshot,
                hello,
                task_dim,
                broadcast_interval: config.broadcast_interval,
                next_client: AtomicU64::new(1),
                shutdown: shutdown_rx,
            }),
            control,
            shutdown,
        })
    }

    pub fn hello(&self) -> &Hello {
        &self.shared.hello
    }

    /// Routes: `/ws` and `/` upgrade to the live protocol, `/health` answers
    /// `ok`, `/hello` returns the static description as JSON.
    pub fn router(&self) -> Router {
        Router::new()
            .route("/", get(upgrade))
            .route("/ws", get(upgrade))
            .route("/health", get(|| async { "ok" }))
            .route("/hello", get(hello))
            .with_state(self.shared.clone())
    }

    /// Serves until `shutdown` resolves, then closes every session and stops
    /// the control loop.
    pub async fn serve(
        self,
        listener: TcpListener,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> Result<Engine, ServiceError> {
        let notify = self.shutdown.clone();
        let router = self.router();
        axum::serve(listener, router)
            .with_graceful_shutdown(async move {
                shutdown.await;
                let _ = notify.send(true);
            })
            .await?;
        Ok(self.stop())
    }

    pub fn stop(self) -> Engine {
        let _ = self.shutdown.send(true);
        self.control.stop()
    }
}

async fn hello(Extract(shared): Extract<Arc<Shared>>) -> Json<Hello> {
    Json(shared.hello.clone())
}

async fn upgrade(ws: WebSocketUpgrade, Extract(shared): Extract<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| session(socket, shared))
}

struct Outbox {
    seq: u64,
}

impl Outbox {
    fn frame(&mut self, t_sim: f64, body: Body) -> Message {
        self.seq += 1;
        Message::Text(
            Frame {
                seq: self.seq,
                t_sim,
                body,
            }
            .to_text()
            .into(),
        )
    }
}

async fn session(socket: WebSocket, shared: Arc<Shared>) {
    let client: ClientId = shared.next_client.fetch_add(1, Ordering::Relaxed);
    tracing::info!(client, "connected");
    let (mut tx, mut rx) = socket.split();
    let mut out = Outbox { seq: 0 };
    let mut shutdown = shared.shutdown.clone();
    let mut ticker = tokio::time::interval(shared.broadcast_interval);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);

    let t0 = shared.snapshot.load().0;
    if tx
        .send(out.frame(t0, Body::Hello(shared.hello.clone())))
        .await
        .is_ok()
    {
        loop {
            let reply = tokio::select! {
                _ = ticker.tick() => {
                    let snap = shared.snapshot.load_full();
                    Some(out.frame(snap.0, Body::State(Box::new(snap.1.clone()))))
                }
                msg = rx.next() => match msg {
                    Some(Ok(Message::Text(text))) => {
                        let result = parse_command(&text).and_then(|c| {
                            c.validate(shared.task_dim).map_err(|message| Rejection { seq: None, message })
                        });
                        match result {
                            Ok(input) => {
                                shared.mailbox.post(client, input);
                                None
                            }
                            Err(Rejection { seq, message }) => {
                                // Echo the client's seq when it parsed.
                                let seq = seq.or_else(|| client_seq(&text));
                                let t = shared.snapshot.load().0;
                                Some(out.frame(t, Body::Error { message, in_reply_to: seq }))
                            }
                        }
                    }
                    Some(Ok(Message::Binary(_))) => {
                        let t = shared.snapshot.load().0;
                        Some(out.frame(t, Body::Error { message: "binary frames are not supported".into(), in_reply_to: None }))
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => None,
                },
                _ = shutdown.changed() => {
                    let _ = tx.send(Message::Close(None)).await;
                    break;
                }
            };
            if let Some(frame) = reply {
                if tx.send(frame).await.is_err() {
                    break;
                }
            }
        }
    }
    shared.mailbox.disconnected(client);
    tracing::info!(client, "disconnected");
}

fn client_seq(text: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(text)
        .ok()?
        .get("seq")?
        .as_u64()
}
