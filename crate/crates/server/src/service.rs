//! WebSocket transport and the paced simulation owner.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch};
use tokio::time::Instant;

use crate::protocol::{parse_request, Frame, Request, E_HALTED, E_PROTOCOL};
use crate::session::Session;

pub const PATH: &str = "/experiment";

/// Frames waiting for a slow client before it starts losing them.
const BACKLOG: usize = 8192;

/// A frame on its way out, for one client or for all of them.
#[derive(Debug, Clone)]
struct Outgoing {
    to: Option<u64>,
    text: Arc<str>,
}

enum Inbound {
    Connected(u64),
    Request(u64, Request),
}

#[derive(Clone)]
struct Shared {
    inbound: mpsc::UnboundedSender<Inbound>,
    outgoing: broadcast::Sender<Outgoing>,
    closing: watch::Receiver<bool>,
    next_client: Arc<AtomicU64>,
}

/// Serve `session` on `listener` until a client sends `shutdown`.
pub async fn serve(session: Session, listener: TcpListener) -> std::io::Result<Session> {
    let (inbound, rx) = mpsc::unbounded_channel();
    let (outgoing, _) = broadcast::channel(BACKLOG);
    let (close_tx, closing) = watch::channel(false);
    let shared = Shared { inbound, outgoing: outgoing.clone(), closing: closing.clone(), next_client: Arc::default() };
    let app = Router::new().route(PATH, get(upgrade)).with_state(shared);

    let owner = tokio::spawn(own(session, rx, outgoing));
    let mut done = closing.clone();
    let server = axum::serve(listener, app).with_graceful_shutdown(async move {
        let _ = done.wait_for(|c| *c).await;
    });
    let server = tokio::spawn(async move { server.await });

    let session = owner.await.map_err(std::io::Error::other)?;
    let _ = close_tx.send(true);
    server.await.map_err(std::io::Error::other)??;
    Ok(session)
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> Response {
    ws.on_upgrade(move |socket| client(socket, shared))
}

async fn client(socket: WebSocket, shared: Shared) {
    let id = shared.next_client.fetch_add(1, Ordering::Relaxed);
    let mut frames = shared.outgoing.subscribe();
    if shared.inbound.send(Inbound::Connected(id)).is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    let mut closing = shared.closing.clone();

    let writer = async move {
        loop {
            tokio::select! {
                got = frames.recv() => match got {
                    Ok(f) if f.to.is_none_or(|to| to == id) => {
                        if sink.send(Message::Text(f.text.as_ref().into())).await.is_err() {
                            break;
                        }
                    }
                    Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => {}
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                _ = closing.changed() => {
                    // bye and anything else queued before the close still goes out
                    while let Ok(f) = frames.try_recv() {
                        if f.to.is_none_or(|to| to == id) && sink.send(Message::Text(f.text.as_ref().into())).await.is_err() {
                            break;
                        }
                    }
                    break;
                }
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    };

    let inbound = shared.inbound.clone();
    let outgoing = shared.outgoing.clone();
    let reader = async move {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(text) => match parse_request(text.as_str()) {
                    Ok(req) => {
                        if inbound.send(Inbound::Request(id, req)).is_err() {
                            break;
                        }
                    }
                    Err(why) => {
                        let frame = Frame::error(None, E_PROTOCOL, why);
                        let _ = outgoing.send(Outgoing { to: Some(id), text: frame.to_text().into() });
                    }
                },
                Message::Close(_) => break,
                _ => {}
            }
        }
    };

    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
}

/// Pacing anchor: wall time at which tick `tick` was due.
struct Clock {
    at: Instant,
    tick: u64,
    period: Duration,
}

impl Clock {
    fn new(s: &Session) -> Clock {
        let period = Duration::from_secs_f64(s.world().config().dt / s.speed());
        Clock { at: Instant::now(), tick: s.world().tick(), period }
    }

    fn due(&self, tick: u64) -> Instant {
        let n = u32::try_from(tick.saturating_sub(self.tick)).unwrap_or(u32::MAX);
        self.at + self.period * n
    }
}

/// The single owner of the simulation. Commands are applied between ticks
/// in arrival order.
async fn own(mut s: Session, mut rx: mpsc::UnboundedReceiver<Inbound>, out: broadcast::Sender<Outgoing>) -> Session {
    let send = |to: Option<u64>, f: &Frame| {
        let _ = out.send(Outgoing { to, text: f.to_text().into() });
    };
    let mut clock = Clock::new(&s);
    loop {
        let inbound = if s.running() {
            let due = clock.due(s.world().tick());
            tokio::select! {
                biased;
                m = rx.recv() => m,
                _ = tokio::time::sleep_until(due) => {
                    let behind = Instant::now().saturating_duration_since(due).as_secs_f64() * 1000.0;
                    match s.advance(behind, false) {
                        Ok(t) => {
                            if let Some(f) = &t.snapshot {
                                send(None, f);
                            }
                            if let Some(h) = &t.halt {
                                send(None, h);
                            }
                        }
                        Err(e) => send(None, &Frame::error(None, E_HALTED, e.to_string())),
                    }
                    continue;
                }
            }
        } else {
            rx.recv().await
        };
        let Some(inbound) = inbound else { return s };
        match inbound {
            Inbound::Connected(id) => send(Some(id), &s.hello()),
            Inbound::Request(id, req) => {
                let (was_running, speed, tick) = (s.running(), s.speed(), s.world().tick());
                let applied = s.apply(req);
                for f in &applied.broadcast {
                    send(None, f);
                }
                if let Some(r) = &applied.reply {
                    send(Some(id), r);
                }
                if applied.shutdown {
                    send(None, &Frame::Bye);
                    return s;
                }
                // resuming, stepping or a new speed restarts the pacing
                if !was_running || s.speed() != speed || s.world().tick() != tick {
                    clock = Clock::new(&s);
                }
            }
        }
    }
}
