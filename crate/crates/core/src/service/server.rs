//! Websocket server for live sessions. One task owns the session; each client
//! gets a reader and a writer task. Plain HTTP requests on the same port get
//! static files from the configured asset directory.

use super::campaign::{write_log, CampaignError, CampaignOutput, RECORDS_DIR};
use super::config::SessionConfig;
use super::live::{ClientId, LiveSession, Outgoing};
use super::rig::RigError;
use super::wire::{decode, encode, WireMessage};
use crate::capture::{CaptureError, Persister};
use futures_util::{SinkExt, StreamExt};
use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio_tungstenite::tungstenite::Message;

const EVENT_QUEUE: usize = 64;
const INBOX: usize = 256;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Rig(#[from] RigError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

enum Inbound {
    Connect { id: ClientId, outbox: Outbox },
    Message { id: ClientId, msg: WireMessage },
    Disconnect { id: ClientId },
}

/// Session side of a client connection. Frames overwrite each other so a
/// slow client only ever gets the newest one; other messages queue.
#[derive(Clone)]
struct Outbox {
    frame: watch::Sender<Option<WireMessage>>,
    events: mpsc::Sender<WireMessage>,
}

pub struct Server {
    listener: TcpListener,
    cfg: SessionConfig,
    out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeSummary {
    pub output: CampaignOutput,
    pub persisted: Vec<PathBuf>,
}

impl Server {
    pub async fn bind(cfg: SessionConfig, out_dir: PathBuf) -> Result<Self, ServeError> {
        let listener = TcpListener::bind(&cfg.listen).await.map_err(|source| ServeError::Bind { addr: cfg.listen.clone(), source })?;
        Ok(Self { listener, cfg, out_dir })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serve until `shutdown` resolves; labelled records go to
    /// `<out>/records` and the session log to `<out>`.
    pub async fn run(self, shutdown: impl Future<Output = ()>) -> Result<ServeSummary, ServeError> {
        let Server { listener, cfg, out_dir } = self;
        let records_root = out_dir.join(RECORDS_DIR);
        std::fs::create_dir_all(&records_root)?;
        let persister = Persister::spawn(records_root);
        let mut session = LiveSession::new(&cfg)?;
        let (tx, mut rx) = mpsc::channel::<Inbound>(INBOX);
        let static_dir = cfg.static_dir.clone();
        let acceptor = tokio::spawn(async move {
            let mut next_id: ClientId = 1;
            while let Ok((stream, _)) = listener.accept().await {
                let (tx, static_dir) = (tx.clone(), static_dir.clone());
                let id = next_id;
                next_id += 1;
                tokio::spawn(async move {
                    let _ = handle_connection(stream, id, tx, static_dir.as_deref()).await;
                });
            }
        });

        let mut outboxes: HashMap<ClientId, Outbox> = HashMap::new();
        let mut ticker = tokio::time::interval(Duration::from_millis(cfg.tick_ms));
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        tokio::pin!(shutdown);
        let mut records = Vec::new();
        loop {
            let out: Outgoing = tokio::select! {
                _ = &mut shutdown => break,
                ev = rx.recv() => match ev {
                    Some(Inbound::Connect { id, outbox }) => {
                        session.connect(id);
                        outboxes.insert(id, outbox);
                        Vec::new()
                    }
                    Some(Inbound::Message { id, msg }) => session.handle(id, msg),
                    Some(Inbound::Disconnect { id }) => {
                        outboxes.remove(&id);
                        session.disconnect(id)
                    }
                    None => break,
                },
                _ = ticker.tick() => session.tick()?,
            };
            dispatch(&outboxes, out);
            for record in session.take_labeled() {
                persister.submit(record.clone())?;
                records.push(record);
            }
        }
        dispatch(&outboxes, session.end());
        acceptor.abort();
        let persisted = persister.finish()?;
        let output = CampaignOutput { log: session.rig().log.clone(), records, uncaptured: session.rig().uncaptured() };
        write_log(&output, &out_dir)?;
        Ok(ServeSummary { output, persisted })
    }
}

fn dispatch(outboxes: &HashMap<ClientId, Outbox>, out: Outgoing) {
    for (id, msg) in out {
        let Some(outbox) = outboxes.get(&id) else { continue };
        match msg {
            WireMessage::StateFrame(_) => {
                outbox.frame.send_replace(Some(msg));
            }
            // a client that stops reading loses events rather than stalling the loop
            other => {
                let _ = outbox.events.try_send(other);
            }
        }
    }
}

async fn handle_connection(stream: TcpStream, id: ClientId, inbox: mpsc::Sender<Inbound>, static_dir: Option<&Path>) -> Result<(), ServeError> {
    let head = peek_request(&stream).await?;
    if !head.to_ascii_lowercase().contains("upgrade: websocket") {
        return serve_static(stream, &head, static_dir).await;
    }
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(_) => return Ok(()),
    };
    let (mut sink, mut source) = ws.split();
    let (frame_tx, mut frame_rx) = watch::channel(None);
    let (event_tx, mut event_rx) = mpsc::channel(EVENT_QUEUE);
    if inbox.send(Inbound::Connect { id, outbox: Outbox { frame: frame_tx, events: event_tx.clone() } }).await.is_err() {
        return Ok(());
    }

    let writer = tokio::spawn(async move {
        let mut seq = 0u64;
        loop {
            let msg = tokio::select! {
                biased;
                ev = event_rx.recv() => match ev {
                    Some(m) => m,
                    None => break,
                },
                changed = frame_rx.changed() => {
                    if changed.is_err() {
                        break;
                    }
                    match frame_rx.borrow_and_update().clone() {
                        Some(m) => m,
                        None => continue,
                    }
                }
            };
            seq += 1;
            if sink.send(Message::text(encode(seq, &msg))).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(msg)) = source.next().await {
        match msg {
            Message::Text(text) => match decode(text.as_str()) {
                Ok(env) => {
                    if inbox.send(Inbound::Message { id, msg: env.msg }).await.is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = event_tx.try_send(WireMessage::Rejected { reason: e.to_string() });
                }
            },
            Message::Close(_) => break,
            _ => {}
        }
    }
    let _ = inbox.send(Inbound::Disconnect { id }).await;
    drop(event_tx);
    writer.abort();
    Ok(())
}

/// Wait until the request head is complete without consuming it, so the
/// websocket handshake can still read it.
async fn peek_request(stream: &TcpStream) -> Result<String, ServeError> {
    let mut buf = vec![0u8; 8192];
    for _ in 0..1000 {
        let n = stream.peek(&mut buf).await?;
        let head = &buf[..n];
        if n == 0 || n == buf.len() || head.windows(4).any(|w| w == b"\r\n\r\n") {
            return Ok(String::from_utf8_lossy(head).into_owned());
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

const FALLBACK_INDEX: &str = "<!doctype html><title>aeye</title><p>aeye live session. Point <code>static_dir</code> at the built browser client; it speaks aeye-wire/1 on this address.</p>";

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// Map a request path onto a file under `root`, refusing anything that
/// climbs out of it.
pub fn resolve_static(root: &Path, request_path: &str) -> Option<PathBuf> {
    let rel = request_path.split(['?', '#']).next().unwrap_or("/").trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(rel))
}

async fn serve_static(mut stream: TcpStream, head: &str, root: Option<&Path>) -> Result<(), ServeError> {
    let end = head.find("\r\n\r\n").map_or(head.len(), |i| i + 4);
    let mut discard = vec![0u8; end];
    stream.read_exact(&mut discard).await?;
    let mut parts = head.lines().next().unwrap_or("").split_whitespace();
    let (method, path) = (parts.next().unwrap_or(""), parts.next().unwrap_or("/"));
    let (status, ctype, body): (&str, &str, Vec<u8>) = if method != "GET" {
        ("405 Method Not Allowed", "text/plain", b"method not allowed".to_vec())
    } else {
        match root {
            None if path == "/" || path == "/index.html" => ("200 OK", "text/html; charset=utf-8", FALLBACK_INDEX.as_bytes().to_vec()),
            None => ("404 Not Found", "text/plain", b"not found".to_vec()),
            Some(root) => match resolve_static(root, path) {
                Some(file) => match tokio::fs::read(&file).await {
                    Ok(bytes) => ("200 OK", content_type(&file), bytes),
                    Err(_) => ("404 Not Found", "text/plain", b"not found".to_vec()),
                },
                None => ("400 Bad Request", "text/plain", b"bad path".to_vec()),
            },
        }
    };
    let header = format!("HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len());
    stream.write_all(header.as_bytes()).await?;
    stream.write_all(&body).await?;
    stream.shutdown().await?;
    Ok(())
}

/// Bind, serve until ctrl-c, then flush.
pub fn serve_blocking(cfg: SessionConfig, out_dir: PathBuf) -> Result<ServeSummary, ServeError> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let server = Server::bind(cfg, out_dir).await?;
        eprintln!("listening on ws://{}", server.local_addr()?);
        server
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_paths_stay_inside_the_root() {
        let root = Path::new("/srv/ui");
        assert_eq!(resolve_static(root, "/"), Some(root.join("index.html")));
        assert_eq!(resolve_static(root, "/app.js?v=2"), Some(root.join("app.js")));
        assert_eq!(resolve_static(root, "/../etc/passwd"), None);
        assert_eq!(resolve_static(root, "/a/../../b"), None);
    }
}
