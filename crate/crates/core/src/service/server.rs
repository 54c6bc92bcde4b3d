//! TCP (length-prefixed JSON) and WebSocket (JSON text frames) transports.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::thread;

use tungstenite::Message;

use super::protocol::{Connection, Envelope};

/// Largest accepted frame body.
pub const MAX_FRAME: usize = 16 << 20;

/// Reads one frame: a 4-byte big-endian length, then that many bytes.
/// `None` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds the limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len())
        .ok()
        .filter(|&n| n as usize <= MAX_FRAME)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

fn save_logs(logs: Vec<String>, dir: Option<&Path>) {
    let Some(dir) = dir else { return };
    for text in logs {
        let id = text
            .lines()
            .next()
            .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
            .and_then(|v| v.get("session_id").and_then(|s| s.as_str()).map(str::to_string))
            .unwrap_or_else(|| "session".into());
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        let path = dir.join(format!("{id}-{stamp}.jsonl"));
        if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, text)) {
            log::error!("cannot write {}: {e}", path.display());
        }
    }
}

/// Serves one TCP client until it disconnects.
pub fn serve_tcp_stream(mut stream: TcpStream, log_dir: Option<&Path>) -> io::Result<()> {
    let mut conn = Connection::new();
    let result = (|| {
        while let Some(body) = read_frame(&mut stream)? {
            let text = String::from_utf8_lossy(&body);
            for reply in conn.handle_text(&text) {
                write_frame(&mut stream, reply.to_json().as_bytes())?;
            }
            if conn.should_close() {
                break;
            }
        }
        Ok(())
    })();
    save_logs(conn.close(), log_dir);
    result
}

/// Serves one WebSocket client until it disconnects.
pub fn serve_ws_stream(stream: TcpStream, log_dir: Option<&Path>) -> io::Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
    let mut conn = Connection::new();
    let result = loop {
        let text = match ws.read() {
            Ok(Message::Text(t)) => t.as_str().to_string(),
            Ok(Message::Binary(b)) => String::from_utf8_lossy(&b).into_owned(),
            Ok(Message::Close(_)) => break Ok(()),
            Ok(_) => continue,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break Ok(()),
            Err(e) => break Err(io::Error::other(e.to_string())),
        };
        let replies: Vec<Envelope> = conn.handle_text(&text);
        if let Err(e) = replies.iter().try_for_each(|r| ws.send(Message::text(r.to_json()))) {
            break Err(io::Error::other(e.to_string()));
        }
        if conn.should_close() {
            let _ = ws.close(None);
            break Ok(());
        }
    };
    save_logs(conn.close(), log_dir);
    result
}

fn accept_loop(listener: TcpListener, log_dir: Option<PathBuf>, ws: bool) {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let dir = log_dir.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            log::info!("client {peer} connected");
            let r = if ws { serve_ws_stream(stream, dir.as_deref()) } else { serve_tcp_stream(stream, dir.as_deref()) };
            match r {
                Ok(()) => log::info!("client {peer} disconnected"),
                Err(e) => log::warn!("client {peer}: {e}"),
            }
        });
    }
}

/// Accepts TCP clients on `listener`, one thread each. Never returns.
pub fn run_tcp(listener: TcpListener, log_dir: Option<PathBuf>) {
    accept_loop(listener, log_dir, false)
}

/// Accepts WebSocket clients on `listener`, one thread each. Never returns.
pub fn run_ws(listener: TcpListener, log_dir: Option<PathBuf>) {
    accept_loop(listener, log_dir, true)
}

/// Binds the TCP listener and, when given, the WebSocket one, then serves forever.
pub fn serve(bind: impl ToSocketAddrs, ws_bind: Option<impl ToSocketAddrs>, log_dir: Option<PathBuf>) -> io::Result<()> {
    let tcp = TcpListener::bind(bind)?;
    log::info!("listening on tcp://{}", tcp.local_addr()?);
    if let Some(addr) = ws_bind {
        let ws = TcpListener::bind(addr)?;
        log::info!("listening on ws://{}", ws.local_addr()?);
        let dir = log_dir.clone();
        thread::spawn(move || run_ws(ws, dir));
    }
    run_tcp(tcp, log_dir);
    Ok(())
}
