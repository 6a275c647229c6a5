use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use tungstenite::{Message, WebSocket};
use vlaforge_core::eval::ActionSource;
use vlaforge_core::{ActionChunk, Error, Observation, Result};

use crate::wire::{decode_response, encode_predict, encode_simple, Reply, ServerInfo};

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// Extra attempts after a transport failure, each on a new connection.
    pub retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            retries: 3,
            backoff: Duration::from_millis(100),
            timeout: Duration::from_secs(30),
        }
    }
}

/// Blocking client for one policy server.
///
/// Head state cached by the server (the GR00T slow pathway) belongs to
/// the connection, so a reconnect after a transport failure starts that
/// state afresh.
pub struct PolicyClient {
    url: String,
    host_port: String,
    opts: ClientOptions,
    socket: Option<WebSocket<TcpStream>>,
    next_id: u64,
}

fn host_port(addr: &str) -> String {
    let a = addr.strip_prefix("ws://").unwrap_or(addr);
    a.trim_end_matches('/').to_string()
}

impl PolicyClient {
    /// `addr` is `host:port` or `ws://host:port`.
    pub fn connect(addr: &str, opts: ClientOptions) -> Result<Self> {
        let hp = host_port(addr);
        let mut c = PolicyClient {
            url: format!("ws://{hp}/"),
            host_port: hp,
            opts,
            socket: None,
            next_id: 0,
        };
        c.ensure_open()?;
        Ok(c)
    }

    fn ensure_open(&mut self) -> Result<&mut WebSocket<TcpStream>> {
        if self.socket.is_none() {
            let t = |e: std::io::Error| Error::Transport(format!("{}: {e}", self.host_port));
            let addr = self
                .host_port
                .to_socket_addrs()
                .map_err(t)?
                .next()
                .ok_or_else(|| Error::Transport(format!("{} does not resolve", self.host_port)))?;
            let stream = TcpStream::connect_timeout(&addr, self.opts.timeout).map_err(t)?;
            stream.set_nodelay(true).map_err(t)?;
            stream.set_read_timeout(Some(self.opts.timeout)).map_err(t)?;
            stream.set_write_timeout(Some(self.opts.timeout)).map_err(t)?;
            let (ws, _) = tungstenite::client(self.url.as_str(), stream)
                .map_err(|e| Error::Transport(format!("handshake with {}: {e}", self.host_port)))?;
            self.socket = Some(ws);
        }
        Ok(self.socket.as_mut().expect("just opened"))
    }

    fn exchange(&mut self, frame: &[u8]) -> Result<Vec<u8>> {
        let ws = self.ensure_open()?;
        let tr = |e: tungstenite::Error| Error::Transport(e.to_string());
        ws.send(Message::Binary(frame.to_vec())).map_err(tr)?;
        loop {
            match ws.read().map_err(tr)? {
                Message::Binary(b) => return Ok(b),
                Message::Close(_) => return Err(Error::Transport("server closed the connection".into())),
                _ => continue,
            }
        }
    }

    fn call(&mut self, build: impl Fn(&str) -> Vec<u8>) -> Result<Reply> {
        self.next_id += 1;
        let id = format!("c{}", self.next_id);
        let frame = build(&id);
        let mut last = None;
        for attempt in 0..=self.opts.retries {
            if attempt > 0 {
                std::thread::sleep(self.opts.backoff);
            }
            match self.exchange(&frame) {
                Ok(bytes) => {
                    let r = decode_response(&bytes).map_err(Error::Protocol)?;
                    if r.request_id != id {
                        return Err(Error::Protocol(format!(
                            "response for `{}` while waiting for `{id}`",
                            r.request_id
                        )));
                    }
                    return match r.reply {
                        Reply::Error(e) => Err(Error::Remote {
                            code: e.code,
                            message: e.message,
                        }),
                        ok => Ok(ok),
                    };
                }
                Err(e) => {
                    self.socket = None;
                    last = Some(e);
                }
            }
        }
        Err(Error::Transport(format!(
            "gave up after {} attempts: {}",
            self.opts.retries + 1,
            last.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    /// Normalized `k × 32` chunk, exactly as the server's policy produced it.
    pub fn predict(&mut self, obs: &Observation, seed: u64) -> Result<ActionChunk> {
        match self.call(|id| encode_predict(id, obs, seed))? {
            Reply::Actions { chunk, .. } => Ok(chunk),
            other => Err(Error::Protocol(format!("expected actions, got {other:?}"))),
        }
    }

    pub fn health(&mut self) -> Result<()> {
        self.call(|id| encode_simple("health", id)).map(drop)
    }

    pub fn info(&mut self) -> Result<ServerInfo> {
        match self.call(|id| encode_simple("info", id))? {
            Reply::Info { info, .. } => Ok(info),
            other => Err(Error::Protocol(format!("expected info, got {other:?}"))),
        }
    }

    /// Tells the server a new episode begins on this connection.
    pub fn reset_session(&mut self) -> Result<()> {
        self.call(|id| encode_simple("reset", id)).map(drop)
    }

    /// Sends arbitrary bytes and returns the decoded reply (for probing).
    pub fn raw(&mut self, frame: &[u8]) -> Result<crate::wire::Response> {
        let b = self.exchange(frame)?;
        decode_response(&b).map_err(Error::Protocol)
    }
}

impl ActionSource for PolicyClient {
    fn query(&mut self, obs: &Observation, seed: u64) -> Result<ActionChunk> {
        self.predict(obs, seed)
    }

    fn reset(&mut self) -> Result<()> {
        self.reset_session()
    }
}

impl Drop for PolicyClient {
    fn drop(&mut self) {
        if let Some(ws) = self.socket.as_mut() {
            let _ = ws.close(None);
            let _ = ws.flush();
        }
    }
}
