use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::thread::JoinHandle;
use std::time::Instant;

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{oneshot, watch};
use tokio::task::JoinSet;
use tokio_tungstenite::tungstenite::Message;
use vlaforge_core::policy::{HeadSession, Policy};
use vlaforge_core::{ActionChunk, Error, Observation, Result, UNIFIED_ACTION_DIM};

use crate::wire::{
    decode_request, encode_reply, Reply, RequestKind, ServerInfo, WireError, INFERENCE_ERROR,
    OVERLOADED,
};

/// Environment variable that overrides the configured port.
pub const PORT_ENV: &str = "VLAFORGE_PORT";

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Predict requests waiting for the model beyond this are refused
    /// with `overloaded`.
    pub queue_depth: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { queue_depth: 64 }
    }
}

/// Port precedence: explicit flag, then `VLAFORGE_PORT`, then config.
pub fn resolve_port(flag: Option<u16>, configured: u16) -> Result<u16> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var(PORT_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{PORT_ENV}=`{v}` is not a port"))),
        Err(_) => Ok(configured),
    }
}

struct Job {
    obs: Observation,
    seed: u64,
    session: HeadSession,
    reply: oneshot::Sender<(Result<ActionChunk>, HeadSession)>,
}

/// A running server. Dropping it without calling [`ServerHandle::shutdown`]
/// leaves the service running until the process exits.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<watch::Sender<bool>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// `ws://host:port` for clients.
    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    /// Stops accepting, lets every connection finish its current request,
    /// then returns once the model thread has exited.
    pub fn shutdown(mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(true);
        }
        self.join();
    }

    /// Blocks until the service stops on its own (it never does unless
    /// shut down from another handle clone or the process is signalled).
    pub fn wait(mut self) {
        self.join();
    }

    fn join(&mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn summary(policy: &Policy) -> ServerInfo {
    let c = policy.config();
    ServerInfo {
        backbone_id: c.backbone_id.clone(),
        head_id: c.head_id.clone(),
        k: c.k,
        dims: UNIFIED_ACTION_DIM,
        params: policy.params().len(),
    }
}

/// Single consumer: every prediction runs here, one at a time.
fn model_loop(policy: Policy, jobs: Receiver<Job>) {
    while let Ok(job) = jobs.recv() {
        policy.head().swap_session(job.session);
        let out = catch_unwind(AssertUnwindSafe(|| policy.predict(&job.obs, job.seed)))
            .unwrap_or_else(|_| Err(Error::Prediction("policy panicked".into())))
            .map(|p| p.normalized_actions);
        let session = policy.head().swap_session(None);
        let _ = job.reply.send((out, session));
    }
}

/// Binds `addr` and starts serving `policy` on a background runtime.
pub fn serve(policy: Policy, addr: &str, opts: ServeOptions) -> Result<ServerHandle> {
    if opts.queue_depth == 0 {
        return Err(Error::Config("queue_depth must be positive".into()));
    }
    let info = summary(&policy);
    let (jobs_tx, jobs_rx) = sync_channel::<Job>(opts.queue_depth);
    let model = std::thread::Builder::new()
        .name("vlaforge-model".into())
        .spawn(move || model_loop(policy, jobs_rx))
        .map_err(|e| Error::Transport(format!("spawning model thread: {e}")))?;

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Transport(format!("starting runtime: {e}")))?;
    let std_listener = std::net::TcpListener::bind(addr)
        .map_err(|e| Error::Transport(format!("binding {addr}: {e}")))?;
    std_listener
        .set_nonblocking(true)
        .map_err(|e| Error::Transport(e.to_string()))?;
    let bound = std_listener
        .local_addr()
        .map_err(|e| Error::Transport(e.to_string()))?;
    let (stop_tx, stop_rx) = watch::channel(false);

    let thread = std::thread::Builder::new()
        .name("vlaforge-server".into())
        .spawn(move || {
            rt.block_on(async move {
                let listener = TcpListener::from_std(std_listener).expect("listener registers with the runtime");
                accept_loop(listener, jobs_tx, info, stop_rx).await;
            });
            drop(rt);
            let _ = model.join();
        })
        .map_err(|e| Error::Transport(format!("spawning server thread: {e}")))?;
    Ok(ServerHandle {
        addr: bound,
        stop: Some(stop_tx),
        thread: Some(thread),
    })
}

async fn accept_loop(listener: TcpListener, jobs: SyncSender<Job>, info: ServerInfo, mut stop: watch::Receiver<bool>) {
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            accepted = listener.accept() => {
                if let Ok((stream, _)) = accepted {
                    conns.spawn(connection(stream, jobs.clone(), info.clone(), stop.clone()));
                }
            }
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
    drop(listener);
    while conns.join_next().await.is_some() {}
    // The last sender goes here, which ends the model loop.
    drop(jobs);
}

async fn connection(stream: TcpStream, jobs: SyncSender<Job>, info: ServerInfo, mut stop: watch::Receiver<bool>) {
    let _ = stream.set_nodelay(true);
    let Ok(mut ws) = tokio_tungstenite::accept_async(stream).await else {
        return;
    };
    let mut session: HeadSession = None;
    loop {
        let msg = tokio::select! {
            _ = stop.changed() => break,
            m = ws.next() => m,
        };
        let bytes = match msg {
            Some(Ok(Message::Binary(b))) => b,
            Some(Ok(Message::Text(_))) => {
                let e = WireError::new(crate::wire::BAD_REQUEST, "frames must be binary MessagePack");
                if ws.send(Message::Binary(encode_reply("", &Reply::Error(e)))).await.is_err() {
                    break;
                }
                continue;
            }
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
            Some(Ok(_)) => continue,
        };
        let t0 = Instant::now();
        let ms = || t0.elapsed().as_secs_f64() * 1e3;
        let (id, reply) = match decode_request(&bytes) {
            Err((id, e)) => (id, Reply::Error(e)),
            Ok(req) => {
                let reply = match req.kind {
                    RequestKind::Health => Reply::Ack { server_ms: ms() },
                    RequestKind::Reset => {
                        session = None;
                        Reply::Ack { server_ms: ms() }
                    }
                    RequestKind::Info => Reply::Info {
                        info: info.clone(),
                        server_ms: ms(),
                    },
                    RequestKind::Predict { obs, seed } => {
                        let (tx, rx) = oneshot::channel();
                        let job = Job {
                            obs,
                            seed,
                            session: session.take(),
                            reply: tx,
                        };
                        match jobs.try_send(job) {
                            Err(TrySendError::Full(job)) => {
                                session = job.session;
                                Reply::Error(WireError::new(OVERLOADED, "inference queue is full"))
                            }
                            Err(TrySendError::Disconnected(_)) => {
                                Reply::Error(WireError::new(INFERENCE_ERROR, "model thread is gone"))
                            }
                            Ok(()) => match rx.await {
                                Ok((out, s)) => {
                                    session = s;
                                    match out {
                                        Ok(chunk) => Reply::Actions { chunk, server_ms: ms() },
                                        Err(e) => Reply::Error(WireError::new(INFERENCE_ERROR, e.to_string())),
                                    }
                                }
                                Err(_) => Reply::Error(WireError::new(INFERENCE_ERROR, "model thread is gone")),
                            },
                        }
                    }
                };
                (req.request_id, reply)
            }
        };
        if ws.send(Message::Binary(encode_reply(&id, &reply))).await.is_err() {
            break;
        }
    }
    let _ = ws.close(None).await;
}
