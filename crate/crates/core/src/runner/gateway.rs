//! Newline-delimited JSON over TCP between a session and its consoles.
//!
//! Server frames: `state`, `prob`, `sample` and `error`, each carrying
//! `"v": 1`. The only client frame is `{"v": 1, "type": "tap"}`; `v` may be
//! omitted.

use crate::agent::AgentState;
use crate::error::{Error, Result};
use crate::learner::Origin;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    State {
        v: u32,
        state: AgentState,
        tick: u64,
    },
    Prob {
        v: u32,
        tick: u64,
        value: f64,
    },
    Sample {
        v: u32,
        tick: u64,
        t: u64,
        y: u8,
        origin: Origin,
    },
    Error {
        v: u32,
        message: String,
    },
}

impl ServerFrame {
    pub fn state(state: AgentState, tick: u64) -> Self {
        ServerFrame::State {
            v: PROTOCOL_VERSION,
            state,
            tick,
        }
    }

    pub fn prob(tick: u64, value: f64) -> Self {
        ServerFrame::Prob {
            v: PROTOCOL_VERSION,
            tick,
            value,
        }
    }

    pub fn sample(tick: u64, t: u64, y: u8, origin: Origin) -> Self {
        ServerFrame::Sample {
            v: PROTOCOL_VERSION,
            tick,
            t,
            y,
            origin,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        ServerFrame::Error {
            v: PROTOCOL_VERSION,
            message: message.into(),
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frames serialize");
        s.push('\n');
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClientFrame {
    Tap,
}

#[derive(Deserialize)]
struct RawClientFrame {
    #[serde(rename = "type")]
    kind: String,
    v: Option<u32>,
}

pub fn parse_client_frame(line: &str) -> Result<ClientFrame> {
    let raw: RawClientFrame =
        serde_json::from_str(line).map_err(|e| Error::parse("client frame", e.to_string()))?;
    if let Some(v) = raw.v {
        if v != PROTOCOL_VERSION {
            return Err(Error::parse("client frame", format!("unsupported protocol version {v}")));
        }
    }
    match raw.kind.as_str() {
        "tap" => Ok(ClientFrame::Tap),
        other => Err(Error::parse("client frame", format!("unknown frame type {other:?}"))),
    }
}

type Clients = Arc<Mutex<Vec<(u64, TcpStream)>>>;

/// Listening side of the gateway. Taps arrive on `taps()`; frames go to
/// every connected console.
pub struct Gateway {
    addr: SocketAddr,
    clients: Clients,
    taps: Receiver<ClientFrame>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    /// Frame sent to consoles as they connect.
    greeting: Arc<Mutex<Option<ServerFrame>>>,
}

impl Gateway {
    pub fn bind(addr: &str) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let clients: Clients = Arc::default();
        let (tx, taps) = channel();
        let stop = Arc::new(AtomicBool::new(false));
        let greeting: Arc<Mutex<Option<ServerFrame>>> = Arc::default();
        let acceptor = {
            let (clients, stop, greeting) = (clients.clone(), stop.clone(), greeting.clone());
            std::thread::spawn(move || accept_loop(listener, clients, tx, stop, greeting))
        };
        Ok(Gateway {
            addr,
            clients,
            taps,
            stop,
            acceptor: Some(acceptor),
            greeting,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.clients.lock().len()
    }

    /// Taps received since the last call.
    pub fn drain_taps(&self) -> Vec<ClientFrame> {
        self.taps.try_iter().collect()
    }

    /// Blocks up to `timeout` for the next tap.
    pub fn wait_tap(&self, timeout: Duration) -> Option<ClientFrame> {
        self.taps.recv_timeout(timeout).ok()
    }

    pub fn set_greeting(&self, frame: ServerFrame) {
        *self.greeting.lock() = Some(frame);
    }

    /// Sends `frames` to every console, dropping the ones that fail.
    pub fn broadcast(&self, frames: &[ServerFrame]) {
        if frames.is_empty() {
            return;
        }
        let payload: String = frames.iter().map(ServerFrame::to_line).collect();
        self.clients
            .lock()
            .retain_mut(|(_, stream)| stream.write_all(payload.as_bytes()).is_ok());
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for (_, s) in self.clients.lock().drain(..) {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    clients: Clients,
    taps: Sender<ClientFrame>,
    stop: Arc<AtomicBool>,
    greeting: Arc<Mutex<Option<ServerFrame>>>,
) {
    let mut next_id = 0u64;
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                let Ok(mut writer) = stream.try_clone() else { continue };
                let Ok(reader) = stream.try_clone() else { continue };
                let id = next_id;
                next_id += 1;
                let hello = greeting.lock().clone();
                if let Some(f) = hello {
                    if writer.write_all(f.to_line().as_bytes()).is_err() {
                        continue;
                    }
                }
                clients.lock().push((id, writer));
                let (clients, taps) = (clients.clone(), taps.clone());
                std::thread::spawn(move || read_loop(id, reader, clients, taps));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
            Err(_) => std::thread::sleep(Duration::from_millis(10)),
        }
    }
}

fn read_loop(id: u64, stream: TcpStream, clients: Clients, taps: Sender<ClientFrame>) {
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match parse_client_frame(&line) {
            Ok(frame) => {
                if taps.send(frame).is_err() {
                    break;
                }
            }
            Err(e) => {
                let reply = ServerFrame::error(e.to_string()).to_line();
                let mut guard = clients.lock();
                if let Some((_, s)) = guard.iter_mut().find(|(i, _)| *i == id) {
                    let _ = s.write_all(reply.as_bytes());
                }
            }
        }
    }
    clients.lock().retain(|(i, _)| *i != id);
}
