//! Serve mode: a websocket gateway that fans run frames out to dashboard
//! clients and funnels their decisions back into the run loop.
//!
//! Each client gets HELLO and the latest SNAPSHOT on connect, then every
//! frame published after that. Registration and broadcast share one lock
//! with the snapshot, so a client never misses or double-counts a frame.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use beam_core::engine::{Engine, Rejection};
use beam_core::event::Event;
use beam_core::frames::{Frame, FrameBuilder};
use beam_core::run::{QueuedDecision, RunObserver};
use beam_core::sim::World;
use tungstenite::{Message, WebSocket};

const POLL: Duration = Duration::from_millis(10);

#[derive(Default)]
struct Shared {
    hello: String,
    snapshot: String,
    clients: Vec<Sender<String>>,
    decisions: Vec<QueuedDecision>,
    workers: Vec<JoinHandle<()>>,
    closed: bool,
}

pub struct Gateway {
    addr: SocketAddr,
    shared: Mutex<Shared>,
}

impl Gateway {
    pub fn bind(port: u16) -> io::Result<Arc<Gateway>> {
        let listener = TcpListener::bind(("127.0.0.1", port))?;
        let gw = Arc::new(Gateway {
            addr: listener.local_addr()?,
            shared: Mutex::new(Shared::default()),
        });
        let accept = gw.clone();
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                accept.admit(stream);
            }
        });
        Ok(gw)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.shared.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn admit(self: &Arc<Self>, stream: TcpStream) {
        let mut ws = match tungstenite::accept(stream) {
            Ok(ws) => ws,
            Err(e) => {
                eprintln!("serve: handshake failed: {e}");
                return;
            }
        };
        if let Err(e) = ws.get_ref().set_read_timeout(Some(POLL)) {
            eprintln!("serve: {e}");
            return;
        }
        let (tx, rx) = mpsc::channel();
        let mut st = self.lock();
        if st.closed {
            let _ = ws.close(None);
            return;
        }
        for line in [&st.hello, &st.snapshot] {
            if !line.is_empty() {
                let _ = tx.send(line.clone());
            }
        }
        st.clients.push(tx);
        let gw = self.clone();
        let worker = thread::spawn(move || gw.session(ws, rx));
        st.workers.push(worker);
    }

    /// One client: forward frames out, decisions in, until either side closes.
    fn session(&self, mut ws: WebSocket<TcpStream>, rx: Receiver<String>) {
        loop {
            loop {
                match rx.try_recv() {
                    Ok(line) => {
                        if ws.send(Message::Text(line)).is_err() {
                            return;
                        }
                    }
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => {
                        let _ = ws.close(None);
                        let _ = ws.flush();
                        return;
                    }
                }
            }
            match ws.read() {
                Ok(Message::Text(line)) => match Frame::parse_client(&line) {
                    Ok(Some(d)) => self.lock().decisions.push(d),
                    Ok(None) => {}
                    Err(e) => eprintln!("serve: dropped client frame: {e}"),
                },
                Ok(Message::Close(_)) => return,
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(_) => return,
            }
        }
    }

    fn broadcast(&self, frames: &[Frame], snapshot: Option<Frame>, hello: Option<Frame>) {
        let lines: Vec<String> = frames.iter().map(Frame::encode).collect();
        let mut st = self.lock();
        if let Some(h) = hello {
            st.hello = h.encode();
        }
        st.clients
            .retain(|c| lines.iter().all(|l| c.send(l.clone()).is_ok()));
        if let Some(s) = snapshot {
            st.snapshot = s.encode();
        }
    }

    fn take_decisions(&self) -> Vec<QueuedDecision> {
        std::mem::take(&mut self.lock().decisions)
    }

    /// Stop accepting clients, flush what is queued and close every session.
    pub fn shutdown(&self) {
        let workers = {
            let mut st = self.lock();
            st.closed = true;
            st.clients.clear();
            std::mem::take(&mut st.workers)
        };
        for w in workers {
            let _ = w.join();
        }
    }
}

pub struct ServeObserver {
    gateway: Arc<Gateway>,
    builder: FrameBuilder,
    scenario: String,
    model: String,
    pace: Duration,
}

impl ServeObserver {
    pub fn new(gateway: Arc<Gateway>, scenario: &str, model: &str, pace: Duration) -> Self {
        ServeObserver {
            gateway,
            builder: FrameBuilder::new(),
            scenario: scenario.into(),
            model: model.into(),
            pace,
        }
    }
}

impl RunObserver for ServeObserver {
    fn started(&mut self, engine: &Engine, world: &World, events: &[Arc<Event>]) {
        let hello = self.builder.hello(&self.scenario, &self.model);
        let frames = self.builder.frames(engine, events, &[]);
        let snapshot = self.builder.snapshot(engine, world);
        self.gateway.broadcast(&frames, Some(snapshot), Some(hello));
    }

    fn poll_decisions(&mut self) -> Vec<QueuedDecision> {
        self.gateway.take_decisions()
    }

    fn ticked(&mut self, engine: &Engine, world: &World, events: &[Arc<Event>], rejections: &[Rejection]) {
        let frames = self.builder.frames(engine, events, rejections);
        let snapshot = self.builder.snapshot(engine, world);
        self.gateway.broadcast(&frames, Some(snapshot), None);
        if !self.pace.is_zero() {
            thread::sleep(self.pace);
        }
    }
}
