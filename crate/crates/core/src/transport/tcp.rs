//! Stream socket backend.
//!
//! The master accepts connections on a background thread and runs one reader
//! thread per connection. Decoded frames are funneled into a single channel
//! so the master sees them one at a time in arrival order.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::codec::{encode, read_frame, Message};
use crate::master::{Incoming, MasterTransport, PeerId};

type Writers = Arc<Mutex<BTreeMap<PeerId, TcpStream>>>;

pub struct TcpMasterTransport {
    local_addr: SocketAddr,
    start: Instant,
    rx: Receiver<(PeerId, Message)>,
    writers: Writers,
}

impl TcpMasterTransport {
    pub fn bind<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let local_addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let writers: Writers = Arc::default();
        let accept_writers = Arc::clone(&writers);
        thread::Builder::new()
            .name("mw-accept".into())
            .spawn(move || accept_loop(listener, tx, accept_writers))?;
        Ok(Self {
            local_addr,
            start: Instant::now(),
            rx,
            writers,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<(PeerId, Message)>, writers: Writers) {
    let mut next_peer = 0u64;
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let peer = PeerId(next_peer);
        next_peer += 1;
        let _ = stream.set_nodelay(true);
        let Ok(writer) = stream.try_clone() else { continue };
        writers.lock().expect("writer map").insert(peer, writer);
        let tx = tx.clone();
        let writers = Arc::clone(&writers);
        let spawned = thread::Builder::new()
            .name(format!("mw-peer-{}", peer.0))
            .spawn(move || read_loop(peer, stream, tx, writers));
        if spawned.is_err() {
            log_drop(peer, "could not spawn reader");
        }
    }
}

fn read_loop(peer: PeerId, mut stream: TcpStream, tx: Sender<(PeerId, Message)>, writers: Writers) {
    // a malformed frame or a closed socket ends the connection; the master
    // learns about it through the heartbeat timeout
    while let Ok(msg) = read_frame(&mut stream) {
        if tx.send((peer, msg)).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
    writers.lock().expect("writer map").remove(&peer);
}

fn log_drop(peer: PeerId, why: &str) {
    eprintln!("mw: dropping peer {}: {why}", peer.0);
}

impl MasterTransport for TcpMasterTransport {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn recv_until(&mut self, deadline_s: f64) -> Incoming {
        let wait = (deadline_s - self.now()).max(0.0);
        match self.rx.recv_timeout(Duration::from_secs_f64(wait)) {
            Ok((peer, msg)) => Incoming::Message(peer, msg),
            Err(RecvTimeoutError::Timeout) => Incoming::Timeout,
            Err(RecvTimeoutError::Disconnected) => {
                thread::sleep(Duration::from_secs_f64(wait));
                Incoming::Closed
            }
        }
    }

    fn send(&mut self, to: PeerId, msg: &Message) {
        let Ok(frame) = encode(msg) else { return };
        let mut writers = self.writers.lock().expect("writer map");
        if let Some(stream) = writers.get_mut(&to) {
            if stream.write_all(&frame).is_err() {
                writers.remove(&to);
            }
        }
    }
}

/// Worker end of a socket connection. Clones share the socket so a
/// heartbeat thread can send while the main thread waits on a receive.
#[derive(Clone)]
pub struct TcpWorkerLink {
    writer: Arc<Mutex<TcpStream>>,
}

impl TcpWorkerLink {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<(Self, TcpStream)> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok((
            Self {
                writer: Arc::new(Mutex::new(stream)),
            },
            reader,
        ))
    }

    pub fn send(&self, msg: &Message) -> io::Result<()> {
        let frame = encode(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.writer.lock().expect("socket writer").write_all(&frame)
    }

    pub fn shutdown(&self) {
        let _ = self.writer.lock().expect("socket writer").shutdown(Shutdown::Both);
    }
}
