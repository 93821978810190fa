//! A node and a miner client over TCP, for running a small live network.

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::codec::{Address, CodecError, Hash256};
use crate::mainchain::MainBlock;
use crate::miner::MinerLink;
use crate::network::tcp::{read_frame, write_frame, TcpTransport};
use crate::network::{Envelope, FragmentRequest, Hello, MsgKind, NodeId, Transport};
use crate::node::{NoRemote, Node};
use crate::sharding::ShardAssignment;
use crate::subchain::{SubchainFragment, SubchainState};

/// Reads `address = balance` lines; `#` starts a comment.
pub fn parse_allocations(text: &str) -> Result<BTreeMap<Address, u64>, CodecError> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (a, b) = line.split_once('=').ok_or(CodecError::Malformed("expected address = balance"))?;
        let balance = b.trim().parse().map_err(|_| CodecError::Malformed("bad balance"))?;
        out.insert(a.trim().parse()?, balance);
    }
    Ok(out)
}

pub fn load_allocations(path: Option<&Path>) -> io::Result<BTreeMap<Address, u64>> {
    let Some(path) = path else {
        return Ok(BTreeMap::new());
    };
    let text = std::fs::read_to_string(path)?;
    parse_allocations(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

enum Event {
    Frame(NodeId, Envelope),
    Closed(NodeId),
}

fn spawn_reader(peer: NodeId, stream: TcpStream, events: Sender<Event>) {
    thread::spawn(move || {
        let mut stream = stream;
        while let Ok(Some(env)) = read_frame(&mut stream) {
            if events.send(Event::Frame(peer, env)).is_err() {
                return;
            }
        }
        let _ = events.send(Event::Closed(peer));
    });
}

struct Peers {
    transport: Mutex<TcpTransport>,
    next: AtomicU64,
}

impl Peers {
    fn add(&self, stream: TcpStream, events: &Sender<Event>) -> io::Result<NodeId> {
        let id = NodeId(self.next.fetch_add(1, Ordering::Relaxed));
        let reader = stream.try_clone()?;
        self.transport.lock().expect("peer lock").add_peer(id, stream);
        spawn_reader(id, reader, events.clone());
        Ok(id)
    }

    fn send(&self, to: NodeId, env: Envelope) {
        self.transport.lock().expect("peer lock").send(NodeId(0), to, Arc::new(env));
    }

    fn flood(&self, except: NodeId, env: &Envelope) {
        let mut t = self.transport.lock().expect("peer lock");
        let targets: Vec<NodeId> = t.peers().filter(|p| *p != except).collect();
        let env = Arc::new(env.clone());
        for p in targets {
            t.send(NodeId(0), p, env.clone());
        }
    }
}

/// Serves `node` on `listener` until `stop` is set. Connects to `parent`
/// first when given. Messages are processed one at a time.
pub fn serve(
    mut node: Node,
    listener: TcpListener,
    parent: Option<SocketAddr>,
    stop: Arc<AtomicBool>,
) -> io::Result<()> {
    let (events_tx, events) = mpsc::channel();
    let peers = Arc::new(Peers {
        transport: Mutex::new(TcpTransport::new()),
        next: AtomicU64::new(1),
    });
    if let Some(addr) = parent {
        let stream = TcpStream::connect(addr)?;
        let id = peers.add(stream, &events_tx)?;
        let hello = Hello {
            node: node.id(),
            assignment: node.assignment(),
        };
        peers.send(id, Envelope::new(MsgKind::Hello, hello.encode()));
    }
    listener.set_nonblocking(true)?;
    {
        let peers = peers.clone();
        let stop = stop.clone();
        let events_tx = events_tx.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = stream.set_nonblocking(false);
                        let _ = peers.add(stream, &events_tx);
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                    Err(_) => return,
                }
            }
        });
    }
    drop(events_tx);
    let mut seen: HashSet<Hash256> = HashSet::new();
    while !stop.load(Ordering::Relaxed) {
        let event = match events.recv_timeout(Duration::from_millis(50)) {
            Ok(e) => e,
            Err(mpsc::RecvTimeoutError::Timeout) => continue,
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        };
        let (from, env) = match event {
            Event::Frame(from, env) => (from, env),
            Event::Closed(peer) => {
                peers.transport.lock().expect("peer lock").remove_peer(peer);
                continue;
            }
        };
        handle(&mut node, &peers, &mut seen, from, env);
    }
    Ok(())
}

fn handle(node: &mut Node, peers: &Peers, seen: &mut HashSet<Hash256>, from: NodeId, env: Envelope) {
    match env.kind {
        MsgKind::NewTx | MsgKind::NewBlock => {
            if !seen.insert(env.msg_id) {
                return;
            }
            let result = if env.kind == MsgKind::NewTx {
                SubchainFragment::decode(&env.payload)
                    .map_err(|e| e.to_string())
                    .and_then(|f| {
                        if node.hosts(&f.address) {
                            node.accept_fragment(&f, &NoRemote).map(|_| ()).map_err(|e| e.to_string())
                        } else {
                            Ok(())
                        }
                    })
            } else {
                MainBlock::decode(&env.payload)
                    .map_err(|e| e.to_string())
                    .and_then(|b| node.ingest_block(b, &NoRemote).map(|_| ()).map_err(|e| e.to_string()))
            };
            match result {
                Ok(()) => peers.flood(from, &env),
                Err(e) => eprintln!("rejected {:?} {}: {e}", env.kind, env.msg_id),
            }
        }
        MsgKind::FragmentRequest => {
            let Ok(req) = FragmentRequest::decode(&env.payload) else { return };
            if let Ok(frag) = node.serve_fragment(&req.address, req.from_height, req.to_height) {
                let mut payload = req.request_id.to_be_bytes().to_vec();
                payload.extend_from_slice(&frag.encode());
                peers.send(from, Envelope::new(MsgKind::FragmentResponse, payload));
            }
        }
        MsgKind::AccountQuery => {
            let Ok(bytes) = <[u8; 20]>::try_from(env.payload.as_slice()) else { return };
            let state = node.tip_state(&Address(bytes));
            peers.send(from, Envelope::new(MsgKind::AccountInfo, state.encode_header()));
        }
        MsgKind::Hello => {
            // bring the newcomer up to our canonical tip
            let view = node.view();
            for hash in &view.canonical_hashes()[1..] {
                let block = view.get(hash).expect("canonical blocks are stored");
                peers.send(from, Envelope::new(MsgKind::NewBlock, block.encode()));
            }
        }
        MsgKind::FragmentResponse | MsgKind::AccountInfo => {}
    }
}

/// A miner's connection to one node.
pub struct TcpMinerLink {
    stream: TcpStream,
    inbox: Receiver<Envelope>,
}

impl TcpMinerLink {
    pub fn connect(addr: impl ToSocketAddrs, me: Hello) -> io::Result<Self> {
        let mut stream = TcpStream::connect(addr)?;
        write_frame(&mut stream, &Envelope::new(MsgKind::Hello, me.encode()))?;
        let (tx, inbox) = mpsc::channel();
        let mut reader = stream.try_clone()?;
        thread::spawn(move || {
            while let Ok(Some(env)) = read_frame(&mut reader) {
                if tx.send(env).is_err() {
                    return;
                }
            }
        });
        Ok(TcpMinerLink { stream, inbox })
    }
}

impl MinerLink for TcpMinerLink {
    fn poll(&mut self) -> Vec<Envelope> {
        self.inbox.try_iter().collect()
    }

    fn publish(&mut self, block: &MainBlock) {
        let _ = write_frame(&mut self.stream, &Envelope::new(MsgKind::NewBlock, block.encode()));
    }
}

/// Asks a node for the tip state of `address`.
pub fn query_account(node: impl ToSocketAddrs, address: &Address) -> io::Result<SubchainState> {
    let mut stream = TcpStream::connect(node)?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    write_frame(&mut stream, &Envelope::new(MsgKind::AccountQuery, address.0.to_vec()))?;
    loop {
        let env = read_frame(&mut stream)?.ok_or_else(|| io::Error::from(io::ErrorKind::UnexpectedEof))?;
        if env.kind == MsgKind::AccountInfo {
            return SubchainState::decode_header(&env.payload)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e));
        }
    }
}

/// Hands a batch of transactions to a node for relay.
pub fn submit_fragment(node: impl ToSocketAddrs, frag: &SubchainFragment) -> io::Result<()> {
    let mut stream = TcpStream::connect(node)?;
    write_frame(&mut stream, &Envelope::new(MsgKind::NewTx, frag.encode()))
}

/// Shard prefix given on the command line or stored by an earlier run.
pub fn resolve_assignment(flag: Option<&str>, stored: Option<Vec<u8>>) -> Result<ShardAssignment, CodecError> {
    match (flag, stored) {
        (Some("*"), _) => Ok(ShardAssignment::FULL),
        (Some(bits), _) => ShardAssignment::from_bit_str(bits),
        (None, Some(bytes)) => ShardAssignment::decode(&bytes),
        (None, None) => Ok(ShardAssignment::FULL),
    }
}
