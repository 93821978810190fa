//! Length-prefixed envelope framing over byte streams (TCP sockets).

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::Arc;

use super::{Envelope, NodeId, Transport};

/// Frames larger than this are treated as a protocol error.
pub const MAX_FRAME: usize = 64 << 20;

pub fn write_frame<W: Write>(w: &mut W, env: &Envelope) -> io::Result<()> {
    w.write_all(&env.encode_frame())?;
    w.flush()
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Envelope>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if !(33..=MAX_FRAME).contains(&len) {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad frame length"));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Envelope::decode_body(&body)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Sends envelopes over one TCP stream per peer. Write failures drop the peer.
#[derive(Default)]
pub struct TcpTransport {
    peers: HashMap<NodeId, TcpStream>,
}

impl TcpTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_peer(&mut self, id: NodeId, stream: TcpStream) {
        self.peers.insert(id, stream);
    }

    pub fn remove_peer(&mut self, id: NodeId) {
        self.peers.remove(&id);
    }

    pub fn peers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.peers.keys().copied()
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, _from: NodeId, to: NodeId, env: Arc<Envelope>) {
        if let Some(stream) = self.peers.get_mut(&to) {
            if write_frame(stream, &env).is_err() {
                self.peers.remove(&to);
            }
        }
    }
}
