use crate::codec::{Address, CodecError, Hash256, Reader};
use crate::sharding::ShardAssignment;

use super::NodeId;

/// Length prefix, kind byte and message id.
pub const FRAME_HEADER_LEN: usize = 4 + 1 + 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgKind {
    /// Payload: a subchain fragment (one or more consecutive transactions).
    NewTx = 1,
    /// Payload: an encoded main block.
    NewBlock = 2,
    FragmentRequest = 3,
    /// Payload: request id then a fragment encoding.
    FragmentResponse = 4,
    Hello = 5,
    /// Payload: an address.
    AccountQuery = 6,
    /// Payload: the address's tip state header.
    AccountInfo = 7,
}

impl MsgKind {
    pub fn from_byte(b: u8) -> Result<Self, CodecError> {
        Ok(match b {
            1 => MsgKind::NewTx,
            2 => MsgKind::NewBlock,
            3 => MsgKind::FragmentRequest,
            4 => MsgKind::FragmentResponse,
            5 => MsgKind::Hello,
            6 => MsgKind::AccountQuery,
            7 => MsgKind::AccountInfo,
            _ => return Err(CodecError::Malformed("unknown message kind")),
        })
    }
}

/// A network message. `hop_count` travels with the message inside one
/// process but is not part of the wire frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub msg_id: Hash256,
    pub kind: MsgKind,
    pub payload: Vec<u8>,
    pub hop_count: u16,
}

impl Envelope {
    pub fn new(kind: MsgKind, payload: Vec<u8>) -> Self {
        Envelope {
            msg_id: Self::id_for(kind, &payload),
            kind,
            payload,
            hop_count: 0,
        }
    }

    /// SHA-256 of the kind byte followed by the payload.
    pub fn id_for(kind: MsgKind, payload: &[u8]) -> Hash256 {
        let mut buf = Vec::with_capacity(1 + payload.len());
        buf.push(kind as u8);
        buf.extend_from_slice(payload);
        Hash256::digest(&buf)
    }

    /// 4-byte big-endian length of the rest, kind, msg_id, payload.
    pub fn encode_frame(&self) -> Vec<u8> {
        let body = 1 + 32 + self.payload.len();
        let mut out = Vec::with_capacity(4 + body);
        out.extend_from_slice(&(body as u32).to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.msg_id.0);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one complete frame, rejecting ids that do not match content.
    pub fn decode_frame(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let len = r.u32()? as usize;
        if len < 33 {
            return Err(CodecError::Malformed("frame shorter than its header"));
        }
        let body = r.take(len)?;
        r.finish()?;
        Self::decode_body(body)
    }

    /// Decodes a frame body (everything after the length prefix).
    pub fn decode_body(body: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(body);
        let kind = MsgKind::from_byte(r.u8()?)?;
        let msg_id = r.hash()?;
        let payload = body[33..].to_vec();
        if Self::id_for(kind, &payload) != msg_id {
            return Err(CodecError::Malformed("msg_id does not match content"));
        }
        Ok(Envelope {
            msg_id,
            kind,
            payload,
            hop_count: 0,
        })
    }
}

/// Asks a host for `(from_height, to_height]` of one subchain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FragmentRequest {
    pub request_id: u64,
    pub address: Address,
    pub from_height: u64,
    pub to_height: u64,
}

impl FragmentRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 20 + 16);
        out.extend_from_slice(&self.request_id.to_be_bytes());
        out.extend_from_slice(&self.address.0);
        out.extend_from_slice(&self.from_height.to_be_bytes());
        out.extend_from_slice(&self.to_height.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let out = FragmentRequest {
            request_id: r.u64()?,
            address: r.address()?,
            from_height: r.u64()?,
            to_height: r.u64()?,
        };
        r.finish()?;
        Ok(out)
    }
}

/// Announces a node and the shard prefix it hosts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hello {
    pub node: NodeId,
    pub assignment: ShardAssignment,
}

impl Hello {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.node.0.to_be_bytes().to_vec();
        out.extend_from_slice(&self.assignment.encode());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let node = NodeId(r.u64()?);
        let assignment = ShardAssignment::read(&mut r)?;
        r.finish()?;
        Ok(Hello { node, assignment })
    }
}
