//! Tree overlay networking: topology and shard placement, envelope framing,
//! failure-resilient broadcast, fragment routing, and two transports (a
//! deterministic discrete-event simulator and length-prefixed TCP).

mod broadcast;
mod envelope;
mod sim;
pub mod tcp;
mod topology;

pub use broadcast::{broadcast, relay_targets, request_fragment, route_to_host, DeliveryReport, FragmentReply};
pub use envelope::{Envelope, FragmentRequest, Hello, MsgKind, FRAME_HEADER_LEN};
pub use sim::{Delivery, LatencyRange, SimTransport, TraceEvent};
pub use topology::TreeTopology;

use std::fmt;
use std::sync::Arc;

use crate::codec::Address;

/// Sequential identifier assigned at join time; the root is 0.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct NodeId(pub u64);

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("node {0} is unknown")]
    UnknownParent(NodeId),
    #[error("node {0} already has two children")]
    ParentFull(NodeId),
    #[error("no alive node hosts {0}")]
    NoHost(Address),
    #[error("request exceeded the {deadline_ms} ms deadline")]
    Timeout { deadline_ms: u64 },
    #[error("host {host} could not serve the requested range")]
    Unavailable { host: NodeId },
}

/// Point-to-point message delivery between overlay nodes.
pub trait Transport {
    fn send(&mut self, from: NodeId, to: NodeId, env: Arc<Envelope>);
}
