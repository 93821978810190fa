use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Envelope, MsgKind, NodeId, Transport};
use crate::codec::Hash256;

/// Per-link latency, drawn uniformly from `[min_ms, max_ms]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LatencyRange {
    pub min_ms: u64,
    pub max_ms: u64,
}

impl LatencyRange {
    pub fn new(min_ms: u64, max_ms: u64) -> Self {
        LatencyRange {
            min_ms: min_ms.min(max_ms),
            max_ms: max_ms.max(min_ms),
        }
    }
}

impl Default for LatencyRange {
    fn default() -> Self {
        LatencyRange::new(20, 200)
    }
}

#[derive(Clone, Debug)]
pub struct Delivery {
    pub at_ms: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub env: Arc<Envelope>,
}

struct Queued {
    seq: u64,
    delivery: Delivery,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // reversed so the max-heap pops the earliest delivery, then lowest seq
    fn cmp(&self, other: &Self) -> Ordering {
        (other.delivery.at_ms, other.seq).cmp(&(self.delivery.at_ms, self.seq))
    }
}

/// One entry of the delivery log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub at_ms: u64,
    pub seq: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: MsgKind,
    pub msg_id: Hash256,
    pub delivered: bool,
}

/// Deterministic in-process transport: a seeded RNG draws link latencies and
/// a priority queue releases messages in (time, send order) order.
pub struct SimTransport {
    rng: ChaCha8Rng,
    latency: LatencyRange,
    now_ms: u64,
    next_seq: u64,
    queue: BinaryHeap<Queued>,
    alive: Vec<bool>,
    trace: Option<Vec<TraceEvent>>,
    sent: u64,
}

impl SimTransport {
    pub fn new(seed: u64, latency: LatencyRange, nodes: usize) -> Self {
        SimTransport {
            rng: ChaCha8Rng::seed_from_u64(seed),
            latency,
            now_ms: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            alive: vec![true; nodes],
            trace: None,
            sent: 0,
        }
    }

    /// Starts recording every delivery and drop.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn messages_sent(&self) -> u64 {
        self.sent
    }

    pub fn add_node(&mut self) -> NodeId {
        self.alive.push(true);
        NodeId(self.alive.len() as u64 - 1)
    }

    pub fn set_alive(&mut self, node: NodeId, alive: bool) {
        self.alive[node.0 as usize] = alive;
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.alive.get(node.0 as usize).copied().unwrap_or(false)
    }

    pub fn alive(&self) -> &[bool] {
        &self.alive
    }

    pub fn sample_latency(&mut self) -> u64 {
        self.rng.gen_range(self.latency.min_ms..=self.latency.max_ms)
    }

    /// Time of the next pending delivery.
    pub fn peek_time(&self) -> Option<u64> {
        self.queue.peek().map(|q| q.delivery.at_ms)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    /// Moves the clock forward (never backward).
    pub fn advance_to(&mut self, at_ms: u64) {
        self.now_ms = self.now_ms.max(at_ms);
    }

    /// Pops the next message addressed to an alive node, advancing the clock.
    /// Messages to dead nodes are dropped.
    pub fn next_delivery(&mut self) -> Option<Delivery> {
        while let Some(Queued { seq, delivery }) = self.queue.pop() {
            self.now_ms = self.now_ms.max(delivery.at_ms);
            let delivered = self.is_alive(delivery.to);
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceEvent {
                    at_ms: delivery.at_ms,
                    seq,
                    from: delivery.from,
                    to: delivery.to,
                    kind: delivery.env.kind,
                    msg_id: delivery.env.msg_id,
                    delivered,
                });
            }
            if delivered {
                return Some(delivery);
            }
        }
        None
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// The trace as bytes, for byte-equality comparisons between runs.
    pub fn trace_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.trace().len() * 66);
        for e in self.trace() {
            out.extend_from_slice(&e.at_ms.to_be_bytes());
            out.extend_from_slice(&e.seq.to_be_bytes());
            out.extend_from_slice(&e.from.0.to_be_bytes());
            out.extend_from_slice(&e.to.0.to_be_bytes());
            out.push(e.kind as u8);
            out.extend_from_slice(&e.msg_id.0);
            out.push(e.delivered as u8);
        }
        out
    }
}

impl Transport for SimTransport {
    /// Schedules `env` for delivery after a sampled latency. Dead senders
    /// send nothing.
    fn send(&mut self, from: NodeId, to: NodeId, env: Arc<Envelope>) {
        if !self.is_alive(from) {
            return;
        }
        let at_ms = self.now_ms + self.sample_latency();
        let seq = self.next_seq;
        self.next_seq += 1;
        self.sent += 1;
        self.queue.push(Queued {
            seq,
            delivery: Delivery {
                at_ms,
                from,
                to,
                env,
            },
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(seed: u64) -> Vec<u8> {
        let mut t = SimTransport::new(seed, LatencyRange::new(5, 50), 4).with_trace();
        for i in 0..20u8 {
            let env = Arc::new(Envelope::new(MsgKind::NewTx, vec![i]));
            t.send(NodeId((i % 4) as u64), NodeId(((i + 1) % 4) as u64), env);
        }
        t.set_alive(NodeId(2), false);
        while t.next_delivery().is_some() {}
        t.trace_bytes()
    }

    #[test]
    fn same_seed_same_trace() {
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn deliveries_come_in_time_order_and_skip_dead_nodes() {
        let mut t = SimTransport::new(1, LatencyRange::new(1, 100), 3);
        t.set_alive(NodeId(1), false);
        for i in 0..50u8 {
            let env = Arc::new(Envelope::new(MsgKind::NewTx, vec![i]));
            t.send(NodeId(0), NodeId(1 + (i as u64 % 2)), env);
        }
        let mut last = 0;
        let mut count = 0;
        while let Some(d) = t.next_delivery() {
            assert!(d.at_ms >= last);
            assert_eq!(d.to, NodeId(2));
            last = d.at_ms;
            count += 1;
        }
        assert_eq!(count, 25);
    }
}
