use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use super::{Envelope, NetError, NodeId, SimTransport, Transport, TreeTopology};
use crate::codec::Address;
use crate::subchain::SubchainFragment;

/// Where `node` forwards a message first received from `from`: parent and
/// children, then neighbors, never back to the sender.
pub fn relay_targets(topo: &TreeTopology, node: NodeId, from: Option<NodeId>) -> Vec<NodeId> {
    let mut seen = HashSet::new();
    topo.links(node)
        .into_iter()
        .filter(|n| Some(*n) != from && seen.insert(*n))
        .collect()
}

/// Which nodes a broadcast reached and after how many hops.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeliveryReport {
    pub reached: BTreeMap<NodeId, u16>,
    pub messages_sent: u64,
}

impl DeliveryReport {
    pub fn reached_all(&self, alive: &[bool]) -> bool {
        alive
            .iter()
            .enumerate()
            .all(|(i, a)| !a || self.reached.contains_key(&NodeId(i as u64)))
    }
}

/// Floods `env` from `origin` and runs the transport until it drains.
/// Each node forwards only the first copy of a message id it sees.
///
/// The transport should carry no other traffic while this runs.
pub fn broadcast(
    origin: NodeId,
    env: Envelope,
    topo: &TreeTopology,
    transport: &mut SimTransport,
) -> DeliveryReport {
    let mut report = DeliveryReport::default();
    if !transport.is_alive(origin) {
        return report;
    }
    let before = transport.messages_sent();
    let msg_id = env.msg_id;
    let mut seen: HashSet<NodeId> = HashSet::new();
    seen.insert(origin);
    report.reached.insert(origin, 0);
    let env = Arc::new(Envelope { hop_count: 1, ..env });
    for to in relay_targets(topo, origin, None) {
        transport.send(origin, to, env.clone());
    }
    while let Some(d) = transport.next_delivery() {
        if d.env.msg_id != msg_id || !seen.insert(d.to) {
            continue;
        }
        report.reached.insert(d.to, d.env.hop_count);
        let next = Arc::new(Envelope {
            hop_count: d.env.hop_count.saturating_add(1),
            ..(*d.env).clone()
        });
        for to in relay_targets(topo, d.to, Some(d.from)) {
            transport.send(d.to, to, next.clone());
        }
    }
    report.messages_sent = transport.messages_sent() - before;
    report
}

/// The closest alive node hosting `address`, by overlay hops through alive
/// nodes; ties go to the lower id. A requester that hosts the address
/// serves itself.
pub fn route_to_host(
    topo: &TreeTopology,
    alive: &[bool],
    requester: NodeId,
    address: &Address,
) -> Result<(NodeId, usize), NetError> {
    let is_alive = |n: NodeId| alive.get(n.0 as usize).copied().unwrap_or(false);
    if !is_alive(requester) {
        return Err(NetError::NoHost(*address));
    }
    let mut visited = HashSet::from([requester]);
    let mut layer = vec![requester];
    let mut hops = 0;
    while !layer.is_empty() {
        let mut hosts: Vec<NodeId> = layer
            .iter()
            .copied()
            .filter(|n| topo.assignment(*n).hosts(address))
            .collect();
        hosts.sort();
        if let Some(host) = hosts.first() {
            return Ok((*host, hops));
        }
        let mut next = Vec::new();
        for n in &layer {
            for m in topo.links(*n) {
                if is_alive(m) && visited.insert(m) {
                    next.push(m);
                }
            }
        }
        layer = next;
        hops += 1;
    }
    Err(NetError::NoHost(*address))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FragmentReply {
    pub fragment: SubchainFragment,
    pub host: NodeId,
    pub hops: usize,
    pub round_trip_ms: u64,
}

/// Routes a request for `(from_height, to_height]` of `address` to the
/// nearest alive host and returns its structurally checked answer.
///
/// `serve` is the host-side lookup. Round-trip time is drawn from the
/// transport's latency model, one sample per hop each way.
pub fn request_fragment<F>(
    requester: NodeId,
    address: Address,
    from_height: u64,
    to_height: u64,
    topo: &TreeTopology,
    transport: &mut SimTransport,
    deadline_ms: u64,
    serve: F,
) -> Result<FragmentReply, NetError>
where
    F: FnOnce(NodeId) -> Option<SubchainFragment>,
{
    let (host, hops) = route_to_host(topo, transport.alive(), requester, &address)?;
    let round_trip_ms: u64 = (0..2 * hops).map(|_| transport.sample_latency()).sum();
    if round_trip_ms > deadline_ms {
        return Err(NetError::Timeout { deadline_ms });
    }
    let fragment = serve(host).ok_or(NetError::Unavailable { host })?;
    let well_formed = fragment.address == address
        && fragment.from_height == from_height
        && fragment.to_height() == to_height
        && fragment
            .txs
            .first()
            .is_none_or(|first| fragment.check_links(first.parent_hash()).is_ok());
    if !well_formed {
        return Err(NetError::Unavailable { host });
    }
    Ok(FragmentReply {
        fragment,
        host,
        hops,
        round_trip_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LatencyRange, MsgKind};

    fn env() -> Envelope {
        Envelope::new(MsgKind::NewBlock, vec![1, 2, 3])
    }

    #[test]
    fn all_alive_reaches_everyone_within_diameter() {
        let topo = TreeTopology::complete(15, 2);
        for origin in topo.ids() {
            let mut t = SimTransport::new(origin.0, LatencyRange::new(1, 30), 15);
            let report = broadcast(origin, env(), &topo, &mut t);
            assert_eq!(report.reached.len(), 15);
            // diameter of a depth-3 complete tree is 6
            assert!(report.reached.values().all(|h| *h <= 7));
        }
    }

    #[test]
    fn dead_origin_reaches_nobody() {
        let topo = TreeTopology::complete(7, 2);
        let mut t = SimTransport::new(1, LatencyRange::default(), 7);
        t.set_alive(NodeId(3), false);
        assert!(broadcast(NodeId(3), env(), &topo, &mut t).reached.is_empty());
    }

    #[test]
    fn each_node_forwards_once() {
        let topo = TreeTopology::complete(7, 2);
        let mut t = SimTransport::new(1, LatencyRange::default(), 7);
        let report = broadcast(NodeId(0), env(), &topo, &mut t);
        let forwards: u64 = topo
            .ids()
            .map(|n| relay_targets(&topo, n, None).len() as u64)
            .sum();
        // every node forwards once, minus the link back to whoever it heard from
        assert!(report.messages_sent <= forwards);
        assert!(report.messages_sent >= forwards - 6);
    }

    #[test]
    fn local_host_needs_no_hops() {
        let topo = TreeTopology::complete(7, 2);
        let alive = vec![true; 7];
        let addr = Address([0; 20]);
        assert_eq!(route_to_host(&topo, &alive, NodeId(3), &addr).unwrap(), (NodeId(3), 0));
        // node 6 has prefix "11"; its grandparent (the root) is a neighbor
        assert_eq!(route_to_host(&topo, &alive, NodeId(6), &addr).unwrap(), (NodeId(0), 1));
        let mut alive = alive;
        alive[0] = false;
        // without the root, prefix "0" node 1 is reached through neighbors
        let (host, _) = route_to_host(&topo, &alive, NodeId(6), &addr).unwrap();
        assert_eq!(host, NodeId(1));
    }

    #[test]
    fn no_alive_host() {
        let topo = TreeTopology::complete(3, 2);
        let addr = Address([0; 20]);
        let alive = vec![false, false, true];
        assert_eq!(
            route_to_host(&topo, &alive, NodeId(2), &addr),
            Err(NetError::NoHost(addr))
        );
    }

    #[test]
    fn slow_links_time_out() {
        let topo = TreeTopology::complete(3, 2);
        let mut t = SimTransport::new(1, LatencyRange::new(500, 500), 3);
        let addr = Address([0xff; 20]);
        let err = request_fragment(NodeId(1), addr, 0, 0, &topo, &mut t, 100, |_| None);
        assert_eq!(err, Err(NetError::Timeout { deadline_ms: 100 }));
    }
}
