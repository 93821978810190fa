//! Grow a sharding tree, flood a message with one node down, and route a
//! fragment request to the nearest host.

use acctshard::codec::Address;
use acctshard::network::{broadcast, route_to_host, Envelope, LatencyRange, MsgKind, NodeId, SimTransport, TreeTopology};

fn main() {
    let topo = TreeTopology::complete(15, 2);
    for id in topo.ids().take(7) {
        println!("node {:>2} shard {:<4} links {:?}", id.0, topo.assignment(id).to_string(), topo.links(id).iter().map(|n| n.0).collect::<Vec<_>>());
    }

    let mut transport = SimTransport::new(1, LatencyRange::new(20, 200), topo.len());
    transport.set_alive(NodeId(1), false);
    let report = broadcast(NodeId(9), Envelope::new(MsgKind::NewTx, b"hello".to_vec()), &topo, &mut transport);
    println!(
        "with node 1 down: reached {} of {} alive nodes, {} messages, {} ms",
        report.reached.len(),
        transport.alive().iter().filter(|a| **a).count(),
        report.messages_sent,
        transport.now_ms()
    );
    assert!(report.reached_all(transport.alive()));

    let address = Address([0b1100_0000; 20]);
    let (host, hops) = route_to_host(&topo, transport.alive(), NodeId(3), &address).unwrap();
    println!("node 3 asks for {address}: served by node {} ({}) after {hops} hops", host.0, topo.assignment(host));
}
