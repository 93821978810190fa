//! Two TCP nodes on localhost, a miner attached to the first, and a wallet
//! payment submitted to the second.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use acctshard::codec::keygen;
use acctshard::daemon::{query_account, serve, submit_fragment, TcpMinerLink};
use acctshard::mainchain::{genesis_block, ChainParams};
use acctshard::miner::{mine_loop, LoopConfig, Miner};
use acctshard::network::{Hello, NodeId};
use acctshard::node::Node;
use acctshard::sharding::ShardAssignment;
use acctshard::subchain::SubchainFragment;
use acctshard::wallet::AccountView;

fn main() {
    let alice = keygen(Some([4; 32])).unwrap();
    let bob = keygen(Some([5; 32])).unwrap();
    let params = ChainParams::ethereum_like();
    let alloc = BTreeMap::from([(alice.address(), 1_000)]);
    let genesis = genesis_block(&alloc, 0, params.bits);
    let make = |id, shard| Node::in_memory(NodeId(id), shard, params.clone(), genesis.clone(), alloc.clone());
    let stop = Arc::new(AtomicBool::new(false));

    let root = TcpListener::bind("127.0.0.1:0").unwrap();
    let root_addr = root.local_addr().unwrap();
    let leaf = TcpListener::bind("127.0.0.1:0").unwrap();
    let leaf_addr = leaf.local_addr().unwrap();
    let node = make(0, ShardAssignment::FULL);
    let s = stop.clone();
    let h1 = thread::spawn(move || serve(node, root, None, s));
    let node = make(1, ShardAssignment::FULL);
    let s = stop.clone();
    let h2 = thread::spawn(move || serve(node, leaf, Some(root_addr), s));
    thread::sleep(Duration::from_millis(200));

    let hello = Hello { node: NodeId(99), assignment: ShardAssignment::FULL };
    let mut link = TcpMinerLink::connect(root_addr, hello).unwrap();
    let mut miner = Miner::new(make(99, ShardAssignment::FULL), bob.address(), 1_000, 1);
    thread::sleep(Duration::from_millis(100));

    let state = query_account(leaf_addr, &alice.address()).unwrap();
    let mut wallet = AccountView::new(state.clone(), state.balance, vec![], 6);
    let tx = wallet.build_send(bob.address(), 125, &alice).unwrap();
    submit_fragment(leaf_addr, &SubchainFragment::new(alice.address(), 0, vec![tx])).unwrap();
    println!("submitted payment to node at {leaf_addr}");
    thread::sleep(Duration::from_millis(300));

    let cfg = LoopConfig { cadence: Duration::from_millis(100), max_blocks: Some(2) };
    let mined = mine_loop(&mut miner, &mut link, &AtomicBool::new(false), cfg);
    println!("mined {} blocks", mined.len());
    thread::sleep(Duration::from_millis(300));

    for addr in [root_addr, leaf_addr] {
        let s = query_account(addr, &alice.address()).unwrap();
        println!("{addr}: alice balance {} confirmed height {}", s.balance, s.confirmed_height);
    }
    stop.store(true, Ordering::Relaxed);
    h1.join().unwrap().unwrap();
    h2.join().unwrap().unwrap();
}
