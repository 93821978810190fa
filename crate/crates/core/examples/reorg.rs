//! A two-block reorg orphans a confirmation; the claim that relied on it
//! is dropped and can no longer be accepted.

use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;

use acctshard::codec::{keygen, sign_tx, Address, Hash256, ReceiveTx, SendTx, SubchainTx};
use acctshard::mainchain::{genesis_block, seal, ChainParams, ChainView, ConfirmationRecord, MainBlock};
use acctshard::network::NodeId;
use acctshard::node::{NoRemote, Node};
use acctshard::sharding::ShardAssignment;

fn block(view: &ChainView, parent: Hash256, records: Vec<ConfirmationRecord>, salt: u64) -> MainBlock {
    let height = view.get(&parent).unwrap().height() + 1;
    seal(MainBlock::new(parent, height, salt, Address([0xee; 20]), view.params().bits, records), &AtomicBool::new(false)).unwrap()
}

fn main() {
    let alice = keygen(Some([1; 32])).unwrap();
    let bob = keygen(Some([2; 32])).unwrap();
    let params = ChainParams { maturity: 2, ..ChainParams::ethereum_like() };
    let alloc = BTreeMap::from([(alice.address(), 100)]);
    let genesis = genesis_block(&alloc, 0, params.bits);
    let mut node = Node::in_memory(NodeId(0), ShardAssignment::FULL, params, genesis, alloc);
    let base = node.view().tip_hash();

    let pay = sign_tx(
        &SubchainTx::Send(SendTx { height: 1, current_address: alice.address(), recipient_address: bob.address(), amount: 40, ..Default::default() }),
        &alice,
    )
    .unwrap();
    node.accept_pending_tx(&pay, &NoRemote).unwrap();
    let x1 = block(node.view(), base, vec![ConfirmationRecord { address: alice.address(), tip_hash: pay.tx_hash(), tip_height: 1 }], 1);
    node.ingest_block(x1.clone(), &NoRemote).unwrap();
    node.ingest_block(block(node.view(), x1.hash(), vec![], 1), &NoRemote).unwrap();

    let claim = sign_tx(
        &SubchainTx::Receive(ReceiveTx {
            height: 1,
            current_address: bob.address(),
            sender_address: alice.address(),
            sender_tx_hash: pay.tx_hash(),
            main_block_hash: x1.hash(),
            amount: 40,
            ..Default::default()
        }),
        &bob,
    )
    .unwrap();
    println!("claim on branch X: {:?}", node.accept_pending_tx(&claim, &NoRemote));
    println!("bob tip balance {}", node.tip_state(&bob.address()).balance);

    let mut parent = base;
    for _ in 0..3 {
        let y = block(node.view(), parent, vec![], 2);
        parent = y.hash();
        println!("ingest Y{}: {:?}", y.height(), node.ingest_block(y, &NoRemote).unwrap());
    }
    println!("bob tip balance {}", node.tip_state(&bob.address()).balance);
    println!("alice confirmed height {}", node.confirmed_state(&alice.address()).confirmed_height);
    match node.accept_pending_tx(&claim, &NoRemote) {
        Err(e) => println!("claim again: {e}"),
        Ok(o) => panic!("claim accepted after reorg: {o:?}"),
    }
    assert_eq!(node.view().latest_confirmations(), node.view().scan_confirmations());
}
