//! A half-shard node on disk: it verifies only its own accounts, persists
//! them, survives a restart, and drops data after a shard split.

use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;

use acctshard::codec::{keygen, sign_tx, Address, SendTx, SubchainTx};
use acctshard::mainchain::{genesis_block, seal, ChainParams, ConfirmationRecord, MainBlock};
use acctshard::network::NodeId;
use acctshard::node::{FileKv, NoRemote, Node};
use acctshard::sharding::ShardAssignment;

fn main() {
    let keys: Vec<_> = (1..=8u8).map(|i| keygen(Some([i; 32])).unwrap()).collect();
    let allocations: BTreeMap<Address, u64> = keys.iter().map(|k| (k.address(), 1_000)).collect();
    let params = ChainParams::ethereum_like();
    let genesis = genesis_block(&allocations, 0, params.bits);
    let shard = ShardAssignment::from_bit_str("0").unwrap();
    let dir = tempfile::tempdir().unwrap();

    let open = |assignment| {
        let store = FileKv::open(dir.path()).unwrap();
        Node::open(NodeId(1), assignment, params.clone(), genesis.clone(), allocations.clone(), Box::new(store)).unwrap()
    };
    let mut node = open(shard);

    let mut records = Vec::new();
    for key in &keys {
        let tx = sign_tx(
            &SubchainTx::Send(SendTx {
                height: 1,
                current_address: key.address(),
                recipient_address: Address([0x55; 20]),
                amount: 10,
                ..Default::default()
            }),
            key,
        )
        .unwrap();
        node.accept_pending_tx(&tx, &NoRemote).unwrap();
        records.push(ConfirmationRecord { address: key.address(), tip_hash: tx.tx_hash(), tip_height: 1 });
    }
    let view = node.view();
    let block = MainBlock::new(view.tip_hash(), 1, 1, Address([0xee; 20]), params.bits, records);
    let block = seal(block, &AtomicBool::new(false)).unwrap();
    // the hosted half is verified locally; the rest is only checked for order
    let hosted = keys.iter().filter(|k| shard.hosts(&k.address())).count();
    println!("ingest: {:?} ({hosted} of {} accounts hosted)", node.ingest_block(block, &NoRemote).unwrap(), keys.len());
    println!("storage: {:?}", node.storage_report());
    drop(node);

    let node = open(shard);
    println!("reopened at height {}, {} subchain txs", node.view().height(), node.storage_report().subchain_txs);
    node.audit(&NoRemote).unwrap();
    drop(node);

    let mut node = open(shard.push(true).unwrap());
    let pruned = node.compact().unwrap();
    println!("after split to shard {}: pruned {pruned} accounts, {:?}", node.assignment(), node.storage_report());
}
