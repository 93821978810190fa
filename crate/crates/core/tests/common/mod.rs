#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;

use acctshard::codec::{keygen, sign_tx, Address, Hash256, KeyPair, ReceiveTx, SendTx, SubchainTx};
use acctshard::mainchain::{genesis_block, seal, ChainParams, ChainView, ConfirmationRecord, MainBlock};
use acctshard::network::NodeId;
use acctshard::node::Node;
use acctshard::sharding::ShardAssignment;

/// First key (by seed byte, from `skip`) whose address starts with `bit`.
pub fn key_with_bit(bit: bool, skip: u8) -> KeyPair {
    (skip..=255)
        .map(|s| keygen(Some([s; 32])).unwrap())
        .find(|k| k.address().bit(0) == bit)
        .unwrap()
}

pub struct Net {
    pub params: ChainParams,
    pub genesis: MainBlock,
    pub allocations: BTreeMap<Address, u64>,
}

impl Net {
    pub fn new(params: ChainParams, funded: &[(Address, u64)]) -> Self {
        let allocations: BTreeMap<Address, u64> = funded.iter().copied().collect();
        Net {
            genesis: genesis_block(&allocations, 0, params.bits),
            params,
            allocations,
        }
    }

    pub fn node(&self, id: u64, assignment: ShardAssignment) -> Node {
        Node::in_memory(NodeId(id), assignment, self.params.clone(), self.genesis.clone(), self.allocations.clone())
    }
}

pub fn record(tx: &SubchainTx) -> ConfirmationRecord {
    ConfirmationRecord {
        address: tx.current_address(),
        tip_hash: tx.tx_hash(),
        tip_height: tx.height(),
    }
}

/// A sealed child of `parent` carrying `records`. `salt` goes into the
/// timestamp so sibling blocks differ.
pub fn child(view: &ChainView, parent: Hash256, records: Vec<ConfirmationRecord>, salt: u64) -> MainBlock {
    let height = view.get(&parent).expect("known parent").height() + 1;
    let block = MainBlock::new(parent, height, height * 1_000 + salt, Address([0xee; 20]), view.params().bits, records);
    seal(block, &AtomicBool::new(false)).unwrap()
}

pub fn on_tip(view: &ChainView, records: Vec<ConfirmationRecord>) -> MainBlock {
    child(view, view.tip_hash(), records, 0)
}

pub fn send(key: &KeyPair, parent: Hash256, height: u64, to: Address, amount: u64) -> SubchainTx {
    let tx = SubchainTx::Send(SendTx {
        parent_hash: parent,
        height,
        current_address: key.address(),
        recipient_address: to,
        amount,
        timestamp: 1_700_000_000 + height,
        ..Default::default()
    });
    sign_tx(&tx, key).unwrap()
}

pub fn claim(key: &KeyPair, parent: Hash256, height: u64, of: &SubchainTx, block: Hash256, amount: u64) -> SubchainTx {
    let tx = SubchainTx::Receive(ReceiveTx {
        parent_hash: parent,
        height,
        current_address: key.address(),
        sender_address: of.current_address(),
        sender_tx_hash: of.tx_hash(),
        main_block_hash: block,
        amount,
        timestamp: 1_700_000_000 + height,
        ..Default::default()
    });
    sign_tx(&tx, key).unwrap()
}
