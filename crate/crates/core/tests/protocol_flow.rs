mod common;

use std::sync::atomic::AtomicBool;

use acctshard::codec::{Address, Hash256, SendTx, SubchainTx};
use acctshard::mainchain::{validate_block, ChainError, ChainParams, ChainView, SendLookup, ShardOracle};
use acctshard::miner::Miner;
use acctshard::node::{IngestOutcome, NoRemote, Node};
use acctshard::sharding::ShardAssignment;
use acctshard::subchain::{SubchainError, SubchainFragment, SubchainState};
use acctshard::wallet::{scan_inflows, AccountView};

use common::{key_with_bit, on_tip, record, send, Net};

/// Serves one fixed fragment for every verified address.
struct Serving {
    state: SubchainState,
    frag: SubchainFragment,
}

impl SendLookup for Serving {
    fn lookup_send(&self, _: &Address, _: &Hash256) -> Option<SendTx> {
        None
    }
}

impl ShardOracle for Serving {
    fn verifies(&self, _: &Address) -> bool {
        true
    }
    fn state_at(&self, _: &Address, _: u64, _: &Hash256) -> Option<SubchainState> {
        Some(self.state.clone())
    }
    fn fragment(&self, _: &Address, _: u64, _: u64, _: &Hash256) -> Option<SubchainFragment> {
        Some(self.frag.clone())
    }
}

#[test]
fn heartbeat_block_is_valid_and_does_no_work() {
    let key = key_with_bit(false, 1);
    let net = Net::new(ChainParams::ethereum_like(), &[(key.address(), 10)]);
    let mut node = net.node(0, ShardAssignment::FULL);
    let block = on_tip(node.view(), vec![]);
    assert_eq!(validate_block(&block, node.view(), &NoRemoteOracle).unwrap(), vec![]);
    node.ingest_block(block, &NoRemote).unwrap();
    assert_eq!(node.view().height(), 1);
    assert_eq!(node.stats().stf_records, 0);
}

struct NoRemoteOracle;

impl SendLookup for NoRemoteOracle {
    fn lookup_send(&self, _: &Address, _: &Hash256) -> Option<SendTx> {
        None
    }
}

impl ShardOracle for NoRemoteOracle {
    fn verifies(&self, _: &Address) -> bool {
        true
    }
    fn state_at(&self, _: &Address, _: u64, _: &Hash256) -> Option<SubchainState> {
        None
    }
    fn fragment(&self, _: &Address, _: u64, _: u64, _: &Hash256) -> Option<SubchainFragment> {
        None
    }
}

#[test]
fn overspend_inside_confirmed_fragment_names_the_account() {
    let key = key_with_bit(true, 1);
    let net = Net::new(ChainParams::ethereum_like(), &[(key.address(), 100)]);
    let view = ChainView::new(net.params.clone(), net.genesis.clone(), net.allocations.clone());
    let ok = send(&key, Hash256::ZERO, 1, Address([1; 20]), 60);
    let bad = send(&key, ok.tx_hash(), 2, Address([1; 20]), 41);
    let oracle = Serving {
        state: SubchainState::genesis(key.address(), 100),
        frag: SubchainFragment::new(key.address(), 0, vec![ok, bad.clone()]),
    };
    let block = on_tip(&view, vec![record(&bad)]);
    match validate_block(&block, &view, &oracle) {
        Err(ChainError::Subchain { address, source }) => {
            assert_eq!(address, key.address());
            assert!(matches!(source.root(), SubchainError::InsufficientBalance { balance: 40, amount: 41 }));
        }
        other => panic!("expected a subchain error, got {other:?}"),
    }
}

#[test]
fn missing_fragment_rejects_the_block() {
    let key = key_with_bit(true, 1);
    let net = Net::new(ChainParams::ethereum_like(), &[(key.address(), 100)]);
    let view = ChainView::new(net.params.clone(), net.genesis.clone(), net.allocations.clone());
    let tx = send(&key, Hash256::ZERO, 1, Address([1; 20]), 5);
    let block = on_tip(&view, vec![record(&tx)]);
    assert!(matches!(
        validate_block(&block, &view, &NoRemoteOracle),
        Err(ChainError::FragmentUnavailable { address }) if address == key.address()
    ));
}

fn relay(block: &acctshard::mainchain::MainBlock, nodes: &mut [&mut Node], remote: &Node) {
    for n in nodes.iter_mut() {
        let out = n.ingest_block(block.clone(), remote).unwrap();
        assert!(matches!(out, IngestOutcome::Accepted { .. }));
    }
}

#[test]
fn cross_shard_transfer_settles_through_a_miner() {
    let alice = key_with_bit(false, 1);
    let bob = key_with_bit(true, 1);
    let net = Net::new(ChainParams::ethereum_like(), &[(alice.address(), 1_000)]);
    let maturity = net.params.maturity;
    let mut left = net.node(1, ShardAssignment::from_bit_str("0").unwrap());
    let mut right = net.node(2, ShardAssignment::from_bit_str("1").unwrap());
    let mut miner = Miner::new(net.node(0, ShardAssignment::FULL), Address([0x99; 20]), 1_000, 2);
    let stop = AtomicBool::new(false);

    // alice pays bob from the left shard
    let mut wallet = AccountView::from_node(&left, &alice.address(), vec![]);
    let batch = wallet.batch_settle(&[(bob.address(), 300), (bob.address(), 200)], &alice).unwrap();
    let frag = SubchainFragment::new(alice.address(), 0, batch);
    left.accept_fragment(&frag, &NoRemote).unwrap();
    miner.submit(&frag).unwrap();
    let block = miner.mine_block(1, &stop).unwrap();
    assert_eq!(block.confirmations, vec![record(frag.txs.last().unwrap())]);
    relay(&block, &mut [&mut left, &mut right], miner.node());
    assert_eq!(left.confirmed_state(&alice.address()).balance, 500);
    assert_eq!(right.stats().stf_records, 0);

    for t in 0..maturity - 1 {
        let b = miner.mine_block(2 + t, &stop).unwrap();
        relay(&b, &mut [&mut left, &mut right], miner.node());
    }

    // bob finds the inflows on a node hosting alice and claims both
    let inflows = scan_inflows(miner.node(), &bob.address());
    assert_eq!(inflows.iter().filter(|i| !i.is_coinbase()).count(), 2);
    let mut wallet = AccountView::from_node(&right, &bob.address(), inflows);
    assert_eq!(wallet.mature_claimable(), 500);
    let claims = wallet.batch_settle(&[(alice.address(), 450)], &bob).unwrap();
    assert_eq!(claims.iter().filter(|t| !t.is_send()).count(), 2);
    let frag = SubchainFragment::new(bob.address(), 0, claims);
    right.accept_fragment(&frag, miner.node()).unwrap();
    miner.submit(&frag).unwrap();
    let block = miner.mine_block(100, &stop).unwrap();
    relay(&block, &mut [&mut left, &mut right], miner.node());

    let b = right.confirmed_state(&bob.address());
    assert_eq!((b.balance, b.tip_height, b.confirmed_height), (50, 3, 3));
    for n in [&left, &right, miner.node()] {
        n.audit(miner.node()).unwrap();
        assert_eq!(n.view().tip_hash(), miner.node().view().tip_hash());
    }
    assert_eq!(right.storage_report().subchain_txs, 3);
    assert_eq!(left.storage_report().subchain_txs, 2);
}

#[test]
fn claim_survives_only_on_its_branch() {
    let alice = key_with_bit(false, 3);
    let bob = key_with_bit(true, 3);
    let params = ChainParams { maturity: 1, ..ChainParams::ethereum_like() };
    let net = Net::new(params, &[(alice.address(), 50)]);
    let mut node = net.node(0, ShardAssignment::FULL);
    let genesis = node.view().tip_hash();
    let pay = send(&alice, Hash256::ZERO, 1, bob.address(), 50);
    node.accept_pending_tx(&pay, &NoRemote).unwrap();
    let x = common::child(node.view(), genesis, vec![record(&pay)], 1);
    node.ingest_block(x.clone(), &NoRemote).unwrap();
    let take = common::claim(&bob, Hash256::ZERO, 1, &pay, x.hash(), 50);
    node.accept_pending_tx(&take, &NoRemote).unwrap();
    assert_eq!(node.tip_state(&bob.address()).balance, 50);

    let y1 = common::child(node.view(), genesis, vec![], 2);
    let y1_hash = y1.hash();
    node.ingest_block(y1, &NoRemote).unwrap();
    let y2 = common::child(node.view(), y1_hash, vec![], 2);
    node.ingest_block(y2, &NoRemote).unwrap();
    assert_eq!(node.tip_state(&bob.address()).balance, 0);
    // alice's send is pending again and can be re-confirmed
    assert_eq!(node.tip_state(&alice.address()).tip_height, 1);
    assert!(matches!(node.lookup_tx(&pay.tx_hash()), Some(SubchainTx::Send(_))));
    node.ingest_block(on_tip(node.view(), vec![record(&pay)]), &NoRemote).unwrap();
    assert_eq!(node.confirmed_state(&alice.address()).confirmed_height, 1);
}
