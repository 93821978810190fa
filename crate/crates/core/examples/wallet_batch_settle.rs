//! Claim three mature inflows and pay out of them in one contiguous batch.

use acctshard::codec::{keygen, Address};
use acctshard::subchain::{replay, SubchainState};
use acctshard::testkit::MockChain;
use acctshard::wallet::{AccountView, Inflow, WalletError};

fn main() {
    let me = keygen(Some([3; 32])).unwrap();
    let payers: Vec<_> = (10..13u8).map(|i| keygen(Some([i; 32])).unwrap()).collect();
    let mut chain = MockChain::new(6);

    let mut inflows = Vec::new();
    for (i, payer) in payers.iter().enumerate() {
        chain.allocate(payer.address(), 100);
        let mut b = acctshard::testkit::ChainBuilder::new(payer.clone(), &chain);
        let send = b.send(me.address(), 10, &chain);
        chain.record_send(&send);
        let block = chain.push_block(Address::ZERO, &[(payer.address(), 1)]);
        chain.bury(6);
        inflows.push(Inflow {
            sender_address: payer.address(),
            sender_tx_hash: send.tx_hash(),
            amount: 10,
            block_hash: block,
            depth: 9 - i as u64,
        });
    }

    let state = SubchainState::genesis(me.address(), 0);
    let mut view = AccountView::new(state, 0, inflows, 6);
    println!("spendable {} + mature claimable {}", view.spendable(), view.mature_claimable());

    let too_much = view.clone().batch_settle(&[(Address([9; 20]), 31)], &me);
    assert!(matches!(too_much, Err(WalletError::InsufficientBalance { needed: 31, available: 30 })));
    println!("send 31: {}", too_much.unwrap_err());

    let batch = view.batch_settle(&[(Address([9; 20]), 25)], &me).unwrap();
    for tx in &batch {
        let kind = if tx.is_send() { "send " } else { "claim" };
        println!("  h{} {kind} {:>3}  {}", tx.height(), tx.amount(), tx.tx_hash());
    }
    let replayed = replay(me.address(), &batch, &chain).expect("wallet output replays");
    println!("replayed balance {}, one record confirms it: tip {} at {}", replayed.balance, replayed.tip_hash, replayed.tip_height);
    assert_eq!(replayed.balance, 5);
}
