//! Build a random account history, then verify it in fragments and compare
//! with a full replay.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use acctshard::subchain::{replay, verify_fragment, ClaimContext, SubchainFragment, SubchainState};
use acctshard::testkit::random_subchain;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let sc = random_subchain(&mut rng, 60, 6);
    let address = sc.owner.address();
    let sends = sc.txs.iter().filter(|t| t.is_send()).count();
    println!("{address}: {} txs ({sends} sends, {} claims)", sc.txs.len(), sc.txs.len() - sends);

    let full = replay(address, &sc.txs, &sc.ctx).expect("generated chains are valid");
    let mut state = SubchainState::genesis(address, sc.ctx.genesis_balance(&address));
    for (from, to) in [(0, 17), (17, 18), (18, 45), (45, 60)] {
        let frag = SubchainFragment::new(address, from as u64, sc.txs[from..to].to_vec());
        state = verify_fragment(&state, &frag, &sc.ctx).expect("fragment verifies");
        println!("after ({from:>2}, {to:>2}]  balance {:>8}  tip {}", state.balance, state.tip_hash);
    }
    assert_eq!(state, full);
    println!("fragments agree with full replay: balance {}, {} claims", full.balance, full.claimed_sends.len() + full.claimed_coinbases.len());
}
