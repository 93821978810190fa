//! Capacity of each block size profile, then seal and validate one block.

use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;

use acctshard::codec::{Address, Hash256};
use acctshard::mainchain::{
    capacity, genesis_block, seal, work, ChainParams, ChainView, ConfirmationRecord, ExtendOutcome, MainBlock,
};

fn main() {
    for (name, params) in [("bitcoin-like", ChainParams::bitcoin_like()), ("ethereum-like", ChainParams::ethereum_like())] {
        println!("{name:<14} {:>9} bytes -> {:>6} records per block", params.block_size_limit, capacity(params.block_size_limit));
    }

    let params = ChainParams::ethereum_like();
    let genesis = genesis_block(&BTreeMap::new(), 0, params.bits);
    let mut view = ChainView::new(params.clone(), genesis, BTreeMap::new());
    let records = (1..=3u8)
        .map(|i| ConfirmationRecord { address: Address([i; 20]), tip_hash: Hash256([i; 32]), tip_height: 1 })
        .collect();
    let block = MainBlock::new(view.tip_hash(), 1, 1_700_000_000, Address([0xee; 20]), params.bits, records);
    let sealed = seal(block, &AtomicBool::new(false)).expect("easiest target seals quickly");
    println!("sealed height {} nonce {} hash {}", sealed.height(), sealed.header.nonce, sealed.hash());
    println!("size {} bytes, work per block {}", sealed.encoded_len(), work(params.bits).unwrap());

    assert_eq!(view.extend(sealed).unwrap(), ExtendOutcome::Extended);
    println!("tip height {}, confirmed accounts {}", view.height(), view.latest_confirmations().len());
}
