//! Helpers shared by tests, examples and the acceptance suite: an in-memory
//! [`ClaimContext`] and a generator of random valid subchains.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::codec::{keygen, sign_tx, Address, Hash256, KeyPair, ReceiveTx, SendTx, SubchainTx};
use crate::subchain::{apply_in_place, ClaimContext, SubchainState};

#[derive(Clone, Debug)]
struct MockBlock {
    hash: Hash256,
    miner: Address,
    reward: u64,
    confirmations: BTreeMap<Address, u64>,
}

/// A linear main chain held in memory. Block `i` (0-based) has depth
/// `len - i`.
#[derive(Clone, Debug, Default)]
pub struct MockChain {
    maturity: u64,
    reward: u64,
    allocations: BTreeMap<Address, u64>,
    blocks: Vec<MockBlock>,
    sends: HashMap<(Address, Hash256), SendTx>,
    confirmed: BTreeMap<Address, u64>,
}

impl MockChain {
    pub fn new(maturity: u64) -> Self {
        MockChain {
            maturity,
            reward: 50,
            ..Default::default()
        }
    }

    pub fn with_reward(mut self, reward: u64) -> Self {
        self.reward = reward;
        self
    }

    pub fn reward(&self) -> u64 {
        self.reward
    }

    pub fn allocate(&mut self, address: Address, balance: u64) {
        self.allocations.insert(address, balance);
    }

    /// Makes a send visible to claim lookups once its sender is confirmed
    /// at or above its height.
    pub fn record_send(&mut self, tx: &SubchainTx) {
        if let SubchainTx::Send(send) = tx {
            self.sends
                .insert((send.current_address, send.tx_hash), send.clone());
        }
    }

    /// Appends a block confirming `(address, tip_height)` pairs.
    pub fn push_block(&mut self, miner: Address, confirms: &[(Address, u64)]) -> Hash256 {
        let height = self.blocks.len() as u64 + 1;
        let mut preimage = height.to_be_bytes().to_vec();
        preimage.extend_from_slice(&miner.0);
        for (addr, h) in confirms {
            preimage.extend_from_slice(&addr.0);
            preimage.extend_from_slice(&h.to_be_bytes());
            let slot = self.confirmed.entry(*addr).or_default();
            *slot = (*slot).max(*h);
        }
        let hash = Hash256::digest(&preimage);
        self.blocks.push(MockBlock {
            hash,
            miner,
            reward: self.reward,
            confirmations: confirms.iter().copied().collect(),
        });
        hash
    }

    /// Appends `n` empty blocks.
    pub fn bury(&mut self, n: u64) {
        for _ in 0..n {
            self.push_block(Address::ZERO, &[]);
        }
    }

    /// Drops the newest `n` blocks (a reorg to a shorter, empty branch).
    pub fn orphan_last(&mut self, n: usize) {
        let keep = self.blocks.len().saturating_sub(n);
        self.blocks.truncate(keep);
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    fn find(&self, hash: &Hash256) -> Option<(usize, &MockBlock)> {
        self.blocks.iter().enumerate().find(|(_, b)| b.hash == *hash)
    }
}

impl ClaimContext for MockChain {
    fn maturity(&self) -> u64 {
        self.maturity
    }

    fn genesis_balance(&self, address: &Address) -> u64 {
        self.allocations.get(address).copied().unwrap_or(0)
    }

    fn block_depth(&self, block: &Hash256) -> Option<u64> {
        self.find(block)
            .map(|(i, _)| (self.blocks.len() - i) as u64)
    }

    fn confirmed_height_in_block(&self, block: &Hash256, address: &Address) -> Option<u64> {
        self.find(block)
            .and_then(|(_, b)| b.confirmations.get(address).copied())
    }

    fn block_reward(&self, block: &Hash256) -> Option<(Address, u64)> {
        self.find(block).map(|(_, b)| (b.miner, b.reward))
    }

    fn confirmed_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx> {
        let send = self.sends.get(&(*sender, *tx_hash))?;
        let confirmed = self.confirmed.get(sender).copied().unwrap_or(0);
        (send.height <= confirmed).then(|| send.clone())
    }
}

/// Builds and signs the next transaction on top of a running state.
pub struct ChainBuilder {
    pub key: KeyPair,
    pub state: SubchainState,
    pub txs: Vec<SubchainTx>,
}

impl ChainBuilder {
    pub fn new(key: KeyPair, ctx: &dyn ClaimContext) -> Self {
        let address = key.address();
        ChainBuilder {
            key,
            state: SubchainState::genesis(address, ctx.genesis_balance(&address)),
            txs: Vec::new(),
        }
    }

    pub fn address(&self) -> Address {
        self.key.address()
    }

    pub fn send(&mut self, to: Address, amount: u64, ctx: &dyn ClaimContext) -> SubchainTx {
        let tx = SubchainTx::Send(SendTx {
            parent_hash: self.state.tip_hash,
            height: self.state.tip_height + 1,
            current_address: self.address(),
            recipient_address: to,
            amount,
            timestamp: 1_700_000_000 + self.state.tip_height,
            ..Default::default()
        });
        self.push(tx, ctx)
    }

    pub fn claim(
        &mut self,
        sender: Address,
        sender_tx_hash: Hash256,
        block: Hash256,
        amount: u64,
        ctx: &dyn ClaimContext,
    ) -> SubchainTx {
        let tx = SubchainTx::Receive(ReceiveTx {
            parent_hash: self.state.tip_hash,
            height: self.state.tip_height + 1,
            current_address: self.address(),
            sender_address: sender,
            sender_tx_hash,
            main_block_hash: block,
            amount,
            timestamp: 1_700_000_000 + self.state.tip_height,
            ..Default::default()
        });
        self.push(tx, ctx)
    }

    /// Signs `tx` and applies it; panics if the STF rejects it, since the
    /// builder is only meant to produce valid chains.
    fn push(&mut self, tx: SubchainTx, ctx: &dyn ClaimContext) -> SubchainTx {
        let signed = sign_tx(&tx, &self.key).expect("builder owns the key");
        apply_in_place(&mut self.state, &signed, ctx).expect("builder produced invalid tx");
        self.txs.push(signed.clone());
        signed
    }

    /// Signs without applying, for building invalid variants.
    pub fn sign_unchecked(&self, tx: SubchainTx) -> SubchainTx {
        sign_tx(&tx, &self.key).expect("builder owns the key")
    }
}

/// A random valid subchain of `len` transactions mixing sends, claims of
/// confirmed sends from a counterparty, and coinbase claims.
pub struct RandomSubchain {
    pub ctx: MockChain,
    pub owner: KeyPair,
    pub txs: Vec<SubchainTx>,
}

pub fn random_subchain<R: Rng>(rng: &mut R, len: usize, maturity: u64) -> RandomSubchain {
    let owner = keygen(Some(rng.gen::<[u8; 32]>().map(|b| b | 1))).expect("valid seed");
    let peer = keygen(Some(rng.gen::<[u8; 32]>().map(|b| b | 1))).expect("valid seed");
    let mut ctx = MockChain::new(maturity).with_reward(rng.gen_range(1..=1_000));
    ctx.allocate(owner.address(), rng.gen_range(0..=10_000));
    ctx.allocate(peer.address(), 1_000_000_000);

    let mut me = ChainBuilder::new(owner.clone(), &ctx);
    let mut them = ChainBuilder::new(peer, &ctx);
    while me.txs.len() < len {
        match rng.gen_range(0..10) {
            0..=4 if me.state.balance > 0 => {
                let amount = rng.gen_range(1..=me.state.balance);
                let to = if rng.gen_bool(0.5) {
                    them.address()
                } else {
                    Address(rng.gen())
                };
                let tx = me.send(to, amount, &ctx);
                ctx.record_send(&tx);
            }
            0..=7 => {
                let amount = rng.gen_range(1..=5_000);
                let send = them.send(owner.address(), amount, &ctx);
                ctx.record_send(&send);
                let block = ctx.push_block(Address::ZERO, &[(them.address(), them.state.tip_height)]);
                ctx.bury(maturity.saturating_sub(1));
                me.claim(them.address(), send.tx_hash(), block, amount, &ctx);
            }
            _ => {
                let block = ctx.push_block(owner.address(), &[]);
                ctx.bury(maturity.saturating_sub(1));
                let reward = ctx.reward();
                me.claim(Address::ZERO, Hash256::ZERO, block, reward, &ctx);
            }
        }
    }
    RandomSubchain {
        ctx,
        owner,
        txs: me.txs,
    }
}
