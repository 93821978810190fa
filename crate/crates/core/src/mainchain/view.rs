use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use num_bigint::BigUint;

use super::pow::{hash_meets_target, work};
use super::{ChainError, ChainParams, MainBlock};
use crate::codec::{Address, Hash256, SendTx};
use crate::subchain::ClaimContext;

use super::validate::SendLookup;

/// Where an address was confirmed on the canonical chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Confirmation {
    pub block_height: u64,
    pub block_hash: Hash256,
    pub tip_hash: Hash256,
    pub tip_height: u64,
}

#[derive(Clone, Debug)]
struct Entry {
    block: Arc<MainBlock>,
    total_work: BigUint,
    seen: u64,
}

/// What [`ChainView::extend`] did with a block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtendOutcome {
    /// Already known; nothing changed.
    Duplicate,
    /// Stored on a branch that is not (yet) canonical.
    SideBranch,
    /// The block is the new canonical tip on top of the old one.
    Extended,
    /// The canonical chain switched branches. Blocks are listed in height order.
    Reorg {
        fork_height: u64,
        disconnected: Vec<Hash256>,
        connected: Vec<Hash256>,
    },
}

/// Every known block, the canonical chain, and a per-address index of
/// canonical confirmations.
#[derive(Clone, Debug)]
pub struct ChainView {
    params: ChainParams,
    allocations: Arc<BTreeMap<Address, u64>>,
    blocks: HashMap<Hash256, Entry>,
    canonical: Vec<Hash256>,
    history: HashMap<Address, Vec<Confirmation>>,
    next_seen: u64,
}

impl ChainView {
    /// Starts a chain from `genesis`, which is trusted without a PoW check.
    pub fn new(params: ChainParams, genesis: MainBlock, allocations: BTreeMap<Address, u64>) -> Self {
        let hash = genesis.hash();
        let mut blocks = HashMap::new();
        blocks.insert(
            hash,
            Entry {
                block: Arc::new(genesis),
                total_work: BigUint::default(),
                seen: 0,
            },
        );
        ChainView {
            params,
            allocations: Arc::new(allocations),
            blocks,
            canonical: vec![hash],
            history: HashMap::new(),
            next_seen: 1,
        }
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn allocations(&self) -> &BTreeMap<Address, u64> {
        &self.allocations
    }

    pub fn genesis_balance(&self, address: &Address) -> u64 {
        self.allocations.get(address).copied().unwrap_or(0)
    }

    pub fn genesis_hash(&self) -> Hash256 {
        self.canonical[0]
    }

    pub fn tip_hash(&self) -> Hash256 {
        *self.canonical.last().expect("genesis is always present")
    }

    pub fn tip(&self) -> &MainBlock {
        self.get(&self.tip_hash()).expect("tip is stored")
    }

    pub fn height(&self) -> u64 {
        self.canonical.len() as u64 - 1
    }

    pub fn contains(&self, hash: &Hash256) -> bool {
        self.blocks.contains_key(hash)
    }

    pub fn get(&self, hash: &Hash256) -> Option<&MainBlock> {
        self.blocks.get(hash).map(|e| e.block.as_ref())
    }

    pub fn get_arc(&self, hash: &Hash256) -> Option<Arc<MainBlock>> {
        self.blocks.get(hash).map(|e| e.block.clone())
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_work(&self, hash: &Hash256) -> Option<&BigUint> {
        self.blocks.get(hash).map(|e| &e.total_work)
    }

    pub fn canonical_hash(&self, height: u64) -> Option<Hash256> {
        self.canonical.get(height as usize).copied()
    }

    pub fn canonical_hashes(&self) -> &[Hash256] {
        &self.canonical
    }

    pub fn is_canonical(&self, hash: &Hash256) -> bool {
        self.get(hash)
            .is_some_and(|b| self.canonical_hash(b.height()) == Some(*hash))
    }

    /// Depth of a canonical block: the tip has depth 1.
    pub fn depth(&self, hash: &Hash256) -> Option<u64> {
        let height = self.get(hash)?.height();
        (self.canonical_hash(height) == Some(*hash)).then(|| self.height() - height + 1)
    }

    /// Latest canonical confirmation of `address`.
    pub fn latest_confirmation(&self, address: &Address) -> Option<Confirmation> {
        self.history.get(address).and_then(|h| h.last().copied())
    }

    /// Confirmed subchain height of `address` on the canonical chain.
    pub fn confirmed_height(&self, address: &Address) -> u64 {
        self.latest_confirmation(address).map_or(0, |c| c.tip_height)
    }

    /// Latest canonical confirmation of `address` in blocks at or below `height`.
    pub fn confirmation_at(&self, address: &Address, height: u64) -> Option<Confirmation> {
        let list = self.history.get(address)?;
        let idx = list.partition_point(|c| c.block_height <= height);
        idx.checked_sub(1).map(|i| list[i])
    }

    /// Earliest canonical confirmation of `address` covering subchain height
    /// `tx_height`.
    pub fn first_confirmation_covering(&self, address: &Address, tx_height: u64) -> Option<Confirmation> {
        let list = self.history.get(address)?;
        list.get(list.partition_point(|c| c.tip_height < tx_height)).copied()
    }

    /// The index as one map of latest confirmations.
    pub fn latest_confirmations(&self) -> BTreeMap<Address, Confirmation> {
        self.history
            .iter()
            .filter_map(|(a, list)| list.last().map(|c| (*a, *c)))
            .collect()
    }

    /// Rebuilds the latest-confirmation map by scanning the canonical chain
    /// from genesis. Used to cross-check the incremental index.
    pub fn scan_confirmations(&self) -> BTreeMap<Address, Confirmation> {
        let mut out = BTreeMap::new();
        for hash in &self.canonical {
            let block = self.get(hash).expect("canonical blocks are stored");
            for r in &block.confirmations {
                out.insert(
                    r.address,
                    Confirmation {
                        block_height: block.height(),
                        block_hash: *hash,
                        tip_hash: r.tip_hash,
                        tip_height: r.tip_height,
                    },
                );
            }
        }
        out
    }

    /// Stores `block` and applies heaviest-work fork choice; on equal work the
    /// block seen first stays canonical.
    ///
    /// Only the header is checked here (parent, height, proof of work);
    /// record validity is the job of `validate_block`.
    pub fn extend(&mut self, block: MainBlock) -> Result<ExtendOutcome, ChainError> {
        let hash = block.hash();
        if self.blocks.contains_key(&hash) {
            return Ok(ExtendOutcome::Duplicate);
        }
        let parent = self
            .blocks
            .get(&block.parent())
            .ok_or(ChainError::UnknownParent(block.parent()))?;
        if block.height() != parent.block.height() + 1 {
            return Err(ChainError::BadHeight {
                parent: parent.block.height(),
                found: block.height(),
            });
        }
        if !hash_meets_target(&hash, block.header.difficulty_bits)? {
            return Err(ChainError::BadPoW);
        }
        let total_work = &parent.total_work + work(block.header.difficulty_bits)?;
        let extends_tip = block.parent() == self.tip_hash();
        let heavier = total_work > self.blocks[&self.tip_hash()].total_work;
        self.blocks.insert(
            hash,
            Entry {
                block: Arc::new(block),
                total_work,
                seen: self.next_seen,
            },
        );
        self.next_seen += 1;
        if !heavier {
            return Ok(ExtendOutcome::SideBranch);
        }
        if extends_tip {
            self.connect(hash);
            return Ok(ExtendOutcome::Extended);
        }

        let mut branch = vec![hash];
        let mut cursor = self.blocks[&hash].block.parent();
        while !self.is_canonical(&cursor) {
            branch.push(cursor);
            cursor = self.blocks[&cursor].block.parent();
        }
        branch.reverse();
        let fork_height = self.blocks[&cursor].block.height();
        let disconnected = self.canonical.split_off(fork_height as usize + 1);
        for list in self.history.values_mut() {
            let keep = list.partition_point(|c| c.block_height <= fork_height);
            list.truncate(keep);
        }
        self.history.retain(|_, list| !list.is_empty());
        for h in &branch {
            self.connect(*h);
        }
        Ok(ExtendOutcome::Reorg {
            fork_height,
            disconnected,
            connected: branch,
        })
    }

    fn connect(&mut self, hash: Hash256) {
        let block = self.blocks[&hash].block.clone();
        debug_assert_eq!(block.height(), self.canonical.len() as u64);
        self.canonical.push(hash);
        for r in &block.confirmations {
            self.history.entry(r.address).or_default().push(Confirmation {
                block_height: block.height(),
                block_hash: hash,
                tip_hash: r.tip_hash,
                tip_height: r.tip_height,
            });
        }
    }

    /// Order in which blocks were first stored.
    pub fn first_seen(&self, hash: &Hash256) -> Option<u64> {
        self.blocks.get(hash).map(|e| e.seen)
    }

    /// A read-only view of the chain ending at `tip`, which may be on a side
    /// branch.
    pub fn snapshot_at(&self, tip: &Hash256) -> Option<ChainSnapshot<'_>> {
        let tip_block = self.get(tip)?;
        let mut branch = Vec::new();
        let mut cursor = *tip;
        while !self.is_canonical(&cursor) {
            branch.push(cursor);
            cursor = self.get(&cursor)?.parent();
        }
        branch.reverse();
        Some(ChainSnapshot {
            view: self,
            fork_height: self.get(&cursor)?.height(),
            branch,
            tip_height: tip_block.height(),
        })
    }

    pub fn snapshot(&self) -> ChainSnapshot<'_> {
        ChainSnapshot {
            view: self,
            fork_height: self.height(),
            branch: Vec::new(),
            tip_height: self.height(),
        }
    }
}

/// The chain as seen from one tip: the canonical chain up to `fork_height`
/// followed by `branch`.
#[derive(Clone, Debug)]
pub struct ChainSnapshot<'a> {
    view: &'a ChainView,
    fork_height: u64,
    branch: Vec<Hash256>,
    tip_height: u64,
}

impl<'a> ChainSnapshot<'a> {
    pub fn view(&self) -> &'a ChainView {
        self.view
    }

    pub fn tip_height(&self) -> u64 {
        self.tip_height
    }

    pub fn hash_at(&self, height: u64) -> Option<Hash256> {
        if height <= self.fork_height {
            self.view.canonical_hash(height)
        } else {
            self.branch.get((height - self.fork_height - 1) as usize).copied()
        }
    }

    pub fn depth(&self, hash: &Hash256) -> Option<u64> {
        let height = self.view.get(hash)?.height();
        (height <= self.tip_height && self.hash_at(height) == Some(*hash))
            .then(|| self.tip_height - height + 1)
    }

    pub fn latest_confirmation(&self, address: &Address) -> Option<Confirmation> {
        for hash in self.branch.iter().rev() {
            let block = self.view.get(hash).expect("branch blocks are stored");
            if let Some(r) = block.confirmation_for(address) {
                return Some(Confirmation {
                    block_height: block.height(),
                    block_hash: *hash,
                    tip_hash: r.tip_hash,
                    tip_height: r.tip_height,
                });
            }
        }
        self.view.confirmation_at(address, self.fork_height)
    }

    pub fn confirmed_height(&self, address: &Address) -> u64 {
        self.latest_confirmation(address).map_or(0, |c| c.tip_height)
    }

    /// Pairs this snapshot with a source of send transactions, giving the
    /// context needed to validate claims.
    pub fn claims<S: SendLookup>(self, sends: S) -> ClaimView<'a, S> {
        ClaimView { snap: self, sends }
    }
}

/// A [`ClaimContext`] over one chain snapshot.
pub struct ClaimView<'a, S> {
    pub snap: ChainSnapshot<'a>,
    pub sends: S,
}

impl<S: SendLookup> ClaimContext for ClaimView<'_, S> {
    fn maturity(&self) -> u64 {
        self.snap.view.params.maturity
    }

    fn genesis_balance(&self, address: &Address) -> u64 {
        self.snap.view.genesis_balance(address)
    }

    fn block_depth(&self, block: &Hash256) -> Option<u64> {
        self.snap.depth(block)
    }

    fn confirmed_height_in_block(&self, block: &Hash256, address: &Address) -> Option<u64> {
        self.snap
            .view
            .get(block)?
            .confirmation_for(address)
            .map(|r| r.tip_height)
    }

    fn block_reward(&self, block: &Hash256) -> Option<(Address, u64)> {
        let b = self.snap.view.get(block)?;
        (b.height() > 0).then(|| (b.header.miner_address, self.snap.view.params.coinbase_amount(b.height())))
    }

    fn confirmed_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx> {
        let send = self.sends.lookup_send(sender, tx_hash)?;
        (send.current_address == *sender && send.height <= self.snap.confirmed_height(sender))
            .then_some(send)
    }
}
