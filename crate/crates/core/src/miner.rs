//! The miner role: a pool of pending subchain tails, block templates with one
//! confirmation record per tail, sealing, and publication.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use crate::codec::{check_tx, Address, Hash256, SendTx, SubchainTx, TxFault};
use crate::mainchain::{
    seal, ConfirmationRecord, ExtendOutcome, MainBlock, SealError, BLOCK_OVERHEAD, RECORD_LEN,
};
use crate::network::{Envelope, MsgKind};
use crate::node::{IngestOutcome, NoRemote, Node, NodeError, RemoteFetch};
use crate::subchain::{ClaimContext, PendingChain, SubchainError, SubchainFragment, SubchainState};

pub const DEFAULT_POOL_CAPACITY: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PoolError {
    #[error("transaction {tx_hash} failed verification: {fault}")]
    InvalidSignature { tx_hash: Hash256, fault: TxFault },
    #[error("a different transaction with hash {0} is already known")]
    DuplicateHashConflict(Hash256),
    #[error("{address} already has a pooled transaction at height {height} (tip {tip})")]
    TailConflict { address: Address, height: u64, tip: u64 },
    #[error("subchain {address}: {source}")]
    Subchain {
        address: Address,
        #[source]
        source: SubchainError,
    },
    #[error("pool has no room for another address")]
    PoolFull,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MinerError {
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error("sealing aborted")]
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolAccept {
    Added,
    Duplicate,
    Replaced { dropped: usize },
}

struct Entry {
    chain: PendingChain,
    arrival: u64,
}

/// Pending tails, at most one per address, each pre-validated by the
/// state-transform function on top of its confirmed state.
pub struct TxPool {
    capacity: usize,
    entries: HashMap<Address, Entry>,
    order: BTreeMap<u64, Address>,
    known: HashMap<Hash256, SubchainTx>,
    next_arrival: u64,
    evicted: u64,
}

impl TxPool {
    /// `capacity` counts addresses, not transactions.
    pub fn new(capacity: usize) -> Self {
        TxPool {
            capacity,
            entries: HashMap::new(),
            order: BTreeMap::new(),
            known: HashMap::new(),
            next_arrival: 0,
            evicted: 0,
        }
    }

    /// Addresses with a pending tail.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pending_txs(&self) -> usize {
        self.known.len()
    }

    /// Tails dropped to make room.
    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn tail(&self, address: &Address) -> Option<&PendingChain> {
        self.entries.get(address).map(|e| &e.chain)
    }

    pub fn contains_tx(&self, hash: &Hash256) -> bool {
        self.known.contains_key(hash)
    }

    fn remove(&mut self, address: &Address) {
        if let Some(e) = self.entries.remove(address) {
            self.order.remove(&e.arrival);
            for tx in e.chain.pending() {
                self.known.remove(&tx.tx_hash());
            }
        }
    }

    fn entry(&mut self, address: Address, confirmed: SubchainState) -> Result<&mut Entry, PoolError> {
        if !self.entries.contains_key(&address) {
            if self.capacity == 0 {
                return Err(PoolError::PoolFull);
            }
            while self.entries.len() >= self.capacity {
                let (_, oldest) = self.order.pop_first().expect("non-empty");
                self.remove(&oldest);
                self.evicted += 1;
            }
            let arrival = self.next_arrival;
            self.next_arrival += 1;
            self.order.insert(arrival, address);
            self.entries.insert(
                address,
                Entry {
                    chain: PendingChain::new(confirmed),
                    arrival,
                },
            );
        }
        Ok(self.entries.get_mut(&address).expect("just inserted"))
    }

    fn drop_if_empty(&mut self, address: &Address) {
        if self.entries.get(address).is_some_and(|e| e.chain.pending().is_empty()) {
            self.remove(address);
        }
    }

    /// Appends `tx` to its address's tail. Signatures must already be checked.
    /// `confirmed` is the address's confirmed state, used when the address
    /// has no tail yet.
    pub fn insert(
        &mut self,
        tx: &SubchainTx,
        confirmed: SubchainState,
        ctx: &dyn ClaimContext,
    ) -> Result<PoolAccept, PoolError> {
        let hash = tx.tx_hash();
        if let Some(known) = self.known.get(&hash) {
            return if known == tx {
                Ok(PoolAccept::Duplicate)
            } else {
                Err(PoolError::DuplicateHashConflict(hash))
            };
        }
        let address = tx.current_address();
        let entry = self.entry(address, confirmed)?;
        let tip = entry.chain.tip().tip_height;
        let base = entry.chain.confirmed().tip_height;
        let result = if tx.height() >= 1 && tx.height() <= base {
            Err(PoolError::Subchain {
                address,
                source: SubchainError::ConfirmedFrozen {
                    fork_height: tx.height() - 1,
                    confirmed_height: base,
                },
            })
        } else if tx.height() >= 1 && tx.height() <= tip {
            Err(PoolError::TailConflict {
                address,
                height: tx.height(),
                tip,
            })
        } else {
            entry
                .chain
                .push(tx.clone(), ctx)
                .map_err(|source| PoolError::Subchain { address, source })
        };
        match result {
            Ok(()) => {
                self.known.insert(hash, tx.clone());
                Ok(PoolAccept::Added)
            }
            Err(e) => {
                self.drop_if_empty(&address);
                Err(e)
            }
        }
    }

    /// Replaces the tail above `tail.from_height`; the new tip must be
    /// strictly higher than the pooled one.
    pub fn replace_tail(
        &mut self,
        tail: &SubchainFragment,
        confirmed: SubchainState,
        ctx: &dyn ClaimContext,
    ) -> Result<PoolAccept, PoolError> {
        let address = tail.address;
        for tx in &tail.txs {
            if let Some(known) = self.known.get(&tx.tx_hash()) {
                if known != tx {
                    return Err(PoolError::DuplicateHashConflict(tx.tx_hash()));
                }
            }
        }
        let entry = self.entry(address, confirmed)?;
        let tip = entry.chain.tip().tip_height;
        if tail.to_height() <= tip {
            self.drop_if_empty(&address);
            return Err(PoolError::TailConflict {
                address,
                height: tail.to_height(),
                tip,
            });
        }
        let before: Vec<Hash256> = entry.chain.pending().iter().map(SubchainTx::tx_hash).collect();
        if let Err(source) = entry.chain.replace_tail(tail.from_height, tail, ctx) {
            self.drop_if_empty(&address);
            return Err(PoolError::Subchain { address, source });
        }
        let now: HashSet<Hash256> = entry.chain.pending().iter().map(SubchainTx::tx_hash).collect();
        let gone: Vec<Hash256> = before.into_iter().filter(|h| !now.contains(h)).collect();
        for h in &gone {
            self.known.remove(h);
        }
        for tx in &tail.txs {
            self.known.insert(tx.tx_hash(), tx.clone());
        }
        Ok(PoolAccept::Replaced { dropped: gone.len() })
    }

    /// Moves an address's confirmed base forward after a block, dropping
    /// confirmed or invalidated transactions.
    pub fn advance(&mut self, address: &Address, confirmed: SubchainState, ctx: &dyn ClaimContext) {
        let Some(entry) = self.entries.get_mut(address) else {
            return;
        };
        let before: Vec<Hash256> = entry.chain.pending().iter().map(SubchainTx::tx_hash).collect();
        entry.chain.advance_confirmed(confirmed, ctx);
        let now: HashSet<Hash256> = entry.chain.pending().iter().map(SubchainTx::tx_hash).collect();
        for h in before.iter().filter(|h| !now.contains(h)) {
            self.known.remove(h);
        }
        self.drop_if_empty(address);
    }

    /// Re-checks every tail against fresh confirmed states, e.g. after a reorg.
    pub fn revalidate(&mut self, confirmed: impl Fn(&Address) -> SubchainState, ctx: &dyn ClaimContext) {
        let mut addresses: Vec<Address> = self.entries.keys().copied().collect();
        addresses.sort();
        for a in addresses {
            self.advance(&a, confirmed(&a), ctx);
        }
    }

    /// One record per tail tip: longest tails first, ties by arrival, at
    /// most `limit` records, sorted by address.
    pub fn select(&self, limit: usize) -> Vec<ConfirmationRecord> {
        let mut tails: Vec<&Entry> = self.entries.values().filter(|e| !e.chain.pending().is_empty()).collect();
        tails.sort_by_key(|e| (std::cmp::Reverse(e.chain.pending().len()), e.arrival));
        let mut records: Vec<ConfirmationRecord> = tails
            .into_iter()
            .take(limit)
            .map(|e| ConfirmationRecord {
                address: e.chain.address(),
                tip_hash: e.chain.tip().tip_hash,
                tip_height: e.chain.tip().tip_height,
            })
            .collect();
        records.sort_by_key(|r| r.address);
        records
    }
}

impl RemoteFetch for TxPool {
    fn fetch_fragment(&self, address: &Address, from_height: u64, to_height: u64) -> Option<SubchainFragment> {
        let chain = &self.entries.get(address)?.chain;
        let base = chain.confirmed().tip_height;
        if from_height < base || to_height < from_height {
            return None;
        }
        let txs = chain
            .pending()
            .get((from_height - base) as usize..(to_height - base) as usize)?
            .to_vec();
        Some(SubchainFragment::new(*address, from_height, txs))
    }

    fn fetch_send(&self, _: &Address, _: &Hash256) -> Option<SendTx> {
        None
    }
}

/// What the next block will contain, before sealing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockTemplate {
    pub parent: Hash256,
    pub height: u64,
    pub miner: Address,
    pub bits: u32,
    pub records: Vec<ConfirmationRecord>,
}

impl BlockTemplate {
    /// Header, record count and 60 bytes per record; tail length never matters.
    pub fn encoded_len(&self) -> usize {
        BLOCK_OVERHEAD + RECORD_LEN * self.records.len()
    }

    pub fn block(&self, timestamp: u64) -> MainBlock {
        MainBlock::new(self.parent, self.height, timestamp, self.miner, self.bits, self.records.clone())
    }
}

/// Signature and digest checks fanned out over `workers` threads. Verdicts
/// keep input order and do not depend on the worker count.
pub fn verify_batch(txs: &[SubchainTx], workers: usize) -> Vec<Result<(), TxFault>> {
    let mut out = vec![Ok(()); txs.len()];
    let workers = workers.max(1).min(txs.len().max(1));
    if workers == 1 {
        for (tx, slot) in txs.iter().zip(&mut out) {
            *slot = check_tx(tx);
        }
        return out;
    }
    let chunk = txs.len().div_ceil(workers);
    thread::scope(|s| {
        for (src, dst) in txs.chunks(chunk).zip(out.chunks_mut(chunk)) {
            s.spawn(move || {
                for (tx, slot) in src.iter().zip(dst) {
                    *slot = check_tx(tx);
                }
            });
        }
    });
    out
}

/// A miner: a full node for chain and account state, plus the pool.
pub struct Miner {
    node: Node,
    pool: TxPool,
    address: Address,
    workers: usize,
}

impl Miner {
    pub fn new(node: Node, address: Address, pool_capacity: usize, workers: usize) -> Self {
        Miner {
            node,
            pool: TxPool::new(pool_capacity),
            address,
            workers: workers.max(1),
        }
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn pool(&self) -> &TxPool {
        &self.pool
    }

    pub fn address(&self) -> Address {
        self.address
    }

    /// Verifies and pools one or more consecutive transactions of an
    /// account. Known transactions are skipped; a height conflict switches to
    /// tail replacement for the rest.
    pub fn submit(&mut self, frag: &SubchainFragment) -> Result<PoolAccept, MinerError> {
        let mut fresh = Vec::new();
        for tx in &frag.txs {
            let hash = tx.tx_hash();
            if let Some(stored) = self.node.lookup_tx(&hash) {
                if stored != *tx {
                    return Err(PoolError::DuplicateHashConflict(hash).into());
                }
            } else if !self.pool.contains_tx(&hash) {
                fresh.push(tx.clone());
            }
        }
        for (tx, verdict) in fresh.iter().zip(verify_batch(&fresh, self.workers)) {
            verdict.map_err(|fault| PoolError::InvalidSignature {
                tx_hash: tx.tx_hash(),
                fault,
            })?;
        }
        self.node.remember_verified(&fresh);
        let Miner { node, pool, .. } = self;
        node.with_claims(&NoRemote, |ctx| {
            let mut result = PoolAccept::Duplicate;
            for (i, tx) in frag.txs.iter().enumerate() {
                let confirmed = node.confirmed_state(&tx.current_address());
                if tx.height() <= confirmed.tip_height && node.lookup_tx(&tx.tx_hash()).is_some() {
                    continue;
                }
                match pool.insert(tx, confirmed.clone(), ctx) {
                    Ok(PoolAccept::Duplicate) => {}
                    Ok(other) => result = other,
                    Err(PoolError::TailConflict { .. }) => {
                        let rest = SubchainFragment::new(frag.address, tx.height() - 1, frag.txs[i..].to_vec());
                        return Ok(pool.replace_tail(&rest, confirmed, ctx)?);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Ok(result)
        })
    }

    /// Template on the current tip filled up to the block capacity.
    pub fn template(&self) -> BlockTemplate {
        let view = self.node.view();
        BlockTemplate {
            parent: view.tip_hash(),
            height: view.height() + 1,
            miner: self.address,
            bits: view.params().bits,
            records: self.pool.select(view.params().capacity()),
        }
    }

    /// Builds, seals and applies the next block.
    pub fn mine_block(&mut self, timestamp: u64, abort: &AtomicBool) -> Result<MainBlock, MinerError> {
        let block = match seal(self.template().block(timestamp), abort) {
            Ok(b) => b,
            Err(SealError::Aborted) => return Err(MinerError::Aborted),
            Err(SealError::Chain(e)) => return Err(NodeError::Chain(e).into()),
        };
        self.accept_block(block.clone())?;
        Ok(block)
    }

    /// Applies a block (own or foreign) and retires confirmed tails.
    pub fn accept_block(&mut self, block: MainBlock) -> Result<IngestOutcome, MinerError> {
        let records: Vec<Address> = block.confirmations.iter().map(|r| r.address).collect();
        let outcome = self.node.ingest_block(block, &self.pool)?;
        let Miner { node, pool, .. } = self;
        node.with_claims(&NoRemote, |ctx| match &outcome {
            IngestOutcome::Accepted {
                extend: ExtendOutcome::Extended,
                ..
            } => {
                for a in &records {
                    pool.advance(a, node.confirmed_state(a), ctx);
                }
            }
            IngestOutcome::Accepted {
                extend: ExtendOutcome::Reorg { .. },
                ..
            } => pool.revalidate(|a| node.confirmed_state(a), ctx),
            _ => {}
        });
        Ok(outcome)
    }

    /// Handles one network message; other kinds are ignored.
    pub fn handle(&mut self, env: &Envelope) -> Result<(), MinerError> {
        match env.kind {
            MsgKind::NewTx => {
                let frag = SubchainFragment::decode(&env.payload).map_err(NodeError::from)?;
                self.submit(&frag)?;
            }
            MsgKind::NewBlock => {
                let block = MainBlock::decode(&env.payload).map_err(NodeError::from)?;
                self.accept_block(block)?;
            }
            _ => {}
        }
        Ok(())
    }
}

/// The miner's connection to the network.
pub trait MinerLink {
    /// Messages received since the last call, without blocking.
    fn poll(&mut self) -> Vec<Envelope>;
    fn publish(&mut self, block: &MainBlock);
}

#[derive(Clone, Copy, Debug)]
pub struct LoopConfig {
    /// Minimum time between published blocks.
    pub cadence: Duration,
    pub max_blocks: Option<u64>,
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Mines on the current tip until `stop` is set. A block arriving while
/// sealing aborts the seal and the template is rebuilt on the new tip.
/// Returns the hashes of published blocks.
pub fn mine_loop(miner: &mut Miner, link: &mut dyn MinerLink, stop: &AtomicBool, cfg: LoopConfig) -> Vec<Hash256> {
    let mut published = Vec::new();
    let mut last: Option<Instant> = None;
    while !stop.load(Ordering::Relaxed) && cfg.max_blocks.is_none_or(|m| (published.len() as u64) < m) {
        for env in link.poll() {
            let _ = miner.handle(&env);
        }
        if let Some(t) = last {
            let waited = t.elapsed();
            if waited < cfg.cadence {
                thread::sleep((cfg.cadence - waited).min(Duration::from_millis(20)));
                continue;
            }
        }
        let template = miner.template();
        let abort = AtomicBool::new(false);
        let (sealed, inbox) = thread::scope(|s| {
            let worker = s.spawn(|| seal(template.block(unix_now()), &abort));
            let mut inbox = Vec::new();
            while !worker.is_finished() {
                let msgs = link.poll();
                if stop.load(Ordering::Relaxed) || msgs.iter().any(|m| m.kind == MsgKind::NewBlock) {
                    abort.store(true, Ordering::Relaxed);
                }
                inbox.extend(msgs);
                thread::sleep(Duration::from_millis(1));
            }
            (worker.join().expect("seal thread panicked"), inbox)
        });
        for env in &inbox {
            let _ = miner.handle(env);
        }
        let Ok(block) = sealed else { continue };
        if miner.node().view().tip_hash() != template.parent {
            continue;
        }
        if miner.accept_block(block.clone()).is_ok() {
            link.publish(&block);
            published.push(block.hash());
            last = Some(Instant::now());
        }
    }
    published
}
