//! The node role: keeps the whole main chain plus the subchains of its shard
//! prefix, validates blocks incrementally (full state-transform checks only
//! for hosted accounts), holds pending transaction tails, and serves
//! fragments to peers.

mod store;

pub use store::{FileKv, Keyspace, KvBackend, MemKv, WriteBatch};

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::codec::{
    check_tx, tx_digest, Address, CodecError, Hash256, SendTx, Signature, SubchainTx, TxFault,
};
use crate::mainchain::{
    validate_block, ChainError, ChainParams, ChainView, ExtendOutcome, MainBlock, RecordDelta,
    SendLookup, ShardOracle,
};
use crate::network::NodeId;
use crate::sharding::ShardAssignment;
use crate::subchain::{
    replay, ClaimContext, PendingChain, SubchainError, SubchainFragment, SubchainState,
};

/// Access to data held by other nodes.
pub trait RemoteFetch {
    fn fetch_fragment(&self, address: &Address, from_height: u64, to_height: u64)
        -> Option<SubchainFragment>;
    fn fetch_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx>;
}

/// A node with no peers.
pub struct NoRemote;

impl RemoteFetch for NoRemote {
    fn fetch_fragment(&self, _: &Address, _: u64, _: u64) -> Option<SubchainFragment> {
        None
    }

    fn fetch_send(&self, _: &Address, _: &Hash256) -> Option<SendTx> {
        None
    }
}

/// A directly reachable peer serves what it hosts.
impl RemoteFetch for Node {
    fn fetch_fragment(&self, address: &Address, from_height: u64, to_height: u64) -> Option<SubchainFragment> {
        self.serve_fragment(address, from_height, to_height).ok()
    }

    fn fetch_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx> {
        self.find_send(sender, tx_hash)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum NodeError {
    #[error("transaction {tx_hash} failed verification: {fault}")]
    InvalidSignature { tx_hash: Hash256, fault: TxFault },
    #[error("a different transaction with hash {0} is already known")]
    DuplicateHashConflict(Hash256),
    #[error("{address} already has a transaction at height {height} (tip {tip})")]
    TailConflict { address: Address, height: u64, tip: u64 },
    #[error("subchain {address}: {source}")]
    Subchain {
        address: Address,
        #[source]
        source: SubchainError,
    },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("block {block} held: fragment for {address} unavailable")]
    PartialFetch { block: Hash256, address: Address },
    #[error("{0} is outside this node's shard")]
    NotHosted(Address),
    #[error("heights ({from}, {to}] of {address} unavailable (tip {tip})")]
    RangeUnavailable {
        address: Address,
        from: u64,
        to: u64,
        tip: u64,
    },
    #[error("stored data is corrupt: {0}")]
    Corrupt(#[from] CodecError),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl From<std::io::Error> for NodeError {
    fn from(e: std::io::Error) -> Self {
        NodeError::Storage(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxAccept {
    /// Appended to the hosted account's pending tail.
    Added,
    /// Byte-identical to a known transaction; nothing changed.
    Duplicate,
    /// Signature checked, but the account is not hosted here.
    Relayed,
    /// A longer owner fork replaced part of the pending tail.
    Replaced { dropped: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IngestOutcome {
    Duplicate,
    /// Parent unknown; held until it arrives.
    Orphan,
    Accepted {
        extend: ExtendOutcome,
        /// Records replayed through the state-transform function.
        verified: usize,
        /// Records checked structurally only (not hosted here).
        checked: usize,
    },
}

/// Serialized bytes held by a node, split into main-chain and subchain data.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct StorageReport {
    pub main_chain_bytes: u64,
    pub subchain_bytes: u64,
    /// Accounts with stored subchain data.
    pub subchains: u64,
    /// Stored (confirmed) subchain transactions.
    pub subchain_txs: u64,
}

/// Work counters, for benchmarks and tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub signature_checks: u64,
    pub stf_records: u64,
    pub remote_fetches: u64,
    pub stale_accounts: u64,
}

fn tx_key(address: &Address, height: u64) -> Vec<u8> {
    let mut key = address.0.to_vec();
    key.extend_from_slice(&height.to_be_bytes());
    key
}

fn claimed_key(address: &Address, coinbase: bool, hash: &Hash256) -> Vec<u8> {
    let mut key = address.0.to_vec();
    key.push(coinbase as u8);
    key.extend_from_slice(&hash.0);
    key
}

fn seen_value(address: &Address, height: u64) -> Vec<u8> {
    tx_key(address, height)
}

/// Read helpers over a backend.
struct Stored<'a>(&'a dyn KvBackend);

impl Stored<'_> {
    fn tx(&self, address: &Address, height: u64) -> Option<SubchainTx> {
        let bytes = self.0.get(Keyspace::SubchainTx, &tx_key(address, height))?;
        SubchainTx::decode(&bytes).ok()
    }

    fn seen(&self, hash: &Hash256) -> Option<SubchainTx> {
        let loc = self.0.get(Keyspace::SeenTx, &hash.0)?;
        let address = Address(loc.get(..20)?.try_into().ok()?);
        let height = u64::from_be_bytes(loc.get(20..28)?.try_into().ok()?);
        self.tx(&address, height)
    }

    fn confirmed_state(&self, address: &Address) -> Option<SubchainState> {
        let header = self.0.get(Keyspace::TipState, &address.0)?;
        let mut state = SubchainState::decode_header(&header).ok()?;
        for (key, _) in self.0.scan_prefix(Keyspace::Claimed, &address.0) {
            let hash = Hash256(key[21..53].try_into().ok()?);
            if key[20] == 1 {
                state.claimed_coinbases.insert(hash);
            } else {
                state.claimed_sends.insert(hash);
            }
        }
        Some(state)
    }

    fn send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx> {
        match self.seen(tx_hash)? {
            SubchainTx::Send(s) if s.current_address == *sender && s.tx_hash == *tx_hash => Some(s),
            _ => None,
        }
    }
}

/// Send lookup: local confirmed data first, then peers for foreign accounts.
struct Sends<'a> {
    store: &'a dyn KvBackend,
    assignment: ShardAssignment,
    remote: &'a dyn RemoteFetch,
}

impl SendLookup for Sends<'_> {
    fn lookup_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx> {
        if let Some(send) = Stored(self.store).send(sender, tx_hash) {
            return Some(send);
        }
        if self.assignment.hosts(sender) {
            return None;
        }
        self.remote
            .fetch_send(sender, tx_hash)
            .filter(|s| s.current_address == *sender && s.tx_hash == *tx_hash)
    }
}

fn cached_check(cache: &HashMap<Hash256, Signature>, tx: &SubchainTx) -> Result<(), TxFault> {
    if cache.get(&tx.tx_hash()) == Some(&tx.signature()) {
        if tx_digest(tx) != tx.tx_hash() {
            return Err(TxFault::DigestMismatch);
        }
        return Ok(());
    }
    check_tx(tx)
}

/// A transaction at `height` of `address` known to this node, confirmed or pending.
fn known_tx(
    store: &dyn KvBackend,
    accounts: &HashMap<Address, PendingChain>,
    address: &Address,
    height: u64,
) -> Option<SubchainTx> {
    if let Some(chain) = accounts.get(address) {
        let base = chain.confirmed().tip_height;
        if height > base {
            return chain.pending().get((height - base - 1) as usize).cloned();
        }
    }
    Stored(store).tx(address, height)
}

fn known_range(
    store: &dyn KvBackend,
    accounts: &HashMap<Address, PendingChain>,
    address: &Address,
    from: u64,
    to: u64,
) -> Option<Vec<SubchainTx>> {
    (from + 1..=to)
        .map(|h| known_tx(store, accounts, address, h))
        .collect()
}

struct NodeOracle<'a> {
    assignment: ShardAssignment,
    store: &'a dyn KvBackend,
    accounts: &'a HashMap<Address, PendingChain>,
    sig_cache: &'a HashMap<Hash256, Signature>,
    remote: &'a dyn RemoteFetch,
    view: &'a ChainView,
}

impl NodeOracle<'_> {
    fn sends(&self) -> Sends<'_> {
        Sends {
            store: self.store,
            assignment: self.assignment,
            remote: self.remote,
        }
    }

    fn range(&self, address: &Address, from: u64, to: u64, tip_hash: &Hash256) -> Option<Vec<SubchainTx>> {
        let ends_at = |txs: &Vec<SubchainTx>| {
            txs.last().map_or(to == from, |t| t.tx_hash() == *tip_hash)
        };
        if let Some(txs) = known_range(self.store, self.accounts, address, from, to).filter(ends_at) {
            return Some(txs);
        }
        self.remote
            .fetch_fragment(address, from, to)
            .map(|f| f.txs)
            .filter(|txs| txs.len() as u64 == to - from && ends_at(txs))
    }
}

impl SendLookup for NodeOracle<'_> {
    fn lookup_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx> {
        self.sends().lookup_send(sender, tx_hash)
    }
}

impl ShardOracle for NodeOracle<'_> {
    fn verifies(&self, address: &Address) -> bool {
        self.assignment.hosts(address)
    }

    fn state_at(&self, address: &Address, height: u64, tip_hash: &Hash256) -> Option<SubchainState> {
        if let Some(chain) = self.accounts.get(address) {
            let c = chain.confirmed();
            if c.tip_height == height && c.tip_hash == *tip_hash {
                return Some(c.clone());
            }
        }
        if let Some(s) = Stored(self.store).confirmed_state(address) {
            if s.tip_height == height && s.tip_hash == *tip_hash {
                return Some(s);
            }
        }
        let txs = self.range(address, 0, height, tip_hash)?;
        let ctx = self.view.snapshot().claims(self.sends());
        replay(*address, &txs, &ctx).ok()
    }

    fn fragment(
        &self,
        address: &Address,
        from_height: u64,
        to_height: u64,
        tip_hash: &Hash256,
    ) -> Option<SubchainFragment> {
        let txs = self.range(address, from_height, to_height, tip_hash)?;
        Some(SubchainFragment::new(*address, from_height, txs))
    }

    fn check(&self, tx: &SubchainTx) -> Result<(), TxFault> {
        cached_check(self.sig_cache, tx)
    }
}

/// One node: storage, chain view, and hosted account state.
pub struct Node {
    id: NodeId,
    assignment: ShardAssignment,
    store: Box<dyn KvBackend>,
    view: ChainView,
    accounts: HashMap<Address, PendingChain>,
    pending_seen: HashMap<Hash256, SubchainTx>,
    sig_cache: HashMap<Hash256, Signature>,
    held: BTreeMap<Hash256, MainBlock>,
    stats: NodeStats,
}

impl Node {
    /// Opens a node over `store`, writing `genesis` if the store is empty and
    /// otherwise reloading the chain and hosted accounts from it.
    pub fn open(
        id: NodeId,
        assignment: ShardAssignment,
        params: ChainParams,
        genesis: MainBlock,
        allocations: BTreeMap<Address, u64>,
        mut store: Box<dyn KvBackend>,
    ) -> Result<Self, NodeError> {
        let genesis_hash = genesis.hash();
        let mut blocks = Vec::new();
        match store.get(Keyspace::CanonicalHeight, &0u64.to_be_bytes()) {
            None => {
                let mut batch = WriteBatch::new();
                batch.put(Keyspace::Blocks, genesis_hash.0.to_vec(), genesis.encode());
                batch.put(Keyspace::CanonicalHeight, 0u64.to_be_bytes().to_vec(), genesis_hash.0.to_vec());
                batch.put(Keyspace::Meta, b"assignment".to_vec(), assignment.encode());
                store.apply(batch)?;
            }
            Some(stored) => {
                if stored != genesis_hash.0 {
                    return Err(NodeError::Corrupt(CodecError::Malformed("store holds a different genesis")));
                }
                for (_, bytes) in store.scan_prefix(Keyspace::Blocks, &[]) {
                    let block = MainBlock::decode(&bytes)?;
                    if block.height() > 0 {
                        blocks.push(block);
                    }
                }
            }
        }
        let mut view = ChainView::new(params, genesis, allocations);
        blocks.sort_by_key(|b| b.height());
        for block in blocks {
            view.extend(block)?;
        }
        let mut node = Node {
            id,
            assignment,
            store,
            view,
            accounts: HashMap::new(),
            pending_seen: HashMap::new(),
            sig_cache: HashMap::new(),
            held: BTreeMap::new(),
            stats: NodeStats::default(),
        };
        for (key, _) in node.store.scan_prefix(Keyspace::TipState, &[]) {
            let address = Address(key.as_slice().try_into().map_err(|_| CodecError::Truncated)?);
            if let Some(state) = Stored(&*node.store).confirmed_state(&address) {
                node.accounts.insert(address, PendingChain::new(state));
            }
        }
        Ok(node)
    }

    /// A node backed by memory.
    pub fn in_memory(
        id: NodeId,
        assignment: ShardAssignment,
        params: ChainParams,
        genesis: MainBlock,
        allocations: BTreeMap<Address, u64>,
    ) -> Self {
        Self::open(id, assignment, params, genesis, allocations, Box::new(MemKv::new()))
            .expect("memory store cannot fail")
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn assignment(&self) -> ShardAssignment {
        self.assignment
    }

    pub fn hosts(&self, address: &Address) -> bool {
        self.assignment.hosts(address)
    }

    pub fn view(&self) -> &ChainView {
        &self.view
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn held_blocks(&self) -> usize {
        self.held.len()
    }

    /// Hosted accounts this node has state for.
    pub fn accounts(&self) -> impl Iterator<Item = (&Address, &PendingChain)> {
        self.accounts.iter()
    }

    pub fn account(&self, address: &Address) -> Option<&PendingChain> {
        self.accounts.get(address)
    }

    /// Confirmed state of a hosted account (the genesis state if untouched).
    pub fn confirmed_state(&self, address: &Address) -> SubchainState {
        self.accounts
            .get(address)
            .map(|c| c.confirmed().clone())
            .unwrap_or_else(|| SubchainState::genesis(*address, self.view.genesis_balance(address)))
    }

    /// State including pending transactions.
    pub fn tip_state(&self, address: &Address) -> SubchainState {
        self.accounts
            .get(address)
            .map(|c| c.tip().clone())
            .unwrap_or_else(|| self.confirmed_state(address))
    }

    /// A known transaction by hash, pending or confirmed.
    pub fn lookup_tx(&self, hash: &Hash256) -> Option<SubchainTx> {
        self.pending_seen
            .get(hash)
            .cloned()
            .or_else(|| Stored(&*self.store).seen(hash))
    }

    fn check_new(&mut self, tx: &SubchainTx) -> Result<bool, NodeError> {
        let hash = tx.tx_hash();
        if let Some(existing) = self.lookup_tx(&hash) {
            return if existing == *tx {
                Ok(false)
            } else {
                Err(NodeError::DuplicateHashConflict(hash))
            };
        }
        self.stats.signature_checks += 1;
        cached_check(&self.sig_cache, tx)
            .map_err(|fault| NodeError::InvalidSignature { tx_hash: hash, fault })?;
        self.sig_cache.insert(hash, tx.signature());
        Ok(true)
    }

    fn chain_entry(&mut self, address: Address) -> &mut PendingChain {
        let genesis = self.view.genesis_balance(&address);
        self.accounts
            .entry(address)
            .or_insert_with(|| PendingChain::new(SubchainState::genesis(address, genesis)))
    }

    /// Checks and queues one transaction. Hosted accounts get full
    /// state-transform pre-validation on top of their pending tail.
    pub fn accept_pending_tx(
        &mut self,
        tx: &SubchainTx,
        remote: &dyn RemoteFetch,
    ) -> Result<TxAccept, NodeError> {
        if !self.check_new(tx)? {
            return Ok(TxAccept::Duplicate);
        }
        let address = tx.current_address();
        if !self.hosts(&address) {
            return Ok(TxAccept::Relayed);
        }
        self.chain_entry(address);
        let sends = Sends {
            store: &*self.store,
            assignment: self.assignment,
            remote,
        };
        let ctx = self.view.snapshot().claims(sends);
        let chain = self.accounts.get_mut(&address).expect("just inserted");
        let tip = chain.tip().tip_height;
        let base = chain.confirmed().tip_height;
        if tx.height() >= 1 && tx.height() <= tip {
            if tx.height() <= base {
                return Err(NodeError::Subchain {
                    address,
                    source: SubchainError::ConfirmedFrozen {
                        fork_height: tx.height() - 1,
                        confirmed_height: base,
                    },
                });
            }
            return Err(NodeError::TailConflict {
                address,
                height: tx.height(),
                tip,
            });
        }
        chain
            .push(tx.clone(), &ctx)
            .map_err(|source| NodeError::Subchain { address, source })?;
        self.pending_seen.insert(tx.tx_hash(), tx.clone());
        Ok(TxAccept::Added)
    }

    /// Owner fork: replaces pending transactions above `tail.from_height`.
    /// The replacement must end strictly higher than the current tip.
    pub fn replace_tail(
        &mut self,
        tail: &SubchainFragment,
        remote: &dyn RemoteFetch,
    ) -> Result<TxAccept, NodeError> {
        let address = tail.address;
        let mut fresh = 0;
        for tx in &tail.txs {
            fresh += self.check_new(tx)? as usize;
        }
        if !self.hosts(&address) {
            return Ok(if fresh == 0 { TxAccept::Duplicate } else { TxAccept::Relayed });
        }
        self.chain_entry(address);
        let sends = Sends {
            store: &*self.store,
            assignment: self.assignment,
            remote,
        };
        let ctx = self.view.snapshot().claims(sends);
        let chain = self.accounts.get_mut(&address).expect("just inserted");
        let tip = chain.tip().tip_height;
        if tail.to_height() <= tip {
            return Err(NodeError::TailConflict {
                address,
                height: tail.to_height(),
                tip,
            });
        }
        let before: Vec<Hash256> = chain.pending().iter().map(SubchainTx::tx_hash).collect();
        chain
            .replace_tail(tail.from_height, tail, &ctx)
            .map_err(|source| NodeError::Subchain { address, source })?;
        let now: HashSet<Hash256> = chain.pending().iter().map(SubchainTx::tx_hash).collect();
        let dropped = before.iter().filter(|h| !now.contains(h)).count();
        for h in before.iter().filter(|h| !now.contains(h)) {
            self.pending_seen.remove(h);
        }
        for tx in &tail.txs {
            self.pending_seen.insert(tx.tx_hash(), tx.clone());
        }
        Ok(TxAccept::Replaced { dropped })
    }

    /// Accepts a batch of consecutive transactions of one account. Already
    /// known transactions are skipped; a conflict switches to tail
    /// replacement for the rest of the batch.
    pub fn accept_fragment(
        &mut self,
        frag: &SubchainFragment,
        remote: &dyn RemoteFetch,
    ) -> Result<TxAccept, NodeError> {
        let mut result = TxAccept::Duplicate;
        for (i, tx) in frag.txs.iter().enumerate() {
            match self.accept_pending_tx(tx, remote) {
                Ok(TxAccept::Duplicate) => {}
                Ok(other) => result = other,
                Err(NodeError::TailConflict { .. }) => {
                    let rest = SubchainFragment::new(frag.address, tx.height() - 1, frag.txs[i..].to_vec());
                    return self.replace_tail(&rest, remote);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(result)
    }

    /// Validates and stores a block. Hosted records are replayed through the
    /// state-transform function; others only get record-level checks.
    pub fn ingest_block(
        &mut self,
        block: MainBlock,
        remote: &dyn RemoteFetch,
    ) -> Result<IngestOutcome, NodeError> {
        let outcome = self.ingest_one(block, remote)?;
        if matches!(outcome, IngestOutcome::Accepted { .. }) {
            self.retry_held(remote);
        }
        Ok(outcome)
    }

    /// Retries held blocks whose parent is now known. Returns how many were
    /// accepted.
    pub fn retry_held(&mut self, remote: &dyn RemoteFetch) -> usize {
        let mut accepted = 0;
        loop {
            let ready: Vec<Hash256> = self
                .held
                .iter()
                .filter(|(_, b)| self.view.contains(&b.parent()))
                .map(|(h, _)| *h)
                .collect();
            let mut progress = false;
            for hash in ready {
                let Some(block) = self.held.remove(&hash) else { continue };
                if let Ok(IngestOutcome::Accepted { .. }) = self.ingest_one(block, remote) {
                    accepted += 1;
                    progress = true;
                }
            }
            if !progress {
                return accepted;
            }
        }
    }

    fn ingest_one(
        &mut self,
        block: MainBlock,
        remote: &dyn RemoteFetch,
    ) -> Result<IngestOutcome, NodeError> {
        let hash = block.hash();
        if self.view.contains(&hash) {
            return Ok(IngestOutcome::Duplicate);
        }
        if !self.view.contains(&block.parent()) {
            self.held.insert(hash, block);
            return Ok(IngestOutcome::Orphan);
        }
        let deltas = {
            let oracle = NodeOracle {
                assignment: self.assignment,
                store: &*self.store,
                accounts: &self.accounts,
                sig_cache: &self.sig_cache,
                remote,
                view: &self.view,
            };
            validate_block(&block, &self.view, &oracle)
        };
        let deltas = match deltas {
            Ok(d) => d,
            Err(ChainError::FragmentUnavailable { address }) => {
                self.stats.remote_fetches += 1;
                self.held.insert(hash, block);
                return Err(NodeError::PartialFetch { block: hash, address });
            }
            Err(e) => return Err(e.into()),
        };
        let verified = deltas.iter().filter(|d| d.state.is_some()).count();
        self.stats.stf_records += verified as u64;
        let checked = deltas.len() - verified;

        let encoded = block.encode();
        let height = block.height();
        let extend = self.view.extend(block)?;
        let mut batch = WriteBatch::new();
        batch.put(Keyspace::Blocks, hash.0.to_vec(), encoded);
        match &extend {
            ExtendOutcome::Duplicate | ExtendOutcome::SideBranch => {}
            ExtendOutcome::Extended => {
                batch.put(Keyspace::CanonicalHeight, height.to_be_bytes().to_vec(), hash.0.to_vec());
                self.apply_deltas(&deltas, &mut batch, remote);
            }
            ExtendOutcome::Reorg {
                disconnected,
                connected,
                ..
            } => {
                let old_height = height.max(self.view.height()) + disconnected.len() as u64;
                for h in self.view.height() + 1..=old_height {
                    batch.delete(Keyspace::CanonicalHeight, h.to_be_bytes().to_vec());
                }
                let mut touched = HashSet::new();
                for h in disconnected.iter().chain(connected) {
                    let b = self.view.get(h).expect("reorg blocks are stored");
                    if connected.contains(h) {
                        batch.put(Keyspace::CanonicalHeight, b.height().to_be_bytes().to_vec(), h.0.to_vec());
                    }
                    touched.extend(b.confirmations.iter().map(|r| r.address));
                }
                self.recompute_after_reorg(touched, &mut batch, remote);
            }
        }
        self.store.apply(batch)?;
        Ok(IngestOutcome::Accepted {
            extend,
            verified,
            checked,
        })
    }

    fn apply_deltas(&mut self, deltas: &[RecordDelta], batch: &mut WriteBatch, remote: &dyn RemoteFetch) {
        for delta in deltas {
            let (Some(state), Some(frag)) = (&delta.state, &delta.fragment) else {
                continue;
            };
            let address = delta.record.address;
            for tx in &frag.txs {
                self.sig_cache.insert(tx.tx_hash(), tx.signature());
            }
            write_confirmed(batch, state, &frag.txs);
            self.chain_entry(address);
        }
        let sends = Sends {
            store: &*self.store,
            assignment: self.assignment,
            remote,
        };
        let ctx = self.view.snapshot().claims(sends);
        for delta in deltas {
            let (Some(state), Some(frag)) = (&delta.state, &delta.fragment) else {
                continue;
            };
            let chain = self.accounts.get_mut(&delta.record.address).expect("inserted above");
            let before: Vec<Hash256> = chain.pending().iter().map(SubchainTx::tx_hash).collect();
            chain.advance_confirmed(state.clone(), &ctx);
            let now: HashSet<Hash256> = chain.pending().iter().map(SubchainTx::tx_hash).collect();
            for h in before.iter().filter(|h| !now.contains(h)) {
                self.pending_seen.remove(h);
            }
            for tx in &frag.txs {
                self.pending_seen.remove(&tx.tx_hash());
            }
        }
    }

    fn recompute_after_reorg(
        &mut self,
        touched: HashSet<Address>,
        batch: &mut WriteBatch,
        remote: &dyn RemoteFetch,
    ) {
        let mut touched: Vec<Address> = touched.into_iter().filter(|a| self.hosts(a)).collect();
        touched.sort();
        for address in touched {
            if self.rebuild_account(address, batch, remote).is_none() {
                self.stats.stale_accounts += 1;
            }
        }
        // claims in pending tails may reference blocks that left the chain
        let sends = Sends {
            store: &*self.store,
            assignment: self.assignment,
            remote,
        };
        let ctx = self.view.snapshot().claims(sends);
        let mut addresses: Vec<Address> = self.accounts.keys().copied().collect();
        addresses.sort();
        for address in addresses {
            let chain = self.accounts.get_mut(&address).expect("listed");
            if chain.pending().is_empty() {
                continue;
            }
            let before: Vec<Hash256> = chain.pending().iter().map(SubchainTx::tx_hash).collect();
            chain.advance_confirmed(chain.confirmed().clone(), &ctx);
            let now: HashSet<Hash256> = chain.pending().iter().map(SubchainTx::tx_hash).collect();
            for h in before.iter().filter(|h| !now.contains(h)) {
                self.pending_seen.remove(h);
            }
        }
    }

    /// Recomputes one hosted account from the canonical confirmation index.
    fn rebuild_account(
        &mut self,
        address: Address,
        batch: &mut WriteBatch,
        remote: &dyn RemoteFetch,
    ) -> Option<()> {
        let (height, tip_hash) = self
            .view
            .latest_confirmation(&address)
            .map_or((0, Hash256::ZERO), |c| (c.tip_height, c.tip_hash));
        let stored_tip = Stored(&*self.store)
            .confirmed_state(&address)
            .map_or(0, |s| s.tip_height);
        let pending_tip = self.accounts.get(&address).map_or(stored_tip, |c| c.tip().tip_height);
        let known: Vec<SubchainTx> = (1..=pending_tip)
            .map_while(|h| known_tx(&*self.store, &self.accounts, &address, h))
            .collect();
        let matches = height == 0
            || known
                .get(height as usize - 1)
                .is_some_and(|t| t.tx_hash() == tip_hash);
        let (confirmed, rest) = if matches {
            (known[..height as usize].to_vec(), known[height as usize..].to_vec())
        } else {
            self.stats.remote_fetches += 1;
            let frag = remote.fetch_fragment(&address, 0, height)?;
            if frag.tip_hash() != Some(tip_hash) || frag.check_links(Hash256::ZERO).is_err() {
                return None;
            }
            (frag.txs, Vec::new())
        };
        let sends = Sends {
            store: &*self.store,
            assignment: self.assignment,
            remote,
        };
        let ctx = self.view.snapshot().claims(sends);
        let mut state = replay(address, &confirmed, &ctx).ok()?;
        state.confirmed_height = height;

        for h in 1..=stored_tip {
            if let Some(tx) = Stored(&*self.store).tx(&address, h) {
                batch.delete(Keyspace::SeenTx, tx.tx_hash().0.to_vec());
            }
            batch.delete(Keyspace::SubchainTx, tx_key(&address, h));
        }
        for (key, _) in self.store.scan_prefix(Keyspace::Claimed, &address.0) {
            batch.delete(Keyspace::Claimed, key);
        }
        write_confirmed(batch, &state, &confirmed);

        let old_pending: Vec<Hash256> = self
            .accounts
            .get(&address)
            .map(|c| c.pending().iter().map(SubchainTx::tx_hash).collect())
            .unwrap_or_default();
        for h in old_pending {
            self.pending_seen.remove(&h);
        }
        let mut chain = PendingChain::new(state);
        for tx in rest {
            if chain.push(tx.clone(), &ctx).is_err() {
                break;
            }
            self.pending_seen.insert(tx.tx_hash(), tx);
        }
        self.accounts.insert(address, chain);
        Some(())
    }

    /// Consecutive transactions `(from_height, to_height]` of a hosted account.
    pub fn serve_fragment(
        &self,
        address: &Address,
        from_height: u64,
        to_height: u64,
    ) -> Result<SubchainFragment, NodeError> {
        if !self.hosts(address) {
            return Err(NodeError::NotHosted(*address));
        }
        let tip = self.tip_state(address).tip_height;
        let unavailable = NodeError::RangeUnavailable {
            address: *address,
            from: from_height,
            to: to_height,
            tip,
        };
        if from_height > to_height || to_height > tip {
            return Err(unavailable);
        }
        let txs = known_range(&*self.store, &self.accounts, address, from_height, to_height)
            .ok_or(unavailable)?;
        Ok(SubchainFragment::new(*address, from_height, txs))
    }

    /// A confirmed send stored here.
    pub fn find_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx> {
        Stored(&*self.store).send(sender, tx_hash)
    }

    /// Confirmed transactions stored for `address`.
    pub fn stored_txs(&self, address: &Address) -> Vec<SubchainTx> {
        self.store
            .scan_prefix(Keyspace::SubchainTx, &address.0)
            .into_iter()
            .filter_map(|(_, v)| SubchainTx::decode(&v).ok())
            .collect()
    }

    /// Every stored confirmed send paying `recipient`.
    pub fn confirmed_sends_to(&self, recipient: &Address) -> Vec<SendTx> {
        self.store
            .scan_prefix(Keyspace::SubchainTx, &[])
            .into_iter()
            .filter_map(|(_, v)| match SubchainTx::decode(&v) {
                Ok(SubchainTx::Send(s)) if s.recipient_address == *recipient => Some(s),
                _ => None,
            })
            .collect()
    }

    pub fn storage_report(&self) -> StorageReport {
        let mut report = StorageReport::default();
        for ks in Keyspace::ALL {
            let bytes = self.store.keyspace_bytes(ks);
            if ks.is_main_chain() {
                report.main_chain_bytes += bytes;
            } else if ks.is_subchain() {
                report.subchain_bytes += bytes;
            }
        }
        report.subchains = self.store.scan_prefix(Keyspace::TipState, &[]).len() as u64;
        report.subchain_txs = self.store.scan_prefix(Keyspace::SeenTx, &[]).len() as u64;
        report
    }

    /// Checks every hosted account against the canonical index and a full
    /// replay of its stored chain. Returns the first discrepancy.
    pub fn audit(&self, remote: &dyn RemoteFetch) -> Result<(), String> {
        let sends = Sends {
            store: &*self.store,
            assignment: self.assignment,
            remote,
        };
        let ctx = self.view.snapshot().claims(sends);
        let mut addresses: Vec<&Address> = self.accounts.keys().collect();
        addresses.sort();
        for address in addresses {
            let chain = &self.accounts[address];
            let (height, tip_hash) = self
                .view
                .latest_confirmation(address)
                .map_or((0, Hash256::ZERO), |c| (c.tip_height, c.tip_hash));
            let confirmed = chain.confirmed();
            if confirmed.tip_height != height || confirmed.tip_hash != tip_hash {
                return Err(format!("{address}: confirmed tip differs from the main chain index"));
            }
            let txs = self.stored_txs(address);
            let mut oracle = replay(*address, &txs, &ctx).map_err(|e| format!("{address}: replay failed: {e}"))?;
            oracle.confirmed_height = height;
            if oracle != *confirmed {
                return Err(format!("{address}: stored state differs from replay"));
            }
            let mut with_tail = txs;
            with_tail.extend(chain.pending().iter().cloned());
            let mut tip = replay(*address, &with_tail, &ctx)
                .map_err(|e| format!("{address}: pending tail no longer replays: {e}"))?;
            tip.confirmed_height = chain.tip().confirmed_height;
            if tip != *chain.tip() {
                return Err(format!("{address}: pending tip differs from replay"));
            }
        }
        Ok(())
    }

    /// Drops subchain data outside this node's prefix and compacts storage.
    /// Returns the number of accounts pruned.
    pub fn compact(&mut self) -> Result<usize, NodeError> {
        let mut batch = WriteBatch::new();
        let mut pruned = 0;
        for (key, _) in self.store.scan_prefix(Keyspace::TipState, &[]) {
            let address = Address(key.as_slice().try_into().map_err(|_| CodecError::Truncated)?);
            if self.hosts(&address) {
                continue;
            }
            pruned += 1;
            batch.delete(Keyspace::TipState, key);
            for (k, v) in self.store.scan_prefix(Keyspace::SubchainTx, &address.0) {
                if let Ok(tx) = SubchainTx::decode(&v) {
                    batch.delete(Keyspace::SeenTx, tx.tx_hash().0.to_vec());
                }
                batch.delete(Keyspace::SubchainTx, k);
            }
            for (k, _) in self.store.scan_prefix(Keyspace::Claimed, &address.0) {
                batch.delete(Keyspace::Claimed, k);
            }
            self.accounts.remove(&address);
        }
        self.store.apply(batch)?;
        self.store.compact()?;
        Ok(pruned)
    }

    /// Adds already-verified signatures to the cache, e.g. after a restart.
    pub fn remember_verified(&mut self, txs: &[SubchainTx]) {
        for tx in txs {
            self.sig_cache.insert(tx.tx_hash(), tx.signature());
        }
    }

    /// Context for validating claims against this node's canonical chain.
    pub fn with_claims<R>(&self, remote: &dyn RemoteFetch, f: impl FnOnce(&dyn ClaimContext) -> R) -> R {
        let sends = Sends {
            store: &*self.store,
            assignment: self.assignment,
            remote,
        };
        let ctx = self.view.snapshot().claims(sends);
        f(&ctx)
    }
}

fn write_confirmed(batch: &mut WriteBatch, state: &SubchainState, txs: &[SubchainTx]) {
    let address = state.address;
    for tx in txs {
        batch.put(Keyspace::SubchainTx, tx_key(&address, tx.height()), tx.encode());
        batch.put(Keyspace::SeenTx, tx.tx_hash().0.to_vec(), seen_value(&address, tx.height()));
        if let SubchainTx::Receive(r) = tx {
            let (coinbase, hash) = if r.is_coinbase() {
                (true, r.main_block_hash)
            } else {
                (false, r.sender_tx_hash)
            };
            batch.put(Keyspace::Claimed, claimed_key(&address, coinbase, &hash), Vec::new());
        }
    }
    batch.put(Keyspace::TipState, address.0.to_vec(), state.encode_header());
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::AtomicBool;

    use super::*;
    use crate::codec::{keygen, KeyPair};
    use crate::mainchain::{genesis_block, seal, ConfirmationRecord};
    use crate::testkit::{ChainBuilder, MockChain};

    fn key_with_bit(first_bit: bool, skip: u8) -> KeyPair {
        (skip..=255)
            .map(|s| keygen(Some([s; 32])).unwrap())
            .find(|k| k.address().bit(0) == first_bit)
            .unwrap()
    }

    struct Setup {
        genesis: MainBlock,
        allocations: BTreeMap<Address, u64>,
        params: ChainParams,
    }

    fn setup(funded: &[Address]) -> Setup {
        let allocations: BTreeMap<Address, u64> = funded.iter().map(|a| (*a, 1_000)).collect();
        let params = ChainParams::ethereum_like();
        Setup {
            genesis: genesis_block(&allocations, 0, params.bits),
            allocations,
            params,
        }
    }

    fn node(s: &Setup, assignment: ShardAssignment) -> Node {
        Node::in_memory(NodeId(0), assignment, s.params.clone(), s.genesis.clone(), s.allocations.clone())
    }

    fn mine(view: &ChainView, records: &[(Address, &SubchainTx)]) -> MainBlock {
        let records = records
            .iter()
            .map(|(a, tx)| ConfirmationRecord {
                address: *a,
                tip_hash: tx.tx_hash(),
                tip_height: tx.height(),
            })
            .collect();
        let block = MainBlock::new(view.tip_hash(), view.height() + 1, view.height() + 1, Address([9; 20]), view.params().bits, records);
        seal(block, &AtomicBool::new(false)).unwrap()
    }

    fn sends(key: &KeyPair, s: &Setup, n: usize) -> Vec<SubchainTx> {
        let mut ctx = MockChain::new(6);
        ctx.allocate(key.address(), s.allocations[&key.address()]);
        let mut b = ChainBuilder::new(key.clone(), &ctx);
        (0..n).map(|_| b.send(Address([7; 20]), 10, &ctx)).collect()
    }

    #[test]
    fn hosted_fragment_confirms_and_reingest_is_noop() {
        let key = key_with_bit(false, 1);
        let s = setup(&[key.address()]);
        let mut n = node(&s, ShardAssignment::FULL);
        let txs = sends(&key, &s, 10);
        for tx in &txs {
            assert_eq!(n.accept_pending_tx(tx, &NoRemote).unwrap(), TxAccept::Added);
        }
        let block = mine(n.view(), &[(key.address(), &txs[9])]);
        let out = n.ingest_block(block.clone(), &NoRemote).unwrap();
        assert_eq!(
            out,
            IngestOutcome::Accepted { extend: ExtendOutcome::Extended, verified: 1, checked: 0 }
        );
        let state = n.confirmed_state(&key.address());
        assert_eq!((state.tip_height, state.confirmed_height, state.balance), (10, 10, 900));
        assert!(n.account(&key.address()).unwrap().pending().is_empty());
        n.audit(&NoRemote).unwrap();

        let report = n.storage_report();
        assert_eq!(n.ingest_block(block, &NoRemote).unwrap(), IngestOutcome::Duplicate);
        assert_eq!(n.accept_pending_tx(&txs[3], &NoRemote).unwrap(), TxAccept::Duplicate);
        assert_eq!(n.storage_report(), report);
        assert_eq!(report.subchain_txs, 10);
    }

    #[test]
    fn foreign_records_get_no_stf_work() {
        let foreign = key_with_bit(true, 1);
        let s = setup(&[foreign.address()]);
        let mut n = node(&s, ShardAssignment::from_bit_str("0").unwrap());
        let txs = sends(&foreign, &s, 3);
        assert_eq!(n.accept_pending_tx(&txs[0], &NoRemote).unwrap(), TxAccept::Relayed);
        let block = mine(n.view(), &[(foreign.address(), &txs[2])]);
        let out = n.ingest_block(block, &NoRemote).unwrap();
        assert_eq!(
            out,
            IngestOutcome::Accepted { extend: ExtendOutcome::Extended, verified: 0, checked: 1 }
        );
        assert_eq!(n.stats().stf_records, 0);
        assert_eq!(n.storage_report().subchain_bytes, 0);
    }

    #[test]
    fn serve_fragment_ranges() {
        let key = key_with_bit(false, 1);
        let other = key_with_bit(true, 1);
        let s = setup(&[key.address(), other.address()]);
        let mut n = node(&s, ShardAssignment::from_bit_str("0").unwrap());
        let txs = sends(&key, &s, 7);
        for tx in &txs[..4] {
            n.accept_pending_tx(tx, &NoRemote).unwrap();
        }
        let block = mine(n.view(), &[(key.address(), &txs[3])]);
        n.ingest_block(block, &NoRemote).unwrap();
        for tx in &txs[4..] {
            n.accept_pending_tx(tx, &NoRemote).unwrap();
        }
        assert_eq!(n.serve_fragment(&key.address(), 0, 7).unwrap().txs, txs);
        assert_eq!(n.serve_fragment(&key.address(), 2, 5).unwrap().txs, txs[2..5].to_vec());
        assert_eq!(
            n.serve_fragment(&other.address(), 0, 1),
            Err(NodeError::NotHosted(other.address()))
        );
        assert!(matches!(
            n.serve_fragment(&key.address(), 3, 9),
            Err(NodeError::RangeUnavailable { tip: 7, .. })
        ));
    }

    #[test]
    fn forged_duplicate_hash_is_a_conflict() {
        let key = key_with_bit(false, 1);
        let s = setup(&[key.address()]);
        let mut n = node(&s, ShardAssignment::FULL);
        let tx = sends(&key, &s, 1).remove(0);
        n.accept_pending_tx(&tx, &NoRemote).unwrap();
        let mut forged = tx.clone();
        if let SubchainTx::Send(s) = &mut forged {
            s.amount = 11;
        }
        assert_eq!(
            n.accept_pending_tx(&forged, &NoRemote),
            Err(NodeError::DuplicateHashConflict(tx.tx_hash()))
        );
    }

    #[test]
    fn overspend_and_height_conflicts() {
        let key = key_with_bit(false, 1);
        let s = setup(&[key.address()]);
        let mut n = node(&s, ShardAssignment::FULL);
        let txs = sends(&key, &s, 2);
        n.accept_pending_tx(&txs[0], &NoRemote).unwrap();
        n.accept_pending_tx(&txs[1], &NoRemote).unwrap();
        let st = n.tip_state(&key.address());
        let big = key_sign(&key, SubchainTx::Send(SendTx {
            parent_hash: st.tip_hash,
            height: 3,
            current_address: key.address(),
            recipient_address: Address([1; 20]),
            amount: 981,
            ..Default::default()
        }));
        let err = n.accept_pending_tx(&big, &NoRemote).unwrap_err();
        assert!(matches!(err, NodeError::Subchain { source, .. } if matches!(source.root(), SubchainError::InsufficientBalance { .. })));

        let alt = key_sign(&key, SubchainTx::Send(SendTx {
            parent_hash: txs[0].tx_hash(),
            height: 2,
            current_address: key.address(),
            recipient_address: Address([2; 20]),
            amount: 5,
            ..Default::default()
        }));
        assert_eq!(
            n.accept_pending_tx(&alt, &NoRemote),
            Err(NodeError::TailConflict { address: key.address(), height: 2, tip: 2 })
        );
    }

    fn key_sign(key: &KeyPair, tx: SubchainTx) -> SubchainTx {
        crate::codec::sign_tx(&tx, key).unwrap()
    }

    #[test]
    fn longer_tail_replaces_pending() {
        let key = key_with_bit(false, 1);
        let s = setup(&[key.address()]);
        let mut n = node(&s, ShardAssignment::FULL);
        let txs = sends(&key, &s, 3);
        for tx in &txs {
            n.accept_pending_tx(tx, &NoRemote).unwrap();
        }
        let mut ctx = MockChain::new(6);
        ctx.allocate(key.address(), 1_000);
        let mut b = ChainBuilder::new(key.clone(), &ctx);
        b.send(Address([7; 20]), 10, &ctx);
        let fork: Vec<SubchainTx> = (0..3).map(|i| b.send(Address([3; 20]), 1 + i, &ctx)).collect();

        let short = SubchainFragment::new(key.address(), 1, fork[..2].to_vec());
        assert!(matches!(n.replace_tail(&short, &NoRemote), Err(NodeError::TailConflict { .. })));
        let long = SubchainFragment::new(key.address(), 1, fork.clone());
        assert_eq!(n.replace_tail(&long, &NoRemote).unwrap(), TxAccept::Replaced { dropped: 2 });
        assert_eq!(n.tip_state(&key.address()).tip_height, 4);
    }

    #[test]
    fn missing_fragment_holds_block_until_available() {
        let key = key_with_bit(false, 1);
        let s = setup(&[key.address()]);
        let mut n = node(&s, ShardAssignment::FULL);
        let txs = sends(&key, &s, 2);
        let block = mine(n.view(), &[(key.address(), &txs[1])]);
        let hash = block.hash();
        assert_eq!(
            n.ingest_block(block, &NoRemote),
            Err(NodeError::PartialFetch { block: hash, address: key.address() })
        );
        assert_eq!(n.held_blocks(), 1);
        for tx in &txs {
            n.accept_pending_tx(tx, &NoRemote).unwrap();
        }
        assert_eq!(n.retry_held(&NoRemote), 1);
        assert_eq!(n.view().tip_hash(), hash);
        assert_eq!(n.confirmed_state(&key.address()).tip_height, 2);
    }

    #[test]
    fn orphan_waits_for_parent() {
        let s = setup(&[]);
        let mut a = node(&s, ShardAssignment::FULL);
        let b1 = mine(a.view(), &[]);
        let mut other = node(&s, ShardAssignment::FULL);
        other.ingest_block(b1.clone(), &NoRemote).unwrap();
        let b2 = mine(other.view(), &[]);
        assert_eq!(a.ingest_block(b2.clone(), &NoRemote).unwrap(), IngestOutcome::Orphan);
        a.ingest_block(b1, &NoRemote).unwrap();
        assert_eq!(a.view().tip_hash(), b2.hash());
        assert_eq!(a.held_blocks(), 0);
    }

    #[test]
    fn fresh_node_reports_no_subchain_bytes() {
        assert!(Keyspace::ALL.iter().all(|k| MemKv::new().keyspace_bytes(*k) == 0));
        let s = setup(&[]);
        let n = node(&s, ShardAssignment::FULL);
        let r = n.storage_report();
        assert_eq!((r.subchain_bytes, r.subchains, r.subchain_txs), (0, 0, 0));
        assert!(r.main_chain_bytes > 0);
    }

    #[test]
    fn reopen_restores_chain_and_accounts() {
        let dir = tempfile::tempdir().unwrap();
        let key = key_with_bit(false, 1);
        let s = setup(&[key.address()]);
        let open = || {
            Node::open(
                NodeId(0),
                ShardAssignment::FULL,
                s.params.clone(),
                s.genesis.clone(),
                s.allocations.clone(),
                Box::new(FileKv::open(dir.path()).unwrap()),
            )
            .unwrap()
        };
        let mut n = open();
        let txs = sends(&key, &s, 4);
        for tx in &txs {
            n.accept_pending_tx(tx, &NoRemote).unwrap();
        }
        n.ingest_block(mine(n.view(), &[(key.address(), &txs[3])]), &NoRemote).unwrap();
        let (tip, state, report) = (n.view().tip_hash(), n.confirmed_state(&key.address()), n.storage_report());
        drop(n);
        let n = open();
        assert_eq!(n.view().tip_hash(), tip);
        assert_eq!(n.confirmed_state(&key.address()), state);
        assert_eq!(n.storage_report(), report);
        n.audit(&NoRemote).unwrap();
    }

    #[test]
    fn compact_prunes_outside_prefix() {
        let left = key_with_bit(false, 1);
        let right = key_with_bit(true, 1);
        let s = setup(&[left.address(), right.address()]);
        let mut n = node(&s, ShardAssignment::FULL);
        let (l, r) = (sends(&left, &s, 2), sends(&right, &s, 2));
        for tx in l.iter().chain(&r) {
            n.accept_pending_tx(tx, &NoRemote).unwrap();
        }
        n.ingest_block(mine(n.view(), &[(left.address(), &l[1]), (right.address(), &r[1])]), &NoRemote)
            .unwrap();
        let before = n.storage_report();
        n.assignment = ShardAssignment::from_bit_str("0").unwrap();
        assert_eq!(n.compact().unwrap(), 1);
        let after = n.storage_report();
        assert_eq!(after.main_chain_bytes, before.main_chain_bytes);
        assert_eq!(after.subchains, 1);
        assert_eq!(after.subchain_bytes * 2, before.subchain_bytes);
    }
}
