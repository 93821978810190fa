//! Deterministic multi-node simulation and benchmarks.
//!
//! A run builds a funded genesis, a complete binary tree of nodes over the
//! simulated transport, and one miner attached to the root. Each block
//! interval, `width` idle accounts each perform one claim-then-send batch of
//! `avg_txs` sends; at the end of the interval the miner seals a block and
//! floods it. Time is simulated, so reports are byte-identical for a seed.

use std::cell::Cell;
use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Address, Hash256, KeyPair, SendTx, SubchainTx};
use crate::mainchain::{
    capacity, genesis_block, ChainParams, BLOCK_OVERHEAD, DEFAULT_MATURITY, DEFAULT_REWARD,
    EASIEST_BITS, RECORD_LEN,
};
use crate::miner::{verify_batch, Miner, DEFAULT_POOL_CAPACITY};
use crate::network::{
    relay_targets, Envelope, LatencyRange, MsgKind, NodeId, SimTransport, Transport, TreeTopology,
};
use crate::node::{Node, RemoteFetch};
use crate::sharding::{nodes_path, ShardAssignment};
use crate::subchain::{SubchainFragment, SubchainState};
use crate::wallet::{AccountView, Inflow};

/// Report format version; bump on any change to the JSON or CSV layout.
pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 1 MB blocks every 600 s.
    BitcoinLike,
    /// 40 KB blocks every 15 s.
    EthereumLike,
}

impl std::str::FromStr for Profile {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bitcoin-like" => Ok(Profile::BitcoinLike),
            "ethereum-like" => Ok(Profile::EthereumLike),
            other => Err(HarnessError::ConfigInvalid(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub accounts: usize,
    /// Accounts sending per interval.
    pub width: usize,
    /// Sends per account per interval.
    pub avg_txs: usize,
    pub block_size: usize,
    pub interval_s: u64,
    pub blocks: u64,
    pub nodes: usize,
    pub neighbors: usize,
    pub latency: LatencyRange,
    pub bits: u32,
    pub maturity: u64,
    pub workers: usize,
    pub reward: u64,
    pub genesis_balance: u64,
    /// Only generate addresses under this shard prefix (bit string).
    pub address_prefix: Option<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            accounts: 1_000,
            width: 100,
            avg_txs: 1,
            block_size: 1_000_000,
            interval_s: 600,
            blocks: 20,
            nodes: 7,
            neighbors: 2,
            latency: LatencyRange::default(),
            bits: EASIEST_BITS,
            maturity: DEFAULT_MATURITY,
            workers: 1,
            reward: DEFAULT_REWARD,
            genesis_balance: 1_000_000_000,
            address_prefix: None,
        }
    }
}

impl SimConfig {
    pub fn with_profile(mut self, profile: Profile) -> Self {
        (self.block_size, self.interval_s) = match profile {
            Profile::BitcoinLike => (1_000_000, 600),
            Profile::EthereumLike => (40_000, 15),
        };
        self
    }

    pub fn capacity(&self) -> usize {
        capacity(self.block_size)
    }

    pub fn params(&self) -> ChainParams {
        ChainParams {
            bits: self.bits,
            block_size_limit: self.block_size,
            reward: self.reward,
            maturity: self.maturity,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::ConfigInvalid(m.to_string()));
        if self.accounts == 0 || self.avg_txs == 0 || self.interval_s == 0 || self.blocks == 0 {
            return bad("accounts, avg-txs, interval and blocks must be positive");
        }
        if self.nodes == 0 || self.workers == 0 {
            return bad("nodes and workers must be positive");
        }
        if self.width > self.accounts {
            return bad("width cannot exceed the account count");
        }
        if self.block_size < BLOCK_OVERHEAD + RECORD_LEN {
            return bad("block size leaves no room for a record");
        }
        if self.genesis_balance < self.avg_txs as u64 * 1_000 {
            return bad("genesis balance too small for the workload");
        }
        if let Some(p) = &self.address_prefix {
            ShardAssignment::from_bit_str(p).map_err(|e| HarnessError::ConfigInvalid(format!("address prefix: {e}")))?;
        }
        crate::mainchain::target(self.bits).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        Ok(())
    }

    /// Sets one option by its flag name (without dashes), as used in config
    /// files and on the command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
            v.parse()
                .map_err(|_| HarnessError::ConfigInvalid(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "profile" => *self = self.clone().with_profile(value.parse()?),
            "seed" => self.seed = num(key, value)?,
            "accounts" => self.accounts = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "avg-txs" => self.avg_txs = num(key, value)?,
            "block-size" => self.block_size = num(key, value)?,
            "interval" => self.interval_s = num(key, value)?,
            "blocks" => self.blocks = num(key, value)?,
            "nodes" => self.nodes = num(key, value)?,
            "neighbors" => self.neighbors = num(key, value)?,
            "latency" => self.latency = parse_latency(value)?,
            "bits" => {
                let v = value.trim_start_matches("0x");
                self.bits = u32::from_str_radix(v, 16)
                    .map_err(|_| HarnessError::ConfigInvalid(format!("bits: cannot parse {value:?}")))?;
            }
            "maturity" => self.maturity = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "reward" => self.reward = num(key, value)?,
            "genesis-balance" => self.genesis_balance = num(key, value)?,
            "address-prefix" => self.address_prefix = Some(value.to_string()),
            other => return Err(HarnessError::ConfigInvalid(format!("unknown option {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file; `#` starts a comment. A `profile`
    /// line applies before the other keys regardless of position.
    pub fn apply_file(&mut self, text: &str) -> Result<(), HarnessError> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::ConfigInvalid(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        pairs.sort_by_key(|(k, _)| k != "profile");
        for (k, v) in pairs {
            self.set(&k, &v)?;
        }
        Ok(())
    }
}

/// `MIN-MAX` in milliseconds, or a single value.
pub fn parse_latency(s: &str) -> Result<LatencyRange, HarnessError> {
    let bad = || HarnessError::ConfigInvalid(format!("latency: expected MIN-MAX, got {s:?}"));
    let (a, b) = s.split_once('-').unwrap_or((s, s));
    let min: u64 = a.trim().parse().map_err(|_| bad())?;
    let max: u64 = b.trim().parse().map_err(|_| bad())?;
    if min > max {
        return Err(bad());
    }
    Ok(LatencyRange::new(min, max))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRow {
    pub height: u64,
    pub records: usize,
    /// Send transactions newly covered by this block's records.
    pub sends: u64,
    pub claims: u64,
    pub bytes: usize,
    /// Addresses with a pending tail when the block was built.
    pub pool_tails: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub genesis: u128,
    pub subsidies: u128,
    pub balances: u128,
    pub in_flight: u128,
    pub unclaimed_coinbase: u128,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStorage {
    pub node: u64,
    pub shard: String,
    pub depth: usize,
    pub main_chain_bytes: u64,
    pub subchain_bytes: u64,
    pub subchains: u64,
    pub subchain_txs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checks {
    pub local_equals_replay: bool,
    pub index_matches_scan: bool,
    pub accounts_equal_subchains: bool,
    pub capacity_respected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema: u32,
    pub config: SimConfig,
    pub capacity: usize,
    pub blocks: Vec<BlockRow>,
    pub total_sends: u64,
    pub total_claims: u64,
    /// Confirmed sends per simulated second.
    pub tps: f64,
    pub active_accounts: usize,
    pub nonempty_subchains: usize,
    pub messages: u64,
    pub remote_fetches: u64,
    pub conservation: Conservation,
    pub storage: Vec<NodeStorage>,
    pub checks: Checks,
}

impl SimReport {
    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per block.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.blocks {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Deterministic account key: SHA-256 of a label, seed and counter,
/// retried until it is a valid scalar under the requested prefix.
pub fn derive_key(seed: u64, label: &str, index: u64, prefix: Option<&ShardAssignment>) -> KeyPair {
    (0u64..)
        .find_map(|attempt| {
            let mut pre = label.as_bytes().to_vec();
            pre.extend_from_slice(&seed.to_be_bytes());
            pre.extend_from_slice(&index.to_be_bytes());
            pre.extend_from_slice(&attempt.to_be_bytes());
            let key = KeyPair::from_secret_bytes(&Hash256::digest(&pre).0).ok()?;
            prefix.is_none_or(|p| p.hosts(&key.address())).then_some(key)
        })
        .expect("some attempt succeeds")
}

struct Account {
    key: KeyPair,
    wallet: AccountView,
    /// Transactions sent into the network and not yet confirmed.
    outbox: Vec<SubchainTx>,
}

/// Read-only access to every node except the one being mutated.
struct Peers<'a> {
    before: &'a [Node],
    after: &'a [Node],
    fetches: Cell<u64>,
}

impl Peers<'_> {
    fn hosts<'b>(&'b self, address: &'b Address) -> impl Iterator<Item = &'b Node> + 'b {
        self.before
            .iter()
            .chain(self.after)
            .filter(move |n| n.hosts(address))
    }
}

impl RemoteFetch for Peers<'_> {
    fn fetch_fragment(&self, address: &Address, from: u64, to: u64) -> Option<SubchainFragment> {
        self.fetches.set(self.fetches.get() + 1);
        self.hosts(address).find_map(|n| n.serve_fragment(address, from, to).ok())
    }

    fn fetch_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx> {
        self.fetches.set(self.fetches.get() + 1);
        self.hosts(sender).find_map(|n| n.find_send(sender, tx_hash))
    }
}

struct Sim {
    cfg: SimConfig,
    topo: TreeTopology,
    transport: SimTransport,
    nodes: Vec<Node>,
    seen: Vec<HashSet<Hash256>>,
    miner: Miner,
    accounts: Vec<Account>,
    rng: ChaCha8Rng,
    active: BTreeSet<usize>,
    remote_fetches: u64,
    failures: Vec<String>,
}

impl Sim {
    fn new(cfg: SimConfig) -> Self {
        let prefix = cfg
            .address_prefix
            .as_deref()
            .map(|p| ShardAssignment::from_bit_str(p).expect("validated"));
        let keys: Vec<KeyPair> = (0..cfg.accounts as u64)
            .map(|i| derive_key(cfg.seed, "account", i, prefix.as_ref()))
            .collect();
        let allocations = keys.iter().map(|k| (k.address(), cfg.genesis_balance)).collect();
        let params = cfg.params();
        let genesis = genesis_block(&allocations, 0, cfg.bits);
        let topo = TreeTopology::complete(cfg.nodes, cfg.neighbors);
        let nodes = topo
            .ids()
            .map(|id| Node::in_memory(id, topo.assignment(id), params.clone(), genesis.clone(), allocations.clone()))
            .collect();
        let miner_key = derive_key(cfg.seed, "miner", 0, None);
        let miner_node = Node::in_memory(
            NodeId(cfg.nodes as u64),
            ShardAssignment::FULL,
            params.clone(),
            genesis,
            allocations.clone(),
        );
        let accounts = keys
            .into_iter()
            .map(|key| Account {
                wallet: AccountView::new(
                    SubchainState::genesis(key.address(), cfg.genesis_balance),
                    cfg.genesis_balance,
                    Vec::new(),
                    cfg.maturity,
                ),
                key,
                outbox: Vec::new(),
            })
            .collect();
        Sim {
            transport: SimTransport::new(cfg.seed, cfg.latency, cfg.nodes),
            seen: vec![HashSet::new(); cfg.nodes],
            miner: Miner::new(miner_node, miner_key.address(), DEFAULT_POOL_CAPACITY, cfg.workers),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed),
            topo,
            nodes,
            accounts,
            active: BTreeSet::new(),
            remote_fetches: 0,
            failures: Vec::new(),
            cfg,
        }
    }

    fn handle(&mut self, idx: usize, env: &Envelope) {
        let (before, rest) = self.nodes.split_at_mut(idx);
        let (me, after) = rest.split_first_mut().expect("index in range");
        let peers = Peers {
            before,
            after,
            fetches: Cell::new(0),
        };
        match env.kind {
            MsgKind::NewTx => {
                let frag = SubchainFragment::decode(&env.payload).expect("sim encodes fragments");
                if me.hosts(&frag.address) {
                    if let Err(e) = me.accept_fragment(&frag, &peers) {
                        self.failures.push(format!("node {idx} rejected a batch of {}: {e}", frag.address));
                    }
                }
                if idx == 0 {
                    if let Err(e) = self.miner.submit(&frag) {
                        self.failures.push(format!("miner rejected a batch of {}: {e}", frag.address));
                    }
                }
            }
            MsgKind::NewBlock => {
                let block = crate::mainchain::MainBlock::decode(&env.payload).expect("sim encodes blocks");
                if let Err(e) = me.ingest_block(block, &peers) {
                    self.failures.push(format!("node {idx} rejected a block: {e}"));
                }
            }
            _ => {}
        }
        self.remote_fetches += peers.fetches.get();
    }

    fn inject(&mut self, origin: NodeId, env: Envelope) {
        let env = Arc::new(env);
        self.seen[origin.0 as usize].insert(env.msg_id);
        self.handle(origin.0 as usize, &env);
        for to in relay_targets(&self.topo, origin, None) {
            self.transport.send(origin, to, env.clone());
        }
    }

    fn pump(&mut self) {
        while let Some(d) = self.transport.next_delivery() {
            let idx = d.to.0 as usize;
            if !self.seen[idx].insert(d.env.msg_id) {
                continue;
            }
            self.handle(idx, &d.env);
            for to in relay_targets(&self.topo, d.to, Some(d.from)) {
                self.transport.send(d.to, to, d.env.clone());
            }
        }
    }

    fn workload(&mut self, now_s: u64) {
        let idle: Vec<usize> = (0..self.accounts.len())
            .filter(|i| self.accounts[*i].outbox.is_empty())
            .collect();
        let take = self.cfg.width.min(idle.len());
        let mut chosen: Vec<usize> = rand::seq::index::sample(&mut self.rng, idle.len(), take)
            .into_iter()
            .map(|i| idle[i])
            .collect();
        chosen.sort_unstable();
        let n = self.accounts.len();
        for i in chosen {
            let sends: Vec<(Address, u64)> = (0..self.cfg.avg_txs)
                .map(|_| {
                    let mut r = self.rng.gen_range(0..n.max(2) - 1);
                    if n > 1 && r >= i {
                        r += 1;
                    }
                    (self.accounts[r % n].key.address(), self.rng.gen_range(1..=1_000))
                })
                .collect();
            let view = self.miner.node().view();
            let acct = &mut self.accounts[i];
            for inflow in &mut acct.wallet.inflows {
                inflow.depth = view.depth(&inflow.block_hash).unwrap_or(0);
            }
            acct.wallet.inflows.sort_by_key(|f| std::cmp::Reverse(f.depth));
            acct.wallet.now = now_s;
            let from_height = acct.wallet.state.tip_height;
            let batch = match acct.wallet.batch_settle(&sends, &acct.key) {
                Ok(b) => b,
                Err(e) => {
                    self.failures.push(format!("wallet {} could not settle: {e}", acct.key.address()));
                    continue;
                }
            };
            acct.outbox.extend(batch.iter().cloned());
            let address = acct.key.address();
            self.active.insert(i);
            let frag = SubchainFragment::new(address, from_height, batch);
            let origin = *nodes_path(&self.topo, &address).last().expect("root hosts all");
            self.inject(origin, Envelope::new(MsgKind::NewTx, frag.encode()));
        }
    }

    fn run(mut self) -> Result<SimReport, HarnessError> {
        let cap = self.cfg.capacity();
        let interval_ms = self.cfg.interval_s * 1_000;
        let index: std::collections::HashMap<Address, usize> = self
            .accounts
            .iter()
            .enumerate()
            .map(|(i, a)| (a.key.address(), i))
            .collect();
        let mut rows = Vec::new();
        for k in 1..=self.cfg.blocks {
            self.transport.advance_to((k - 1) * interval_ms);
            self.workload((k - 1) * self.cfg.interval_s);
            self.pump();
            self.transport.advance_to(k * interval_ms);
            let pool_tails = self.miner.pool().len();
            let block = self
                .miner
                .mine_block(k * self.cfg.interval_s, &AtomicBool::new(false))
                .map_err(|e| HarnessError::InvariantViolation(format!("miner failed at height {k}: {e}")))?;
            let hash = block.hash();
            let (mut sends, mut claims) = (0, 0);
            for r in &block.confirmations {
                let Some(&i) = index.get(&r.address) else { continue };
                let covered: Vec<SubchainTx> = {
                    let outbox = &mut self.accounts[i].outbox;
                    let split = outbox.partition_point(|t| t.height() <= r.tip_height);
                    outbox.drain(..split).collect()
                };
                for tx in covered {
                    match tx {
                        SubchainTx::Send(s) => {
                            sends += 1;
                            let to = index[&s.recipient_address];
                            self.accounts[to].wallet.inflows.push(Inflow {
                                sender_address: s.current_address,
                                sender_tx_hash: s.tx_hash,
                                amount: s.amount,
                                block_hash: hash,
                                depth: 0,
                            });
                        }
                        SubchainTx::Receive(_) => claims += 1,
                    }
                }
            }
            rows.push(BlockRow {
                height: block.height(),
                records: block.confirmations.len(),
                sends,
                claims,
                bytes: block.encoded_len(),
                pool_tails,
            });
            self.inject(NodeId(0), Envelope::new(MsgKind::NewBlock, block.encode()));
            self.pump();
            if !self.failures.is_empty() {
                break;
            }
        }
        if let Some(first) = self.failures.first() {
            return Err(HarnessError::InvariantViolation(format!(
                "{first} ({} failures in total)",
                self.failures.len()
            )));
        }
        self.report(rows, cap)
    }

    fn report(self, rows: Vec<BlockRow>, cap: usize) -> Result<SimReport, HarnessError> {
        let violation = |m: String| Err(HarnessError::InvariantViolation(m));
        let full = self.miner.node();

        for node in self.nodes.iter().chain([full]) {
            let peers = Peers {
                before: &self.nodes,
                after: &[],
                fetches: Cell::new(0),
            };
            if let Err(e) = node.audit(&peers) {
                return violation(format!("node {}: {e}", node.id().0));
            }
            if node.view().latest_confirmations() != node.view().scan_confirmations() {
                return violation(format!("node {}: confirmation index differs from a scan", node.id().0));
            }
            if node.view().tip_hash() != full.view().tip_hash() {
                return violation(format!("node {} is not on the miner's tip", node.id().0));
            }
        }

        let conservation = conservation(full, &self.accounts);
        if !conservation.holds {
            return violation(format!("conservation failed: {conservation:?}"));
        }

        let root = &self.nodes[0];
        let nonempty = self
            .accounts
            .iter()
            .filter(|a| root.tip_state(&a.key.address()).tip_height > 0)
            .count();
        if nonempty != self.active.len() {
            return violation(format!("{nonempty} non-empty subchains but {} active accounts", self.active.len()));
        }

        let capacity_respected = rows.iter().all(|r| r.records == r.pool_tails.min(cap));
        if !capacity_respected {
            return violation("a block did not confirm min(pool, capacity) records".to_string());
        }

        let storage = self
            .nodes
            .iter()
            .map(|n| {
                let r = n.storage_report();
                NodeStorage {
                    node: n.id().0,
                    shard: n.assignment().to_string(),
                    depth: n.assignment().depth(),
                    main_chain_bytes: r.main_chain_bytes,
                    subchain_bytes: r.subchain_bytes,
                    subchains: r.subchains,
                    subchain_txs: r.subchain_txs,
                }
            })
            .collect();
        let total_sends = rows.iter().map(|r| r.sends).sum();
        let total_claims = rows.iter().map(|r| r.claims).sum();
        let elapsed = self.cfg.blocks * self.cfg.interval_s;
        Ok(SimReport {
            schema: REPORT_SCHEMA,
            capacity: cap,
            total_sends,
            total_claims,
            tps: total_sends as f64 / elapsed as f64,
            active_accounts: self.active.len(),
            nonempty_subchains: nonempty,
            messages: self.transport.messages_sent(),
            remote_fetches: self.remote_fetches,
            conservation,
            storage,
            checks: Checks {
                local_equals_replay: true,
                index_matches_scan: true,
                accounts_equal_subchains: true,
                capacity_respected,
            },
            blocks: rows,
            config: self.cfg,
        })
    }
}

/// Sums every component of the money supply on `full`'s canonical chain.
fn conservation(full: &Node, accounts: &[Account]) -> Conservation {
    let view = full.view();
    let mut claimed_sends = HashSet::new();
    let mut claimed_coinbases = HashSet::new();
    let mut balances: u128 = 0;
    let mut in_flight_sends = Vec::new();
    for a in accounts {
        let address = a.key.address();
        let state = full.confirmed_state(&address);
        balances += state.balance as u128;
        claimed_sends.extend(state.claimed_sends.iter().copied());
        claimed_coinbases.extend(state.claimed_coinbases.iter().copied());
        for tx in full.stored_txs(&address) {
            if let SubchainTx::Send(s) = tx {
                in_flight_sends.push(s);
            }
        }
    }
    let in_flight: u128 = in_flight_sends
        .iter()
        .filter(|s| !claimed_sends.contains(&s.tx_hash))
        .map(|s| s.amount as u128)
        .sum();
    let unclaimed_coinbase: u128 = view.canonical_hashes()[1..]
        .iter()
        .filter(|h| !claimed_coinbases.contains(*h))
        .map(|h| view.params().coinbase_amount(view.get(h).expect("canonical").height()) as u128)
        .sum();
    let genesis: u128 = view.allocations().values().map(|v| *v as u128).sum();
    let subsidies: u128 = (1..=view.height()).map(|h| view.params().coinbase_amount(h) as u128).sum();
    Conservation {
        genesis,
        subsidies,
        balances,
        in_flight,
        unclaimed_coinbase,
        holds: balances + in_flight + unclaimed_coinbase == genesis + subsidies,
    }
}

/// Runs one simulation. Invariant failures abort with a diagnostic.
pub fn run_sim(cfg: &SimConfig) -> Result<SimReport, HarnessError> {
    cfg.validate()?;
    Sim::new(cfg.clone()).run()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub workers: usize,
    pub seconds: f64,
    pub tx_per_sec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyBench {
    pub n_txs: usize,
    pub rows: Vec<VerifyRow>,
    pub verdicts_identical: bool,
    pub all_valid: bool,
}

/// `n` signed sends from a handful of deterministic keys.
pub fn signed_sends(n: usize, seed: u64) -> Vec<SubchainTx> {
    let keys: Vec<KeyPair> = (0..16).map(|i| derive_key(seed, "bench", i, None)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let key = &keys[i % keys.len()];
            let tx = SubchainTx::Send(SendTx {
                parent_hash: Hash256(rng.gen()),
                height: 1 + i as u64,
                current_address: key.address(),
                recipient_address: Address(rng.gen()),
                amount: rng.gen_range(1..=1_000),
                timestamp: i as u64,
                ..Default::default()
            });
            crate::codec::sign_tx(&tx, key).expect("key owns the tx")
        })
        .collect()
}

/// Times batch verification of `n_txs` signed transactions per worker count.
pub fn bench_verify(n_txs: usize, workers: &[usize], seed: u64) -> VerifyBench {
    let txs = signed_sends(n_txs.max(1), seed);
    let mut rows = Vec::new();
    let mut first: Option<Vec<_>> = None;
    let mut identical = true;
    let mut all_valid = true;
    for &w in workers {
        let start = Instant::now();
        let verdicts = verify_batch(&txs, w.max(1));
        let seconds = start.elapsed().as_secs_f64();
        all_valid &= verdicts.iter().all(Result::is_ok);
        match &first {
            None => first = Some(verdicts),
            Some(f) => identical &= *f == verdicts,
        }
        rows.push(VerifyRow {
            workers: w,
            seconds,
            tx_per_sec: txs.len() as f64 / seconds.max(1e-9),
        });
    }
    VerifyBench {
        n_txs: txs.len(),
        rows,
        verdicts_identical: identical,
        all_valid,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageRow {
    pub depth: usize,
    pub shard: String,
    pub node: u64,
    pub main_chain_bytes: u64,
    pub subchain_bytes: u64,
    /// Subchain bytes relative to the full (root) node.
    pub ratio: f64,
}

/// Runs one simulation and reports the full node, the first depth-1 node
/// and the first depth-2 node.
pub fn bench_storage(cfg: &SimConfig) -> Result<(Vec<StorageRow>, SimReport), HarnessError> {
    if cfg.nodes < 7 {
        return Err(HarnessError::ConfigInvalid("bench-storage needs at least 7 nodes".into()));
    }
    let report = run_sim(cfg)?;
    let full = report.storage[0].subchain_bytes.max(1) as f64;
    let rows = (0..=2)
        .filter_map(|d| report.storage.iter().find(|s| s.depth == d))
        .map(|s| StorageRow {
            depth: s.depth,
            shard: s.shard.clone(),
            node: s.node,
            main_chain_bytes: s.main_chain_bytes,
            subchain_bytes: s.subchain_bytes,
            ratio: s.subchain_bytes as f64 / full,
        })
        .collect();
    Ok((rows, report))
}
