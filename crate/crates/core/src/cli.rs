//! Command-line interface. The `acctshard` binary is a thin wrapper over [`run`].

use std::ffi::OsString;
use std::io::Write;
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codec::{keygen, Address};
use crate::daemon;
use crate::harness::{self, HarnessError, Profile, SimConfig};
use crate::mainchain::{genesis_block, ChainParams};
use crate::miner::{mine_loop, LoopConfig, Miner, DEFAULT_POOL_CAPACITY};
use crate::network::{Hello, NodeId};
use crate::node::{FileKv, Keyspace, KvBackend, Node};
use crate::sharding::ShardAssignment;
use crate::subchain::SubchainFragment;
use crate::wallet::{self, AccountView};

/// Overrides the default data directory.
pub const DATA_DIR_ENV: &str = "ACCTSHARD_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "acctshard", version, about = "Account-sharded blockchain node, miner and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    BitcoinLike,
    EthereumLike,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::BitcoinLike => Profile::BitcoinLike,
            ProfileArg::EthereumLike => Profile::EthereumLike,
        }
    }
}

#[derive(Args, Debug)]
struct SimArgs {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    accounts: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long = "avg-txs")]
    avg_txs: Option<usize>,
    /// Block size limit in bytes.
    #[arg(long = "block-size")]
    block_size: Option<usize>,
    /// Block interval in seconds.
    #[arg(long)]
    interval: Option<u64>,
    #[arg(long)]
    blocks: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Link latency in ms, `MIN-MAX`.
    #[arg(long)]
    latency: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    out: OutFormat,
}

impl SimArgs {
    fn config(&self) -> Result<SimConfig, HarnessError> {
        let mut cfg = SimConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(&std::fs::read_to_string(path)?)?;
        }
        if let Some(p) = self.profile {
            cfg = cfg.with_profile(p.into());
        }
        let flags: [(&str, Option<String>); 10] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("accounts", self.accounts.map(|v| v.to_string())),
            ("width", self.width.map(|v| v.to_string())),
            ("avg-txs", self.avg_txs.map(|v| v.to_string())),
            ("block-size", self.block_size.map(|v| v.to_string())),
            ("interval", self.interval.map(|v| v.to_string())),
            ("blocks", self.blocks.map(|v| v.to_string())),
            ("nodes", self.nodes.map(|v| v.to_string())),
            ("latency", self.latency.clone()),
            ("workers", self.workers.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct ChainArgs {
    /// Genesis allocations, `address = balance` per line.
    #[arg(long)]
    genesis: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bitcoin-like")]
    profile: ProfileArg,
    /// Compact difficulty bits, hex.
    #[arg(long, default_value = "207fffff")]
    bits: String,
}

impl ChainArgs {
    fn params(&self) -> Result<ChainParams, String> {
        let mut params = match self.profile {
            ProfileArg::BitcoinLike => ChainParams::bitcoin_like(),
            ProfileArg::EthereumLike => ChainParams::ethereum_like(),
        };
        params.bits = u32::from_str_radix(self.bits.trim_start_matches("0x"), 16).map_err(|_| "bad --bits".to_string())?;
        crate::mainchain::target(params.bits).map_err(|e| e.to_string())?;
        Ok(params)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a key pair.
    Keygen {
        /// Write the secret key here (hex, mode 0600) instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a deterministic simulation and print its report.
    Sim(SimArgs),
    /// Time parallel signature verification.
    BenchVerify {
        #[arg(long, default_value_t = 10_000)]
        txs: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        workers: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "csv")]
        out: OutFormat,
    },
    /// Compare storage of full, half and quarter shard nodes.
    BenchStorage(SimArgs),
    /// Run a persistent node.
    Node {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:7300")]
        listen: SocketAddr,
        #[arg(long)]
        parent: Option<SocketAddr>,
        /// Shard prefix as a bit string; `*` hosts everything.
        #[arg(long)]
        shard: Option<String>,
        #[arg(long, default_value_t = 0)]
        id: u64,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Mine against a node.
    Miner {
        #[arg(long)]
        node: SocketAddr,
        /// Coinbase address.
        #[arg(long)]
        address: Address,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Seconds between blocks.
        #[arg(long, default_value_t = 1.0)]
        interval: f64,
        /// Stop after this many blocks.
        #[arg(long)]
        blocks: Option<u64>,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Drop subchain data outside a node's shard and compact its storage.
    Compact {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// New shard prefix, e.g. after a split.
        #[arg(long)]
        shard: Option<String>,
    },
    /// Build and submit transactions.
    #[command(subcommand)]
    Wallet(WalletCommand),
}

#[derive(Subcommand, Debug)]
enum WalletCommand {
    /// Print the address of a key file.
    Address {
        #[arg(long)]
        key: PathBuf,
    },
    /// Ask a node for an account's tip state.
    Balance {
        #[arg(long)]
        node: SocketAddr,
        #[arg(long)]
        address: Address,
    },
    /// Sign a send on top of the account's tip and submit it.
    Send {
        #[arg(long)]
        node: SocketAddr,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        to: Address,
        #[arg(long)]
        amount: u64,
    },
}

fn data_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("acctshard-data"))
}

fn wants_json(args: &[OsString]) -> bool {
    args.windows(2).any(|w| w[0] == "--out" && w[1] == "json") || args.iter().any(|a| a == "--out=json")
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 on failure, 2 on bad usage.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let json = wants_json(&args);
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if json && code == 2 {
                let _ = writeln!(out, "{}", serde_json::json!({ "error": e.kind().to_string(), "detail": e.to_string() }));
            } else if code == 0 {
                let _ = write!(out, "{e}");
            } else {
                let _ = write!(err, "{}", e.render());
            }
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(msg) => {
            if json {
                let _ = writeln!(out, "{}", serde_json::json!({ "error": msg }));
            } else {
                let _ = writeln!(err, "error: {msg}");
            }
            1
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), String> {
    let io = |e: std::io::Error| e.to_string();
    match command {
        Command::Keygen { out: path } => {
            let key = keygen(None).map_err(|e| e.to_string())?;
            match path {
                Some(p) => {
                    wallet::save_key(&p, &key).map_err(|e| e.to_string())?;
                    writeln!(out, "{}", key.address()).map_err(io)?;
                }
                None => {
                    writeln!(out, "secret {}", hex::encode(key.secret_bytes())).map_err(io)?;
                    writeln!(out, "address {}", key.address()).map_err(io)?;
                }
            }
        }
        Command::Sim(args) => {
            let cfg = args.config().map_err(|e| e.to_string())?;
            let report = harness::run_sim(&cfg).map_err(|e| e.to_string())?;
            match args.out {
                OutFormat::Json => writeln!(out, "{}", report.to_json().map_err(|e| e.to_string())?).map_err(io)?,
                OutFormat::Csv => report.write_csv(out).map_err(|e| e.to_string())?,
            }
        }
        Command::BenchVerify { txs, workers, seed, out: fmt } => {
            if txs == 0 || workers.iter().any(|w| *w == 0) {
                return Err("--txs and every worker count must be positive".into());
            }
            let bench = harness::bench_verify(txs, &workers, seed);
            match fmt {
                OutFormat::Json => {
                    writeln!(out, "{}", serde_json::to_string_pretty(&bench).map_err(|e| e.to_string())?).map_err(io)?
                }
                OutFormat::Csv => {
                    let mut w = csv::Writer::from_writer(out);
                    for r in &bench.rows {
                        w.serialize(r).map_err(|e| e.to_string())?;
                    }
                    w.flush().map_err(io)?;
                }
            }
            if !bench.verdicts_identical || !bench.all_valid {
                return Err("verdicts differ between worker counts".into());
            }
        }
        Command::BenchStorage(args) => {
            let cfg = args.config().map_err(|e| e.to_string())?;
            let (rows, _) = harness::bench_storage(&cfg).map_err(|e| e.to_string())?;
            match args.out {
                OutFormat::Json => {
                    writeln!(out, "{}", serde_json::to_string_pretty(&rows).map_err(|e| e.to_string())?).map_err(io)?
                }
                OutFormat::Csv => {
                    let mut w = csv::Writer::from_writer(out);
                    for r in &rows {
                        w.serialize(r).map_err(|e| e.to_string())?;
                    }
                    w.flush().map_err(io)?;
                }
            }
        }
        Command::Node { data_dir: dir, listen, parent, shard, id, chain } => {
            let dir = data_dir(dir);
            let node = open_node(&dir, shard.as_deref(), NodeId(id), Some(&chain))?;
            let listener = TcpListener::bind(listen).map_err(io)?;
            writeln!(out, "listening on {}", listener.local_addr().map_err(io)?).map_err(io)?;
            out.flush().map_err(io)?;
            daemon::serve(node, listener, parent, Arc::new(AtomicBool::new(false))).map_err(io)?;
        }
        Command::Miner { node, address, workers, interval, blocks, chain } => {
            let params = chain.params()?;
            let alloc = daemon::load_allocations(chain.genesis.as_deref()).map_err(io)?;
            let genesis = genesis_block(&alloc, 0, params.bits);
            let local = Node::in_memory(NodeId(u64::MAX), ShardAssignment::FULL, params, genesis, alloc);
            let mut miner = Miner::new(local, address, DEFAULT_POOL_CAPACITY, workers);
            let hello = Hello {
                node: NodeId(u64::MAX),
                assignment: ShardAssignment::FULL,
            };
            let mut link = daemon::TcpMinerLink::connect(node, hello).map_err(io)?;
            let cfg = LoopConfig {
                cadence: Duration::from_secs_f64(interval.max(0.0)),
                max_blocks: blocks,
            };
            for hash in mine_loop(&mut miner, &mut link, &AtomicBool::new(false), cfg) {
                writeln!(out, "{hash}").map_err(io)?;
            }
            // let the last frame drain before the socket closes
            std::thread::sleep(Duration::from_millis(200));
        }
        Command::Compact { data_dir: dir, shard } => {
            let dir = data_dir(dir);
            let mut node = open_node(&dir, shard.as_deref(), NodeId(0), None)?;
            let pruned = node.compact().map_err(|e| e.to_string())?;
            writeln!(out, "pruned {pruned} accounts outside {}", node.assignment()).map_err(io)?;
        }
        Command::Wallet(cmd) => wallet_command(cmd, out)?,
    }
    Ok(())
}

const META_CHAIN: &[u8] = b"cli.chain";
const META_GENESIS: &[u8] = b"cli.genesis";

/// Opens a node's data directory. On first use the chain settings come from
/// `chain`; afterwards they are read back from the store.
fn open_node(dir: &Path, shard: Option<&str>, id: NodeId, chain: Option<&ChainArgs>) -> Result<Node, String> {
    let io = |e: std::io::Error| e.to_string();
    let mut store = FileKv::open(dir).map_err(io)?;
    let (params, alloc_text) = match (store.get(Keyspace::Meta, META_CHAIN), chain) {
        (Some(saved), _) => {
            let text = String::from_utf8(saved).map_err(|e| e.to_string())?;
            let mut params = ChainParams::default();
            for line in text.lines() {
                let (k, v) = line.split_once('=').ok_or("corrupt chain settings")?;
                let n: u64 = v.parse().map_err(|_| "corrupt chain settings")?;
                match k {
                    "bits" => params.bits = n as u32,
                    "block-size" => params.block_size_limit = n as usize,
                    "reward" => params.reward = n,
                    "maturity" => params.maturity = n,
                    _ => return Err("corrupt chain settings".into()),
                }
            }
            let alloc = store.get(Keyspace::Meta, META_GENESIS).unwrap_or_default();
            (params, String::from_utf8(alloc).map_err(|e| e.to_string())?)
        }
        (None, Some(chain)) => {
            let params = chain.params()?;
            let alloc = match &chain.genesis {
                Some(p) => std::fs::read_to_string(p).map_err(io)?,
                None => String::new(),
            };
            let settings = format!(
                "bits={}\nblock-size={}\nreward={}\nmaturity={}",
                params.bits, params.block_size_limit, params.reward, params.maturity
            );
            let mut batch = crate::node::WriteBatch::new();
            batch.put(Keyspace::Meta, META_CHAIN.to_vec(), settings.into_bytes());
            batch.put(Keyspace::Meta, META_GENESIS.to_vec(), alloc.clone().into_bytes());
            store.apply(batch).map_err(io)?;
            (params, alloc)
        }
        (None, None) => return Err(format!("{} is not a node data directory", dir.display())),
    };
    let alloc = daemon::parse_allocations(&alloc_text).map_err(|e| e.to_string())?;
    let assignment = daemon::resolve_assignment(shard, store.get(Keyspace::Meta, b"assignment")).map_err(|e| e.to_string())?;
    if shard.is_some() {
        let mut batch = crate::node::WriteBatch::new();
        batch.put(Keyspace::Meta, b"assignment".to_vec(), assignment.encode());
        store.apply(batch).map_err(io)?;
    }
    let genesis = genesis_block(&alloc, 0, params.bits);
    Node::open(id, assignment, params, genesis, alloc, Box::new(store)).map_err(|e| e.to_string())
}

fn wallet_command(cmd: WalletCommand, out: &mut dyn Write) -> Result<(), String> {
    let io = |e: std::io::Error| e.to_string();
    match cmd {
        WalletCommand::Address { key } => {
            let key = wallet::load_key(&key).map_err(|e| e.to_string())?;
            writeln!(out, "{}", key.address()).map_err(io)?;
        }
        WalletCommand::Balance { node, address } => {
            let s = daemon::query_account(node, &address).map_err(io)?;
            let info = serde_json::json!({
                "address": s.address.to_string(),
                "balance": s.balance,
                "tip_height": s.tip_height,
                "tip_hash": s.tip_hash.to_string(),
                "confirmed_height": s.confirmed_height,
            });
            writeln!(out, "{info}").map_err(io)?;
        }
        WalletCommand::Send { node, key, to, amount } => {
            let key = wallet::load_key(&key).map_err(|e| e.to_string())?;
            let state = daemon::query_account(node, &key.address()).map_err(io)?;
            let from = state.tip_height;
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            let mut view = AccountView::new(state.clone(), state.balance, Vec::new(), 0).with_time(now);
            let tx = view.build_send(to, amount, &key).map_err(|e| e.to_string())?;
            daemon::submit_fragment(node, &SubchainFragment::new(key.address(), from, vec![tx.clone()])).map_err(io)?;
            writeln!(out, "{}", tx.tx_hash()).map_err(io)?;
        }
    }
    Ok(())
}
