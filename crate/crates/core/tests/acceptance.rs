//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one result line.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use acctshard::codec::{Address, Hash256, SubchainTx};
use acctshard::harness::{bench_storage, bench_verify, run_sim, Profile, SimConfig};
use acctshard::mainchain::{
    validate_block, ChainError, ChainParams, ChainView, ConfirmationRecord, MainBlock, SendLookup, ShardOracle,
    EASIEST_BITS,
};
use acctshard::mainchain::hash_meets_target;
use acctshard::network::{broadcast, Envelope, LatencyRange, MsgKind, NodeId, SimTransport, TreeTopology};
use acctshard::node::{NoRemote, NodeError, TxAccept};
use acctshard::sharding::ShardAssignment;
use acctshard::subchain::{
    apply_tx, mark_confirmed, replay, try_replace_tail, verify_fragment, ClaimContext, ClaimIssue, SubchainError,
    SubchainFragment, SubchainState,
};
use acctshard::testkit::{random_subchain, ChainBuilder, MockChain};

use common::{child, claim, key_with_bit, on_tip, record, send, Net};

enum Verdict {
    Pass(String),
    Fail(String),
    NotEvaluated(String),
}

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- C1

fn conservation_config(seed: u64) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = SimConfig {
        seed,
        accounts: rng.gen_range(200..=1_000),
        // 40 records per block
        block_size: 116 + 40 * 60,
        interval_s: 600,
        blocks: rng.gen_range(30..=100),
        nodes: 7,
        avg_txs: rng.gen_range(1..=2),
        ..SimConfig::default()
    };
    cfg.width = if seed % 2 == 0 { rng.gen_range(5..=40) } else { rng.gen_range(41..=120) };
    cfg
}

fn c1_conservation() -> Check {
    let started = Instant::now();
    let (mut under, mut over) = (0, 0);
    for seed in 1..=20 {
        let cfg = conservation_config(seed);
        let capacity = cfg.capacity();
        if cfg.width <= capacity {
            under += 1;
        } else {
            over += 1;
        }
        let r = run_sim(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let c = &r.conservation;
        let genesis = cfg.accounts as u128 * cfg.genesis_balance as u128;
        let subsidies = cfg.reward as u128 * cfg.blocks as u128;
        ensure(c.genesis == genesis, format!("seed {seed}: genesis {} != {genesis}", c.genesis))?;
        ensure(c.subsidies == subsidies, format!("seed {seed}: subsidies {} != {subsidies}", c.subsidies))?;
        ensure(
            c.balances + c.in_flight + c.unclaimed_coinbase == genesis + subsidies,
            format!("seed {seed}: {c:?}"),
        )?;
        ensure(c.holds, format!("seed {seed}: report says conservation fails"))?;
        ensure(r.total_sends > 0, format!("seed {seed}: no traffic"))?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(under > 0 && over > 0, "widths do not span capacity")?;
    ensure(secs < 300.0, format!("took {secs:.1}s"))?;
    Ok(format!("20 seeds exact ({under} under, {over} over capacity) in {secs:.1}s"))
}

// ---------------------------------------------------------------- C2

fn c2_oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc2);
    let mut splits = 0;
    for case in 0..100 {
        let len = rng.gen_range(1..=200);
        let sc = random_subchain(&mut rng, len, 6);
        let address = sc.owner.address();
        let full = replay(address, &sc.txs, &sc.ctx).map_err(|e| format!("case {case}: replay {e}"))?;

        let mut cuts: Vec<usize> = (0..rng.gen_range(0..=8)).map(|_| rng.gen_range(0..=len)).collect();
        cuts.extend([0, len]);
        cuts.sort();
        cuts.dedup();
        splits += cuts.len() - 1;
        let mut state = SubchainState::genesis(address, sc.ctx.genesis_balance(&address));
        for w in cuts.windows(2) {
            let frag = SubchainFragment::new(address, w[0] as u64, sc.txs[w[0]..w[1]].to_vec());
            state = verify_fragment(&state, &frag, &sc.ctx).map_err(|e| format!("case {case}: {e}"))?;
        }
        ensure(state == full, format!("case {case}: composed {state:?} != replay {full:?}"))?;
    }
    Ok(format!("100 subchains, {splits} fragments, all states equal"))
}

// ---------------------------------------------------------------- C3

struct Corpus {
    rejected: usize,
    controls: usize,
}

impl Corpus {
    fn case<T, E: std::fmt::Debug>(
        &mut self,
        name: &str,
        bad: Result<T, E>,
        expect: impl Fn(&E) -> bool,
    ) -> Result<(), String> {
        match bad {
            Err(e) if expect(&e) => {
                self.rejected += 1;
                Ok(())
            }
            Err(e) => Err(format!("{name}: wrong error {e:?}")),
            Ok(_) => Err(format!("{name}: accepted")),
        }
    }

    fn control<T, E: std::fmt::Debug>(&mut self, name: &str, good: Result<T, E>) -> Result<T, String> {
        self.controls += 1;
        good.map_err(|e| format!("{name} control rejected: {e:?}"))
    }
}

fn root(e: &SubchainError) -> &SubchainError {
    e.root()
}

/// Subchain-level cases against an in-memory chain.
fn stf_cases(seed: u64, corpus: &mut Corpus) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maturity = 6;
    let mut ctx = MockChain::new(maturity);
    let owner = acctshard::codec::keygen(Some(rng.gen::<[u8; 32]>().map(|b| b | 1))).unwrap();
    let peer = acctshard::codec::keygen(Some(rng.gen::<[u8; 32]>().map(|b| b | 1))).unwrap();
    let third = acctshard::codec::keygen(Some(rng.gen::<[u8; 32]>().map(|b| b | 1))).unwrap();
    let balance = rng.gen_range(1..=1_000_000);
    ctx.allocate(owner.address(), balance);
    ctx.allocate(peer.address(), 1 << 40);
    let mut me = ChainBuilder::new(owner.clone(), &ctx);
    let mut them = ChainBuilder::new(peer.clone(), &ctx);
    let other = ChainBuilder::new(third.clone(), &ctx);

    // overspend
    let over = send(&owner, me.state.tip_hash, 1, Address([3; 20]), balance + rng.gen_range(1..=1_000));
    corpus.case("overspend", apply_tx(&me.state, &over, &ctx), |e| {
        matches!(root(e), SubchainError::InsufficientBalance { .. })
    })?;
    let exact = send(&owner, me.state.tip_hash, 1, Address([3; 20]), balance);
    corpus.control("overspend", apply_tx(&me.state, &exact, &ctx))?;

    // inflows to the owner and to a third party
    let amount = rng.gen_range(1..=50_000);
    let to_me = them.send(owner.address(), amount, &ctx);
    let to_third = them.send(third.address(), amount, &ctx);
    ctx.record_send(&to_me);
    ctx.record_send(&to_third);
    let block = ctx.push_block(Address::ZERO, &[(peer.address(), them.state.tip_height)]);
    ctx.bury(maturity - 2);

    // immature: depth maturity - 1
    let early = me.sign_unchecked(claim_tx(&me.state, &to_me, block, amount));
    corpus.case("immature claim", apply_tx(&me.state, &early, &ctx), |e| {
        matches!(root(e), SubchainError::UnconfirmedSend(ClaimIssue::Immature { depth: 5, maturity: 6 }))
    })?;
    ctx.bury(1);
    corpus.control("immature claim", apply_tx(&me.state, &early, &ctx))?;

    // amount mismatch
    let delta: i64 = if rng.gen_bool(0.5) { 1 } else { -1 };
    let wrong_amount = me.sign_unchecked(claim_tx(&me.state, &to_me, block, (amount as i64 + delta) as u64));
    corpus.case("amount mismatch", apply_tx(&me.state, &wrong_amount, &ctx), |e| {
        matches!(root(e), SubchainError::AmountMismatch { .. } | SubchainError::ZeroAmount)
    })?;

    // wrong recipient
    let stolen = me.sign_unchecked(claim_tx(&me.state, &to_third, block, amount));
    corpus.case("wrong recipient", apply_tx(&me.state, &stolen, &ctx), |e| {
        matches!(root(e), SubchainError::WrongRecipient)
    })?;
    let rightful = other.sign_unchecked(claim_tx(&other.state, &to_third, block, amount));
    corpus.control("wrong recipient", apply_tx(&other.state, &rightful, &ctx))?;

    // double claim
    let first = me.claim(peer.address(), to_me.tx_hash(), block, amount, &ctx);
    corpus.controls += 1;
    let again = me.sign_unchecked(claim_tx(&me.state, &to_me, block, amount));
    corpus.case("double claim", apply_tx(&me.state, &again, &ctx), |e| {
        matches!(root(e), SubchainError::DoubleClaim(h) if *h == to_me.tx_hash())
    })?;

    // below-freeze fork: confirm the claim, then try to fork under it
    me.send(Address([4; 20]), 1, &ctx);
    let confirmed = mark_confirmed(&me.state, first.height()).unwrap();
    let fork_below = first.height() - 1;
    let alt = send(&owner, first.parent_hash(), fork_below + 1, Address([5; 20]), 1);
    corpus.case(
        "below-freeze fork",
        try_replace_tail(&confirmed, &me.txs, fork_below, &SubchainFragment::new(owner.address(), fork_below, vec![alt]), &ctx),
        |e| matches!(e, SubchainError::ConfirmedFrozen { .. }),
    )?;
    let at = first.height();
    let alt = vec![
        send(&owner, first.tx_hash(), at + 1, Address([6; 20]), 1),
    ];
    let alt2 = send(&owner, alt[0].tx_hash(), at + 2, Address([6; 20]), 1);
    corpus.control(
        "below-freeze fork",
        try_replace_tail(&confirmed, &me.txs, at, &SubchainFragment::new(owner.address(), at, vec![alt[0].clone(), alt2]), &ctx),
    )?;
    Ok(())
}

fn claim_tx(state: &SubchainState, of: &SubchainTx, block: Hash256, amount: u64) -> SubchainTx {
    SubchainTx::Receive(acctshard::codec::ReceiveTx {
        parent_hash: state.tip_hash,
        height: state.tip_height + 1,
        current_address: state.address,
        sender_address: of.current_address(),
        sender_tx_hash: of.tx_hash(),
        main_block_hash: block,
        amount,
        timestamp: 1_700_000_000,
        ..Default::default()
    })
}

/// An oracle that verifies nothing, for header-level block checks.
struct Blind;

impl SendLookup for Blind {
    fn lookup_send(&self, _: &Address, _: &Hash256) -> Option<acctshard::codec::SendTx> {
        None
    }
}

impl ShardOracle for Blind {
    fn verifies(&self, _: &Address) -> bool {
        false
    }
    fn state_at(&self, _: &Address, _: u64, _: &Hash256) -> Option<SubchainState> {
        None
    }
    fn fragment(&self, _: &Address, _: u64, _: u64, _: &Hash256) -> Option<SubchainFragment> {
        None
    }
}

/// Node and block-level cases.
fn chain_cases(seed: u64, corpus: &mut Corpus) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = key_with_bit(rng.gen(), rng.gen_range(1..=100));
    let net = Net::new(ChainParams::ethereum_like(), &[(key.address(), 1_000_000)]);

    // forged duplicate hash
    let mut node = net.node(0, ShardAssignment::FULL);
    let tx = send(&key, Hash256::ZERO, 1, Address([8; 20]), rng.gen_range(1..=1_000));
    corpus.control("duplicate hash", node.accept_pending_tx(&tx, &NoRemote))?;
    let mut forged = tx.clone();
    if let SubchainTx::Send(s) = &mut forged {
        s.amount += rng.gen_range(1..=1_000);
        s.recipient_address = Address(rng.gen());
    }
    corpus.case("duplicate hash", node.accept_pending_tx(&forged, &NoRemote), |e| {
        matches!(e, NodeError::DuplicateHashConflict(h) if *h == tx.tx_hash())
    })?;

    // stale confirmation
    corpus.control("stale", node.ingest_block(on_tip(node.view(), vec![record(&tx)]), &NoRemote))?;
    let next = send(&key, tx.tx_hash(), 2, Address([8; 20]), 1);
    node.accept_pending_tx(&next, &NoRemote).map_err(|e| e.to_string())?;
    corpus.case("stale", node.ingest_block(on_tip(node.view(), vec![record(&tx)]), &NoRemote), |e| {
        matches!(e, NodeError::Chain(ChainError::StaleConfirmation { height: 1, confirmed: 1, .. }))
    })?;
    corpus.control("stale", node.ingest_block(on_tip(node.view(), vec![record(&next)]), &NoRemote))?;

    // oversize and bad PoW against a blind oracle
    let view = ChainView::new(net.params.clone(), net.genesis.clone(), net.allocations.clone());
    let cap = net.params.capacity();
    let records = |n: usize, rng: &mut ChaCha8Rng| -> Vec<ConfirmationRecord> {
        let mut addrs: Vec<Address> = (0..n).map(|_| Address(rng.gen())).collect();
        addrs.sort();
        addrs.dedup();
        addrs
            .into_iter()
            .map(|address| ConfirmationRecord { address, tip_hash: Hash256(rng.gen()), tip_height: rng.gen_range(1..=9) })
            .collect()
    };
    let full = child(&view, view.tip_hash(), records(cap, &mut rng), 0);
    corpus.control("oversize", validate_block(&full, &view, &Blind))?;
    let big = child(&view, view.tip_hash(), records(cap + 1, &mut rng), 0);
    corpus.case("oversize", validate_block(&big, &view, &Blind), |e| matches!(e, ChainError::Oversize { .. }))?;

    let mut bad = on_tip(&view, records(rng.gen_range(0..10), &mut rng));
    corpus.control("bad pow", validate_block(&bad, &view, &Blind))?;
    while hash_meets_target(&bad.hash(), bad.header.difficulty_bits).unwrap() {
        bad.header.nonce = bad.header.nonce.wrapping_add(1);
    }
    corpus.case("bad pow", validate_block(&bad, &view, &Blind), |e| matches!(e, ChainError::BadPoW))?;
    Ok(())
}

fn c3_safety_rejections() -> Check {
    let mut corpus = Corpus { rejected: 0, controls: 0 };
    for seed in 0..20 {
        stf_cases(seed, &mut corpus)?;
        chain_cases(seed, &mut corpus)?;
    }
    Ok(format!("{} invalid cases rejected, {} controls accepted", corpus.rejected, corpus.controls))
}

// ---------------------------------------------------------------- C4

/// Capacity measured from real encodings rather than the constants.
fn measured_capacity(limit: usize) -> usize {
    let empty = MainBlock::new(Hash256::ZERO, 1, 0, Address::ZERO, EASIEST_BITS, vec![]).encode().len();
    let rec = ConfirmationRecord { address: Address([1; 20]), tip_hash: Hash256([2; 32]), tip_height: 3 };
    let one = MainBlock::new(Hash256::ZERO, 1, 0, Address::ZERO, EASIEST_BITS, vec![rec]).encode().len();
    (limit - empty) / (one - empty)
}

fn c4_saturation() -> Check {
    let mut lines = Vec::new();
    let eth = SimConfig { accounts: 1_300, width: 600, blocks: 4, ..SimConfig::default().with_profile(Profile::EthereumLike) };
    let under_small = SimConfig {
        accounts: 400, width: 30, avg_txs: 3, block_size: 116 + 40 * 60, blocks: 12, ..SimConfig::default()
    };
    for cfg in [eth, under_small] {
        let c = measured_capacity(cfg.block_size);
        ensure(cfg.capacity() == c, format!("capacity {} vs measured {c}", cfg.capacity()))?;
        ensure(cfg.width <= c, "config is not under capacity")?;
        let r = run_sim(&cfg).map_err(|e| e.to_string())?;
        let want = (cfg.width * cfg.avg_txs) as f64 / cfg.interval_s as f64;
        ensure(r.total_sends == (cfg.width * cfg.avg_txs) as u64 * cfg.blocks, format!("sends {}", r.total_sends))?;
        ensure(r.tps == want, format!("W={} tps {} != {want}", cfg.width, r.tps))?;
        ensure(r.blocks.iter().all(|b| b.records == cfg.width), "record count varies under capacity")?;
        lines.push(format!("W={} C={c} tps={}", cfg.width, r.tps));
    }

    for (limit, width, avg) in [(116 + 30 * 60, 50, 2), (116 + 25 * 60, 200, 1)] {
        let cfg = SimConfig { accounts: 600, width, avg_txs: avg, block_size: limit, blocks: 15, ..SimConfig::default() };
        let c = measured_capacity(limit);
        ensure(cfg.capacity() == c && width > c, "over-capacity config")?;
        let r = run_sim(&cfg).map_err(|e| e.to_string())?;
        ensure(r.capacity == c, "report capacity")?;
        ensure(r.blocks.iter().all(|b| b.records == c), format!("W={width}: records per block differ from {c}"))?;
        let plateau = (c * avg) as f64 / cfg.interval_s as f64;
        let slack = avg as f64 / cfg.interval_s as f64;
        ensure((r.tps - plateau).abs() <= slack, format!("W={width} tps {} vs plateau {plateau}", r.tps))?;
        lines.push(format!("W={width} C={c} tps={}", r.tps));
    }

    let bench = bench_verify(4_000, &[4], 0xc4);
    let rate = bench.rows[0].tx_per_sec;
    ensure(bench.all_valid, "verify rejected a valid tx")?;
    ensure(rate > 1_000.0, format!("verify floor {rate:.0} tx/s"))?;
    lines.push(format!("verify {rate:.0} tx/s @4 workers"));
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------- C5

fn c5_parallel_verify() -> Result<Verdict, String> {
    let started = Instant::now();
    let bench = bench_verify(10_000, &[1, 4], 0xc5);
    let secs = started.elapsed().as_secs_f64();
    ensure(bench.verdicts_identical && bench.all_valid, "verdicts differ across worker counts")?;
    ensure(secs < 120.0, format!("took {secs:.1}s"))?;
    let (t1, t4) = (bench.rows[0].seconds, bench.rows[1].seconds);
    let ratio = t4 / t1;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!("verdicts identical; t1={t1:.3}s t4={t4:.3}s ratio={ratio:.2}; {cores} core(s)");
    if cores < 4 {
        return Ok(Verdict::NotEvaluated(format!("{detail}; timing bound needs >= 4 cores")));
    }
    if ratio <= 0.6 {
        Ok(Verdict::Pass(detail))
    } else {
        Ok(Verdict::Fail(format!("{detail}; ratio above 0.6")))
    }
}

// ---------------------------------------------------------------- C6

fn c6_storage() -> Check {
    let cfg = SimConfig { seed: 6, accounts: 2_000, width: 500, blocks: 10, nodes: 7, ..SimConfig::default() };
    let (rows, report) = bench_storage(&cfg).map_err(|e| e.to_string())?;
    let main = report.storage[0].main_chain_bytes;
    ensure(report.storage.iter().all(|s| s.main_chain_bytes == main), "main chain bytes differ")?;
    let mut out = Vec::new();
    for row in &rows {
        let range = match row.depth {
            0 => 1.0..=1.0,
            1 => 0.40..=0.60,
            2 => 0.15..=0.35,
            _ => continue,
        };
        ensure(range.contains(&row.ratio), format!("depth {} ratio {:.3}", row.depth, row.ratio))?;
        out.push(format!("d{}={:.3}", row.depth, row.ratio));
    }
    ensure(out.len() == 3, "missing a depth")?;
    Ok(format!("{}; main chain {main} bytes on all {} nodes", out.join(" "), report.storage.len()))
}

// ---------------------------------------------------------------- C7

fn c7_broadcast() -> Check {
    let started = Instant::now();
    let mut runs = 0;
    for size in [7usize, 15, 31] {
        let topo = TreeTopology::complete(size, 2);
        for failed in std::iter::once(None).chain((0..size).map(Some)) {
            for origin in topo.ids() {
                if Some(origin.0 as usize) == failed {
                    continue;
                }
                let mut t = SimTransport::new(runs, LatencyRange::new(1, 50), size);
                if let Some(f) = failed {
                    t.set_alive(NodeId(f as u64), false);
                }
                let env = Envelope::new(MsgKind::NewTx, runs.to_be_bytes().to_vec());
                let report = broadcast(origin, env, &topo, &mut t);
                ensure(
                    report.reached_all(t.alive()),
                    format!("n={size} failed={failed:?} origin={origin:?} reached {}", report.reached.len()),
                )?;
                runs += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("{runs} broadcasts over 7/15/31-node trees reached every alive node in {secs:.2}s"))
}

// ---------------------------------------------------------------- C8

fn c8_reorg() -> Check {
    let alice = key_with_bit(false, 1);
    let bob = key_with_bit(true, 1);
    let funded = [(alice.address(), 1_000), (bob.address(), 0)];
    let mut out = Vec::new();

    // maturity 6: a claim waits for depth 6
    let net = Net::new(ChainParams::ethereum_like(), &funded);
    let mut node = net.node(0, ShardAssignment::FULL);
    let s1 = send(&alice, Hash256::ZERO, 1, bob.address(), 70);
    node.accept_pending_tx(&s1, &NoRemote).map_err(|e| e.to_string())?;
    let b1 = on_tip(node.view(), vec![record(&s1)]);
    node.ingest_block(b1.clone(), &NoRemote).map_err(|e| e.to_string())?;
    let c1 = claim(&bob, Hash256::ZERO, 1, &s1, b1.hash(), 70);
    for depth in 1..6 {
        let err = node.accept_pending_tx(&c1, &NoRemote).err();
        let immature = matches!(&err, Some(NodeError::Subchain { source, .. })
            if matches!(source.root(), SubchainError::UnconfirmedSend(ClaimIssue::Immature { depth: d, maturity: 6 }) if *d == depth));
        ensure(immature, format!("claim at depth {depth}: {err:?}"))?;
        node.ingest_block(on_tip(node.view(), vec![]), &NoRemote).map_err(|e| e.to_string())?;
    }
    ensure(node.accept_pending_tx(&c1, &NoRemote) == Ok(TxAccept::Added), "claim at depth 6 rejected")?;
    out.push("immature at depths 1-5, accepted at 6".to_string());

    // 2-block reorg under a short maturity: the orphaned confirmation
    // stops backing the claim
    let params = ChainParams { maturity: 2, ..ChainParams::ethereum_like() };
    let net = Net::new(params, &funded);
    let mut node = net.node(0, ShardAssignment::FULL);
    let base = node.view().tip_hash();
    let s1 = send(&alice, Hash256::ZERO, 1, bob.address(), 70);
    node.accept_pending_tx(&s1, &NoRemote).map_err(|e| e.to_string())?;
    let x1 = child(node.view(), base, vec![record(&s1)], 1);
    node.ingest_block(x1.clone(), &NoRemote).map_err(|e| e.to_string())?;
    let x2 = child(node.view(), x1.hash(), vec![], 1);
    node.ingest_block(x2, &NoRemote).map_err(|e| e.to_string())?;
    let c1 = claim(&bob, Hash256::ZERO, 1, &s1, x1.hash(), 70);
    ensure(node.accept_pending_tx(&c1, &NoRemote) == Ok(TxAccept::Added), "claim on mature branch rejected")?;
    ensure(node.confirmed_state(&alice.address()).confirmed_height == 1, "send not confirmed")?;

    let mut parent = base;
    for _ in 0..3 {
        let y = child(node.view(), parent, vec![], 2);
        parent = y.hash();
        node.ingest_block(y, &NoRemote).map_err(|e| e.to_string())?;
    }
    ensure(node.view().tip_hash() == parent, "heavier branch did not win")?;
    ensure(!node.view().is_canonical(&x1.hash()), "orphan still canonical")?;
    ensure(node.confirmed_state(&alice.address()).confirmed_height == 0, "orphaned confirmation kept")?;
    ensure(node.tip_state(&bob.address()).tip_height == 0, "claim survived the reorg")?;
    let err = node.accept_pending_tx(&c1, &NoRemote).err();
    let orphaned = matches!(&err, Some(NodeError::Subchain { source, .. })
        if matches!(source.root(), SubchainError::UnconfirmedSend(ClaimIssue::BlockNotCanonical)));
    ensure(orphaned, format!("claim after reorg: {err:?}"))?;
    ensure(
        node.view().latest_confirmations() == node.view().scan_confirmations(),
        "confirmation index differs from a canonical scan",
    )?;
    ensure(node.audit(&NoRemote).is_ok(), "audit failed after reorg")?;
    out.push("orphaned claim dropped and rejected, index equals scan".to_string());
    Ok(out.join("; "))
}

// ---------------------------------------------------------------- C9

fn c9_determinism() -> Check {
    let configs = [
        SimConfig { seed: 9, accounts: 300, width: 60, blocks: 8, block_size: 116 + 40 * 60, ..SimConfig::default() },
        SimConfig { seed: 10, accounts: 500, width: 80, avg_txs: 2, blocks: 5, ..SimConfig::default().with_profile(Profile::EthereumLike) },
    ];
    for cfg in &configs {
        let a = run_sim(cfg).map_err(|e| e.to_string())?.to_json().map_err(|e| e.to_string())?;
        let b = run_sim(cfg).map_err(|e| e.to_string())?.to_json().map_err(|e| e.to_string())?;
        ensure(a == b, format!("seed {} reports differ", cfg.seed))?;
    }
    Ok(format!("{} configs, byte-identical JSON", configs.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Result<Verdict, String>); 9] = [
        ("C1", "conservation", || c1_conservation().map(Verdict::Pass)),
        ("C2", "oracle equivalence", || c2_oracle_equivalence().map(Verdict::Pass)),
        ("C3", "safety rejections", || c3_safety_rejections().map(Verdict::Pass)),
        ("C4", "saturation law", || c4_saturation().map(Verdict::Pass)),
        ("C5", "parallel verification", c5_parallel_verify),
        ("C6", "storage sharding", || c6_storage().map(Verdict::Pass)),
        ("C7", "broadcast resilience", || c7_broadcast().map(Verdict::Pass)),
        ("C8", "reorg correctness", || c8_reorg().map(Verdict::Pass)),
        ("C9", "determinism", || c9_determinism().map(Verdict::Pass)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| id.eq_ignore_ascii_case(f) || name.contains(f.as_str())) {
            continue;
        }
        let verdict = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(v)) => v,
            Ok(Err(msg)) => Verdict::Fail(msg),
            Err(_) => Verdict::Fail("panicked".into()),
        };
        match verdict {
            Verdict::Pass(d) => println!("{id} {name:<22} PASS  {d}"),
            Verdict::NotEvaluated(d) => println!("{id} {name:<22} N/A   {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                println!("{id} {name:<22} FAIL  {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
