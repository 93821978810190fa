//! Storage held by full, half and quarter shard nodes after one run.

use acctshard::harness::{bench_storage, SimConfig};

fn main() {
    let cfg = SimConfig { accounts: 2_000, width: 500, blocks: 10, nodes: 7, ..SimConfig::default() };
    let (rows, report) = bench_storage(&cfg).expect("simulation runs");
    println!("{:<6} {:<6} {:>12} {:>12} {:>6}", "depth", "shard", "main bytes", "sub bytes", "ratio");
    for r in rows {
        println!("{:<6} {:<6} {:>12} {:>12} {:>6.3}", r.depth, r.shard, r.main_chain_bytes, r.subchain_bytes, r.ratio);
    }
    println!("{} sends confirmed across {} accounts", report.total_sends, report.active_accounts);
}
