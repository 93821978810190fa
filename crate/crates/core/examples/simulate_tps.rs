//! Throughput under and over block capacity for both block size profiles.
//! Pass `--full` for the larger widths.

use acctshard::harness::{run_sim, Profile, SimConfig};

fn main() {
    let full = std::env::args().any(|a| a == "--full");
    let mut runs = vec![
        (Profile::EthereumLike, 300, 600),
        (Profile::EthereumLike, 664, 1_000),
        (Profile::EthereumLike, 900, 2_000),
    ];
    if full {
        runs.extend([(Profile::BitcoinLike, 5_000, 6_000), (Profile::BitcoinLike, 15_000, 20_000)]);
    }
    println!("{:<14} {:>6} {:>6} {:>8} {:>10}", "profile", "width", "cap", "records", "tps");
    for (profile, width, accounts) in runs {
        let cfg = SimConfig { width, accounts, blocks: 4, nodes: 3, ..SimConfig::default().with_profile(profile) };
        let r = run_sim(&cfg).expect("simulation runs");
        let records = r.blocks.last().map_or(0, |b| b.records);
        println!("{:<14} {width:>6} {:>6} {records:>8} {:>10.3}", format!("{profile:?}"), r.capacity, r.tps);
        assert!(r.conservation.holds);
    }
}
