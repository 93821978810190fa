//! Signature verification throughput per worker count.

use acctshard::harness::bench_verify;

fn main() {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
    let bench = bench_verify(n, &[1, 2, 4, 8], 1);
    println!("{n} txs on {cores} core(s)");
    for row in &bench.rows {
        println!("{:>2} workers {:>8.3}s {:>10.0} tx/s", row.workers, row.seconds, row.tx_per_sec);
    }
    println!("verdicts identical: {}", bench.verdicts_identical);
}
