pub mod cli;
pub mod codec;
pub mod daemon;
pub mod harness;
pub mod subchain;
pub mod wallet;
pub mod mainchain;
pub mod miner;
pub mod network;
pub mod node;
pub mod sharding;
pub mod testkit;
