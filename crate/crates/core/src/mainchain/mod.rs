//! The proof-of-work main chain. Blocks carry one confirmation record per
//! account (address and subchain tip) instead of transactions, so block space
//! grows with the number of accounts confirmed, not with their activity.

mod block;
mod pow;
mod validate;
mod view;

pub use block::{
    capacity, confirmations_root, genesis_block, BlockHeader, ConfirmationRecord, MainBlock,
    BLOCK_OVERHEAD, HEADER_LEN, RECORD_LEN,
};
pub use pow::{hash_meets_target, seal, target, work, SealError, EASIEST_BITS};
pub use validate::{validate_block, RecordDelta, SendLookup, ShardOracle};
pub use view::{ChainSnapshot, ChainView, ClaimView, Confirmation, ExtendOutcome};

use crate::codec::{Address, Hash256};
use crate::subchain::SubchainError;

/// Constant per-block subsidy in atomic units.
pub const DEFAULT_REWARD: u64 = 5_000_000_000;
pub const DEFAULT_MATURITY: u64 = 6;

/// Consensus parameters shared by every participant of one network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainParams {
    pub bits: u32,
    pub block_size_limit: usize,
    pub reward: u64,
    pub maturity: u64,
}

impl ChainParams {
    /// 1 MB blocks.
    pub fn bitcoin_like() -> Self {
        ChainParams {
            bits: EASIEST_BITS,
            block_size_limit: 1_000_000,
            reward: DEFAULT_REWARD,
            maturity: DEFAULT_MATURITY,
        }
    }

    /// 40 KB blocks.
    pub fn ethereum_like() -> Self {
        ChainParams {
            block_size_limit: 40_000,
            ..Self::bitcoin_like()
        }
    }

    pub fn capacity(&self) -> usize {
        capacity(self.block_size_limit)
    }

    pub fn coinbase_amount(&self, height: u64) -> u64 {
        coinbase_amount(height, self.reward)
    }
}

impl Default for ChainParams {
    fn default() -> Self {
        Self::bitcoin_like()
    }
}

/// The subsidy for a block at `height`. There is no halving schedule.
pub fn coinbase_amount(_height: u64, reward: u64) -> u64 {
    reward
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("malformed difficulty bits {0:#010x}")]
    MalformedBits(u32),
    #[error("parent block {0} is unknown")]
    UnknownParent(Hash256),
    #[error("block height {found} does not follow parent height {parent}")]
    BadHeight { parent: u64, found: u64 },
    #[error("block hash does not satisfy its target")]
    BadPoW,
    #[error("difficulty bits {found:#010x} differ from the network's {expected:#010x}")]
    WrongDifficulty { expected: u32, found: u32 },
    #[error("block is {size} bytes, over the {limit} byte limit")]
    Oversize { size: usize, limit: usize },
    #[error("confirmation records are not strictly sorted by address")]
    UnsortedRecords,
    #[error("confirmations root does not match the records")]
    RootMismatch,
    #[error("{address} re-confirmed at {height}, already confirmed at {confirmed}")]
    StaleConfirmation {
        address: Address,
        height: u64,
        confirmed: u64,
    },
    #[error("fragment for {address} does not end at the confirmed tip")]
    TipMismatch { address: Address },
    #[error("fragment for {address} is unavailable")]
    FragmentUnavailable { address: Address },
    #[error("subchain {address}: {source}")]
    Subchain {
        address: Address,
        #[source]
        source: SubchainError,
    },
}
