use super::pow::hash_meets_target;
use super::{confirmations_root, ChainError, ChainView, ConfirmationRecord, MainBlock};
use crate::codec::{check_tx, Address, Hash256, SendTx, SubchainTx, TxFault};
use crate::subchain::{verify_fragment_with, SubchainFragment, SubchainState};

/// Finds a send transaction by its sender and hash.
pub trait SendLookup {
    fn lookup_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx>;
}

impl<T: SendLookup + ?Sized> SendLookup for &T {
    fn lookup_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx> {
        (**self).lookup_send(sender, tx_hash)
    }
}

impl SendLookup for () {
    fn lookup_send(&self, _: &Address, _: &Hash256) -> Option<SendTx> {
        None
    }
}

/// Per-address subchain access used while validating a block.
pub trait ShardOracle: SendLookup {
    /// Whether records for `address` get full state-transform verification.
    fn verifies(&self, address: &Address) -> bool;

    /// State of `address` after its subchain up to `height`, which must end
    /// at `tip_hash` (null hash for height 0).
    fn state_at(&self, address: &Address, height: u64, tip_hash: &Hash256) -> Option<SubchainState>;

    /// Transactions in `(from_height, to_height]` ending at `tip_hash`.
    fn fragment(
        &self,
        address: &Address,
        from_height: u64,
        to_height: u64,
        tip_hash: &Hash256,
    ) -> Option<SubchainFragment>;

    /// Context-free transaction check; override to consult a cache.
    fn check(&self, tx: &SubchainTx) -> Result<(), TxFault> {
        check_tx(tx)
    }
}

/// The effect of one confirmation record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordDelta {
    pub record: ConfirmationRecord,
    /// Confirmed subchain height before this block.
    pub previous_height: u64,
    /// Confirmed state after the block, for fully verified addresses.
    pub state: Option<SubchainState>,
    pub fragment: Option<SubchainFragment>,
}

/// Checks `block` against its parent in `view`: header, size, record order
/// and root, then every record. Records for addresses the oracle verifies
/// are replayed from the previous confirmed state over the fetched fragment.
pub fn validate_block<O: ShardOracle + ?Sized>(
    block: &MainBlock,
    view: &ChainView,
    oracle: &O,
) -> Result<Vec<RecordDelta>, ChainError> {
    let params = view.params();
    let parent = view
        .get(&block.parent())
        .ok_or(ChainError::UnknownParent(block.parent()))?;
    if block.height() != parent.height() + 1 {
        return Err(ChainError::BadHeight {
            parent: parent.height(),
            found: block.height(),
        });
    }
    if block.header.difficulty_bits != params.bits {
        return Err(ChainError::WrongDifficulty {
            expected: params.bits,
            found: block.header.difficulty_bits,
        });
    }
    if !hash_meets_target(&block.hash(), block.header.difficulty_bits)? {
        return Err(ChainError::BadPoW);
    }
    let size = block.encoded_len();
    if size > params.block_size_limit {
        return Err(ChainError::Oversize {
            size,
            limit: params.block_size_limit,
        });
    }
    if !block.records_sorted() {
        return Err(ChainError::UnsortedRecords);
    }
    if confirmations_root(&block.confirmations) != block.header.confirmations_root {
        return Err(ChainError::RootMismatch);
    }

    let snap = view
        .snapshot_at(&block.parent())
        .expect("parent is stored");
    let ctx = snap.clone().claims(oracle);
    let mut deltas = Vec::with_capacity(block.confirmations.len());
    for record in &block.confirmations {
        let address = record.address;
        let previous = snap.latest_confirmation(&address);
        let (prev_height, prev_tip) = previous.map_or((0, Hash256::ZERO), |c| (c.tip_height, c.tip_hash));
        if record.tip_height <= prev_height {
            return Err(ChainError::StaleConfirmation {
                address,
                height: record.tip_height,
                confirmed: prev_height,
            });
        }
        if !oracle.verifies(&address) {
            deltas.push(RecordDelta {
                record: *record,
                previous_height: prev_height,
                state: None,
                fragment: None,
            });
            continue;
        }
        let unavailable = ChainError::FragmentUnavailable { address };
        let mut base = oracle
            .state_at(&address, prev_height, &prev_tip)
            .ok_or(unavailable.clone())?;
        base.confirmed_height = prev_height;
        let frag = oracle
            .fragment(&address, prev_height, record.tip_height, &record.tip_hash)
            .ok_or(unavailable)?;
        let mut state = verify_fragment_with(&base, &frag, &ctx, |tx| oracle.check(tx))
            .map_err(|source| ChainError::Subchain { address, source })?;
        if state.tip_height != record.tip_height || state.tip_hash != record.tip_hash {
            return Err(ChainError::TipMismatch { address });
        }
        state.confirmed_height = record.tip_height;
        deltas.push(RecordDelta {
            record: *record,
            previous_height: prev_height,
            state: Some(state),
            fragment: Some(frag),
        });
    }
    Ok(deltas)
}
