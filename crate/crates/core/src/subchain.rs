//! Per-account chain semantics: the state-transform function, full replay,
//! incremental fragment verification, and the freeze rule for forks.
//!
//! A subchain belongs to exactly one account, so there is no ordering
//! contest inside it: the owner signs consecutive, hash-linked transactions.
//! Sends debit immediately; receives credit only after the referenced send
//! is confirmed on the main chain at sufficient depth.

use std::collections::BTreeSet;

use crate::codec::{
    check_tx, Address, CodecError, Hash256, Reader, ReceiveTx, SendTx, SubchainTx, TxFault,
};

/// Ledger state of one account after applying its subchain up to `tip_height`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubchainState {
    pub address: Address,
    pub tip_hash: Hash256,
    /// 0 means no transaction has been appended yet.
    pub tip_height: u64,
    pub balance: u64,
    pub claimed_sends: BTreeSet<Hash256>,
    pub claimed_coinbases: BTreeSet<Hash256>,
    pub confirmed_height: u64,
}

impl SubchainState {
    pub fn empty(address: Address) -> Self {
        Self::genesis(address, 0)
    }

    /// The state before the first transaction, holding a genesis allocation.
    pub fn genesis(address: Address, balance: u64) -> Self {
        SubchainState {
            address,
            balance,
            ..Default::default()
        }
    }

    /// Fixed part of the stored encoding (claimed sets are stored separately).
    pub const HEADER_LEN: usize = 20 + 32 + 8 + 8 + 8;

    pub fn encode_header(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::HEADER_LEN);
        out.extend_from_slice(&self.address.0);
        out.extend_from_slice(&self.tip_hash.0);
        out.extend_from_slice(&self.tip_height.to_be_bytes());
        out.extend_from_slice(&self.balance.to_be_bytes());
        out.extend_from_slice(&self.confirmed_height.to_be_bytes());
        out
    }

    pub fn decode_header(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let state = SubchainState {
            address: r.address()?,
            tip_hash: r.hash()?,
            tip_height: r.u64()?,
            balance: r.u64()?,
            confirmed_height: r.u64()?,
            ..Default::default()
        };
        r.finish()?;
        Ok(state)
    }
}

/// Why a claim could not be tied to a confirmed, mature send.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClaimIssue {
    BlockNotCanonical,
    Immature { depth: u64, maturity: u64 },
    SendNotFound,
    NotConfirmedByBlock,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SubchainError {
    #[error("transaction belongs to {found}, not {expected}")]
    WrongAccount { expected: Address, found: Address },
    #[error("transaction at height {height} does not link to the tip")]
    BadLink { height: u64 },
    #[error("zero amount")]
    ZeroAmount,
    #[error("send of {amount} exceeds balance {balance}")]
    InsufficientBalance { balance: u64, amount: u64 },
    #[error("balance overflow")]
    BalanceOverflow,
    #[error("{0} was already claimed")]
    DoubleClaim(Hash256),
    #[error("claim is not backed by a mature confirmation: {0:?}")]
    UnconfirmedSend(ClaimIssue),
    #[error("claim amount {claimed} differs from send amount {expected}")]
    AmountMismatch { claimed: u64, expected: u64 },
    #[error("referenced send is not addressed to this account")]
    WrongRecipient,
    #[error("invalid transaction at height {height}: {fault}")]
    InvalidTx { height: u64, fault: TxFault },
    #[error("fragment does not start at the current tip")]
    FragmentMisaligned,
    #[error("fork at {fork_height} is below the confirmed height {confirmed_height}")]
    ConfirmedFrozen {
        fork_height: u64,
        confirmed_height: u64,
    },
    #[error("cannot confirm height {height} beyond tip {tip}")]
    ConfirmAheadOfTip { height: u64, tip: u64 },
    #[error("at height {height}: {source}")]
    At {
        height: u64,
        #[source]
        source: Box<SubchainError>,
    },
}

impl SubchainError {
    /// The underlying error with height annotations stripped.
    pub fn root(&self) -> &SubchainError {
        match self {
            SubchainError::At { source, .. } => source.root(),
            other => other,
        }
    }

    fn at(height: u64, err: SubchainError) -> Self {
        SubchainError::At {
            height,
            source: Box::new(err),
        }
    }
}

/// Read access to one main-chain snapshot, used to validate claims.
///
/// Depths count from the snapshot tip: the tip itself has depth 1.
pub trait ClaimContext {
    fn maturity(&self) -> u64;

    fn genesis_balance(&self, address: &Address) -> u64;

    /// Depth of `block` on the canonical chain, `None` when off-chain.
    fn block_depth(&self, block: &Hash256) -> Option<u64>;

    /// Tip height recorded for `address` inside `block`, if any.
    fn confirmed_height_in_block(&self, block: &Hash256, address: &Address) -> Option<u64>;

    /// Miner address and reward of a non-genesis block.
    fn block_reward(&self, block: &Hash256) -> Option<(Address, u64)>;

    /// A send stored at or below the sender's confirmed height.
    fn confirmed_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx>;
}

impl<C: ClaimContext + ?Sized> ClaimContext for &C {
    fn maturity(&self) -> u64 {
        (**self).maturity()
    }
    fn genesis_balance(&self, address: &Address) -> u64 {
        (**self).genesis_balance(address)
    }
    fn block_depth(&self, block: &Hash256) -> Option<u64> {
        (**self).block_depth(block)
    }
    fn confirmed_height_in_block(&self, block: &Hash256, address: &Address) -> Option<u64> {
        (**self).confirmed_height_in_block(block, address)
    }
    fn block_reward(&self, block: &Hash256) -> Option<(Address, u64)> {
        (**self).block_reward(block)
    }
    fn confirmed_send(&self, sender: &Address, tx_hash: &Hash256) -> Option<SendTx> {
        (**self).confirmed_send(sender, tx_hash)
    }
}

/// A consecutive, hash-linked slice `(from_height, from_height + len]` of one
/// subchain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubchainFragment {
    pub address: Address,
    pub from_height: u64,
    pub txs: Vec<SubchainTx>,
}

impl SubchainFragment {
    pub fn new(address: Address, from_height: u64, txs: Vec<SubchainTx>) -> Self {
        SubchainFragment {
            address,
            from_height,
            txs,
        }
    }

    pub fn to_height(&self) -> u64 {
        self.from_height + self.txs.len() as u64
    }

    pub fn tip_hash(&self) -> Option<Hash256> {
        self.txs.last().map(SubchainTx::tx_hash)
    }

    /// Structural check only: owner, consecutive heights and parent links.
    /// `parent` is the hash the first transaction must point at.
    pub fn check_links(&self, parent: Hash256) -> Result<(), SubchainError> {
        let mut expected_parent = parent;
        for (i, tx) in self.txs.iter().enumerate() {
            let height = self.from_height + 1 + i as u64;
            if tx.current_address() != self.address {
                return Err(SubchainError::WrongAccount {
                    expected: self.address,
                    found: tx.current_address(),
                });
            }
            if tx.height() != height || tx.parent_hash() != expected_parent {
                return Err(SubchainError::BadLink { height });
            }
            expected_parent = tx.tx_hash();
        }
        Ok(())
    }

    /// `address || from_height || count (u32) || canonical tx encodings`.
    pub fn encode(&self) -> Vec<u8> {
        let body: usize = self.txs.iter().map(SubchainTx::encoded_len).sum();
        let mut out = Vec::with_capacity(20 + 8 + 4 + body);
        out.extend_from_slice(&self.address.0);
        out.extend_from_slice(&self.from_height.to_be_bytes());
        out.extend_from_slice(&(self.txs.len() as u32).to_be_bytes());
        for tx in &self.txs {
            tx.encode_into(&mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let frag = Self::read(&mut r)?;
        r.finish()?;
        Ok(frag)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let address = r.address()?;
        let from_height = r.u64()?;
        let count = r.u32()? as usize;
        // smallest encoding is a send
        if count > r.remaining() / crate::codec::SEND_ENCODED_LEN {
            return Err(CodecError::Truncated);
        }
        let mut txs = Vec::with_capacity(count);
        for _ in 0..count {
            txs.push(SubchainTx::read(r)?);
        }
        Ok(SubchainFragment {
            address,
            from_height,
            txs,
        })
    }
}

fn check_claim(
    state: &SubchainState,
    tx: &ReceiveTx,
    ctx: &dyn ClaimContext,
) -> Result<(), SubchainError> {
    let coinbase = tx.is_coinbase();
    if coinbase {
        if state.claimed_coinbases.contains(&tx.main_block_hash) {
            return Err(SubchainError::DoubleClaim(tx.main_block_hash));
        }
    } else if state.claimed_sends.contains(&tx.sender_tx_hash) {
        return Err(SubchainError::DoubleClaim(tx.sender_tx_hash));
    }

    let maturity = ctx.maturity();
    match ctx.block_depth(&tx.main_block_hash) {
        None => {
            return Err(SubchainError::UnconfirmedSend(
                ClaimIssue::BlockNotCanonical,
            ))
        }
        Some(depth) if depth < maturity => {
            return Err(SubchainError::UnconfirmedSend(ClaimIssue::Immature {
                depth,
                maturity,
            }))
        }
        Some(_) => {}
    }

    let (recipient, expected) = if coinbase {
        ctx.block_reward(&tx.main_block_hash)
            .ok_or(SubchainError::UnconfirmedSend(ClaimIssue::BlockNotCanonical))?
    } else {
        let send = ctx
            .confirmed_send(&tx.sender_address, &tx.sender_tx_hash)
            .ok_or(SubchainError::UnconfirmedSend(ClaimIssue::SendNotFound))?;
        let covered = ctx
            .confirmed_height_in_block(&tx.main_block_hash, &tx.sender_address)
            .is_some_and(|h| h >= send.height);
        if !covered || send.current_address != tx.sender_address {
            return Err(SubchainError::UnconfirmedSend(
                ClaimIssue::NotConfirmedByBlock,
            ));
        }
        (send.recipient_address, send.amount)
    };
    if recipient != state.address {
        return Err(SubchainError::WrongRecipient);
    }
    if tx.amount != expected {
        return Err(SubchainError::AmountMismatch {
            claimed: tx.amount,
            expected,
        });
    }
    Ok(())
}

/// Applies one transaction in place. On error `state` is left untouched.
///
/// Signatures are not checked here; see [`verify_fragment`].
pub fn apply_in_place(
    state: &mut SubchainState,
    tx: &SubchainTx,
    ctx: &dyn ClaimContext,
) -> Result<(), SubchainError> {
    if tx.current_address() != state.address {
        return Err(SubchainError::WrongAccount {
            expected: state.address,
            found: tx.current_address(),
        });
    }
    if tx.height() != state.tip_height + 1 || tx.parent_hash() != state.tip_hash {
        return Err(SubchainError::BadLink {
            height: tx.height(),
        });
    }
    if tx.amount() == 0 {
        return Err(SubchainError::ZeroAmount);
    }
    match tx {
        SubchainTx::Send(send) => {
            if send.amount > state.balance {
                return Err(SubchainError::InsufficientBalance {
                    balance: state.balance,
                    amount: send.amount,
                });
            }
            state.balance -= send.amount;
        }
        SubchainTx::Receive(recv) => {
            check_claim(state, recv, ctx)?;
            state.balance = state
                .balance
                .checked_add(recv.amount)
                .ok_or(SubchainError::BalanceOverflow)?;
            if recv.is_coinbase() {
                state.claimed_coinbases.insert(recv.main_block_hash);
            } else {
                state.claimed_sends.insert(recv.sender_tx_hash);
            }
        }
    }
    state.tip_hash = tx.tx_hash();
    state.tip_height = tx.height();
    Ok(())
}

/// The state-transform function: `state` plus `tx` gives the next state.
pub fn apply_tx(
    state: &SubchainState,
    tx: &SubchainTx,
    ctx: &dyn ClaimContext,
) -> Result<SubchainState, SubchainError> {
    let mut next = state.clone();
    apply_in_place(&mut next, tx, ctx)?;
    Ok(next)
}

/// Folds `apply_tx` over a whole chain starting from the genesis state.
pub fn replay(
    address: Address,
    txs: &[SubchainTx],
    ctx: &dyn ClaimContext,
) -> Result<SubchainState, SubchainError> {
    let mut state = SubchainState::genesis(address, ctx.genesis_balance(&address));
    for tx in txs {
        apply_in_place(&mut state, tx, ctx).map_err(|e| SubchainError::at(tx.height(), e))?;
    }
    Ok(state)
}

/// Verifies and applies a fragment on top of `state`, checking each
/// transaction's hash and signature.
pub fn verify_fragment(
    state: &SubchainState,
    frag: &SubchainFragment,
    ctx: &dyn ClaimContext,
) -> Result<SubchainState, SubchainError> {
    verify_fragment_with(state, frag, ctx, check_tx)
}

/// [`verify_fragment`] with a caller-supplied context-free check, so callers
/// holding a cache of already verified transactions can skip repeat work.
pub fn verify_fragment_with<F>(
    state: &SubchainState,
    frag: &SubchainFragment,
    ctx: &dyn ClaimContext,
    check: F,
) -> Result<SubchainState, SubchainError>
where
    F: Fn(&SubchainTx) -> Result<(), TxFault>,
{
    if frag.address != state.address || frag.from_height != state.tip_height {
        return Err(SubchainError::FragmentMisaligned);
    }
    if let Some(first) = frag.txs.first() {
        if first.parent_hash() != state.tip_hash || first.height() != state.tip_height + 1 {
            return Err(SubchainError::FragmentMisaligned);
        }
    }
    let mut next = state.clone();
    for tx in &frag.txs {
        let height = tx.height();
        check(tx).map_err(|fault| SubchainError::InvalidTx { height, fault })?;
        apply_in_place(&mut next, tx, ctx).map_err(|e| SubchainError::at(height, e))?;
    }
    Ok(next)
}

/// Owner fork: drops everything above `fork_height` and appends `new_tail`.
///
/// `history` is the full chain behind `state` (heights `1..=tip_height`).
/// Forks may start at the confirmed height but never below it.
pub fn try_replace_tail(
    state: &SubchainState,
    history: &[SubchainTx],
    fork_height: u64,
    new_tail: &SubchainFragment,
    ctx: &dyn ClaimContext,
) -> Result<SubchainState, SubchainError> {
    if fork_height < state.confirmed_height {
        return Err(SubchainError::ConfirmedFrozen {
            fork_height,
            confirmed_height: state.confirmed_height,
        });
    }
    if fork_height > state.tip_height
        || history.len() as u64 != state.tip_height
        || new_tail.from_height != fork_height
    {
        return Err(SubchainError::FragmentMisaligned);
    }
    let mut prefix = replay(state.address, &history[..fork_height as usize], ctx)?;
    prefix.confirmed_height = state.confirmed_height;
    verify_fragment(&prefix, new_tail, ctx)
}

/// Raises the confirmed height; never lowers it.
pub fn mark_confirmed(state: &SubchainState, height: u64) -> Result<SubchainState, SubchainError> {
    if height > state.tip_height {
        return Err(SubchainError::ConfirmAheadOfTip {
            height,
            tip: state.tip_height,
        });
    }
    let mut next = state.clone();
    next.confirmed_height = next.confirmed_height.max(height);
    Ok(next)
}

/// A confirmed base state plus the unconfirmed transactions above it.
///
/// Used by nodes for hosted accounts and by the miner's pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingChain {
    confirmed: SubchainState,
    pending: Vec<SubchainTx>,
    tip: SubchainState,
}

impl PendingChain {
    pub fn new(confirmed: SubchainState) -> Self {
        PendingChain {
            tip: confirmed.clone(),
            confirmed,
            pending: Vec::new(),
        }
    }

    pub fn address(&self) -> Address {
        self.confirmed.address
    }

    pub fn confirmed(&self) -> &SubchainState {
        &self.confirmed
    }

    pub fn pending(&self) -> &[SubchainTx] {
        &self.pending
    }

    pub fn tip(&self) -> &SubchainState {
        &self.tip
    }

    /// Appends one transaction on the tip. Signatures are the caller's job.
    pub fn push(&mut self, tx: SubchainTx, ctx: &dyn ClaimContext) -> Result<(), SubchainError> {
        apply_in_place(&mut self.tip, &tx, ctx)?;
        self.pending.push(tx);
        Ok(())
    }

    /// Replaces the pending transactions above `fork_height` with `tail`.
    /// State is unchanged on error.
    pub fn replace_tail(
        &mut self,
        fork_height: u64,
        tail: &SubchainFragment,
        ctx: &dyn ClaimContext,
    ) -> Result<(), SubchainError> {
        if fork_height < self.confirmed.tip_height {
            return Err(SubchainError::ConfirmedFrozen {
                fork_height,
                confirmed_height: self.confirmed.tip_height,
            });
        }
        if fork_height > self.tip.tip_height || tail.from_height != fork_height {
            return Err(SubchainError::FragmentMisaligned);
        }
        let keep = (fork_height - self.confirmed.tip_height) as usize;
        let mut base = self.confirmed.clone();
        for tx in &self.pending[..keep] {
            apply_in_place(&mut base, tx, ctx)?;
        }
        let tip = verify_fragment_with(&base, tail, ctx, |_| Ok(()))?;
        self.pending.truncate(keep);
        self.pending.extend(tail.txs.iter().cloned());
        self.tip = tip;
        Ok(())
    }

    /// Moves the confirmed base to `confirmed`. Pending transactions already
    /// covered are dropped when they match; the remainder is re-applied and
    /// truncated at the first one that no longer validates. Returns the number
    /// of pending transactions discarded because they conflicted.
    pub fn advance_confirmed(&mut self, confirmed: SubchainState, ctx: &dyn ClaimContext) -> usize {
        let covered = confirmed.tip_height.saturating_sub(self.confirmed.tip_height) as usize;
        let matches = covered <= self.pending.len()
            && (covered == 0 || self.pending[covered - 1].tx_hash() == confirmed.tip_hash);
        let rest: Vec<SubchainTx> = if matches {
            self.pending.split_off(covered)
        } else {
            Vec::new()
        };
        let mut dropped = if matches { 0 } else { self.pending.len() };
        self.confirmed = confirmed;
        self.pending.clear();
        self.tip = self.confirmed.clone();
        let total = rest.len();
        for (i, tx) in rest.into_iter().enumerate() {
            if apply_in_place(&mut self.tip, &tx, ctx).is_err() {
                dropped += total - i;
                break;
            }
            self.pending.push(tx);
        }
        self.tip.confirmed_height = self.confirmed.confirmed_height;
        dropped
    }
}
