//! Client-side transaction construction: sends, claims, and the batch
//! claim-before-send pattern.

use std::fs;
use std::io;
use std::path::Path;

use crate::codec::{sign_tx, Address, CodecError, Hash256, KeyPair, ReceiveTx, SendTx, SubchainTx};
use crate::mainchain::ChainView;
use crate::node::Node;
use crate::subchain::SubchainState;

#[derive(Debug, thiserror::Error)]
pub enum WalletError {
    #[error("need {needed}, only {available} available")]
    InsufficientBalance { needed: u64, available: u64 },
    #[error("key controls {key}, not {account}")]
    KeyMismatch { key: Address, account: Address },
    #[error("inflow is at depth {depth}, maturity is {maturity}")]
    Immature { depth: u64, maturity: u64 },
    #[error("{0} was already claimed")]
    AlreadyClaimed(Hash256),
    #[error("zero amount")]
    ZeroAmount,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("key file: {0}")]
    Io(#[from] io::Error),
}

/// Funds addressed to an account that it may claim.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inflow {
    /// Zero for a coinbase.
    pub sender_address: Address,
    /// Zero for a coinbase.
    pub sender_tx_hash: Hash256,
    pub amount: u64,
    /// Block confirming the send, or the mined block for a coinbase.
    pub block_hash: Hash256,
    pub depth: u64,
}

impl Inflow {
    pub fn coinbase(block_hash: Hash256, amount: u64, depth: u64) -> Self {
        Inflow {
            sender_address: Address::ZERO,
            sender_tx_hash: Hash256::ZERO,
            amount,
            block_hash,
            depth,
        }
    }

    pub fn is_coinbase(&self) -> bool {
        self.sender_tx_hash.is_zero()
    }

    fn claim_id(&self) -> Hash256 {
        if self.is_coinbase() {
            self.block_hash
        } else {
            self.sender_tx_hash
        }
    }
}

/// An account as its owner sees it: the tip state including pending
/// transactions, and what can still be claimed.
#[derive(Clone, Debug)]
pub struct AccountView {
    pub state: SubchainState,
    pub confirmed_balance: u64,
    /// Claimable inflows, oldest first.
    pub inflows: Vec<Inflow>,
    pub maturity: u64,
    /// Timestamp written into new transactions.
    pub now: u64,
}

impl AccountView {
    /// Drops inflows already claimed by `state` and orders the rest oldest
    /// first (deepest block first).
    pub fn new(state: SubchainState, confirmed_balance: u64, mut inflows: Vec<Inflow>, maturity: u64) -> Self {
        inflows.retain(|i| {
            let claimed = if i.is_coinbase() {
                &state.claimed_coinbases
            } else {
                &state.claimed_sends
            };
            !claimed.contains(&i.claim_id())
        });
        inflows.sort_by_key(|i| std::cmp::Reverse(i.depth));
        AccountView {
            state,
            confirmed_balance,
            inflows,
            maturity,
            now: 0,
        }
    }

    /// Reads a hosted account from a node; inflow depths are recomputed
    /// against the node's canonical chain and off-chain ones dropped.
    pub fn from_node(node: &Node, address: &Address, inflows: Vec<Inflow>) -> Self {
        let view = node.view();
        let inflows = inflows
            .into_iter()
            .filter_map(|i| Some(Inflow { depth: view.depth(&i.block_hash)?, ..i }))
            .collect();
        AccountView::new(
            node.tip_state(address),
            node.confirmed_state(address).balance,
            inflows,
            view.params().maturity,
        )
    }

    pub fn with_time(mut self, now: u64) -> Self {
        self.now = now;
        self
    }

    pub fn address(&self) -> Address {
        self.state.address
    }

    /// Balance after pending transactions.
    pub fn spendable(&self) -> u64 {
        self.state.balance
    }

    pub fn mature_claimable(&self) -> u64 {
        self.inflows
            .iter()
            .filter(|i| i.depth >= self.maturity)
            .map(|i| i.amount)
            .sum()
    }

    fn check_key(&self, key: &KeyPair) -> Result<(), WalletError> {
        if key.address() != self.address() {
            return Err(WalletError::KeyMismatch {
                key: key.address(),
                account: self.address(),
            });
        }
        Ok(())
    }

    fn advance(&mut self, tx: &SubchainTx) {
        self.state.tip_hash = tx.tx_hash();
        self.state.tip_height = tx.height();
    }

    /// Signs a send on top of the tip.
    pub fn build_send(&mut self, recipient: Address, amount: u64, key: &KeyPair) -> Result<SubchainTx, WalletError> {
        self.check_key(key)?;
        if amount == 0 {
            return Err(WalletError::ZeroAmount);
        }
        if amount > self.state.balance {
            return Err(WalletError::InsufficientBalance {
                needed: amount,
                available: self.state.balance,
            });
        }
        let tx = sign_tx(
            &SubchainTx::Send(SendTx {
                parent_hash: self.state.tip_hash,
                height: self.state.tip_height + 1,
                current_address: self.address(),
                recipient_address: recipient,
                amount,
                timestamp: self.now,
                ..Default::default()
            }),
            key,
        )?;
        self.state.balance -= amount;
        self.advance(&tx);
        Ok(tx)
    }

    /// Signs a claim of `inflow` on top of the tip.
    pub fn build_claim(&mut self, inflow: &Inflow, key: &KeyPair) -> Result<SubchainTx, WalletError> {
        self.check_key(key)?;
        let id = inflow.claim_id();
        let claimed = if inflow.is_coinbase() {
            &self.state.claimed_coinbases
        } else {
            &self.state.claimed_sends
        };
        if claimed.contains(&id) {
            return Err(WalletError::AlreadyClaimed(id));
        }
        if inflow.depth < self.maturity {
            return Err(WalletError::Immature {
                depth: inflow.depth,
                maturity: self.maturity,
            });
        }
        let tx = sign_tx(
            &SubchainTx::Receive(ReceiveTx {
                parent_hash: self.state.tip_hash,
                height: self.state.tip_height + 1,
                current_address: self.address(),
                sender_address: inflow.sender_address,
                sender_tx_hash: inflow.sender_tx_hash,
                main_block_hash: inflow.block_hash,
                amount: inflow.amount,
                timestamp: self.now,
                ..Default::default()
            }),
            key,
        )?;
        self.state.balance += inflow.amount;
        if inflow.is_coinbase() {
            self.state.claimed_coinbases.insert(id);
        } else {
            self.state.claimed_sends.insert(id);
        }
        self.inflows.retain(|i| i.claim_id() != id);
        self.advance(&tx);
        Ok(tx)
    }

    /// Claims every mature inflow (oldest first), then signs `sends`, as one
    /// contiguous tail extension. Fails without changing anything when the
    /// sends exceed spendable plus claimable funds.
    pub fn batch_settle(&mut self, sends: &[(Address, u64)], key: &KeyPair) -> Result<Vec<SubchainTx>, WalletError> {
        self.check_key(key)?;
        let needed = sends.iter().try_fold(0u64, |acc, (_, a)| acc.checked_add(*a));
        let available = self.spendable() + self.mature_claimable();
        let needed = needed.unwrap_or(u64::MAX);
        if needed > available {
            return Err(WalletError::InsufficientBalance { needed, available });
        }
        if sends.iter().any(|(_, a)| *a == 0) {
            return Err(WalletError::ZeroAmount);
        }
        let mut plan = self.clone();
        let mut out = Vec::new();
        let mature: Vec<Inflow> = plan.inflows.iter().filter(|i| i.depth >= plan.maturity).cloned().collect();
        for inflow in &mature {
            out.push(plan.build_claim(inflow, key)?);
        }
        for (to, amount) in sends {
            out.push(plan.build_send(*to, *amount, key)?);
        }
        *self = plan;
        Ok(out)
    }
}

/// Confirmed sends to `recipient` stored on `node`, plus coinbases it mined,
/// as inflows against the node's canonical chain.
pub fn scan_inflows(node: &Node, recipient: &Address) -> Vec<Inflow> {
    let view = node.view();
    let mut out: Vec<Inflow> = node
        .confirmed_sends_to(recipient)
        .into_iter()
        .filter_map(|s| {
            let c = view.first_confirmation_covering(&s.current_address, s.height)?;
            Some(Inflow {
                sender_address: s.current_address,
                sender_tx_hash: s.tx_hash,
                amount: s.amount,
                block_hash: c.block_hash,
                depth: view.depth(&c.block_hash)?,
            })
        })
        .collect();
    out.extend(coinbase_inflows(view, recipient));
    out
}

fn coinbase_inflows(view: &ChainView, miner: &Address) -> Vec<Inflow> {
    view.canonical_hashes()
        .iter()
        .skip(1)
        .filter_map(|h| {
            let b = view.get(h)?;
            (b.header.miner_address == *miner)
                .then(|| Inflow::coinbase(*h, view.params().coinbase_amount(b.height()), view.depth(h).unwrap_or(0)))
        })
        .collect()
}

/// Writes a secret key as hex, readable by the owner only.
pub fn save_key(path: &Path, key: &KeyPair) -> Result<(), WalletError> {
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path)?;
    io::Write::write_all(&mut f, format!("{}\n", hex::encode(key.secret_bytes())).as_bytes())?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(path, fs::Permissions::from_mode(0o600))?;
    }
    Ok(())
}

pub fn load_key(path: &Path) -> Result<KeyPair, WalletError> {
    let text = fs::read_to_string(path)?;
    let bytes: [u8; 32] = hex::decode(text.trim())
        .map_err(|_| CodecError::BadHex)?
        .try_into()
        .map_err(|_| CodecError::Malformed("secret key must be 32 bytes"))?;
    Ok(KeyPair::from_secret_bytes(&bytes)?)
}
