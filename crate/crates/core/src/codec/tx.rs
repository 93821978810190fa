use super::keys::signature_matches;
use super::primitives::Reader;
use super::{Address, CodecError, Hash256, KeyPair, Signature};

pub const SEND_TAG: u8 = 0x01;
pub const RECEIVE_TAG: u8 = 0x02;

/// Tag plus the signed fields of a send.
pub const SEND_PREIMAGE_LEN: usize = 1 + 32 + 8 + 20 + 20 + 8 + 8;
/// Tag plus the signed fields of a receive.
pub const RECEIVE_PREIMAGE_LEN: usize = 1 + 32 + 8 + 20 + 20 + 32 + 32 + 8 + 8;
pub const SEND_ENCODED_LEN: usize = SEND_PREIMAGE_LEN + 32 + 64;
pub const RECEIVE_ENCODED_LEN: usize = RECEIVE_PREIMAGE_LEN + 32 + 64;

/// Debits `amount` from the current account in favour of `recipient_address`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SendTx {
    pub tx_hash: Hash256,
    pub parent_hash: Hash256,
    pub height: u64,
    pub current_address: Address,
    pub recipient_address: Address,
    pub amount: u64,
    pub timestamp: u64,
    pub signature: Signature,
}

/// Claims a confirmed send (or a mined block reward) into the current account.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ReceiveTx {
    pub tx_hash: Hash256,
    pub parent_hash: Hash256,
    pub height: u64,
    pub current_address: Address,
    pub sender_address: Address,
    pub sender_tx_hash: Hash256,
    pub main_block_hash: Hash256,
    pub amount: u64,
    pub timestamp: u64,
    pub signature: Signature,
}

impl ReceiveTx {
    /// Coinbase claims carry the null address and null send hash.
    pub fn is_coinbase(&self) -> bool {
        self.sender_address.is_zero() && self.sender_tx_hash.is_zero()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SubchainTx {
    Send(SendTx),
    Receive(ReceiveTx),
}

/// Why a transaction fails the context-free check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TxFault {
    #[error("tx_hash does not match the signing preimage digest")]
    DigestMismatch,
    #[error("signature does not verify for the current address")]
    BadSignature,
}

impl SubchainTx {
    pub fn tag(&self) -> u8 {
        match self {
            SubchainTx::Send(_) => SEND_TAG,
            SubchainTx::Receive(_) => RECEIVE_TAG,
        }
    }

    pub fn tx_hash(&self) -> Hash256 {
        match self {
            SubchainTx::Send(tx) => tx.tx_hash,
            SubchainTx::Receive(tx) => tx.tx_hash,
        }
    }

    pub fn parent_hash(&self) -> Hash256 {
        match self {
            SubchainTx::Send(tx) => tx.parent_hash,
            SubchainTx::Receive(tx) => tx.parent_hash,
        }
    }

    pub fn height(&self) -> u64 {
        match self {
            SubchainTx::Send(tx) => tx.height,
            SubchainTx::Receive(tx) => tx.height,
        }
    }

    pub fn current_address(&self) -> Address {
        match self {
            SubchainTx::Send(tx) => tx.current_address,
            SubchainTx::Receive(tx) => tx.current_address,
        }
    }

    pub fn amount(&self) -> u64 {
        match self {
            SubchainTx::Send(tx) => tx.amount,
            SubchainTx::Receive(tx) => tx.amount,
        }
    }

    pub fn timestamp(&self) -> u64 {
        match self {
            SubchainTx::Send(tx) => tx.timestamp,
            SubchainTx::Receive(tx) => tx.timestamp,
        }
    }

    pub fn signature(&self) -> Signature {
        match self {
            SubchainTx::Send(tx) => tx.signature,
            SubchainTx::Receive(tx) => tx.signature,
        }
    }

    pub fn is_send(&self) -> bool {
        matches!(self, SubchainTx::Send(_))
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            SubchainTx::Send(_) => SEND_ENCODED_LEN,
            SubchainTx::Receive(_) => RECEIVE_ENCODED_LEN,
        }
    }

    /// Everything that is hashed and signed: the tag followed by every field
    /// except `tx_hash` and `signature`, in declaration order.
    pub fn signing_preimage(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RECEIVE_PREIMAGE_LEN);
        out.push(self.tag());
        match self {
            SubchainTx::Send(tx) => {
                out.extend_from_slice(&tx.parent_hash.0);
                out.extend_from_slice(&tx.height.to_be_bytes());
                out.extend_from_slice(&tx.current_address.0);
                out.extend_from_slice(&tx.recipient_address.0);
                out.extend_from_slice(&tx.amount.to_be_bytes());
                out.extend_from_slice(&tx.timestamp.to_be_bytes());
            }
            SubchainTx::Receive(tx) => {
                out.extend_from_slice(&tx.parent_hash.0);
                out.extend_from_slice(&tx.height.to_be_bytes());
                out.extend_from_slice(&tx.current_address.0);
                out.extend_from_slice(&tx.sender_address.0);
                out.extend_from_slice(&tx.sender_tx_hash.0);
                out.extend_from_slice(&tx.main_block_hash.0);
                out.extend_from_slice(&tx.amount.to_be_bytes());
                out.extend_from_slice(&tx.timestamp.to_be_bytes());
            }
        }
        out
    }

    /// Canonical wire encoding: tag, then fields in table order with
    /// `tx_hash` first and `signature` last. All integers big-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.tag());
        match self {
            SubchainTx::Send(tx) => {
                out.extend_from_slice(&tx.tx_hash.0);
                out.extend_from_slice(&tx.parent_hash.0);
                out.extend_from_slice(&tx.height.to_be_bytes());
                out.extend_from_slice(&tx.current_address.0);
                out.extend_from_slice(&tx.recipient_address.0);
                out.extend_from_slice(&tx.amount.to_be_bytes());
                out.extend_from_slice(&tx.timestamp.to_be_bytes());
                out.extend_from_slice(&tx.signature.0);
            }
            SubchainTx::Receive(tx) => {
                out.extend_from_slice(&tx.tx_hash.0);
                out.extend_from_slice(&tx.parent_hash.0);
                out.extend_from_slice(&tx.height.to_be_bytes());
                out.extend_from_slice(&tx.current_address.0);
                out.extend_from_slice(&tx.sender_address.0);
                out.extend_from_slice(&tx.sender_tx_hash.0);
                out.extend_from_slice(&tx.main_block_hash.0);
                out.extend_from_slice(&tx.amount.to_be_bytes());
                out.extend_from_slice(&tx.timestamp.to_be_bytes());
                out.extend_from_slice(&tx.signature.0);
            }
        }
    }

    /// Decodes exactly one transaction; trailing bytes are an error.
    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut reader = Reader::new(bytes);
        let tx = Self::read(&mut reader)?;
        reader.finish()?;
        Ok(tx)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            SEND_TAG => Ok(SubchainTx::Send(SendTx {
                tx_hash: r.hash()?,
                parent_hash: r.hash()?,
                height: r.u64()?,
                current_address: r.address()?,
                recipient_address: r.address()?,
                amount: r.u64()?,
                timestamp: r.u64()?,
                signature: Signature(r.array()?),
            })),
            RECEIVE_TAG => Ok(SubchainTx::Receive(ReceiveTx {
                tx_hash: r.hash()?,
                parent_hash: r.hash()?,
                height: r.u64()?,
                current_address: r.address()?,
                sender_address: r.address()?,
                sender_tx_hash: r.hash()?,
                main_block_hash: r.hash()?,
                amount: r.u64()?,
                timestamp: r.u64()?,
                signature: Signature(r.array()?),
            })),
            other => Err(CodecError::UnknownTag(other)),
        }
    }

    fn set_hash_and_signature(&mut self, hash: Hash256, sig: Signature) {
        match self {
            SubchainTx::Send(tx) => {
                tx.tx_hash = hash;
                tx.signature = sig;
            }
            SubchainTx::Receive(tx) => {
                tx.tx_hash = hash;
                tx.signature = sig;
            }
        }
    }
}

impl From<SendTx> for SubchainTx {
    fn from(tx: SendTx) -> Self {
        SubchainTx::Send(tx)
    }
}

impl From<ReceiveTx> for SubchainTx {
    fn from(tx: ReceiveTx) -> Self {
        SubchainTx::Receive(tx)
    }
}

pub fn encode_tx(tx: &SubchainTx) -> Vec<u8> {
    tx.encode()
}

pub fn decode_tx(bytes: &[u8]) -> Result<SubchainTx, CodecError> {
    SubchainTx::decode(bytes)
}

/// SHA-256 over the signing preimage.
pub fn tx_digest(tx: &SubchainTx) -> Hash256 {
    Hash256::digest(&tx.signing_preimage())
}

/// Fills in `tx_hash` and the signature. The key must own `current_address`.
pub fn sign_tx(tx: &SubchainTx, key: &KeyPair) -> Result<SubchainTx, CodecError> {
    if key.address() != tx.current_address() {
        return Err(CodecError::KeyMismatch {
            key: key.address(),
            tx: tx.current_address(),
        });
    }
    let digest = tx_digest(tx);
    let sig = key.sign_digest(&digest);
    let mut signed = tx.clone();
    signed.set_hash_and_signature(digest, sig);
    Ok(signed)
}

/// Context-free validity: hash matches the preimage and the signature was
/// produced by the key behind `current_address`.
pub fn check_tx(tx: &SubchainTx) -> Result<(), TxFault> {
    let digest = tx_digest(tx);
    if digest != tx.tx_hash() {
        return Err(TxFault::DigestMismatch);
    }
    if !signature_matches(&digest, &tx.signature(), &tx.current_address()) {
        return Err(TxFault::BadSignature);
    }
    Ok(())
}

pub fn verify_tx(tx: &SubchainTx) -> bool {
    check_tx(tx).is_ok()
}
