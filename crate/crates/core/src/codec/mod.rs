//! Domain primitives and canonical byte encodings.
//!
//! Every hash and signature in the system is computed over the fixed-width,
//! big-endian layouts defined here. Sends encode to 193 bytes and receives to
//! 257 bytes; the signed preimage is the same layout with `tx_hash` and
//! `signature` removed (97 and 161 bytes, tag included).

mod keys;
mod primitives;
mod tx;

pub use keys::{keygen, KeyPair};
pub use primitives::{Address, Hash256, Signature};
pub(crate) use primitives::Reader;
pub use tx::{
    check_tx, decode_tx, encode_tx, sign_tx, tx_digest, verify_tx, ReceiveTx, SendTx, SubchainTx,
    TxFault, RECEIVE_ENCODED_LEN, RECEIVE_PREIMAGE_LEN, RECEIVE_TAG, SEND_ENCODED_LEN,
    SEND_PREIMAGE_LEN, SEND_TAG,
};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("seed is not a valid secp256k1 scalar")]
    InvalidSeed,
    #[error("key address {key} does not own transaction address {tx}")]
    KeyMismatch { key: Address, tx: Address },
    #[error("unknown transaction tag {0:#04x}")]
    UnknownTag(u8),
    #[error("input truncated")]
    Truncated,
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("invalid hex")]
    BadHex,
    #[error("malformed value: {0}")]
    Malformed(&'static str),
}
