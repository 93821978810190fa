use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::CodecError;

/// A 32-byte SHA-256 output.
///
/// The all-zero value is reserved as the null hash: it is the parent of the
/// first transaction on every subchain and the sender hash of coinbase claims.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hash256(pub [u8; 32]);

impl Hash256 {
    pub const ZERO: Hash256 = Hash256([0u8; 32]);
    pub const LEN: usize = 32;

    /// SHA-256 of `data`.
    pub fn digest(data: &[u8]) -> Self {
        Hash256(Sha256::digest(data).into())
    }

    /// SHA-256 applied twice, as used for block header hashes.
    pub fn double_digest(data: &[u8]) -> Self {
        let first = Sha256::digest(data);
        Hash256(Sha256::digest(first).into())
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 32]
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash256({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Hash256 {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s.trim(), &mut out).map_err(|_| CodecError::BadHex)?;
        Ok(Hash256(out))
    }
}

/// A 20-byte account address: the last 20 bytes of SHA-256 over the
/// 33-byte compressed public key.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);
    pub const LEN: usize = 20;
    pub const BITS: usize = 160;

    pub fn from_public_key(compressed: &[u8; 33]) -> Self {
        let digest = Sha256::digest(compressed);
        let mut out = [0u8; 20];
        out.copy_from_slice(&digest[12..]);
        Address(out)
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 20]
    }

    /// Bit `index` counted from the most significant bit of the first byte.
    pub fn bit(&self, index: usize) -> bool {
        debug_assert!(index < Self::BITS);
        (self.0[index / 8] >> (7 - index % 8)) & 1 == 1
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Address {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 20];
        hex::decode_to_slice(s.trim().trim_start_matches("0x"), &mut out)
            .map_err(|_| CodecError::BadHex)?;
        Ok(Address(out))
    }
}

/// Compact ECDSA signature `r || s` with `s` in the lower half of the order.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl Signature {
    pub const ZERO: Signature = Signature([0u8; 64]);
    pub const LEN: usize = 64;
}

impl Default for Signature {
    fn default() -> Self {
        Signature::ZERO
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

/// Big-endian field reader over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(CodecError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub(crate) fn hash(&mut self) -> Result<Hash256, CodecError> {
        Ok(Hash256(self.array()?))
    }

    pub(crate) fn address(&mut self) -> Result<Address, CodecError> {
        Ok(Address(self.array()?))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn finish(&self) -> Result<(), CodecError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(CodecError::TrailingBytes(self.remaining()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_bits_are_msb_first() {
        let mut raw = [0u8; 20];
        raw[0] = 0b1010_0000;
        let addr = Address(raw);
        assert!(addr.bit(0));
        assert!(!addr.bit(1));
        assert!(addr.bit(2));
        assert!(!addr.bit(159));
    }

    #[test]
    fn hex_round_trip() {
        let h = Hash256::digest(b"abc");
        assert_eq!(h.to_hex().parse::<Hash256>().unwrap(), h);
        let a = Address([7u8; 20]);
        assert_eq!(a.to_hex().parse::<Address>().unwrap(), a);
        assert!("zz".parse::<Address>().is_err());
    }

    #[test]
    fn sha256_known_vector() {
        // FIPS 180-2 "abc" vector
        assert_eq!(
            Hash256::digest(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
