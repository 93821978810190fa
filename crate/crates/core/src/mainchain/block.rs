use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::codec::{Address, CodecError, Hash256, Reader};

/// Encoded size of one [`ConfirmationRecord`].
pub const RECORD_LEN: usize = 20 + 32 + 8;
/// Encoded size of a [`BlockHeader`].
pub const HEADER_LEN: usize = 32 + 8 + 8 + 20 + 32 + 4 + 8;
/// Header plus the 4-byte record count.
pub const BLOCK_OVERHEAD: usize = HEADER_LEN + 4;

/// Maximum number of records that fit in a block of `limit` bytes.
pub fn capacity(limit: usize) -> usize {
    limit.saturating_sub(BLOCK_OVERHEAD) / RECORD_LEN
}

/// Binds an account to the tip of its subchain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConfirmationRecord {
    pub address: Address,
    pub tip_hash: Hash256,
    pub tip_height: u64,
}

impl ConfirmationRecord {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.address.0);
        out.extend_from_slice(&self.tip_hash.0);
        out.extend_from_slice(&self.tip_height.to_be_bytes());
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ConfirmationRecord {
            address: r.address()?,
            tip_hash: r.hash()?,
            tip_height: r.u64()?,
        })
    }
}

/// SHA-256 over the concatenated record encodings, in the given order.
pub fn confirmations_root(records: &[ConfirmationRecord]) -> Hash256 {
    let mut hasher = Sha256::new();
    let mut buf = Vec::with_capacity(RECORD_LEN);
    for record in records {
        buf.clear();
        record.encode_into(&mut buf);
        hasher.update(&buf);
    }
    Hash256(hasher.finalize().into())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct BlockHeader {
    pub parent_block_hash: Hash256,
    pub height: u64,
    pub timestamp: u64,
    pub miner_address: Address,
    pub confirmations_root: Hash256,
    pub difficulty_bits: u32,
    pub nonce: u64,
}

impl BlockHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        let mut at = 0;
        let mut put = |bytes: &[u8]| {
            out[at..at + bytes.len()].copy_from_slice(bytes);
            at += bytes.len();
        };
        put(&self.parent_block_hash.0);
        put(&self.height.to_be_bytes());
        put(&self.timestamp.to_be_bytes());
        put(&self.miner_address.0);
        put(&self.confirmations_root.0);
        put(&self.difficulty_bits.to_be_bytes());
        put(&self.nonce.to_be_bytes());
        out
    }

    /// Double SHA-256 of the header encoding.
    pub fn hash(&self) -> Hash256 {
        Hash256::double_digest(&self.encode())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(BlockHeader {
            parent_block_hash: r.hash()?,
            height: r.u64()?,
            timestamp: r.u64()?,
            miner_address: r.address()?,
            confirmations_root: r.hash()?,
            difficulty_bits: r.u32()?,
            nonce: r.u64()?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MainBlock {
    pub header: BlockHeader,
    pub confirmations: Vec<ConfirmationRecord>,
}

impl MainBlock {
    /// Builds an unsealed block (nonce 0) with records sorted by address.
    pub fn new(
        parent: Hash256,
        height: u64,
        timestamp: u64,
        miner: Address,
        bits: u32,
        mut confirmations: Vec<ConfirmationRecord>,
    ) -> Self {
        confirmations.sort_by_key(|r| r.address);
        MainBlock {
            header: BlockHeader {
                parent_block_hash: parent,
                height,
                timestamp,
                miner_address: miner,
                confirmations_root: confirmations_root(&confirmations),
                difficulty_bits: bits,
                nonce: 0,
            },
            confirmations,
        }
    }

    pub fn hash(&self) -> Hash256 {
        self.header.hash()
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn parent(&self) -> Hash256 {
        self.header.parent_block_hash
    }

    pub fn encoded_len(&self) -> usize {
        BLOCK_OVERHEAD + RECORD_LEN * self.confirmations.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.header.encode());
        out.extend_from_slice(&(self.confirmations.len() as u32).to_be_bytes());
        for record in &self.confirmations {
            record.encode_into(&mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let header = BlockHeader::read(&mut r)?;
        let count = r.u32()? as usize;
        if count.saturating_mul(RECORD_LEN) > r.remaining() {
            return Err(CodecError::Truncated);
        }
        let confirmations = (0..count)
            .map(|_| ConfirmationRecord::read(&mut r))
            .collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(MainBlock {
            header,
            confirmations,
        })
    }

    pub fn records_sorted(&self) -> bool {
        self.confirmations
            .windows(2)
            .all(|w| w[0].address < w[1].address)
    }

    /// Height this block confirms for `address`, if it carries a record.
    pub fn confirmation_for(&self, address: &Address) -> Option<&ConfirmationRecord> {
        self.confirmations
            .binary_search_by_key(address, |r| r.address)
            .ok()
            .map(|i| &self.confirmations[i])
    }
}

/// The height-0 block. It carries no records; its confirmations root commits
/// to the initial allocations (address then big-endian balance, sorted).
pub fn genesis_block(allocations: &BTreeMap<Address, u64>, timestamp: u64, bits: u32) -> MainBlock {
    let mut hasher = Sha256::new();
    for (address, balance) in allocations {
        hasher.update(address.0);
        hasher.update(balance.to_be_bytes());
    }
    MainBlock {
        header: BlockHeader {
            parent_block_hash: Hash256::ZERO,
            height: 0,
            timestamp,
            miner_address: Address::ZERO,
            confirmations_root: Hash256(hasher.finalize().into()),
            difficulty_bits: bits,
            nonce: 0,
        },
        confirmations: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(byte: u8, height: u64) -> ConfirmationRecord {
        ConfirmationRecord {
            address: Address([byte; 20]),
            tip_hash: Hash256([byte; 32]),
            tip_height: height,
        }
    }

    #[test]
    fn sizes_follow_the_framing() {
        assert_eq!(HEADER_LEN, 112);
        assert_eq!(BLOCK_OVERHEAD, 116);
        let block = MainBlock::new(Hash256::ZERO, 1, 0, Address::ZERO, 0x207fffff, vec![record(2, 1), record(1, 4)]);
        assert_eq!(block.encode().len(), 116 + 120);
        assert_eq!(block.encoded_len(), 236);
        assert!(block.records_sorted());
        assert_eq!(block.confirmation_for(&Address([2; 20])).unwrap().tip_height, 1);
        assert!(block.confirmation_for(&Address([3; 20])).is_none());
    }

    #[test]
    fn block_round_trips() {
        let block = MainBlock::new(Hash256([9; 32]), 7, 600, Address([5; 20]), 0x1d00ffff, vec![record(1, 3), record(4, 8)]);
        assert_eq!(MainBlock::decode(&block.encode()).unwrap(), block);
        let mut bytes = block.encode();
        bytes.push(0);
        assert_eq!(MainBlock::decode(&bytes), Err(CodecError::TrailingBytes(1)));
        assert_eq!(MainBlock::decode(&bytes[..150]), Err(CodecError::Truncated));
    }

    #[test]
    fn capacity_boundaries() {
        assert_eq!(capacity(116), 0);
        assert_eq!(capacity(175), 0);
        assert_eq!(capacity(176), 1);
        assert_eq!(capacity(0), 0);
    }

    #[test]
    fn header_hash_is_pinned() {
        // double SHA-256 of 112 zero bytes, computed with Python hashlib
        assert_eq!(
            BlockHeader::default().hash().to_hex(),
            "7b559688e66ea78c64f508e2a6cd9c3ea6bf3b06948c314b558e444f7d739d78"
        );
    }
}
