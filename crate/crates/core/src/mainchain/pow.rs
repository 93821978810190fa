use std::sync::atomic::{AtomicBool, Ordering};

use num_bigint::BigUint;

use super::{ChainError, MainBlock};
use crate::codec::Hash256;

/// The easiest practical target: roughly one hash in two succeeds.
pub const EASIEST_BITS: u32 = 0x207f_ffff;

const NONCE_BATCH: u64 = 1024;

/// Expands compact difficulty bits: `mantissa * 256^(exponent - 3)`.
pub fn target(bits: u32) -> Result<BigUint, ChainError> {
    let (exponent, mantissa) = split_bits(bits)?;
    Ok(BigUint::from(mantissa) << (8 * (exponent - 3)))
}

fn split_bits(bits: u32) -> Result<(u32, u32), ChainError> {
    let exponent = bits >> 24;
    let mantissa = bits & 0x00ff_ffff;
    if !(3..=32).contains(&exponent) || mantissa == 0 || mantissa & 0x0080_0000 != 0 {
        return Err(ChainError::MalformedBits(bits));
    }
    Ok((exponent, mantissa))
}

/// The target as 32 big-endian bytes, for fast comparison against hashes.
fn target_bytes(bits: u32) -> Result<[u8; 32], ChainError> {
    let (exponent, mantissa) = split_bits(bits)?;
    let mut out = [0u8; 32];
    let m = mantissa.to_be_bytes();
    // mantissa occupies bytes [32 - exponent, 32 - exponent + 3)
    let start = 32 - exponent as usize;
    out[start..start + 3].copy_from_slice(&m[1..]);
    Ok(out)
}

/// Expected number of hashes to meet the target: `2^256 / (target + 1)`.
pub fn work(bits: u32) -> Result<BigUint, ChainError> {
    let t = target(bits)?;
    Ok((BigUint::from(1u8) << 256u32) / (t + 1u8))
}

/// True when `hash`, read as a big-endian integer, is at most the target.
pub fn hash_meets_target(hash: &Hash256, bits: u32) -> Result<bool, ChainError> {
    Ok(hash.0 <= target_bytes(bits)?)
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SealError {
    #[error("sealing aborted")]
    Aborted,
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Searches nonces upward from the block's current nonce until the hash
/// meets the target. When the nonce space wraps, the timestamp is bumped.
/// `abort` is polled every 1024 attempts.
pub fn seal(mut block: MainBlock, abort: &AtomicBool) -> Result<MainBlock, SealError> {
    let goal = target_bytes(block.header.difficulty_bits)?;
    let start = block.header.nonce;
    loop {
        for _ in 0..NONCE_BATCH {
            if block.hash().0 <= goal {
                return Ok(block);
            }
            block.header.nonce = block.header.nonce.wrapping_add(1);
            if block.header.nonce == start {
                block.header.timestamp += 1;
            }
        }
        if abort.load(Ordering::Relaxed) {
            return Err(SealError::Aborted);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Address;

    #[test]
    fn easiest_bits_expand_by_hand() {
        // 0x7fffff * 256^(0x20 - 3): top byte 0x7f, then 0xff 0xff, then zeros
        let t = target(EASIEST_BITS).unwrap();
        let mut expected = vec![0x7f, 0xff, 0xff];
        expected.extend(std::iter::repeat(0).take(29));
        assert_eq!(t.to_bytes_be(), expected);
        assert_eq!(target_bytes(EASIEST_BITS).unwrap().to_vec(), expected);
    }

    #[test]
    fn bitcoin_genesis_bits() {
        let t = target(0x1d00ffff).unwrap();
        assert_eq!(t, BigUint::from(0xffffu32) << 208u32);
        let mut bytes = [0u8; 32];
        bytes[4] = 0xff;
        bytes[5] = 0xff;
        assert_eq!(target_bytes(0x1d00ffff).unwrap(), bytes);
    }

    #[test]
    fn malformed_bits() {
        assert_eq!(target(0x2000_0000), Err(ChainError::MalformedBits(0x2000_0000)));
        assert!(target(0x0200_ffff).is_err());
        assert!(target(0x2100_ffff).is_err());
        assert!(target(0x1d80_0000).is_err());
    }

    #[test]
    fn halving_the_mantissa_halves_the_target() {
        let full = target(0x1d7f_fffe).unwrap();
        let half = target(0x1d3f_ffff).unwrap();
        assert_eq!(full, half * 2u8);
    }

    #[test]
    fn work_of_easiest_target() {
        // 2^256 / (0x7fffff * 2^232 + 1) = 2^24 / 0x7fffff rounded down = 2
        assert_eq!(work(EASIEST_BITS).unwrap(), BigUint::from(2u8));
        assert!(work(0x1d00ffff).unwrap() > work(EASIEST_BITS).unwrap());
    }

    fn block() -> MainBlock {
        MainBlock::new(Hash256::ZERO, 1, 100, Address([1; 20]), EASIEST_BITS, vec![])
    }

    #[test]
    fn sealing_meets_target_quickly() {
        let never = AtomicBool::new(false);
        let mut attempts = 0u64;
        for ts in 0..200 {
            let mut b = block();
            b.header.timestamp = ts;
            let sealed = seal(b, &never).unwrap();
            assert!(hash_meets_target(&sealed.hash(), EASIEST_BITS).unwrap());
            attempts += sealed.header.nonce + 1;
        }
        // geometric with p ~ 1/2: mean 2 attempts
        let mean = attempts as f64 / 200.0;
        assert!((1.5..2.7).contains(&mean), "mean attempts {mean}");
    }

    #[test]
    fn already_sealed_block_is_unchanged() {
        let never = AtomicBool::new(false);
        let sealed = seal(block(), &never).unwrap();
        let again = seal(sealed.clone(), &never).unwrap();
        assert_eq!(again, sealed);
    }

    #[test]
    fn cancelled_seal_aborts() {
        let stop = AtomicBool::new(true);
        let mut b = block();
        b.header.difficulty_bits = 0x0300_0001;
        assert_eq!(seal(b, &stop), Err(SealError::Aborted));
    }
}
