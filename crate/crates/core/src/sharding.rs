//! Address-prefix shard assignment. A node at depth `d` of the tree hosts
//! every account whose address starts with its `d`-bit prefix; the root
//! (`d = 0`) hosts everything. Bits are read most-significant first.

use std::fmt;

use crate::codec::{Address, CodecError, Reader};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ShardError {
    #[error("assignment is already at the maximum depth of 160 bits")]
    MaxDepth,
}

/// A bit string of length `0..=160`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ShardAssignment {
    len: u8,
    bits: [u8; 20],
}

impl ShardAssignment {
    /// Hosts every address.
    pub const FULL: ShardAssignment = ShardAssignment {
        len: 0,
        bits: [0u8; 20],
    };

    pub fn depth(&self) -> usize {
        self.len as usize
    }

    pub fn bit(&self, index: usize) -> bool {
        Address(self.bits).bit(index)
    }

    /// Parses a string of `0`/`1` characters.
    pub fn from_bit_str(s: &str) -> Result<Self, CodecError> {
        let mut out = ShardAssignment::FULL;
        for c in s.chars() {
            let bit = match c {
                '0' => false,
                '1' => true,
                _ => return Err(CodecError::Malformed("prefix must be 0/1 digits")),
            };
            out = out.push(bit).map_err(|_| CodecError::Malformed("prefix too long"))?;
        }
        Ok(out)
    }

    /// The one-bit extension of this prefix.
    pub fn push(&self, bit: bool) -> Result<Self, ShardError> {
        let d = self.depth();
        if d >= Address::BITS {
            return Err(ShardError::MaxDepth);
        }
        let mut next = *self;
        if bit {
            next.bits[d / 8] |= 0x80 >> (d % 8);
        }
        next.len += 1;
        Ok(next)
    }

    pub fn hosts(&self, address: &Address) -> bool {
        let d = self.depth();
        let whole = d / 8;
        if self.bits[..whole] != address.0[..whole] {
            return false;
        }
        let rem = d % 8;
        if rem == 0 {
            return true;
        }
        let mask = 0xffu8 << (8 - rem);
        self.bits[whole] & mask == address.0[whole] & mask
    }

    /// Left (`‖0`) and right (`‖1`) children; their host sets partition ours.
    pub fn split(&self) -> Result<(Self, Self), ShardError> {
        Ok((self.push(false)?, self.push(true)?))
    }

    /// True when `other`'s prefix starts with ours.
    pub fn is_prefix_of(&self, other: &ShardAssignment) -> bool {
        self.depth() <= other.depth() && self.hosts(&Address(other.bits))
    }

    /// Length byte followed by the bits packed MSB-first into
    /// `ceil(len / 8)` bytes.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.len];
        out.extend_from_slice(&self.bits[..self.depth().div_ceil(8)]);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let out = Self::read(&mut r)?;
        r.finish()?;
        Ok(out)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let len = r.u8()?;
        if len as usize > Address::BITS {
            return Err(CodecError::Malformed("prefix longer than 160 bits"));
        }
        let packed = r.take((len as usize).div_ceil(8))?;
        let mut bits = [0u8; 20];
        bits[..packed.len()].copy_from_slice(packed);
        let out = ShardAssignment { len, bits };
        let canonical = (0..len as usize).fold(ShardAssignment::FULL, |acc, i| {
            acc.push(out.bit(i)).expect("len checked")
        });
        if canonical != out {
            return Err(CodecError::Malformed("padding bits set"));
        }
        Ok(out)
    }
}

impl fmt::Display for ShardAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len == 0 {
            return f.write_str("*");
        }
        for i in 0..self.depth() {
            f.write_str(if self.bit(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for ShardAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ShardAssignment({self})")
    }
}

/// Anything that can be walked from a root through per-node assignments.
pub trait ShardTree {
    type Id: Copy;
    fn root(&self) -> Self::Id;
    fn assignment(&self, node: Self::Id) -> ShardAssignment;
    fn children(&self, node: Self::Id) -> Vec<Self::Id>;
}

/// Nodes from the root down to the deepest node hosting `address`.
pub fn nodes_path<T: ShardTree>(tree: &T, address: &Address) -> Vec<T::Id> {
    let mut path = vec![tree.root()];
    let mut cursor = tree.root();
    while let Some(next) = tree
        .children(cursor)
        .into_iter()
        .find(|c| tree.assignment(*c).hosts(address))
    {
        path.push(next);
        cursor = next;
    }
    path
}
