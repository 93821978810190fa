//! Ordered key-value storage with named keyspaces and atomic write batches.
//!
//! Keyspace layouts (all integers big-endian):
//!
//! | keyspace          | key                          | value                         |
//! |-------------------|------------------------------|-------------------------------|
//! | `Blocks`          | block hash                   | block encoding                |
//! | `CanonicalHeight` | height (u64)                 | block hash                    |
//! | `SubchainTx`      | address, height (u64)        | transaction encoding          |
//! | `TipState`        | address                      | confirmed state header        |
//! | `Claimed`         | address, kind (u8), hash     | empty                         |
//! | `SeenTx`          | tx hash                      | address, height (u64)         |
//! | `Meta`            | name                         | free-form                     |

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Read, Seek, SeekFrom, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Keyspace {
    Blocks = 0,
    CanonicalHeight = 1,
    SubchainTx = 2,
    TipState = 3,
    Claimed = 4,
    SeenTx = 5,
    Meta = 6,
}

impl Keyspace {
    pub const ALL: [Keyspace; 7] = [
        Keyspace::Blocks,
        Keyspace::CanonicalHeight,
        Keyspace::SubchainTx,
        Keyspace::TipState,
        Keyspace::Claimed,
        Keyspace::SeenTx,
        Keyspace::Meta,
    ];

    fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }

    /// Keyspaces holding main-chain data (every node stores all of it).
    pub fn is_main_chain(self) -> bool {
        matches!(self, Keyspace::Blocks | Keyspace::CanonicalHeight)
    }

    /// Keyspaces holding per-account subchain data.
    pub fn is_subchain(self) -> bool {
        matches!(
            self,
            Keyspace::SubchainTx | Keyspace::TipState | Keyspace::Claimed | Keyspace::SeenTx
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WriteBatch {
    ops: Vec<(Keyspace, Vec<u8>, Option<Vec<u8>>)>,
}

impl WriteBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, ks: Keyspace, key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) {
        self.ops.push((ks, key.into(), Some(value.into())));
    }

    pub fn delete(&mut self, ks: Keyspace, key: impl Into<Vec<u8>>) {
        self.ops.push((ks, key.into(), None));
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (ks, key, value) in &self.ops {
            out.push(*ks as u8);
            out.push(value.is_some() as u8);
            out.extend_from_slice(&(key.len() as u32).to_be_bytes());
            out.extend_from_slice(key);
            if let Some(v) = value {
                out.extend_from_slice(&(v.len() as u32).to_be_bytes());
                out.extend_from_slice(v);
            }
        }
        out
    }

    fn decode(mut bytes: &[u8]) -> Option<Self> {
        fn take<'a>(b: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
            if b.len() < n {
                return None;
            }
            let (head, tail) = b.split_at(n);
            *b = tail;
            Some(head)
        }
        fn len(b: &mut &[u8]) -> Option<usize> {
            Some(u32::from_be_bytes(take(b, 4)?.try_into().ok()?) as usize)
        }
        let mut batch = WriteBatch::new();
        while !bytes.is_empty() {
            let head = take(&mut bytes, 2)?;
            let ks = Keyspace::from_byte(head[0])?;
            let klen = len(&mut bytes)?;
            let key = take(&mut bytes, klen)?.to_vec();
            let value = match head[1] {
                0 => None,
                1 => {
                    let vlen = len(&mut bytes)?;
                    Some(take(&mut bytes, vlen)?.to_vec())
                }
                _ => return None,
            };
            batch.ops.push((ks, key, value));
        }
        Some(batch)
    }
}

/// Storage engine behind a node.
pub trait KvBackend: Send {
    fn get(&self, ks: Keyspace, key: &[u8]) -> Option<Vec<u8>>;

    /// Entries of `ks` whose key starts with `prefix`, in key order.
    fn scan_prefix(&self, ks: Keyspace, prefix: &[u8]) -> Vec<(Vec<u8>, Vec<u8>)>;

    /// Applies every operation or none.
    fn apply(&mut self, batch: WriteBatch) -> io::Result<()>;

    /// Sum of key and value lengths currently stored in `ks`.
    fn keyspace_bytes(&self, ks: Keyspace) -> u64;

    /// Rewrites the backing storage without dead entries.
    fn compact(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// In-memory backend.
#[derive(Clone, Debug, Default)]
pub struct MemKv {
    spaces: [BTreeMap<Vec<u8>, Vec<u8>>; 7],
    bytes: [u64; 7],
}

impl MemKv {
    pub fn new() -> Self {
        Self::default()
    }

    fn apply_ops(&mut self, batch: WriteBatch) {
        for (ks, key, value) in batch.ops {
            let i = ks as usize;
            let klen = key.len() as u64;
            let old = match value {
                Some(v) => {
                    self.bytes[i] += klen + v.len() as u64;
                    self.spaces[i].insert(key, v)
                }
                None => self.spaces[i].remove(&key),
            };
            if let Some(old) = old {
                self.bytes[i] -= klen + old.len() as u64;
            }
        }
    }

    fn live_batch(&self) -> WriteBatch {
        let mut batch = WriteBatch::new();
        for ks in Keyspace::ALL {
            for (k, v) in &self.spaces[ks as usize] {
                batch.put(ks, k.clone(), v.clone());
            }
        }
        batch
    }
}

impl KvBackend for MemKv {
    fn get(&self, ks: Keyspace, key: &[u8]) -> Option<Vec<u8>> {
        self.spaces[ks as usize].get(key).cloned()
    }

    fn scan_prefix(&self, ks: Keyspace, prefix: &[u8]) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.spaces[ks as usize]
            .range::<[u8], _>((Bound::Included(prefix), Bound::Unbounded))
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    fn apply(&mut self, batch: WriteBatch) -> io::Result<()> {
        self.apply_ops(batch);
        Ok(())
    }

    fn keyspace_bytes(&self, ks: Keyspace) -> u64 {
        self.bytes[ks as usize]
    }
}

/// Append-only log of write batches with an in-memory index.
///
/// Each batch is one record: 4-byte length, payload, SHA-256 of the payload.
/// On open, records are replayed until the first incomplete or corrupt one,
/// and the file is truncated there, so a crash mid-write loses at most the
/// batch being written.
pub struct FileKv {
    path: PathBuf,
    file: File,
    mem: MemKv,
}

const LOG_NAME: &str = "store.log";

impl FileKv {
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG_NAME);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut mem = MemKv::new();
        let mut good = 0u64;
        {
            let mut reader = BufReader::new(&mut file);
            reader.seek(SeekFrom::Start(0))?;
            loop {
                let mut len = [0u8; 4];
                if reader.read_exact(&mut len).is_err() {
                    break;
                }
                let len = u32::from_be_bytes(len) as usize;
                let mut payload = vec![0u8; len];
                let mut sum = [0u8; 32];
                if reader.read_exact(&mut payload).is_err() || reader.read_exact(&mut sum).is_err() {
                    break;
                }
                if Sha256::digest(&payload).as_slice() != sum {
                    break;
                }
                let Some(batch) = WriteBatch::decode(&payload) else {
                    break;
                };
                mem.apply_ops(batch);
                good += 4 + len as u64 + 32;
            }
        }
        file.set_len(good)?;
        Ok(FileKv { path, file, mem })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn log_len(&self) -> io::Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    fn record(payload: &[u8]) -> Vec<u8> {
        let mut rec = Vec::with_capacity(payload.len() + 36);
        rec.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        rec.extend_from_slice(payload);
        rec.extend_from_slice(&Sha256::digest(payload));
        rec
    }
}

impl KvBackend for FileKv {
    fn get(&self, ks: Keyspace, key: &[u8]) -> Option<Vec<u8>> {
        self.mem.get(ks, key)
    }

    fn scan_prefix(&self, ks: Keyspace, prefix: &[u8]) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.mem.scan_prefix(ks, prefix)
    }

    fn apply(&mut self, batch: WriteBatch) -> io::Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        self.file.write_all(&Self::record(&batch.encode()))?;
        self.file.sync_data()?;
        self.mem.apply_ops(batch);
        Ok(())
    }

    fn keyspace_bytes(&self, ks: Keyspace) -> u64 {
        self.mem.keyspace_bytes(ks)
    }

    fn compact(&mut self) -> io::Result<()> {
        let tmp = self.path.with_extension("compact");
        {
            let mut out = File::create(&tmp)?;
            let live = self.mem.live_batch();
            if !live.is_empty() {
                out.write_all(&Self::record(&live.encode()))?;
            }
            out.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().read(true).append(true).open(&self.path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: u8) -> WriteBatch {
        let mut b = WriteBatch::new();
        b.put(Keyspace::Blocks, vec![n], vec![n; 10]);
        b.put(Keyspace::SubchainTx, vec![1, n], vec![n; 3]);
        b
    }

    #[test]
    fn byte_accounting_tracks_overwrites_and_deletes() {
        let mut kv = MemKv::new();
        kv.apply(batch(1)).unwrap();
        assert_eq!(kv.keyspace_bytes(Keyspace::Blocks), 11);
        kv.apply(batch(1)).unwrap();
        assert_eq!(kv.keyspace_bytes(Keyspace::Blocks), 11);
        let mut del = WriteBatch::new();
        del.delete(Keyspace::Blocks, vec![1]);
        kv.apply(del).unwrap();
        assert_eq!(kv.keyspace_bytes(Keyspace::Blocks), 0);
        assert_eq!(kv.keyspace_bytes(Keyspace::SubchainTx), 5);
    }

    #[test]
    fn prefix_scan_is_ordered_and_bounded() {
        let mut kv = MemKv::new();
        for n in [3u8, 1, 2] {
            kv.apply(batch(n)).unwrap();
        }
        let mut other = WriteBatch::new();
        other.put(Keyspace::SubchainTx, vec![2, 0], vec![]);
        kv.apply(other).unwrap();
        let keys: Vec<Vec<u8>> = kv
            .scan_prefix(Keyspace::SubchainTx, &[1])
            .into_iter()
            .map(|(k, _)| k)
            .collect();
        assert_eq!(keys, vec![vec![1, 1], vec![1, 2], vec![1, 3]]);
    }

    #[test]
    fn file_log_survives_reopen_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut kv = FileKv::open(dir.path()).unwrap();
            kv.apply(batch(1)).unwrap();
            kv.apply(batch(2)).unwrap();
        }
        let len = fs::metadata(dir.path().join(LOG_NAME)).unwrap().len();
        // simulate a crash halfway through a third batch
        {
            let mut f = OpenOptions::new().append(true).open(dir.path().join(LOG_NAME)).unwrap();
            let rec = FileKv::record(&batch(3).encode());
            f.write_all(&rec[..rec.len() / 2]).unwrap();
        }
        let kv = FileKv::open(dir.path()).unwrap();
        assert_eq!(kv.get(Keyspace::Blocks, &[2]), Some(vec![2; 10]));
        assert_eq!(kv.get(Keyspace::Blocks, &[3]), None);
        assert_eq!(kv.log_len().unwrap(), len);
    }

    #[test]
    fn compaction_keeps_live_data_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut kv = FileKv::open(dir.path()).unwrap();
        for _ in 0..10 {
            kv.apply(batch(1)).unwrap();
        }
        let before = kv.log_len().unwrap();
        kv.compact().unwrap();
        assert!(kv.log_len().unwrap() < before);
        kv.apply(batch(2)).unwrap();
        drop(kv);
        let kv = FileKv::open(dir.path()).unwrap();
        assert_eq!(kv.get(Keyspace::Blocks, &[1]), Some(vec![1; 10]));
        assert_eq!(kv.get(Keyspace::Blocks, &[2]), Some(vec![2; 10]));
    }
}
