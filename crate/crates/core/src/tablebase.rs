//! Packed WDL tables, their on-disk format, and lookups across endgames.
//!
//! File layout (little-endian):
//!
//! ```text
//! "CQDT" | version u32 | name_len u16 | name | flags u32 | space_size u64
//!        | labels: ceil(space_size / 4) bytes, 2 bits per index
//!        | rounds: space_size × u16   (only when flags bit 0 is set)
//!        | crc32 over everything above
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::index::{IndexError, IndexSpace, PositionIndex};
use crate::material::{ColorTransform, MaterialSignature};
use crate::rules::Position;

pub const MAGIC: &[u8; 4] = b"CQDT";
pub const FORMAT_VERSION: u32 = 1;
const FLAG_ROUNDS: u32 = 1;

/// Game value for the side to move. `Invalid` marks holes in the index space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Label {
    Loss = 0,
    Draw = 1,
    Win = 2,
    Invalid = 3,
}

impl Label {
    #[inline]
    pub fn from_bits(bits: u8) -> Label {
        match bits & 3 {
            0 => Label::Loss,
            1 => Label::Draw,
            2 => Label::Win,
            _ => Label::Invalid,
        }
    }

    /// Win → Draw → Loss → Win. `Invalid` is left alone.
    pub fn rotate(self) -> Label {
        match self {
            Label::Win => Label::Draw,
            Label::Draw => Label::Loss,
            Label::Loss => Label::Win,
            Label::Invalid => Label::Invalid,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a table file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("table file truncated")]
    Truncated,
    #[error("bad signature in table header: {0}")]
    BadSignature(String),
    #[error("space size {found} does not match {expected} for {signature}")]
    SpaceSizeMismatch {
        signature: String,
        found: u64,
        expected: u64,
    },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("expected a table for {expected}, found {found}")]
    WrongSignature { expected: String, found: String },
    #[error("no sub-model table for {0}")]
    MissingSubModel(String),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// A dense labeling of one signature's index space.
#[derive(Clone, PartialEq, Eq)]
pub struct WdlTable {
    signature: MaterialSignature,
    format_version: u32,
    space_size: u64,
    labels: Vec<u8>,
    rounds: Option<Vec<u16>>,
}

impl std::fmt::Debug for WdlTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WdlTable")
            .field("signature", &self.signature)
            .field("space_size", &self.space_size)
            .field("rounds", &self.rounds.is_some())
            .finish()
    }
}

impl WdlTable {
    /// Every index set to `label`.
    pub fn filled(signature: MaterialSignature, label: Label) -> Result<WdlTable, TableError> {
        let space_size = IndexSpace::new(signature)?.space_size();
        let b = label as u8;
        let byte = b | b << 2 | b << 4 | b << 6;
        Ok(WdlTable {
            signature,
            format_version: FORMAT_VERSION,
            space_size,
            labels: vec![byte; space_size.div_ceil(4) as usize],
            rounds: None,
        })
    }

    /// Packs one label per index (values 0..=3).
    pub(crate) fn from_unpacked(signature: MaterialSignature, unpacked: &[u8], rounds: Option<Vec<u16>>) -> WdlTable {
        let space_size = unpacked.len() as u64;
        let labels = unpacked
            .chunks(4)
            .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &l)| acc | (l & 3) << (2 * i)))
            .collect();
        if let Some(r) = &rounds {
            assert_eq!(r.len(), unpacked.len());
        }
        WdlTable {
            signature,
            format_version: FORMAT_VERSION,
            space_size,
            labels,
            rounds,
        }
    }

    pub fn signature(&self) -> MaterialSignature {
        self.signature
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    pub fn space_size(&self) -> u64 {
        self.space_size
    }

    /// Derivation pass per index, present on generator output.
    pub fn rounds(&self) -> Option<&[u16]> {
        self.rounds.as_deref()
    }

    pub fn clear_rounds(&mut self) {
        self.rounds = None;
    }

    #[inline]
    pub fn get(&self, i: u64) -> Label {
        Label::from_bits(self.labels[(i >> 2) as usize] >> (2 * (i & 3)))
    }

    pub fn get_label(&self, i: PositionIndex) -> Result<Label, IndexError> {
        if i.0 >= self.space_size {
            return Err(IndexError::OutOfRange {
                index: i.0,
                size: self.space_size,
            });
        }
        Ok(self.get(i.0))
    }

    /// The packed label bytes, four indices per byte.
    pub(crate) fn packed(&self) -> &[u8] {
        &self.labels
    }

    pub fn set(&mut self, i: u64, label: Label) {
        let byte = &mut self.labels[(i >> 2) as usize];
        let shift = 2 * (i & 3);
        *byte = *byte & !(3 << shift) | (label as u8) << shift;
    }

    /// Number of indices not labeled `Invalid`.
    pub fn valid_count(&self) -> u64 {
        let full = self.space_size / 4;
        let mut n: u64 = self.labels[..full as usize]
            .iter()
            .map(|&b| {
                // count 2-bit fields that are not 0b11
                let both = b & (b >> 1) & 0x55;
                4 - both.count_ones() as u64
            })
            .sum();
        for i in full * 4..self.space_size {
            n += (self.get(i) != Label::Invalid) as u64;
        }
        n
    }

    fn header(&self) -> Vec<u8> {
        let name = self.signature.to_string();
        let mut out = Vec::with_capacity(22 + name.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let flags = if self.rounds.is_some() { FLAG_ROUNDS } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&self.space_size.to_le_bytes());
        out
    }

    fn rounds_bytes(&self) -> Vec<u8> {
        match &self.rounds {
            Some(r) => r.iter().flat_map(|v| v.to_le_bytes()).collect(),
            None => Vec::new(),
        }
    }

    /// CRC-32 of the serialized header and payload.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&self.header());
        h.update(&self.labels);
        h.update(&self.rounds_bytes());
        h.finalize()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header();
        out.extend_from_slice(&self.labels);
        out.extend_from_slice(&self.rounds_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<WdlTable, TableError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TableError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(TableError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| TableError::BadSignature("non-ASCII".into()))?;
        let signature: MaterialSignature = name.parse().map_err(|e| TableError::BadSignature(format!("{e}")))?;
        let flags = r.u32()?;
        let space_size = r.u64()?;
        let expected = IndexSpace::new(signature)?.space_size();
        if space_size != expected {
            return Err(TableError::SpaceSizeMismatch {
                signature: signature.to_string(),
                found: space_size,
                expected,
            });
        }
        let labels = r.take(space_size.div_ceil(4) as usize)?.to_vec();
        let rounds = if flags & FLAG_ROUNDS != 0 {
            let raw = r.take(space_size as usize * 2)?;
            Some(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
        } else {
            None
        };
        let body_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(TableError::Truncated);
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(TableError::ChecksumMismatch { stored, computed });
        }
        Ok(WdlTable {
            signature,
            format_version: version,
            space_size,
            labels,
            rounds,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), TableError> {
        let io = |source| TableError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("cqdt.tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<WdlTable, TableError> {
        let bytes = fs::read(path).map_err(|source| TableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        WdlTable::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TableError> {
        let end = self.pos.checked_add(n).ok_or(TableError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(TableError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, TableError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TableError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TableError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// File name of a table inside a tablebase directory.
pub fn table_file_name(signature: MaterialSignature) -> String {
    format!("{signature}.cqdt")
}

struct SubModel {
    table: Arc<WdlTable>,
    space: IndexSpace,
}

/// Verified tables for smaller endgames, keyed by canonical signature.
#[derive(Default)]
pub struct SubModelSet {
    // a handful of entries; a linear scan beats hashing here
    entries: Vec<SubModel>,
    /// Board material, the entry storing it, and the transform onto it.
    aliases: Vec<(MaterialSignature, usize, ColorTransform)>,
}

impl SubModelSet {
    pub fn new() -> SubModelSet {
        SubModelSet::default()
    }

    /// Adds or replaces the table for its signature.
    pub fn insert(&mut self, table: Arc<WdlTable>) -> Result<(), TableError> {
        let sig = table.signature();
        let space = IndexSpace::new(sig)?;
        let entry = SubModel { table, space };
        match self.entries.iter().position(|e| e.space.signature() == sig) {
            Some(i) => self.entries[i] = entry,
            None => {
                let i = self.entries.len();
                self.entries.push(entry);
                for material in [sig, sig.color_swap()] {
                    let (canon, tf) = material.canonicalize_for_storage();
                    if canon == sig && !self.aliases.iter().any(|a| a.0 == material) {
                        self.aliases.push((material, i, tf));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, sig: MaterialSignature) -> Option<&Arc<WdlTable>> {
        self.entries.iter().find(|e| e.space.signature() == sig).map(|e| &e.table)
    }

    pub fn signatures(&self) -> Vec<MaterialSignature> {
        self.entries.iter().map(|e| e.space.signature()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Label of `p` read from the stored table of its (canonicalized)
    /// material. The color transform moves the position, never the label.
    #[inline]
    pub fn lookup_cross(&self, p: &Position) -> Result<Label, TableError> {
        let material = MaterialSignature::of(p);
        let Some(&(_, i, tf)) = self.aliases.iter().find(|a| a.0 == material) else {
            return Err(TableError::MissingSubModel(material.canonicalize_for_storage().0.to_string()));
        };
        let entry = &self.entries[i];
        let idx = if tf.is_identity() {
            entry.space.encode_unchecked(p)
        } else {
            entry.space.encode_unchecked(&tf.apply(p))
        };
        Ok(entry.table.get(idx))
    }

    /// Errors with the first capture successor of `sig` that has no table.
    pub fn ensure_covers(&self, sig: MaterialSignature) -> Result<(), TableError> {
        for next in sig.capture_successor_signatures() {
            let canon = next.canonicalize_for_storage().0;
            if self.get(canon).is_none() {
                return Err(TableError::MissingSubModel(canon.to_string()));
            }
        }
        Ok(())
    }

    /// Whether every member's capture successors are members too.
    pub fn is_closed(&self) -> bool {
        self.entries
            .iter()
            .all(|e| self.ensure_covers(e.space.signature()).is_ok())
    }

    /// Loads the direct capture successors of `sig` from `dir`.
    pub fn load_for(sig: MaterialSignature, dir: &Path) -> Result<SubModelSet, TableError> {
        let mut set = SubModelSet::new();
        for next in sig.capture_successor_signatures() {
            let canon = next.canonicalize_for_storage().0;
            if set.get(canon).is_some() {
                continue;
            }
            let path = dir.join(table_file_name(canon));
            if !path.exists() {
                return Err(TableError::MissingSubModel(canon.to_string()));
            }
            let table = WdlTable::load(&path)?;
            if table.signature() != canon {
                return Err(TableError::WrongSignature {
                    expected: canon.to_string(),
                    found: table.signature().to_string(),
                });
            }
            set.insert(Arc::new(table))?;
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(s: &str) -> MaterialSignature {
        s.parse().unwrap()
    }

    fn sample_table() -> WdlTable {
        let mut t = WdlTable::filled(sig("KvK"), Label::Invalid).unwrap();
        for i in 0..t.space_size() {
            t.set(i, Label::from_bits((i * 7 % 5) as u8));
        }
        t
    }

    #[test]
    fn label_bits() {
        assert_eq!(Label::from_bits(0), Label::Loss);
        assert_eq!(Label::from_bits(1), Label::Draw);
        assert_eq!(Label::from_bits(2), Label::Win);
        assert_eq!(Label::from_bits(3), Label::Invalid);
        assert_eq!(Label::Win.rotate().rotate().rotate(), Label::Win);
    }

    #[test]
    fn packing_matches_file_layout() {
        let mut t = WdlTable::filled(sig("KvK"), Label::Loss).unwrap();
        t.set(5, Label::Win);
        // index 5 lives in byte 1, bits 2..3
        assert_eq!(t.labels[1], 0b0000_1000);
        assert_eq!(t.get(5), Label::Win);
        assert_eq!(t.get(4), Label::Loss);
        assert!(t.get_label(PositionIndex(8_192)).is_err());
    }

    #[test]
    fn valid_count_skips_invalid() {
        let mut t = WdlTable::filled(sig("KvK"), Label::Invalid).unwrap();
        assert_eq!(t.valid_count(), 0);
        t.set(3, Label::Draw);
        t.set(8_191, Label::Loss);
        assert_eq!(t.valid_count(), 2);
    }

    #[test]
    fn byte_round_trip() {
        let mut t = sample_table();
        assert_eq!(WdlTable::from_bytes(&t.to_bytes()).unwrap(), t);
        t.rounds = Some((0..t.space_size()).map(|i| i as u16).collect());
        let bytes = t.to_bytes();
        assert_eq!(WdlTable::from_bytes(&bytes).unwrap(), t);
        // header: magic, version, name, flags
        assert_eq!(&bytes[..4], b"CQDT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(u16::from_le_bytes(bytes[8..10].try_into().unwrap()), 3);
        assert_eq!(&bytes[10..13], b"KvK");
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[17..25].try_into().unwrap()), 8_192);
        assert_eq!(bytes.len(), 25 + 2_048 + 16_384 + 4);
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(crc, t.checksum());
    }

    #[test]
    fn load_errors() {
        let t = sample_table();
        let good = t.to_bytes();

        let mut corrupt = good.clone();
        corrupt[100] ^= 0x40;
        assert!(matches!(WdlTable::from_bytes(&corrupt), Err(TableError::ChecksumMismatch { .. })));

        let mut version = good.clone();
        version[4] = 9;
        assert!(matches!(
            WdlTable::from_bytes(&version),
            Err(TableError::VersionMismatch { found: 9, .. })
        ));

        assert!(matches!(WdlTable::from_bytes(&good[..good.len() - 10]), Err(TableError::Truncated)));
        assert!(matches!(WdlTable::from_bytes(&good[..12]), Err(TableError::Truncated)));

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(WdlTable::from_bytes(&magic), Err(TableError::BadMagic)));

        let mut name = good;
        name[10] = b'Q';
        assert!(matches!(WdlTable::from_bytes(&name), Err(TableError::BadSignature(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(table_file_name(sig("KvK")));
        let t = sample_table();
        t.save(&path).unwrap();
        assert_eq!(WdlTable::load(&path).unwrap(), t);
        assert!(matches!(
            WdlTable::load(&dir.path().join("missing.cqdt")),
            Err(TableError::Io { .. })
        ));
    }

    #[test]
    fn missing_sub_model() {
        let set = SubModelSet::new();
        let p = Position::from_fen("8/8/8/8/8/8/8/K1k5 w").unwrap();
        assert!(matches!(set.lookup_cross(&p), Err(TableError::MissingSubModel(n)) if n == "KvK"));
        assert!(set.ensure_covers(sig("KQvK")).is_err());
        assert!(set.is_closed());
    }

    proptest! {
        #[test]
        fn set_get_agree(ops in prop::collection::vec((0u64..8_192, 0u8..4), 1..200)) {
            let mut t = WdlTable::filled(sig("KvK"), Label::Draw).unwrap();
            let mut shadow = vec![Label::Draw; 8_192];
            for (i, l) in ops {
                t.set(i, Label::from_bits(l));
                shadow[i as usize] = Label::from_bits(l);
            }
            for (i, l) in shadow.iter().enumerate() {
                prop_assert_eq!(t.get(i as u64), *l);
            }
            prop_assert_eq!(WdlTable::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }
}
