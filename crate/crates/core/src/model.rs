//! Fixed-width records, the 80-bit key domain, and equal-width range
//! partitioning of that domain.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;

/// Keys are unsigned 80-bit integers stored in a `u128`.
pub const KEY_BITS: u32 = 80;
/// Largest representable key.
pub const KEY_MAX: u128 = (1u128 << KEY_BITS) - 1;
/// Serialized key width in bytes (big-endian).
pub const KEY_LEN: usize = 10;
/// Value payload width in bytes.
pub const VALUE_LEN: usize = 90;
/// Serialized record width: 10-byte key + 90-byte value.
pub const RECORD_LEN: usize = KEY_LEN + VALUE_LEN;

/// Printable-ASCII range used for generated value bytes.
const VALUE_MIN: u8 = 0x20;
const VALUE_MAX: u8 = 0x7e;

/// One 100-byte sortable record. Ordering is `(key, value)` lexicographic,
/// which the derived `Ord` provides via field order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Record {
    pub key: u128,
    pub value: [u8; VALUE_LEN],
}

impl Record {
    /// Builds a record; `key` must fit in 80 bits.
    pub fn new(key: u128, value: [u8; VALUE_LEN]) -> Self {
        assert!(key <= KEY_MAX, "key {key:#x} exceeds the 80-bit key domain");
        Record { key, value }
    }

    /// Serializes to the flat on-disk/wire layout.
    pub fn to_bytes(&self) -> [u8; RECORD_LEN] {
        let mut out = [0u8; RECORD_LEN];
        out[..KEY_LEN].copy_from_slice(&self.key.to_be_bytes()[16 - KEY_LEN..]);
        out[KEY_LEN..].copy_from_slice(&self.value);
        out
    }

    /// Parses one 100-byte record. Ten big-endian key bytes can never exceed
    /// the 80-bit domain, so this cannot fail.
    pub fn from_bytes(bytes: &[u8; RECORD_LEN]) -> Self {
        let mut wide = [0u8; 16];
        wide[16 - KEY_LEN..].copy_from_slice(&bytes[..KEY_LEN]);
        let mut value = [0u8; VALUE_LEN];
        value.copy_from_slice(&bytes[KEY_LEN..]);
        Record {
            key: u128::from_be_bytes(wide),
            value,
        }
    }
}

impl fmt::Debug for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Record {{ key: {:#x}, value: {:?}.. }}",
            self.key,
            &self.value[..8.min(VALUE_LEN)]
        )
    }
}

/// Serializes records back-to-back with no header or delimiters.
pub fn records_to_bytes(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_LEN);
    for record in records {
        out.extend_from_slice(&record.to_bytes());
    }
    out
}

/// Parses a flat byte stream of 100-byte records.
pub fn records_from_bytes(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() % RECORD_LEN != 0 {
        return Err(Error::MalformedData(format!(
            "record stream length {} is not a multiple of {RECORD_LEN}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(RECORD_LEN)
        .map(|chunk| Record::from_bytes(chunk.try_into().expect("chunk width")))
        .collect())
}

/// A worker index in `{1, ..., K}`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn new(index: usize) -> Self {
        assert!(index >= 1, "node indices start at 1");
        NodeId(index)
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A closed key interval `[lower, upper]` within the 80-bit domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeySpace {
    lower: u128,
    upper: u128,
}

impl KeySpace {
    /// The full 80-bit key domain; the domain every pipeline run partitions.
    pub const FULL: KeySpace = KeySpace {
        lower: 0,
        upper: KEY_MAX,
    };

    pub fn new(lower: u128, upper: u128) -> Result<Self> {
        if lower > upper || upper > KEY_MAX {
            return Err(Error::InvalidConfig(format!(
                "key space [{lower:#x}, {upper:#x}] is empty or exceeds {KEY_BITS} bits"
            )));
        }
        Ok(KeySpace { lower, upper })
    }

    pub fn lower(&self) -> u128 {
        self.lower
    }

    pub fn upper(&self) -> u128 {
        self.upper
    }

    /// Number of keys in the interval. At most 2^80, so it fits a `u128`.
    pub fn span(&self) -> u128 {
        self.upper - self.lower + 1
    }
}

/// K contiguous key ranges covering a [`KeySpace`]: partition `i` (1-based)
/// is `[b_{i-1}, b_i)` for `i < K` and `[b_{K-1}, b_K]` for `i = K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitioning {
    boundaries: Vec<u128>,
}

impl Partitioning {
    /// Number of partitions.
    pub fn k(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// The K+1 ordered boundary values `b_0 < ... < b_K`.
    pub fn boundaries(&self) -> &[u128] {
        &self.boundaries
    }

    /// Lower bound (inclusive) of 1-based partition `i`.
    pub fn lower_of(&self, i: usize) -> u128 {
        self.boundaries[i - 1]
    }

    /// Number of keys that fall in 1-based partition `i`.
    pub fn width_of(&self, i: usize) -> u128 {
        let k = self.k();
        if i < k {
            self.boundaries[i] - self.boundaries[i - 1]
        } else {
            self.boundaries[k] - self.boundaries[k - 1] + 1
        }
    }
}

/// Splits `space` into `k` equal-width partitions. When the span does not
/// divide evenly, the first `span mod k` partitions hold one extra key.
pub fn partition_boundaries(space: KeySpace, k: usize) -> Result<Partitioning> {
    if k < 1 {
        return Err(Error::InvalidConfig("partition count must be at least 1".into()));
    }
    let span = space.span();
    if span < k as u128 {
        return Err(Error::InvalidConfig(format!(
            "key span {span} is smaller than partition count {k}"
        )));
    }
    let base = span / k as u128;
    let extra = (span % k as u128) as usize;
    let mut boundaries = Vec::with_capacity(k + 1);
    boundaries.push(space.lower());
    let mut next = space.lower();
    for i in 0..k - 1 {
        next += if i < extra { base + 1 } else { base };
        boundaries.push(next);
    }
    boundaries.push(space.upper());
    Ok(Partitioning { boundaries })
}

/// Returns the unique 1-based partition index whose range contains `key`.
pub fn partition_of(key: u128, partitioning: &Partitioning) -> Result<usize> {
    let b = &partitioning.boundaries;
    let k = partitioning.k();
    if key < b[0] || key > b[k] {
        return Err(Error::OutOfDomain {
            key,
            context: format!("domain is [{:#x}, {:#x}]", b[0], b[k]),
        });
    }
    // Count interior boundaries <= key; the upper bound b_K is inclusive.
    Ok(b[1..k].partition_point(|&bound| bound <= key) + 1)
}

/// Generates `count` records with keys uniform over the full 80-bit domain
/// and printable-ASCII values. Record `i` is drawn from stream `i` of a
/// counter-mode ChaCha generator, so output is a pure function of
/// `(seed, i)` and any prefix of a longer run is identical.
pub fn generate_records(count: usize, seed: u64) -> Vec<Record> {
    par::map_indexed(count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut key_bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut key_bytes);
        let mut wide = [0u8; 16];
        wide[16 - KEY_LEN..].copy_from_slice(&key_bytes);
        let mut value = [0u8; VALUE_LEN];
        for byte in value.iter_mut() {
            *byte = rng.random_range(VALUE_MIN..=VALUE_MAX);
        }
        Record {
            key: u128::from_be_bytes(wide),
            value,
        }
    })
}

// ---- Tests ----
