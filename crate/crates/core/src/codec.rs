//! Non-interactive b-bit encoding by per-datapoint uniform hashing.
//!
//! Datapoint `j` of cluster `t` is sent as `h^{t,j}(x)`, where `h^{t,j}` maps
//! `[d]` to `[2^b]`. The hash family is a keyed counter-based function of
//! `(master_seed, t, j, k)`: encoder and server share it through the seed
//! alone, and the server re-evaluates it lazily while counting.
//!
//! One 64-bit stream word carries `floor(64 / b)` independent b-bit lanes, so
//! symbol `k` lives in lane `k % lanes` of word `k / lanes`. The decoder
//! compares a whole word against the received symbol at once and accumulates
//! the per-lane matches in bit-sliced counters.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mix::{absorb, derive_seed, stream_word, Domain};
use crate::model::{Distribution, EstimateVector, HashedEstimate};

/// Largest supported per-datapoint bit budget.
pub const MAX_BITS: u32 = 20;

/// Magic bytes opening a message dump.
pub const DUMP_MAGIC: [u8; 4] = *b"SHFT";
/// Current message dump format version.
pub const DUMP_VERSION: u16 = 1;
const DUMP_HEADER_LEN: usize = 16;

fn check_bits(bits: u32) -> Result<()> {
    if (1..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::BitsOutOfRange { bits })
    }
}

/// Seed shared by all hash functions of one cluster.
fn cluster_key(master_seed: u64, cluster_id: u64) -> u64 {
    derive_seed(master_seed, Domain::Hash, &[cluster_id])
}

#[inline(always)]
fn point_key(cluster_key: u64, datapoint_index: u64) -> u64 {
    absorb(cluster_key, datapoint_index)
}

/// Identifies the hash function `h^{t,j}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HashKey {
    pub master_seed: u64,
    pub cluster_id: u64,
    pub datapoint_index: u64,
}

impl HashKey {
    pub fn new(master_seed: u64, cluster_id: u64, datapoint_index: u64) -> Self {
        Self {
            master_seed,
            cluster_id,
            datapoint_index,
        }
    }

    /// Evaluates `h^{t,j}(symbol)` for a `bits`-bit range.
    pub fn hash(&self, symbol: usize, bits: u32) -> u32 {
        let layout = LaneLayout::new(bits);
        let key = point_key(
            cluster_key(self.master_seed, self.cluster_id),
            self.datapoint_index,
        );
        layout.lane(key, symbol)
    }
}

/// One b-bit message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedMessage {
    pub symbol: u32,
    pub datapoint_index: u32,
}

#[derive(Debug, Clone, Copy)]
struct LaneLayout {
    bits: u32,
    lanes: usize,
    /// Lowest bit of every used lane.
    low: u64,
    /// Highest bit of every used lane.
    high: u64,
    /// All bits of every used lane except its highest.
    body: u64,
    symbol_mask: u64,
}

impl LaneLayout {
    fn new(bits: u32) -> Self {
        let lanes = (64 / bits) as usize;
        let symbol_mask = (1u64 << bits) - 1;
        let mut low = 0u64;
        let mut high = 0u64;
        for lane in 0..lanes {
            let shift = lane as u32 * bits;
            low |= 1 << shift;
            high |= 1 << (shift + bits - 1);
        }
        let used = if lanes as u32 * bits == 64 {
            u64::MAX
        } else {
            (1u64 << (lanes as u32 * bits)) - 1
        };
        Self {
            bits,
            lanes,
            low,
            high,
            body: used & !high,
            symbol_mask,
        }
    }

    fn blocks(&self, dim: usize) -> usize {
        dim.div_ceil(self.lanes)
    }

    #[inline(always)]
    fn lane(&self, key: u64, symbol: usize) -> u32 {
        let word = stream_word(key, (symbol / self.lanes) as u64);
        let shift = (symbol % self.lanes) as u32 * self.bits;
        ((word >> shift) & self.symbol_mask) as u32
    }

    /// Symbol replicated into every lane.
    #[inline(always)]
    fn broadcast(&self, symbol: u32) -> u64 {
        self.low.wrapping_mul(symbol as u64)
    }

    /// High-bit mask of the lanes of `word` equal to the broadcast symbol.
    #[inline(always)]
    fn matches(&self, word: u64, broadcast: u64) -> u64 {
        let x = word ^ broadcast;
        // A lane's high bit in `t` is clear iff the whole lane of `x` is zero;
        // the addition cannot carry across lanes.
        let t = ((x & self.body).wrapping_add(self.body)) | x;
        !t & self.high
    }
}

/// Encodes one datapoint with the hash function selected by `key`.
pub fn encode(datapoint: usize, key: HashKey, bits: u32) -> Result<EncodedMessage> {
    check_bits(bits)?;
    let datapoint_index = u32::try_from(key.datapoint_index)
        .map_err(|_| Error::Config("datapoint index exceeds u32".into()))?;
    let symbol = key.hash(datapoint, bits);
    if u64::from(symbol) >= 1u64 << bits {
        return Err(Error::SymbolOutOfRange { symbol, bits });
    }
    Ok(EncodedMessage {
        symbol,
        datapoint_index,
    })
}

/// Encodes a cluster's datapoints; datapoint `j` uses `h^{t,j}`.
pub fn encode_cluster(
    datapoints: &[u32],
    cluster_id: u64,
    master_seed: u64,
    bits: u32,
    dim: usize,
) -> Result<Vec<EncodedMessage>> {
    check_bits(bits)?;
    if datapoints.len() > u32::MAX as usize {
        return Err(Error::Config("cluster exceeds u32::MAX datapoints".into()));
    }
    let layout = LaneLayout::new(bits);
    let ckey = cluster_key(master_seed, cluster_id);
    datapoints
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let x = x as usize;
            if x >= dim {
                return Err(Error::DatapointOutOfRange { datapoint: x, dim });
            }
            Ok(EncodedMessage {
                symbol: layout.lane(point_key(ckey, j as u64), x),
                datapoint_index: j as u32,
            })
        })
        .collect()
}

/// How the decoder spreads its work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeStrategy {
    #[default]
    Sequential,
    /// Splits the entries into word-aligned chunks decoded in parallel.
    ParallelEntries,
}

/// Bit-sliced counters: plane `p` of block `w` holds bit `p` of every lane
/// counter of that block, at the lane's high-bit position.
const PLANES: usize = 8;
const FLUSH_EVERY: usize = (1 << PLANES) - 1;

fn count_blocks(
    messages: &[EncodedMessage],
    ckey: u64,
    layout: &LaneLayout,
    first_block: usize,
    block_count: usize,
    counts: &mut [u64],
) {
    let mut planes = vec![0u64; block_count * PLANES];
    // With many narrow lanes nearly every word carries a match and the early
    // exit mispredicts; with wide lanes matches are rare and it pays off.
    let dense = layout.bits <= 4;
    for chunk in messages.chunks(FLUSH_EVERY) {
        for message in chunk {
            let key = point_key(ckey, u64::from(message.datapoint_index));
            let broadcast = layout.broadcast(message.symbol);
            for (b, block_planes) in planes.chunks_exact_mut(PLANES).enumerate() {
                let word = stream_word(key, (first_block + b) as u64);
                let mut carry = layout.matches(word, broadcast);
                if dense {
                    for plane in block_planes.iter_mut() {
                        let next = *plane & carry;
                        *plane ^= carry;
                        carry = next;
                    }
                } else {
                    for plane in block_planes.iter_mut() {
                        if carry == 0 {
                            break;
                        }
                        let next = *plane & carry;
                        *plane ^= carry;
                        carry = next;
                    }
                }
            }
        }
        flush(&mut planes, layout, counts);
    }
}

fn flush(planes: &mut [u64], layout: &LaneLayout, counts: &mut [u64]) {
    for (b, block_planes) in planes.chunks_exact_mut(PLANES).enumerate() {
        let base = b * layout.lanes;
        let lanes = layout.lanes.min(counts.len().saturating_sub(base));
        for lane in 0..lanes {
            let shift = lane as u32 * layout.bits + layout.bits - 1;
            let mut value = 0u64;
            for (p, plane) in block_planes.iter().enumerate() {
                value |= ((plane >> shift) & 1) << p;
            }
            counts[base + lane] += value;
        }
        block_planes.fill(0);
    }
}

/// Server-side decoding of one cluster into hashed frequencies `N_k / n`.
pub fn decode_cluster(
    messages: &[EncodedMessage],
    cluster_id: u64,
    master_seed: u64,
    bits: u32,
    dim: usize,
) -> Result<HashedEstimate> {
    decode_cluster_with(
        messages,
        cluster_id,
        master_seed,
        bits,
        dim,
        DecodeStrategy::Sequential,
    )
}

pub fn decode_cluster_with(
    messages: &[EncodedMessage],
    cluster_id: u64,
    master_seed: u64,
    bits: u32,
    dim: usize,
    strategy: DecodeStrategy,
) -> Result<HashedEstimate> {
    check_bits(bits)?;
    if dim < 2 {
        return Err(Error::DimensionTooSmall { dim });
    }
    if messages.is_empty() {
        return Err(Error::EmptyCluster);
    }
    if let Some(m) = messages
        .iter()
        .find(|m| u64::from(m.symbol) >= 1u64 << bits)
    {
        return Err(Error::SymbolOutOfRange {
            symbol: m.symbol,
            bits,
        });
    }
    let layout = LaneLayout::new(bits);
    let ckey = cluster_key(master_seed, cluster_id);
    let blocks = layout.blocks(dim);
    let counts = match strategy {
        DecodeStrategy::Sequential => {
            let mut counts = vec![0u64; dim];
            count_blocks(messages, ckey, &layout, 0, blocks, &mut counts);
            counts
        }
        DecodeStrategy::ParallelEntries => {
            let per_task = blocks.div_ceil(rayon::current_num_threads() * 4).max(1);
            let mut counts = vec![0u64; dim];
            counts
                .par_chunks_mut(per_task * layout.lanes)
                .enumerate()
                .for_each(|(i, out)| {
                    let first = i * per_task;
                    let count = out.len().div_ceil(layout.lanes);
                    count_blocks(messages, ckey, &layout, first, count, out);
                });
            counts
        }
    };
    HashedEstimate::from_counts(
        &counts,
        messages.len() as u64,
        bits,
        cluster_id,
        master_seed,
    )
}

/// `E[b̌] = ((2^b - 1) p + 1) / 2^b`.
pub fn hashed_mean(p: &Distribution, bits: u32) -> EstimateVector {
    let scale = (1u64 << bits) as f64;
    let values = p
        .probs()
        .iter()
        .map(|&pk| ((scale - 1.0) * pk + 1.0) / scale)
        .collect();
    EstimateVector::new(values).expect("finite by construction")
}

/// Entry-wise `(2^b v - 1) / (2^b - 1)` clamped to `[0, 1]`.
#[inline]
pub fn debias_value(v: f64, bits: u32) -> f64 {
    let scale = (1u64 << bits) as f64;
    ((scale * v - 1.0) / (scale - 1.0)).clamp(0.0, 1.0)
}

pub fn debias(v: &EstimateVector, bits: u32) -> EstimateVector {
    let values = v.values().iter().map(|&x| debias_value(x, bits)).collect();
    EstimateVector::new(values).expect("clamped values are finite")
}

/// Writes messages in the little-endian replay format: a 16-byte header
/// (`SHFT`, version u16, bits u8, 9 reserved zero bytes) followed by
/// `(datapoint_index u32, symbol u32)` records.
pub fn write_messages<W: Write>(mut out: W, bits: u32, messages: &[EncodedMessage]) -> Result<()> {
    check_bits(bits)?;
    let mut header = [0u8; DUMP_HEADER_LEN];
    header[..4].copy_from_slice(&DUMP_MAGIC);
    header[4..6].copy_from_slice(&DUMP_VERSION.to_le_bytes());
    header[6] = bits as u8;
    out.write_all(&header)?;
    let mut record = [0u8; 8];
    for m in messages {
        record[..4].copy_from_slice(&m.datapoint_index.to_le_bytes());
        record[4..].copy_from_slice(&m.symbol.to_le_bytes());
        out.write_all(&record)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dump produced by [`write_messages`], returning the bit budget and
/// the messages.
pub fn read_messages<R: Read>(mut input: R) -> Result<(u32, Vec<EncodedMessage>)> {
    let mut header = [0u8; DUMP_HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::MalformedDump("truncated header".into()))?;
    if header[..4] != DUMP_MAGIC {
        return Err(Error::MalformedDump("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != DUMP_VERSION {
        return Err(Error::MalformedDump(format!(
            "unsupported version {version}"
        )));
    }
    let bits = u32::from(header[6]);
    check_bits(bits)?;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() % 8 != 0 {
        return Err(Error::MalformedDump("trailing partial record".into()));
    }
    let messages = body
        .chunks_exact(8)
        .map(|r| {
            let datapoint_index = u32::from_le_bytes([r[0], r[1], r[2], r[3]]);
            let symbol = u32::from_le_bytes([r[4], r[5], r[6], r[7]]);
            if u64::from(symbol) >= 1u64 << bits {
                Err(Error::SymbolOutOfRange { symbol, bits })
            } else {
                Ok(EncodedMessage {
                    symbol,
                    datapoint_index,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((bits, messages))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Counts matches one symbol at a time through the public hash.
    fn naive_counts(
        messages: &[EncodedMessage],
        cluster_id: u64,
        seed: u64,
        bits: u32,
        dim: usize,
    ) -> Vec<u64> {
        let mut counts = vec![0u64; dim];
        for m in messages {
            let key = HashKey::new(seed, cluster_id, u64::from(m.datapoint_index));
            for (k, c) in counts.iter_mut().enumerate() {
                if key.hash(k, bits) == m.symbol {
                    *c += 1;
                }
            }
        }
        counts
    }

    fn points(n: usize, dim: usize, seed: u64) -> Vec<u32> {
        (0..n as u64)
            .map(|i| (stream_word(seed, i) % dim as u64) as u32)
            .collect()
    }

    #[test]
    fn one_bit_symbols_are_binary() {
        for j in 0..100 {
            let m = encode(3, HashKey::new(1, 2, j), 1).unwrap();
            assert!(m.symbol < 2);
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let key = HashKey::new(99, 4, 17);
        assert_eq!(encode(12, key, 5).unwrap(), encode(12, key, 5).unwrap());
    }

    #[test]
    fn bit_budget_is_bounded() {
        assert!(matches!(
            encode(0, HashKey::new(0, 0, 0), 0),
            Err(Error::BitsOutOfRange { bits: 0 })
        ));
        assert!(matches!(
            encode(0, HashKey::new(0, 0, 0), 21),
            Err(Error::BitsOutOfRange { bits: 21 })
        ));
    }

    #[test]
    fn encode_cluster_matches_single_encodes() {
        let xs = points(50, 37, 5);
        let msgs = encode_cluster(&xs, 3, 11, 6, 37).unwrap();
        for (j, (&x, m)) in xs.iter().zip(&msgs).enumerate() {
            let single = encode(x as usize, HashKey::new(11, 3, j as u64), 6).unwrap();
            assert_eq!(*m, single);
        }
        assert!(matches!(
            encode_cluster(&[40], 0, 0, 2, 37),
            Err(Error::DatapointOutOfRange {
                datapoint: 40,
                dim: 37
            })
        ));
    }

    #[test]
    fn decoder_agrees_with_naive_count() {
        for bits in [1, 2, 3, 5, 7, 8, 13, 20] {
            for dim in [2, 31, 64, 300] {
                // More messages than one flush interval exercises the carry path.
                let xs = points(700, dim, u64::from(bits) * 1000 + dim as u64);
                let msgs = encode_cluster(&xs, 9, 77, bits, dim).unwrap();
                let naive = naive_counts(&msgs, 9, 77, bits, dim);
                for strategy in [DecodeStrategy::Sequential, DecodeStrategy::ParallelEntries] {
                    let est = decode_cluster_with(&msgs, 9, 77, bits, dim, strategy).unwrap();
                    assert_eq!(est.counts(), naive, "bits={bits} dim={dim} {strategy:?}");
                }
            }
        }
    }

    #[test]
    fn point_mass_always_matches() {
        let xs = vec![0u32; 10_000];
        let msgs = encode_cluster(&xs, 0, 5, 8, 2).unwrap();
        let est = decode_cluster(&msgs, 0, 5, 8, 2).unwrap();
        assert_eq!(est.values()[0], 1.0);
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(
            decode_cluster(&[], 0, 0, 2, 4),
            Err(Error::EmptyCluster)
        ));
        let bad = [EncodedMessage {
            symbol: 4,
            datapoint_index: 0,
        }];
        assert!(matches!(
            decode_cluster(&bad, 0, 0, 2, 4),
            Err(Error::SymbolOutOfRange { symbol: 4, bits: 2 })
        ));
        let ok = [EncodedMessage {
            symbol: 0,
            datapoint_index: 0,
        }];
        assert!(matches!(
            decode_cluster(&ok, 0, 0, 2, 1),
            Err(Error::DimensionTooSmall { .. })
        ));
    }

    #[test]
    fn hashed_mean_values() {
        let p = Distribution::new(vec![0.0, 1.0]).unwrap();
        let b = hashed_mean(&p, 4);
        assert_eq!(b.values()[0], 1.0 / 16.0);
        assert_eq!(b.values()[1], 1.0);
        let u = Distribution::new(vec![1.0 / 300.0; 300]).unwrap();
        for &v in hashed_mean(&u, 2).values() {
            assert!((v - 0.2525).abs() < 1e-15);
        }
    }

    #[test]
    fn debias_values() {
        assert_eq!(debias_value(1.0, 3), 1.0);
        assert_eq!(debias_value(1.0 / 8.0, 3), 0.0);
        assert_eq!(debias_value(0.0, 3), 0.0);
    }

    #[test]
    fn dump_round_trip_and_header() {
        let msgs = encode_cluster(&points(10, 20, 1), 0, 3, 4, 20).unwrap();
        let mut buf = Vec::new();
        write_messages(&mut buf, 4, &msgs).unwrap();
        assert_eq!(buf.len(), 16 + 8 * 10);
        assert_eq!(&buf[..4], b"SHFT");
        assert_eq!(&buf[4..7], &[1, 0, 4]);
        assert!(buf[7..16].iter().all(|&b| b == 0));
        let (bits, back) = read_messages(buf.as_slice()).unwrap();
        assert_eq!(bits, 4);
        assert_eq!(back, msgs);

        buf[0] = b'X';
        assert!(matches!(
            read_messages(buf.as_slice()),
            Err(Error::MalformedDump(_))
        ));
    }

    proptest! {
        #[test]
        fn debias_inverts_hashed_mean(
            w in prop::collection::vec(0.001f64..1.0, 2..40),
            bits in 1u32..=20,
        ) {
            let s: f64 = w.iter().sum();
            let p = Distribution::new(w.iter().map(|x| x / s).collect()).unwrap();
            let back = debias(&hashed_mean(&p, bits), bits);
            for (a, b) in back.values().iter().zip(p.probs()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn debias_is_a_contraction(
            pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..50),
            bits in 1u32..=20,
        ) {
            let (u, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let du = debias(&EstimateVector::new(u.clone()).unwrap(), bits);
            let dv = debias(&EstimateVector::new(v.clone()).unwrap(), bits);
            let factor = (1u64 << bits) as f64 / ((1u64 << bits) as f64 - 1.0);
            for q in [1i32, 2] {
                let lhs: f64 = du.values().iter().zip(dv.values())
                    .map(|(a, b)| (a - b).abs().powi(q)).sum();
                let rhs: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).abs().powi(q)).sum();
                prop_assert!(lhs <= factor.powi(q) * rhs * (1.0 + 1e-12) + 1e-15);
            }
        }
    }
}
