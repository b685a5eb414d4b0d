//! Packed bit sequences and seed streams.
//!
//! Bits are stored least-significant-bit first inside `u64` words, so bit `i`
//! lives at `words[i / 64] >> (i % 64)`. Serialising the words little-endian
//! gives the LSB-first byte packing used on disk.

use std::fmt;

use rand::RngCore;

/// A packed bit sequence; bits past `len` in the last word are always zero.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct BitBlock {
    words: Vec<u64>,
    len: usize,
}

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl BitBlock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            words: Vec::with_capacity(words_for(bits)),
            len: 0,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; words_for(len)],
            len,
        }
    }

    /// Takes ownership of `words`, truncating or zero-extending to `len` bits.
    pub fn from_words(mut words: Vec<u64>, len: usize) -> Self {
        words.resize(words_for(len), 0);
        let mut block = Self { words, len };
        block.clear_tail();
        block
    }

    /// Builds from LSB-first packed bytes.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Self {
        let mut words = vec![0u64; words_for(len)];
        for (i, chunk) in bytes.chunks(8).enumerate().take(words.len()) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            words[i] = u64::from_le_bytes(buf);
        }
        Self::from_words(words, len)
    }

    /// LSB-first packed bytes, `ceil(len / 8)` of them.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.len.div_ceil(8));
        out
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut block = Self::new();
        bits.into_iter().for_each(|b| block.push(b));
        block
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn push(&mut self, value: bool) {
        if self.len & 63 == 0 {
            self.words.push(0);
        }
        if value {
            self.words[self.len >> 6] |= 1u64 << (self.len & 63);
        }
        self.len += 1;
    }

    /// Appends all bits of `other`.
    pub fn extend_from(&mut self, other: &BitBlock) {
        let shift = self.len & 63;
        if shift == 0 {
            self.words.truncate(words_for(self.len));
            self.words.extend_from_slice(&other.words);
        } else {
            for &w in &other.words {
                *self.words.last_mut().expect("non-empty when shift > 0") |= w << shift;
                self.words.push(w >> (64 - shift));
            }
        }
        self.len += other.len;
        self.words.truncate(words_for(self.len));
    }

    /// Copies bits `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> BitBlock {
        assert!(start + len <= self.len, "slice out of range");
        let first = start >> 6;
        let shift = start & 63;
        let n = words_for(len);
        let words = (0..n)
            .map(|k| {
                let lo = self.words.get(first + k).copied().unwrap_or(0);
                if shift == 0 {
                    lo
                } else {
                    let hi = self.words.get(first + k + 1).copied().unwrap_or(0);
                    (lo >> shift) | (hi << (64 - shift))
                }
            })
            .collect();
        Self::from_words(words, len)
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// Bitwise XOR of two equal-length blocks.
    pub fn xor(&self, other: &BitBlock) -> BitBlock {
        assert_eq!(self.len, other.len, "xor of blocks with different lengths");
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect();
        Self { words, len: self.len }
    }

    /// Global bit flip.
    pub fn not(&self) -> BitBlock {
        let words = self.words.iter().map(|w| !w).collect();
        Self::from_words(words, self.len)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| (self.words[i >> 6] >> (i & 63)) & 1 == 1)
    }

    fn clear_tail(&mut self) {
        let rem = self.len & 63;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl fmt::Debug for BitBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 64;
        write!(f, "BitBlock({} bits: ", self.len)?;
        for b in self.iter().take(SHOWN) {
            f.write_str(if b { "1" } else { "0" })?;
        }
        if self.len > SHOWN {
            f.write_str("...")?;
        }
        f.write_str(")")
    }
}

impl FromIterator<bool> for BitBlock {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self::from_bools(iter)
    }
}

/// A supply of uniformly random input-seed bits that counts what it hands out.
pub trait SeedSource {
    fn next_bit(&mut self) -> Option<bool>;

    /// Bits handed out so far.
    fn consumed(&self) -> u64;

    fn take_bits(&mut self, n: usize) -> Option<BitBlock> {
        let mut out = BitBlock::with_capacity(n);
        for _ in 0..n {
            out.push(self.next_bit()?);
        }
        Some(out)
    }
}

/// Finite seed read front to back from a [`BitBlock`].
#[derive(Debug, Clone)]
pub struct BitReader {
    bits: BitBlock,
    pos: usize,
}

impl BitReader {
    pub fn new(bits: BitBlock) -> Self {
        Self { bits, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bits.len() - self.pos
    }
}

impl SeedSource for BitReader {
    fn next_bit(&mut self) -> Option<bool> {
        if self.pos < self.bits.len() {
            self.pos += 1;
            Some(self.bits.get(self.pos - 1))
        } else {
            None
        }
    }

    fn consumed(&self) -> u64 {
        self.pos as u64
    }

    fn take_bits(&mut self, n: usize) -> Option<BitBlock> {
        if n > self.remaining() {
            self.pos = self.bits.len();
            return None;
        }
        let out = self.bits.slice(self.pos, n);
        self.pos += n;
        Some(out)
    }
}

/// Unbounded seed drawn from an RNG standing in for the true input seed.
#[derive(Debug, Clone)]
pub struct RngSeedSource<R> {
    rng: R,
    buf: u64,
    buffered: u32,
    consumed: u64,
}

impl<R: RngCore> RngSeedSource<R> {
    pub fn new(rng: R) -> Self {
        Self {
            rng,
            buf: 0,
            buffered: 0,
            consumed: 0,
        }
    }
}

impl<R: RngCore> SeedSource for RngSeedSource<R> {
    fn next_bit(&mut self) -> Option<bool> {
        if self.buffered == 0 {
            self.buf = self.rng.next_u64();
            self.buffered = 64;
        }
        let bit = self.buf & 1 == 1;
        self.buf >>= 1;
        self.buffered -= 1;
        self.consumed += 1;
        Some(bit)
    }

    fn consumed(&self) -> u64 {
        self.consumed
    }

    fn take_bits(&mut self, n: usize) -> Option<BitBlock> {
        // Word-at-a-time; the single-bit buffer is drained first so the
        // stream is identical to repeated `next_bit` calls.
        let mut out = BitBlock::with_capacity(n);
        while out.len() < n && self.buffered > 0 {
            out.push(self.next_bit()?);
        }
        let whole = (n - out.len()) / 64;
        if whole > 0 {
            let words: Vec<u64> = (0..whole).map(|_| self.rng.next_u64()).collect();
            out.extend_from(&BitBlock::from_words(words, whole * 64));
            self.consumed += whole as u64 * 64;
        }
        while out.len() < n {
            out.push(self.next_bit()?);
        }
        Some(out)
    }
}
