use std::fmt;

use crate::error::{Error, Result};

/// A fixed-length binary descriptor. Dexel `j` lives in bit `j % 64` of word
/// `j / 64`; bits past `len` are always zero.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryDescriptor {
    words: Vec<u64>,
    len: usize,
}

impl BinaryDescriptor {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for bit in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if bit {
                words[len / 64] |= 1 << (len % 64);
            }
            len += 1;
        }
        Self { words, len }
    }

    /// Bit `j` of the descriptor is bit `j % 8` of byte `j / 8`.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Dimension {
                expected: len.div_ceil(8),
                actual: bytes.len(),
            });
        }
        let mut words = vec![0u64; len.div_ceil(64)];
        for (i, &b) in bytes.iter().enumerate() {
            words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        let d = Self { words, len };
        if !d.padding_is_clear() {
            return Err(Error::Config(format!(
                "descriptor has bits set beyond length {len}"
            )));
        }
        Ok(d)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        (0..self.len.div_ceil(8))
            .map(|i| (self.words[i / 8] >> (8 * (i % 8))) as u8)
            .collect()
    }

    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::Config(format!("bad hex descriptor: {e}")))?;
        Self::from_bytes(&bytes, len)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
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
    pub fn get(&self, j: usize) -> bool {
        debug_assert!(j < self.len);
        (self.words[j / 64] >> (j % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, j: usize, bit: bool) {
        assert!(j < self.len, "dexel {j} out of range {}", self.len);
        let mask = 1u64 << (j % 64);
        if bit {
            self.words[j / 64] |= mask;
        } else {
            self.words[j / 64] &= !mask;
        }
    }

    pub fn flip(&mut self, j: usize) {
        let b = self.get(j);
        self.set(j, !b);
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |j| self.get(j))
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Hamming distance. Panics on length mismatch.
    #[inline]
    pub fn hamming(&self, other: &Self) -> u32 {
        assert_eq!(self.len, other.len, "descriptor length mismatch");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    pub fn xor(&self, other: &Self) -> Self {
        assert_eq!(self.len, other.len, "descriptor length mismatch");
        Self {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
            len: self.len,
        }
    }

    /// Gathers dexels in the given order: output bit `k` is input bit `order[k]`.
    pub fn gather(&self, order: &[usize]) -> Self {
        Self::from_bits(order.iter().map(|&j| self.get(j)))
    }

    fn padding_is_clear(&self) -> bool {
        match self.len % 64 {
            0 => true,
            r => self.words.last().is_none_or(|w| w >> r == 0),
        }
    }
}

impl fmt::Debug for BinaryDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryDescriptor({}b:{})", self.len, self.to_hex())
    }
}
