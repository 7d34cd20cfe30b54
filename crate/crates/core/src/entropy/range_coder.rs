//! Byte-oriented range coder with a 32-bit range register and carry
//! propagation through a cached output byte.
//!
//! Symbol slots are mapped onto the current range by exact integer
//! partition: symbol `s` gets `[range * cum(s) / T, range * cum(s+1) / T)`,
//! so no part of the range is wasted to truncation. The encoder's leading
//! byte is always zero and is not emitted; the decoder primes itself with the
//! next four bytes. An encoded sequence therefore costs its information
//! content plus at most 32 bits of flush.

use super::table::{BitModel, FrequencyTable, PROB_BITS, PROB_TOTAL};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    leading: bool,
    shifts: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            leading: true,
            shifts: 0,
            out: Vec::new(),
        }
    }

    /// Information written so far, in bits. Differences of this counter give
    /// the exact share of the final length attributable to each symbol; the
    /// final length equals the last reading plus `flush_bits()`.
    pub fn bits(&self) -> f64 {
        8.0 * self.shifts as f64 + 32.0 - (self.range as f64).log2()
    }

    /// Bits `finish` will add beyond `bits()`.
    pub fn flush_bits(&self) -> f64 {
        (self.range as f64).log2()
    }

    #[inline]
    fn narrow(&mut self, lo: u32, hi: u32) {
        let r = self.range as u64;
        let a = (r * lo as u64) >> PROB_BITS;
        let b = (r * hi as u64) >> PROB_BITS;
        self.low += a;
        self.range = (b - a) as u32;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                if self.leading {
                    debug_assert_eq!(byte.wrapping_add(carry), 0);
                    self.leading = false;
                } else {
                    self.out.push(byte.wrapping_add(carry));
                }
                byte = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
        self.shifts += 1;
    }

    pub fn encode(&mut self, table: &FrequencyTable, symbol: usize) -> Result<()> {
        table.check(symbol)?;
        self.narrow(table.cum(symbol), table.cum(symbol + 1));
        Ok(())
    }

    pub fn encode_bit(&mut self, model: BitModel, bit: bool) {
        if bit {
            self.narrow(model.freq0(), PROB_TOTAL);
        } else {
            self.narrow(0, model.freq0());
        }
    }

    /// Writes the low `count` bits of `value`, most significant first, each
    /// with probability one half.
    pub fn encode_direct(&mut self, value: u64, count: u32) {
        for i in (0..count).rev() {
            let half = self.range >> 1;
            if (value >> i) & 1 == 1 {
                self.low += half as u64;
                self.range -= half;
            } else {
                self.range = half;
            }
            while self.range < TOP {
                self.range <<= 8;
                self.shift_low();
            }
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or(Error::TruncatedBitstream)?;
        self.pos += 1;
        Ok(b)
    }

    fn normalize(&mut self) -> Result<()> {
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    /// Largest `c` in `0..PROB_TOTAL` whose slot start does not exceed the code.
    fn target(&self) -> Result<u32> {
        let v = ((self.code as u64 + 1) * PROB_TOTAL as u64 - 1) / self.range as u64;
        if v >= PROB_TOTAL as u64 {
            return Err(Error::CorruptBitstream("code value outside range".into()));
        }
        Ok(v as u32)
    }

    fn consume(&mut self, lo: u32, hi: u32) -> Result<()> {
        let r = self.range as u64;
        let a = (r * lo as u64) >> PROB_BITS;
        let b = (r * hi as u64) >> PROB_BITS;
        self.code -= a as u32;
        self.range = (b - a) as u32;
        self.normalize()
    }

    pub fn decode(&mut self, table: &FrequencyTable) -> Result<usize> {
        let s = table.lookup(self.target()?);
        self.consume(table.cum(s), table.cum(s + 1))?;
        Ok(s)
    }

    pub fn decode_bit(&mut self, model: BitModel) -> Result<bool> {
        let bit = self.target()? >= model.freq0();
        if bit {
            self.consume(model.freq0(), PROB_TOTAL)?;
        } else {
            self.consume(0, model.freq0())?;
        }
        Ok(bit)
    }

    pub fn decode_direct(&mut self, count: u32) -> Result<u64> {
        let mut value = 0u64;
        for _ in 0..count {
            let half = self.range >> 1;
            let bit = self.code >= half;
            if bit {
                self.code -= half;
                self.range -= half;
            } else {
                self.range = half;
            }
            value = (value << 1) | bit as u64;
            self.normalize()?;
        }
        Ok(value)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Fails unless every input byte has been consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::CorruptBitstream(format!(
                "{} unread bytes after last symbol",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Context rule for sequence coding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SymbolModel {
    /// Every symbol coded with the same table.
    Memoryless(FrequencyTable),
    /// First symbol under `initial`, each later one under the row selected by
    /// its predecessor.
    FirstOrder {
        initial: FrequencyTable,
        transitions: super::ConditionalTable,
    },
}

impl SymbolModel {
    pub fn alphabet(&self) -> usize {
        match self {
            SymbolModel::Memoryless(t) => t.len(),
            SymbolModel::FirstOrder { initial, .. } => initial.len(),
        }
    }

    fn table(&self, prev: Option<usize>) -> &FrequencyTable {
        match (self, prev) {
            (SymbolModel::Memoryless(t), _) => t,
            (SymbolModel::FirstOrder { initial, .. }, None) => initial,
            (SymbolModel::FirstOrder { transitions, .. }, Some(p)) => transitions.row(p),
        }
    }

    /// Ideal code length of the sequence under the quantized model.
    pub fn cost(&self, symbols: &[usize]) -> Result<f64> {
        let mut prev = None;
        let mut bits = 0.0;
        for &s in symbols {
            let t = self.table(prev);
            t.check(s)?;
            bits += t.cost(s);
            prev = Some(s);
        }
        Ok(bits)
    }
}

pub fn range_encode(symbols: &[usize], model: &SymbolModel) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    let mut prev = None;
    for &s in symbols {
        enc.encode(model.table(prev), s)?;
        prev = Some(s);
    }
    Ok(enc.finish())
}

pub fn range_decode(bytes: &[u8], count: usize, model: &SymbolModel) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    let mut prev = None;
    for _ in 0..count {
        let s = dec.decode(model.table(prev))?;
        out.push(s);
        prev = Some(s);
    }
    dec.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::ConditionalTable;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fair() -> SymbolModel {
        SymbolModel::Memoryless(FrequencyTable::uniform(2).unwrap())
    }

    #[test]
    fn empty_sequence_is_flush_only() {
        let bytes = range_encode(&[], &fair()).unwrap();
        assert!(bytes.len() * 8 <= 64);
        assert_eq!(range_decode(&bytes, 0, &fair()).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn fair_bits_cost_one_bit_each() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let s: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let bytes = range_encode(&s, &fair()).unwrap();
        let bits = bytes.len() * 8;
        assert!(bits >= n && bits <= n + 64, "{bits}");
        assert_eq!(range_decode(&bytes, n, &fair()).unwrap(), s);
    }

    #[test]
    fn truncation_detected() {
        let s = vec![1usize; 200];
        let model = SymbolModel::Memoryless(FrequencyTable::from_probabilities(&[0.3, 0.7]).unwrap());
        let bytes = range_encode(&s, &model).unwrap();
        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(range_decode(cut, 200, &model), Err(Error::TruncatedBitstream)));
        assert!(matches!(range_decode(&[], 0, &model), Err(Error::TruncatedBitstream)));
    }

    #[test]
    fn out_of_alphabet_symbol() {
        assert!(matches!(range_encode(&[2], &fair()), Err(Error::Symbol { symbol: 2, alphabet: 2 })));
    }

    #[test]
    fn mixed_symbol_kinds_round_trip() {
        let t = FrequencyTable::from_probabilities(&[0.1, 0.2, 0.7]).unwrap();
        let m = BitModel::from_probability(0.9).unwrap();
        let mut enc = RangeEncoder::new();
        for i in 0..1000u64 {
            enc.encode(&t, (i % 3) as usize).unwrap();
            enc.encode_bit(m, i % 7 == 0);
            enc.encode_direct(i, 10);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for i in 0..1000u64 {
            assert_eq!(dec.decode(&t).unwrap(), (i % 3) as usize);
            assert_eq!(dec.decode_bit(m).unwrap(), i % 7 == 0);
            assert_eq!(dec.decode_direct(10).unwrap(), i % 1024);
        }
        dec.finish().unwrap();
    }

    #[test]
    fn bit_counter_accounts_for_every_byte() {
        let t = FrequencyTable::from_probabilities(&[0.05, 0.15, 0.8]).unwrap();
        let mut enc = RangeEncoder::new();
        for i in 0..5000 {
            enc.encode(&t, (i * 7 % 11 % 3) as usize).unwrap();
        }
        let predicted = enc.bits() + enc.flush_bits();
        let bytes = enc.finish();
        assert!((predicted - 8.0 * bytes.len() as f64).abs() < 1e-6);
    }

    fn arb_model() -> impl Strategy<Value = SymbolModel> {
        (2usize..6).prop_flat_map(|a| {
            let row = prop::collection::vec(1u32..1000, a);
            (row.clone(), prop::collection::vec(row, a), any::<bool>()).prop_map(move |(init, rows, ctx)| {
                let norm = |r: &[u32]| {
                    let s: u32 = r.iter().sum();
                    FrequencyTable::from_probabilities(&r.iter().map(|&x| x as f64 / s as f64).collect::<Vec<_>>()).unwrap()
                };
                if ctx {
                    SymbolModel::FirstOrder {
                        initial: norm(&init),
                        transitions: ConditionalTable::new(rows.iter().map(|r| norm(r)).collect()).unwrap(),
                    }
                } else {
                    SymbolModel::Memoryless(norm(&init))
                }
            })
        })
    }

    proptest! {
        #[test]
        fn round_trip_and_length_bound(model in arb_model(), raw in prop::collection::vec(any::<u8>(), 0..2000)) {
            let a = model.alphabet();
            let s: Vec<usize> = raw.iter().map(|&x| x as usize % a).collect();
            let bytes = range_encode(&s, &model).unwrap();
            prop_assert_eq!(range_decode(&bytes, s.len(), &model).unwrap(), s.clone());
            let ideal = model.cost(&s).unwrap();
            prop_assert!((bytes.len() * 8) as f64 <= ideal + 64.0);
        }
    }
}
