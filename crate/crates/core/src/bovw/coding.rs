//! Entropy coding of quantized global descriptors.
//!
//! ```text
//! "BGE1" | u16 version | u32 V | f64 delta | u8 mode (0 intra, 1 inter) | 3 x u8 0
//!        | 32-byte codebook digest | u32 frame_count
//! chunk  : u32 payload_len | payload
//! ```
//!
//! In inter mode the first frame is coded intra and every later frame under
//! the context of the previous decoded frame.

use super::{alphabet_for, check_delta, quantize_global, GlobalDescriptor, QuantizedGlobal};
use crate::codebook::{Codebook, Section};
use crate::entropy::{ConditionalTable, FrequencyTable, RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};
use crate::io::ByteReader;

pub const GLOBAL_MAGIC: &[u8; 4] = b"BGE1";
const VERSION: u16 = 1;

/// Memoryless model of quantization indices, shared by all V words.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraBovwCodebook {
    pub words: usize,
    pub delta: f64,
    pub table: FrequencyTable,
}

/// Index model conditioned on the same word's index in the previous frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InterBovwCodebook {
    pub words: usize,
    pub delta: f64,
    pub table: ConditionalTable,
}

fn check_shape(q: &QuantizedGlobal, words: usize, delta: f64) -> Result<()> {
    if q.indices.len() != words {
        return Err(Error::Dimension {
            expected: words,
            actual: q.indices.len(),
        });
    }
    if q.delta != delta {
        return Err(Error::Config(format!("descriptor quantized with step {}, codebook uses {delta}", q.delta)));
    }
    Ok(())
}

impl IntraBovwCodebook {
    pub fn cost(&self, q: &QuantizedGlobal) -> Result<f64> {
        check_shape(q, self.words, self.delta)?;
        q.indices.iter().map(|&i| {
            self.table.check(i as usize)?;
            Ok(self.table.cost(i as usize))
        }).sum()
    }

    pub fn encode(&self, q: &QuantizedGlobal, enc: &mut RangeEncoder) -> Result<()> {
        check_shape(q, self.words, self.delta)?;
        q.indices.iter().try_for_each(|&i| enc.encode(&self.table, i as usize))
    }

    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<QuantizedGlobal> {
        let indices = (0..self.words)
            .map(|_| dec.decode(&self.table).map(|s| s as u32))
            .collect::<Result<_>>()?;
        Ok(QuantizedGlobal {
            indices,
            delta: self.delta,
        })
    }
}

impl InterBovwCodebook {
    pub fn cost(&self, q: &QuantizedGlobal, previous: &QuantizedGlobal) -> Result<f64> {
        check_shape(q, self.words, self.delta)?;
        check_shape(previous, self.words, self.delta)?;
        q.indices
            .iter()
            .zip(&previous.indices)
            .map(|(&i, &c)| {
                let row = self.row(c)?;
                row.check(i as usize)?;
                Ok(row.cost(i as usize))
            })
            .sum()
    }

    fn row(&self, context: u32) -> Result<&FrequencyTable> {
        if context as usize >= self.table.alphabet() {
            return Err(Error::Symbol {
                symbol: context as usize,
                alphabet: self.table.alphabet(),
            });
        }
        Ok(self.table.row(context as usize))
    }

    pub fn encode(&self, q: &QuantizedGlobal, previous: &QuantizedGlobal, enc: &mut RangeEncoder) -> Result<()> {
        check_shape(q, self.words, self.delta)?;
        check_shape(previous, self.words, self.delta)?;
        q.indices
            .iter()
            .zip(&previous.indices)
            .try_for_each(|(&i, &c)| enc.encode(self.row(c)?, i as usize))
    }

    pub fn decode(&self, previous: &QuantizedGlobal, dec: &mut RangeDecoder<'_>) -> Result<QuantizedGlobal> {
        check_shape(previous, self.words, self.delta)?;
        let indices = previous
            .indices
            .iter()
            .map(|&c| dec.decode(self.row(c)?).map(|s| s as u32))
            .collect::<Result<_>>()?;
        Ok(QuantizedGlobal {
            indices,
            delta: self.delta,
        })
    }
}

/// Trains both models on sequences of global descriptors (one sequence per
/// video). Probabilities use add-one smoothing over the index alphabet.
pub fn train_bovw_codebooks(sequences: &[Vec<GlobalDescriptor>], delta: f64) -> Result<(IntraBovwCodebook, InterBovwCodebook)> {
    check_delta(delta)?;
    let words = sequences
        .iter()
        .flatten()
        .next()
        .map(|g| g.len())
        .ok_or(Error::EmptyTrainingSet)?;
    let a = alphabet_for(delta);
    let mut intra = vec![0u64; a];
    let mut inter = vec![vec![0u64; a]; a];
    for seq in sequences {
        let quantized = seq.iter().map(|g| quantize_global(g, delta)).collect::<Result<Vec<_>>>()?;
        for q in &quantized {
            if q.indices.len() != words {
                return Err(Error::Dimension {
                    expected: words,
                    actual: q.indices.len(),
                });
            }
            for &i in &q.indices {
                let slot = intra.get_mut(i as usize).ok_or(Error::Symbol {
                    symbol: i as usize,
                    alphabet: a,
                })?;
                *slot += 1;
            }
        }
        for pair in quantized.windows(2) {
            for (&c, &i) in pair[0].indices.iter().zip(&pair[1].indices) {
                inter[c as usize][i as usize] += 1;
            }
        }
    }
    Ok((
        IntraBovwCodebook {
            words,
            delta,
            table: FrequencyTable::from_counts(&intra)?,
        },
        InterBovwCodebook {
            words,
            delta,
            table: ConditionalTable::from_counts(&inter)?,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalStreamRate {
    /// Payload bits per coded frame.
    pub frame_bits: Vec<u64>,
    pub header_bytes: u64,
    pub total_bytes: u64,
}

impl GlobalStreamRate {
    /// Mean payload bytes per coded frame.
    pub fn bytes_per_query(&self) -> f64 {
        self.frame_bits.iter().sum::<u64>() as f64 / 8.0 / self.frame_bits.len().max(1) as f64
    }
}

fn digest(intra: &IntraBovwCodebook, inter: Option<&InterBovwCodebook>) -> [u8; 32] {
    let mut sections = vec![Section::IntraBovw(intra.clone())];
    sections.extend(inter.map(|c| Section::InterBovw(c.clone())));
    Codebook::new(sections).digest()
}

/// Codes a sequence of quantized descriptors; `inter` selects inter mode.
pub fn encode_global_stream(
    frames: &[QuantizedGlobal],
    intra: &IntraBovwCodebook,
    inter: Option<&InterBovwCodebook>,
) -> Result<(Vec<u8>, GlobalStreamRate)> {
    if let Some(c) = inter {
        if c.words != intra.words || c.delta != intra.delta {
            return Err(Error::Config("intra and inter BoVW codebooks disagree on V or delta".into()));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(GLOBAL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(intra.words as u32).to_le_bytes());
    out.extend_from_slice(&intra.delta.to_le_bytes());
    out.extend_from_slice(&[inter.is_some() as u8, 0, 0, 0]);
    out.extend_from_slice(&digest(intra, inter));
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    let header_bytes = out.len() as u64;
    let mut frame_bits = Vec::with_capacity(frames.len());
    for (n, q) in frames.iter().enumerate() {
        let mut enc = RangeEncoder::new();
        match (inter, n) {
            (Some(c), n) if n > 0 => c.encode(q, &frames[n - 1], &mut enc)?,
            _ => intra.encode(q, &mut enc)?,
        }
        let payload = enc.finish();
        frame_bits.push(8 * payload.len() as u64);
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    let total_bytes = out.len() as u64;
    Ok((
        out,
        GlobalStreamRate {
            frame_bits,
            header_bytes,
            total_bytes,
        },
    ))
}

pub fn decode_global_stream(
    bytes: &[u8],
    intra: &IntraBovwCodebook,
    inter: Option<&InterBovwCodebook>,
) -> Result<Vec<QuantizedGlobal>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(GLOBAL_MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let words = r.u32()? as usize;
    let delta = r.f64()?;
    let at = r.offset();
    let mode = r.take(4)?[0];
    let inter = match mode {
        0 => None,
        1 => Some(inter.ok_or_else(|| Error::Stream("inter-coded stream needs the inter codebook".into()))?),
        m => return Err(Error::format(at, format!("unknown mode {m}"))),
    };
    if words != intra.words || delta != intra.delta {
        return Err(Error::Stream(format!(
            "stream has V = {words}, delta = {delta}; codebook has V = {}, delta = {}",
            intra.words, intra.delta
        )));
    }
    let expect = digest(intra, inter);
    if r.take(32)? != expect {
        return Err(Error::Stream("codebook digest mismatch".into()));
    }
    let count = r.u32()?;
    let mut frames: Vec<QuantizedGlobal> = Vec::new();
    for n in 0..count as usize {
        let len = r.u32()? as usize;
        let payload = r.take(len)?;
        let mut dec = RangeDecoder::new(payload)?;
        let q = match (inter, frames.last()) {
            (Some(c), Some(prev)) if n > 0 => c.decode(prev, &mut dec)?,
            _ => intra.decode(&mut dec)?,
        };
        dec.finish()?;
        frames.push(q);
    }
    r.finish()?;
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::PROB_TOTAL;

    fn q(indices: Vec<u32>, delta: f64) -> QuantizedGlobal {
        QuantizedGlobal { indices, delta }
    }

    fn codebooks(words: usize, p0: f64, stay: f64) -> (IntraBovwCodebook, InterBovwCodebook) {
        let a = alphabet_for(0.1);
        let spread = |keep: usize, p: f64| {
            let rest = (1.0 - p) / (a - 1) as f64;
            (0..a).map(|s| if s == keep { p } else { rest }).collect::<Vec<_>>()
        };
        let intra = FrequencyTable::from_probabilities(&spread(0, p0)).unwrap();
        let rows = (0..a).map(|c| FrequencyTable::from_probabilities(&spread(c, stay)).unwrap()).collect();
        (
            IntraBovwCodebook { words, delta: 0.1, table: intra },
            InterBovwCodebook {
                words,
                delta: 0.1,
                table: ConditionalTable::new(rows).unwrap(),
            },
        )
    }

    #[test]
    fn all_zero_intra_rate_bound() {
        let (intra, _) = codebooks(256, 0.97, 0.9);
        let p0 = intra.table.freq(0) as f64 / PROB_TOTAL as f64;
        let zeros = q(vec![0; 256], 0.1);
        let mut enc = RangeEncoder::new();
        intra.encode(&zeros, &mut enc).unwrap();
        let bytes = enc.finish();
        let ideal = -256.0 * p0.log2();
        assert!((bytes.len() * 8) as f64 <= ideal + 64.0);
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        assert_eq!(intra.decode(&mut dec).unwrap(), zeros);
    }

    #[test]
    fn inter_cheaper_on_repeats() {
        let (intra, inter) = codebooks(64, 0.5, 0.95);
        let a = q((0..64).map(|j| (j % 7) as u32).collect(), 0.1);
        assert!(inter.cost(&a, &a).unwrap() < intra.cost(&a).unwrap());
        let frames = vec![a.clone(), a.clone(), q(vec![0; 64], 0.1)];
        let (bytes_i, rate_i) = encode_global_stream(&frames, &intra, None).unwrap();
        let (bytes_p, rate_p) = encode_global_stream(&frames, &intra, Some(&inter)).unwrap();
        assert!(rate_p.frame_bits[1] < rate_i.frame_bits[1]);
        assert_eq!(decode_global_stream(&bytes_i, &intra, None).unwrap(), frames);
        assert_eq!(decode_global_stream(&bytes_p, &intra, Some(&inter)).unwrap(), frames);
        assert!(matches!(decode_global_stream(&bytes_p, &intra, None), Err(Error::Stream(_))));
    }

    #[test]
    fn identical_inputs_identical_bits() {
        let (intra, _) = codebooks(8, 0.8, 0.9);
        let a = q(vec![0, 1, 2, 0, 0, 3, 0, 0], 0.1);
        let (x, _) = encode_global_stream(std::slice::from_ref(&a), &intra, None).unwrap();
        let (y, _) = encode_global_stream(&[a], &intra, None).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn out_of_alphabet_is_symbol_error() {
        let (intra, _) = codebooks(2, 0.8, 0.9);
        let bad = q(vec![0, alphabet_for(0.1) as u32], 0.1);
        assert!(matches!(intra.cost(&bad), Err(Error::Symbol { .. })));
        assert!(matches!(encode_global_stream(&[bad], &intra, None), Err(Error::Symbol { .. })));
    }

    #[test]
    fn training_matches_counts() {
        let g = |v: Vec<f64>| GlobalDescriptor { values: v };
        let seq = vec![g(vec![1.0, 0.0]), g(vec![0.0, 1.0]), g(vec![0.0, 1.0])];
        let (intra, inter) = train_bovw_codebooks(&[seq], 0.5).unwrap();
        assert_eq!(alphabet_for(0.5), 3);
        // Indices: (2, 0), (0, 2), (0, 2) -> counts {0: 3, 2: 3}, add-one -> 4/9, 1/9, 4/9.
        let p = |s| intra.table.probability(s);
        assert!((p(0) - 4.0 / 9.0).abs() < 1e-4 && (p(1) - 1.0 / 9.0).abs() < 1e-4);
        // Transitions 2->0, 0->2, 0->0, 2->2: row 0 counts (1, 0, 1) -> (2, 1, 2)/5.
        let row = inter.table.row(0);
        assert!((row.probability(0) - 0.4).abs() < 1e-4 && (row.probability(1) - 0.2).abs() < 1e-4);
    }
}
