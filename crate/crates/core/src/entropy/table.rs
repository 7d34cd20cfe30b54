//! Static probability tables in 16-bit fixed point. The quantized
//! frequencies are the normative model for both encoder and decoder.

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
/// Sum of the frequencies of every table.
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

/// Binary model: `freq0 / PROB_TOTAL` is the probability of a zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitModel {
    freq0: u32,
}

impl BitModel {
    pub const FAIR: BitModel = BitModel {
        freq0: PROB_TOTAL / 2,
    };

    pub fn from_freq0(freq0: u32) -> Result<Self> {
        if freq0 == 0 || freq0 >= PROB_TOTAL {
            return Err(Error::Config(format!("bit frequency {freq0} outside 1..{PROB_TOTAL}")));
        }
        Ok(Self { freq0 })
    }

    pub fn from_probability(p0: f64) -> Result<Self> {
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(Error::Config(format!("bit probability {p0} outside (0, 1)")));
        }
        let f = (p0 * PROB_TOTAL as f64).round() as u32;
        Ok(Self {
            freq0: f.clamp(1, PROB_TOTAL - 1),
        })
    }

    /// Laplace add-one estimate from counts.
    pub fn from_counts(zeros: u64, ones: u64) -> Self {
        let p0 = (zeros as f64 + 1.0) / ((zeros + ones) as f64 + 2.0);
        Self::from_probability(p0).expect("smoothed probability is interior")
    }

    pub fn freq0(&self) -> u32 {
        self.freq0
    }

    pub fn probability(&self, bit: bool) -> f64 {
        let f = if bit { PROB_TOTAL - self.freq0 } else { self.freq0 };
        f as f64 / PROB_TOTAL as f64
    }

    /// Ideal code length of `bit` under the quantized model.
    pub fn cost(&self, bit: bool) -> f64 {
        -self.probability(bit).log2()
    }
}

/// Multi-symbol model over the alphabet `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    /// `cum[s]..cum[s + 1]` is the slot of symbol `s`; `cum[len] == PROB_TOTAL`.
    cum: Vec<u32>,
}

impl FrequencyTable {
    pub fn uniform(alphabet: usize) -> Result<Self> {
        Self::from_probabilities(&vec![1.0 / alphabet as f64; alphabet])
    }

    /// Quantizes a distribution. Entries must be positive and sum to one
    /// within 1e-9.
    pub fn from_probabilities(probs: &[f64]) -> Result<Self> {
        let a = probs.len();
        if a < 2 || a > PROB_TOTAL as usize / 2 {
            return Err(Error::Config(format!("alphabet size {a} unsupported")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || probs.iter().any(|p| p.is_nan() || *p <= 0.0) {
            return Err(Error::Config(format!(
                "probabilities must be positive and sum to 1 (sum = {sum})"
            )));
        }
        let mut freqs: Vec<u32> = probs
            .iter()
            .map(|p| ((p * PROB_TOTAL as f64).round() as u32).max(1))
            .collect();
        let mut total: i64 = freqs.iter().map(|&f| f as i64).sum();
        while total != PROB_TOTAL as i64 {
            // Adjust the largest entry (lowest index on ties) one step at a time.
            let (i, _) = freqs
                .iter()
                .enumerate()
                .filter(|(_, &f)| total < PROB_TOTAL as i64 || f > 1)
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("some entry can move");
            let step = (PROB_TOTAL as i64 - total).clamp(-(freqs[i] as i64 - 1), i64::MAX);
            freqs[i] = (freqs[i] as i64 + step) as u32;
            total += step;
        }
        Ok(Self::from_freqs_unchecked(&freqs))
    }

    /// Laplace add-one estimate from symbol counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        let denom = n as f64 + counts.len() as f64;
        let probs: Vec<f64> = counts.iter().map(|&c| (c as f64 + 1.0) / denom).collect();
        // Renormalize away float drift before quantizing.
        let s: f64 = probs.iter().sum();
        Self::from_probabilities(&probs.iter().map(|p| p / s).collect::<Vec<_>>())
    }

    pub fn from_freqs(freqs: &[u32]) -> Result<Self> {
        let total: u64 = freqs.iter().map(|&f| f as u64).sum();
        if freqs.len() < 2 || total != PROB_TOTAL as u64 || freqs.contains(&0) {
            return Err(Error::Config("frequencies must be positive and sum to 2^16".into()));
        }
        Ok(Self::from_freqs_unchecked(freqs))
    }

    fn from_freqs_unchecked(freqs: &[u32]) -> Self {
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        cum.push(0);
        for &f in freqs {
            cum.push(cum.last().unwrap() + f);
        }
        Self { cum }
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn freq(&self, s: usize) -> u32 {
        self.cum[s + 1] - self.cum[s]
    }

    pub fn freqs(&self) -> Vec<u32> {
        (0..self.len()).map(|s| self.freq(s)).collect()
    }

    pub(crate) fn cum(&self, s: usize) -> u32 {
        self.cum[s]
    }

    /// Symbol whose slot contains `value`, for `value < PROB_TOTAL`.
    pub(crate) fn lookup(&self, value: u32) -> usize {
        self.cum.partition_point(|&c| c <= value) - 1
    }

    pub fn probability(&self, s: usize) -> f64 {
        self.freq(s) as f64 / PROB_TOTAL as f64
    }

    pub fn cost(&self, s: usize) -> f64 {
        -self.probability(s).log2()
    }

    pub fn check(&self, s: usize) -> Result<()> {
        if s >= self.len() {
            return Err(Error::Symbol {
                symbol: s,
                alphabet: self.len(),
            });
        }
        Ok(())
    }
}

/// One table per context symbol; row `c` models the next symbol given the
/// previous one was `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionalTable {
    rows: Vec<FrequencyTable>,
}

impl ConditionalTable {
    pub fn new(rows: Vec<FrequencyTable>) -> Result<Self> {
        let a = rows.len();
        if a < 2 || rows.iter().any(|r| r.len() != a) {
            return Err(Error::Config("conditional table must be square".into()));
        }
        Ok(Self { rows })
    }

    /// Laplace add-one estimate from `counts[context][symbol]`.
    pub fn from_counts(counts: &[Vec<u64>]) -> Result<Self> {
        Self::new(counts.iter().map(|r| FrequencyTable::from_counts(r)).collect::<Result<_>>()?)
    }

    pub fn alphabet(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, context: usize) -> &FrequencyTable {
        &self.rows[context]
    }

    pub fn rows(&self) -> &[FrequencyTable] {
        &self.rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_tables_sum_to_total() {
        for probs in [
            vec![0.5, 0.5],
            vec![0.999_99, 0.000_01],
            vec![0.1; 10],
            vec![1.0 / 3.0; 3],
        ] {
            let s: f64 = probs.iter().sum();
            let t = FrequencyTable::from_probabilities(&probs.iter().map(|p| p / s).collect::<Vec<_>>()).unwrap();
            assert_eq!(t.freqs().iter().sum::<u32>(), PROB_TOTAL);
            assert!(t.freqs().iter().all(|&f| f >= 1));
        }
    }

    #[test]
    fn laplace_smoothing() {
        let t = FrequencyTable::from_counts(&[0, 2]).unwrap();
        assert!((t.probability(0) - 0.25).abs() < 1e-4);
        let b = BitModel::from_counts(100, 0);
        assert!((b.probability(false) - 101.0 / 102.0).abs() < 1e-4);
    }

    #[test]
    fn lookup_finds_slot() {
        let t = FrequencyTable::from_freqs(&[1, PROB_TOTAL - 3, 2]).unwrap();
        assert_eq!(t.lookup(0), 0);
        assert_eq!(t.lookup(1), 1);
        assert_eq!(t.lookup(PROB_TOTAL - 3), 1);
        assert_eq!(t.lookup(PROB_TOTAL - 2), 2);
        assert_eq!(t.lookup(PROB_TOTAL - 1), 2);
    }

    #[test]
    fn rejects_invalid_distributions() {
        assert!(FrequencyTable::from_probabilities(&[0.5, 0.6]).is_err());
        assert!(FrequencyTable::from_probabilities(&[1.0, 0.0]).is_err());
        assert!(FrequencyTable::from_freqs(&[PROB_TOTAL]).is_err());
        assert!(BitModel::from_freq0(0).is_err());
    }
}
