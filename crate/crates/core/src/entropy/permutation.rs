use super::stats::DexelStats;
use super::table::BitModel;
use super::{RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};
use crate::feature::BinaryDescriptor;

/// Entropies closer than this are treated as equal; the lower index wins.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn entropy(p0: f64, p1: f64) -> f64 {
    let h = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    h(p0) + h(p1)
}

/// Empirical entropy of dexel `j`.
pub fn marginal_entropy(stats: &DexelStats, j: usize) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let [c0, c1] = stats.marginal_counts(j);
    let n = stats.sample_count() as f64;
    Ok(entropy(c0 as f64 / n, c1 as f64 / n))
}

/// Empirical H(dexel j1 | dexel j2) in bits, from the joint counts.
pub fn conditional_entropy(stats: &DexelStats, j1: usize, j2: usize) -> Result<f64> {
    if j1 == j2 || j1 >= stats.len() || j2 >= stats.len() {
        return Err(Error::InvalidPair(j1, j2));
    }
    if stats.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let n = stats.sample_count() as f64;
    let joint = stats.pair_counts(j1, j2);
    let mut h = 0.0;
    for y in 0..2 {
        let cy = (joint[0][y] + joint[1][y]) as f64;
        for row in &joint {
            let cxy = row[y] as f64;
            if cxy > 0.0 {
                h += cxy / n * (cy / cxy).log2();
            }
        }
    }
    Ok(h)
}

/// Coding order for the dexels of a descriptor together with the
/// first-order Markov models used to entropy code them in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingPermutation {
    order: Vec<usize>,
    first: BitModel,
    /// `transitions[k - 1][prev]` models position `k` given the bit at `k - 1`.
    transitions: Vec<[BitModel; 2]>,
}

fn argmin(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, h) in values {
        match best {
            Some((_, bh)) if h >= bh - TIE_TOLERANCE => {}
            _ => best = Some((j, h)),
        }
    }
    best.map(|(j, _)| j)
}

/// Greedy minimum-conditional-entropy ordering: start at the lowest-entropy
/// dexel, then repeatedly append the unused dexel with the lowest entropy
/// given the last one appended.
pub fn learn_permutation(stats: &DexelStats) -> Result<CodingPermutation> {
    let p = stats.len();
    if stats.is_empty() || p == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let marginals: Vec<f64> = (0..p).map(|j| marginal_entropy(stats, j)).collect::<Result<_>>()?;
    let mut used = vec![false; p];
    let mut order = Vec::with_capacity(p);
    let mut current = argmin(marginals.iter().copied().enumerate()).expect("p > 0");
    used[current] = true;
    order.push(current);
    while order.len() < p {
        let prev = current;
        let candidates = (0..p)
            .filter(|&j| !used[j])
            .map(|j| (j, conditional_entropy(stats, j, prev).expect("distinct dexels")));
        current = argmin(candidates).expect("unused dexel remains");
        used[current] = true;
        order.push(current);
    }
    CodingPermutation::from_order(stats, order)
}

impl CodingPermutation {
    /// Builds the smoothed models for a given order.
    pub fn from_order(stats: &DexelStats, order: Vec<usize>) -> Result<Self> {
        validate_order(&order, stats.len())?;
        let [c0, c1] = stats.marginal_counts(order[0]);
        let first = BitModel::from_counts(c0, c1);
        let transitions = order
            .windows(2)
            .map(|w| {
                // joint[x][y]: x = current dexel, y = previous dexel.
                let joint = stats.pair_counts(w[1], w[0]);
                [0, 1].map(|y| BitModel::from_counts(joint[0][y], joint[1][y]))
            })
            .collect();
        Ok(Self {
            order,
            first,
            transitions,
        })
    }

    pub fn from_parts(order: Vec<usize>, first: BitModel, transitions: Vec<[BitModel; 2]>) -> Result<Self> {
        validate_order(&order, order.len())?;
        if transitions.len() + 1 != order.len() {
            return Err(Error::Config("transition count must be one less than order length".into()));
        }
        Ok(Self {
            order,
            first,
            transitions,
        })
    }

    /// Identity order with fair models.
    pub fn identity(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            first: BitModel::FAIR,
            transitions: vec![[BitModel::FAIR; 2]; len.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn first(&self) -> BitModel {
        self.first
    }

    pub fn transitions(&self) -> &[[BitModel; 2]] {
        &self.transitions
    }

    fn model(&self, k: usize, prev: bool) -> BitModel {
        if k == 0 {
            self.first
        } else {
            self.transitions[k - 1][prev as usize]
        }
    }

    fn check_len(&self, d: &BinaryDescriptor) -> Result<()> {
        if d.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                actual: d.len(),
            });
        }
        Ok(())
    }

    /// Modeled code length of `d` in bits.
    pub fn cost(&self, d: &BinaryDescriptor) -> Result<f64> {
        self.check_len(d)?;
        let mut prev = false;
        let mut bits = 0.0;
        for (k, &j) in self.order.iter().enumerate() {
            let b = d.get(j);
            bits += self.model(k, prev).cost(b);
            prev = b;
        }
        Ok(bits)
    }

    pub fn encode(&self, d: &BinaryDescriptor, enc: &mut RangeEncoder) -> Result<()> {
        self.check_len(d)?;
        let mut prev = false;
        for (k, &j) in self.order.iter().enumerate() {
            let b = d.get(j);
            enc.encode_bit(self.model(k, prev), b);
            prev = b;
        }
        Ok(())
    }

    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<BinaryDescriptor> {
        let mut d = BinaryDescriptor::zeros(self.len());
        let mut prev = false;
        for (k, &j) in self.order.iter().enumerate() {
            let b = dec.decode_bit(self.model(k, prev))?;
            d.set(j, b);
            prev = b;
        }
        Ok(d)
    }

    /// First-order bound: H(first) + sum of H(order[k] | order[k-1]) under the
    /// empirical statistics.
    pub fn bound_bits(&self, stats: &DexelStats) -> Result<f64> {
        let mut total = marginal_entropy(stats, self.order[0])?;
        for w in self.order.windows(2) {
            total += conditional_entropy(stats, w[1], w[0])?;
        }
        Ok(total)
    }
}

/// Sum of the empirical marginal entropies of all dexels.
pub fn marginal_entropy_sum(stats: &DexelStats) -> Result<f64> {
    (0..stats.len()).map(|j| marginal_entropy(stats, j)).sum()
}

fn validate_order(order: &[usize], p: usize) -> Result<()> {
    let mut seen = vec![false; p];
    if order.len() != p || order.is_empty() {
        return Err(Error::Config(format!("order has {} entries, expected {p}", order.len())));
    }
    for &j in order {
        if j >= p || seen[j] {
            return Err(Error::Config(format!("order is not a permutation (entry {j})")));
        }
        seen[j] = true;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(rows: &[&[u8]]) -> DexelStats {
        let ds: Vec<_> = rows
            .iter()
            .map(|r| BinaryDescriptor::from_bits(r.iter().map(|&b| b == 1)))
            .collect();
        DexelStats::estimate(&ds).unwrap()
    }

    fn all_patterns(p: usize) -> DexelStats {
        let ds: Vec<_> = (0..1u32 << p)
            .map(|v| BinaryDescriptor::from_bits((0..p).map(|j| (v >> j) & 1 == 1)))
            .collect();
        DexelStats::estimate(&ds).unwrap()
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(0.5, 0.5), 1.0);
        assert_eq!(entropy(1.0, 0.0), 0.0);
        assert!((entropy(0.9, 0.1) - 0.4690).abs() < 1e-4);
    }

    #[test]
    fn conditional_entropy_cases() {
        let copy = stats(&[&[0, 0], &[1, 1], &[1, 1], &[0, 0], &[1, 1]]);
        assert!(conditional_entropy(&copy, 0, 1).unwrap().abs() < 1e-9);
        let uniform = stats(&[&[0, 0], &[0, 1], &[1, 0], &[1, 1]]);
        assert_eq!(conditional_entropy(&uniform, 0, 1).unwrap(), 1.0);
        assert!(matches!(conditional_entropy(&uniform, 1, 1), Err(Error::InvalidPair(1, 1))));
    }

    #[test]
    fn fair_iid_dexels_keep_identity_order() {
        let s = all_patterns(6);
        let perm = learn_permutation(&s).unwrap();
        assert_eq!(perm.order(), &[0, 1, 2, 3, 4, 5]);
        assert!((perm.bound_bits(&s).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_dexel_goes_first() {
        // Dexel 2 constant; dexels 0 and 1 fair and always equal.
        let s = stats(&[&[0, 0, 1], &[1, 1, 1], &[0, 0, 1], &[1, 1, 1]]);
        let perm = learn_permutation(&s).unwrap();
        assert_eq!(perm.order(), &[2, 0, 1]);
        assert_eq!(conditional_entropy(&s, 0, 2).unwrap(), 1.0);
        assert_eq!(conditional_entropy(&s, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn descriptor_coding_round_trip() {
        let s = stats(&[&[0, 1, 1, 0], &[1, 1, 0, 0], &[0, 0, 1, 1]]);
        let perm = learn_permutation(&s).unwrap();
        let d = BinaryDescriptor::from_bits([true, false, true, true]);
        let mut enc = RangeEncoder::new();
        perm.encode(&d, &mut enc).unwrap();
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        assert_eq!(perm.decode(&mut dec).unwrap(), d);
    }

    #[test]
    fn rejects_bad_orders() {
        let s = all_patterns(3);
        assert!(CodingPermutation::from_order(&s, vec![0, 0, 1]).is_err());
        assert!(CodingPermutation::from_order(&s, vec![0, 1]).is_err());
    }
}
