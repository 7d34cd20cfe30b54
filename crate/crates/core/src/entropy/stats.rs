use crate::error::{Error, Result};
use crate::feature::BinaryDescriptor;
use crate::par;

/// Descriptors per parallel counting chunk.
const CHUNK: usize = 4096;

/// Exact first- and second-order dexel counts over a set of descriptors.
///
/// Only the number of ones per dexel and the number of joint ones per pair
/// are stored; every other cell of the 2x2 joint table follows from those and
/// the sample count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DexelStats {
    len: usize,
    samples: u64,
    ones: Vec<u64>,
    /// Row-major `len x len`, symmetric.
    both: Vec<u64>,
}

impl DexelStats {
    pub fn empty(len: usize) -> Self {
        Self {
            len,
            samples: 0,
            ones: vec![0; len],
            both: vec![0; len * len],
        }
    }

    /// Counts over all descriptors; they must share one length.
    pub fn estimate<'a, I>(descriptors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a BinaryDescriptor>,
    {
        let all: Vec<&BinaryDescriptor> = descriptors.into_iter().collect();
        let first = all.first().ok_or(Error::EmptyTrainingSet)?;
        let len = first.len();
        if let Some(bad) = all.iter().find(|d| d.len() != len) {
            return Err(Error::Dimension {
                expected: len,
                actual: bad.len(),
            });
        }
        let stats = par::fold_chunks(&all, CHUNK, |chunk| Self::count(len, chunk), |a, b| {
            a.merge(&b).expect("chunks share a length")
        });
        Ok(stats.expect("non-empty input"))
    }

    fn count(len: usize, chunk: &[&BinaryDescriptor]) -> Self {
        let mut stats = Self::empty(len);
        let mut columns = vec![0u64; len];
        for block in chunk.chunks(64) {
            columns.iter_mut().for_each(|c| *c = 0);
            for (s, d) in block.iter().enumerate() {
                for (w, &word) in d.words().iter().enumerate() {
                    let mut bits = word;
                    while bits != 0 {
                        let j = w * 64 + bits.trailing_zeros() as usize;
                        columns[j] |= 1 << s;
                        bits &= bits - 1;
                    }
                }
            }
            for j1 in 0..len {
                let c1 = columns[j1];
                if c1 == 0 {
                    continue;
                }
                stats.ones[j1] += c1.count_ones() as u64;
                for (j2, &c2) in columns.iter().enumerate().skip(j1 + 1) {
                    stats.both[j1 * len + j2] += (c1 & c2).count_ones() as u64;
                }
            }
            stats.samples += block.len() as u64;
        }
        for j1 in 0..len {
            stats.both[j1 * len + j1] = stats.ones[j1];
            for j2 in j1 + 1..len {
                stats.both[j2 * len + j1] = stats.both[j1 * len + j2];
            }
        }
        stats
    }

    /// Adds the counts of `other`, which must describe descriptors of the same
    /// length.
    pub fn merge(mut self, other: &Self) -> Result<Self> {
        if self.len != other.len {
            return Err(Error::Dimension {
                expected: self.len,
                actual: other.len,
            });
        }
        self.samples += other.samples;
        self.ones.iter_mut().zip(&other.ones).for_each(|(a, b)| *a += b);
        self.both.iter_mut().zip(&other.both).for_each(|(a, b)| *a += b);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    pub fn sample_count(&self) -> u64 {
        self.samples
    }

    /// `[count of 0, count of 1]` for dexel `j`.
    pub fn marginal_counts(&self, j: usize) -> [u64; 2] {
        [self.samples - self.ones[j], self.ones[j]]
    }

    /// Joint counts indexed `[value at j1][value at j2]`.
    pub fn pair_counts(&self, j1: usize, j2: usize) -> [[u64; 2]; 2] {
        let c11 = self.both[j1 * self.len + j2];
        let c10 = self.ones[j1] - c11;
        let c01 = self.ones[j2] - c11;
        let c00 = self.samples - c11 - c10 - c01;
        [[c00, c01], [c10, c11]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn desc(bits: &[u8]) -> BinaryDescriptor {
        BinaryDescriptor::from_bits(bits.iter().map(|&b| b == 1))
    }

    #[test]
    fn all_zero_descriptors() {
        let d = BinaryDescriptor::zeros(16);
        let s = DexelStats::estimate(std::iter::repeat_n(&d, 100)).unwrap();
        for j in 0..16 {
            assert_eq!(s.marginal_counts(j), [100, 0]);
        }
    }

    #[test]
    fn uniform_two_dexel_patterns() {
        let ds: Vec<_> = [[0, 0], [0, 1], [1, 0], [1, 1]].iter().map(|b| desc(b)).collect();
        let s = DexelStats::estimate(&ds).unwrap();
        assert_eq!(s.marginal_counts(0), [2, 2]);
        assert_eq!(s.marginal_counts(1), [2, 2]);
        assert_eq!(s.pair_counts(0, 1), [[1, 1], [1, 1]]);
    }

    #[test]
    fn empty_and_mismatched_input() {
        let none: Vec<BinaryDescriptor> = vec![];
        assert!(matches!(DexelStats::estimate(&none), Err(Error::EmptyTrainingSet)));
        let ds = vec![desc(&[0, 1]), desc(&[1, 1, 0])];
        assert!(matches!(DexelStats::estimate(&ds), Err(Error::Dimension { .. })));
    }

    fn brute_force(ds: &[BinaryDescriptor], j1: usize, j2: usize) -> [[u64; 2]; 2] {
        let mut t = [[0u64; 2]; 2];
        for d in ds {
            t[d.get(j1) as usize][d.get(j2) as usize] += 1;
        }
        t
    }

    proptest! {
        #[test]
        fn counts_match_brute_force(
            rows in prop::collection::vec(prop::collection::vec(any::<bool>(), 70), 1..200)
        ) {
            let ds: Vec<_> = rows.iter().map(|r| BinaryDescriptor::from_bits(r.iter().copied())).collect();
            let s = DexelStats::estimate(&ds).unwrap();
            for (j1, j2) in [(0, 1), (5, 69), (64, 3), (10, 10)] {
                prop_assert_eq!(s.pair_counts(j1, j2), brute_force(&ds, j1, j2));
            }
        }

        #[test]
        fn merge_is_order_independent(
            rows in prop::collection::vec(prop::collection::vec(any::<bool>(), 12), 3..80),
            cut1 in 1usize..100, cut2 in 1usize..100
        ) {
            let ds: Vec<_> = rows.iter().map(|r| BinaryDescriptor::from_bits(r.iter().copied())).collect();
            let a = cut1 % (ds.len() - 1) + 1;
            let b = a + cut2 % (ds.len() - a).max(1);
            let b = b.min(ds.len() - 1).max(a);
            let whole = DexelStats::estimate(&ds).unwrap();
            let parts: Vec<DexelStats> = [&ds[..a], &ds[a..b], &ds[b..]]
                .iter()
                .filter(|p| !p.is_empty())
                .map(|p| DexelStats::estimate(*p).unwrap())
                .collect();
            let forward = parts.iter().skip(1).fold(parts[0].clone(), |acc, p| acc.merge(p).unwrap());
            let backward = parts.iter().rev().skip(1).fold(parts[parts.len() - 1].clone(), |acc, p| acc.merge(p).unwrap());
            prop_assert_eq!(&forward, &whole);
            prop_assert_eq!(&backward, &whole);
        }
    }
}
