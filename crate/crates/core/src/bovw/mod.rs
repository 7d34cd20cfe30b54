//! Bag-of-visual-words global descriptors and their compression.

mod coding;
mod dictionary;

pub use coding::{
    decode_global_stream, encode_global_stream, train_bovw_codebooks, GlobalStreamRate, InterBovwCodebook,
    IntraBovwCodebook, GLOBAL_MAGIC,
};
pub use dictionary::{
    learn_dictionary, Centroids, ClusterMethod, Dictionary, DictionaryConfig, LearnedDictionary, Metric,
    DICTIONARY_MAGIC, MAX_ITERATIONS,
};

use crate::error::{Error, Result};
use crate::feature::BinaryDescriptor;

/// Quantization steps of the rate sweep.
pub const DELTA_GRID: [f64; 4] = [0.01, 0.05, 0.1, 0.2];
/// Group-of-pictures sizes of the rate sweep.
pub const GOP_GRID: [usize; 6] = [1, 2, 5, 10, 20, 50];

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    pub values: Vec<f64>,
}

impl GlobalDescriptor {
    pub fn zeros(words: usize) -> Self {
        Self {
            values: vec![0.0; words],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales to unit L2 norm; the zero vector stays zero.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
        self
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Hard-assignment histogram weighted by idf and L2-normalized.
pub fn build_global<'a, I>(descriptors: I, dict: &Dictionary) -> Result<GlobalDescriptor>
where
    I: IntoIterator<Item = &'a BinaryDescriptor>,
{
    let mut counts = vec![0u64; dict.words()];
    for d in descriptors {
        counts[dict.assign(d)?] += 1;
    }
    Ok(histogram_to_global(&counts, &dict.idf))
}

pub fn histogram_to_global(counts: &[u64], idf: &[f64]) -> GlobalDescriptor {
    GlobalDescriptor {
        values: counts.iter().zip(idf).map(|(&c, &w)| c as f64 * w).collect(),
    }
    .normalized()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGlobal {
    pub indices: Vec<u32>,
    pub delta: f64,
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("quantization step {delta} must be > 0")))
    }
}

/// Index alphabet size for step `delta`: enough to cover values in [0, 1].
pub fn alphabet_for(delta: f64) -> usize {
    (1.0 / delta).ceil() as usize + 1
}

/// `indices[j] = floor(g[j] / delta)`.
pub fn quantize_global(g: &GlobalDescriptor, delta: f64) -> Result<QuantizedGlobal> {
    check_delta(delta)?;
    if let Some(v) = g.values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Config(format!("global descriptor value {v} is not a finite non-negative number")));
    }
    Ok(QuantizedGlobal {
        indices: g.values.iter().map(|&v| floor_index(v, delta)).collect(),
        delta,
    })
}

/// `floor(v / delta)`, corrected so that `i * delta <= v < (i + 1) * delta`
/// holds in floating point, where the division alone can round across a
/// cell edge.
fn floor_index(v: f64, delta: f64) -> u32 {
    let mut i = (v / delta).floor() as u32;
    while i > 0 && i as f64 * delta > v {
        i -= 1;
    }
    while (i + 1) as f64 * delta <= v {
        i += 1;
    }
    i
}

impl QuantizedGlobal {
    /// Reconstructs at the left edge of each cell.
    pub fn dequantize(&self) -> GlobalDescriptor {
        GlobalDescriptor {
            values: self.indices.iter().map(|&i| i as f64 * self.delta).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GopStrategy {
    /// Keep the first frame of each group.
    Skip,
    /// Element-wise lower median of the group, renormalized.
    Median,
}

impl std::str::FromStr for GopStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip" => Ok(GopStrategy::Skip),
            "median" | "gop" => Ok(GopStrategy::Median),
            _ => Err(Error::Config(format!("unknown GOP strategy {s:?} (skip|median)"))),
        }
    }
}

pub fn aggregate_gop(globals: &[GlobalDescriptor], strategy: GopStrategy) -> Result<GlobalDescriptor> {
    let first = globals.first().ok_or(Error::EmptyGop)?;
    if let Some(g) = globals.iter().find(|g| g.len() != first.len()) {
        return Err(Error::Dimension {
            expected: first.len(),
            actual: g.len(),
        });
    }
    match strategy {
        GopStrategy::Skip => Ok(first.clone()),
        GopStrategy::Median => {
            let mut column = Vec::with_capacity(globals.len());
            let values = (0..first.len())
                .map(|j| {
                    column.clear();
                    column.extend(globals.iter().map(|g| g.values[j]));
                    column.sort_by(f64::total_cmp);
                    column[(column.len() - 1) / 2]
                })
                .collect();
            Ok(GlobalDescriptor { values }.normalized())
        }
    }
}

/// Splits a sequence into consecutive groups of `gop` frames and aggregates
/// each one.
pub fn aggregate_sequence(globals: &[GlobalDescriptor], gop: usize, strategy: GopStrategy) -> Result<Vec<GlobalDescriptor>> {
    if gop == 0 {
        return Err(Error::Config("GOP size must be at least 1".into()));
    }
    globals.chunks(gop).map(|c| aggregate_gop(c, strategy)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(v: u64, p: usize) -> BinaryDescriptor {
        BinaryDescriptor::from_bits((0..p).map(|j| (v >> j) & 1 == 1))
    }

    fn dict() -> Dictionary {
        Dictionary::new(Centroids::Binary(vec![bits(0, 8), bits(0x0F, 8), bits(0xFF, 8), bits(0xF0, 8)])).unwrap()
    }

    #[test]
    fn worked_histogram() {
        let d = dict().with_idf(vec![1.0, 1.0, 2.0, 1.0]).unwrap();
        let g = build_global(&[bits(0, 8), bits(1, 8), bits(0xFF, 8)], &d).unwrap();
        let s = 8f64.sqrt();
        assert_eq!(g.values.len(), 4);
        for (a, b) in g.values.iter().zip([2.0 / s, 0.0, 2.0 / s, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_and_empty() {
        let g = build_global(&[bits(0xF0, 8)], &dict()).unwrap();
        assert_eq!(g.values, vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(build_global(&[], &dict()).unwrap(), GlobalDescriptor::zeros(4));
        assert!(matches!(build_global(&[bits(0, 9)], &dict()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn quantize_example() {
        let q = quantize_global(&GlobalDescriptor { values: vec![0.37] }, 0.1).unwrap();
        assert_eq!(q.indices, vec![3]);
        let r = q.dequantize().values[0];
        assert!((r - 0.3).abs() < 1e-12);
        assert!(0.37 - r < 0.1);
        for delta in DELTA_GRID {
            assert_eq!(quantize_global(&GlobalDescriptor::zeros(5), delta).unwrap().indices, vec![0; 5]);
        }
        assert!(quantize_global(&GlobalDescriptor::zeros(1), 0.0).is_err());
    }

    #[test]
    fn gop_rules() {
        let a = GlobalDescriptor { values: vec![0.6, 0.8] };
        let b = GlobalDescriptor { values: vec![1.0, 0.0] };
        let c = GlobalDescriptor { values: vec![0.0, 1.0] };
        for s in [GopStrategy::Skip, GopStrategy::Median] {
            assert_eq!(aggregate_gop(std::slice::from_ref(&a), s).unwrap(), a);
            let same = aggregate_gop(&[a.clone(), a.clone(), a.clone()], s).unwrap();
            assert!(same.distance(&a) < 1e-12);
        }
        // Columns (0.6, 1, 0) and (0.8, 0, 1): medians 0.6 and 0.8.
        let m = aggregate_gop(&[a.clone(), b.clone(), c.clone()], GopStrategy::Median).unwrap();
        assert!(m.distance(&a) < 1e-12);
        // Even count takes the lower median: (0.6, 1) -> 0.6, (0.8, 0) -> 0.
        let m = aggregate_gop(&[a.clone(), b], GopStrategy::Median).unwrap();
        assert_eq!(m.values, vec![1.0, 0.0]);
        assert!(matches!(aggregate_gop(&[], GopStrategy::Skip), Err(Error::EmptyGop)));
        let seq: Vec<_> = (0..50).map(|_| c.clone()).collect();
        for gop in GOP_GRID {
            assert_eq!(aggregate_sequence(&seq, gop, GopStrategy::Skip).unwrap().len(), 50usize.div_ceil(gop));
        }
    }

    #[test]
    fn duplicating_features_keeps_descriptor() {
        let d = dict().with_idf(vec![0.5, 1.0, 2.0, 3.0]).unwrap();
        let once = [bits(0, 8), bits(0xF0, 8), bits(0x0F, 8)];
        let twice: Vec<_> = once.iter().chain(once.iter()).cloned().collect();
        let a = build_global(&once, &d).unwrap();
        let b = build_global(&twice, &d).unwrap();
        assert!(a.distance(&b) < 1e-12);
    }

    proptest! {
        #[test]
        fn quantization_error_bound(values in proptest::collection::vec(0.0f64..1.0, 1..32), di in 0usize..4) {
            let delta = DELTA_GRID[di];
            let g = GlobalDescriptor { values }.normalized();
            let r = quantize_global(&g, delta).unwrap().dequantize();
            for (v, h) in g.values.iter().zip(&r.values) {
                prop_assert!(*v - *h >= 0.0 && *v - *h < delta);
            }
        }

        #[test]
        fn nonempty_globals_are_unit(ws in proptest::collection::vec(0u64..256, 1..20)) {
            let ds: Vec<_> = ws.iter().map(|&w| bits(w, 8)).collect();
            let g = build_global(&ds, &dict()).unwrap();
            prop_assert!((g.norm() - 1.0).abs() < 1e-9);
        }
    }
}
