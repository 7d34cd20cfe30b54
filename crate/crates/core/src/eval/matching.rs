use crate::error::{Error, Result};
use crate::feature::{BinaryDescriptor, FrameFeatures};
use crate::par;

pub const DEFAULT_RATIO: f64 = 0.7;
const RATIO_DENOMINATOR: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    /// Index into the first set.
    pub query: usize,
    /// Index of the nearest neighbour in the second set.
    pub train: usize,
    pub distance: u32,
    pub second: u32,
}

/// Ratio as an exact fraction over 10^6, so the test `d1 < ratio * d2`
/// runs on integers.
fn ratio_numerator(ratio: f64) -> Result<u64> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("ratio {ratio} must lie in (0, 1)")));
    }
    Ok((ratio * RATIO_DENOMINATOR as f64).round() as u64)
}

/// Nearest-neighbour matching with the ratio test: a feature of `a` is kept
/// iff its nearest distance in `b` is below `ratio` times the second-nearest.
/// Ties resolve to the lowest index.
pub fn match_descriptors(a: &[&BinaryDescriptor], b: &[&BinaryDescriptor], ratio: f64) -> Result<Vec<Match>> {
    let num = ratio_numerator(ratio)?;
    if b.len() < 2 {
        return Err(Error::InsufficientCandidates(b.len()));
    }
    let len = b[0].len();
    if let Some(d) = a.iter().chain(b).find(|d| d.len() != len) {
        return Err(Error::Dimension {
            expected: len,
            actual: d.len(),
        });
    }
    let found = par::map(a, |d| {
        let mut best = (usize::MAX, u32::MAX);
        let mut second = u32::MAX;
        for (j, e) in b.iter().enumerate() {
            let h = d.hamming(e);
            if h < best.1 {
                second = best.1;
                best = (j, h);
            } else if h < second {
                second = h;
            }
        }
        ((best.1 as u64) * RATIO_DENOMINATOR < num * second as u64).then_some((best.0, best.1, second))
    });
    Ok(found
        .into_iter()
        .enumerate()
        .filter_map(|(i, m)| {
            m.map(|(train, distance, second)| Match {
                query: i,
                train,
                distance,
                second,
            })
        })
        .collect())
}

pub fn match_features(a: &FrameFeatures, b: &FrameFeatures, ratio: f64) -> Result<Vec<Match>> {
    let a: Vec<_> = a.descriptors().collect();
    let b: Vec<_> = b.descriptors().collect();
    match_descriptors(&a, &b, ratio)
}
