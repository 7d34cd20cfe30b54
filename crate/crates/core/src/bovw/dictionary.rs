//! Visual-word dictionaries over binary descriptors.
//!
//! ```text
//! "BFDC" | u16 version | u32 V | u16 P | u8 metric (0 euclidean, 1 hamming) | u8 0
//! centroids : euclidean -> V x P f64 ; hamming -> V x ceil(P/8) bytes
//! idf       : V x f64
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature::{BinaryDescriptor, FrameFeatures};
use crate::io::ByteReader;
use crate::par;

pub const DICTIONARY_MAGIC: &[u8; 4] = b"BFDC";
const VERSION: u16 = 1;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Hamming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMethod {
    KMeans,
    KMedians,
    KMedoids,
}

impl ClusterMethod {
    pub fn metric(self) -> Metric {
        match self {
            ClusterMethod::KMeans => Metric::Euclidean,
            ClusterMethod::KMedians | ClusterMethod::KMedoids => Metric::Hamming,
        }
    }
}

impl std::str::FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(ClusterMethod::KMeans),
            "kmedians" => Ok(ClusterMethod::KMedians),
            "kmedoids" => Ok(ClusterMethod::KMedoids),
            _ => Err(Error::Config(format!("unknown clustering method {s:?} (kmeans|kmedians|kmedoids)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Centroids {
    /// Row-major `V x P` real centroids, compared by Euclidean distance with
    /// descriptor bits read as 0/1 reals.
    Real { values: Vec<f64>, len: usize },
    Binary(Vec<BinaryDescriptor>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    centroids: Centroids,
    norms: Vec<f64>,
    pub idf: Vec<f64>,
}

impl Dictionary {
    /// Dictionary with unit idf.
    pub fn new(centroids: Centroids) -> Result<Self> {
        let words = match &centroids {
            Centroids::Real { values, len } => {
                if *len == 0 || values.is_empty() || values.len() % len != 0 || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("real centroids must be a finite non-empty V x P matrix".into()));
                }
                values.len() / len
            }
            Centroids::Binary(c) => {
                let len = c.first().map(|d| d.len()).unwrap_or(0);
                if c.is_empty() || len == 0 || c.iter().any(|d| d.len() != len) {
                    return Err(Error::Config("binary centroids must be non-empty and share one length".into()));
                }
                c.len()
            }
        };
        let norms = match &centroids {
            Centroids::Real { values, len } => values.chunks(*len).map(|c| c.iter().map(|v| v * v).sum()).collect(),
            Centroids::Binary(_) => Vec::new(),
        };
        Ok(Self {
            centroids,
            norms,
            idf: vec![1.0; words],
        })
    }

    pub fn with_idf(mut self, idf: Vec<f64>) -> Result<Self> {
        if idf.len() != self.words() || idf.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "idf must have {} finite non-negative entries",
                self.words()
            )));
        }
        self.idf = idf;
        Ok(self)
    }

    pub fn words(&self) -> usize {
        self.idf.len()
    }

    pub fn descriptor_length(&self) -> usize {
        match &self.centroids {
            Centroids::Real { len, .. } => *len,
            Centroids::Binary(c) => c[0].len(),
        }
    }

    pub fn metric(&self) -> Metric {
        match self.centroids {
            Centroids::Real { .. } => Metric::Euclidean,
            Centroids::Binary(_) => Metric::Hamming,
        }
    }

    pub fn centroids(&self) -> &Centroids {
        &self.centroids
    }

    /// Distance from a descriptor to word `w`: squared Euclidean for real
    /// centroids, Hamming for binary ones.
    pub fn distance(&self, d: &BinaryDescriptor, w: usize) -> f64 {
        match &self.centroids {
            Centroids::Real { values, len } => {
                let c = &values[w * len..(w + 1) * len];
                let mut sum = self.norms[w];
                for j in set_bits(d) {
                    sum += 1.0 - 2.0 * c[j];
                }
                sum
            }
            Centroids::Binary(c) => d.hamming(&c[w]) as f64,
        }
    }

    /// Nearest word; ties go to the lowest index.
    pub fn assign(&self, d: &BinaryDescriptor) -> Result<usize> {
        if d.len() != self.descriptor_length() {
            return Err(Error::Dimension {
                expected: self.descriptor_length(),
                actual: d.len(),
            });
        }
        Ok(self.nearest(d).0)
    }

    fn nearest(&self, d: &BinaryDescriptor) -> (usize, f64) {
        let mut best = (0, self.distance(d, 0));
        for w in 1..self.words() {
            let dist = self.distance(d, w);
            if dist < best.1 {
                best = (w, dist);
            }
        }
        best
    }

    /// Sets idf from a document collection: `max(0, ln(D / (1 + df)))`.
    pub fn compute_idf(&mut self, documents: &[FrameFeatures]) -> Result<()> {
        if documents.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let per_doc = par::map(documents, |doc| {
            let mut seen = vec![false; self.words()];
            for f in &doc.features {
                seen[self.assign(&f.descriptor)?] = true;
            }
            Ok::<_, Error>(seen)
        });
        let mut df = vec![0u64; self.words()];
        for seen in per_doc {
            for (c, s) in df.iter_mut().zip(seen?) {
                *c += s as u64;
            }
        }
        let n = documents.len() as f64;
        self.idf = df.iter().map(|&c| (n / (1.0 + c as f64)).ln().max(0.0)).collect();
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DICTIONARY_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.words() as u32).to_le_bytes());
        out.extend_from_slice(&(self.descriptor_length() as u16).to_le_bytes());
        out.push(match self.metric() {
            Metric::Euclidean => 0,
            Metric::Hamming => 1,
        });
        out.push(0);
        match &self.centroids {
            Centroids::Real { values, .. } => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Centroids::Binary(c) => c.iter().for_each(|d| out.extend_from_slice(&d.to_bytes())),
        }
        self.idf.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(DICTIONARY_MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported dictionary version {version}")));
        }
        let words = r.u32()? as usize;
        let p = r.u16()? as usize;
        let at = r.offset();
        let metric = r.u8()?;
        r.u8()?;
        if words == 0 || p == 0 {
            return Err(Error::format(6, "empty dictionary"));
        }
        let centroids = match metric {
            0 => {
                if words.saturating_mul(p).saturating_mul(8) > r.remaining() {
                    return Err(Error::format(r.offset(), "truncated centroids"));
                }
                let values = (0..words * p).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Centroids::Real { values, len: p }
            }
            1 => Centroids::Binary(
                (0..words)
                    .map(|_| {
                        let at = r.offset();
                        BinaryDescriptor::from_bytes(r.take(p.div_ceil(8))?, p).map_err(|e| Error::format(at, e.to_string()))
                    })
                    .collect::<Result<_>>()?,
            ),
            m => return Err(Error::format(at, format!("unknown metric {m}"))),
        };
        let idf_at = r.offset();
        let idf = (0..words).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::new(centroids)
            .and_then(|d| d.with_idf(idf))
            .map_err(|e| Error::format(idf_at, e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn set_bits(d: &BinaryDescriptor) -> impl Iterator<Item = usize> + '_ {
    d.words().iter().enumerate().flat_map(|(w, &word)| {
        let mut bits = word;
        std::iter::from_fn(move || {
            (bits != 0).then(|| {
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                64 * w + b
            })
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DictionaryConfig {
    pub words: usize,
    pub method: ClusterMethod,
    pub seed: u64,
    pub max_iterations: usize,
}

impl DictionaryConfig {
    pub fn new(words: usize, method: ClusterMethod, seed: u64) -> Self {
        Self {
            words,
            method,
            seed,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

/// A learned dictionary with its clustering cost after every assignment step.
#[derive(Debug, Clone)]
pub struct LearnedDictionary {
    pub dictionary: Dictionary,
    pub distortion: Vec<f64>,
    pub converged: bool,
}

/// k-means++ seeding followed by alternating assignment and update steps
/// until the assignment no longer changes or the iteration cap is hit.
pub fn learn_dictionary(sample: &[BinaryDescriptor], cfg: &DictionaryConfig) -> Result<LearnedDictionary> {
    let first = sample.first().ok_or(Error::EmptyTrainingSet)?;
    let p = first.len();
    if let Some(d) = sample.iter().find(|d| d.len() != p) {
        return Err(Error::Dimension {
            expected: p,
            actual: d.len(),
        });
    }
    if cfg.words == 0 || cfg.words > sample.len() {
        return Err(Error::Config(format!(
            "V = {} must be in 1..={} (sample size)",
            cfg.words,
            sample.len()
        )));
    }
    let distinct = sample.iter().collect::<HashSet<_>>().len();
    if cfg.words > distinct {
        return Err(Error::Config(format!(
            "V = {} exceeds the {distinct} distinct descriptors in the sample",
            cfg.words
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = plus_plus(sample, cfg, &mut rng);
    let mut dict = Dictionary::new(initial_centroids(sample, &seeds, cfg.method))?;
    let mut assignment: Vec<usize> = Vec::new();
    let mut distortion = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iterations.max(1) {
        let step = par::map(sample, |d| dict.nearest(d));
        let next: Vec<usize> = step.iter().map(|s| s.0).collect();
        distortion.push(step.iter().map(|s| s.1).sum::<f64>());
        if next == assignment {
            converged = true;
            break;
        }
        assignment = next;
        dict = Dictionary::new(update(sample, &mut assignment, &dict, cfg.method, &step))?;
    }
    Ok(LearnedDictionary {
        dictionary: dict,
        distortion,
        converged,
    })
}

fn plus_plus(sample: &[BinaryDescriptor], cfg: &DictionaryConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let weight = |h: u32| match cfg.method.metric() {
        // Squared Euclidean distance between 0/1 vectors is the Hamming distance.
        Metric::Euclidean => h as f64,
        Metric::Hamming => (h as f64) * (h as f64),
    };
    let mut chosen = vec![rng.random_range(0..sample.len())];
    let mut nearest: Vec<f64> = sample.iter().map(|d| weight(d.hamming(&sample[chosen[0]]))).collect();
    while chosen.len() < cfg.words {
        let total: f64 = nearest.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = nearest.iter().rposition(|&w| w > 0.0).expect("distinct descriptors remain");
        for (i, &w) in nearest.iter().enumerate() {
            if w > 0.0 && u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        chosen.push(pick);
        let c = &sample[pick];
        for (n, d) in nearest.iter_mut().zip(sample) {
            *n = n.min(weight(d.hamming(c)));
        }
    }
    chosen
}

fn initial_centroids(sample: &[BinaryDescriptor], seeds: &[usize], method: ClusterMethod) -> Centroids {
    match method.metric() {
        Metric::Euclidean => {
            let len = sample[0].len();
            let values = seeds
                .iter()
                .flat_map(|&i| sample[i].iter().map(|b| b as u8 as f64))
                .collect();
            Centroids::Real { values, len }
        }
        Metric::Hamming => Centroids::Binary(seeds.iter().map(|&i| sample[i].clone()).collect()),
    }
}

/// Recomputes centroids from the assignment. Empty clusters, and clusters
/// whose centroid duplicates an earlier one, take over the point of the
/// largest cluster that lies farthest from its centroid.
fn update(
    sample: &[BinaryDescriptor],
    assignment: &mut [usize],
    dict: &Dictionary,
    method: ClusterMethod,
    step: &[(usize, f64)],
) -> Centroids {
    let v = dict.words();
    let p = dict.descriptor_length();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); v];
    for (i, &w) in assignment.iter().enumerate() {
        members[w].push(i);
    }
    let mut dist: Vec<f64> = step.iter().map(|s| s.1).collect();
    while let Some(empty) = members.iter().position(|m| m.is_empty()) {
        let largest = (0..v).max_by_key(|&w| (members[w].len(), std::cmp::Reverse(w))).expect("v > 0");
        if members[largest].len() < 2 {
            break;
        }
        let far = *members[largest]
            .iter()
            .max_by(|&&a, &&b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
            .expect("non-empty");
        members[largest].retain(|&i| i != far);
        members[empty].push(far);
        assignment[far] = empty;
        dist[far] = 0.0;
    }
    let binary = |members: &[usize]| -> BinaryDescriptor {
        match method {
            ClusterMethod::KMedoids => {
                let best = members
                    .iter()
                    .min_by_key(|&&a| {
                        let cost: u64 = members.iter().map(|&b| sample[a].hamming(&sample[b]) as u64).sum();
                        (cost, a)
                    })
                    .expect("non-empty cluster");
                sample[*best].clone()
            }
            _ => {
                let mut ones = vec![0usize; p];
                for &i in members {
                    for j in set_bits(&sample[i]) {
                        ones[j] += 1;
                    }
                }
                BinaryDescriptor::from_bits(ones.iter().map(|&c| 2 * c > members.len()))
            }
        }
    };
    match method.metric() {
        Metric::Euclidean => {
            let mut values = vec![0.0; v * p];
            for (w, m) in members.iter().enumerate() {
                let row = &mut values[w * p..(w + 1) * p];
                for &i in m {
                    for j in set_bits(&sample[i]) {
                        row[j] += 1.0;
                    }
                }
                let n = m.len().max(1) as f64;
                row.iter_mut().for_each(|x| *x /= n);
            }
            Centroids::Real { values, len: p }
        }
        Metric::Hamming => {
            let mut out: Vec<BinaryDescriptor> = Vec::with_capacity(v);
            let mut used = HashSet::new();
            for m in &members {
                let mut c = if m.is_empty() {
                    BinaryDescriptor::zeros(p)
                } else {
                    binary(m)
                };
                if used.contains(&c) {
                    // Fall back to a member not already used as a centroid.
                    if let Some(&i) = m.iter().find(|&&i| !used.contains(&sample[i])) {
                        c = sample[i].clone();
                    }
                }
                used.insert(c.clone());
                out.push(c);
            }
            Centroids::Binary(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::{LocalFeature, QuantizedKeypoint};
    use proptest::prelude::*;
    use rand::Rng;

    fn bits(v: u64, p: usize) -> BinaryDescriptor {
        BinaryDescriptor::from_bits((0..p).map(|j| (v >> j) & 1 == 1))
    }

    #[test]
    fn exact_clusters_recovered_with_zero_distortion() {
        let distinct = [0x00u64, 0xF0, 0x0F, 0xFF];
        let sample: Vec<_> = distinct.iter().flat_map(|&v| std::iter::repeat_n(bits(v, 8), 5)).collect();
        for method in [ClusterMethod::KMeans, ClusterMethod::KMedians, ClusterMethod::KMedoids] {
            let learned = learn_dictionary(&sample, &DictionaryConfig::new(4, method, 9)).unwrap();
            assert_eq!(*learned.distortion.last().unwrap(), 0.0, "{method:?}");
            let mut words: Vec<usize> = distinct.iter().map(|&v| learned.dictionary.assign(&bits(v, 8)).unwrap()).collect();
            words.sort();
            assert_eq!(words, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn same_seed_same_dictionary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sample: Vec<_> = (0..300).map(|_| bits(rng.random(), 64)).collect();
        for method in [ClusterMethod::KMeans, ClusterMethod::KMedians] {
            let a = learn_dictionary(&sample, &DictionaryConfig::new(8, method, 1)).unwrap();
            let b = learn_dictionary(&sample, &DictionaryConfig::new(8, method, 1)).unwrap();
            assert_eq!(a.dictionary, b.dictionary);
        }
    }

    #[test]
    fn kmedians_recovers_planted_centers() {
        let centers = [bits(0, 32), bits(u32::MAX as u64, 32)];
        let mut sample = Vec::new();
        for c in &centers {
            sample.push(c.clone());
            for j in 0..32 {
                let mut d = c.clone();
                d.flip(j);
                sample.push(d);
            }
        }
        let learned = learn_dictionary(&sample, &DictionaryConfig::new(2, ClusterMethod::KMedians, 3)).unwrap();
        let Centroids::Binary(found) = learned.dictionary.centroids() else { panic!() };
        let mut found = found.clone();
        found.sort();
        assert_eq!(found, centers.to_vec());
        // Oracle: each planted center minimizes the summed Hamming distance
        // over its cluster among all its single-bit neighbours.
        for c in &centers {
            let cluster: Vec<_> = sample.iter().filter(|d| d.hamming(c) <= 1).collect();
            let cost = |x: &BinaryDescriptor| cluster.iter().map(|d| d.hamming(x)).sum::<u32>();
            for j in 0..32 {
                let mut n = c.clone();
                n.flip(j);
                assert!(cost(c) <= cost(&n));
            }
        }
    }

    #[test]
    fn distortion_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sample: Vec<_> = (0..400).map(|_| bits(rng.random::<u64>() & rng.random::<u64>(), 64)).collect();
        for method in [ClusterMethod::KMeans, ClusterMethod::KMedians, ClusterMethod::KMedoids] {
            let learned = learn_dictionary(&sample, &DictionaryConfig::new(12, method, 2)).unwrap();
            for w in learned.distortion.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{method:?}: {:?}", learned.distortion);
            }
        }
    }

    #[test]
    fn too_many_words_is_config_error() {
        let sample = vec![bits(1, 8), bits(1, 8), bits(2, 8)];
        assert!(matches!(
            learn_dictionary(&sample, &DictionaryConfig::new(4, ClusterMethod::KMeans, 0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            learn_dictionary(&sample, &DictionaryConfig::new(3, ClusterMethod::KMeans, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let real = Dictionary::new(Centroids::Real {
            values: vec![0.0, 0.5, 1.0, 0.25],
            len: 2,
        })
        .unwrap()
        .with_idf(vec![0.5, 2.0])
        .unwrap();
        let binary = Dictionary::new(Centroids::Binary(vec![bits(3, 12), bits(5, 12)])).unwrap();
        for d in [real, binary] {
            let bytes = d.to_bytes();
            assert_eq!(Dictionary::from_bytes(&bytes).unwrap(), d);
            assert!(Dictionary::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
    }

    #[test]
    fn idf_counts_documents() {
        let dict = Dictionary::new(Centroids::Binary(vec![bits(0, 8), bits(0xFF, 8)])).unwrap();
        let doc = |vs: &[u64]| {
            FrameFeatures::new(
                0,
                vs.iter()
                    .map(|&v| LocalFeature::new(QuantizedKeypoint::new(0, 0, 1, 0).unwrap(), bits(v, 8)))
                    .collect(),
            )
        };
        let docs = vec![doc(&[0, 0]), doc(&[0]), doc(&[0, 0xFF]), doc(&[])];
        let mut d = dict;
        d.compute_idf(&docs).unwrap();
        assert!((d.idf[0] - 0.0).abs() < 1e-12); // ln(4/4)
        assert!((d.idf[1] - 2f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn euclidean_expansion_matches_direct(v in any::<u64>(), c in proptest::collection::vec(0.0f64..1.0, 64)) {
            let dict = Dictionary::new(Centroids::Real { values: c.clone(), len: 64 }).unwrap();
            let d = bits(v, 64);
            let direct: f64 = d.iter().zip(&c).map(|(b, x)| (b as u8 as f64 - x).powi(2)).sum();
            prop_assert!((dict.distance(&d, 0) - direct).abs() < 1e-9);
        }
    }
}
