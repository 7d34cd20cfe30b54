//! Dexel selection by greedy asymmetric pairwise boosting.
//!
//! Each dexel `j` is a weak classifier over descriptor pairs that predicts
//! "matching" when the two descriptors agree at `j`. Every round picks the
//! unused dexel with the lowest weighted classification error, where missed
//! matches cost `asymmetry` times as much as false alarms, then reweights
//! the pairs AdaBoost-style. The selection order is the ranking.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::entropy::TIE_TOLERANCE;
use crate::error::{Error, Result};
use crate::feature::BinaryDescriptor;
use crate::par;

pub const DEFAULT_ASYMMETRY: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub a: BinaryDescriptor,
    pub b: BinaryDescriptor,
    pub matching: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<TrainingPair>,
}

impl PairSet {
    pub fn new(pairs: Vec<TrainingPair>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Descriptor length shared by every pair.
    pub fn descriptor_length(&self) -> Result<usize> {
        let p = self.pairs.first().ok_or(Error::EmptyTrainingSet)?.a.len();
        for pair in &self.pairs {
            for d in [&pair.a, &pair.b] {
                if d.len() != p {
                    return Err(Error::Dimension {
                        expected: p,
                        actual: d.len(),
                    });
                }
            }
        }
        Ok(p)
    }
}

/// Dexels ordered most discriminative first, with the weighted error each
/// had when it was selected.
#[derive(Debug, Clone, PartialEq)]
pub struct DexelRanking {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
}

impl DexelRanking {
    pub fn identity(p: usize) -> Self {
        Self {
            order: (0..p).collect(),
            scores: vec![0.0; p],
        }
    }
}

/// Weighted error of every dexel, `None` for dexels already used.
fn dexel_errors(
    agree: &[BinaryDescriptor],
    labels: &[bool],
    weights: &[f64],
    used: &[bool],
    asymmetry: f64,
) -> Vec<Option<f64>> {
    par::map_range(used.len(), |j| {
        if used[j] {
            return None;
        }
        let mut err = 0.0;
        for ((ag, &matching), &w) in agree.iter().zip(labels).zip(weights) {
            match (matching, ag.get(j)) {
                (true, false) => err += asymmetry * w,
                (false, true) => err += w,
                _ => {}
            }
        }
        Some(err)
    })
}

pub fn rank_dexels(pairs: &PairSet, rounds: usize, asymmetry: f64) -> Result<DexelRanking> {
    let p = pairs.descriptor_length()?;
    if rounds > p {
        return Err(Error::Config(format!("rounds {rounds} exceed descriptor length {p}")));
    }
    if !(asymmetry.is_finite() && asymmetry > 0.0) {
        return Err(Error::Config(format!("asymmetry {asymmetry} must be positive")));
    }
    let labels: Vec<bool> = pairs.pairs.iter().map(|q| q.matching).collect();
    if labels.iter().all(|&m| m) || labels.iter().all(|&m| !m) {
        return Err(Error::DegenerateTrainingSet(
            "pairs must include both matching and non-matching examples".into(),
        ));
    }
    // Bit j set where the pair agrees at dexel j.
    let agree: Vec<BinaryDescriptor> = pairs
        .pairs
        .iter()
        .map(|q| BinaryDescriptor::from_bits(q.a.iter().zip(q.b.iter()).map(|(x, y)| x == y)))
        .collect();
    let n = agree.len();
    let mut weights = vec![1.0 / n as f64; n];
    let mut used = vec![false; p];
    let mut ranking = DexelRanking {
        order: Vec::with_capacity(rounds),
        scores: Vec::with_capacity(rounds),
    };

    for _ in 0..rounds {
        let errors = dexel_errors(&agree, &labels, &weights, &used, asymmetry);
        let mut best: Option<(usize, f64)> = None;
        for (j, e) in errors.iter().enumerate() {
            if let Some(e) = *e {
                if best.is_none_or(|(_, be)| e < be - TIE_TOLERANCE) {
                    best = Some((j, e));
                }
            }
        }
        let (j, err) = best.expect("rounds <= p leaves an unused dexel");
        used[j] = true;
        ranking.order.push(j);
        ranking.scores.push(err);

        // Normalize by the worst attainable error so alpha stays defined.
        let worst: f64 = labels
            .iter()
            .zip(&weights)
            .map(|(&m, &w)| if m { asymmetry * w } else { w })
            .sum();
        let eps = (err / worst).clamp(1e-12, 1.0 - 1e-12);
        let alpha = 0.5 * ((1.0 - eps) / eps).ln();
        for ((w, ag), &matching) in weights.iter_mut().zip(&agree).zip(&labels) {
            let wrong = ag.get(j) != matching;
            *w *= if wrong { alpha.exp() } else { (-alpha).exp() };
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(ranking)
}

/// Reads `label,hexA,hexB` rows; label is `1`/`0` (or `match`/`non-match`).
/// Blank lines and lines starting with `#` are skipped, as is a header row
/// whose first field is `label`.
pub fn read_pairs_csv(path: impl AsRef<Path>, descriptor_length: usize) -> Result<PairSet> {
    parse_pairs_csv(&fs::read_to_string(path)?, descriptor_length)
}

pub fn parse_pairs_csv(text: &str, descriptor_length: usize) -> Result<PairSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Config(format!("pair file: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::Config(format!("pair file line {line}: {msg}"));
        if record.get(0) == Some("label") {
            continue;
        }
        if record.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", record.len())));
        }
        let matching = match &record[0] {
            "1" | "match" | "matching" => true,
            "0" | "non-match" | "non-matching" => false,
            other => return Err(bad(format!("unknown label {other:?}"))),
        };
        let a = BinaryDescriptor::from_hex(&record[1], descriptor_length).map_err(|e| bad(e.to_string()))?;
        let b = BinaryDescriptor::from_hex(&record[2], descriptor_length).map_err(|e| bad(e.to_string()))?;
        pairs.push(TrainingPair { a, b, matching });
    }
    Ok(PairSet::new(pairs))
}

pub fn write_pairs_csv(pairs: &PairSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "a", "b"])?;
    for q in &pairs.pairs {
        w.write_record([(q.matching as u8).to_string(), q.a.to_hex(), q.b.to_hex()])?;
    }
    w.flush()?;
    Ok(())
}

/// Planted-informative-dexel pair generator.
#[derive(Debug, Clone)]
pub struct PlantedPairsConfig {
    pub descriptor_length: usize,
    pub planted: usize,
    pub pairs: usize,
    pub matching_fraction: f64,
    /// Probability that a planted dexel differs across a matching pair.
    pub planted_flip: f64,
    pub seed: u64,
}

impl Default for PlantedPairsConfig {
    fn default() -> Self {
        Self {
            descriptor_length: 64,
            planted: 8,
            pairs: 5000,
            matching_fraction: 0.5,
            planted_flip: 0.05,
            seed: 0,
        }
    }
}

/// Matching pairs copy the planted dexels (up to `planted_flip` noise) and
/// draw every other dexel independently; non-matching pairs are independent
/// throughout. Returns the pairs and the sorted planted indices.
pub fn synth_planted_pairs(cfg: &PlantedPairsConfig) -> Result<(PairSet, Vec<usize>)> {
    if cfg.planted > cfg.descriptor_length {
        return Err(Error::Config("more planted dexels than dexels".into()));
    }
    for p in [cfg.matching_fraction, cfg.planted_flip] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("probability {p} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut planted = sample(&mut rng, cfg.descriptor_length, cfg.planted).into_vec();
    planted.sort_unstable();
    let mut is_planted = vec![false; cfg.descriptor_length];
    planted.iter().for_each(|&j| is_planted[j] = true);

    let random = |rng: &mut ChaCha8Rng| {
        BinaryDescriptor::from_bits((0..cfg.descriptor_length).map(|_| rng.random_bool(0.5)))
    };
    let pairs = (0..cfg.pairs)
        .map(|_| {
            let matching = rng.random_bool(cfg.matching_fraction);
            let a = random(&mut rng);
            let b = if matching {
                BinaryDescriptor::from_bits((0..cfg.descriptor_length).map(|j| {
                    if is_planted[j] {
                        a.get(j) ^ rng.random_bool(cfg.planted_flip)
                    } else {
                        rng.random_bool(0.5)
                    }
                }))
            } else {
                random(&mut rng)
            };
            TrainingPair { a, b, matching }
        })
        .collect();
    Ok((PairSet::new(pairs), planted))
}
