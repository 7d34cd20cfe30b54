use std::sync::Arc;

use super::codec::LocalCodec;
use super::{
    project_stream, EncoderConfig, FrameGeometry, InterLocalCodebook, IntraLocalCodebook, LocalCodebook, SearchWindow,
    StreamMode, DEFAULT_LAMBDA, SCALE_ALPHABET, SCALE_ESCAPE,
};
use crate::boosting::DexelRanking;
use crate::entropy::{learn_permutation, CodingPermutation, DexelStats, FrequencyTable};
use crate::error::{Error, Result};
use crate::feature::{BinaryDescriptor, FeatureStream, ORIENTATION_BINS};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrainingConfig {
    pub k: usize,
    pub window: SearchWindow,
    pub selection: DexelRanking,
    /// Lambda used for reference search while collecting inter statistics.
    pub lambda: f64,
    /// Inter passes. The first codes every feature with a candidate INTER;
    /// later passes keep only features the mode decision sends INTER.
    pub passes: usize,
}

impl LocalTrainingConfig {
    pub fn new(k: usize, selection: DexelRanking) -> Self {
        Self {
            k,
            window: SearchWindow::default(),
            selection,
            lambda: DEFAULT_LAMBDA,
            passes: 2,
        }
    }
}

#[derive(Default)]
struct InterCounts {
    residuals: Vec<BinaryDescriptor>,
    dx: Vec<u64>,
    dy: Vec<u64>,
    dscale: Vec<u64>,
    dorientation: Vec<u64>,
}

impl InterCounts {
    fn new(w: SearchWindow) -> Self {
        Self {
            residuals: Vec::new(),
            dx: vec![0; 2 * w.dx as usize + 1],
            dy: vec![0; 2 * w.dy as usize + 1],
            dscale: vec![0; 2 * w.dscale as usize + 1],
            dorientation: vec![0; ORIENTATION_BINS as usize],
        }
    }
}

/// Learns the intra and inter models for one target size K from training
/// streams of full-length descriptors.
pub fn train_local_codebook(streams: &[FeatureStream], cfg: &LocalTrainingConfig) -> Result<LocalCodebook> {
    let p = streams
        .first()
        .map(|s| s.descriptor_length)
        .ok_or(Error::EmptyTrainingSet)?;
    if let Some(s) = streams.iter().find(|s| s.descriptor_length != p) {
        return Err(Error::Dimension {
            expected: p,
            actual: s.descriptor_length,
        });
    }
    if cfg.k == 0 || cfg.k > p {
        return Err(Error::Config(format!("K = {} must be in 1..={p}", cfg.k)));
    }
    if cfg.passes == 0 {
        return Err(Error::Config("at least one inter pass is required".into()));
    }
    let projected = streams
        .iter()
        .map(|s| project_stream(s, &cfg.selection.order, cfg.k))
        .collect::<Result<Vec<_>>>()?;
    let descriptors: Vec<&BinaryDescriptor> = projected.iter().flat_map(|s| s.descriptors()).collect();
    if descriptors.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let intra_permutation = learn_permutation(&DexelStats::estimate(descriptors)?)?;
    let mut scale = vec![0u64; SCALE_ALPHABET];
    let mut orientation = vec![0u64; ORIENTATION_BINS as usize];
    for f in projected.iter().flat_map(|s| &s.frames).flat_map(|f| &f.features) {
        scale[(f.keypoint.scale as usize).min(SCALE_ESCAPE)] += 1;
        orientation[f.keypoint.orientation as usize] += 1;
    }
    let mut book = LocalCodebook::uninformed(p, cfg.selection.clone(), cfg.k, cfg.window)?;
    book.intra = IntraLocalCodebook {
        descriptor_length: p,
        permutation: intra_permutation,
        scale: FrequencyTable::from_counts(&scale)?,
        orientation: FrequencyTable::from_counts(&orientation)?,
    };

    for pass in 0..cfg.passes {
        let mode = if pass == 0 { StreamMode::Inter } else { StreamMode::Auto };
        let counts = collect_inter(&projected, &book, cfg, mode)?;
        book.inter = fit_inter(p, cfg, counts)?;
    }
    Ok(book)
}

fn collect_inter(projected: &[FeatureStream], book: &LocalCodebook, cfg: &LocalTrainingConfig, mode: StreamMode) -> Result<InterCounts> {
    let shared = Arc::new(book.clone());
    let w = cfg.window;
    let mut counts = InterCounts::new(w);
    for stream in projected {
        let codec = LocalCodec::new(
            shared.clone(),
            EncoderConfig {
                k: cfg.k,
                lambda: cfg.lambda,
                window: w,
                mode,
                geometry: FrameGeometry::for_stream(stream),
            },
        )?;
        for pair in stream.frames.windows(2) {
            let (reference, frame) = (&pair[0], &pair[1]);
            let choices = codec.inter_choices(frame, Some(reference))?;
            for (f, choice) in frame.features.iter().zip(choices) {
                let Some(m) = choice else { continue };
                let r = &reference.features[m.index];
                let (c, rk) = (&f.keypoint, &r.keypoint);
                counts.residuals.push(f.descriptor.xor(&r.descriptor));
                counts.dx[(c.x - rk.x + w.dx as i32) as usize] += 1;
                counts.dy[(c.y - rk.y + w.dy as i32) as usize] += 1;
                counts.dscale[(c.scale - rk.scale + w.dscale as i32) as usize] += 1;
                counts.dorientation[((c.orientation + ORIENTATION_BINS - rk.orientation) % ORIENTATION_BINS) as usize] += 1;
            }
        }
    }
    Ok(counts)
}

fn fit_inter(p: usize, cfg: &LocalTrainingConfig, counts: InterCounts) -> Result<InterLocalCodebook> {
    let permutation = if counts.residuals.is_empty() {
        CodingPermutation::identity(cfg.k)
    } else {
        learn_permutation(&DexelStats::estimate(&counts.residuals)?)?
    };
    Ok(InterLocalCodebook {
        descriptor_length: p,
        window: cfg.window,
        permutation,
        dx: FrequencyTable::from_counts(&counts.dx)?,
        dy: FrequencyTable::from_counts(&counts.dy)?,
        dscale: FrequencyTable::from_counts(&counts.dscale)?,
        dorientation: FrequencyTable::from_counts(&counts.dorientation)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::{synth_stream, SynthConfig};

    fn stream(duplication: f64, seed: u64) -> FeatureStream {
        synth_stream(&SynthConfig {
            descriptor_length: 64,
            frames: 6,
            min_features: 20,
            max_features: 30,
            duplication,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn trains_both_sections() {
        let s = stream(0.9, 1);
        let book = train_local_codebook(&[s], &LocalTrainingConfig::new(32, DexelRanking::identity(64))).unwrap();
        book.validate().unwrap();
        assert_eq!(book.k(), 32);
        // Near duplicates: zero residual bits dominate, so the first inter
        // dexel is far more likely zero than one.
        assert!(book.inter.permutation.first().probability(false) > 0.8);
    }

    #[test]
    fn no_inter_candidates_gives_identity_residual_order() {
        let mut s = stream(0.9, 2);
        s.frames.truncate(1);
        let book = train_local_codebook(&[s], &LocalTrainingConfig::new(16, DexelRanking::identity(64))).unwrap();
        assert_eq!(book.inter.permutation, CodingPermutation::identity(16));
    }

    #[test]
    fn rejects_bad_config() {
        let s = stream(0.5, 3);
        let cfg = LocalTrainingConfig::new(65, DexelRanking::identity(64));
        assert!(matches!(train_local_codebook(&[s], &cfg), Err(Error::Config(_))));
        assert!(matches!(train_local_codebook(&[], &LocalTrainingConfig::new(8, DexelRanking::identity(64))), Err(Error::EmptyTrainingSet)));
    }
}
