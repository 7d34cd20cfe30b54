//! Seeded generator of temporally correlated feature streams.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{quantize_keypoint, BinaryDescriptor, FeatureStream, FrameFeatures, LocalFeature};
use crate::error::{Error, Result};

/// How fresh descriptors are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DexelSource {
    /// Every dexel is an independent Bernoulli(p_one).
    Independent { p_one: f64 },
    /// First-order Markov chain along the dexel index.
    Markov {
        p_first_one: f64,
        p_one_after_zero: f64,
        p_one_after_one: f64,
    },
}

impl DexelSource {
    fn probabilities(&self) -> Vec<f64> {
        match *self {
            DexelSource::Independent { p_one } => vec![p_one],
            DexelSource::Markov {
                p_first_one,
                p_one_after_zero,
                p_one_after_one,
            } => vec![p_first_one, p_one_after_zero, p_one_after_one],
        }
    }

    pub fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> BinaryDescriptor {
        match *self {
            DexelSource::Independent { p_one } => {
                BinaryDescriptor::from_bits((0..len).map(|_| rng.random_bool(p_one)))
            }
            DexelSource::Markov {
                p_first_one,
                p_one_after_zero,
                p_one_after_one,
            } => {
                let mut prev = false;
                BinaryDescriptor::from_bits((0..len).map(|j| {
                    let p = match (j, prev) {
                        (0, _) => p_first_one,
                        (_, false) => p_one_after_zero,
                        (_, true) => p_one_after_one,
                    };
                    prev = rng.random_bool(p);
                    prev
                }))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub descriptor_length: usize,
    pub frames: usize,
    /// Inclusive range for the feature count of frame 0; later frames keep
    /// that count.
    pub min_features: usize,
    pub max_features: usize,
    pub source: DexelSource,
    /// Probability that each feature of frame n-1 reappears in frame n.
    pub duplication: f64,
    /// Per-dexel flip probability applied to reappearing features.
    pub flip_probability: f64,
    /// Global per-frame keypoint motion in pixels.
    pub drift: (f64, f64),
    /// Standard deviation of per-feature position noise in pixels.
    pub jitter: f64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            descriptor_length: 512,
            frames: 30,
            min_features: 50,
            max_features: 100,
            source: DexelSource::Markov {
                p_first_one: 0.5,
                p_one_after_zero: 0.3,
                p_one_after_one: 0.7,
            },
            duplication: 0.9,
            flip_probability: 0.02,
            drift: (1.0, 0.5),
            jitter: 0.25,
            width: 640,
            height: 480,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut probs = self.source.probabilities();
        probs.extend([self.duplication, self.flip_probability]);
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("probability {p} outside [0, 1]")));
        }
        if self.descriptor_length == 0 || self.descriptor_length > u16::MAX as usize {
            return Err(Error::Config("descriptor length must be in 1..=65535".into()));
        }
        if self.min_features > self.max_features {
            return Err(Error::Config("min_features exceeds max_features".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("frame size must be positive".into()));
        }
        if !(self.jitter >= 0.0 && self.drift.0.is_finite() && self.drift.1.is_finite()) {
            return Err(Error::Config("drift and jitter must be finite, jitter >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct RealKeypoint {
    x: f64,
    y: f64,
    scale: f64,
    orientation: f64,
}

/// Generates a stream from `config`; identical configs give identical
/// streams. Frames come out raster-sorted.
pub fn synth_stream(config: &SynthConfig) -> Result<FeatureStream> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let p = config.descriptor_length;
    let (w, h) = (config.width as f64, config.height as f64);
    let noise = Normal::new(0.0, config.jitter.max(f64::MIN_POSITIVE)).expect("valid sigma");

    let mut stream = FeatureStream::new(p);
    stream.metadata.insert("width".into(), config.width.to_string());
    stream.metadata.insert("height".into(), config.height.to_string());
    stream.metadata.insert("generator".into(), "synth".into());
    stream.metadata.insert("seed".into(), config.seed.to_string());

    let mut prev: Vec<(RealKeypoint, BinaryDescriptor)> = Vec::new();
    for n in 0..config.frames {
        // After frame 0 fresh features only replace the ones that vanished.
        let target = if n == 0 {
            rng.random_range(config.min_features..=config.max_features)
        } else {
            prev.len()
        };
        let mut current = Vec::with_capacity(target);
        for (kp, d) in &prev {
            if !rng.random_bool(config.duplication) {
                continue;
            }
            let mut kp = *kp;
            if config.jitter > 0.0 {
                kp.x += noise.sample(&mut rng);
                kp.y += noise.sample(&mut rng);
            }
            kp.x = (kp.x + config.drift.0).clamp(0.0, w - 0.25);
            kp.y = (kp.y + config.drift.1).clamp(0.0, h - 0.25);
            let mut d = d.clone();
            if config.flip_probability > 0.0 {
                for j in 0..p {
                    if rng.random_bool(config.flip_probability) {
                        d.flip(j);
                    }
                }
            }
            current.push((kp, d));
        }
        while current.len() < target {
            let kp = RealKeypoint {
                x: rng.random_range(0.0..w),
                y: rng.random_range(0.0..h),
                scale: rng.random_range(1.5..12.0),
                orientation: rng.random_range(0.0..2.0 * PI),
            };
            current.push((kp, config.source.sample(p, &mut rng)));
        }
        let features = current
            .iter()
            .map(|(kp, d)| {
                quantize_keypoint(kp.x, kp.y, kp.scale, kp.orientation)
                    .map(|q| LocalFeature::new(q, d.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut frame = FrameFeatures::new(n as u32, features);
        frame.sort_raster();
        stream.frames.push(frame);
        prev = current;
    }
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            descriptor_length: 64,
            frames: 5,
            min_features: 10,
            max_features: 20,
            ..Default::default()
        }
    }

    #[test]
    fn static_scene_repeats_frame_zero() {
        let cfg = SynthConfig {
            duplication: 1.0,
            flip_probability: 0.0,
            drift: (0.0, 0.0),
            jitter: 0.0,
            ..small()
        };
        let s = synth_stream(&cfg).unwrap();
        for f in &s.frames[1..] {
            assert_eq!(f.features, s.frames[0].features);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synth_stream(&small()).unwrap();
        let b = synth_stream(&small()).unwrap();
        assert_eq!(a, b);
        let c = synth_stream(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fair_marginal_within_three_sigma() {
        let cfg = SynthConfig {
            descriptor_length: 1000,
            frames: 1,
            min_features: 100,
            max_features: 100,
            source: DexelSource::Independent { p_one: 0.5 },
            ..Default::default()
        };
        let s = synth_stream(&cfg).unwrap();
        let n = 100_000f64;
        let ones: u32 = s.descriptors().map(|d| d.count_ones()).sum();
        let sigma = (n * 0.25).sqrt();
        assert!((ones as f64 - n / 2.0).abs() < 3.0 * sigma, "ones = {ones}");
    }

    #[test]
    fn rejects_bad_probabilities() {
        let cfg = SynthConfig {
            flip_probability: 1.5,
            ..small()
        };
        assert!(matches!(synth_stream(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig {
            source: DexelSource::Independent { p_one: -0.1 },
            ..small()
        };
        assert!(matches!(synth_stream(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn frames_are_raster_sorted_and_valid() {
        let s = synth_stream(&small()).unwrap();
        s.validate().unwrap();
        assert!(s.frames.iter().all(|f| f.is_raster_sorted()));
        assert!(s.frames.iter().all(|f| f.len() <= 20));
    }
}
