//! Synthetic planar scenes with known inter-frame homographies, and the
//! homography-precision harness run on (decoded) feature streams.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::homography::{estimate_homography, Homography, Point, RansacConfig};
use super::matching::{match_features, DEFAULT_RATIO};
use crate::error::{Error, Result};
use crate::feature::{quantize_keypoint, BinaryDescriptor, FeatureStream, FrameFeatures, LocalFeature};
use crate::par;

/// Per-frame ground truth: the target's corners in the frame and the
/// homography from frame-0 coordinates to the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub corners: [Point; 4],
    pub homography: Homography,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub frames: Vec<FrameTruth>,
}

const TRUTH_HEADER: [&str; 17] = [
    "x0", "y0", "x1", "y1", "x2", "y2", "x3", "y3", "h11", "h12", "h13", "h21", "h22", "h23", "h31", "h32", "h33",
];

impl GroundTruth {
    /// CSV with one row per frame: 8 corner columns, then 9 homography
    /// entries in row-major order.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(TRUTH_HEADER)?;
        for f in &self.frames {
            let row = f
                .corners
                .iter()
                .flat_map(|&(x, y)| [x, y])
                .chain(f.homography.to_row_array())
                .map(|v| format!("{v:e}"));
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let mut frames = Vec::new();
        for (i, record) in r.records().enumerate() {
            let record = record?;
            let bad = |msg: String| Error::Config(format!("ground truth row {}: {msg}", i + 1));
            if record.len() != 17 {
                return Err(bad(format!("expected 17 columns, got {}", record.len())));
            }
            let v: Vec<f64> = record
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
                .collect::<Result<_>>()?;
            let corners = std::array::from_fn(|k| (v[2 * k], v[2 * k + 1]));
            let h: [f64; 9] = v[8..].try_into().expect("9 entries");
            let homography = Homography::from_row_slice(&h).ok_or_else(|| bad("singular homography".into()))?;
            frames.push(FrameTruth { corners, homography });
        }
        Ok(Self { frames })
    }

    /// True map from frame `n` to frame `n + 1`.
    pub fn pair_homography(&self, n: usize) -> Option<Homography> {
        let next = &self.frames.get(n + 1)?.homography;
        next.compose(&self.frames[n].homography.inverse()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarConfig {
    pub descriptor_length: usize,
    pub frames: usize,
    /// Feature points on the planar target.
    pub inliers: usize,
    /// Fraction of each frame's features that are clutter.
    pub outlier_fraction: f64,
    /// Standard deviation of keypoint noise, px.
    pub noise: f64,
    /// Per-frame probability of flipping each dexel of a target feature.
    pub flip_probability: f64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for PlanarConfig {
    fn default() -> Self {
        Self {
            descriptor_length: 512,
            frames: 101,
            inliers: 50,
            outlier_fraction: 0.2,
            noise: 0.5,
            flip_probability: 0.1,
            width: 640,
            height: 480,
            seed: 0,
        }
    }
}

impl PlanarConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.descriptor_length == 0 || self.descriptor_length > u16::MAX as usize {
            return fail("descriptor length must be in 1..=65535");
        }
        if self.frames < 2 || self.inliers < 4 {
            return fail("need at least 2 frames and 4 target features");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return fail("outlier fraction must be in [0, 1)");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(0.0..=1.0).contains(&self.flip_probability) {
            return fail("noise must be >= 0 and flip probability in [0, 1]");
        }
        if self.width < 64 || self.height < 64 {
            return fail("frame must be at least 64x64");
        }
        Ok(())
    }

    /// Clutter features per frame: `round(inliers * f / (1 - f))`.
    pub fn outliers(&self) -> usize {
        (self.inliers as f64 * self.outlier_fraction / (1.0 - self.outlier_fraction)).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct PlanarSequence {
    pub stream: FeatureStream,
    pub truth: GroundTruth,
}

/// Smooth camera motion: rotation, zoom, translation and a little
/// perspective, all oscillating with seeded phases about the frame centre.
fn motion(n: usize, phases: &[f64; 6], w: f64, h: f64) -> Homography {
    let t = n as f64;
    let angle = 0.08 * (t / 17.0 + phases[0]).sin();
    let zoom = 1.0 + 0.06 * (t / 23.0 + phases[1]).sin();
    let tx = 0.05 * w * (t / 13.0 + phases[2]).sin();
    let ty = 0.05 * h * (t / 19.0 + phases[3]).sin();
    let px = 1e-4 * (t / 11.0 + phases[4]).sin() / w.max(h) * 100.0;
    let py = 1e-4 * (t / 29.0 + phases[5]).sin() / w.max(h) * 100.0;
    let (c, s) = (angle.cos() * zoom, angle.sin() * zoom);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let centre = nalgebra::Matrix3::new(1.0, 0.0, cx, 0.0, 1.0, cy, 0.0, 0.0, 1.0);
    let uncentre = nalgebra::Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
    let core = nalgebra::Matrix3::new(c, -s, tx, s, c, ty, px, py, 1.0);
    Homography::from_matrix(centre * core * uncentre).expect("small motion is invertible")
}

pub fn synth_planar(cfg: &PlanarConfig) -> Result<PlanarSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let phases: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
    let target = [(0.25 * w, 0.25 * h), (0.75 * w, 0.25 * h), (0.75 * w, 0.75 * h), (0.25 * w, 0.75 * h)];
    let points: Vec<(Point, f64, f64, BinaryDescriptor)> = (0..cfg.inliers)
        .map(|_| {
            let p = (rng.random_range(target[0].0..target[1].0), rng.random_range(target[0].1..target[2].1));
            let scale = rng.random_range(2.0..8.0);
            let orientation = rng.random_range(0.0..2.0 * PI);
            let d = BinaryDescriptor::from_bits((0..cfg.descriptor_length).map(|_| rng.random_bool(0.5)));
            (p, scale, orientation, d)
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let in_frame = |(x, y): Point| x >= 0.0 && y >= 0.0 && x < w && y < h;
    let mut stream = FeatureStream::new(cfg.descriptor_length);
    let mut truth = GroundTruth::default();
    for n in 0..cfg.frames {
        let hn = motion(n, &phases, w, h);
        let corners = target.map(|c| hn.apply(c).expect("finite"));
        truth.frames.push(FrameTruth { corners, homography: hn });
        let mut features = Vec::with_capacity(cfg.inliers + cfg.outliers());
        for (p, scale, orientation, d) in &points {
            let (x, y) = hn.apply(*p).expect("finite");
            let q = (x + noise.sample(&mut rng), y + noise.sample(&mut rng));
            let mut d = d.clone();
            for j in 0..d.len() {
                if rng.random_bool(cfg.flip_probability) {
                    d.flip(j);
                }
            }
            if in_frame(q) {
                features.push(LocalFeature::new(quantize_keypoint(q.0, q.1, *scale, *orientation)?, d));
            }
        }
        for _ in 0..cfg.outliers() {
            let kp = quantize_keypoint(
                rng.random_range(0.0..w),
                rng.random_range(0.0..h),
                rng.random_range(2.0..8.0),
                rng.random_range(0.0..2.0 * PI),
            )?;
            let d = BinaryDescriptor::from_bits((0..cfg.descriptor_length).map(|_| rng.random_bool(0.5)));
            features.push(LocalFeature::new(kp, d));
        }
        let mut frame = FrameFeatures::new(n as u32, features);
        frame.sort_raster();
        stream.frames.push(frame);
    }
    stream.metadata = BTreeMap::from([
        ("width".to_string(), cfg.width.to_string()),
        ("height".to_string(), cfg.height.to_string()),
        ("generator".to_string(), "planar".to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
    ]);
    Ok(PlanarSequence { stream, truth })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyEvalConfig {
    pub ratio: f64,
    pub ransac: RansacConfig,
    /// Backprojection error below which an estimate counts as correct, px.
    pub epsilon: f64,
}

impl Default for HomographyEvalConfig {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_RATIO,
            ransac: RansacConfig::default(),
            epsilon: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionReport {
    /// Backprojection error per consecutive frame pair; `None` when no
    /// homography could be estimated.
    pub errors: Vec<Option<f64>>,
    pub epsilon: f64,
}

impl PrecisionReport {
    pub fn correct(&self) -> usize {
        self.errors.iter().filter(|e| e.is_some_and(|e| e < self.epsilon)).count()
    }

    pub fn precision(&self) -> f64 {
        if self.errors.is_empty() {
            return 0.0;
        }
        self.correct() as f64 / self.errors.len() as f64
    }
}

/// Mean distance between the corners of frame `n` warped by `h` and the true
/// corners of frame `n + 1`.
pub fn backprojection_error(h: &Homography, from: &[Point; 4], to: &[Point; 4]) -> Option<f64> {
    let mut sum = 0.0;
    for (c, t) in from.iter().zip(to) {
        let p = h.apply(*c)?;
        sum += (p.0 - t.0).hypot(p.1 - t.1);
    }
    Some(sum / 4.0)
}

fn pair_error(stream: &FeatureStream, truth: &GroundTruth, n: usize, cfg: &HomographyEvalConfig) -> Result<Option<f64>> {
    let (prev, next) = (&stream.frames[n], &stream.frames[n + 1]);
    let matches = match match_features(next, prev, cfg.ratio) {
        Ok(m) => m,
        Err(Error::InsufficientCandidates(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let src: Vec<Point> = matches.iter().map(|m| prev.features[m.train].keypoint.position()).collect();
    let dst: Vec<Point> = matches.iter().map(|m| next.features[m.query].keypoint.position()).collect();
    let ransac = RansacConfig {
        seed: cfg.ransac.seed.wrapping_add(n as u64),
        ..cfg.ransac
    };
    let h = match estimate_homography(&src, &dst, &ransac) {
        Ok(h) => h,
        Err(Error::InsufficientMatches(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(h.and_then(|h| backprojection_error(&h, &truth.frames[n].corners, &truth.frames[n + 1].corners)))
}

/// Share of consecutive frame pairs whose estimated homography backprojects
/// the target corners within `epsilon` pixels.
pub fn homography_precision(stream: &FeatureStream, truth: &GroundTruth, cfg: &HomographyEvalConfig) -> Result<PrecisionReport> {
    if truth.frames.len() != stream.frames.len() {
        return Err(Error::Config(format!(
            "ground truth has {} frames, stream has {}",
            truth.frames.len(),
            stream.frames.len()
        )));
    }
    let pairs = stream.frames.len().saturating_sub(1);
    let errors = par::map_range(pairs, |n| pair_error(stream, truth, n, cfg))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(PrecisionReport {
        errors,
        epsilon: cfg.epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PlanarConfig {
        PlanarConfig {
            descriptor_length: 128,
            frames: 12,
            seed: 4,
            ..PlanarConfig::default()
        }
    }

    #[test]
    fn outlier_count_rounds() {
        assert_eq!(PlanarConfig::default().outliers(), 13);
        let none = PlanarConfig {
            outlier_fraction: 0.0,
            ..PlanarConfig::default()
        };
        assert_eq!(none.outliers(), 0);
    }

    #[test]
    fn truth_is_consistent() {
        let seq = synth_planar(&small()).unwrap();
        seq.stream.validate().unwrap();
        for n in 0..seq.truth.frames.len() - 1 {
            let h = seq.truth.pair_homography(n).unwrap();
            let e = backprojection_error(&h, &seq.truth.frames[n].corners, &seq.truth.frames[n + 1].corners).unwrap();
            assert!(e < 1e-6);
        }
    }

    #[test]
    fn clean_sequence_is_fully_precise() {
        let cfg = PlanarConfig {
            noise: 0.0,
            flip_probability: 0.0,
            outlier_fraction: 0.0,
            ..small()
        };
        let seq = synth_planar(&cfg).unwrap();
        let r = homography_precision(&seq.stream, &seq.truth, &HomographyEvalConfig::default()).unwrap();
        assert_eq!(r.precision(), 1.0);
    }

    #[test]
    fn random_descriptors_break_estimation() {
        let seq = synth_planar(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut broken = seq.stream.clone();
        for f in broken.frames.iter_mut().flat_map(|f| f.features.iter_mut()) {
            f.descriptor = BinaryDescriptor::from_bits((0..128).map(|_| rng.random_bool(0.5)));
        }
        let r = homography_precision(&broken, &seq.truth, &HomographyEvalConfig::default()).unwrap();
        assert!(r.precision() <= 0.1, "{}", r.precision());
    }

    #[test]
    fn truth_csv_round_trip() {
        let seq = synth_planar(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.csv");
        seq.truth.write_csv(&path).unwrap();
        let back = GroundTruth::read_csv(&path).unwrap();
        assert_eq!(back, seq.truth);
    }
}
