use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// Planar projective map with `h33 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    /// Normalizes so that `h33 = 1`; `None` when that is impossible or the
    /// matrix is singular.
    pub fn from_matrix(m: Matrix3<f64>) -> Option<Self> {
        let h33 = m[(2, 2)];
        if !h33.is_finite() || h33.abs() < 1e-12 {
            return None;
        }
        let m = m / h33;
        let det = m.determinant();
        (m.iter().all(|v| v.is_finite()) && det.abs() > 1e-12).then_some(Self { m })
    }

    /// Row-major entries.
    pub fn from_row_slice(values: &[f64; 9]) -> Option<Self> {
        Self::from_matrix(Matrix3::from_row_slice(values))
    }

    pub fn to_row_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = self.m[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn apply(&self, (x, y): Point) -> Option<Point> {
        let v = self.m * Vector3::new(x, y, 1.0);
        (v.z.abs() > 1e-12).then(|| (v.x / v.z, v.y / v.z))
    }

    pub fn inverse(&self) -> Option<Self> {
        self.m.try_inverse().and_then(Self::from_matrix)
    }

    /// `self` after `first`: maps `p` to `self(first(p))`.
    pub fn compose(&self, first: &Homography) -> Option<Self> {
        Self::from_matrix(self.m * first.m)
    }
}

fn distance(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Mean of the forward (`h(src)` vs `dst`) and backward (`h^-1(dst)` vs
/// `src`) transfer distances.
pub fn symmetric_transfer_error(h: &Homography, inverse: &Homography, src: Point, dst: Point) -> f64 {
    match (h.apply(src), inverse.apply(dst)) {
        (Some(f), Some(b)) => 0.5 * (distance(f, dst) + distance(b, src)),
        _ => f64::INFINITY,
    }
}

/// Similarity that moves the centroid to the origin and sets the mean
/// distance from it to sqrt(2).
fn normalizer(points: &[Point]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let (cx, cy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p.0, y + p.1));
    let (cx, cy) = (cx / n, cy / n);
    let mean = points.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / n;
    if mean < 1e-12 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, (x, y): Point) -> Point {
    (t[(0, 0)] * x + t[(0, 2)], t[(1, 1)] * y + t[(1, 2)])
}

/// Normalized direct linear transform: least-squares fit of `dst ~ H src`
/// over all correspondences (at least four).
pub fn fit_homography(src: &[Point], dst: &[Point]) -> Option<Homography> {
    if src.len() < 4 || src.len() != dst.len() {
        return None;
    }
    let ts = normalizer(src)?;
    let td = normalizer(dst)?;
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (i, (&s, &d)) in src.iter().zip(dst).enumerate() {
        let (x, y) = transform(&ts, s);
        let (u, v) = transform(&td, d);
        let rows = [
            [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u],
            [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v],
        ];
        for (r, row) in rows.iter().enumerate() {
            for (c, &val) in row.iter().enumerate() {
                a[(2 * i + r, c)] = val;
            }
        }
    }
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let k = eig.eigenvalues.iamin();
    let h = eig.eigenvectors.column(k);
    let hn = Matrix3::from_row_slice(h.as_slice());
    let m = td.try_inverse()? * hn * ts;
    Homography::from_matrix(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Symmetric transfer error below which a correspondence is an inlier, px.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            threshold: 3.0,
            seed: 0,
        }
    }
}

fn collinear(a: Point, b: Point, c: Point) -> bool {
    ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs() < 1e-6
}

fn degenerate(p: &[Point; 4]) -> bool {
    (0..4).any(|skip| {
        let q: Vec<Point> = (0..4).filter(|&i| i != skip).map(|i| p[i]).collect();
        collinear(q[0], q[1], q[2])
    })
}

fn inliers(h: &Homography, src: &[Point], dst: &[Point], threshold: f64) -> Vec<usize> {
    let Some(inv) = h.inverse() else { return Vec::new() };
    (0..src.len())
        .filter(|&i| symmetric_transfer_error(h, &inv, src[i], dst[i]) < threshold)
        .collect()
}

/// RANSAC over 4-point samples followed by a least-squares refit on the
/// largest consensus set. `None` when no sample gathers four inliers.
pub fn estimate_homography(src: &[Point], dst: &[Point], cfg: &RansacConfig) -> Result<Option<Homography>> {
    if src.len() != dst.len() {
        return Err(Error::Dimension {
            expected: src.len(),
            actual: dst.len(),
        });
    }
    if src.len() < 4 {
        return Err(Error::InsufficientMatches(src.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Homography, Vec<usize>)> = None;
    for _ in 0..cfg.iterations {
        let idx = sample(&mut rng, src.len(), 4);
        let pick = |pts: &[Point]| -> [Point; 4] { std::array::from_fn(|i| pts[idx.index(i)]) };
        let (s, d) = (pick(src), pick(dst));
        if degenerate(&s) || degenerate(&d) {
            continue;
        }
        let Some(h) = fit_homography(&s, &d) else { continue };
        let set = inliers(&h, src, dst, cfg.threshold);
        if best.as_ref().is_none_or(|(_, b)| set.len() > b.len()) {
            best = Some((h, set));
            if best.as_ref().is_some_and(|(_, b)| b.len() == src.len()) {
                break;
            }
        }
    }
    let Some((h, set)) = best.filter(|(_, set)| set.len() >= 4) else {
        return Ok(None);
    };
    let s: Vec<Point> = set.iter().map(|&i| src[i]).collect();
    let d: Vec<Point> = set.iter().map(|&i| dst[i]).collect();
    Ok(Some(fit_homography(&s, &d).unwrap_or(h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn truth() -> Homography {
        Homography::from_row_slice(&[1.02, 0.05, 12.0, -0.03, 0.98, -7.0, 2e-5, -1e-5, 1.0]).unwrap()
    }

    fn grid(n: usize) -> Vec<Point> {
        (0..n).map(|i| (40.0 + 37.0 * (i % 7) as f64, 30.0 + 29.0 * (i / 7) as f64)).collect()
    }

    #[test]
    fn identity_recovered() {
        let p = grid(10);
        let h = estimate_homography(&p, &p, &RansacConfig::default()).unwrap().unwrap();
        assert!((h.matrix() - Matrix3::identity()).abs().max() < 1e-6);
    }

    #[test]
    fn exact_correspondences_have_tiny_transfer_error() {
        let h0 = truth();
        let src = grid(12);
        let dst: Vec<Point> = src.iter().map(|&p| h0.apply(p).unwrap()).collect();
        let h = estimate_homography(&src, &dst, &RansacConfig::default()).unwrap().unwrap();
        let inv = h.inverse().unwrap();
        for (&s, &d) in src.iter().zip(&dst) {
            assert!(symmetric_transfer_error(&h, &inv, s, d) < 1e-6);
        }
    }

    #[test]
    fn outliers_rejected() {
        let h0 = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut src = grid(20);
        let mut dst: Vec<Point> = src.iter().map(|&p| h0.apply(p).unwrap()).collect();
        for _ in 0..10 {
            src.push((rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)));
            dst.push((rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)));
        }
        let h = estimate_homography(&src, &dst, &RansacConfig::default()).unwrap().unwrap();
        for p in [(100.0, 100.0), (500.0, 400.0), (320.0, 17.0)] {
            let e = distance(h.apply(p).unwrap(), h0.apply(p).unwrap());
            assert!(e < 0.5, "{e}");
        }
    }

    #[test]
    fn too_few_matches() {
        let p = grid(3);
        assert!(matches!(
            estimate_homography(&p, &p, &RansacConfig::default()),
            Err(Error::InsufficientMatches(3))
        ));
    }

    #[test]
    fn collinear_points_give_none() {
        let p: Vec<Point> = (0..8).map(|i| (i as f64, 2.0 * i as f64)).collect();
        assert!(estimate_homography(&p, &p, &RansacConfig::default()).unwrap().is_none());
    }
}
