use crate::error::{Error, Result};
use crate::math;
use crate::model::{GeometricFeature, KeypointSet};

/// Layout statistics of an object's keypoints.
///
/// Per axis: mean, population standard deviation and the central moments of
/// order 1 to 3 (order 1 is identically zero and stored as exact zero).
/// The last two entries are the singular values, descending, of the 2 x N
/// centered coordinate matrix scaled by `1/sqrt(N)`.
pub fn geometric_feature(keypoints: &KeypointSet) -> GeometricFeature {
    geometric_feature_from_points(keypoints.points()).expect("keypoint sets are never empty")
}

pub fn geometric_feature_from_points(points: &[[f64; 2]]) -> Result<GeometricFeature> {
    if points.is_empty() {
        return Err(Error::Empty("keypoints"));
    }
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    for p in points {
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean[0] /= n;
    mean[1] /= n;

    let (mut m2, mut m3) = ([0.0; 2], [0.0; 2]);
    let mut cross = 0.0;
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        for a in 0..2 {
            m2[a] += d[a] * d[a];
            m3[a] += d[a] * d[a] * d[a];
        }
        cross += d[0] * d[1];
    }
    for a in 0..2 {
        m2[a] /= n;
        m3[a] /= n;
    }
    cross /= n;
    let sv = singular_values(points, mean, m2[0], m2[1], cross);

    let mut f = [0.0; GeometricFeature::DIM];
    f[0..2].copy_from_slice(&mean);
    f[2] = math::sqrt(m2[0]);
    f[3] = math::sqrt(m2[1]);
    // f[4..6] is the first central moment: exactly zero.
    f[6..8].copy_from_slice(&m2);
    f[8..10].copy_from_slice(&m3);
    f[10..12].copy_from_slice(&sv);
    Ok(GeometricFeature(f))
}

/// One Jacobi rotation orthogonalizes the two centered coordinate rows; the
/// row norms after rotation are the singular values. Working on the rows
/// keeps the small singular value accurate to the rounding of the
/// coordinates instead of the square root of it.
fn singular_values(points: &[[f64; 2]], mean: [f64; 2], sxx: f64, syy: f64, sxy: f64) -> [f64; 2] {
    let n = points.len() as f64;
    let (cs, sn) = if sxy == 0.0 {
        (1.0, 0.0)
    } else {
        let tau = (syy - sxx) / (2.0 * sxy);
        let t = if tau >= 0.0 {
            1.0 / (tau + math::sqrt(1.0 + tau * tau))
        } else {
            -1.0 / (-tau + math::sqrt(1.0 + tau * tau))
        };
        let cs = 1.0 / math::sqrt(1.0 + t * t);
        (cs, t * cs)
    };
    let (mut a, mut b) = (0.0, 0.0);
    for p in points {
        let dx = p[0] - mean[0];
        let dy = p[1] - mean[1];
        let u = cs * dx - sn * dy;
        let v = sn * dx + cs * dy;
        a += u * u;
        b += v * v;
    }
    let (a, b) = (math::sqrt(a / n), math::sqrt(b / n));
    if a >= b {
        [a, b]
    } else {
        [b, a]
    }
}
