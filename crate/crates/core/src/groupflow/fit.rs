//! Pivoted rigid alignment (Umeyama without scale).

use nalgebra::SVD;
use rand::seq::index::sample;
use rand::Rng;

use crate::deformation::TrajectorySet;
use crate::math::{vec3, Mat3, Vec3};

/// Relative singular-value floor below which the cross-covariance is treated
/// as rank-deficient (collinear or coincident points).
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidFit {
    pub rotation: Mat3,
    pub translation: Vec3,
    /// The rotation was under-determined and a translation-only fit was
    /// returned instead.
    pub degenerate: bool,
}

impl RigidFit {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            degenerate: false,
        }
    }
}

/// Least-squares `(R, T)` minimizing `Σ ‖target_i - (R(source_i - pivot) + pivot + T)‖²`
/// over rotations (`det R = +1`) and translations.
///
/// Fewer than three points or a rank-deficient cross-covariance fall back to
/// `R = I` with `T` the centroid displacement.
pub fn fit_rigid(source: &[Vec3], target: &[Vec3], pivot: &Vec3) -> RigidFit {
    assert_eq!(
        source.len(),
        target.len(),
        "source and target must correspond"
    );
    let m = source.len();
    if m == 0 {
        return RigidFit::identity();
    }
    let inv = 1.0 / m as f64;
    let src_c = source.iter().fold(Vec3::zeros(), |a, p| a + (p - pivot)) * inv;
    let dst_c = target.iter().fold(Vec3::zeros(), |a, p| a + (p - pivot)) * inv;
    let fallback = RigidFit {
        rotation: Mat3::identity(),
        translation: dst_c - src_c,
        degenerate: true,
    };
    if m < 3 {
        return fallback;
    }
    let mut h = Mat3::zeros();
    for (s, d) in source.iter().zip(target) {
        let a = s - pivot - src_c;
        let b = d - pivot - dst_c;
        h += b * a.transpose();
    }
    let svd = SVD::new(h, true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return fallback;
    };
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let (s_max, s_mid) = (sv[order[0]], sv[order[1]]);
    if !(s_max > 0.0) || s_mid <= RANK_TOL * s_max {
        return fallback;
    }
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    let rotation = u * d * v_t;
    RigidFit {
        rotation,
        translation: dst_c - rotation * src_c,
        degenerate: false,
    }
}

/// `Σ ‖target_i - (R(source_i - pivot) + pivot + T)‖²`.
pub fn rigid_residual(source: &[Vec3], target: &[Vec3], pivot: &Vec3, r: &Mat3, t: &Vec3) -> f64 {
    source
        .iter()
        .zip(target)
        .map(|(s, d)| (d - (r * (s - pivot) + pivot + t)).norm_squared())
        .sum()
}

/// `min(members, n_max)` members drawn without replacement, in ascending
/// index order.
pub fn sample_members<R: Rng + ?Sized>(members: &[usize], n_max: usize, rng: &mut R) -> Vec<usize> {
    if members.len() <= n_max {
        return members.to_vec();
    }
    let mut picked: Vec<usize> = sample(rng, members.len(), n_max)
        .into_iter()
        .map(|k| members[k])
        .collect();
    picked.sort_unstable();
    picked
}

/// Fits the rigid motion of `sampled` members from frame 0 to `frame`,
/// pivoting about `h0`.
pub fn fit_group_frame(
    traj: &TrajectorySet,
    sampled: &[usize],
    h0: &Vec3,
    frame: usize,
) -> RigidFit {
    let source: Vec<Vec3> = sampled.iter().map(|&i| vec3(traj.get(i, 0))).collect();
    let target: Vec<Vec3> = sampled.iter().map(|&i| vec3(traj.get(i, frame))).collect();
    fit_rigid(&source, &target, h0)
}
