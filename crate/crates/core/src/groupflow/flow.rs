//! Evaluating a fitted group flow at a timestamp.

use super::GroupFlowModel;
use crate::deformation::bracket;
use crate::math::{mat_to_quat, quat_mul, quat_normalize, slerp_mat, vec3, Mat3, Vec3};
use crate::{Error, Result};

/// Per-group transform at one timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub pivot: Vec3,
}

impl GroupTransform {
    pub fn is_identity(&self) -> bool {
        self.rotation == Mat3::identity() && self.translation == Vec3::zeros()
    }

    /// `R(p - h) + h + T`; exactly `p` for the identity transform.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        if self.is_identity() {
            return p;
        }
        let q = self.rotation * (vec3(p) - self.pivot) + self.pivot + self.translation;
        [q.x, q.y, q.z]
    }
}

/// Every group's transform at `t`: stored frames are used verbatim, other
/// times slerp the rotation and lerp the translation between the bracketing
/// frames, clamping outside the stored range.
pub fn group_transforms_at(model: &GroupFlowModel, t: f64) -> Vec<GroupTransform> {
    let (k, f) = bracket(&model.timesteps, t);
    (0..model.groups())
        .map(|j| {
            let (r0, t0) = model.transform(k, j);
            let (rotation, translation) = if f == 0.0 {
                (*r0, *t0)
            } else {
                let (r1, t1) = model.transform(k + 1, j);
                (slerp_mat(r0, r1, f), t0 * (1.0 - f) + t1 * f)
            };
            GroupTransform {
                rotation,
                translation,
                pivot: vec3(model.control_points[j]),
            }
        })
        .collect()
}

fn check_len(n: usize, model: &GroupFlowModel) -> Result<()> {
    if n != model.assignment.len() {
        return Err(Error::DimensionMismatch(format!(
            "{n} Gaussians but assignment covers {}",
            model.assignment.len()
        )));
    }
    Ok(())
}

/// Poses canonical means with their group's rigid transform at `t`.
pub fn apply_group_flow(
    canonical_means: &[[f64; 3]],
    model: &GroupFlowModel,
    t: f64,
) -> Result<Vec<[f64; 3]>> {
    check_len(canonical_means.len(), model)?;
    let xf = group_transforms_at(model, t);
    Ok(canonical_means
        .iter()
        .zip(&model.assignment)
        .map(|(p, &g)| xf[g as usize].apply(*p))
        .collect())
}

/// Rotates each canonical quaternion by its group's rotation at `t`.
pub fn rotation_offset(
    canonical_rots: &[[f64; 4]],
    model: &GroupFlowModel,
    t: f64,
) -> Result<Vec<[f64; 4]>> {
    check_len(canonical_rots.len(), model)?;
    let xf = group_transforms_at(model, t);
    let quats: Vec<Option<[f64; 4]>> = xf
        .iter()
        .map(|x| (x.rotation != Mat3::identity()).then(|| mat_to_quat(&x.rotation)))
        .collect();
    Ok(canonical_rots
        .iter()
        .zip(&model.assignment)
        .map(|(r, &g)| match quats[g as usize] {
            None => *r,
            Some(q) => quat_normalize(quat_mul(q, *r)),
        })
        .collect())
}

/// The `k` controls nearest to `p` at the canonical frame with normalized
/// Gaussian-kernel weights `exp(-d²/2σ²)`. Ties in distance go to the lower
/// control index.
pub fn lbs_weights(
    p: [f64; 3],
    model: &GroupFlowModel,
    radii: &[f64],
    k: usize,
) -> Vec<(usize, f64)> {
    let mut dist: Vec<(f64, usize)> = model
        .control_points
        .iter()
        .enumerate()
        .map(|(j, h)| {
            let d2 = (p[0] - h[0]).powi(2) + (p[1] - h[1]).powi(2) + (p[2] - h[2]).powi(2);
            (d2, j)
        })
        .collect();
    let k = k.min(dist.len());
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let exps: Vec<f64> = dist[..k]
        .iter()
        .map(|&(d2, j)| -d2 / (2.0 * radii[j] * radii[j]))
        .collect();
    // Shift by the largest exponent so the weights cannot all underflow.
    let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = exps.iter().map(|e| (e - top).exp()).collect();
    let sum: f64 = raw.iter().sum();
    dist[..k]
        .iter()
        .zip(raw)
        .map(|(&(_, j), w)| (j, w / sum))
        .collect()
}

/// Linear blend of the `k` nearest groups' transforms.
pub fn lbs_apply(
    canonical_means: &[[f64; 3]],
    model: &GroupFlowModel,
    radii: &[f64],
    k: usize,
    t: f64,
) -> Result<Vec<[f64; 3]>> {
    if k == 0 {
        return Err(Error::Config("LBS needs at least one neighbour".into()));
    }
    if radii.len() != model.groups() {
        return Err(Error::DimensionMismatch(format!(
            "{} radii for {} groups",
            radii.len(),
            model.groups()
        )));
    }
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(Error::Config(format!("LBS radius {r} must be positive")));
    }
    let xf = group_transforms_at(model, t);
    Ok(canonical_means
        .iter()
        .map(|&p| {
            let weights = lbs_weights(p, model, radii, k);
            let mut acc: Option<[f64; 3]> = None;
            for (j, w) in weights {
                let q = xf[j].apply(p);
                let term = [w * q[0], w * q[1], w * q[2]];
                acc = Some(match acc {
                    None => term,
                    Some(a) => [a[0] + term[0], a[1] + term[1], a[2] + term[2]],
                });
            }
            acc.expect("k >= 1 and at least one group")
        })
        .collect())
}

/// Nearest-control assignment at the canonical frame, ties to the lower
/// index.
pub fn nearest_control_assignment(
    canonical_means: &[[f64; 3]],
    model: &GroupFlowModel,
) -> Vec<u32> {
    canonical_means
        .iter()
        .map(|&p| lbs_weights(p, model, &vec![1.0; model.groups()], 1)[0].0 as u32)
        .collect()
}
