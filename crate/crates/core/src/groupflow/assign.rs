use rayon::prelude::*;

use crate::deformation::TrajectorySet;
use crate::{Error, Result};

/// `λ·std_t(d_t) + (1-λ)·mean_t(d_t)` with `d_t = ‖a_t - b_t‖` and the
/// population standard deviation.
pub fn trajectory_similarity(a: &[[f64; 3]], b: &[[f64; 3]], lambda_r: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "trajectories have {} and {} frames",
            a.len(),
            b.len()
        )));
    }
    Ok(similarity_unchecked(a, b, lambda_r))
}

pub(crate) fn similarity_unchecked(a: &[[f64; 3]], b: &[[f64; 3]], lambda_r: f64) -> f64 {
    let f = a.len() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (p, q) in a.iter().zip(b) {
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        sum += d2.sqrt();
        sum_sq += d2;
    }
    let mean = sum / f;
    // E[d²] - E[d]² avoids a second pass; clamp the rounding residue.
    let var = (sum_sq / f - mean * mean).max(0.0);
    lambda_r * var.sqrt() + (1.0 - lambda_r) * mean
}

/// Assigns every trajectory to the control whose trajectory is most
/// similar, ties going to the lowest control slot.
pub fn assign_groups(
    trajectories: &TrajectorySet,
    control_indices: &[usize],
    lambda_r: f64,
) -> Result<Vec<u32>> {
    if control_indices.is_empty() {
        return Err(Error::Config(
            "assignment needs at least one control point".into(),
        ));
    }
    if let Some(&bad) = control_indices.iter().find(|&&c| c >= trajectories.len()) {
        return Err(Error::Config(format!("control index {bad} out of range")));
    }
    let controls: Vec<&[[f64; 3]]> = control_indices
        .iter()
        .map(|&c| trajectories.row(c))
        .collect();
    Ok((0..trajectories.len())
        .into_par_iter()
        .map(|i| {
            let row = trajectories.row(i);
            let mut best = 0u32;
            let mut best_s = f64::INFINITY;
            for (j, ctrl) in controls.iter().enumerate() {
                let s = similarity_unchecked(row, ctrl, lambda_r);
                if s < best_s {
                    best_s = s;
                    best = j as u32;
                }
            }
            best
        })
        .collect())
}
