//! Gradient refinement of group flows against sampled trajectories.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::GroupFlowModel;
use crate::deformation::TrajectorySet;
use crate::math::{mat_to_quat, quat_to_mat, so3_exp, vec3, Mat3, Vec3};
use crate::{Error, Result};

const MAX_STEP: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Total loss after each iteration.
    pub loss_history: Vec<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// One `(group, frame)` block: the member pairs `(μ⁰ - h, μᵗ)` and pivot.
struct Block {
    slot: usize,
    pivot: Vec3,
    source: Vec<Vec3>,
    target: Vec<Vec3>,
}

impl Block {
    fn loss(&self, r: &Mat3, t: &Vec3) -> f64 {
        self.source
            .iter()
            .zip(&self.target)
            .map(|(s, q)| (r * s + self.pivot + t - q).norm_squared())
            .sum()
    }

    /// `(L, dL/dω, dL/dT)` for the left increment `R ← exp(ω)R`.
    fn gradient(&self, r: &Mat3, t: &Vec3) -> (f64, Vec3, Vec3) {
        let mut loss = 0.0;
        let mut g_w = Vec3::zeros();
        let mut g_t = Vec3::zeros();
        for (s, q) in self.source.iter().zip(&self.target) {
            let rs = r * s;
            let res = rs + self.pivot + t - q;
            loss += res.norm_squared();
            g_w += 2.0 * rs.cross(&res);
            g_t += 2.0 * res;
        }
        (loss, g_w, g_t)
    }
}

fn check(model: &GroupFlowModel, traj: &TrajectorySet) -> Result<()> {
    if model.len() != traj.len() {
        return Err(Error::DimensionMismatch(format!(
            "model covers {} Gaussians, trajectories {}",
            model.len(),
            traj.len()
        )));
    }
    if model.timesteps != traj.timesteps() {
        return Err(Error::DimensionMismatch(
            "model and trajectory timesteps differ".into(),
        ));
    }
    Ok(())
}

fn blocks(model: &GroupFlowModel, traj: &TrajectorySet) -> Vec<Block> {
    let j = model.groups();
    let members = model.members();
    let mut out = Vec::new();
    for k in 1..model.frames() {
        for (g, m) in members.iter().enumerate() {
            if m.is_empty() {
                continue;
            }
            let pivot = vec3(model.control_points[g]);
            out.push(Block {
                slot: k * j + g,
                pivot,
                source: m.iter().map(|&i| vec3(traj.get(i, 0)) - pivot).collect(),
                target: m.iter().map(|&i| vec3(traj.get(i, k))).collect(),
            });
        }
    }
    out
}

/// `Σ_i Σ_k ‖μ̂_i^k - μ_i^k‖²` over the stored frames.
pub fn trajectory_loss(model: &GroupFlowModel, traj: &TrajectorySet) -> Result<f64> {
    check(model, traj)?;
    Ok(blocks(model, traj)
        .par_iter()
        .map(|b| b.loss(&model.rotations[b.slot], &model.translations[b.slot]))
        .collect::<Vec<_>>()
        .iter()
        .sum())
}

/// The trajectory loss and its gradient per transform slot: `[dω; dT]` for
/// the left axis-angle increment of the rotation and the translation. The
/// canonical frame's entries are zero.
pub fn trajectory_loss_gradient(
    model: &GroupFlowModel,
    traj: &TrajectorySet,
) -> Result<(f64, Vec<[f64; 6]>)> {
    check(model, traj)?;
    let mut grad = vec![[0.0; 6]; model.rotations.len()];
    let mut loss = 0.0;
    for b in blocks(model, traj) {
        let (l, gw, gt) = b.gradient(&model.rotations[b.slot], &model.translations[b.slot]);
        loss += l;
        grad[b.slot] = [gw.x, gw.y, gw.z, gt.x, gt.y, gt.z];
    }
    Ok((loss, grad))
}

fn reorthonormalize(r: &Mat3) -> Mat3 {
    quat_to_mat(mat_to_quat(r))
}

/// Gradient descent on the mean per-block trajectory loss. Each block keeps
/// its own step size, halved when a step would raise its loss and grown by
/// half after an accepted step, so the total loss never increases.
pub fn refine_flows(
    model: &GroupFlowModel,
    traj: &TrajectorySet,
    iters: usize,
    step: f64,
) -> Result<(GroupFlowModel, RefineReport)> {
    check(model, traj)?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Config(format!(
            "refinement step {step} must be positive"
        )));
    }
    let blocks = blocks(model, traj);
    let mut state: Vec<(Mat3, Vec3, f64, f64)> = blocks
        .iter()
        .map(|b| {
            let (r, t) = (model.rotations[b.slot], model.translations[b.slot]);
            (r, t, b.loss(&r, &t), step)
        })
        .collect();
    let initial_loss: f64 = state.iter().map(|s| s.2).sum();
    let mut history = Vec::with_capacity(iters);
    let (mut accepted, mut rejected) = (0, 0);
    for _ in 0..iters {
        let outcomes: Vec<bool> = blocks
            .par_iter()
            .zip(state.par_iter_mut())
            .map(|(b, (r, t, loss, s))| {
                if *loss == 0.0 {
                    return true;
                }
                let inv = 1.0 / b.source.len() as f64;
                let (_, gw, gt) = b.gradient(r, t);
                let r_new = reorthonormalize(&(so3_exp(&(-*s * inv * gw)) * *r));
                let t_new = *t - *s * inv * gt;
                let l_new = b.loss(&r_new, &t_new);
                if l_new <= *loss {
                    *r = r_new;
                    *t = t_new;
                    *loss = l_new;
                    *s = (*s * 1.5).min(MAX_STEP);
                    true
                } else {
                    *s *= 0.5;
                    false
                }
            })
            .collect();
        let n_acc = outcomes.iter().filter(|&&a| a).count();
        accepted += n_acc;
        rejected += outcomes.len() - n_acc;
        history.push(state.iter().map(|s| s.2).sum());
    }
    let mut out = model.clone();
    for (b, (r, t, _, _)) in blocks.iter().zip(&state) {
        out.rotations[b.slot] = *r;
        out.translations[b.slot] = *t;
    }
    let final_loss = state.iter().map(|s| s.2).sum();
    Ok((
        out,
        RefineReport {
            iterations: iters,
            initial_loss,
            final_loss,
            loss_history: history,
            accepted_steps: accepted,
            rejected_steps: rejected,
        },
    ))
}
