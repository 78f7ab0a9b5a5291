//! Motion grouping: control points, trajectory-similarity assignment and
//! per-group rigid flows.

mod assign;
mod fit;
mod flow;
mod fps;
mod io;
mod refine;

pub use assign::{assign_groups, trajectory_similarity};
pub use fit::{fit_group_frame, fit_rigid, rigid_residual, sample_members, RigidFit};
pub use flow::{
    apply_group_flow, group_transforms_at, lbs_apply, lbs_weights, nearest_control_assignment,
    rotation_offset, GroupTransform,
};
pub use fps::farthest_point_sample;
pub use io::{gflw_len, load_groupflow, read_groupflow, save_groupflow, write_groupflow};
pub use refine::{refine_flows, trajectory_loss, trajectory_loss_gradient, RefineReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deformation::{
    check_timesteps, sample_trajectories, Deformation, DeformationField, TrajectorySet,
};
use crate::gaussian_model::{GaussianCloud, TrainingView};
use crate::math::{mat_to_quat, orthonormality_error, vec3, Mat3, Vec3};
use crate::{Error, Result};

/// Tolerance on `‖RᵀR - I‖∞` for stored rotations.
pub const ORTHO_TOL: f64 = 1e-6;

/// Control points, per-frame per-group rigid transforms and the group of
/// every Gaussian. Transforms are stored frame-major: slot `k·J + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFlowModel {
    pub control_points: Vec<[f64; 3]>,
    pub rotations: Vec<Mat3>,
    pub translations: Vec<Vec3>,
    pub assignment: Vec<u32>,
    pub lambda_r: f64,
    pub timesteps: Vec<f64>,
}

impl GroupFlowModel {
    /// Identity transforms at every frame.
    pub fn identity(
        control_points: Vec<[f64; 3]>,
        assignment: Vec<u32>,
        lambda_r: f64,
        timesteps: Vec<f64>,
    ) -> Self {
        let slots = control_points.len() * timesteps.len();
        Self {
            control_points,
            rotations: vec![Mat3::identity(); slots],
            translations: vec![Vec3::zeros(); slots],
            assignment,
            lambda_r,
            timesteps,
        }
    }

    pub fn groups(&self) -> usize {
        self.control_points.len()
    }

    pub fn frames(&self) -> usize {
        self.timesteps.len()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn transform(&self, frame: usize, group: usize) -> (&Mat3, &Vec3) {
        let s = frame * self.groups() + group;
        (&self.rotations[s], &self.translations[s])
    }

    pub fn set_transform(&mut self, frame: usize, group: usize, r: Mat3, t: Vec3) {
        let s = frame * self.groups() + group;
        self.rotations[s] = r;
        self.translations[s] = t;
    }

    /// Members of each group in ascending index order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.groups()];
        for (i, &g) in self.assignment.iter().enumerate() {
            out[g as usize].push(i);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let (j, f) = (self.groups(), self.frames());
        if j == 0 {
            return Err(Error::Validation {
                index: 0,
                message: "group flow has no groups".into(),
            });
        }
        check_timesteps(&self.timesteps)?;
        if self.rotations.len() != j * f || self.translations.len() != j * f {
            return Err(Error::DimensionMismatch(format!(
                "expected {} transforms, got {} rotations and {} translations",
                j * f,
                self.rotations.len(),
                self.translations.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_r) {
            return Err(Error::Config(format!(
                "lambda_r {} outside [0, 1]",
                self.lambda_r
            )));
        }
        if let Some(i) = self.assignment.iter().position(|&g| g as usize >= j) {
            return Err(Error::Validation {
                index: i,
                message: format!("group {} out of range for {j} groups", self.assignment[i]),
            });
        }
        for (s, (r, t)) in self.rotations.iter().zip(&self.translations).enumerate() {
            let bad = |message: String| Error::Validation { index: s, message };
            if !r.iter().chain(t.iter()).all(|v| v.is_finite()) {
                return Err(bad("non-finite transform".into()));
            }
            if orthonormality_error(r) >= ORTHO_TOL || r.determinant() <= 0.0 {
                return Err(bad(format!("transform {s} is not a rotation")));
            }
        }
        if self.timesteps[0] == 0.0 {
            for g in 0..j {
                let (r, t) = self.transform(0, g);
                if *r != Mat3::identity() || *t != Vec3::zeros() {
                    return Err(Error::Validation {
                        index: g,
                        message: "canonical-frame transform must be identity".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Learnable parameter count: `J·(F·6 + 3)` floats and `N` group ids.
    pub fn parameter_count(&self) -> ParamCount {
        ParamCount {
            floats: self.groups() * (self.frames() * 6 + 3),
            assignment_ids: self.len(),
        }
    }

    /// The model restricted to the Gaussians in `kept`.
    pub fn subset(&self, kept: &[usize]) -> Result<Self> {
        let assignment =
            kept.iter()
                .map(|&i| {
                    self.assignment.get(i).copied().ok_or_else(|| {
                        Error::DimensionMismatch(format!("kept index {i} out of range"))
                    })
                })
                .collect::<Result<_>>()?;
        Ok(Self {
            assignment,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub floats: usize,
    pub assignment_ids: usize,
}

impl ParamCount {
    /// float32 parameters plus uint32 ids.
    pub fn bytes(&self) -> usize {
        4 * (self.floats + self.assignment_ids)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    pub groups: usize,
    pub lambda_r: f64,
    pub n_max: usize,
    pub seed: u64,
    /// Trajectory-loss refinement iterations after fitting; 0 disables it.
    pub refine_iters: usize,
    pub refine_step: f64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            groups: 200,
            lambda_r: 0.5,
            n_max: 100,
            seed: 0,
            refine_iters: 0,
            refine_step: 0.1,
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::Config("group count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_r) {
            return Err(Error::Config(format!(
                "lambda_r {} outside [0, 1]",
                self.lambda_r
            )));
        }
        if self.n_max < 3 {
            return Err(Error::Config(format!(
                "n_max {} must be at least 3",
                self.n_max
            )));
        }
        if !(self.refine_step > 0.0) || !self.refine_step.is_finite() {
            return Err(Error::Config(format!(
                "refine_step {} must be positive",
                self.refine_step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingReport {
    pub groups: usize,
    pub frames: usize,
    pub n_gaussians: usize,
    pub control_indices: Vec<usize>,
    pub group_sizes: Vec<usize>,
    pub empty_groups: usize,
    pub degenerate_fits: usize,
    /// Root-mean-square distance between flowed and sampled means over all
    /// Gaussians and frames.
    pub trajectory_rmse: f64,
    pub max_residual: f64,
    /// Per-group RMS residual over members and frames.
    pub group_rmse: Vec<f64>,
    pub params: ParamCount,
    pub file_bytes: usize,
    pub refine: Option<RefineReport>,
    pub deviations: Vec<String>,
}

/// Timesteps used for grouping: the distinct view timestamps, with the
/// canonical `t = 0` prepended when absent.
pub fn grouping_timesteps(views: &[TrainingView]) -> Vec<f64> {
    let mut ts = crate::deformation::view_timesteps(views);
    if ts.first() != Some(&0.0) {
        ts.insert(0, 0.0);
    }
    ts
}

/// Samples the field at the view timestamps and compresses the resulting
/// trajectories.
pub fn groupflow_compress(
    cloud: &GaussianCloud,
    field: &dyn DeformationField,
    views: &[TrainingView],
    config: &GroupingConfig,
) -> Result<(GroupFlowModel, GroupingReport)> {
    config.validate()?;
    let traj = sample_trajectories(field, cloud, &grouping_timesteps(views))?;
    compress_trajectories(&traj, config)
}

/// Groups trajectories whose first frame is the canonical one and fits a
/// rigid transform per group and frame.
pub fn compress_trajectories(
    traj: &TrajectorySet,
    config: &GroupingConfig,
) -> Result<(GroupFlowModel, GroupingReport)> {
    config.validate()?;
    let n = traj.len();
    if n == 0 {
        return Err(Error::Config("cannot group an empty cloud".into()));
    }
    let j = config.groups.min(n);
    let f = traj.frames();
    let canonical: Vec<[f64; 3]> = (0..n).map(|i| traj.get(i, 0)).collect();
    let controls = farthest_point_sample(&canonical, j, config.seed)?;
    let assignment = assign_groups(traj, &controls, config.lambda_r)?;
    let control_points: Vec<[f64; 3]> = controls.iter().map(|&c| canonical[c]).collect();
    let mut model = GroupFlowModel::identity(
        control_points,
        assignment,
        config.lambda_r,
        traj.timesteps().to_vec(),
    );
    let members = model.members();

    let fits: Vec<Vec<RigidFit>> = members
        .par_iter()
        .enumerate()
        .map(|(g, m)| {
            if m.is_empty() {
                return Vec::new();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(g as u64 + 1);
            let sampled = sample_members(m, config.n_max, &mut rng);
            let h0 = vec3(model.control_points[g]);
            (1..f)
                .map(|k| fit_group_frame(traj, &sampled, &h0, k))
                .collect()
        })
        .collect();
    let mut degenerate_fits = 0;
    for (g, group_fits) in fits.iter().enumerate() {
        for (k, fit) in group_fits.iter().enumerate() {
            degenerate_fits += fit.degenerate as usize;
            model.set_transform(k + 1, g, fit.rotation, fit.translation);
        }
    }

    let mut refine = None;
    if config.refine_iters > 0 {
        let (refined, rep) = refine_flows(&model, traj, config.refine_iters, config.refine_step)?;
        model = refined;
        refine = Some(rep);
    }

    let (group_rmse, rmse, max_residual) = residual_stats(&model, traj, &members)?;
    let mut deviations = vec![
        "flows fitted to sampled mean trajectories; no image-loss training".to_string(),
        "transforms between stored timesteps use slerp/lerp interpolation".to_string(),
    ];
    if refine.is_some() {
        deviations.push("refinement minimizes trajectory L2, not the image loss".into());
    }
    if j < config.groups {
        deviations.push(format!(
            "group count clamped from {} to {j} Gaussians",
            config.groups
        ));
    }
    let report = GroupingReport {
        groups: j,
        frames: f,
        n_gaussians: n,
        control_indices: controls,
        group_sizes: members.iter().map(Vec::len).collect(),
        empty_groups: members.iter().filter(|m| m.is_empty()).count(),
        degenerate_fits,
        trajectory_rmse: rmse,
        max_residual,
        group_rmse,
        params: model.parameter_count(),
        file_bytes: gflw_len(&model),
        refine,
        deviations,
    };
    Ok((model, report))
}

fn residual_stats(
    model: &GroupFlowModel,
    traj: &TrajectorySet,
    members: &[Vec<usize>],
) -> Result<(Vec<f64>, f64, f64)> {
    let canonical: Vec<[f64; 3]> = (0..traj.len()).map(|i| traj.get(i, 0)).collect();
    let per_frame: Vec<Vec<f64>> = traj
        .timesteps()
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            let posed = apply_group_flow(&canonical, model, t)?;
            Ok(posed
                .iter()
                .enumerate()
                .map(|(i, p)| (vec3(*p) - vec3(traj.get(i, k))).norm_squared())
                .collect())
        })
        .collect::<Result<_>>()?;
    let f = traj.frames() as f64;
    let sq = |i: usize| per_frame.iter().map(|fr| fr[i]).sum::<f64>();
    let group_rmse = members
        .iter()
        .map(|m| {
            if m.is_empty() {
                0.0
            } else {
                (m.iter().map(|&i| sq(i)).sum::<f64>() / (m.len() as f64 * f)).sqrt()
            }
        })
        .collect();
    let total: f64 = (0..traj.len()).map(sq).sum();
    let rmse = (total / (traj.len() as f64 * f)).sqrt();
    let max_residual = per_frame
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b))
        .sqrt();
    Ok((group_rmse, rmse, max_residual))
}

/// How a fitted flow poses the cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowVariant {
    /// Means follow their group's rigid transform; rotations stay canonical.
    Base,
    /// As `Base`, with the group rotation also composed onto each Gaussian's
    /// orientation.
    RotationOffset,
    /// Means blend the transforms of the `k` nearest controls.
    Lbs { k: usize, radii: Vec<f64> },
}

/// Kernel radius per control: half the distance to its nearest other
/// control, or 1 for a single control.
pub fn default_lbs_radii(model: &GroupFlowModel) -> Vec<f64> {
    let h = &model.control_points;
    h.iter()
        .enumerate()
        .map(|(a, p)| {
            let d = h
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(_, q)| (vec3(*p) - vec3(*q)).norm())
                .fold(f64::INFINITY, f64::min);
            if d.is_finite() && d > 0.0 {
                0.5 * d
            } else {
                1.0
            }
        })
        .collect()
}

/// A group flow used as a deformation field over the cloud it was fitted to.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFlowField {
    pub model: GroupFlowModel,
    pub variant: FlowVariant,
}

impl GroupFlowField {
    pub fn new(model: GroupFlowModel) -> Self {
        Self {
            model,
            variant: FlowVariant::Base,
        }
    }
}

impl DeformationField for GroupFlowField {
    fn evaluate(&self, cloud: &GaussianCloud, t: f64) -> Result<Deformation> {
        let canonical: Vec<[f64; 3]> = cloud.means.iter().map(|m| m.map(f64::from)).collect();
        let means = match &self.variant {
            FlowVariant::Lbs { k, radii } => lbs_apply(&canonical, &self.model, radii, *k, t)?,
            _ => apply_group_flow(&canonical, &self.model, t)?,
        };
        let d_rotations = match self.variant {
            FlowVariant::RotationOffset => {
                let quats: Vec<[f64; 4]> = group_transforms_at(&self.model, t)
                    .iter()
                    .map(|x| mat_to_quat(&x.rotation))
                    .collect();
                Some(
                    self.model
                        .assignment
                        .iter()
                        .map(|&g| quats[g as usize])
                        .collect(),
                )
            }
            _ => None,
        };
        Ok(Deformation {
            means,
            d_rotations,
            d_scales: None,
        })
    }

    fn subset(&self, kept: &[usize]) -> Result<Box<dyn DeformationField>> {
        Ok(Box::new(GroupFlowField {
            model: self.model.subset(kept)?,
            variant: self.variant.clone(),
        }))
    }

    fn parameter_bytes(&self) -> usize {
        gflw_len(&self.model)
    }

    fn name(&self) -> &'static str {
        match self.variant {
            FlowVariant::Base => "groupflow",
            FlowVariant::RotationOffset => "groupflow_rotation_offset",
            FlowVariant::Lbs { .. } => "groupflow_lbs",
        }
    }
}
