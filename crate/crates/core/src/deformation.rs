//! Time-varying deformation sources.
//!
//! A [`DeformationField`] poses the canonical cloud at a timestamp. The
//! canonical frame is `t = 0`. Fields report posed means directly, so
//! stored trajectories come back bit-exactly; the offset form `Δμ` is
//! available through [`Deformation::mean_offsets`].

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::gaussian_model::{GaussianCloud, TrainingView};
use crate::math::{mat_to_quat, quat_mul, quat_normalize, so3_exp, vec3, vec3_f32, Mat3, Vec3};
use crate::render::Frame;
use crate::{Error, Result};

/// Posed parameters at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Deformation {
    /// `μ + Δμ` per Gaussian.
    pub means: Vec<[f64; 3]>,
    /// Quaternion offsets composed on the left of the canonical rotation;
    /// `None` means identity for every Gaussian.
    pub d_rotations: Option<Vec<[f64; 4]>>,
    /// Log-space scale offsets; `None` means zero.
    pub d_scales: Option<Vec<[f64; 3]>>,
}

impl Deformation {
    pub fn mean_offsets(&self, cloud: &GaussianCloud) -> Vec<[f64; 3]> {
        self.means
            .iter()
            .zip(&cloud.means)
            .map(|(p, m)| [p[0] - m[0] as f64, p[1] - m[1] as f64, p[2] - m[2] as f64])
            .collect()
    }
}

pub trait DeformationField: Send + Sync {
    fn evaluate(&self, cloud: &GaussianCloud, t: f64) -> Result<Deformation>;

    /// The same field restricted to the Gaussians in `kept` (old indices, in
    /// new order), for use after pruning.
    fn subset(&self, kept: &[usize]) -> Result<Box<dyn DeformationField>>;

    /// Serialized size of the field's own parameters, for model-size
    /// accounting.
    fn parameter_bytes(&self) -> usize;

    fn name(&self) -> &'static str;
}

/// Builds the renderable frame of `cloud` posed by `field` at `t`.
pub fn deform(cloud: &GaussianCloud, field: &dyn DeformationField, t: f64) -> Result<Frame> {
    let d = field.evaluate(cloud, t)?;
    if d.means.len() != cloud.len() {
        return Err(Error::DimensionMismatch(format!(
            "field produced {} means for {} Gaussians",
            d.means.len(),
            cloud.len()
        )));
    }
    let mut frame = Frame::from_cloud(cloud);
    frame.means = d.means;
    if let Some(dr) = d.d_rotations {
        for (r, q) in frame.rotations.iter_mut().zip(dr) {
            *r = quat_normalize(quat_mul(q, *r));
        }
    }
    if let Some(ds) = d.d_scales {
        for (s, d) in frame.log_scales.iter_mut().zip(ds) {
            for k in 0..3 {
                s[k] += d[k];
            }
        }
    }
    Ok(frame)
}

/// The field that never moves anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct StaticField;

impl DeformationField for StaticField {
    fn evaluate(&self, cloud: &GaussianCloud, _t: f64) -> Result<Deformation> {
        Ok(Deformation {
            means: cloud.means.iter().map(|m| m.map(|v| v as f64)).collect(),
            d_rotations: None,
            d_scales: None,
        })
    }

    fn subset(&self, _kept: &[usize]) -> Result<Box<dyn DeformationField>> {
        Ok(Box::new(StaticField))
    }

    fn parameter_bytes(&self) -> usize {
        0
    }

    fn name(&self) -> &'static str {
        "static"
    }
}

/// A rigid motion `x ↦ R(t)(x - pivot) + pivot + v·t` with
/// `R(t) = exp(rate·t·axis)`. Identity at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidCurve {
    pub translation_velocity: [f64; 3],
    pub rotation_axis: [f64; 3],
    /// Radians per unit time.
    pub rotation_rate: f64,
    pub pivot: [f64; 3],
}

impl RigidCurve {
    pub fn identity() -> Self {
        Self {
            translation_velocity: [0.0; 3],
            rotation_axis: [0.0, 0.0, 1.0],
            rotation_rate: 0.0,
            pivot: [0.0; 3],
        }
    }

    pub fn translation(v: [f64; 3]) -> Self {
        Self {
            translation_velocity: v,
            ..Self::identity()
        }
    }

    /// `(R, o)` such that `x ↦ R·x + o`.
    pub fn transform_at(&self, t: f64) -> (Mat3, Vec3) {
        let axis = vec3(self.rotation_axis);
        let n = axis.norm();
        let r = if n > 0.0 && self.rotation_rate != 0.0 {
            so3_exp(&(axis * (self.rotation_rate * t / n)))
        } else {
            Mat3::identity()
        };
        let pivot = vec3(self.pivot);
        let o = pivot + vec3(self.translation_velocity) * t - r * pivot;
        (r, o)
    }

    pub fn apply(&self, p: [f64; 3], t: f64) -> [f64; 3] {
        let (r, o) = self.transform_at(t);
        let q = r * vec3(p) + o;
        [q.x, q.y, q.z]
    }
}

/// Piecewise-rigid ground-truth field: every Gaussian follows the curve of
/// the group it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticField {
    pub curves: Vec<RigidCurve>,
    /// Group index per Gaussian.
    pub membership: Vec<u32>,
}

/// Builds an analytic field from `(members, curve)` pairs that must
/// partition `0..n`.
pub fn analytic_field(groups: Vec<(Vec<usize>, RigidCurve)>, n: usize) -> Result<AnalyticField> {
    let mut membership = vec![u32::MAX; n];
    let mut curves = Vec::with_capacity(groups.len());
    for (g, (members, curve)) in groups.into_iter().enumerate() {
        for i in members {
            if i >= n {
                return Err(Error::Config(format!(
                    "member {i} out of range for {n} Gaussians"
                )));
            }
            if membership[i] != u32::MAX {
                return Err(Error::Config(format!("Gaussian {i} belongs to two groups")));
            }
            membership[i] = g as u32;
        }
        curves.push(curve);
    }
    if let Some(i) = membership.iter().position(|&m| m == u32::MAX) {
        return Err(Error::Config(format!("Gaussian {i} belongs to no group")));
    }
    Ok(AnalyticField { curves, membership })
}

impl AnalyticField {
    pub fn from_labels(labels: &[u32], curves: Vec<RigidCurve>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= curves.len()) {
            return Err(Error::Config(format!(
                "label {bad} has no curve ({} curves)",
                curves.len()
            )));
        }
        Ok(Self {
            curves,
            membership: labels.to_vec(),
        })
    }
}

impl DeformationField for AnalyticField {
    fn evaluate(&self, cloud: &GaussianCloud, t: f64) -> Result<Deformation> {
        if cloud.len() != self.membership.len() {
            return Err(Error::DimensionMismatch(format!(
                "analytic field covers {} Gaussians, cloud has {}",
                self.membership.len(),
                cloud.len()
            )));
        }
        if t == 0.0 {
            return StaticField.evaluate(cloud, t);
        }
        let transforms: Vec<(Mat3, Vec3)> = self.curves.iter().map(|c| c.transform_at(t)).collect();
        let quats: Vec<[f64; 4]> = transforms.iter().map(|(r, _)| mat_to_quat(r)).collect();
        let means = cloud
            .means
            .par_iter()
            .zip(&self.membership)
            .map(|(m, &g)| {
                let (r, o) = &transforms[g as usize];
                let p = r * vec3_f32(*m) + o;
                [p.x, p.y, p.z]
            })
            .collect();
        let d_rotations = self.membership.iter().map(|&g| quats[g as usize]).collect();
        Ok(Deformation {
            means,
            d_rotations: Some(d_rotations),
            d_scales: None,
        })
    }

    fn subset(&self, kept: &[usize]) -> Result<Box<dyn DeformationField>> {
        let membership =
            kept.iter()
                .map(|&i| {
                    self.membership.get(i).copied().ok_or_else(|| {
                        Error::DimensionMismatch(format!("kept index {i} out of range"))
                    })
                })
                .collect::<Result<_>>()?;
        Ok(Box::new(AnalyticField {
            curves: self.curves.clone(),
            membership,
        }))
    }

    fn parameter_bytes(&self) -> usize {
        // 10 float32 per curve plus a uint32 group id per Gaussian.
        self.curves.len() * 10 * 4 + self.membership.len() * 4
    }

    fn name(&self) -> &'static str {
        "analytic"
    }
}

/// Per-Gaussian mean trajectories over `F ≥ 2` increasing timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    n: usize,
    timesteps: Vec<f64>,
    /// Row-major by Gaussian then frame.
    positions: Vec<[f64; 3]>,
}

impl TrajectorySet {
    pub fn new(n: usize, timesteps: Vec<f64>, positions: Vec<[f64; 3]>) -> Result<Self> {
        check_timesteps(&timesteps)?;
        if positions.len() != n * timesteps.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} positions for {n} Gaussians × {} frames",
                positions.len(),
                timesteps.len()
            )));
        }
        if let Some(k) = positions
            .iter()
            .position(|p| !p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::Validation {
                index: k / timesteps.len(),
                message: "non-finite trajectory position".into(),
            });
        }
        Ok(Self {
            n,
            timesteps,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn frames(&self) -> usize {
        self.timesteps.len()
    }

    pub fn timesteps(&self) -> &[f64] {
        &self.timesteps
    }

    pub fn get(&self, i: usize, k: usize) -> [f64; 3] {
        self.positions[i * self.timesteps.len() + k]
    }

    /// The `F` positions of Gaussian `i`.
    pub fn row(&self, i: usize) -> &[[f64; 3]] {
        let f = self.timesteps.len();
        &self.positions[i * f..(i + 1) * f]
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn subset(&self, kept: &[usize]) -> Result<Self> {
        let mut positions = Vec::with_capacity(kept.len() * self.frames());
        for &i in kept {
            if i >= self.n {
                return Err(Error::DimensionMismatch(format!(
                    "kept index {i} out of range"
                )));
            }
            positions.extend_from_slice(self.row(i));
        }
        Ok(Self {
            n: kept.len(),
            timesteps: self.timesteps.clone(),
            positions,
        })
    }

    /// Index of the bracketing frame pair and the blend weight for `t`,
    /// clamped to the stored range.
    pub fn bracket(&self, t: f64) -> (usize, f64) {
        bracket(&self.timesteps, t)
    }
}

pub(crate) fn check_timesteps(ts: &[f64]) -> Result<()> {
    if ts.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 timesteps, got {}",
            ts.len()
        )));
    }
    if !ts.iter().all(|t| t.is_finite()) || ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "timesteps must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `(k, f)` with `t ≈ (1-f)·ts[k] + f·ts[k+1]`; `f = 0` exactly on stored
/// timesteps and outside the range.
pub(crate) fn bracket(ts: &[f64], t: f64) -> (usize, f64) {
    let last = ts.len() - 1;
    if !(t > ts[0]) {
        return (0, 0.0);
    }
    if t >= ts[last] {
        return (last, 0.0);
    }
    let k = ts.partition_point(|&s| s <= t) - 1;
    if ts[k] == t {
        return (k, 0.0);
    }
    (k, (t - ts[k]) / (ts[k + 1] - ts[k]))
}

/// Field that replays stored trajectories, interpolating linearly between
/// frames and clamping outside them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub trajectories: TrajectorySet,
}

pub fn sampled_field(trajectories: TrajectorySet) -> SampledField {
    SampledField { trajectories }
}

impl DeformationField for SampledField {
    fn evaluate(&self, cloud: &GaussianCloud, t: f64) -> Result<Deformation> {
        let tr = &self.trajectories;
        if cloud.len() != tr.len() {
            return Err(Error::DimensionMismatch(format!(
                "trajectories cover {} Gaussians, cloud has {}",
                tr.len(),
                cloud.len()
            )));
        }
        let (k, f) = tr.bracket(t);
        let means = (0..tr.len())
            .map(|i| {
                let p0 = tr.get(i, k);
                if f == 0.0 {
                    return p0;
                }
                let p1 = tr.get(i, k + 1);
                [0, 1, 2].map(|c| (1.0 - f) * p0[c] + f * p1[c])
            })
            .collect();
        Ok(Deformation {
            means,
            d_rotations: None,
            d_scales: None,
        })
    }

    fn subset(&self, kept: &[usize]) -> Result<Box<dyn DeformationField>> {
        Ok(Box::new(SampledField {
            trajectories: self.trajectories.subset(kept)?,
        }))
    }

    fn parameter_bytes(&self) -> usize {
        self.trajectories.positions.len() * 12 + self.trajectories.frames() * 8
    }

    fn name(&self) -> &'static str {
        "sampled"
    }
}

/// Poses `cloud` at each timestep and records the means.
pub fn sample_trajectories(
    field: &dyn DeformationField,
    cloud: &GaussianCloud,
    timesteps: &[f64],
) -> Result<TrajectorySet> {
    check_timesteps(timesteps)?;
    let frames: Vec<Vec<[f64; 3]>> = timesteps
        .par_iter()
        .map(|&t| field.evaluate(cloud, t).map(|d| d.means))
        .collect::<Result<_>>()?;
    let f = timesteps.len();
    let n = cloud.len();
    let mut positions = vec![[0.0; 3]; n * f];
    for (k, frame) in frames.iter().enumerate() {
        if frame.len() != n {
            return Err(Error::DimensionMismatch("field output length".into()));
        }
        for (i, p) in frame.iter().enumerate() {
            positions[i * f + k] = *p;
        }
    }
    TrajectorySet::new(n, timesteps.to_vec(), positions)
}

/// Distinct view timestamps in increasing order.
pub fn view_timesteps(views: &[TrainingView]) -> Vec<f64> {
    let mut ts: Vec<f64> = views.iter().map(|v| v.timestamp).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

const TRAJ_MAGIC: &[u8] = b"TRAJ1";

/// Writes the TRAJ1 format. Positions are stored as float32.
pub fn save_trajectories(traj: &TrajectorySet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        binio::write_magic(w, TRAJ_MAGIC)?;
        w.write_all(&(traj.n as u64).to_le_bytes())?;
        w.write_all(&(traj.frames() as u64).to_le_bytes())?;
        for t in &traj.timesteps {
            w.write_all(&t.to_le_bytes())?;
        }
        for p in &traj.positions {
            for v in p {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_trajectories(path: impl AsRef<Path>) -> Result<TrajectorySet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    binio::read_magic(&mut r, TRAJ_MAGIC)?;
    let n = binio::read_count(&mut r, "Gaussian")?;
    let f = binio::read_count(&mut r, "frame")?;
    let timesteps = (0..f)
        .map(|_| binio::read_f64(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let mut positions = Vec::with_capacity((n * f).min(1 << 26));
    for _ in 0..n * f {
        let mut p = [0.0; 3];
        for v in &mut p {
            *v = binio::read_f32(&mut r)? as f64;
        }
        positions.push(p);
    }
    binio::expect_eof(&mut r)?;
    TrajectorySet::new(n, timesteps, positions)
}
