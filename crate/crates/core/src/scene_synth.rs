//! Deterministic synthetic dynamic scenes with known grouping and motion.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deformation::{
    check_timesteps, load_trajectories, sample_trajectories, save_trajectories, AnalyticField,
    Deformation, DeformationField, RigidCurve, TrajectorySet,
};
use crate::gaussian_model::{
    load_cameras, load_ply, save_cameras, save_ply, GaussianCloud, TrainingView, SH_C0,
};
use crate::math::{mat3, mat3_rows, so3_exp, to_array, vec3, Vec3};
use crate::render::{render, Frame, Image};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub n_gaussians: usize,
    pub n_clusters: usize,
    /// Every Gaussian lies within this distance of its cluster centre.
    pub cluster_radius: f64,
    /// Minimum centre-to-centre distance, in cluster radii.
    pub spacing: f64,
    /// Per-cluster motion; generated from the seed when empty.
    pub motions: Vec<RigidCurve>,
    /// Generated translation speed, in cluster radii per unit time.
    pub speed: f64,
    /// Generated rotation rate, in radians per unit time.
    pub rotation_rate: f64,
    /// Typical Gaussian scale, in cluster radii.
    pub gaussian_scale: f64,
    /// Largest ratio between a Gaussian's axis scales.
    pub anisotropy: f64,
    pub sh_degree: usize,
    pub n_frames: usize,
    pub n_views: usize,
    pub n_test_views: usize,
    pub width: u32,
    pub height: u32,
    /// Standard deviation of per-frame trajectory jitter in world units.
    pub trajectory_noise: f64,
    /// Rotation perturbation σ of training poses, radians.
    pub pose_jitter_rot: f64,
    /// Translation perturbation σ of training poses, world units.
    pub pose_jitter_trans: f64,
    /// Standard deviation of additive pixel noise on ground-truth images.
    pub image_noise: f64,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_gaussians: 2000,
            n_clusters: 5,
            cluster_radius: 0.5,
            spacing: 6.0,
            motions: Vec::new(),
            speed: 1.0,
            rotation_rate: 1.0,
            gaussian_scale: 0.12,
            anisotropy: 1.5,
            sh_degree: 0,
            n_frames: 40,
            n_views: 40,
            n_test_views: 8,
            width: 64,
            height: 64,
            trajectory_noise: 0.0,
            pose_jitter_rot: 0.0,
            pose_jitter_trans: 0.0,
            image_noise: 0.0,
            background: [0.0; 3],
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_clusters == 0 {
            return fail("scene needs at least one cluster".into());
        }
        if self.n_gaussians < self.n_clusters {
            return fail(format!(
                "{} Gaussians cannot fill {} clusters",
                self.n_gaussians, self.n_clusters
            ));
        }
        if self.n_frames < 2 {
            return fail("scene needs at least 2 frames".into());
        }
        if self.n_views == 0 {
            return fail("scene needs at least one training view".into());
        }
        if self.width < 11 || self.height < 11 {
            return fail("images must be at least 11x11".into());
        }
        if self.sh_degree > 3 {
            return fail(format!("SH degree {} exceeds 3", self.sh_degree));
        }
        if !self.motions.is_empty() && self.motions.len() != self.n_clusters {
            return fail(format!(
                "{} motions given for {} clusters",
                self.motions.len(),
                self.n_clusters
            ));
        }
        let positive = [
            ("cluster_radius", self.cluster_radius),
            ("spacing", self.spacing),
            ("gaussian_scale", self.gaussian_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("{name} must be positive"));
            }
        }
        if !(self.anisotropy >= 1.0) || !self.anisotropy.is_finite() {
            return fail("anisotropy must be at least 1".into());
        }
        let sigmas = [
            ("speed", self.speed),
            ("rotation_rate", self.rotation_rate),
            ("trajectory_noise", self.trajectory_noise),
            ("pose_jitter_rot", self.pose_jitter_rot),
            ("pose_jitter_trans", self.pose_jitter_trans),
            ("image_noise", self.image_noise),
        ];
        for (name, v) in sigmas {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be non-negative"));
            }
        }
        Ok(())
    }

    /// Timestamps of the training frames, evenly spaced over `[0, 1]`.
    pub fn frame_timesteps(&self) -> Vec<f64> {
        let last = (self.n_frames - 1) as f64;
        (0..self.n_frames).map(|k| k as f64 / last).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }
}

/// Deterministic per-Gaussian, per-timestamp positional jitter on top of an
/// analytic field. The jitter vanishes at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyField {
    pub inner: AnalyticField,
    pub sigma: f64,
    pub seed: u64,
    /// Identity of each Gaussian in the generated cloud; survives pruning.
    pub ids: Vec<u64>,
}

impl NoisyField {
    pub fn new(inner: AnalyticField, sigma: f64, seed: u64) -> Self {
        let ids = (0..inner.membership.len() as u64).collect();
        Self {
            inner,
            sigma,
            seed,
            ids,
        }
    }

    fn jitter(&self, id: u64, t: f64) -> [f64; 3] {
        let key = self.seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ t.to_bits().rotate_left(29);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        [0; 3].map(|_| self.sigma * gauss(&mut rng))
    }
}

impl DeformationField for NoisyField {
    fn evaluate(&self, cloud: &GaussianCloud, t: f64) -> Result<Deformation> {
        let mut d = self.inner.evaluate(cloud, t)?;
        if self.sigma > 0.0 && t != 0.0 {
            d.means.par_iter_mut().zip(&self.ids).for_each(|(p, &id)| {
                let j = self.jitter(id, t);
                for c in 0..3 {
                    p[c] += j[c];
                }
            });
        }
        Ok(d)
    }

    fn subset(&self, kept: &[usize]) -> Result<Box<dyn DeformationField>> {
        let membership =
            kept.iter()
                .map(|&i| {
                    self.inner.membership.get(i).copied().ok_or_else(|| {
                        Error::DimensionMismatch(format!("kept index {i} out of range"))
                    })
                })
                .collect::<Result<_>>()?;
        Ok(Box::new(NoisyField {
            inner: AnalyticField {
                curves: self.inner.curves.clone(),
                membership,
            },
            sigma: self.sigma,
            seed: self.seed,
            ids: kept.iter().map(|&i| self.ids[i]).collect(),
        }))
    }

    fn parameter_bytes(&self) -> usize {
        self.inner.parameter_bytes()
    }

    fn name(&self) -> &'static str {
        if self.sigma > 0.0 {
            "analytic_jittered"
        } else {
            "analytic"
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub cloud: GaussianCloud,
    pub field: NoisyField,
    /// Training cameras as handed to the pipeline, pose jitter included.
    pub train_views: Vec<TrainingView>,
    /// Exact poses the training images were rendered from.
    pub nominal_views: Vec<TrainingView>,
    /// Held-out cameras at in-between timestamps, exact poses.
    pub test_views: Vec<TrainingView>,
    pub labels: Vec<u32>,
    pub train_images: Vec<Image>,
    pub test_images: Vec<Image>,
    /// Means sampled at the training frame timesteps.
    pub trajectories: TrajectorySet,
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal3<R: Rng>(rng: &mut R) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

fn unit_vector<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = normal3(rng);
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Cluster centres on a ring in the `y = 0` plane with neighbouring centres
/// exactly `spacing` radii apart.
pub fn cluster_centres(spec: &SceneSpec) -> Vec<Vec3> {
    let n = spec.n_clusters;
    if n == 1 {
        return vec![Vec3::zeros()];
    }
    let chord = spec.spacing * spec.cluster_radius;
    // Two clusters sit on a diameter; more share a ring of equal chords.
    let ring = chord / (2.0 * (std::f64::consts::PI / n as f64).sin());
    (0..n)
        .map(|c| {
            let a = std::f64::consts::TAU * c as f64 / n as f64;
            Vec3::new(ring * a.cos(), 0.0, ring * a.sin())
        })
        .collect()
}

/// Motion curves: the spec's own, or a random direction at `speed` radii
/// per unit time and a random axis at `rotation_rate`, pivoting about the
/// cluster centre.
pub fn cluster_motions(spec: &SceneSpec, centres: &[Vec3]) -> Vec<RigidCurve> {
    if !spec.motions.is_empty() {
        return spec.motions.clone();
    }
    let mut rng = stream_rng(spec.seed, 1);
    centres
        .iter()
        .map(|c| {
            let v = unit_vector(&mut rng) * (spec.speed * spec.cluster_radius);
            let axis = unit_vector(&mut rng);
            RigidCurve {
                translation_velocity: to_array(&v),
                rotation_axis: to_array(&axis),
                rotation_rate: spec.rotation_rate,
                pivot: to_array(c),
            }
        })
        .collect()
}

/// Samples the canonical cloud and its cluster labels. Gaussians are
/// divided among clusters as evenly as possible, offsets are isotropic
/// normal with σ = radius/2, rejected beyond the radius.
pub fn make_cloud(spec: &SceneSpec, centres: &[Vec3]) -> (GaussianCloud, Vec<u32>) {
    let mut rng = stream_rng(spec.seed, 0);
    let n = spec.n_gaussians;
    let k = spec.sh_coeffs();
    let r = spec.cluster_radius;
    let base_colors: Vec<[f64; 3]> = (0..centres.len())
        .map(|_| [0; 3].map(|_| rng.random_range(0.15..0.9)))
        .collect();
    let mut means = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut sh = Vec::with_capacity(n * k);
    let mut opacities = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let half_aniso = spec.anisotropy.sqrt();
    for i in 0..n {
        let c = i * centres.len() / n;
        let offset = loop {
            let o = normal3(&mut rng) * (0.5 * r);
            if o.norm() <= r {
                break o;
            }
        };
        let p = centres[c] + offset;
        means.push([p.x as f32, p.y as f32, p.z as f32]);
        let base = spec.gaussian_scale * r;
        scales.push(
            [0; 3].map(|_| (base * rng.random_range(1.0 / half_aniso..=half_aniso)).ln() as f32),
        );
        let q = loop {
            let q: [f64; 4] = [0; 4].map(|_| StandardNormal.sample(&mut rng));
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-6 {
                break q.map(|v| (v / norm) as f32);
            }
        };
        rotations.push(q);
        let col = base_colors[c].map(|b| {
            let v: f64 = b + 0.08 * gauss(&mut rng);
            v.clamp(0.02, 0.98)
        });
        sh.push(col.map(|v| ((v - 0.5) / SH_C0) as f32));
        for _ in 1..k {
            sh.push([0; 3].map(|_| (0.02 * gauss(&mut rng)) as f32));
        }
        opacities.push(rng.random_range(-2.0..3.0) as f32);
        labels.push(c as u32);
    }
    let cloud =
        GaussianCloud::new(means, scales, rotations, sh, k, opacities).expect("consistent arrays");
    (cloud, labels)
}

impl SceneSpec {
    pub fn sh_coeffs(&self) -> usize {
        (self.sh_degree + 1) * (self.sh_degree + 1)
    }
}

/// Camera ring around the scene: `count` views at evenly spaced azimuths
/// starting at `phase` (in view steps), elevated and aimed at the origin.
pub fn ring_views(
    spec: &SceneSpec,
    count: usize,
    phase: f64,
    timestamps: &[f64],
) -> Vec<TrainingView> {
    let centres = cluster_centres(spec);
    let ring = centres.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let extent = ring + spec.cluster_radius * (1.0 + spec.speed) + spec.cluster_radius;
    let dist = 3.0 * extent;
    let f = 0.5 * spec.width.min(spec.height) as f64 * dist / (1.25 * extent);
    (0..count)
        .map(|v| {
            let a = std::f64::consts::TAU * (v as f64 + phase) / count as f64;
            let eye = [dist * a.cos(), 0.45 * dist, dist * a.sin()];
            TrainingView::look_at(
                eye,
                [0.0; 3],
                [0.0, 1.0, 0.0],
                f,
                f,
                spec.width,
                spec.height,
                timestamps[v],
            )
        })
        .collect()
}

/// The perturbation applied to view `index` by [`jitter_poses`]: a rotation
/// about a uniform axis by an angle drawn from `N(0, σ_rot)` and a
/// translation offset from `N(0, σ_trans·I)`.
pub fn pose_perturbation(
    seed: u64,
    index: usize,
    sigma_rot: f64,
    sigma_trans: f64,
) -> (crate::math::Mat3, Vec3) {
    let mut rng = stream_rng(seed, index as u64);
    let axis = unit_vector(&mut rng);
    let angle: f64 = StandardNormal.sample(&mut rng);
    let dt = normal3(&mut rng);
    (so3_exp(&(axis * (angle * sigma_rot))), dt * sigma_trans)
}

/// Perturbs each view's extrinsics: `R ← ΔR·R`, `t ← t + Δt`.
pub fn jitter_poses(
    views: &[TrainingView],
    sigma_rot: f64,
    sigma_trans: f64,
    seed: u64,
) -> Vec<TrainingView> {
    if sigma_rot == 0.0 && sigma_trans == 0.0 {
        return views.to_vec();
    }
    views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (dr, dt) = pose_perturbation(seed, i, sigma_rot, sigma_trans);
            let mut out = v.clone();
            out.rotation = mat3_rows(&(dr * mat3(v.rotation)));
            out.translation = to_array(&(vec3(v.translation) + dt));
            out
        })
        .collect()
}

/// Renders `views` and adds seeded pixel noise, quantizing to 8 bits so the
/// images survive a PNG round trip unchanged.
fn render_ground_truth(
    cloud: &GaussianCloud,
    field: &dyn DeformationField,
    views: &[TrainingView],
    spec: &SceneSpec,
    stream_base: u64,
) -> Result<Vec<Image>> {
    views
        .par_iter()
        .enumerate()
        .map(|(v, view)| {
            let frame: Frame = crate::deformation::deform(cloud, field, view.timestamp)?;
            let mut img = render(&frame, view, spec.background);
            let mut rng = stream_rng(spec.seed, stream_base + v as u64);
            for px in &mut img.data {
                let noise = if spec.image_noise > 0.0 {
                    spec.image_noise * gauss(&mut rng)
                } else {
                    0.0
                };
                *px = ((*px + noise).clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
            Ok(img)
        })
        .collect()
}

const POSE_SEED_SALT: u64 = 0x5EED_0F_CA11_B0A7;
const TRAIN_STREAM: u64 = 1 << 32;
const TEST_STREAM: u64 = 2 << 32;

pub fn make_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let centres = cluster_centres(spec);
    let curves = cluster_motions(spec, &centres);
    let (cloud, labels) = make_cloud(spec, &centres);
    let field = NoisyField::new(
        AnalyticField::from_labels(&labels, curves)?,
        spec.trajectory_noise,
        spec.seed,
    );
    let frames = spec.frame_timesteps();
    check_timesteps(&frames)?;
    // Spread the training views over the whole sequence, endpoints included.
    let span = (spec.n_views - 1).max(1);
    let train_ts: Vec<f64> = (0..spec.n_views)
        .map(|v| frames[(v * (spec.n_frames - 1) + span / 2) / span])
        .collect();
    let test_ts: Vec<f64> = (0..spec.n_test_views)
        .map(|u| (u as f64 + 0.5) / spec.n_test_views as f64)
        .collect();
    let nominal_views = ring_views(spec, spec.n_views, 0.0, &train_ts);
    let test_views = ring_views(spec, spec.n_test_views, 0.5, &test_ts);
    let train_views = jitter_poses(
        &nominal_views,
        spec.pose_jitter_rot,
        spec.pose_jitter_trans,
        spec.seed ^ POSE_SEED_SALT,
    );
    let train_images = render_ground_truth(&cloud, &field, &nominal_views, spec, TRAIN_STREAM)?;
    let test_images = render_ground_truth(&cloud, &field, &test_views, spec, TEST_STREAM)?;
    let trajectories = sample_trajectories(&field, &cloud, &frames)?;
    Ok(SyntheticScene {
        spec: spec.clone(),
        cloud,
        field,
        train_views,
        nominal_views,
        test_views,
        labels,
        train_images,
        test_images,
        trajectories,
    })
}

/// On-disk scene: what a pipeline run needs, without the generator.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub cloud: GaussianCloud,
    pub field: NoisyField,
    pub train_views: Vec<TrainingView>,
    pub test_views: Vec<TrainingView>,
    pub labels: Vec<u32>,
    pub train_images: Vec<Image>,
    pub test_images: Vec<Image>,
    pub trajectories: TrajectorySet,
}

impl From<SyntheticScene> for SceneBundle {
    fn from(s: SyntheticScene) -> Self {
        Self {
            spec: s.spec,
            cloud: s.cloud,
            field: s.field,
            train_views: s.train_views,
            test_views: s.test_views,
            labels: s.labels,
            train_images: s.train_images,
            test_images: s.test_images,
            trajectories: s.trajectories,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn with_paths(views: &[TrainingView], prefix: &str) -> Vec<TrainingView> {
    views
        .iter()
        .enumerate()
        .map(|(i, v)| TrainingView {
            image_path: format!("frames/{prefix}_{i:04}.png"),
            ..v.clone()
        })
        .collect()
}

/// Writes `cloud.ply`, `cameras.json`, `test_cameras.json`,
/// `trajectories.traj`, `labels.json`, `motion.json`, `scene.toml` and the
/// ground-truth frames under `frames/`.
pub fn write_bundle(scene: &SceneBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("frames")).map_err(|e| Error::io(dir, e))?;
    save_ply(&scene.cloud, dir.join("cloud.ply"))?;
    let train = with_paths(&scene.train_views, "train");
    let test = with_paths(&scene.test_views, "test");
    save_cameras(&train, dir.join("cameras.json"))?;
    save_cameras(&test, dir.join("test_cameras.json"))?;
    save_trajectories(&scene.trajectories, dir.join("trajectories.traj"))?;
    write_json(&dir.join("labels.json"), &scene.labels)?;
    write_json(&dir.join("motion.json"), &scene.field.inner.curves)?;
    let toml_path = dir.join("scene.toml");
    std::fs::write(&toml_path, scene.spec.to_toml()).map_err(|e| Error::io(&toml_path, e))?;
    let pairs = train
        .iter()
        .zip(&scene.train_images)
        .chain(test.iter().zip(&scene.test_images));
    pairs
        .collect::<Vec<_>>()
        .par_iter()
        .try_for_each(|(v, img)| img.save_png(dir.join(&v.image_path)))
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<SceneBundle> {
    let dir = dir.as_ref();
    let toml_path = dir.join("scene.toml");
    let text = std::fs::read_to_string(&toml_path).map_err(|e| Error::io(&toml_path, e))?;
    let spec = SceneSpec::from_toml(&text)?;
    let cloud = load_ply(dir.join("cloud.ply"))?;
    let train_views = load_cameras(dir.join("cameras.json"))?;
    let test_views = load_cameras(dir.join("test_cameras.json"))?;
    let labels: Vec<u32> = read_json(&dir.join("labels.json"))?;
    let curves: Vec<RigidCurve> = read_json(&dir.join("motion.json"))?;
    if labels.len() != cloud.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} Gaussians",
            labels.len(),
            cloud.len()
        )));
    }
    let field = NoisyField::new(
        AnalyticField::from_labels(&labels, curves)?,
        spec.trajectory_noise,
        spec.seed,
    );
    let load = |views: &[TrainingView]| -> Result<Vec<Image>> {
        views
            .par_iter()
            .map(|v| Image::load_png(dir.join(&v.image_path)))
            .collect()
    };
    let train_images = load(&train_views)?;
    let test_images = load(&test_views)?;
    let trajectories = load_trajectories(dir.join("trajectories.traj"))?;
    Ok(SceneBundle {
        spec,
        cloud,
        field,
        train_views,
        test_views,
        labels,
        train_images,
        test_images,
        trajectories,
    })
}
