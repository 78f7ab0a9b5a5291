//! Temporal sensitivity pruning.
//!
//! The score of Gaussian `i` is the squared footprint gradient
//! `Σ_views Σ_pixels Σ_channels (∂I/∂g_i)²`, where every view is rendered at
//! its own timestamp. The residual-weighted second-order term of the exact
//! L2 Hessian is not computed. With annealed smooth pruning enabled, each
//! view's timestamp is perturbed by a linearly decaying Gaussian noise
//! sample before posing the cloud.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::deformation::{deform, DeformationField};
use crate::gaussian_model::{GaussianCloud, TrainingView};
use crate::math::sigmoid;
use crate::metrics::psnr;
use crate::render::{color_opacity_gradients, footprint_gradients, render, Image};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta: f64,
    /// Mean interval between consecutive frame timestamps.
    pub delta_t: f64,
    /// Iterations over which the noise anneals to zero.
    pub tau: u64,
    pub enabled: bool,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            beta: 0.1,
            delta_t: 1.0,
            tau: 20_000,
            enabled: true,
        }
    }
}

impl NoiseSchedule {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Default schedule with `delta_t` taken from the views' timestamps.
    pub fn for_views(views: &[TrainingView]) -> Self {
        Self {
            delta_t: mean_frame_interval(views),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.delta_t > 0.0) || !self.delta_t.is_finite() {
            return Err(Error::Config(format!(
                "noise schedule needs beta >= 0 and delta_t > 0 (beta {}, delta_t {})",
                self.beta, self.delta_t
            )));
        }
        Ok(())
    }

    /// Standard deviation of the noise at `iteration`.
    pub fn amplitude(&self, iteration: u64) -> f64 {
        if !self.enabled || self.tau == 0 || iteration >= self.tau {
            return 0.0;
        }
        self.beta * self.delta_t * (1.0 - iteration as f64 / self.tau as f64)
    }
}

/// Mean gap between distinct view timestamps (1.0 with fewer than two).
pub fn mean_frame_interval(views: &[TrainingView]) -> f64 {
    let ts = crate::deformation::view_timesteps(views);
    if ts.len() < 2 {
        return 1.0;
    }
    (ts[ts.len() - 1] - ts[0]) / (ts.len() - 1) as f64
}

/// One sample of `N(0,1)·β·Δt·max(0, 1 - i/τ)`; exactly 0 once annealed
/// out or when disabled. No randomness is consumed in that case.
pub fn asp_noise<R: Rng + ?Sized>(iteration: u64, schedule: &NoiseSchedule, rng: &mut R) -> f64 {
    let amp = schedule.amplitude(iteration);
    if amp == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    z * amp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub views_accumulated: usize,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Sums per-view footprint gradients. Noise samples are drawn from `rng` in
/// view order, one per view, before any rendering, so results do not depend
/// on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_scores<R: Rng + ?Sized>(
    cloud: &GaussianCloud,
    field: &dyn DeformationField,
    views: &[TrainingView],
    schedule: &NoiseSchedule,
    iteration: u64,
    rng: &mut R,
    background: [f64; 3],
) -> Result<ScoreVector> {
    if views.is_empty() {
        return Err(Error::Config(
            "score accumulation needs at least one view".into(),
        ));
    }
    let times: Vec<f64> = views
        .iter()
        .map(|v| (v.timestamp + asp_noise(iteration, schedule, rng)).clamp(0.0, 1.0))
        .collect();
    let per_view: Vec<Vec<f64>> = views
        .par_iter()
        .zip(&times)
        .map(|(v, &t)| {
            let frame = deform(cloud, field, t)?;
            Ok(footprint_gradients(&frame, v, background))
        })
        .collect::<Result<_>>()?;
    let mut scores = vec![0.0; cloud.len()];
    for g in &per_view {
        for (s, x) in scores.iter_mut().zip(g) {
            *s += x;
        }
    }
    Ok(ScoreVector {
        scores,
        views_accumulated: views.len(),
    })
}

/// Heuristic baseline: activated opacity as the score.
pub fn opacity_scores(cloud: &GaussianCloud) -> ScoreVector {
    ScoreVector {
        scores: cloud.opacities.iter().map(|&o| sigmoid(o as f64)).collect(),
        views_accumulated: 0,
    }
}

/// Which original Gaussians survived a prune.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptIndexMap {
    pub n_before: usize,
    /// Old index of each surviving Gaussian, ascending.
    pub kept: Vec<usize>,
}

impl KeptIndexMap {
    pub fn identity(n: usize) -> Self {
        Self {
            n_before: n,
            kept: (0..n).collect(),
        }
    }

    pub fn old_to_new(&self, old: usize) -> Option<usize> {
        self.kept.binary_search(&old).ok()
    }

    /// Chains a later prune onto this one: the result maps the original
    /// indices of `self` straight to the survivors of `later`.
    pub fn compose(&self, later: &KeptIndexMap) -> KeptIndexMap {
        KeptIndexMap {
            n_before: self.n_before,
            kept: later.kept.iter().map(|&i| self.kept[i]).collect(),
        }
    }
}

/// Removes the `floor(fraction·N)` lowest-scoring Gaussians. Among equal
/// scores the lower index is removed first. Survivors keep their order and
/// their parameters bit for bit.
pub fn prune(
    cloud: &GaussianCloud,
    scores: &ScoreVector,
    fraction: f64,
) -> Result<(GaussianCloud, KeptIndexMap)> {
    if scores.len() != cloud.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} Gaussians",
            scores.len(),
            cloud.len()
        )));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "prune fraction {fraction} outside [0, 1)"
        )));
    }
    let n = cloud.len();
    let remove = (fraction * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores.scores[a]
            .total_cmp(&scores.scores[b])
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; n];
    for &i in &order[..remove] {
        keep[i] = false;
    }
    let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    Ok((cloud.select(&kept), KeptIndexMap { n_before: n, kept }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub iteration: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub events: Vec<PruneEvent>,
    pub densify_end: u64,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            events: vec![
                PruneEvent {
                    iteration: 15_000,
                    fraction: 0.80,
                },
                PruneEvent {
                    iteration: 25_000,
                    fraction: 0.30,
                },
            ],
            densify_end: 15_000,
        }
    }
}

impl PruneSchedule {
    pub fn empty() -> Self {
        Self {
            events: Vec::new(),
            densify_end: 15_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .events
            .windows(2)
            .any(|w| w[1].iteration <= w[0].iteration)
        {
            return Err(Error::Config(
                "prune event iterations must be strictly ascending".into(),
            ));
        }
        if let Some(e) = self
            .events
            .iter()
            .find(|e| !(e.fraction > 0.0 && e.fraction < 1.0))
        {
            return Err(Error::Config(format!(
                "prune fraction {} outside (0, 1)",
                e.fraction
            )));
        }
        Ok(())
    }
}

/// Colour/opacity refinement run after each prune event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    /// Optimizer steps per event; each step uses one view, cycling in order.
    pub iters: usize,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub ssim_weight: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            iters: 0,
            lr_color: 0.01,
            lr_opacity: 0.05,
            ssim_weight: 0.2,
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-15;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Adam on DC colour and opacity logits against the ground-truth images.
/// Geometry is left untouched.
pub fn finetune(
    cloud: &GaussianCloud,
    field: &dyn DeformationField,
    views: &[TrainingView],
    images: &[Image],
    config: &FinetuneConfig,
    background: [f64; 3],
) -> Result<GaussianCloud> {
    if config.iters == 0 || views.is_empty() || cloud.is_empty() {
        return Ok(cloud.clone());
    }
    let n = cloud.len();
    let mut colors: Vec<f64> = (0..n)
        .flat_map(|i| cloud.sh_dc(i).map(|v| v as f64))
        .collect();
    let mut logits: Vec<f64> = cloud.opacities.iter().map(|&o| o as f64).collect();
    let mut adam_c = Adam::new(3 * n);
    let mut adam_o = Adam::new(n);
    let mut frames = Vec::with_capacity(views.len());
    for v in views {
        frames.push(deform(cloud, field, v.timestamp)?);
    }
    for step in 0..config.iters {
        let k = step % views.len();
        let frame = &mut frames[k];
        for i in 0..n {
            frame.sh_dc[i] = [colors[3 * i], colors[3 * i + 1], colors[3 * i + 2]];
            frame.opacity_logits[i] = logits[i];
        }
        let g =
            color_opacity_gradients(frame, &views[k], &images[k], config.ssim_weight, background)?;
        let gc: Vec<f64> = g.sh_dc.iter().flatten().copied().collect();
        adam_c.step(&mut colors, &gc, config.lr_color);
        adam_o.step(&mut logits, &g.opacity_logit, config.lr_opacity);
    }
    let mut out = cloud.clone();
    for i in 0..n {
        *out.sh_dc_mut(i) = [
            colors[3 * i] as f32,
            colors[3 * i + 1] as f32,
            colors[3 * i + 2] as f32,
        ];
        out.opacities[i] = logits[i] as f32;
    }
    Ok(out)
}

/// Mean PSNR of `cloud` posed by `field` over `views`.
pub fn mean_psnr(
    cloud: &GaussianCloud,
    field: &dyn DeformationField,
    views: &[TrainingView],
    images: &[Image],
    background: [f64; 3],
) -> Result<f64> {
    if views.len() != images.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} views vs {} images",
            views.len(),
            images.len()
        )));
    }
    if views.is_empty() {
        return Ok(0.0);
    }
    let vals: Vec<f64> = views
        .par_iter()
        .zip(images)
        .map(|(v, gt)| {
            let frame = deform(cloud, field, v.timestamp)?;
            psnr(&render(&frame, v, background), gt)
        })
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub iteration: u64,
    pub fraction: f64,
    pub n_before: usize,
    pub n_after: usize,
    pub psnr_before: f64,
    pub psnr_after: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub events: Vec<EventReport>,
    pub seed: u64,
    pub schedule: PruneSchedule,
    pub noise: NoiseSchedule,
    pub finetune: FinetuneConfig,
}

pub struct PruneOutcome {
    pub cloud: GaussianCloud,
    /// Survivors relative to the input cloud.
    pub kept: KeptIndexMap,
    /// The input field restricted to the survivors.
    pub field: Box<dyn DeformationField>,
    /// Scores used at each event, indexed by the Gaussians present then.
    pub scores: Vec<ScoreVector>,
    pub report: PruneReport,
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineInputs<'a> {
    pub views: &'a [TrainingView],
    pub images: &'a [Image],
    pub background: [f64; 3],
    pub seed: u64,
}

/// Runs every scheduled event in order: score at the event's iteration,
/// prune, then fine-tune colour and opacity.
pub fn run_prune_pipeline(
    cloud: &GaussianCloud,
    field: &dyn DeformationField,
    inputs: PipelineInputs<'_>,
    schedule: &PruneSchedule,
    noise: &NoiseSchedule,
    finetune_config: &FinetuneConfig,
) -> Result<PruneOutcome> {
    schedule.validate()?;
    noise.validate()?;
    let PipelineInputs {
        views,
        images,
        background,
        seed,
    } = inputs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = cloud.clone();
    let mut current_field = field.subset(&(0..cloud.len()).collect::<Vec<_>>())?;
    let mut kept = KeptIndexMap::identity(cloud.len());
    let mut events = Vec::with_capacity(schedule.events.len());
    let mut all_scores = Vec::with_capacity(schedule.events.len());
    for event in &schedule.events {
        let start = Instant::now();
        let psnr_before = mean_psnr(&current, current_field.as_ref(), views, images, background)?;
        let scores = accumulate_scores(
            &current,
            current_field.as_ref(),
            views,
            noise,
            event.iteration,
            &mut rng,
            background,
        )?;
        let (pruned, step_map) = prune(&current, &scores, event.fraction)?;
        let pruned_field = current_field.subset(&step_map.kept)?;
        let tuned = finetune(
            &pruned,
            pruned_field.as_ref(),
            views,
            images,
            finetune_config,
            background,
        )?;
        let psnr_after = mean_psnr(&tuned, pruned_field.as_ref(), views, images, background)?;
        events.push(EventReport {
            iteration: event.iteration,
            fraction: event.fraction,
            n_before: current.len(),
            n_after: tuned.len(),
            psnr_before,
            psnr_after,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        all_scores.push(scores);
        kept = kept.compose(&step_map);
        current = tuned;
        current_field = pruned_field;
    }
    Ok(PruneOutcome {
        cloud: current,
        kept,
        field: current_field,
        scores: all_scores,
        report: PruneReport {
            events,
            seed,
            schedule: schedule.clone(),
            noise: *noise,
            finetune: *finetune_config,
        },
    })
}

const SCORE_MAGIC: &[u8] = b"SCOR1";

/// SCOR1: magic, N and views-accumulated as u64, then N float32 scores.
pub fn save_scores(scores: &ScoreVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        binio::write_magic(w, SCORE_MAGIC)?;
        w.write_all(&(scores.len() as u64).to_le_bytes())?;
        w.write_all(&(scores.views_accumulated as u64).to_le_bytes())?;
        for s in &scores.scores {
            w.write_all(&(*s as f32).to_le_bytes())?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreVector> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    binio::read_magic(&mut r, SCORE_MAGIC)?;
    let n = binio::read_count(&mut r, "score")?;
    let views_accumulated = binio::read_count(&mut r, "view")?;
    let scores = (0..n)
        .map(|_| binio::read_f32(&mut r).map(|v| v as f64))
        .collect::<Result<Vec<_>>>()?;
    binio::expect_eof(&mut r)?;
    Ok(ScoreVector {
        scores,
        views_accumulated,
    })
}
