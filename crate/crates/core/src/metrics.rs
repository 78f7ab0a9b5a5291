//! Image quality, grouping purity, model size and render throughput.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deformation::{deform, DeformationField};
use crate::gaussian_model::{ply_header, GaussianCloud, TrainingView};
use crate::render::{render, Image};
use crate::{Error, Result};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// `10·log10(1/MSE)` on `[0, 1]` data, capped at 99 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian window; the 2-D window is its outer product.
pub fn ssim_window_1d() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Mean SSIM over all fully-contained 11×11 windows and all channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_with_gradient(a, b, false)?.0)
}

/// Single-channel plane, `w × h`.
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

/// Valid-mode separable correlation with the SSIM window.
fn filter_valid(p: &Plane, k: &[f64; SSIM_WINDOW]) -> Plane {
    let ow = p.w - SSIM_WINDOW + 1;
    let oh = p.h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * p.h];
    for y in 0..p.h {
        for x in 0..ow {
            let row = &p.data[y * p.w + x..y * p.w + x + SSIM_WINDOW];
            tmp[y * ow + x] = row.iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (j, kj) in k.iter().enumerate() {
                s += tmp[(y + j) * ow + x] * kj;
            }
            out[y * ow + x] = s;
        }
    }
    Plane {
        w: ow,
        h: oh,
        data: out,
    }
}

/// Adjoint of [`filter_valid`]: scatters each window value back over its
/// footprint.
fn filter_adjoint(p: &Plane, k: &[f64; SSIM_WINDOW], w: usize, h: usize) -> Plane {
    let mut tmp = vec![0.0; p.w * h];
    for y in 0..p.h {
        for x in 0..p.w {
            let v = p.data[y * p.w + x];
            for (j, kj) in k.iter().enumerate() {
                tmp[(y + j) * p.w + x] += v * kj;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..p.w {
            let v = tmp[y * p.w + x];
            for (i, ki) in k.iter().enumerate() {
                out[y * w + x + i] += v * ki;
            }
        }
    }
    Plane { w, h, data: out }
}

fn channel(img: &Image, c: usize) -> Plane {
    Plane {
        w: img.width as usize,
        h: img.height as usize,
        data: img.data.iter().skip(c).step_by(3).copied().collect(),
    }
}

/// SSIM and, optionally, its gradient with respect to every value of `a`.
pub fn ssim_with_gradient(
    a: &Image,
    b: &Image,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    a.same_shape(b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {w}x{h}"
        )));
    }
    let k = ssim_window_1d();
    let windows = (w - SSIM_WINDOW + 1) * (h - SSIM_WINDOW + 1);
    let norm = (windows * 3) as f64;
    let mut total = 0.0;
    let mut grad = with_grad.then(|| vec![0.0; a.data.len()]);
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let sq = |p: &Plane, q: &Plane| Plane {
            w: p.w,
            h: p.h,
            data: p.data.iter().zip(&q.data).map(|(u, v)| u * v).collect(),
        };
        let mu_x = filter_valid(&x, &k);
        let mu_y = filter_valid(&y, &k);
        let e_xx = filter_valid(&sq(&x, &x), &k);
        let e_yy = filter_valid(&sq(&y, &y), &k);
        let e_xy = filter_valid(&sq(&x, &y), &k);
        let n = mu_x.data.len();
        let (mut d_alpha, mut d_beta, mut d_gamma) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for o in 0..n {
            let (mx, my) = (mu_x.data[o], mu_y.data[o]);
            let vx = e_xx.data[o] - mx * mx;
            let vy = e_yy.data[o] - my * my;
            let cxy = e_xy.data[o] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if with_grad {
                let ds_dmx = 2.0 * my * a2 / (b1 * b2) - 2.0 * mx * s / b1;
                let ds_dvx = -s / b2;
                let ds_dcxy = 2.0 * a1 / (b1 * b2);
                d_alpha[o] = ds_dmx - 2.0 * mx * ds_dvx - my * ds_dcxy;
                d_beta[o] = 2.0 * ds_dvx;
                d_gamma[o] = ds_dcxy;
            }
        }
        if let Some(g) = grad.as_mut() {
            let plane = |d: Vec<f64>| Plane {
                w: mu_x.w,
                h: mu_x.h,
                data: d,
            };
            let ga = filter_adjoint(&plane(d_alpha), &k, w, h);
            let gb = filter_adjoint(&plane(d_beta), &k, w, h);
            let gc = filter_adjoint(&plane(d_gamma), &k, w, h);
            for p in 0..w * h {
                g[p * 3 + c] =
                    (ga.data[p] + gb.data[p] * x.data[p] + gc.data[p] * y.data[p]) / norm;
            }
        }
    }
    Ok((total / norm, grad))
}

/// Fraction of items whose predicted group's majority label matches their
/// own label.
pub fn grouping_purity(assignment: &[u32], labels: &[u32]) -> Result<f64> {
    if assignment.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} assignments vs {} labels",
            assignment.len(),
            labels.len()
        )));
    }
    if assignment.is_empty() {
        return Ok(1.0);
    }
    let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
    for (&g, &l) in assignment.iter().zip(labels) {
        *counts.entry((g, l)).or_default() += 1;
    }
    let mut best: HashMap<u32, usize> = HashMap::new();
    for ((g, _), c) in counts {
        let e = best.entry(g).or_default();
        *e = (*e).max(c);
    }
    Ok(best.values().sum::<usize>() as f64 / assignment.len() as f64)
}

/// Byte length of the cloud's PLY plus the motion model's parameters.
pub fn model_size(cloud: &GaussianCloud, motion: Option<&dyn DeformationField>) -> usize {
    let per_gaussian = (14 + 3 * cloud.sh_coeffs) * 4;
    ply_header(cloud.len(), cloud.sh_coeffs).len()
        + cloud.len() * per_gaussian
        + motion.map_or(0, |m| m.parameter_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
    pub background: [f64; 3],
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 2,
            iters: 10,
            seed: 0,
            background: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Median of batch means of per-iteration FPS.
    pub fps_mean: f64,
    pub fps_std: f64,
    pub n_gaussians: usize,
    pub model_bytes: usize,
    /// Means over views; `None` without ground truth.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub warmup: usize,
    pub measured: usize,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub report: BenchReport,
    /// One render per view, in input order.
    pub images: Vec<Image>,
}

/// Times deformation plus rendering of every view. Each timed iteration
/// visits the views in a seeded random order; image I/O is not timed.
pub fn bench_render(
    cloud: &GaussianCloud,
    field: &dyn DeformationField,
    views: &[TrainingView],
    ground_truth: Option<&[Image]>,
    config: &BenchConfig,
) -> Result<BenchOutcome> {
    if config.iters == 0 {
        return Err(Error::Config(
            "bench needs at least one measured iteration".into(),
        ));
    }
    if views.is_empty() {
        return Err(Error::Config("bench needs at least one view".into()));
    }
    if let Some(gt) = ground_truth {
        if gt.len() != views.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} ground-truth images for {} views",
                gt.len(),
                views.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut images: Vec<Option<Image>> = vec![None; views.len()];
    let mut fps = Vec::with_capacity(config.iters);
    for it in 0..config.warmup + config.iters {
        order.shuffle(&mut rng);
        let start = Instant::now();
        for &v in &order {
            let frame = deform(cloud, field, views[v].timestamp)?;
            let img = render(&frame, &views[v], config.background);
            if images[v].is_none() {
                images[v] = Some(img);
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        if it >= config.warmup {
            fps.push(views.len() as f64 / elapsed.max(1e-12));
        }
    }
    let images: Vec<Image> = images
        .into_iter()
        .map(|i| i.expect("every view rendered"))
        .collect();
    let (psnr_mean, ssim_mean) = match ground_truth {
        Some(gt) => {
            let mut p = 0.0;
            let mut s = 0.0;
            for (img, g) in images.iter().zip(gt) {
                p += psnr(img, g)?;
                s += ssim(img, g)?;
            }
            (Some(p / gt.len() as f64), Some(s / gt.len() as f64))
        }
        None => (None, None),
    };
    let report = BenchReport {
        fps_mean: median_of_means(&fps),
        fps_std: std_dev(&fps),
        n_gaussians: cloud.len(),
        model_bytes: model_size(cloud, Some(field)),
        psnr: psnr_mean,
        ssim: ssim_mean,
        warmup: config.warmup,
        measured: config.iters,
        seed: config.seed,
        threads: rayon::current_num_threads(),
    };
    Ok(BenchOutcome { report, images })
}

/// Splits `xs` into up to five contiguous batches and returns the median of
/// their means.
pub fn median_of_means(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let batches = xs.len().min(5);
    let mut means: Vec<f64> = (0..batches)
        .map(|b| {
            let lo = b * xs.len() / batches;
            let hi = (b + 1) * xs.len() / batches;
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    if batches % 2 == 1 {
        means[batches / 2]
    } else {
        0.5 * (means[batches / 2 - 1] + means[batches / 2])
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}
