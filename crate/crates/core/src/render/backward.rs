//! Analytic gradients of the composited image.
//!
//! For a pixel with compositing order `1..K`, `a_i = α_i g_i` and
//! `T_i = Π_{j<i} (1 - a_j)`:
//!
//! ```text
//! I = Σ_i c_i a_i T_i + bg · T_final
//! ∂I/∂a_i = c_i T_i - (Σ_{k>i} c_k a_k T_k + bg · T_final) / (1 - a_i)
//! ```
//!
//! The second term is the occlusion effect through every downstream
//! transmittance; `a_i ≤ 0.999` keeps the division bounded.

use rayon::prelude::*;

use super::{composite_pixel, project, Contribution, Frame, Image, Splat2D, TileBins, ALPHA_MAX};
use crate::gaussian_model::{TrainingView, SH_C0};
use crate::math::sigmoid;
use crate::{Error, Result};

/// Per-Gaussian `Σ_pixels Σ_channels (∂I/∂g_i)²` for one view.
///
/// Culled Gaussians get exactly 0.
pub fn footprint_gradients(frame: &Frame, view: &TrainingView, background: [f64; 3]) -> Vec<f64> {
    let proj = project(frame, view);
    let splats = &proj.splats;
    let (w, h) = (view.width, view.height);
    let bins = TileBins::new(splats, w, h);
    let partials: Vec<Vec<f64>> = (0..bins.bins.len())
        .into_par_iter()
        .map(|t| {
            let bin = &bins.bins[t];
            let rect = bins.tile_rect(t, w, h);
            let mut local = vec![0.0; bin.len()];
            let mut rec = Vec::new();
            for y in rect.y0..rect.y1 {
                for x in rect.x0..rect.x1 {
                    rec.clear();
                    let (_, t_final) = composite_pixel(splats, bin, x, y, Some(&mut rec));
                    let mut after = background.map(|b| b * t_final);
                    for c in rec.iter().rev() {
                        let s = &splats[bin[c.slot as usize] as usize];
                        let mut sq = 0.0;
                        for ch in 0..3 {
                            let d_a = s.color[ch] * c.t - after[ch] / (1.0 - c.a);
                            let d_g = s.alpha * d_a;
                            sq += d_g * d_g;
                            after[ch] += s.color[ch] * c.a * c.t;
                        }
                        local[c.slot as usize] += sq;
                    }
                }
            }
            local
        })
        .collect();
    let mut out = vec![0.0; frame.len()];
    merge_partials(splats, &bins, &partials, |src, v| out[src] += *v);
    out
}

fn merge_partials<T>(
    splats: &[Splat2D],
    bins: &TileBins,
    partials: &[Vec<T>],
    mut add: impl FnMut(usize, &T),
) {
    for (bin, local) in bins.bins.iter().zip(partials) {
        for (&k, v) in bin.iter().zip(local) {
            add(splats[k as usize].source_index, v);
        }
    }
}

/// `(1 - λ)·mean|I - gt| + λ·(1 - SSIM)/2`.
pub fn loss(rendered: &Image, gt: &Image, ssim_weight: f64) -> Result<f64> {
    Ok(loss_gradient(rendered, gt, ssim_weight, false)?.0)
}

/// Loss value and, if requested, `∂L/∂I` per channel value. The L1
/// subgradient is 0 where `I == gt`.
pub fn loss_gradient(
    rendered: &Image,
    gt: &Image,
    ssim_weight: f64,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    rendered.same_shape(gt)?;
    if !(0.0..=1.0).contains(&ssim_weight) {
        return Err(Error::Config(format!(
            "ssim weight {ssim_weight} outside [0, 1]"
        )));
    }
    let n = rendered.data.len() as f64;
    let l1 = rendered
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let mut value = (1.0 - ssim_weight) * l1;
    let mut grad = with_grad.then(|| {
        rendered
            .data
            .iter()
            .zip(&gt.data)
            .map(|(a, b)| {
                let s = if a > b {
                    1.0
                } else if a < b {
                    -1.0
                } else {
                    0.0
                };
                (1.0 - ssim_weight) * s / n
            })
            .collect::<Vec<f64>>()
    });
    if ssim_weight > 0.0 {
        let (ssim, ssim_grad) = crate::metrics::ssim_with_gradient(rendered, gt, with_grad)?;
        value += ssim_weight * (1.0 - ssim) * 0.5;
        if let (Some(g), Some(sg)) = (grad.as_mut(), ssim_grad) {
            for (gi, si) in g.iter_mut().zip(sg) {
                *gi -= 0.5 * ssim_weight * si;
            }
        }
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorOpacityGradients {
    pub loss: f64,
    /// `∂L/∂(SH DC coefficient)` per Gaussian.
    pub sh_dc: Vec<[f64; 3]>,
    /// `∂L/∂(opacity logit)` per Gaussian.
    pub opacity_logit: Vec<f64>,
    pub rendered: Image,
}

/// Gradients of [`loss`] with respect to DC colour and pre-sigmoid opacity.
pub fn color_opacity_gradients(
    frame: &Frame,
    view: &TrainingView,
    gt: &Image,
    ssim_weight: f64,
    background: [f64; 3],
) -> Result<ColorOpacityGradients> {
    if gt.width != view.width || gt.height != view.height {
        return Err(Error::DimensionMismatch(format!(
            "ground truth {}x{} vs view {}x{}",
            gt.width, gt.height, view.width, view.height
        )));
    }
    let proj = project(frame, view);
    let splats = &proj.splats;
    let rendered = super::render_projection(splats, view, background);
    let (loss, dl_di) = loss_gradient(&rendered, gt, ssim_weight, true)?;
    let dl_di = dl_di.expect("gradient requested");

    let (w, h) = (view.width, view.height);
    let bins = TileBins::new(splats, w, h);
    let partials: Vec<Vec<[f64; 4]>> = (0..bins.bins.len())
        .into_par_iter()
        .map(|t| {
            let bin = &bins.bins[t];
            let rect = bins.tile_rect(t, w, h);
            let mut local = vec![[0.0; 4]; bin.len()];
            let mut rec: Vec<Contribution> = Vec::new();
            for y in rect.y0..rect.y1 {
                for x in rect.x0..rect.x1 {
                    rec.clear();
                    let (_, t_final) = composite_pixel(splats, bin, x, y, Some(&mut rec));
                    let o = (y as usize * w as usize + x as usize) * 3;
                    let up = [dl_di[o], dl_di[o + 1], dl_di[o + 2]];
                    let mut after = background.map(|b| b * t_final);
                    for c in rec.iter().rev() {
                        let s = &splats[bin[c.slot as usize] as usize];
                        let acc = &mut local[c.slot as usize];
                        let mut d_a = 0.0;
                        for ch in 0..3 {
                            acc[ch] += up[ch] * c.a * c.t;
                            d_a += up[ch] * (s.color[ch] * c.t - after[ch] / (1.0 - c.a));
                            after[ch] += s.color[ch] * c.a * c.t;
                        }
                        acc[3] += d_a * c.g;
                    }
                }
            }
            local
        })
        .collect();

    let n = frame.len();
    let mut d_color = vec![[0.0; 3]; n];
    let mut d_alpha = vec![0.0; n];
    merge_partials(splats, &bins, &partials, |src, v| {
        for ch in 0..3 {
            d_color[src][ch] += v[ch];
        }
        d_alpha[src] += v[3];
    });

    let sh_dc = (0..n)
        .map(|i| {
            let mut g = [0.0; 3];
            for ch in 0..3 {
                let raw = 0.5 + SH_C0 * frame.sh_dc[i][ch];
                if raw > 0.0 && raw < 1.0 {
                    g[ch] = d_color[i][ch] * SH_C0;
                }
            }
            g
        })
        .collect();
    let opacity_logit = (0..n)
        .map(|i| {
            let s = sigmoid(frame.opacity_logits[i]);
            if s < ALPHA_MAX {
                d_alpha[i] * s * (1.0 - s)
            } else {
                0.0
            }
        })
        .collect();
    Ok(ColorOpacityGradients {
        loss,
        sh_dc,
        opacity_logit,
        rendered,
    })
}
