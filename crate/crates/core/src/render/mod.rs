//! CPU reference splat renderer.
//!
//! Gaussians are projected with the EWA approximation, sorted front to back
//! by `(depth, source_index)` and alpha-composited per pixel. Pixel `(x, y)`
//! is sampled at coordinates `(x, y)`, so a splat centred at `(cx, cy)` peaks
//! exactly on that pixel. Each splat only touches the pixels inside its
//! 3σ bounding box ([`Splat2D::rect`]); elsewhere its footprint is zero.
//!
//! Work is split into 16×16 tiles processed in parallel; every reduction is
//! merged in tile order, so results are bit-identical for any thread count.

mod backward;
mod image;

pub use backward::{
    color_opacity_gradients, footprint_gradients, loss, loss_gradient, ColorOpacityGradients,
};
pub use image::{write_pfm, Image};

use rayon::prelude::*;

use crate::gaussian_model::{GaussianCloud, TrainingView, SH_C0};
use crate::math::{quat_to_mat, sigmoid, Mat3, Vec3};

/// Camera-space depth below which Gaussians are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to both diagonal entries of every projected covariance.
pub const COV2D_DILATION: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.999;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const TILE_SIZE: u32 = 16;

/// Per-frame Gaussian parameters after deformation, ready to project.
///
/// Means, rotations and scales are posed for one timestamp; colour and
/// opacity stay in storage space (SH DC and logit) so the backward pass can
/// apply the activation chain rule.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    pub means: Vec<[f64; 3]>,
    /// Unit quaternions, `[w, x, y, z]`.
    pub rotations: Vec<[f64; 4]>,
    /// Log-space scales.
    pub log_scales: Vec<[f64; 3]>,
    pub sh_dc: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
}

impl Frame {
    /// The undeformed cloud.
    pub fn from_cloud(cloud: &GaussianCloud) -> Self {
        Self {
            means: cloud.means.iter().map(|m| m.map(|v| v as f64)).collect(),
            rotations: cloud
                .rotations
                .iter()
                .map(|q| crate::math::quat_normalize(q.map(|v| v as f64)))
                .collect(),
            log_scales: cloud.scales.iter().map(|s| s.map(|v| v as f64)).collect(),
            sh_dc: (0..cloud.len())
                .map(|i| cloud.sh_dc(i).map(|v| v as f64))
                .collect(),
            opacity_logits: cloud.opacities.iter().map(|&o| o as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Activated DC colour, clamped to `[0, 1]`.
pub fn dc_color(sh_dc: [f64; 3]) -> [f64; 3] {
    sh_dc.map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0))
}

/// Activated opacity, capped at [`ALPHA_MAX`].
pub fn activated_alpha(logit: f64) -> f64 {
    sigmoid(logit).min(ALPHA_MAX)
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// A Gaussian projected to screen space.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// Inverse covariance `[[a, b], [b, c]]` stored as `[a, b, c]`.
    pub inv_cov2d: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub alpha: f64,
    pub source_index: usize,
    /// Pixels inside the 3σ bounding box, clipped to the image.
    pub rect: PixelRect,
}

#[derive(Debug, Clone, Default)]
pub struct Projection {
    /// Front to back.
    pub splats: Vec<Splat2D>,
    pub culled: usize,
}

/// Projects every Gaussian of `frame` into `view`, culling those behind the
/// near plane, with zero opacity, or whose 3σ box misses the image.
pub fn project(frame: &Frame, view: &TrainingView) -> Projection {
    let w_rot = view.rotation_matrix();
    let w_t = view.translation_vector();
    let mut splats: Vec<Splat2D> = (0..frame.len())
        .filter_map(|i| project_one(frame, i, &w_rot, &w_t, view))
        .collect();
    let culled = frame.len() - splats.len();
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.source_index.cmp(&b.source_index))
    });
    Projection { splats, culled }
}

fn project_one(
    frame: &Frame,
    i: usize,
    w_rot: &Mat3,
    w_t: &Vec3,
    view: &TrainingView,
) -> Option<Splat2D> {
    let alpha = activated_alpha(frame.opacity_logits[i]);
    if alpha <= 0.0 || alpha.is_nan() {
        return None;
    }
    let m = frame.means[i];
    let p = w_rot * Vec3::new(m[0], m[1], m[2]) + w_t;
    if !(p.z > NEAR_PLANE) {
        return None;
    }
    let rot = quat_to_mat(frame.rotations[i]);
    let s = frame.log_scales[i].map(f64::exp);
    let rs = rot * Mat3::from_diagonal(&Vec3::new(s[0], s[1], s[2]));
    let cov3 = rs * rs.transpose();

    let (x, y, z) = (p.x, p.y, p.z);
    let j = nalgebra::Matrix2x3::new(
        view.fx / z,
        0.0,
        -view.fx * x / (z * z),
        0.0,
        view.fy / z,
        -view.fy * y / (z * z),
    );
    let t = j * w_rot;
    let cov2 = t * cov3 * t.transpose();
    let a = cov2[(0, 0)] + COV2D_DILATION;
    let b = cov2[(0, 1)];
    let c = cov2[(1, 1)] + COV2D_DILATION;
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let mean2d = [view.fx * x / z + view.cx, view.fy * y / z + view.cy];
    let ex = 3.0 * a.sqrt();
    let ey = 3.0 * c.sqrt();
    let clip = |lo: f64, hi: f64, size: u32| -> Option<(u32, u32)> {
        let lo = lo.ceil().max(0.0);
        let hi = (hi.floor() + 1.0).min(size as f64);
        if lo >= hi || !lo.is_finite() || !hi.is_finite() {
            None
        } else {
            Some((lo as u32, hi as u32))
        }
    };
    let (x0, x1) = clip(mean2d[0] - ex, mean2d[0] + ex, view.width)?;
    let (y0, y1) = clip(mean2d[1] - ey, mean2d[1] + ey, view.height)?;
    Some(Splat2D {
        mean2d,
        inv_cov2d: [c / det, -b / det, a / det],
        depth: z,
        color: dc_color(frame.sh_dc[i]),
        alpha,
        source_index: i,
        rect: PixelRect { x0, y0, x1, y1 },
    })
}

/// Footprint `g = exp(-½ dᵀ Σ⁻¹ d)` of `splat` at `pixel`.
pub fn gaussian_value(splat: &Splat2D, pixel: [f64; 2]) -> f64 {
    let dx = pixel[0] - splat.mean2d[0];
    let dy = pixel[1] - splat.mean2d[1];
    let [a, b, c] = splat.inv_cov2d;
    let q = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    q.min(0.0).exp()
}

/// Splat indices (into the sorted projection) overlapping each tile, in
/// compositing order.
pub(crate) struct TileBins {
    pub tiles_x: u32,
    pub bins: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn new(splats: &[Splat2D], width: u32, height: u32) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut bins = vec![Vec::new(); (tiles_x * tiles_y) as usize];
        for (k, s) in splats.iter().enumerate() {
            let r = s.rect;
            for ty in r.y0 / TILE_SIZE..=(r.y1 - 1) / TILE_SIZE {
                for tx in r.x0 / TILE_SIZE..=(r.x1 - 1) / TILE_SIZE {
                    bins[(ty * tiles_x + tx) as usize].push(k as u32);
                }
            }
        }
        Self { tiles_x, bins }
    }

    /// Pixel bounds of tile `t`, clipped to the image.
    pub fn tile_rect(&self, t: usize, width: u32, height: u32) -> PixelRect {
        let tx = t as u32 % self.tiles_x;
        let ty = t as u32 / self.tiles_x;
        PixelRect {
            x0: tx * TILE_SIZE,
            y0: ty * TILE_SIZE,
            x1: ((tx + 1) * TILE_SIZE).min(width),
            y1: ((ty + 1) * TILE_SIZE).min(height),
        }
    }
}

/// One compositing step recorded for the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    /// Position in the tile's bin.
    pub slot: u32,
    pub g: f64,
    /// `alpha · g`.
    pub a: f64,
    /// Transmittance in front of this splat.
    pub t: f64,
}

/// Composites one pixel front to back, optionally recording contributions.
/// Returns the unclamped colour and the final transmittance.
pub(crate) fn composite_pixel(
    splats: &[Splat2D],
    bin: &[u32],
    x: u32,
    y: u32,
    mut record: Option<&mut Vec<Contribution>>,
) -> ([f64; 3], f64) {
    let mut color = [0.0; 3];
    let mut t = 1.0;
    let pixel = [x as f64, y as f64];
    for (slot, &k) in bin.iter().enumerate() {
        let s = &splats[k as usize];
        if !s.rect.contains(x, y) {
            continue;
        }
        let g = gaussian_value(s, pixel);
        let a = s.alpha * g;
        for c in 0..3 {
            color[c] += s.color[c] * a * t;
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.push(Contribution {
                slot: slot as u32,
                g,
                a,
                t,
            });
        }
        t *= 1.0 - a;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    (color, t)
}

/// Renders `frame` from `view` over `background`.
pub fn render(frame: &Frame, view: &TrainingView, background: [f64; 3]) -> Image {
    let proj = project(frame, view);
    render_projection(&proj.splats, view, background)
}

pub fn render_projection(splats: &[Splat2D], view: &TrainingView, background: [f64; 3]) -> Image {
    let (w, h) = (view.width, view.height);
    let bins = TileBins::new(splats, w, h);
    let tiles: Vec<(PixelRect, Vec<f64>)> = (0..bins.bins.len())
        .into_par_iter()
        .map(|t| {
            let rect = bins.tile_rect(t, w, h);
            let mut buf =
                Vec::with_capacity(((rect.x1 - rect.x0) * (rect.y1 - rect.y0) * 3) as usize);
            for y in rect.y0..rect.y1 {
                for x in rect.x0..rect.x1 {
                    let (c, t_final) = composite_pixel(splats, &bins.bins[t], x, y, None);
                    for ch in 0..3 {
                        buf.push((c[ch] + background[ch] * t_final).clamp(0.0, 1.0));
                    }
                }
            }
            (rect, buf)
        })
        .collect();
    let mut img = Image::new(w, h);
    for (rect, buf) in tiles {
        let mut it = buf.chunks_exact(3);
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                let p = it.next().expect("tile buffer sized to rect");
                img.set_pixel(x, y, [p[0], p[1], p[2]]);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn view(w: u32, h: u32) -> TrainingView {
        TrainingView {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            fx: 20.0,
            fy: 20.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            timestamp: 0.0,
            image_path: String::new(),
        }
    }

    pub(crate) fn frame(points: &[([f64; 3], f64, [f64; 3], f64)]) -> Frame {
        Frame {
            means: points.iter().map(|p| p.0).collect(),
            rotations: vec![[1.0, 0.0, 0.0, 0.0]; points.len()],
            log_scales: points.iter().map(|p| [p.1.ln(); 3]).collect(),
            sh_dc: points
                .iter()
                .map(|p| p.2.map(|c| (c - 0.5) / SH_C0))
                .collect(),
            opacity_logits: points.iter().map(|p| p.3).collect(),
        }
    }

    #[test]
    fn on_axis_gaussian_projects_to_principal_point() {
        let f = frame(&[([0.0, 0.0, 3.0], 0.1, [0.5; 3], 0.0)]);
        let v = view(16, 16);
        let p = project(&f, &v);
        assert_eq!(p.splats.len(), 1);
        assert_abs_diff_eq!(p.splats[0].mean2d[0], v.cx, epsilon = 1e-12);
        assert_abs_diff_eq!(p.splats[0].mean2d[1], v.cy, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_behind_camera_is_culled() {
        let f = frame(&[
            ([0.0, 0.0, -3.0], 0.1, [0.5; 3], 0.0),
            ([0.0, 0.0, 3.0], 0.1, [0.5; 3], 0.0),
        ]);
        let p = project(&f, &view(16, 16));
        assert_eq!(p.culled, 1);
        assert_eq!(p.splats.len(), 1);
        assert_eq!(p.splats[0].source_index, 1);
    }

    #[test]
    fn splats_sort_front_to_back() {
        let f = frame(&[
            ([0.0, 0.0, 2.0], 0.1, [0.5; 3], 0.0),
            ([0.0, 0.0, 1.0], 0.1, [0.5; 3], 0.0),
        ]);
        let p = project(&f, &view(16, 16));
        assert_eq!(p.splats[0].source_index, 1);
        assert_eq!(p.splats[0].depth, 1.0);
        assert_eq!(p.splats[1].depth, 2.0);
    }

    #[test]
    fn equal_depths_break_ties_by_index() {
        let f = frame(&[
            ([0.1, 0.0, 2.0], 0.1, [0.5; 3], 0.0),
            ([-0.1, 0.0, 2.0], 0.1, [0.5; 3], 0.0),
        ]);
        let p = project(&f, &view(16, 16));
        assert_eq!(p.splats[0].source_index, 0);
    }

    #[test]
    fn footprint_values() {
        let s = Splat2D {
            mean2d: [4.0, 5.0],
            inv_cov2d: [1.0, 0.0, 1.0],
            depth: 1.0,
            color: [1.0; 3],
            alpha: 0.5,
            source_index: 0,
            rect: PixelRect {
                x0: 0,
                y0: 0,
                x1: 10,
                y1: 10,
            },
        };
        assert_eq!(gaussian_value(&s, [4.0, 5.0]), 1.0);
        assert_abs_diff_eq!(
            gaussian_value(&s, [5.0, 5.0]),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(gaussian_value(&s, [5.0, 5.0]), 0.6065, epsilon = 1e-4);
        let sigma = 2.0;
        let iso = Splat2D {
            inv_cov2d: [1.0 / (sigma * sigma), 0.0, 1.0 / (sigma * sigma)],
            ..s
        };
        assert_abs_diff_eq!(
            gaussian_value(&iso, [4.0 + 3.0 * sigma, 5.0]),
            (-4.5f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            gaussian_value(&iso, [4.0 + 3.0 * sigma, 5.0]),
            0.0111,
            epsilon = 1e-4
        );
    }

    #[test]
    fn empty_frame_renders_background() {
        let img = render(&Frame::default(), &view(8, 6), [0.2, 0.4, 0.6]);
        for y in 0..6 {
            for x in 0..8 {
                assert_eq!(img.pixel(x, y), [0.2, 0.4, 0.6]);
            }
        }
    }

    #[test]
    fn opaque_red_gaussian_over_black() {
        let f = frame(&[([0.0, 0.0, 2.0], 0.2, [1.0, 0.0, 0.0], 20.0)]);
        let v = view(16, 16);
        let img = render(&f, &v, [0.0; 3]);
        let p = img.pixel(8, 8);
        assert_abs_diff_eq!(p[0], 0.999, epsilon = 1e-12);
        assert_eq!(p[1], 0.0);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn two_overlapping_splats_match_explicit_blend() {
        let f = frame(&[
            ([0.05, 0.0, 2.0], 0.15, [0.9, 0.2, 0.1], 0.3),
            ([-0.03, 0.02, 1.5], 0.1, [0.1, 0.8, 0.3], -0.2),
        ]);
        let v = view(16, 16);
        let bg = [0.3, 0.3, 0.3];
        let img = render(&f, &v, bg);
        let proj = project(&f, &v);
        let (front, back) = (&proj.splats[0], &proj.splats[1]);
        for y in 0..16 {
            for x in 0..16 {
                let px = [x as f64, y as f64];
                let a1 = if front.rect.contains(x, y) {
                    front.alpha * gaussian_value(front, px)
                } else {
                    0.0
                };
                let a2 = if back.rect.contains(x, y) {
                    back.alpha * gaussian_value(back, px)
                } else {
                    0.0
                };
                for c in 0..3 {
                    let expect = front.color[c] * a1
                        + back.color[c] * a2 * (1.0 - a1)
                        + bg[c] * (1.0 - a1) * (1.0 - a2);
                    assert_abs_diff_eq!(img.pixel(x, y)[c], expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn permuting_inputs_gives_identical_image() {
        let pts = [
            ([0.05, 0.0, 2.0], 0.15, [0.9, 0.2, 0.1], 0.3),
            ([-0.03, 0.02, 1.5], 0.1, [0.1, 0.8, 0.3], -0.2),
            ([0.0, -0.05, 2.5], 0.2, [0.4, 0.4, 0.9], 1.0),
        ];
        let v = view(20, 20);
        let a = render(&frame(&pts), &v, [0.0; 3]);
        let b = render(&frame(&[pts[2], pts[0], pts[1]]), &v, [0.0; 3]);
        assert_eq!(a, b);
    }
}
