//! End-to-end acceptance checks. Runs as a plain binary so the per-criterion
//! lines always reach the terminal; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use speede::deformation::{load_trajectories, save_trajectories, DeformationField, TrajectorySet};
use speede::gaussian_model::{load_ply, save_ply, GaussianCloud, TrainingView, SH_C0};
use speede::groupflow::{
    apply_group_flow, fit_rigid, groupflow_compress, lbs_apply, load_groupflow,
    nearest_control_assignment, rigid_residual, rotation_offset, save_groupflow, GroupFlowField,
    GroupFlowModel, GroupingConfig,
};
use speede::math::{quat_to_mat, rotation_angle_between, so3_exp, Mat3, Vec3};
use speede::metrics::{bench_render, grouping_purity, BenchConfig};
use speede::pruning::{
    accumulate_scores, load_scores, mean_psnr, opacity_scores, prune, run_prune_pipeline,
    save_scores, FinetuneConfig, NoiseSchedule, PipelineInputs, PruneSchedule, ScoreVector,
};
use speede::render::{footprint_gradients, gaussian_value, project, render, Frame};
use speede::scene_synth::{make_scene, SceneSpec};

const GRAD_MAX_REL_ERR: f64 = 1e-4;
const GRAD_MAGNITUDE_FLOOR: f64 = 1e-6;
const GRAD_BUDGET_S: f64 = 30.0;

const FIT_ROT_TOL: f64 = 1e-7;
const FIT_TRANS_TOL: f64 = 1e-8;
const FIT_GRID_DEG: f64 = 2.0;
const FIT_BUDGET_S: f64 = 60.0;

const PURITY_CLEAN: f64 = 0.99;
const RMSE_CLEAN: f64 = 1e-6;
const PURITY_JITTER: f64 = 0.95;

const MIN_SPEEDUP: f64 = 2.5;
const MIN_SHRINK: f64 = 5.0;
const MAX_PSNR_DROP_DB: f64 = 2.0;
const SPEED_BUDGET_S: f64 = 15.0 * 60.0;

/// Slack on "non-decreasing" PSNR for numerically identical reconstructions.
const SWEEP_PSNR_SLACK_DB: f64 = 1e-2;
const SWEEP_FPS_SPREAD: f64 = 0.10;
const SWEEP_FPS_ROUNDS: usize = 5;

const ROUNDTRIP_CASES: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 10] = [
        ("footprint gradients vs finite differences", gradient_oracle),
        (
            "rigid fit vs exact motions and grid search",
            rigid_fit_oracle,
        ),
        ("grouping purity and reconstruction", grouping_oracle),
        ("score direction", score_direction),
        ("speed and size after pruning and grouping", speed_and_size),
        ("annealed score noise under pose jitter", asp_robustness),
        ("group-count sweep trends", group_sweep),
        ("LBS and rotation-offset equivalences", variant_equivalence),
        ("determinism across runs and thread counts", determinism),
        ("format round trips", format_roundtrips),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] {:>2} {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            k + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

// 1 -------------------------------------------------------------------------

fn logit(a: f64) -> f64 {
    (a / (1.0 - a)).ln()
}

fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> Frame {
    let mut f = Frame {
        means: Vec::new(),
        rotations: Vec::new(),
        log_scales: Vec::new(),
        sh_dc: Vec::new(),
        opacity_logits: Vec::new(),
    };
    for _ in 0..n {
        f.means.push([
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.5..0.5),
        ]);
        let q: [f64; 4] = [0; 4].map(|_| rng.random_range(-1.0..1.0));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        f.rotations.push(q.map(|v| v / norm));
        f.log_scales
            .push([0; 3].map(|_| rng.random_range(0.08f64..0.3).ln()));
        f.sh_dc
            .push([0; 3].map(|_| (rng.random_range(0.05..0.95) - 0.5) / SH_C0));
        f.opacity_logits.push(logit(rng.random_range(0.05..0.6)));
    }
    f
}

/// Central difference in opacity, mapped to the footprint through
/// `∂I/∂g = (α/g)·∂I/∂α`.
fn fd_score(frame: &Frame, view: &TrainingView, bg: [f64; 3], i: usize) -> f64 {
    let alpha = 1.0 / (1.0 + (-frame.opacity_logits[i]).exp());
    let h = 1e-6;
    let at = |a: f64| {
        let mut f = frame.clone();
        f.opacity_logits[i] = logit(a);
        render(&f, view, bg)
    };
    let (plus, minus) = (at(alpha + h), at(alpha - h));
    let proj = project(frame, view);
    let Some(splat) = proj.splats.iter().find(|s| s.source_index == i) else {
        return 0.0;
    };
    let mut total = 0.0;
    for y in 0..view.height {
        for x in 0..view.width {
            if !splat.rect.contains(x, y) {
                continue;
            }
            let g = gaussian_value(splat, [x as f64, y as f64]);
            let (p, m) = (plus.pixel(x, y), minus.pixel(x, y));
            for c in 0..3 {
                let d = (alpha / g) * (p[c] - m[c]) / (2.0 * h);
                total += d * d;
            }
        }
    }
    total
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let view = TrainingView::look_at(
        [0.0, 0.0, -4.0],
        [0.0; 3],
        [0.0, -1.0, 0.0],
        14.0,
        14.0,
        16,
        16,
        0.0,
    );
    let (mut worst, mut compared) = (0.0f64, 0);
    let scenes = 25;
    for _ in 0..scenes {
        let n = rng.random_range(1..=10);
        let frame = random_frame(&mut rng, n);
        let bg = [0; 3].map(|_| rng.random_range(0.0..1.0));
        let analytic = footprint_gradients(&frame, &view, bg);
        for i in 0..n {
            let fd = fd_score(&frame, &view, bg, i);
            let scale = analytic[i].abs().max(fd.abs());
            if scale > GRAD_MAGNITUDE_FLOOR {
                worst = worst.max((analytic[i] - fd).abs() / scale);
                compared += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < GRAD_MAX_REL_ERR && secs < GRAD_BUDGET_S && compared > 0,
        format!(
            "{scenes} scenes, {compared} Gaussians, max rel err {worst:.2e} < {GRAD_MAX_REL_ERR:.0e}, {secs:.1} s < {GRAD_BUDGET_S} s"
        ),
    )
}

// 2 -------------------------------------------------------------------------

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    so3_exp(&(axis.normalize() * rng.random_range(0.0..std::f64::consts::PI)))
}

/// Best residual over a ZYZ Euler grid, translation solved in closed form.
fn grid_residual(src: &[Vec3], dst: &[Vec3], step_deg: f64) -> f64 {
    let m = src.len() as f64;
    let sc = src.iter().sum::<Vec3>() / m;
    let dc = dst.iter().sum::<Vec3>() / m;
    let a: Vec<Vec3> = src.iter().map(|s| s - sc).collect();
    let b: Vec<Vec3> = dst.iter().map(|d| d - dc).collect();
    let step = step_deg.to_radians();
    let angles = |hi: f64| -> Vec<f64> {
        (0..=(hi / step).round() as usize)
            .map(|k| k as f64 * step)
            .collect()
    };
    let rz: Vec<Mat3> = angles(std::f64::consts::TAU)
        .iter()
        .map(|&g| so3_exp(&Vec3::new(0.0, 0.0, g)))
        .collect();
    let ry: Vec<Mat3> = angles(std::f64::consts::PI)
        .iter()
        .map(|&g| so3_exp(&Vec3::new(0.0, g, 0.0)))
        .collect();
    let mut best = f64::INFINITY;
    for r1 in &rz {
        for r2 in &ry {
            let outer = r1 * r2;
            for r3 in &rz {
                let r = outer * r3;
                let res: f64 = a
                    .iter()
                    .zip(&b)
                    .map(|(p, q)| (q - r * p).norm_squared())
                    .sum();
                best = best.min(res);
            }
        }
    }
    best
}

fn rigid_fit_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut rot_err, mut trans_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let m = rng.random_range(3..40);
        let src = random_points(&mut rng, m);
        let r = random_rotation(&mut rng);
        let t = random_points(&mut rng, 1)[0] * 3.0;
        let pivot = random_points(&mut rng, 1)[0];
        let dst: Vec<Vec3> = src.iter().map(|s| r * (s - pivot) + pivot + t).collect();
        let fit = fit_rigid(&src, &dst, &pivot);
        rot_err = rot_err.max(rotation_angle_between(&fit.rotation, &r));
        trans_err = trans_err.max((fit.translation - t).norm());
    }
    let problems = 6;
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..problems {
        let src = random_points(&mut rng, 3);
        let dst: Vec<Vec3> = src
            .iter()
            .map(|p| p + random_points(&mut rng, 1)[0] * 0.5)
            .collect();
        let pivot = Vec3::zeros();
        let fit = fit_rigid(&src, &dst, &pivot);
        let ours = rigid_residual(&src, &dst, &pivot, &fit.rotation, &fit.translation);
        worst_gap = worst_gap.max(ours - grid_residual(&src, &dst, FIT_GRID_DEG));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        rot_err < FIT_ROT_TOL && trans_err < FIT_TRANS_TOL && worst_gap <= 0.0 && secs < FIT_BUDGET_S,
        format!(
            "100 motions: rot err {rot_err:.1e} < {FIT_ROT_TOL:.0e} rad, trans err {trans_err:.1e} < {FIT_TRANS_TOL:.0e}; \
             {problems} 3-point problems: max(fit - {FIT_GRID_DEG}° grid) = {worst_gap:.2e} <= 0; {secs:.1} s < {FIT_BUDGET_S} s"
        ),
    )
}

// 3 -------------------------------------------------------------------------

fn grouping_oracle() -> Outcome {
    let (mut clean_purity, mut clean_rmse, mut jitter_purity) =
        (f64::INFINITY, 0.0f64, f64::INFINITY);
    for seed in 0..5 {
        for noisy in [false, true] {
            let mut spec = SceneSpec {
                n_gaussians: 2000,
                n_clusters: 5,
                n_frames: 40,
                seed,
                ..Default::default()
            };
            if noisy {
                spec.trajectory_noise = 0.01 * spec.cluster_radius;
            }
            let scene = make_scene(&spec).expect("scene");
            let cfg = GroupingConfig {
                groups: 5,
                seed,
                ..Default::default()
            };
            let (model, report) =
                groupflow_compress(&scene.cloud, &scene.field, &scene.train_views, &cfg)
                    .expect("grouping");
            let purity = grouping_purity(&model.assignment, &scene.labels).expect("purity");
            if noisy {
                jitter_purity = jitter_purity.min(purity);
            } else {
                clean_purity = clean_purity.min(purity);
                clean_rmse = clean_rmse.max(report.trajectory_rmse);
            }
        }
    }
    outcome(
        clean_purity >= PURITY_CLEAN && clean_rmse < RMSE_CLEAN && jitter_purity >= PURITY_JITTER,
        format!(
            "5 seeds, J=5: clean purity {clean_purity:.4} >= {PURITY_CLEAN}, rmse {clean_rmse:.1e} < {RMSE_CLEAN:.0e}; \
             jittered purity {jitter_purity:.4} >= {PURITY_JITTER}"
        ),
    )
}

// 4 -------------------------------------------------------------------------

fn score_direction() -> Outcome {
    let seeds = 3;
    let (mut low, mut high, mut opac) = (0.0, 0.0, 0.0);
    for seed in 0..seeds {
        let scene = make_scene(&SceneSpec {
            seed,
            ..Default::default()
        })
        .expect("scene");
        let bg = scene.spec.background;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = accumulate_scores(
            &scene.cloud,
            &scene.field,
            &scene.train_views,
            &NoiseSchedule::disabled(),
            0,
            &mut rng,
            bg,
        )
        .expect("scores");
        let flipped = ScoreVector {
            scores: scores.scores.iter().map(|s| -s).collect(),
            views_accumulated: scores.views_accumulated,
        };
        let heuristic = opacity_scores(&scene.cloud);
        let psnr_after = |s: &ScoreVector| {
            let (cloud, kept) = prune(&scene.cloud, s, 0.5).expect("prune");
            let field = scene.field.subset(&kept.kept).expect("subset");
            mean_psnr(
                &cloud,
                field.as_ref(),
                &scene.test_views,
                &scene.test_images,
                bg,
            )
            .expect("psnr")
        };
        low += psnr_after(&scores) / seeds as f64;
        high += psnr_after(&flipped) / seeds as f64;
        opac += psnr_after(&heuristic) / seeds as f64;
    }
    outcome(
        low > high && low >= opac,
        format!("mean test PSNR over {seeds} seeds: prune lowest {low:.2} dB > prune highest {high:.2} dB, >= opacity {opac:.2} dB"),
    )
}

// 5 -------------------------------------------------------------------------

fn speed_and_size() -> Outcome {
    let start = Instant::now();
    let spec = SceneSpec {
        n_gaussians: 50_000,
        n_clusters: 10,
        width: 96,
        height: 96,
        image_noise: 0.02,
        ..Default::default()
    };
    let scene = make_scene(&spec).expect("scene");
    let bg = spec.background;
    let bench = BenchConfig {
        warmup: 1,
        iters: 5,
        seed: 0,
        background: bg,
    };
    let base = bench_render(
        &scene.cloud,
        &scene.field,
        &scene.test_views,
        Some(&scene.test_images),
        &bench,
    )
    .expect("bench")
    .report;
    let pruned = run_prune_pipeline(
        &scene.cloud,
        &scene.field,
        PipelineInputs {
            views: &scene.train_views,
            images: &scene.train_images,
            background: bg,
            seed: 0,
        },
        &PruneSchedule::default(),
        &NoiseSchedule::for_views(&scene.train_views),
        &FinetuneConfig::default(),
    )
    .expect("prune");
    let groups = 200.min(spec.n_clusters * 4);
    let cfg = GroupingConfig {
        groups,
        ..Default::default()
    };
    let (model, _) = groupflow_compress(
        &pruned.cloud,
        pruned.field.as_ref(),
        &scene.train_views,
        &cfg,
    )
    .expect("group");
    let field = GroupFlowField::new(model);
    let after = bench_render(
        &pruned.cloud,
        &field,
        &scene.test_views,
        Some(&scene.test_images),
        &bench,
    )
    .expect("bench")
    .report;
    let speedup = after.fps_mean / base.fps_mean;
    let shrink = base.model_bytes as f64 / after.model_bytes as f64;
    let drop = base.psnr.unwrap() - after.psnr.unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        speedup >= MIN_SPEEDUP && shrink >= MIN_SHRINK && drop <= MAX_PSNR_DROP_DB && secs < SPEED_BUDGET_S,
        format!(
            "50k Gaussians -> {}, J={groups}: fps {:.1} -> {:.1} (x{speedup:.2} >= {MIN_SPEEDUP}), \
             size x{shrink:.2} >= {MIN_SHRINK}, PSNR {:.2} -> {:.2} (drop {drop:.2} <= {MAX_PSNR_DROP_DB} dB), \
             {secs:.0} s < {SPEED_BUDGET_S} s",
            after.n_gaussians,
            base.fps_mean,
            after.fps_mean,
            base.psnr.unwrap(),
            after.psnr.unwrap()
        ),
    )
}

// 6 -------------------------------------------------------------------------

fn asp_robustness() -> Outcome {
    let seeds = 5;
    let (mut asp, mut plain, mut wins) = (0.0, 0.0, 0);
    for seed in 0..seeds {
        let spec = SceneSpec {
            n_gaussians: 5000,
            pose_jitter_rot: 0.5f64.to_radians(),
            seed,
            ..Default::default()
        };
        let scene = make_scene(&spec).expect("scene");
        let run = |noise: NoiseSchedule| {
            let out = run_prune_pipeline(
                &scene.cloud,
                &scene.field,
                PipelineInputs {
                    views: &scene.train_views,
                    images: &scene.train_images,
                    background: spec.background,
                    seed,
                },
                &PruneSchedule::default(),
                &noise,
                &FinetuneConfig::default(),
            )
            .expect("prune");
            mean_psnr(
                &out.cloud,
                out.field.as_ref(),
                &scene.test_views,
                &scene.test_images,
                spec.background,
            )
            .expect("psnr")
        };
        let a = run(NoiseSchedule::for_views(&scene.train_views));
        let p = run(NoiseSchedule::disabled());
        if a > p {
            wins += 1;
        }
        asp += a / seeds as f64;
        plain += p / seeds as f64;
    }
    outcome(
        asp >= plain,
        format!(
            "rot jitter 0.5°, {seeds} seeds: mean held-out PSNR annealed {asp:.4} >= standard {plain:.4} dB \
             (strictly better on {wins}/{seeds}, mean gain {:+.4} dB)",
            asp - plain
        ),
    )
}

// 7 -------------------------------------------------------------------------

fn group_sweep() -> Outcome {
    let spec = SceneSpec {
        n_gaussians: 10_000,
        n_clusters: 20,
        ..Default::default()
    };
    let scene = make_scene(&spec).expect("scene");
    let bench = BenchConfig {
        warmup: 2,
        iters: 10,
        seed: 0,
        background: spec.background,
    };
    let js = [5usize, 10, 20, 50];
    let mut fields = Vec::new();
    let mut rows = Vec::new();
    for &j in &js {
        let cfg = GroupingConfig {
            groups: j,
            ..Default::default()
        };
        let (model, report) =
            groupflow_compress(&scene.cloud, &scene.field, &scene.train_views, &cfg)
                .expect("group");
        let field = GroupFlowField::new(model);
        let b = bench_render(
            &scene.cloud,
            &field,
            &scene.test_views,
            Some(&scene.test_images),
            &bench,
        )
        .expect("bench")
        .report;
        rows.push((j, b.psnr.unwrap(), report.params.floats, 0.0));
        fields.push(field);
    }
    // Interleaved rounds so drifts in machine load hit every J alike.
    let mut samples = vec![Vec::new(); js.len()];
    for _ in 0..SWEEP_FPS_ROUNDS {
        for (k, field) in fields.iter().enumerate() {
            let b =
                bench_render(&scene.cloud, field, &scene.test_views, None, &bench).expect("bench");
            samples[k].push(b.report.fps_mean);
        }
    }
    for (row, mut s) in rows.iter_mut().zip(samples) {
        s.sort_by(f64::total_cmp);
        row.3 = s[s.len() / 2];
    }
    let monotone = rows
        .windows(2)
        .all(|w| w[1].1 >= w[0].1 - SWEEP_PSNR_SLACK_DB);
    let per_group = rows[0].2 / rows[0].0;
    let linear = rows.iter().all(|r| r.2 == per_group * r.0);
    let fps: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let mean_fps = fps.iter().sum::<f64>() / fps.len() as f64;
    let spread = (fps.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - fps.iter().cloned().fold(f64::INFINITY, f64::min))
        / mean_fps;
    let table: Vec<String> = rows
        .iter()
        .map(|(j, p, n, f)| format!("J={j}: {p:.2} dB, {n} params, {f:.0} fps"))
        .collect();
    outcome(
        monotone && linear && spread <= SWEEP_FPS_SPREAD,
        format!(
            "{}; PSNR non-decreasing (slack {SWEEP_PSNR_SLACK_DB} dB): {monotone}, params = {per_group}·J: {linear}, \
             median-of-{SWEEP_FPS_ROUNDS} fps spread {:.1}% <= {:.0}%",
            table.join("; "),
            spread * 100.0,
            SWEEP_FPS_SPREAD * 100.0
        ),
    )
}

// 8 -------------------------------------------------------------------------

fn random_flow(
    rng: &mut ChaCha8Rng,
    n: usize,
    j: usize,
    f: usize,
    rotate: bool,
) -> (Vec<[f64; 3]>, GroupFlowModel) {
    let means: Vec<[f64; 3]> = (0..n)
        .map(|_| [0; 3].map(|_| rng.random_range(-2.0..2.0)))
        .collect();
    let controls: Vec<[f64; 3]> = (0..j)
        .map(|_| [0; 3].map(|_| rng.random_range(-2.0..2.0)))
        .collect();
    let ts: Vec<f64> = (0..f).map(|k| k as f64 / (f - 1) as f64).collect();
    let mut model = GroupFlowModel::identity(controls, vec![0; n], 0.5, ts);
    model.assignment = nearest_control_assignment(&means, &model);
    for k in 1..f {
        for g in 0..j {
            let r = if rotate {
                random_rotation(rng)
            } else {
                Mat3::identity()
            };
            let t = random_points(rng, 1)[0];
            model.set_transform(k, g, r, t);
        }
    }
    (means, model)
}

fn variant_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut lbs_cases, mut lbs_bad, mut rot_cases, mut rot_bad) = (0, 0, 0, 0);
    for _ in 0..50 {
        let (n, j, f) = (
            rng.random_range(1..200),
            rng.random_range(1..12),
            rng.random_range(2..8),
        );
        let (means, model) = random_flow(&mut rng, n, j, f, true);
        let radii: Vec<f64> = (0..j).map(|_| rng.random_range(0.05..3.0)).collect();
        let (_, still) = random_flow(&mut rng, n, j, f, false);
        let quats: Vec<[f64; 4]> = (0..n)
            .map(|_| {
                let q: [f64; 4] = [0; 4].map(|_| rng.random_range(-1.0..1.0));
                let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                q.map(|v| v / norm)
            })
            .collect();
        for _ in 0..5 {
            let t = rng.random_range(-0.2..1.2);
            let a = apply_group_flow(&means, &model, t).unwrap();
            let b = lbs_apply(&means, &model, &radii, 1, t).unwrap();
            lbs_cases += 1;
            if a.iter()
                .flatten()
                .zip(b.iter().flatten())
                .any(|(x, y)| x.to_bits() != y.to_bits())
            {
                lbs_bad += 1;
            }
            let r = rotation_offset(&quats, &still, t).unwrap();
            rot_cases += 1;
            if r.iter()
                .flatten()
                .zip(quats.iter().flatten())
                .any(|(x, y)| x.to_bits() != y.to_bits())
            {
                rot_bad += 1;
            }
        }
    }
    outcome(
        lbs_bad == 0 && rot_bad == 0,
        format!(
            "LBS k=1 bit-equal to base flow in {}/{lbs_cases} cases; identity-rotation offset leaves quaternions bit-equal in {}/{rot_cases}",
            lbs_cases - lbs_bad,
            rot_cases - rot_bad
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn run_pipeline(root: &Path, threads: usize) -> Result<(), String> {
    std::fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let steps: [&[&str]; 10] = [
        &[
            "synth",
            "--out",
            "bundle",
            "--n-gaussians",
            "1500",
            "--n-views",
            "12",
            "--n-frames",
            "12",
            "--n-test-views",
            "3",
            "--width",
            "40",
            "--height",
            "40",
            "--trajectory-noise",
            "0.01",
            "--pose-jitter-rot",
            "0.01",
            "--image-noise",
            "0.02",
        ],
        &[
            "prune",
            "--bundle",
            "bundle",
            "--out",
            "pruned",
            "--fractions",
            "0.5,0.3",
            "--finetune-iters",
            "6",
        ],
        &[
            "group",
            "--bundle",
            "bundle",
            "--model",
            "pruned",
            "--out",
            "grouped",
            "--groups",
            "8",
            "--refine-iters",
            "5",
        ],
        &[
            "group",
            "--bundle",
            "bundle",
            "--model",
            "pruned",
            "--out",
            "lbs",
            "--groups",
            "8",
            "--variant",
            "lbs",
            "--k",
            "3",
        ],
        &[
            "deform", "--bundle", "bundle", "--model", "grouped", "--out", "deformed",
        ],
        &[
            "render", "--bundle", "bundle", "--model", "grouped", "--out", "rendered", "--split",
            "test",
        ],
        &[
            "eval", "--bundle", "bundle", "--model", "lbs", "--out", "eval", "--runs", "2",
        ],
        &[
            "bench",
            "--bundle",
            "bundle",
            "--models",
            "pruned,grouped,lbs",
            "--out",
            "bench",
            "--warmup",
            "0",
            "--iters",
            "1",
        ],
        &[
            "sweep", "--bundle", "bundle", "--model", "pruned", "--out", "sweep", "--groups",
            "2,4", "--warmup", "0", "--iters", "1",
        ],
        &[
            "synth",
            "--out",
            "bundle_again",
            "--n-gaussians",
            "1500",
            "--n-views",
            "12",
            "--n-frames",
            "12",
            "--n-test-views",
            "3",
            "--width",
            "40",
            "--height",
            "40",
            "--trajectory-noise",
            "0.01",
            "--pose-jitter-rot",
            "0.01",
            "--image-noise",
            "0.02",
        ],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_speede"))
            .current_dir(root)
            .arg("--threads")
            .arg(threads.to_string())
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "{} failed: {}",
                args[0],
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    Ok(())
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("timing");
            map.remove("threads");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

const TIMING_COLUMNS: [&str; 3] = ["fps_mean", "fps_std", "speedup"];

fn strip_csv_timing(bytes: &[u8]) -> Vec<Vec<String>> {
    let mut rd = csv::Reader::from_reader(bytes);
    let headers = rd.headers().expect("csv header").clone();
    let keep: Vec<usize> = (0..headers.len())
        .filter(|&i| !TIMING_COLUMNS.contains(&&headers[i]))
        .collect();
    let mut rows = vec![keep.iter().map(|&i| headers[i].to_string()).collect()];
    for rec in rd.records() {
        let rec = rec.expect("csv row");
        rows.push(keep.iter().map(|&i| rec[i].to_string()).collect());
    }
    rows
}

/// Relative path -> normalized content, timing stripped.
fn artifacts(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
                continue;
            }
            let bytes = std::fs::read(&p).unwrap();
            let norm = match p.extension().and_then(|e| e.to_str()) {
                Some("json") => {
                    let mut v: Value = serde_json::from_slice(&bytes).unwrap();
                    strip_timing(&mut v);
                    serde_json::to_vec(&v).unwrap()
                }
                Some("csv") => serde_json::to_vec(&strip_csv_timing(&bytes)).unwrap(),
                _ => bytes,
            };
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), norm);
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let runs = [("a", 1), ("b", 1), ("c", 8)];
    for (name, threads) in runs {
        if let Err(e) = run_pipeline(&tmp.path().join(name), threads) {
            return outcome(
                false,
                format!("pipeline run {name} ({threads} threads): {e}"),
            );
        }
    }
    let reference = artifacts(&tmp.path().join("a"));
    let mut diffs = Vec::new();
    for (name, threads) in &runs[1..] {
        let other = artifacts(&tmp.path().join(name));
        if other.keys().ne(reference.keys()) {
            diffs.push(format!("{name} ({threads} threads): different file set"));
        }
        for (path, content) in &reference {
            if other.get(path) != Some(content) {
                diffs.push(format!("{name} ({threads} threads): {}", path.display()));
            }
        }
    }
    // Two synth runs in the same tree must agree with each other too.
    let a = tmp.path().join("a");
    let same_bundle = artifacts(&a.join("bundle")) == artifacts(&a.join("bundle_again"));
    if !same_bundle {
        diffs.push("synth bundle differs between consecutive runs".into());
    }
    outcome(
        diffs.is_empty(),
        if diffs.is_empty() {
            format!(
                "{} artifacts from synth/prune/group/deform/render/eval/bench/sweep identical across 2 runs at 1 thread and 1 run at 8",
                reference.len()
            )
        } else {
            format!("differences: {}", diffs.join(", "))
        },
    )
}

// 10 ------------------------------------------------------------------------

fn unit_quat_f32(rng: &mut ChaCha8Rng) -> [f32; 4] {
    loop {
        let q: [f32; 4] = [0; 4].map(|_| rng.random_range(-1.0f32..1.0));
        let n = q.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if n > 0.1 {
            return q.map(|v| (v as f64 / n) as f32);
        }
    }
}

fn random_timesteps(rng: &mut ChaCha8Rng, f: usize) -> Vec<f64> {
    let mut t = rng.random_range(0.0..1.0) * if rng.random_bool(0.5) { 0.0 } else { 1.0 };
    (0..f)
        .map(|_| {
            let v = t;
            t += rng.random_range(1e-3..1.0);
            v
        })
        .collect()
}

fn format_roundtrips() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures: Vec<String> = Vec::new();
    let finite = |rng: &mut ChaCha8Rng| rng.random_range(-1e6f32..1e6);
    for case in 0..ROUNDTRIP_CASES {
        let n = rng.random_range(0..25);
        let k = [1usize, 4, 9, 16][rng.random_range(0..4)];
        let cloud = GaussianCloud::new(
            (0..n).map(|_| [0; 3].map(|_| finite(&mut rng))).collect(),
            (0..n)
                .map(|_| [0; 3].map(|_| rng.random_range(-10f32..2.0)))
                .collect(),
            (0..n).map(|_| unit_quat_f32(&mut rng)).collect(),
            (0..n * k)
                .map(|_| [0; 3].map(|_| finite(&mut rng)))
                .collect(),
            k,
            (0..n).map(|_| finite(&mut rng)).collect(),
        )
        .expect("cloud");
        let p = dir.path().join("c.ply");
        save_ply(&cloud, &p).unwrap();
        if !load_ply(&p).map(|c| c.bit_eq(&cloud)).unwrap_or(false) {
            failures.push(format!("PLY case {case}"));
        }

        let (n, f) = (rng.random_range(0..20), rng.random_range(2..9));
        let ts = random_timesteps(&mut rng, f);
        let positions = (0..n * f)
            .map(|_| [0; 3].map(|_| finite(&mut rng) as f64))
            .collect();
        let traj = TrajectorySet::new(n, ts, positions).expect("traj");
        let p = dir.path().join("t.traj");
        save_trajectories(&traj, &p).unwrap();
        if load_trajectories(&p).ok().as_ref() != Some(&traj) {
            failures.push(format!("TRAJ1 case {case}"));
        }

        let (j, f, n) = (
            rng.random_range(1..7),
            rng.random_range(2..7),
            rng.random_range(0..40),
        );
        let mut ts = random_timesteps(&mut rng, f);
        ts[0] = 0.0;
        let controls = (0..j)
            .map(|_| [0; 3].map(|_| finite(&mut rng) as f64))
            .collect();
        let assignment = (0..n).map(|_| rng.random_range(0..j as u32)).collect();
        let lambda = rng.random_range(0.0..=1.0f32) as f64;
        let mut model = GroupFlowModel::identity(controls, assignment, lambda, ts);
        for k in 1..f {
            for g in 0..j {
                let r =
                    quat_to_mat(unit_quat_f32(&mut rng).map(f64::from)).map(|v| v as f32 as f64);
                let t = Vec3::new(
                    finite(&mut rng) as f64,
                    finite(&mut rng) as f64,
                    finite(&mut rng) as f64,
                );
                model.set_transform(k, g, r, t);
            }
        }
        if model.validate().is_ok() {
            let p = dir.path().join("m.gflw");
            save_groupflow(&model, &p).unwrap();
            if load_groupflow(&p).ok().as_ref() != Some(&model) {
                failures.push(format!("GFLW1 case {case}"));
            }
        } else {
            failures.push(format!(
                "GFLW1 case {case}: generator produced an invalid model"
            ));
        }

        let m = rng.random_range(0..300);
        let scores = ScoreVector {
            scores: (0..m).map(|_| rng.random_range(0f32..1e9) as f64).collect(),
            views_accumulated: rng.random_range(0..u32::MAX) as usize,
        };
        let p = dir.path().join("s.scor");
        save_scores(&scores, &p).unwrap();
        if load_scores(&p).ok().as_ref() != Some(&scores) {
            failures.push(format!("SCOR1 case {case}"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "PLY, TRAJ1, GFLW1, SCOR1: {ROUNDTRIP_CASES} randomized cases each, all bit-exact"
            )
        } else {
            format!("failures: {}", failures.join(", "))
        },
    )
}
