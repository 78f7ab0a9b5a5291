use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;
use speede::metrics::{bench_render, BenchConfig};

use super::{split_views, Common};
use crate::config::{pick, Split};
use crate::model;
use crate::report::{envelope, write_csv, write_json, Stopwatch, FPS_SCOPE, NO_LPIPS};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    common: Common,

    /// Scene bundle directory written by `synth`
    #[arg(long)]
    bundle: PathBuf,

    /// Model directories compared against the bundle's own model
    #[arg(long, value_delimiter = ',')]
    models: Vec<PathBuf>,

    #[arg(long, value_enum)]
    split: Option<Split>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
}

/// One CSV row; the JSON report nests the timing columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub model: String,
    pub n_gaussians: usize,
    pub model_bytes: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub fps_mean: f64,
    pub fps_std: f64,
    /// `fps_mean / baseline fps_mean`.
    pub speedup: f64,
    pub size_ratio: f64,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let clock = Stopwatch::start();
    let (cfg, seed) = a.common.load()?;
    let mut s = cfg.bench.clone();
    s.split = pick(a.split, s.split);
    s.warmup = pick(a.warmup, s.warmup);
    s.iters = pick(a.iters, s.iters);
    let bundle = model::open_bundle(&a.bundle)?;
    let (views, gt) = split_views(&bundle, s.split);
    let bench = BenchConfig {
        warmup: s.warmup,
        iters: s.iters,
        seed,
        background: bundle.spec.background,
    };

    let mut models = vec![model::baseline(&bundle)];
    for dir in &a.models {
        models.push(model::load(&bundle, Some(dir))?);
    }
    let mut rows: Vec<Row> = Vec::with_capacity(models.len());
    for m in &models {
        let r = bench_render(&m.cloud, m.field.as_ref(), views, Some(gt), &bench)?.report;
        let (base_fps, base_bytes) = rows
            .first()
            .map_or((r.fps_mean, r.model_bytes), |b| (b.fps_mean, b.model_bytes));
        rows.push(Row {
            model: m.label.clone(),
            n_gaussians: r.n_gaussians,
            model_bytes: r.model_bytes,
            psnr: r.psnr.unwrap_or(f64::NAN),
            ssim: r.ssim.unwrap_or(f64::NAN),
            fps_mean: r.fps_mean,
            fps_std: r.fps_std,
            speedup: r.fps_mean / base_fps,
            size_ratio: base_bytes as f64 / r.model_bytes as f64,
        });
    }
    write_csv(&a.common.out.join("bench.csv"), &rows)?;
    let json_rows: Vec<_> = rows
        .iter()
        .map(|r| {
            json!({
                "model": r.model,
                "n_gaussians": r.n_gaussians,
                "model_bytes": r.model_bytes,
                "psnr": r.psnr,
                "ssim": r.ssim,
                "size_ratio": r.size_ratio,
                "timing": { "fps_mean": r.fps_mean, "fps_std": r.fps_std, "speedup": r.speedup },
            })
        })
        .collect();
    let resolved = json!({ "bundle": a.bundle, "models": a.models, "bench": s, "harness": bench });
    let report = envelope(
        "bench",
        &resolved,
        seed,
        json!({ "total_s": clock.seconds() }),
        &[FPS_SCOPE, NO_LPIPS],
        json!({ "rows": json_rows }),
    )?;
    write_json(&a.common.out.join("bench.json"), &report)
}
