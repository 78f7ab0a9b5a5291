use rayon::prelude::*;
use serde_json::json;
use speede::deformation::deform;
use speede::metrics::{psnr, ssim};
use speede::render::render;

use super::{split_views, Common, Source};
use crate::config::Split;
use crate::model;
use crate::report::{envelope, write_json, Stopwatch, NO_LPIPS};
use crate::UsageError;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: Source,

    #[arg(long, value_enum, default_value = "test")]
    split: Split,

    /// Independent evaluation runs, reported separately and averaged
    #[arg(long, default_value_t = 1)]
    runs: usize,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let clock = Stopwatch::start();
    let (_, seed) = a.common.load()?;
    if a.runs == 0 {
        return Err(UsageError("--runs must be at least 1".into()).into());
    }
    let bundle = model::open_bundle(&a.source.bundle)?;
    let m = model::load(&bundle, a.source.model.as_deref())?;
    let (views, gt) = split_views(&bundle, a.split);
    let mut runs = Vec::with_capacity(a.runs);
    let mut run_times = Vec::with_capacity(a.runs);
    let (mut p_sum, mut s_sum) = (0.0, 0.0);
    for r in 0..a.runs {
        let start = Stopwatch::start();
        let per_view: Vec<(f64, f64)> = views
            .par_iter()
            .zip(gt)
            .map(|(v, g)| {
                let frame = deform(&m.cloud, m.field.as_ref(), v.timestamp)?;
                let img = render(&frame, v, bundle.spec.background);
                Ok((psnr(&img, g)?, ssim(&img, g)?))
            })
            .collect::<speede::Result<_>>()?;
        let n = per_view.len().max(1) as f64;
        let mp = per_view.iter().map(|p| p.0).sum::<f64>() / n;
        let ms = per_view.iter().map(|p| p.1).sum::<f64>() / n;
        p_sum += mp;
        s_sum += ms;
        run_times.push(start.seconds());
        runs.push(json!({
            "run": r,
            "psnr": per_view.iter().map(|p| p.0).collect::<Vec<_>>(),
            "ssim": per_view.iter().map(|p| p.1).collect::<Vec<_>>(),
            "mean_psnr": mp,
            "mean_ssim": ms,
        }));
    }
    let resolved = json!({
        "source": { "bundle": a.source.bundle, "model": a.source.model },
        "split": a.split,
        "runs": a.runs,
    });
    let report = envelope(
        "eval",
        &resolved,
        seed,
        json!({ "run_s": run_times, "total_s": clock.seconds() }),
        &[NO_LPIPS],
        json!({
            "n_gaussians": m.cloud.len(),
            "runs": runs,
            "mean": { "psnr": p_sum / a.runs as f64, "ssim": s_sum / a.runs as f64 },
        }),
    )?;
    write_json(&a.common.out.join("quality.json"), &report)
}
