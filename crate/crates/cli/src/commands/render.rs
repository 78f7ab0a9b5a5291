use rayon::prelude::*;
use serde_json::json;
use speede::deformation::deform;
use speede::metrics::{psnr, ssim};
use speede::render::render;

use super::{split_views, Common, Source};
use crate::config::Split;
use crate::model;
use crate::report::{envelope, write_json, Stopwatch};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: Source,

    #[arg(long, value_enum, default_value = "test")]
    split: Split,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let clock = Stopwatch::start();
    let (_, seed) = a.common.load()?;
    let bundle = model::open_bundle(&a.source.bundle)?;
    let m = model::load(&bundle, a.source.model.as_deref())?;
    let (views, gt) = split_views(&bundle, a.split);
    let frames_dir = a.common.out.join("frames");
    crate::report::create_out(&frames_dir)?;
    let prefix = match a.split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let per_view: Vec<(f64, f64)> = views
        .par_iter()
        .zip(gt)
        .enumerate()
        .map(|(i, (v, g))| {
            let frame = deform(&m.cloud, m.field.as_ref(), v.timestamp)?;
            let img = render(&frame, v, bundle.spec.background);
            img.save_png(frames_dir.join(format!("{prefix}_{i:04}.png")))?;
            Ok((psnr(&img, g)?, ssim(&img, g)?))
        })
        .collect::<speede::Result<_>>()?;
    let resolved = json!({
        "source": { "bundle": a.source.bundle, "model": a.source.model },
        "split": a.split,
    });
    let report = envelope(
        "render",
        &resolved,
        seed,
        json!({ "total_s": clock.seconds() }),
        &[],
        json!({
            "views": per_view.len(),
            "psnr": per_view.iter().map(|p| p.0).collect::<Vec<_>>(),
            "ssim": per_view.iter().map(|p| p.1).collect::<Vec<_>>(),
        }),
    )?;
    write_json(&a.common.out.join("report.json"), &report)
}
