use serde::{Deserialize, Serialize};
use serde_json::json;
use speede::groupflow::{groupflow_compress, GroupFlowField};
use speede::metrics::{bench_render, grouping_purity, BenchConfig};

use super::{split_views, Common, Source};
use crate::config::{pick, Split};
use crate::model;
use crate::report::{envelope, write_csv, write_json, Stopwatch, FPS_SCOPE, TRAJECTORY_REFINEMENT};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: Source,

    /// Group counts to sweep, e.g. 5,10,20,50
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    split: Option<Split>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub groups: usize,
    pub param_floats: usize,
    pub file_bytes: usize,
    pub trajectory_rmse: f64,
    pub purity: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub fps_mean: f64,
    pub fps_std: f64,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let clock = Stopwatch::start();
    let (cfg, seed) = a.common.load()?;
    let mut bs = cfg.bench.clone();
    bs.split = pick(a.split, bs.split);
    bs.warmup = pick(a.warmup, bs.warmup);
    bs.iters = pick(a.iters, bs.iters);
    let groups = pick(a.groups, cfg.sweep.groups.clone());
    let bundle = model::open_bundle(&a.source.bundle)?;
    let m = model::load(&bundle, a.source.model.as_deref())?;
    let labels = model::model_labels(&bundle, &m);
    let (views, gt) = split_views(&bundle, bs.split);
    let bench = BenchConfig {
        warmup: bs.warmup,
        iters: bs.iters,
        seed,
        background: bundle.spec.background,
    };
    let mut rows = Vec::with_capacity(groups.len());
    for &j in &groups {
        let mut gs = cfg.group.clone();
        gs.groups = j;
        let grouping = gs.grouping(seed)?;
        let (flow, rep) =
            groupflow_compress(&m.cloud, m.field.as_ref(), &bundle.train_views, &grouping)?;
        let purity = grouping_purity(&flow.assignment, &labels)?;
        let field = GroupFlowField::new(flow);
        let b = bench_render(&m.cloud, &field, views, Some(gt), &bench)?.report;
        rows.push(Row {
            groups: rep.groups,
            param_floats: rep.params.floats,
            file_bytes: rep.file_bytes,
            trajectory_rmse: rep.trajectory_rmse,
            purity,
            psnr: b.psnr.unwrap_or(f64::NAN),
            ssim: b.ssim.unwrap_or(f64::NAN),
            fps_mean: b.fps_mean,
            fps_std: b.fps_std,
        });
    }
    write_csv(&a.common.out.join("sweep.csv"), &rows)?;
    let json_rows: Vec<_> = rows
        .iter()
        .map(|r| {
            json!({
                "groups": r.groups,
                "param_floats": r.param_floats,
                "file_bytes": r.file_bytes,
                "trajectory_rmse": r.trajectory_rmse,
                "purity": r.purity,
                "psnr": r.psnr,
                "ssim": r.ssim,
                "timing": { "fps_mean": r.fps_mean, "fps_std": r.fps_std },
            })
        })
        .collect();
    let resolved = json!({
        "source": { "bundle": a.source.bundle, "model": a.source.model },
        "groups": groups,
        "group": cfg.group,
        "bench": bs,
    });
    let report = envelope(
        "sweep",
        &resolved,
        seed,
        json!({ "total_s": clock.seconds() }),
        &[FPS_SCOPE, TRAJECTORY_REFINEMENT],
        json!({ "rows": json_rows }),
    )?;
    write_json(&a.common.out.join("sweep.json"), &report)
}
