use clap::ArgAction;
use serde_json::{json, Value};
use speede::gaussian_model::save_ply;
use speede::metrics::model_size;
use speede::pruning::{
    mean_frame_interval, mean_psnr, run_prune_pipeline, save_scores, KeptIndexMap, PipelineInputs,
};

use super::{Common, Source};
use crate::config::pick;
use crate::model::{self, Manifest};
use crate::report::{envelope, write_json, Stopwatch, FINETUNE_SCOPE, NO_DENSIFICATION};
use crate::UsageError;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: Source,

    /// Fraction pruned at each event, e.g. 0.8,0.3
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Training iteration of each event, e.g. 15000,25000
    #[arg(long, value_delimiter = ',')]
    iterations: Option<Vec<u64>>,
    /// Perturb view timestamps with annealed noise while scoring
    #[arg(long, action = ArgAction::SetTrue, overrides_with = "no_asp")]
    asp: bool,
    #[arg(long, action = ArgAction::SetTrue)]
    no_asp: bool,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<u64>,
    /// Colour/opacity optimizer steps after each event
    #[arg(long)]
    finetune_iters: Option<usize>,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let clock = Stopwatch::start();
    let (cfg, seed) = a.common.load()?;
    let mut settings = cfg.prune.clone();
    if let Some(f) = a.fractions {
        if a.iterations.is_none() && f.len() != settings.iterations.len() {
            // One event per 10k iterations from the densification end.
            settings.iterations = (0..f.len() as u64)
                .map(|k| settings.densify_end + 10_000 * k)
                .collect();
        }
        settings.fractions = f;
    }
    if let Some(i) = a.iterations {
        settings.iterations = i;
    }
    if a.asp {
        settings.asp = true;
    }
    if a.no_asp {
        settings.asp = false;
    }
    settings.beta = pick(a.beta, settings.beta);
    settings.tau = pick(a.tau, settings.tau);
    settings.finetune_iters = pick(a.finetune_iters, settings.finetune_iters);

    let bundle = model::open_bundle(&a.source.bundle)?;
    let input = model::load(&bundle, a.source.model.as_deref())?;
    if input.has_flow {
        return Err(UsageError(
            "prune expects the bundle model or a pruned model, not a grouped one".into(),
        )
        .into());
    }
    let schedule = settings.schedule()?;
    let noise = settings.noise(mean_frame_interval(&bundle.train_views))?;
    let finetune = settings.finetune();
    let bg = bundle.spec.background;
    let outcome = run_prune_pipeline(
        &input.cloud,
        input.field.as_ref(),
        PipelineInputs {
            views: &bundle.train_views,
            images: &bundle.train_images,
            background: bg,
            seed,
        },
        &schedule,
        &noise,
        &finetune,
    )?;

    let out = &a.common.out;
    save_ply(&outcome.cloud, out.join("cloud.ply"))?;
    let prior = input
        .kept
        .clone()
        .unwrap_or_else(|| KeptIndexMap::identity(bundle.cloud.len()));
    let kept = prior.compose(&outcome.kept);
    write_json(&out.join("kept.json"), &kept)?;
    for (k, s) in outcome.scores.iter().enumerate() {
        save_scores(s, out.join(format!("scores_{k}.scor")))?;
    }
    model::write_manifest(
        out,
        &Manifest {
            cloud: "cloud.ply".into(),
            kept: Some("kept.json".into()),
            flow: None,
            variant: None,
        },
    )?;

    let test_psnr_before = mean_psnr(
        &input.cloud,
        input.field.as_ref(),
        &bundle.test_views,
        &bundle.test_images,
        bg,
    )?;
    let test_psnr_after = mean_psnr(
        &outcome.cloud,
        outcome.field.as_ref(),
        &bundle.test_views,
        &bundle.test_images,
        bg,
    )?;
    let mut events: Vec<Value> = Vec::new();
    let mut event_times = Vec::new();
    for e in &outcome.report.events {
        event_times.push(e.wall_time_s);
        events.push(json!({
            "iteration": e.iteration,
            "fraction": e.fraction,
            "n_before": e.n_before,
            "n_after": e.n_after,
            "psnr_before": e.psnr_before,
            "psnr_after": e.psnr_after,
        }));
    }
    let resolved = json!({
        "source": { "bundle": a.source.bundle, "model": a.source.model },
        "prune": settings,
        "schedule": schedule,
        "noise": noise,
        "finetune": finetune,
    });
    let report = envelope(
        "prune",
        &resolved,
        seed,
        json!({ "event_wall_s": event_times, "total_s": clock.seconds() }),
        &[NO_DENSIFICATION, FINETUNE_SCOPE],
        json!({
            "events": events,
            "n_input": input.cloud.len(),
            "n_final": outcome.cloud.len(),
            "test_psnr_before": test_psnr_before,
            "test_psnr_after": test_psnr_after,
            "model_bytes_before": model_size(&input.cloud, Some(input.field.as_ref())),
            "model_bytes_after": model_size(&outcome.cloud, Some(outcome.field.as_ref())),
        }),
    )?;
    write_json(&out.join("report.json"), &report)
}
