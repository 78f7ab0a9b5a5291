use serde_json::json;
use speede::gaussian_model::save_ply;
use speede::groupflow::{
    default_lbs_radii, groupflow_compress, save_groupflow, FlowVariant, GroupFlowField,
};
use speede::metrics::{grouping_purity, model_size};
use speede::pruning::mean_psnr;

use super::{Common, Source};
use crate::config::{pick, VariantName};
use crate::model::{self, Manifest};
use crate::report::{envelope, write_json, Stopwatch, INTERPOLATION, TRAJECTORY_REFINEMENT};
use crate::UsageError;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: Source,

    /// Number of groups J
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    lambda_r: Option<f64>,
    /// Members sampled per group for each fit
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    refine_iters: Option<usize>,
    #[arg(long)]
    refine_step: Option<f64>,
    #[arg(long, value_enum)]
    variant: Option<VariantName>,
    /// Neighbours blended by the LBS variant
    #[arg(long)]
    k: Option<usize>,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let clock = Stopwatch::start();
    let (cfg, seed) = a.common.load()?;
    let mut s = cfg.group.clone();
    s.groups = pick(a.groups, s.groups);
    s.lambda_r = pick(a.lambda_r, s.lambda_r);
    s.n_max = pick(a.n_max, s.n_max);
    s.refine_iters = pick(a.refine_iters, s.refine_iters);
    s.refine_step = pick(a.refine_step, s.refine_step);
    s.variant = pick(a.variant, s.variant);
    s.k = pick(a.k, s.k);
    let grouping = s.grouping(seed)?;

    let bundle = model::open_bundle(&a.source.bundle)?;
    let input = model::load(&bundle, a.source.model.as_deref())?;
    if input.has_flow {
        return Err(UsageError("group expects an ungrouped model".into()).into());
    }
    let (flow, rep) = groupflow_compress(
        &input.cloud,
        input.field.as_ref(),
        &bundle.train_views,
        &grouping,
    )?;
    let fitted = clock.seconds();
    let variant = match s.variant {
        VariantName::Base => FlowVariant::Base,
        VariantName::Rot => FlowVariant::RotationOffset,
        VariantName::Lbs => FlowVariant::Lbs {
            k: s.k,
            radii: default_lbs_radii(&flow),
        },
    };
    let labels = model::model_labels(&bundle, &input);
    let purity = grouping_purity(&flow.assignment, &labels)?;

    let out = &a.common.out;
    save_groupflow(&flow, out.join("flow.gflw"))?;
    save_ply(&input.cloud, out.join("cloud.ply"))?;
    if let Some(k) = &input.kept {
        write_json(&out.join("kept.json"), k)?;
    }
    model::write_manifest(
        out,
        &Manifest {
            cloud: "cloud.ply".into(),
            kept: input.kept.as_ref().map(|_| "kept.json".into()),
            flow: Some("flow.gflw".into()),
            variant: Some(variant.clone()),
        },
    )?;
    let field = GroupFlowField {
        model: flow,
        variant,
    };
    let bg = bundle.spec.background;
    let test_psnr = mean_psnr(
        &input.cloud,
        &field,
        &bundle.test_views,
        &bundle.test_images,
        bg,
    )?;
    let input_psnr = mean_psnr(
        &input.cloud,
        input.field.as_ref(),
        &bundle.test_views,
        &bundle.test_images,
        bg,
    )?;

    let mut deviations = vec![TRAJECTORY_REFINEMENT, INTERPOLATION];
    if s.variant == VariantName::Base {
        deviations.push("Gaussian orientations stay canonical under the base flow");
    }
    let resolved = json!({
        "source": { "bundle": a.source.bundle, "model": a.source.model },
        "group": s,
        "grouping": grouping,
    });
    let report = envelope(
        "group",
        &resolved,
        seed,
        json!({ "fit_s": fitted, "total_s": clock.seconds() }),
        &deviations,
        json!({
            "purity": purity,
            "grouping": rep,
            "test_psnr_input": input_psnr,
            "test_psnr": test_psnr,
            "model_bytes_input": model_size(&input.cloud, Some(input.field.as_ref())),
            "model_bytes": model_size(&input.cloud, Some(&field)),
        }),
    )?;
    write_json(&out.join("report.json"), &report)
}
