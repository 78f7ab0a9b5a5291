use std::path::PathBuf;

use anyhow::Context;
use serde_json::json;
use speede::scene_synth::{make_scene, write_bundle, SceneBundle, SceneSpec};

use super::Common;
use crate::report::{envelope, write_json, Stopwatch};
use crate::UsageError;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    common: Common,

    /// Scene spec (TOML); overrides the config file's `[scene]` table
    #[arg(long)]
    spec: Option<PathBuf>,

    #[arg(long)]
    n_gaussians: Option<usize>,
    #[arg(long)]
    n_clusters: Option<usize>,
    #[arg(long)]
    n_frames: Option<usize>,
    #[arg(long)]
    n_views: Option<usize>,
    #[arg(long)]
    n_test_views: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Trajectory jitter σ in world units
    #[arg(long)]
    trajectory_noise: Option<f64>,
    /// Training pose rotation jitter σ in radians
    #[arg(long)]
    pose_jitter_rot: Option<f64>,
    /// Training pose translation jitter σ in world units
    #[arg(long)]
    pose_jitter_trans: Option<f64>,
    /// Pixel noise σ on ground-truth images
    #[arg(long)]
    image_noise: Option<f64>,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let clock = Stopwatch::start();
    let (cfg, _) = a.common.load()?;
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| UsageError(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<SceneSpec>(&text)
                .map_err(|e| UsageError(format!("invalid scene spec {}: {e}", p.display())))?
        }
        None => cfg.scene.clone().unwrap_or_default(),
    };
    if let Some(s) = a.common.seed.or(cfg.seed) {
        spec.seed = s;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { spec.$f = v; })* };
    }
    set!(
        n_gaussians,
        n_clusters,
        n_frames,
        n_views,
        n_test_views,
        width,
        height
    );
    set!(
        trajectory_noise,
        pose_jitter_rot,
        pose_jitter_trans,
        image_noise
    );
    spec.validate()?;

    let scene = make_scene(&spec)?;
    let generated = clock.seconds();
    let (n, labels) = (scene.cloud.len(), scene.labels.clone());
    let bundle = SceneBundle::from(scene);
    write_bundle(&bundle, &a.common.out)
        .with_context(|| format!("writing bundle to {}", a.common.out.display()))?;

    let mut sizes = vec![0usize; spec.n_clusters];
    for l in labels {
        sizes[l as usize] += 1;
    }
    let report = envelope(
        "synth",
        &spec,
        spec.seed,
        json!({ "generate_s": generated, "total_s": clock.seconds() }),
        &[],
        json!({
            "n_gaussians": n,
            "cluster_sizes": sizes,
            "train_views": bundle.train_views.len(),
            "test_views": bundle.test_views.len(),
            "frames": bundle.trajectories.frames(),
        }),
    )?;
    write_json(&a.common.out.join("synth_report.json"), &report)
}
