use serde_json::json;
use speede::deformation::{sample_trajectories, save_trajectories, DeformationField};

use super::{Common, Source};
use crate::model;
use crate::report::{envelope, write_json, Stopwatch};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: Source,

    /// Timestamps to sample; the bundle's frame timesteps by default
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let clock = Stopwatch::start();
    let (_, seed) = a.common.load()?;
    let bundle = model::open_bundle(&a.source.bundle)?;
    let m = model::load(&bundle, a.source.model.as_deref())?;
    let times = a
        .times
        .clone()
        .unwrap_or_else(|| bundle.trajectories.timesteps().to_vec());
    let traj = sample_trajectories(m.field.as_ref(), &m.cloud, &times)?;
    save_trajectories(&traj, a.common.out.join("deformed.traj"))?;

    // Distance to the bundle's own motion of the same Gaussians.
    let reference: Box<dyn DeformationField> = match &m.kept {
        Some(k) => bundle.field.subset(&k.kept)?,
        None => Box::new(bundle.field.clone()),
    };
    let truth = sample_trajectories(reference.as_ref(), &m.cloud, &times)?;
    let sq: f64 = traj
        .positions()
        .iter()
        .zip(truth.positions())
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    let count = traj.positions().len().max(1) as f64;

    let resolved = json!({
        "source": { "bundle": a.source.bundle, "model": a.source.model },
        "times": times,
    });
    let report = envelope(
        "deform",
        &resolved,
        seed,
        json!({ "total_s": clock.seconds() }),
        &[],
        json!({
            "n_gaussians": traj.len(),
            "frames": traj.frames(),
            "field": m.field.name(),
            "reference_rmse": (sq / count).sqrt(),
        }),
    )?;
    write_json(&a.common.out.join("report.json"), &report)
}
