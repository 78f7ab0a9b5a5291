//! JSON/CSV output shared by the commands.

use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};

pub const NO_DENSIFICATION: &str = "no densification: pruning starts from the given cloud";
pub const FINETUNE_SCOPE: &str = "fine-tuning after pruning updates DC colour and opacity only";
pub const TRAJECTORY_REFINEMENT: &str =
    "group flows are fitted and refined on sampled trajectories, not the image loss";
pub const NO_LPIPS: &str = "LPIPS is not computed";
pub const FPS_SCOPE: &str = "FPS covers deformation plus CPU rendering and excludes image I/O";
pub const INTERPOLATION: &str = "flows between stored timesteps are interpolated (slerp/lerp)";

pub struct Stopwatch(Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Self(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Every report carries the command, resolved config, seed, thread count,
/// timings and deviations next to its result.
pub fn envelope(
    command: &str,
    config: &impl Serialize,
    seed: u64,
    timing: Value,
    deviations: &[&str],
    result: Value,
) -> anyhow::Result<Value> {
    Ok(json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(config)?,
        "seed": seed,
        "threads": rayon::current_num_threads(),
        "timing": timing,
        "deviations": deviations,
        "result": result,
    }))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn create_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
