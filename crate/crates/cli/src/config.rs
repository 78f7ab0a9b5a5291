//! Pipeline configuration: a TOML file with one table per command, any
//! value of which a flag can override.

use std::path::Path;

use serde::{Deserialize, Serialize};
use speede::groupflow::GroupingConfig;
use speede::pruning::{FinetuneConfig, NoiseSchedule, PruneEvent, PruneSchedule};
use speede::scene_synth::SceneSpec;

use crate::UsageError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub scene: Option<SceneSpec>,
    pub prune: PruneSettings,
    pub group: GroupSettings,
    pub bench: BenchSettings,
    pub sweep: SweepSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSettings {
    pub fractions: Vec<f64>,
    pub iterations: Vec<u64>,
    pub densify_end: u64,
    pub asp: bool,
    pub beta: f64,
    pub tau: u64,
    /// Frame interval for the noise amplitude; the mean view spacing when
    /// unset.
    pub delta_t: Option<f64>,
    pub finetune_iters: usize,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub ssim_weight: f64,
}

impl Default for PruneSettings {
    fn default() -> Self {
        let schedule = PruneSchedule::default();
        let noise = NoiseSchedule::default();
        let ft = FinetuneConfig::default();
        Self {
            fractions: schedule.events.iter().map(|e| e.fraction).collect(),
            iterations: schedule.events.iter().map(|e| e.iteration).collect(),
            densify_end: schedule.densify_end,
            asp: noise.enabled,
            beta: noise.beta,
            tau: noise.tau,
            delta_t: None,
            finetune_iters: ft.iters,
            lr_color: ft.lr_color,
            lr_opacity: ft.lr_opacity,
            ssim_weight: ft.ssim_weight,
        }
    }
}

impl PruneSettings {
    pub fn schedule(&self) -> anyhow::Result<PruneSchedule> {
        if self.fractions.len() != self.iterations.len() {
            return Err(UsageError(format!(
                "{} prune fractions but {} iterations",
                self.fractions.len(),
                self.iterations.len()
            ))
            .into());
        }
        let schedule = PruneSchedule {
            events: self
                .fractions
                .iter()
                .zip(&self.iterations)
                .map(|(&fraction, &iteration)| PruneEvent {
                    iteration,
                    fraction,
                })
                .collect(),
            densify_end: self.densify_end,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn noise(&self, mean_interval: f64) -> anyhow::Result<NoiseSchedule> {
        let noise = NoiseSchedule {
            beta: self.beta,
            delta_t: self.delta_t.unwrap_or(mean_interval),
            tau: self.tau,
            enabled: self.asp,
        };
        noise.validate()?;
        Ok(noise)
    }

    pub fn finetune(&self) -> FinetuneConfig {
        FinetuneConfig {
            iters: self.finetune_iters,
            lr_color: self.lr_color,
            lr_opacity: self.lr_opacity,
            ssim_weight: self.ssim_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Base,
    Rot,
    Lbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupSettings {
    pub groups: usize,
    pub lambda_r: f64,
    pub n_max: usize,
    pub refine_iters: usize,
    pub refine_step: f64,
    pub variant: VariantName,
    /// Neighbours blended by the LBS variant.
    pub k: usize,
}

impl Default for GroupSettings {
    fn default() -> Self {
        let g = GroupingConfig::default();
        Self {
            groups: g.groups,
            lambda_r: g.lambda_r,
            n_max: g.n_max,
            refine_iters: g.refine_iters,
            refine_step: g.refine_step,
            variant: VariantName::Base,
            k: 5,
        }
    }
}

impl GroupSettings {
    pub fn grouping(&self, seed: u64) -> anyhow::Result<GroupingConfig> {
        let cfg = GroupingConfig {
            groups: self.groups,
            lambda_r: self.lambda_r,
            n_max: self.n_max,
            seed,
            refine_iters: self.refine_iters,
            refine_step: self.refine_step,
        };
        cfg.validate()?;
        if self.variant == VariantName::Lbs && self.k == 0 {
            return Err(UsageError("--k must be at least 1".into()).into());
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub warmup: usize,
    pub iters: usize,
    pub split: Split,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            warmup: 2,
            iters: 10,
            split: Split::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub groups: Vec<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            groups: vec![5, 10, 20, 50],
        }
    }
}

pub fn load(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
}

/// `value` if set, else `fallback`.
pub fn pick<T>(value: Option<T>, fallback: T) -> T {
    value.unwrap_or(fallback)
}
