pub mod bench;
pub mod deform;
pub mod eval;
pub mod group;
pub mod prune;
pub mod render;
pub mod sweep;
pub mod synth;

use std::path::PathBuf;

use speede::gaussian_model::TrainingView;
use speede::render::Image;
use speede::scene_synth::SceneBundle;

use crate::config::{self, PipelineConfig, Split};

#[derive(clap::Args, Debug)]
pub struct Common {
    /// Pipeline config file (TOML); flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

impl Common {
    pub fn load(&self) -> anyhow::Result<(PipelineConfig, u64)> {
        let cfg = config::load(self.config.as_deref())?;
        let seed = self.seed.or(cfg.seed).unwrap_or(0);
        crate::report::create_out(&self.out)?;
        Ok((cfg, seed))
    }
}

#[derive(clap::Args, Debug)]
pub struct Source {
    /// Scene bundle directory written by `synth`
    #[arg(long)]
    pub bundle: PathBuf,

    /// Model directory written by `prune` or `group`; the bundle's own
    /// model when omitted
    #[arg(long)]
    pub model: Option<PathBuf>,
}

pub fn split_views(bundle: &SceneBundle, split: Split) -> (&[TrainingView], &[Image]) {
    match split {
        Split::Train => (&bundle.train_views, &bundle.train_images),
        Split::Test => (&bundle.test_views, &bundle.test_images),
    }
}
