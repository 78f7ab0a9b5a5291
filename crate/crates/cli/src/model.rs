//! Model directories: a cloud plus how it moves.
//!
//! A model directory holds `model.json`, naming the cloud file, optionally
//! the surviving indices of the bundle cloud (`kept`) and a group flow. No
//! model directory means the bundle's own cloud and ground-truth motion.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use speede::deformation::DeformationField;
use speede::gaussian_model::{load_ply, GaussianCloud};
use speede::groupflow::{load_groupflow, FlowVariant, GroupFlowField};
use speede::pruning::KeptIndexMap;
use speede::scene_synth::{read_bundle, SceneBundle};

pub const MANIFEST: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cloud: String,
    pub kept: Option<String>,
    pub flow: Option<String>,
    pub variant: Option<FlowVariant>,
}

pub struct Model {
    pub label: String,
    pub cloud: GaussianCloud,
    pub field: Box<dyn DeformationField>,
    pub kept: Option<KeptIndexMap>,
    pub has_flow: bool,
}

pub fn open_bundle(dir: &Path) -> anyhow::Result<SceneBundle> {
    read_bundle(dir).with_context(|| format!("reading scene bundle {}", dir.display()))
}

pub fn baseline(bundle: &SceneBundle) -> Model {
    Model {
        label: "baseline".into(),
        cloud: bundle.cloud.clone(),
        field: Box::new(bundle.field.clone()),
        kept: None,
        has_flow: false,
    }
}

pub fn read_kept(path: &Path) -> anyhow::Result<KeptIndexMap> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load(bundle: &SceneBundle, dir: Option<&Path>) -> anyhow::Result<Model> {
    let Some(dir) = dir else {
        return Ok(baseline(bundle));
    };
    let manifest_path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", manifest_path.display()))?;
    let cloud = load_ply(dir.join(&manifest.cloud))?;
    let kept = manifest
        .kept
        .as_ref()
        .map(|k| read_kept(&dir.join(k)))
        .transpose()?;
    if let Some(k) = &kept {
        if k.n_before != bundle.cloud.len() || k.kept.len() != cloud.len() {
            anyhow::bail!(
                "kept map in {} does not match the bundle and cloud",
                dir.display()
            );
        }
    }
    let field: Box<dyn DeformationField> = match &manifest.flow {
        Some(flow) => {
            let model = load_groupflow(dir.join(flow))?;
            if model.len() != cloud.len() {
                anyhow::bail!(
                    "flow covers {} Gaussians, cloud has {}",
                    model.len(),
                    cloud.len()
                );
            }
            Box::new(GroupFlowField {
                model,
                variant: manifest.variant.clone().unwrap_or(FlowVariant::Base),
            })
        }
        None => match &kept {
            Some(k) => bundle.field.subset(&k.kept)?,
            None => Box::new(bundle.field.clone()),
        },
    };
    Ok(Model {
        label: dir.file_name().map_or_else(
            || dir.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        ),
        cloud,
        field,
        kept,
        has_flow: manifest.flow.is_some(),
    })
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> anyhow::Result<()> {
    crate::report::write_json(&dir.join(MANIFEST), manifest)
}

/// Labels of the Gaussians in `model`, following its kept map.
pub fn model_labels(bundle: &SceneBundle, model: &Model) -> Vec<u32> {
    match &model.kept {
        Some(k) => k.kept.iter().map(|&i| bundle.labels[i]).collect(),
        None => bundle.labels.clone(),
    }
}
