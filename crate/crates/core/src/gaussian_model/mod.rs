//! Canonical Gaussian scene representation.
//!
//! Parameters are stored exactly as a 3DGS checkpoint stores them: log-space
//! scales, logit-space opacities, `w`-first rotation quaternions and SH
//! coefficients with the DC band first. Activations are applied when a frame
//! is built for rendering (see [`crate::deformation::Frame`]).

mod camera;
mod ply;

pub use camera::{load_cameras, save_cameras, TrainingView};
pub use ply::{load_ply, ply_header, save_ply, write_ply};

use serde::Serialize;

use crate::{Error, Result};

/// Zeroth-order SH basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// Structure-of-arrays Gaussian cloud.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianCloud {
    pub means: Vec<[f32; 3]>,
    /// Log-space scales.
    pub scales: Vec<[f32; 3]>,
    /// `[w, x, y, z]`.
    pub rotations: Vec<[f32; 4]>,
    /// `N × sh_coeffs` RGB triples, DC coefficient first.
    pub sh: Vec<[f32; 3]>,
    /// Number of SH coefficients per Gaussian (1, 4, 9 or 16).
    pub sh_coeffs: usize,
    /// Logit-space opacities.
    pub opacities: Vec<f32>,
}

impl GaussianCloud {
    pub fn empty() -> Self {
        Self {
            sh_coeffs: 1,
            ..Default::default()
        }
    }

    /// Builds a cloud, checking that every array agrees on `N`.
    pub fn new(
        means: Vec<[f32; 3]>,
        scales: Vec<[f32; 3]>,
        rotations: Vec<[f32; 4]>,
        sh: Vec<[f32; 3]>,
        sh_coeffs: usize,
        opacities: Vec<f32>,
    ) -> Result<Self> {
        let n = means.len();
        if ![1, 4, 9, 16].contains(&sh_coeffs) {
            return Err(Error::Config(format!(
                "unsupported SH coefficient count {sh_coeffs}"
            )));
        }
        if scales.len() != n
            || rotations.len() != n
            || opacities.len() != n
            || sh.len() != n * sh_coeffs
        {
            return Err(Error::DimensionMismatch(format!(
                "cloud arrays disagree: means {n}, scales {}, rotations {}, sh {} (expected {}), opacities {}",
                scales.len(),
                rotations.len(),
                sh.len(),
                n * sh_coeffs,
                opacities.len()
            )));
        }
        Ok(Self {
            means,
            scales,
            rotations,
            sh,
            sh_coeffs,
            opacities,
        })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn sh_degree(&self) -> usize {
        match self.sh_coeffs {
            1 => 0,
            4 => 1,
            9 => 2,
            _ => 3,
        }
    }

    pub fn sh_dc(&self, i: usize) -> [f32; 3] {
        self.sh[i * self.sh_coeffs]
    }

    pub fn sh_dc_mut(&mut self, i: usize) -> &mut [f32; 3] {
        &mut self.sh[i * self.sh_coeffs]
    }

    /// Copies the Gaussians at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let k = self.sh_coeffs;
        Self {
            means: indices.iter().map(|&i| self.means[i]).collect(),
            scales: indices.iter().map(|&i| self.scales[i]).collect(),
            rotations: indices.iter().map(|&i| self.rotations[i]).collect(),
            sh: indices
                .iter()
                .flat_map(|&i| self.sh[i * k..(i + 1) * k].iter().copied())
                .collect(),
            sh_coeffs: k,
            opacities: indices.iter().map(|&i| self.opacities[i]).collect(),
        }
    }

    /// Float-bit equality, so NaN payloads and signed zeros compare exactly.
    pub fn bit_eq(&self, other: &Self) -> bool {
        fn bits<const D: usize>(a: &[[f32; D]], b: &[[f32; D]]) -> bool {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
        }
        self.sh_coeffs == other.sh_coeffs
            && bits(&self.means, &other.means)
            && bits(&self.scales, &other.scales)
            && bits(&self.rotations, &other.rotations)
            && bits(&self.sh, &other.sh)
            && self.opacities.len() == other.opacities.len()
            && self
                .opacities
                .iter()
                .zip(&other.opacities)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    LengthMismatch,
    NonFinite,
    ZeroNormQuaternion,
    NonPositiveScale,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::Validation {
                index: v.index,
                message: v.reason,
            }),
        }
    }
}

/// Lists every Gaussian that violates the cloud invariants. Never fails.
pub fn validate(cloud: &GaussianCloud) -> ValidationReport {
    let mut violations = Vec::new();
    let n = cloud.means.len();
    let lens = [
        ("scales", cloud.scales.len()),
        ("rotations", cloud.rotations.len()),
        ("opacities", cloud.opacities.len()),
        ("sh", cloud.sh.len() / cloud.sh_coeffs.max(1)),
    ];
    for (name, len) in lens {
        if len != n {
            violations.push(Violation {
                index: len.min(n),
                kind: ViolationKind::LengthMismatch,
                reason: format!("{name} has {len} entries, means has {n}"),
            });
        }
    }
    let k = cloud.sh_coeffs.max(1);
    let n_checked = lens.iter().map(|l| l.1).chain([n]).min().unwrap_or(0);
    for i in 0..n_checked {
        let finite = cloud.means[i].iter().all(|v| v.is_finite())
            && cloud.scales[i].iter().all(|v| v.is_finite())
            && cloud.rotations[i].iter().all(|v| v.is_finite())
            && cloud.opacities[i].is_finite()
            && cloud.sh[i * k..(i + 1) * k]
                .iter()
                .all(|c| c.iter().all(|v| v.is_finite()));
        if !finite {
            violations.push(Violation {
                index: i,
                kind: ViolationKind::NonFinite,
                reason: "non-finite parameter".into(),
            });
            continue;
        }
        let q = cloud.rotations[i].map(|v| v as f64);
        if crate::math::quat_norm(q) == 0.0 {
            violations.push(Violation {
                index: i,
                kind: ViolationKind::ZeroNormQuaternion,
                reason: "zero-norm quaternion".into(),
            });
        }
        if cloud.scales[i].iter().any(|&s| (s as f64).exp() <= 0.0) {
            violations.push(Violation {
                index: i,
                kind: ViolationKind::NonPositiveScale,
                reason: "scale underflows to zero after exponentiation".into(),
            });
        }
    }
    ValidationReport { violations }
}
