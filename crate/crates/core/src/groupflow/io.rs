//! GFLW1 persistence.
//!
//! Layout, little-endian: magic `GFLW1`; `J`, `F`, `N` as u64; `F` float64
//! timesteps; `lambda_r` as float64; `J×3` float32 controls; for each frame
//! and group a row-major float32 rotation and a float32 translation; `N`
//! uint32 group ids. Values are held as f64 in memory and narrowed on save.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::GroupFlowModel;
use crate::binio;
use crate::math::{Mat3, Vec3};
use crate::{Error, Result};

const MAGIC: &[u8] = b"GFLW1";

/// Serialized size in bytes.
pub fn gflw_len(model: &GroupFlowModel) -> usize {
    let (j, f, n) = (model.groups(), model.frames(), model.len());
    MAGIC.len() + 3 * 8 + f * 8 + 8 + j * 12 + f * j * 48 + n * 4
}

pub fn write_groupflow<W: Write>(model: &GroupFlowModel, w: &mut W) -> std::io::Result<()> {
    binio::write_magic(w, MAGIC)?;
    for c in [model.groups(), model.frames(), model.len()] {
        w.write_all(&(c as u64).to_le_bytes())?;
    }
    for t in &model.timesteps {
        w.write_all(&t.to_le_bytes())?;
    }
    w.write_all(&model.lambda_r.to_le_bytes())?;
    let f32s = |w: &mut W, vs: &mut dyn Iterator<Item = f64>| -> std::io::Result<()> {
        for v in vs {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    };
    f32s(w, &mut model.control_points.iter().flatten().copied())?;
    for (r, t) in model.rotations.iter().zip(&model.translations) {
        f32s(w, &mut (0..3).flat_map(|a| (0..3).map(move |b| r[(a, b)])))?;
        f32s(w, &mut t.iter().copied())?;
    }
    for g in &model.assignment {
        w.write_all(&g.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_groupflow(model: &GroupFlowModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_groupflow(model, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads and validates a GFLW1 stream, rejecting trailing bytes.
pub fn read_groupflow<R: Read>(r: &mut R) -> Result<GroupFlowModel> {
    binio::read_magic(r, MAGIC)?;
    let j = binio::read_count(r, "group")?;
    let f = binio::read_count(r, "frame")?;
    let n = binio::read_count(r, "Gaussian")?;
    let timesteps = (0..f)
        .map(|_| binio::read_f64(r))
        .collect::<Result<Vec<_>>>()?;
    let lambda_r = binio::read_f64(r)?;
    let f32x = |k: usize, r: &mut R| -> Result<Vec<f64>> {
        (0..k).map(|_| binio::read_f32(r).map(f64::from)).collect()
    };
    let controls = f32x(3 * j, r)?;
    let control_points = controls
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let slots = j
        .checked_mul(f)
        .filter(|&s| s <= 1 << 32)
        .ok_or_else(|| Error::Format(format!("implausible transform count {j}×{f}")))?;
    let mut rotations = Vec::with_capacity(slots.min(1 << 20));
    let mut translations = Vec::with_capacity(slots.min(1 << 20));
    for _ in 0..slots {
        let v = f32x(12, r)?;
        rotations.push(Mat3::from_row_slice(&v[..9]));
        translations.push(Vec3::new(v[9], v[10], v[11]));
    }
    let assignment = (0..n)
        .map(|_| binio::read_u32(r))
        .collect::<Result<Vec<_>>>()?;
    binio::expect_eof(r)?;
    let model = GroupFlowModel {
        control_points,
        rotations,
        translations,
        assignment,
        lambda_r,
        timesteps,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_groupflow(path: impl AsRef<Path>) -> Result<GroupFlowModel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_groupflow(&mut BufReader::new(file))
}
