use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::math::{mat3, mat3_rows, orthonormality_error, vec3, Mat3, Vec3};
use crate::{Error, Result};

/// A calibrated camera paired with the timestamp it observed.
///
/// Extrinsics map world to camera (`x_cam = R·x_world + t`) in the OpenCV
/// convention: `+x` right, `+y` down, `+z` forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingView {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub timestamp: f64,
    #[serde(default)]
    pub image_path: String,
}

impl TrainingView {
    /// Camera at `eye` looking at `target`, with `up` roughly opposite the
    /// image's `+y` axis.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
        timestamp: f64,
    ) -> Self {
        let eye = vec3(eye);
        let forward = (vec3(target) - eye).normalize();
        let right = forward.cross(&vec3(up)).normalize();
        let down = forward.cross(&right);
        let r = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        Self {
            rotation: mat3_rows(&r),
            translation: [t.x, t.y, t.z],
            fx,
            fy,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            width,
            height,
            timestamp,
            image_path: String::new(),
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        mat3(self.rotation)
    }

    pub fn translation_vector(&self) -> Vec3 {
        vec3(self.translation)
    }

    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation_matrix().transpose() * self.translation_vector())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rotation_matrix();
        if !r.iter().all(|v| v.is_finite()) || orthonormality_error(&r) > 1e-6 {
            return Err(Error::Config("camera rotation is not orthonormal".into()));
        }
        if r.determinant() <= 0.0 {
            return Err(Error::Config(
                "camera rotation has negative determinant".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera has zero image size".into()));
        }
        if !self.timestamp.is_finite()
            || !self.translation.iter().all(|v| v.is_finite())
            || ![self.fx, self.fy, self.cx, self.cy]
                .iter()
                .all(|v| v.is_finite())
        {
            return Err(Error::Config("camera has non-finite parameters".into()));
        }
        Ok(())
    }
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<TrainingView>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let views: Vec<TrainingView> = serde_json::from_str(&text)?;
    for v in &views {
        v.validate()?;
    }
    Ok(views)
}

pub fn save_cameras(views: &[TrainingView], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(views)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn look_at_points_forward_axis_at_target() {
        let v = TrainingView::look_at(
            [3.0, 1.0, 0.5],
            [0.0; 3],
            [0.0, 0.0, 1.0],
            50.0,
            50.0,
            32,
            32,
            0.0,
        );
        v.validate().unwrap();
        let p = v.rotation_matrix() * Vec3::zeros() + v.translation_vector();
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
        assert!(p.z > 0.0);
        assert_abs_diff_eq!(v.camera_center(), Vec3::new(3.0, 1.0, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn cameras_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.json");
        let views = vec![TrainingView::look_at(
            [0.0, -4.0, 0.0],
            [0.0; 3],
            [0.0, 0.0, 1.0],
            40.0,
            40.0,
            16,
            16,
            0.25,
        )];
        save_cameras(&views, &path).unwrap();
        assert_eq!(load_cameras(&path).unwrap(), views);
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut v = TrainingView::look_at(
            [0.0, -4.0, 0.0],
            [0.0; 3],
            [0.0, 0.0, 1.0],
            40.0,
            40.0,
            16,
            16,
            0.0,
        );
        v.rotation[0][0] = 2.0;
        assert!(v.validate().is_err());
    }
}
