//! Rotation helpers. Quaternions are stored `[w, x, y, z]` throughout.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub fn vec3(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

pub fn vec3_f32(v: [f32; 3]) -> Vec3 {
    Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64)
}

pub fn to_array(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn mat3(rows: [[f64; 3]; 3]) -> Mat3 {
    Mat3::new(
        rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
        rows[2][1], rows[2][2],
    )
}

pub fn mat3_rows(m: &Mat3) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

pub fn quat_norm(q: [f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Normalizes `q`; a zero quaternion maps to the identity.
pub fn quat_normalize(q: [f64; 4]) -> [f64; 4] {
    let n = quat_norm(q);
    if n == 0.0 || !n.is_finite() {
        return [1.0, 0.0, 0.0, 0.0];
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Rotation matrix of a (not necessarily unit) quaternion; the quaternion is
/// normalized first.
pub fn quat_to_mat(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = quat_normalize(q);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion of a rotation matrix, with non-negative `w`.
pub fn mat_to_quat(m: &Mat3) -> [f64; 4] {
    let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
    let q = uq.quaternion();
    let out = [q.w, q.i, q.j, q.k];
    if out[0] < 0.0 {
        [-out[0], -out[1], -out[2], -out[3]]
    } else {
        out
    }
}

/// Exponential map from an axis-angle vector to SO(3).
pub fn so3_exp(omega: &Vec3) -> Mat3 {
    Rotation3::from_scaled_axis(*omega).into_inner()
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Geodesic distance between two rotations, in radians.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let rel = a.transpose() * b;
    // acos is ill-conditioned near 0; use the atan2 form.
    let cos = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = Vec3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    )
    .norm()
        * 0.5;
    s.atan2(cos)
}

/// Spherical interpolation between two rotation matrices.
pub fn slerp_mat(a: &Mat3, b: &Mat3, frac: f64) -> Mat3 {
    let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*a));
    let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*b));
    // nlerp fallback handles the antipodal case slerp refuses.
    let q = qa
        .try_slerp(&qb, frac, 1e-12)
        .unwrap_or_else(|| qa.nlerp(&qb, frac));
    q.to_rotation_matrix().into_inner()
}

pub fn quat_from_array(q: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

/// Max-abs deviation of `RᵀR` from the identity.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
