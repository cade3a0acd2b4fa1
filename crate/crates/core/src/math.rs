//! Small rotation and matrix helpers shared by the renderer and losses.

use nalgebra::{Matrix3, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Rotation matrix of a unit quaternion stored as (w, x, y, z).
pub fn quat_to_mat(q: &Vector4<f64>) -> Mat3 {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
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

/// Pulls a gradient on the rotation matrix back to the (unit) quaternion entries.
pub fn quat_to_mat_backward(q: &Vector4<f64>, g: &Mat3) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    Vector4::new(dw, dx, dy, dz)
}

/// Quaternion (w, x, y, z) of a rotation matrix.
pub fn mat_to_quat(r: &Mat3) -> Vector4<f64> {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    Vector4::new(q.w, q.i, q.j, q.k)
}

/// Rotation that maps camera coordinates (x right, y down, z forward) to world
/// coordinates for a camera at `eye` looking at `target`.
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Mat3 {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(up);
    if right.norm() < 1e-9 {
        // looking along `up`; pick any perpendicular
        let alt = if forward.x.abs() < 0.9 {
            Vec3::x()
        } else {
            Vec3::y()
        };
        right = forward.cross(&alt);
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    Matrix3::from_columns(&[right, down, forward])
}
