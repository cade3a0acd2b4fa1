//! Real spherical harmonics of degree 1 and 2 (the degree 0 term is the base color).

use crate::math::Vec3;
use crate::scene::SH_REST;

pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

pub(crate) fn rest_count(degree: usize) -> usize {
    match degree {
        0 => 0,
        1 => 3,
        _ => SH_REST,
    }
}

/// Basis values and their derivatives with respect to the unit direction.
pub fn sh_basis(degree: usize, d: &Vec3) -> ([f64; SH_REST], [[f64; 3]; SH_REST]) {
    let mut b = [0.0; SH_REST];
    let mut j = [[0.0; 3]; SH_REST];
    let (x, y, z) = (d.x, d.y, d.z);
    if degree >= 1 {
        b[0] = -SH_C1 * y;
        j[0] = [0.0, -SH_C1, 0.0];
        b[1] = SH_C1 * z;
        j[1] = [0.0, 0.0, SH_C1];
        b[2] = -SH_C1 * x;
        j[2] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        b[3] = SH_C2[0] * x * y;
        j[3] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        b[4] = SH_C2[1] * y * z;
        j[4] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        b[5] = SH_C2[2] * (2.0 * z * z - x * x - y * y);
        j[5] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        b[6] = SH_C2[3] * x * z;
        j[6] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        b[7] = SH_C2[4] * (x * x - y * y);
        j[7] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    (b, j)
}
