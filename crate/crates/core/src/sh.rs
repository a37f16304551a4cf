//! Real spherical harmonics up to degree 3: view-dependent color evaluation
//! and the basis gradients the renderer backward needs.

use crate::scalar::{real, Real};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_DEGREE: usize = 3;

/// Evaluates the SH basis at a unit direction into `out[0..basis]`.
pub fn eval_basis<T: Real>(dir: &[T; 3], degree: usize, out: &mut [T; 16]) {
    assert!(degree <= MAX_DEGREE, "sh degree {degree} unsupported");
    let (x, y, z) = (dir[0], dir[1], dir[2]);
    out[0] = real(SH_C0);
    if degree == 0 {
        return;
    }
    let c1 = real::<T>(SH_C1);
    out[1] = -c1 * y;
    out[2] = c1 * z;
    out[3] = -c1 * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    let two = real::<T>(2.0);
    out[4] = real::<T>(SH_C2[0]) * xy;
    out[5] = real::<T>(SH_C2[1]) * yz;
    out[6] = real::<T>(SH_C2[2]) * (two * zz - xx - yy);
    out[7] = real::<T>(SH_C2[3]) * xz;
    out[8] = real::<T>(SH_C2[4]) * (xx - yy);
    if degree == 2 {
        return;
    }
    let three = real::<T>(3.0);
    let four = real::<T>(4.0);
    out[9] = real::<T>(SH_C3[0]) * y * (three * xx - yy);
    out[10] = real::<T>(SH_C3[1]) * xy * z;
    out[11] = real::<T>(SH_C3[2]) * y * (four * zz - xx - yy);
    out[12] = real::<T>(SH_C3[3]) * z * (two * zz - three * xx - three * yy);
    out[13] = real::<T>(SH_C3[4]) * x * (four * zz - xx - yy);
    out[14] = real::<T>(SH_C3[5]) * z * (xx - yy);
    out[15] = real::<T>(SH_C3[6]) * x * (xx - yy - three * zz);
}

/// Basis gradients with respect to the (unit) direction, one 3-vector per
/// basis function. Entries past the requested degree are left untouched.
pub fn eval_basis_grad<T: Real>(dir: &[T; 3], degree: usize, out: &mut [[T; 3]; 16]) {
    assert!(degree <= MAX_DEGREE, "sh degree {degree} unsupported");
    let (x, y, z) = (dir[0], dir[1], dir[2]);
    let zero = T::zero();
    out[0] = [zero; 3];
    if degree == 0 {
        return;
    }
    let c1 = real::<T>(SH_C1);
    out[1] = [zero, -c1, zero];
    out[2] = [zero, zero, c1];
    out[3] = [-c1, zero, zero];
    if degree == 1 {
        return;
    }
    let two = real::<T>(2.0);
    let four = real::<T>(4.0);
    let c20 = real::<T>(SH_C2[0]);
    let c21 = real::<T>(SH_C2[1]);
    let c22 = real::<T>(SH_C2[2]);
    let c23 = real::<T>(SH_C2[3]);
    let c24 = real::<T>(SH_C2[4]);
    out[4] = [c20 * y, c20 * x, zero];
    out[5] = [zero, c21 * z, c21 * y];
    out[6] = [-two * c22 * x, -two * c22 * y, four * c22 * z];
    out[7] = [c23 * z, zero, c23 * x];
    out[8] = [two * c24 * x, -two * c24 * y, zero];
    if degree == 2 {
        return;
    }
    let three = real::<T>(3.0);
    let six = real::<T>(6.0);
    let eight = real::<T>(8.0);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let c30 = real::<T>(SH_C3[0]);
    let c31 = real::<T>(SH_C3[1]);
    let c32 = real::<T>(SH_C3[2]);
    let c33 = real::<T>(SH_C3[3]);
    let c34 = real::<T>(SH_C3[4]);
    let c35 = real::<T>(SH_C3[5]);
    let c36 = real::<T>(SH_C3[6]);
    out[9] = [six * c30 * x * y, c30 * (three * xx - three * yy), zero];
    out[10] = [c31 * y * z, c31 * x * z, c31 * x * y];
    out[11] = [
        -two * c32 * x * y,
        c32 * (four * zz - xx - three * yy),
        eight * c32 * y * z,
    ];
    out[12] = [
        -six * c33 * x * z,
        -six * c33 * y * z,
        c33 * (six * zz - three * xx - three * yy),
    ];
    out[13] = [
        c34 * (four * zz - three * xx - yy),
        -two * c34 * x * y,
        eight * c34 * x * z,
    ];
    out[14] = [two * c35 * x * z, -two * c35 * y * z, c35 * (xx - yy)];
    out[15] = [
        c36 * (three * xx - yy - three * zz),
        -two * c36 * x * y,
        -six * c36 * x * z,
    ];
}

/// View-dependent rgb of one gaussian: 0.5 plus the SH expansion, clamped to
/// [0, 1] per channel. `coeffs` is coefficient-major rgb triples of length
/// 3 * (degree + 1)^2, `dir` must be unit length.
pub fn sh_color<T: Real>(coeffs: &[T], dir: &[T; 3], degree: usize) -> [T; 3] {
    let basis = crate::gaussians::sh_basis_len(degree);
    assert_eq!(coeffs.len(), basis * 3, "coeff width mismatch");
    let mut b = [T::zero(); 16];
    eval_basis(dir, degree, &mut b);
    let half = real::<T>(0.5);
    let mut rgb = [half; 3];
    for j in 0..basis {
        for c in 0..3 {
            rgb[c] += b[j] * coeffs[j * 3 + c];
        }
    }
    for c in rgb.iter_mut() {
        *c = c.max(T::zero()).min(T::one());
    }
    rgb
}
