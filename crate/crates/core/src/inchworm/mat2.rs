//! Dense 2×2 complex matrices for the two-level system operators.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Row-major `[a00, a01, a10, a11]`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat2(pub [C64; 4]);

const O: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([O; 4]);
    pub const IDENTITY: Mat2 = Mat2([ONE, O, O, ONE]);
    pub const SIGMA_X: Mat2 = Mat2([O, ONE, ONE, O]);
    pub const SIGMA_Y: Mat2 = Mat2([O, C64::new(0.0, -1.0), I, O]);
    pub const SIGMA_Z: Mat2 = Mat2([ONE, O, O, C64::new(-1.0, 0.0)]);

    pub fn new(a00: C64, a01: C64, a10: C64, a11: C64) -> Self {
        Mat2([a00, a01, a10, a11])
    }

    pub fn real(a00: f64, a01: f64, a10: f64, a11: f64) -> Self {
        Mat2([C64::new(a00, 0.0), C64::new(a01, 0.0), C64::new(a10, 0.0), C64::new(a11, 0.0)])
    }

    /// Matrix unit with a single one at `(row, col)`.
    pub fn unit(row: usize, col: usize) -> Self {
        let mut m = Mat2::ZERO;
        m.0[2 * row + col] = ONE;
        m
    }

    pub fn at(&self, row: usize, col: usize) -> C64 {
        self.0[2 * row + col]
    }

    pub fn adjoint(&self) -> Self {
        let [a, b, c, d] = self.0;
        Mat2([a.conj(), c.conj(), b.conj(), d.conj()])
    }

    pub fn trace(&self) -> C64 {
        self.0[0] + self.0[3]
    }

    pub fn scale(&self, s: C64) -> Self {
        Mat2(self.0.map(|z| z * s))
    }

    pub fn scale_re(&self, s: f64) -> Self {
        Mat2(self.0.map(|z| z * s))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (*self - self.adjoint()).norm() <= tol * (1.0 + self.norm())
    }

    /// `self += s · other`.
    #[inline]
    pub fn add_scaled(&mut self, s: C64, other: &Mat2) {
        for (x, y) in self.0.iter_mut().zip(other.0.iter()) {
            *x += s * y;
        }
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, rhs: Mat2) -> Mat2 {
        let mut out = self;
        out += rhs;
        out
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, rhs: Mat2) {
        for (x, y) in self.0.iter_mut().zip(rhs.0.iter()) {
            *x += y;
        }
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, rhs: Mat2) -> Mat2 {
        let mut out = self;
        for (x, y) in out.0.iter_mut().zip(rhs.0.iter()) {
            *x -= y;
        }
        out
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        Mat2(self.0.map(|z| -z))
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    #[inline]
    fn mul(self, r: Mat2) -> Mat2 {
        let [a, b, c, d] = self.0;
        let [e, f, g, h] = r.0;
        Mat2([a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h])
    }
}

impl Mul<C64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: C64) -> Mat2 {
        self.scale(s)
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        self.scale_re(s)
    }
}
