//! Symmetric 3x3 tensors in Voigt notation and the stress invariants used
//! by the flow rule.
//!
//! Component order is `(11, 22, 33, 23, 13, 12)`. Off-diagonal slots store
//! *tensor* components for both stress and strain (no engineering-shear
//! factor), so every norm here counts the off-diagonal slots twice.

use std::ops::{Add, Mul, Neg, Sub};

/// A symmetric second-order tensor in 6-component Voigt form.
///
/// Stresses are in MPa, strains dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor3 {
    v: [f64; 6],
}

impl SymTensor3 {
    pub const ZERO: SymTensor3 = SymTensor3 { v: [0.0; 6] };

    pub fn new(v: [f64; 6]) -> Self {
        SymTensor3 { v }
    }

    /// Diagonal tensor `diag(a, b, c)`.
    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        SymTensor3 {
            v: [a, b, c, 0.0, 0.0, 0.0],
        }
    }

    /// Hydrostatic tensor `p * I`.
    pub fn hydrostatic(p: f64) -> Self {
        Self::diag(p, p, p)
    }

    pub fn components(&self) -> &[f64; 6] {
        &self.v
    }

    pub fn component(&self, k: usize) -> f64 {
        self.v[k]
    }

    pub fn set_component(&mut self, k: usize, value: f64) {
        self.v[k] = value;
    }

    pub fn trace(&self) -> f64 {
        self.v[0] + self.v[1] + self.v[2]
    }

    /// Mean stress `tr(t) / 3`.
    pub fn mean_stress(&self) -> f64 {
        self.trace() / 3.0
    }

    /// Deviatoric part `t - tr(t)/3 * I`.
    pub fn deviator(&self) -> SymTensor3 {
        let m = self.mean_stress();
        SymTensor3 {
            v: [
                self.v[0] - m,
                self.v[1] - m,
                self.v[2] - m,
                self.v[3],
                self.v[4],
                self.v[5],
            ],
        }
    }

    /// Full-tensor Frobenius norm; off-diagonal slots count twice.
    pub fn frobenius_norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    fn norm_squared(&self) -> f64 {
        let v = &self.v;
        v[0] * v[0]
            + v[1] * v[1]
            + v[2] * v[2]
            + 2.0 * (v[3] * v[3] + v[4] * v[4] + v[5] * v[5])
    }

    /// Von Mises equivalent value `sqrt(3/2) * ||deviator||`.
    pub fn von_mises(&self) -> f64 {
        (1.5 * self.deviator().norm_squared()).sqrt()
    }

    pub fn scale(&self, s: f64) -> SymTensor3 {
        let mut v = self.v;
        for x in &mut v {
            *x *= s;
        }
        SymTensor3 { v }
    }
}

impl Add for SymTensor3 {
    type Output = SymTensor3;
    fn add(self, rhs: SymTensor3) -> SymTensor3 {
        let mut v = self.v;
        for k in 0..6 {
            v[k] += rhs.v[k];
        }
        SymTensor3 { v }
    }
}

impl Sub for SymTensor3 {
    type Output = SymTensor3;
    fn sub(self, rhs: SymTensor3) -> SymTensor3 {
        let mut v = self.v;
        for k in 0..6 {
            v[k] -= rhs.v[k];
        }
        SymTensor3 { v }
    }
}

impl Mul<f64> for SymTensor3 {
    type Output = SymTensor3;
    fn mul(self, s: f64) -> SymTensor3 {
        self.scale(s)
    }
}

impl Neg for SymTensor3 {
    type Output = SymTensor3;
    fn neg(self) -> SymTensor3 {
        self.scale(-1.0)
    }
}
