//! Isotropic linear elasticity: the 6x6 Voigt stiffness matrix and Hooke's
//! law.
//!
//! Because strains are stored with tensor (not engineering) shear
//! components, the shear diagonal of the stiffness matrix is `2*mu`.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SymTensor3;

/// Isotropic elastic constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ElasticParams {
    /// Young's modulus in MPa.
    pub e: f64,
    /// Poisson's ratio, strictly inside (-1, 0.5).
    pub nu: f64,
}

impl ElasticParams {
    pub fn new(e: f64, nu: f64) -> Result<Self> {
        let p = ElasticParams { e, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e > 0.0 && self.e.is_finite()) {
            return Err(Error::ParamDomain(format!(
                "Young's modulus must be positive, got {}",
                self.e
            )));
        }
        if !(self.nu > -1.0 && self.nu < 0.5) {
            return Err(Error::ParamDomain(format!(
                "Poisson's ratio must lie strictly in (-1, 0.5), got {}",
                self.nu
            )));
        }
        Ok(())
    }

    /// First Lame constant `E*nu / ((1+nu)(1-2nu))`.
    pub fn lambda(&self) -> f64 {
        self.e * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
    }

    /// Shear modulus `E / (2(1+nu))`.
    pub fn mu(&self) -> f64 {
        self.e / (2.0 * (1.0 + self.nu))
    }

    /// Bulk modulus `E / (3(1-2nu))`.
    pub fn bulk(&self) -> f64 {
        self.e / (3.0 * (1.0 - 2.0 * self.nu))
    }
}

/// Fourth-order isotropic stiffness in 6x6 Voigt matrix form (MPa).
///
/// Built once per run; constant under the isothermal small-strain
/// assumptions used throughout.
#[derive(Debug, Clone)]
pub struct Stiffness66 {
    c: Matrix6<f64>,
}

impl Stiffness66 {
    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.c
    }

    /// Element `C_kl` (zero-based Voigt indices).
    pub fn at(&self, k: usize, l: usize) -> f64 {
        self.c[(k, l)]
    }

    /// Hooke's law `sigma = C : elastic_strain`.
    pub fn hooke(&self, elastic_strain: &SymTensor3) -> SymTensor3 {
        let e = Vector6::from_column_slice(elastic_strain.components());
        let s = self.c * e;
        SymTensor3::new([s[0], s[1], s[2], s[3], s[4], s[5]])
    }
}

/// Builds the isotropic stiffness matrix from `E` and `nu`.
pub fn build_stiffness(p: &ElasticParams) -> Result<Stiffness66> {
    p.validate()?;
    let lambda = p.lambda();
    let mu = p.mu();
    let mut c = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = lambda;
        }
        c[(i, i)] = lambda + 2.0 * mu;
        // Tensor-shear convention: sigma_ij = 2*mu*eps_ij on the shear slots.
        c[(i + 3, i + 3)] = 2.0 * mu;
    }
    Ok(Stiffness66 { c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn lame_constants_for_copper() {
        let p = ElasticParams::new(130e3, 0.34).unwrap();
        // Oracle: direct evaluation of lambda = E*nu/((1+nu)(1-2nu)) and
        // mu = E/(2(1+nu)).
        assert_relative_eq!(p.lambda(), 103_078.358_208_955_24, max_relative = 1e-12);
        assert_relative_eq!(p.mu(), 48_507.462_686_567_16, max_relative = 1e-12);
        let c = build_stiffness(&p).unwrap();
        assert_relative_eq!(c.at(0, 0), p.lambda() + 2.0 * p.mu(), max_relative = 1e-14);
        assert_relative_eq!(c.at(0, 0), 200_093.283_582_089_56, max_relative = 1e-12);
        assert_relative_eq!(c.at(0, 1), p.lambda(), max_relative = 1e-14);
    }

    #[test]
    fn zero_poisson_decouples_axes() {
        let p = ElasticParams::new(200e3, 0.0).unwrap();
        let c = build_stiffness(&p).unwrap();
        assert_eq!(c.at(0, 1), 0.0);
        assert_relative_eq!(c.at(0, 0), p.e, max_relative = 1e-14);
    }

    #[test]
    fn rejects_invalid_poisson() {
        assert!(ElasticParams::new(100.0, 0.5).is_err());
        assert!(ElasticParams::new(100.0, -1.0).is_err());
        assert!(ElasticParams::new(-5.0, 0.3).is_err());
    }

    #[test]
    fn hooke_examples() {
        let p = ElasticParams::new(130e3, 0.34).unwrap();
        let c = build_stiffness(&p).unwrap();

        let zero = c.hooke(&SymTensor3::ZERO);
        assert_eq!(zero, SymTensor3::ZERO);

        // Uniaxial-stress-consistent strain: the elastic-slope oracle.
        let eps = 1e-3;
        let strain = SymTensor3::diag(eps, -p.nu * eps, -p.nu * eps);
        let sigma = c.hooke(&strain);
        assert_relative_eq!(sigma.component(0), p.e * eps, max_relative = 1e-12);
        assert_abs_diff_eq!(sigma.component(1), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sigma.component(2), 0.0, epsilon = 1e-9);

        // Hydrostatic strain: bulk-modulus identity.
        let e = 2e-3;
        let sigma = c.hooke(&SymTensor3::hydrostatic(e));
        for k in 0..3 {
            assert_relative_eq!(sigma.component(k), 3.0 * p.bulk() * e, max_relative = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn hooke_is_linear(
            x in prop::array::uniform6(-1e-2f64..1e-2),
            y in prop::array::uniform6(-1e-2f64..1e-2),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let p = ElasticParams::new(110e3, 0.3).unwrap();
            let c = build_stiffness(&p).unwrap();
            let x = SymTensor3::new(x);
            let y = SymTensor3::new(y);
            let lhs = c.hooke(&(x * a + y * b));
            let rhs = c.hooke(&x) * a + c.hooke(&y) * b;
            for k in 0..6 {
                let scale = rhs.component(k).abs().max(1.0);
                prop_assert!((lhs.component(k) - rhs.component(k)).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn stiffness_is_symmetric_positive_definite() {
        let mut state = 0x243f6a8885a308d3u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let e = 1e3 + next() * 4e5;
            let nu = -0.9 + next() * 1.39; // inside (-1, 0.5)
            let p = ElasticParams::new(e, nu).unwrap();
            let c = build_stiffness(&p).unwrap();
            assert_eq!(c.matrix(), &c.matrix().transpose());
            let eig = c.matrix().symmetric_eigenvalues();
            for k in 0..6 {
                assert!(eig[k] > 0.0, "eigenvalue {} <= 0 for E={e}, nu={nu}", eig[k]);
            }
        }
    }
}
