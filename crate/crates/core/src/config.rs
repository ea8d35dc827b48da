//! Central numeric tolerances.
//!
//! Every threshold used by the crate has a default here. The CLI reads
//! overrides from `GWIRE_*` environment variables via [`Tolerances::from_env`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Eigenvalues at or below this are treated as zero when inverting.
    pub singular: f64,
    /// Allowed deviation of a sphere response from unit norm.
    pub sphere_norm: f64,
    /// Allowed deviation of a pmf from summing to one.
    pub pmf_sum: f64,
    /// Precision entries with magnitude at or below this are not edges.
    pub precision_zero: f64,
    /// ADMM penalty parameter.
    pub rho: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub max_iter: usize,
    pub glasso_tol: f64,
    pub glasso_max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            singular: 1e-12,
            sphere_norm: 1e-8,
            pmf_sum: 1e-8,
            precision_zero: 1e-8,
            rho: 1.0,
            eps_primal: 1e-3,
            eps_dual: 1e-3,
            max_iter: 3000,
            glasso_tol: 1e-6,
            glasso_max_iter: 500,
        }
    }
}

impl Tolerances {
    /// Defaults overridden by any of `GWIRE_SINGULAR_TOL`, `GWIRE_SPHERE_TOL`,
    /// `GWIRE_PMF_TOL`, `GWIRE_PRECISION_ZERO`, `GWIRE_RHO`, `GWIRE_EPS_PRIMAL`,
    /// `GWIRE_EPS_DUAL`, `GWIRE_MAX_ITER`, `GWIRE_GLASSO_TOL`, `GWIRE_GLASSO_MAX_ITER`.
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|key| std::env::var(key).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut t = Self::default();
        let real = |key: &str, slot: &mut f64| -> Result<()> {
            if let Some(raw) = lookup(key) {
                let v: f64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::Configuration(format!("{key}={raw} is not a number")))?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Configuration(format!("{key} must be positive")));
                }
                *slot = v;
            }
            Ok(())
        };
        real("GWIRE_SINGULAR_TOL", &mut t.singular)?;
        real("GWIRE_SPHERE_TOL", &mut t.sphere_norm)?;
        real("GWIRE_PMF_TOL", &mut t.pmf_sum)?;
        real("GWIRE_PRECISION_ZERO", &mut t.precision_zero)?;
        real("GWIRE_RHO", &mut t.rho)?;
        real("GWIRE_EPS_PRIMAL", &mut t.eps_primal)?;
        real("GWIRE_EPS_DUAL", &mut t.eps_dual)?;
        real("GWIRE_GLASSO_TOL", &mut t.glasso_tol)?;
        let count = |key: &str, slot: &mut usize| -> Result<()> {
            if let Some(raw) = lookup(key) {
                *slot = raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::Configuration(format!("{key}={raw} is not a count")))?;
                if *slot == 0 {
                    return Err(Error::Configuration(format!("{key} must be positive")));
                }
            }
            Ok(())
        };
        count("GWIRE_MAX_ITER", &mut t.max_iter)?;
        count("GWIRE_GLASSO_MAX_ITER", &mut t.glasso_max_iter)?;
        Ok(t)
    }
}
