//! Run configuration, read from TOML with every field optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::bath::BathParams;
use crate::bif::BifRounding;
use crate::diagrams::MAX_PAIRING_ORDER;
use crate::inchworm::{validate_density, Grid, Mat2, PredictorInstall, SolverOptions, SystemParams};

/// Tolerance used when the configuration names no rounding policy.
pub const DEFAULT_ROUND_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableName {
    Identity,
    SigmaX,
    SigmaY,
    SigmaZ,
}

impl ObservableName {
    pub fn matrix(self) -> Mat2 {
        match self {
            Self::Identity => Mat2::IDENTITY,
            Self::SigmaX => Mat2::SIGMA_X,
            Self::SigmaY => Mat2::SIGMA_Y,
            Self::SigmaZ => Mat2::SIGMA_Z,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub observable: ObservableName,
    /// Real initial density matrix, row-major.
    pub rho: [f64; 4],
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { epsilon: 1.0, delta: 1.0, observable: ObservableName::SigmaZ, rho: [1.0, 0.0, 0.0, 0.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    pub beta: f64,
    pub xi: f64,
    pub modes: usize,
    pub omega_c: f64,
    pub omega_max: f64,
}

impl Default for BathConfig {
    fn default() -> Self {
        let b = BathParams::default();
        Self { beta: b.beta, xi: b.xi, modes: b.modes, omega_c: b.omega_c, omega_max: b.omega_max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    pub dt: f64,
    /// Grid half-size `N`; the final time is `N Δt`.
    pub steps: usize,
    /// Series cap `M` (odd).
    pub order: usize,
    /// Rounding tolerance `η`; zero disables rounding.
    pub round_tol: Option<f64>,
    /// Bond cap `R`; exclusive with `round_tol`.
    pub max_bond: Option<usize>,
    /// Relative singular-value threshold for the correlation factorisation.
    pub svd_threshold: f64,
    pub use_symmetry: bool,
    pub predictor: PredictorInstall,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            steps: 20,
            order: 3,
            round_tol: None,
            max_bond: None,
            svd_threshold: crate::ttcore::DEFAULT_RANK_THRESHOLD,
            use_symmetry: true,
            predictor: PredictorInstall::Everywhere,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtmConfig {
    pub enabled: bool,
    /// Memory length in steps; the learning runs use the numerics grid.
    pub k_max: usize,
    /// Final time of the propagated trace.
    pub horizon: f64,
}

impl Default for TtmConfig {
    fn default() -> Self {
        Self { enabled: false, k_max: 10, horizon: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    /// Influence-functional cache; `None` always builds.
    pub cache_dir: Option<PathBuf>,
    /// Leave host-dependent fields (timings, thread count) out of the run record.
    pub deterministic: bool,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), cache_dir: Some(PathBuf::from("bif-cache")), deterministic: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub bath: BathConfig,
    pub numerics: NumericsConfig,
    pub ttm: TtmConfig,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.bath_params().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let n = &self.numerics;
        if n.order.is_multiple_of(2) || n.order + 1 > MAX_PAIRING_ORDER {
            return bad(format!("order M must be odd with M+1 <= {MAX_PAIRING_ORDER}, got {}", n.order));
        }
        if !(n.svd_threshold > 0.0 && n.svd_threshold < 1.0) {
            return bad(format!("svd_threshold must lie in (0, 1), got {}", n.svd_threshold));
        }
        self.rounding()?;
        self.system_params().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        validate_density(&self.rho()).map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.ttm.enabled {
            if self.ttm.k_max == 0 || self.ttm.k_max > n.steps {
                return bad(format!("ttm.k_max must lie in 1..={}, got {}", n.steps, self.ttm.k_max));
            }
            if !(self.ttm.horizon >= n.dt) || !self.ttm.horizon.is_finite() {
                return bad(format!("ttm.horizon must be at least one step, got {}", self.ttm.horizon));
            }
        }
        Ok(())
    }

    pub fn rounding(&self) -> Result<BifRounding, HarnessError> {
        match (self.numerics.round_tol, self.numerics.max_bond) {
            (Some(_), Some(_)) => Err(HarnessError::Config("round_tol and max_bond are mutually exclusive".into())),
            (None, Some(0)) => Err(HarnessError::Config("max_bond must be positive".into())),
            (None, Some(r)) => Ok(BifRounding::MaxBond(r)),
            (Some(0.0), None) => Ok(BifRounding::Exact),
            (Some(eta), None) if eta > 0.0 && eta < 1.0 => Ok(BifRounding::Tolerance(eta)),
            (Some(eta), None) => Err(HarnessError::Config(format!("round_tol must lie in [0, 1), got {eta}"))),
            (None, None) => Ok(BifRounding::Tolerance(DEFAULT_ROUND_TOL)),
        }
    }

    pub fn bath_params(&self) -> BathParams {
        let b = &self.bath;
        BathParams {
            beta: b.beta,
            xi: b.xi,
            modes: b.modes,
            omega_c: b.omega_c,
            omega_max: b.omega_max,
            dt: self.numerics.dt,
            n: self.numerics.steps,
        }
    }

    pub fn rho(&self) -> Mat2 {
        let r = self.system.rho;
        Mat2::real(r[0], r[1], r[2], r[3])
    }

    pub fn system_params(&self) -> SystemParams {
        SystemParams {
            epsilon: self.system.epsilon,
            delta: self.system.delta,
            observable: self.system.observable.matrix(),
            rho: self.rho(),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_order: self.numerics.order,
            use_symmetry: self.numerics.use_symmetry,
            predictor: self.numerics.predictor,
        }
    }

    pub fn grid(&self) -> Result<Grid, HarnessError> {
        Grid::new(self.numerics.steps, self.numerics.dt).map_err(|e| HarnessError::Config(e.to_string()))
    }
}
