//! Harmonic bath: Ohmic mode sampling, two-point correlations on the time
//! grid and their truncated-SVD factorisation into a two-core tensor train.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ttcore::{self, TensorTrain, TtError};

#[derive(Debug, Error)]
pub enum BathError {
    #[error("invalid bath parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Tt(#[from] TtError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Physical and grid parameters of one bath/time-grid combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathParams {
    pub beta: f64,
    pub xi: f64,
    pub modes: usize,
    pub omega_c: f64,
    pub omega_max: f64,
    pub dt: f64,
    pub n: usize,
}

impl Default for BathParams {
    fn default() -> Self {
        Self { beta: 5.0, xi: 0.2, modes: 400, omega_c: 2.5, omega_max: 10.0, dt: 0.2, n: 20 }
    }
}

impl BathParams {
    pub fn validate(&self) -> Result<(), BathError> {
        let bad = |msg: String| Err(BathError::InvalidParams(msg));
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.xi >= 0.0) || !self.xi.is_finite() {
            return bad(format!("xi must be nonnegative, got {}", self.xi));
        }
        if self.modes == 0 {
            return bad("mode count must be at least 1".into());
        }
        if !(self.omega_c > 0.0) || !(self.omega_max > self.omega_c) || !self.omega_max.is_finite() {
            return bad(format!(
                "need omega_max > omega_c > 0, got omega_c={} omega_max={}",
                self.omega_c, self.omega_max
            ));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.n == 0 {
            return bad("grid half-size N must be at least 1".into());
        }
        Ok(())
    }

    /// Same bath at unit coupling, the canonical build point for influence functionals.
    pub fn at_unit_coupling(&self) -> Self {
        Self { xi: 1.0, ..self.clone() }
    }
}

/// Discrete harmonic modes: frequencies and coupling strengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathModes {
    pub freqs: Vec<f64>,
    pub couplings: Vec<f64>,
}

impl BathModes {
    pub fn new(freqs: Vec<f64>, couplings: Vec<f64>) -> Result<Self, BathError> {
        if freqs.is_empty() || freqs.len() != couplings.len() {
            return Err(BathError::InvalidParams(format!(
                "need matching nonempty mode lists, got {} frequencies and {} couplings",
                freqs.len(),
                couplings.len()
            )));
        }
        if freqs.iter().any(|&w| !(w > 0.0) || !w.is_finite()) || freqs.windows(2).any(|p| p[0] >= p[1]) {
            return Err(BathError::InvalidParams("frequencies must be positive and strictly increasing".into()));
        }
        if couplings.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(BathError::InvalidParams("couplings must be nonnegative".into()));
        }
        Ok(Self { freqs, couplings })
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }
}

/// Samples `L` modes from the Ohmic spectral density with exponential cutoff.
pub fn ohmic_discretize(p: &BathParams) -> Result<BathModes, BathError> {
    p.validate()?;
    let l = p.modes as f64;
    let span = -(-p.omega_max / p.omega_c).exp_m1(); // 1 - e^{-ωmax/ωc}
    let scale = (p.xi * p.omega_c * span / l).sqrt();
    let freqs: Vec<f64> = (1..=p.modes)
        .map(|j| {
            if j == p.modes {
                p.omega_max
            } else {
                -p.omega_c * (-(j as f64 / l) * span).ln_1p()
            }
        })
        .collect();
    let couplings = freqs.iter().map(|w| w * scale).collect();
    BathModes::new(freqs, couplings)
}

/// `coth(x)` for `x > 0`, written so large arguments neither overflow nor lose digits.
pub fn coth(x: f64) -> f64 {
    1.0 + 2.0 / (2.0 * x).exp_m1()
}

/// Bath two-point correlation between two signed times; depends on `|τ1| - |τ2|` only.
pub fn tpc_value(modes: &BathModes, beta: f64, tau1: f64, tau2: f64) -> C64 {
    tpc_at_lag(modes, beta, tau1.abs() - tau2.abs())
}

fn tpc_at_lag(modes: &BathModes, beta: f64, lag: f64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (&w, &c) in modes.freqs.iter().zip(&modes.couplings) {
        let amp = c * c / (2.0 * w);
        let (sn, cs) = (w * lag).sin_cos();
        acc += C64::new(amp * coth(beta * w / 2.0) * cs, -amp * sn);
    }
    acc
}

/// Correlations on the grid `k Δt`, `k = -N..N`, stored at index `k + N`.
#[derive(Clone, Debug, PartialEq)]
pub struct TpcMatrix {
    pub values: Array2<C64>,
    pub beta: f64,
    pub dt: f64,
    pub n: usize,
}

impl TpcMatrix {
    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    /// Entry for signed grid indices `k1, k2 ∈ [-N, N]`.
    pub fn at(&self, k1: i64, k2: i64) -> C64 {
        let n = self.n as i64;
        self.values[[(k1 + n) as usize, (k2 + n) as usize]]
    }
}

pub fn tpc_matrix(modes: &BathModes, beta: f64, dt: f64, n: usize) -> Result<TpcMatrix, BathError> {
    if !(beta > 0.0) || !(dt > 0.0) || n == 0 {
        return Err(BathError::InvalidParams(format!("need beta > 0, dt > 0, N >= 1 (got {beta}, {dt}, {n})")));
    }
    let ni = n as i64;
    // entries depend only on |k1| - |k2| ∈ [-N, N]
    let lags: Vec<C64> = (-ni..=ni)
        .into_par_iter()
        .map(|d| tpc_at_lag(modes, beta, d as f64 * dt))
        .collect();
    let dim = 2 * n + 1;
    let values = Array2::from_shape_fn((dim, dim), |(i, j)| {
        let d = (i as i64 - ni).abs() - (j as i64 - ni).abs();
        lags[(d + ni) as usize]
    });
    Ok(TpcMatrix { values, beta, dt, n })
}

/// Truncated SVD `B ≈ U S V^H` split as core one `U S` and core two `V^H`.
#[derive(Clone, Debug)]
pub struct TpcFactorization {
    /// `(2N+1) × r` left factor including singular values.
    pub left: Array2<C64>,
    /// `r × (2N+1)` right factor.
    pub right: Array2<C64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub threshold: f64,
}

impl TpcFactorization {
    /// Two-core tensor train; a rank-0 factorisation becomes zero rank-1 cores.
    pub fn to_tt(&self) -> TensorTrain {
        let dim = self.left.nrows();
        if self.rank == 0 {
            return TensorTrain::zeros(&[dim, dim]);
        }
        let r = self.rank;
        let c0 = Array3::from_shape_fn((1, dim, r), |(_, i, a)| self.left[[i, a]]);
        let c1 = Array3::from_shape_fn((r, dim, 1), |(a, i, _)| self.right[[a, i]]);
        TensorTrain::from_cores(vec![c0, c1]).expect("factor shapes chain by construction")
    }

    pub fn reconstruct(&self) -> Array2<C64> {
        let dim = self.left.nrows();
        let mut out = Array2::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..self.rank {
                    acc += self.left[[i, a]] * self.right[[a, j]];
                }
                out[[i, j]] = acc;
            }
        }
        out
    }
}

/// Keeps every singular value above `threshold·σ_max` and, additionally,
/// enough of them that the discarded tail is below `threshold·‖B‖_F`.
pub fn tpc_factorize(b: &TpcMatrix, threshold: f64) -> Result<TpcFactorization, BathError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(BathError::InvalidParams(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let svd = ttcore::thin_svd(b.values.view())?;
    let dim = b.dim();
    let rel_rank = ttcore::numerical_rank(&svd.s, threshold);
    let rank = if rel_rank == 0 {
        0
    } else {
        let frob = svd.s.iter().map(|x| x * x).sum::<f64>().sqrt();
        rel_rank.max(ttcore::linalg::rank_for_tail(&svd.s, threshold * frob))
    };
    let left = Array2::from_shape_fn((dim, rank), |(i, a)| svd.u[[i, a]] * svd.s[a]);
    let right = Array2::from_shape_fn((rank, dim), |(a, j)| svd.vh[[a, j]]);
    Ok(TpcFactorization { left, right, rank, singular_values: svd.s, threshold })
}

/// Single-frequency correlation pattern `coth(βω/2) cos(ωΔ) − i sin(ωΔ)` with `Δ = (|k1|−|k2|)Δt`.
pub fn fixed_freq_matrix(omega: f64, beta: f64, dt: f64, n: usize) -> Result<Array2<C64>, BathError> {
    if omega == 0.0 || !omega.is_finite() {
        return Err(BathError::InvalidParams(format!("frequency must be finite and nonzero, got {omega}")));
    }
    if !(beta > 0.0) || !(dt > 0.0) {
        return Err(BathError::InvalidParams(format!("need beta > 0 and dt > 0, got {beta}, {dt}")));
    }
    let ni = n as i64;
    let lambda = if omega > 0.0 { coth(beta * omega / 2.0) } else { -coth(-beta * omega / 2.0) };
    let dim = 2 * n + 1;
    Ok(Array2::from_shape_fn((dim, dim), |(i, j)| {
        let d = ((i as i64 - ni).abs() - (j as i64 - ni).abs()) as f64;
        let (sn, cs) = (omega * d * dt).sin_cos();
        C64::new(lambda * cs, -sn)
    }))
}

/// Sidecar record written next to an exported factorisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpcExportMeta {
    pub bath: BathParams,
    pub threshold: f64,
    pub rank: usize,
}

/// Writes `<stem>.tt` (two-core train) and `<stem>.json` (metadata) into `dir`.
pub fn export_tpc(fact: &TpcFactorization, bath: &BathParams, dir: &Path, stem: &str) -> Result<(), BathError> {
    fs::create_dir_all(dir)?;
    ttcore::write_tt_file(&fact.to_tt(), &dir.join(format!("{stem}.tt")))?;
    let meta = TpcExportMeta { bath: bath.clone(), threshold: fact.threshold, rank: fact.rank };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}
