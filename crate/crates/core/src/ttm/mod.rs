//! Transfer tensors learned from short-time dynamical maps.
//!
//! The solver produces Heisenberg-picture observables `Φ_k[O] = G(−kΔt, kΔt)`.
//! The dynamical map `E_k` on density matrices is their trace dual,
//! `tr(E_k(ρ) O) = tr(ρ Φ_k[O])`. Density matrices are vectorised row-major,
//! `vec(ρ)[2a + b] = ρ_ab`.
//!
//! Because the observable only enters the propagator table at the origin and
//! every table entry is linear in it, four runs with linearly independent
//! observables determine `Φ_k` completely. Hermitian observables let each run
//! use the conjugate symmetry of the table.

use std::io::{Read, Write};
use std::path::Path;

use log::info;
use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bif::BifTT;
use crate::inchworm::{solve_propagators, Grid, InchwormError, Mat2, PropagatorTable, SolverOptions, SystemParams, TracePoint};

/// Superoperator acting on row-major vectorised 2×2 matrices.
pub type SuperOp = Matrix4<C64>;

#[derive(Debug, Error)]
pub enum TtmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Inchworm(#[from] InchwormError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed transfer-tensor file: {0}")]
    Format(String),
}

/// The observables used for the four basis runs: `I, σx, σy, σz`.
pub const BASIS_OBSERVABLES: [Mat2; 4] = [Mat2::IDENTITY, Mat2::SIGMA_X, Mat2::SIGMA_Y, Mat2::SIGMA_Z];

pub fn vec_mat(m: &Mat2) -> Vector4<C64> {
    Vector4::new(m.0[0], m.0[1], m.0[2], m.0[3])
}

pub fn unvec(v: &Vector4<C64>) -> Mat2 {
    Mat2([v[0], v[1], v[2], v[3]])
}

/// `E_k` for `k = 0..=K_max` on a uniform time step.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicalMaps {
    pub dt: f64,
    pub maps: Vec<SuperOp>,
}

impl DynamicalMaps {
    pub fn k_max(&self) -> usize {
        self.maps.len() - 1
    }

    /// Largest `|tr(E_k(ρ)) − tr(ρ)|` over `k`.
    pub fn trace_defect(&self, rho: &Mat2) -> f64 {
        let v = vec_mat(rho);
        self.maps.iter().map(|e| (unvec(&(e * v)).trace() - rho.trace()).norm()).fold(0.0, f64::max)
    }
}

/// Solves the propagator table once per basis observable, sharing `bifs`.
pub fn basis_runs(
    sys: &SystemParams,
    bifs: &[BifTT],
    grid: Grid,
    opts: &SolverOptions,
) -> Result<Vec<PropagatorTable>, TtmError> {
    let tables = BASIS_OBSERVABLES
        .par_iter()
        .map(|o| {
            let s = SystemParams { observable: *o, ..*sys };
            solve_propagators(&s, bifs, grid, opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    info!("solved {} basis runs on N={}, dt={}", tables.len(), grid.n, grid.dt);
    Ok(tables)
}

/// Builds `E_0..E_{K_max}` from four runs whose observables span the 2×2 matrices.
pub fn dynamical_maps(tables: &[PropagatorTable], k_max: usize) -> Result<DynamicalMaps, TtmError> {
    if tables.len() != 4 {
        return Err(TtmError::InvalidArgument(format!("need 4 basis runs, got {}", tables.len())));
    }
    let grid = *tables[0].grid();
    if tables.iter().any(|t| t.grid() != &grid) {
        return Err(TtmError::InvalidArgument("basis runs use different grids".into()));
    }
    if k_max > grid.n {
        return Err(TtmError::InvalidArgument(format!("K_max={k_max} exceeds the solved horizon N={}", grid.n)));
    }
    // columns of `a` are the vectorised run observables; a⁻¹ maps them to matrix units
    let a = Matrix4::from_columns(&tables.iter().map(|t| vec_mat(t.observable())).collect::<Vec<_>>());
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| TtmError::InvalidArgument("run observables are linearly dependent".into()))?;
    let phis: Vec<Vec<Mat2>> = tables.iter().map(|t| t.heisenberg_observables()).collect();
    let maps = (0..=k_max)
        .map(|k| {
            // Φ_k applied to the matrix unit with a one at row-major slot u
            let unit_images: Vec<Mat2> = (0..4)
                .map(|u| {
                    let mut acc = Mat2::ZERO;
                    for (i, phi) in phis.iter().enumerate() {
                        acc.add_scaled(a_inv[(i, u)], &phi[k]);
                    }
                    acc
                })
                .collect();
            // E[(c,d),(a,b)] = Φ[unit(d,c)]_{ba}
            SuperOp::from_fn(|row, col| {
                let (c, d) = (row / 2, row % 2);
                let (a, b) = (col / 2, col % 2);
                unit_images[2 * d + c].at(b, a)
            })
        })
        .collect();
    Ok(DynamicalMaps { dt: grid.dt, maps })
}

/// `T_1..T_{K_max}` with `E_k = Σ_{j=1..k} T_j E_{k−j}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferTensors {
    pub dt: f64,
    pub tensors: Vec<SuperOp>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferTensorMeta {
    pub k_max: usize,
    pub dt: f64,
    pub vectorization: String,
    pub frobenius_norms: Vec<f64>,
}

impl TransferTensors {
    pub fn k_max(&self) -> usize {
        self.tensors.len()
    }

    /// The first `k` tensors: a shorter memory window.
    pub fn truncated(&self, k: usize) -> Self {
        Self { dt: self.dt, tensors: self.tensors[..k.min(self.tensors.len())].to_vec() }
    }

    pub fn frobenius_norms(&self) -> Vec<f64> {
        self.tensors.iter().map(|t| t.norm()).collect()
    }

    /// `E_0..E_{K_max}` rebuilt from the tensors.
    pub fn reconstruct_maps(&self) -> DynamicalMaps {
        let mut maps = vec![SuperOp::identity()];
        for k in 1..=self.k_max() {
            let e = (1..=k).fold(SuperOp::zeros(), |acc, j| acc + self.tensors[j - 1] * maps[k - j]);
            maps.push(e);
        }
        DynamicalMaps { dt: self.dt, maps }
    }

    pub fn meta(&self) -> TransferTensorMeta {
        TransferTensorMeta {
            k_max: self.k_max(),
            dt: self.dt,
            vectorization: "row-major".into(),
            frobenius_norms: self.frobenius_norms(),
        }
    }

    /// Flat little-endian block: `u64 K_max`, then each `T_j` row-major as `(re, im)` pairs.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), TtmError> {
        w.write_all(&(self.k_max() as u64).to_le_bytes())?;
        for t in &self.tensors {
            for r in 0..4 {
                for c in 0..4 {
                    w.write_all(&t[(r, c)].re.to_le_bytes())?;
                    w.write_all(&t[(r, c)].im.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, dt: f64) -> Result<Self, TtmError> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let k = u64::from_le_bytes(word);
        if k > 1 << 24 {
            return Err(TtmError::Format(format!("implausible K_max {k}")));
        }
        let mut tensors = Vec::with_capacity(k as usize);
        for _ in 0..k {
            let mut t = SuperOp::zeros();
            for row in 0..4 {
                for col in 0..4 {
                    r.read_exact(&mut word)?;
                    let re = f64::from_le_bytes(word);
                    r.read_exact(&mut word)?;
                    t[(row, col)] = C64::new(re, f64::from_le_bytes(word));
                }
            }
            tensors.push(t);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(TtmError::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { dt, tensors })
    }

    /// Writes `<stem>.bin` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), TtmError> {
        std::fs::create_dir_all(dir)?;
        let f = std::fs::File::create(dir.join(format!("{stem}.bin")))?;
        self.write(std::io::BufWriter::new(f))?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&self.meta())?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, TtmError> {
        let meta: TransferTensorMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let f = std::fs::File::open(dir.join(format!("{stem}.bin")))?;
        let t = Self::read(std::io::BufReader::new(f), meta.dt)?;
        if t.k_max() != meta.k_max {
            return Err(TtmError::Format(format!("metadata says K_max={}, block holds {}", meta.k_max, t.k_max())));
        }
        Ok(t)
    }
}

/// `T_k = E_k − Σ_{j=1..k−1} T_j E_{k−j}` for `k = 1..K_max`.
pub fn learn_transfer_tensors(maps: &DynamicalMaps) -> Result<TransferTensors, TtmError> {
    if maps.maps.is_empty() {
        return Err(TtmError::InvalidArgument("no dynamical maps".into()));
    }
    let e = &maps.maps;
    let dev = (e[0] - SuperOp::identity()).norm();
    if dev > 1e-12 {
        return Err(TtmError::InvalidArgument(format!("E_0 differs from the identity by {dev:.3e}")));
    }
    let mut tensors: Vec<SuperOp> = Vec::with_capacity(e.len() - 1);
    for k in 1..e.len() {
        let t = (1..k).fold(e[k], |acc, j| acc - tensors[j - 1] * e[k - j]);
        tensors.push(t);
    }
    Ok(TransferTensors { dt: maps.dt, tensors })
}

/// Density matrices `ρ(kΔt)`, `k = 0..=n_steps`, with `ρ_k = Σ_{j=1..min(k,K)} T_j ρ_{k−j}`.
///
/// For `k ≤ K` the recursion reproduces `E_k ρ_0` exactly.
pub fn propagate(t: &TransferTensors, rho0: &Mat2, n_steps: usize) -> Result<Vec<Mat2>, TtmError> {
    if n_steps < 1 {
        return Err(TtmError::InvalidArgument("need at least one step".into()));
    }
    let mut hist: Vec<Vector4<C64>> = Vec::with_capacity(n_steps + 1);
    hist.push(vec_mat(rho0));
    for k in 1..=n_steps {
        let v = (1..=k.min(t.k_max())).fold(Vector4::zeros(), |acc, j| acc + t.tensors[j - 1] * hist[k - j]);
        hist.push(v);
    }
    Ok(hist.iter().map(unvec).collect())
}

/// `tr(ρ(t) O)` along a propagated series.
pub fn ttm_trace(series: &[Mat2], dt: f64, observable: &Mat2) -> Vec<TracePoint> {
    series
        .iter()
        .enumerate()
        .map(|(k, rho)| TracePoint { t: k as f64 * dt, value: (*rho * *observable).trace() })
        .collect()
}
