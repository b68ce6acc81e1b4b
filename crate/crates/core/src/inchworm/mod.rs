//! Inchworm propagation of the two-level full propagator `G(s_i, s_f)`.
//!
//! Times live on the grid `kΔt`, `k = −N..N`, with the origin split into two
//! labels `0−` and `0+` because `G` jumps by the observable there. Positions
//! `0..2N+2` enumerate the labels in time order:
//! `−N, ..., −1, 0−, 0+, 1, ..., N`.

mod integral;
mod mat2;
mod solver;

use std::io::Write;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bif::BifError;

pub use integral::{eval_integral_direct, eval_integral_tt, trapezoid_weights, DIRECT_COST_GUARD};
pub use mat2::Mat2;
pub use solver::{rhs, solve_propagators, PredictorInstall, SolverOptions};

#[derive(Debug, Error)]
pub enum InchwormError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("propagator ({p1}, {p2}) is not available yet")]
    MissingEntry { p1: usize, p2: usize },
    #[error("direct quadrature would visit {tuples} tuples, over the guard {guard}")]
    CostGuard { tuples: u64, guard: u64 },
    #[error("non-finite propagator at cell {cell}: {detail}")]
    NumericalAbort { cell: String, detail: String },
    #[error("convergence order undefined: {0}")]
    UndefinedOrder(String),
    #[error(transparent)]
    Bif(#[from] BifError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Time grid with split origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub dt: f64,
}

impl Grid {
    pub fn new(n: usize, dt: f64) -> Result<Self, InchwormError> {
        if n == 0 || !(dt > 0.0) || !dt.is_finite() {
            return Err(InchwormError::InvalidArgument(format!("need N >= 1 and dt > 0, got N={n}, dt={dt}")));
        }
        Ok(Self { n, dt })
    }

    /// Number of labels, `2N + 2`.
    pub fn len(&self) -> usize {
        2 * self.n + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn zero_minus(&self) -> usize {
        self.n
    }

    pub fn zero_plus(&self) -> usize {
        self.n + 1
    }

    /// Grid index `k` of a label (both origin labels give 0).
    pub fn signed_index(&self, p: usize) -> i64 {
        if p <= self.n {
            p as i64 - self.n as i64
        } else {
            p as i64 - self.n as i64 - 1
        }
    }

    /// Index of the label along a functional mode (`k + N`).
    pub fn bif_index(&self, p: usize) -> usize {
        (self.signed_index(p) + self.n as i64) as usize
    }

    pub fn time(&self, p: usize) -> f64 {
        self.signed_index(p) as f64 * self.dt
    }

    /// `−1` on the branch up to `0−`, `+1` from `0+` on.
    pub fn sgn(&self, p: usize) -> f64 {
        if p <= self.n {
            -1.0
        } else {
            1.0
        }
    }

    /// Position of grid index `k`; for `k = 0`, `plus` selects `0+`.
    pub fn position(&self, k: i64, plus: bool) -> usize {
        let n = self.n as i64;
        assert!(k.abs() <= n, "grid index {k} outside -{n}..={n}");
        match k.cmp(&0) {
            std::cmp::Ordering::Less => (n + k) as usize,
            std::cmp::Ordering::Greater => (n + 1 + k) as usize,
            std::cmp::Ordering::Equal if plus => self.zero_plus(),
            std::cmp::Ordering::Equal => self.zero_minus(),
        }
    }

    /// Label with time reflected through the origin (`0−` ↔ `0+`).
    pub fn mirror(&self, p: usize) -> usize {
        self.len() - 1 - p
    }

    pub fn label(&self, p: usize) -> String {
        match p {
            _ if p == self.zero_minus() => "0-".into(),
            _ if p == self.zero_plus() => "0+".into(),
            _ => self.signed_index(p).to_string(),
        }
    }
}

/// Two-level system: `H_s = ε σ_z + Δ σ_x`, coupling `W_s = σ_z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub epsilon: f64,
    pub delta: f64,
    pub observable: Mat2,
    pub rho: Mat2,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self { epsilon: 1.0, delta: 1.0, observable: Mat2::SIGMA_Z, rho: Mat2::real(1.0, 0.0, 0.0, 0.0) }
    }
}

impl SystemParams {
    pub fn hamiltonian(&self) -> Mat2 {
        Mat2::SIGMA_Z * self.epsilon + Mat2::SIGMA_X * self.delta
    }

    pub fn coupling(&self) -> Mat2 {
        Mat2::SIGMA_Z
    }

    pub fn validate(&self) -> Result<(), InchwormError> {
        if !self.epsilon.is_finite() || !self.delta.is_finite() || !self.observable.is_finite() {
            return Err(InchwormError::InvalidArgument("system parameters must be finite".into()));
        }
        validate_density(&self.rho)
    }
}

/// Checks that `rho` is a Hermitian, unit-trace, positive semidefinite 2×2 matrix.
pub fn validate_density(rho: &Mat2) -> Result<(), InchwormError> {
    if !rho.is_finite() || !rho.is_hermitian(1e-12) {
        return Err(InchwormError::InvalidArgument("density matrix must be finite and Hermitian".into()));
    }
    let tr = rho.trace();
    if (tr - C64::new(1.0, 0.0)).norm() > 1e-12 {
        return Err(InchwormError::InvalidArgument(format!("density matrix trace is {tr}, not 1")));
    }
    let det = rho.at(0, 0).re * rho.at(1, 1).re - rho.at(0, 1).norm_sqr();
    if rho.at(0, 0).re < -1e-12 || rho.at(1, 1).re < -1e-12 || det < -1e-12 {
        return Err(InchwormError::InvalidArgument("density matrix is not positive semidefinite".into()));
    }
    Ok(())
}

/// Upper-triangular table of propagators and their final right-hand sides.
#[derive(Clone, Debug)]
pub struct PropagatorTable {
    grid: Grid,
    observable: Mat2,
    g: Vec<Option<Mat2>>,
    rhs: Vec<Option<Mat2>>,
}

impl PropagatorTable {
    /// Empty table with the initial data: identity on the diagonal and the
    /// observable at `(0−, 0+)`.
    pub fn new(grid: Grid, observable: Mat2) -> Self {
        let len = grid.len();
        let mut t = Self { grid, observable, g: vec![None; len * len], rhs: vec![None; len * len] };
        for p in 0..len {
            t.set(p, p, Mat2::IDENTITY);
        }
        t.set(grid.zero_minus(), grid.zero_plus(), observable);
        t
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn observable(&self) -> &Mat2 {
        &self.observable
    }

    fn slot(&self, p1: usize, p2: usize) -> usize {
        p1 * self.grid.len() + p2
    }

    pub fn get(&self, p1: usize, p2: usize) -> Option<Mat2> {
        if p1 > p2 || p2 >= self.grid.len() {
            return None;
        }
        self.g[self.slot(p1, p2)]
    }

    pub fn set(&mut self, p1: usize, p2: usize, value: Mat2) {
        assert!(p1 <= p2 && p2 < self.grid.len(), "cell ({p1}, {p2}) outside the table");
        let s = self.slot(p1, p2);
        self.g[s] = Some(value);
    }

    /// Right-hand side evaluated at the final value of a cell.
    pub fn rhs_at(&self, p1: usize, p2: usize) -> Option<Mat2> {
        if p1 > p2 || p2 >= self.grid.len() {
            return None;
        }
        self.rhs[self.slot(p1, p2)]
    }

    pub(crate) fn set_rhs(&mut self, p1: usize, p2: usize, value: Mat2) {
        let s = self.slot(p1, p2);
        self.rhs[s] = Some(value);
    }

    /// Propagator between signed grid indices; `k = 0` resolves to `0−` as a
    /// start and `0+` as an end.
    pub fn at_indices(&self, k1: i64, k2: i64) -> Option<Mat2> {
        self.get(self.grid.position(k1, false), self.grid.position(k2, true))
    }

    /// `G(−kΔt, kΔt)` for `k = 0..N`.
    pub fn heisenberg_observables(&self) -> Vec<Mat2> {
        (0..=self.grid.n as i64)
            .map(|k| self.at_indices(-k, k).expect("table filled to full span"))
            .collect()
    }
}

/// One sample of an expectation-value time series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub value: C64,
}

/// `⟨O_s(kΔt)⟩ = tr(ρ_s G(−kΔt, kΔt))` for `k = 0..N`.
pub fn observable_trace(table: &PropagatorTable, rho: &Mat2) -> Vec<TracePoint> {
    table
        .heisenberg_observables()
        .iter()
        .enumerate()
        .map(|(k, g)| TracePoint { t: k as f64 * table.grid().dt, value: (*rho * *g).trace() })
        .collect()
}

/// CSV with columns `t,re_obs,im_obs` in full-precision scientific notation.
pub fn write_trace_csv<W: Write>(trace: &[TracePoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,re_obs,im_obs")?;
    for p in trace {
        writeln!(w, "{:.16e},{:.16e},{:.16e}", p.t, p.value.re, p.value.im)?;
    }
    w.flush()
}

/// Every filled cell as `k1,k2,g00re,g00im,...,g11im` (labels `0-`/`0+` at the origin).
pub fn write_table_dump<W: Write>(table: &PropagatorTable, mut w: W) -> std::io::Result<()> {
    writeln!(w, "k1,k2,g00re,g00im,g01re,g01im,g10re,g10im,g11re,g11im")?;
    let grid = table.grid();
    for p1 in 0..grid.len() {
        for p2 in p1..grid.len() {
            if let Some(g) = table.get(p1, p2) {
                write!(w, "{},{}", grid.label(p1), grid.label(p2))?;
                for z in g.0 {
                    write!(w, ",{:.16e},{:.16e}", z.re, z.im)?;
                }
                writeln!(w)?;
            }
        }
    }
    w.flush()
}

/// `p = log2(‖x₀.₄ − x₀.₂‖₂ / ‖x₀.₂ − x₀.₁‖₂)` for traces on grids refined by
/// factors of two over the same final time; finer traces are subsampled.
pub fn convergence_order(coarse: &[f64], mid: &[f64], fine: &[f64]) -> Result<f64, InchwormError> {
    if coarse.len() < 2 || mid.len() != 2 * coarse.len() - 1 || fine.len() != 2 * mid.len() - 1 {
        return Err(InchwormError::InvalidArgument(format!(
            "trace lengths {}, {}, {} are not successive refinements by two",
            coarse.len(),
            mid.len(),
            fine.len()
        )));
    }
    let diff = |a: &[f64], b: &[f64], stride: usize| -> f64 {
        a.iter().enumerate().map(|(i, x)| (x - b[i * stride]).powi(2)).sum::<f64>().sqrt()
    };
    let num = diff(coarse, mid, 2);
    let mid_on_coarse: Vec<f64> = mid.iter().step_by(2).copied().collect();
    let den = diff(&mid_on_coarse, fine, 4);
    if den == 0.0 || !den.is_finite() || !num.is_finite() {
        return Err(InchwormError::UndefinedOrder(format!("difference norms {num} / {den}")));
    }
    Ok((num / den).log2())
}
