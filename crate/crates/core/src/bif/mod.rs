//! Bath influence functional on the full time grid as a tensor train.
//!
//! The functional with `n` arguments is the sum over connected pairings of
//! products of two-point correlations. Each product is a Hadamard product of
//! the two-core correlation train extended to `n` modes, so the whole sum is a
//! tensor train with `n` cores of size `2N+1`.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::debug;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bath::TpcMatrix;
use crate::diagrams::{self, DiagramError, Pairing};
use crate::ttcore::{self, RoundingPolicy, TensorTrain, TtError};

/// Default cap on the peak complex entries of any intermediate step (≈1 GB):
/// the train about to be formed plus the workspace to round its largest core,
/// and separately the terms held before summation.
pub const DEFAULT_MEMORY_GUARD: usize = 60_000_000;

/// Fraction of the requested tolerance spent on intermediate roundings.
const INTERMEDIATE_FRACTION: f64 = 1e-3;
/// Fraction spent on the final rounding; the rest is headroom for the intermediates.
const FINAL_FRACTION: f64 = 0.99;

#[derive(Debug, Error)]
pub enum BifError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("intermediate train for {order}-argument functional needs {entries} entries, over the guard {guard}")]
    MemoryGuard { order: usize, entries: usize, guard: usize },
    #[error(transparent)]
    Diagram(#[from] DiagramError),
    #[error(transparent)]
    Tt(#[from] TtError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Truncation applied while assembling a functional.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BifRounding {
    /// No rounding at all; bonds follow the sum/Hadamard arithmetic exactly.
    Exact,
    /// Relative Frobenius tolerance for the finished train.
    Tolerance(f64),
    /// Cap on every internal bond of the finished train.
    MaxBond(usize),
}

impl BifRounding {
    fn validate(&self) -> Result<(), BifError> {
        match *self {
            BifRounding::Tolerance(eta) if !(eta >= 0.0) || !eta.is_finite() => {
                Err(BifError::InvalidArgument(format!("tolerance must be >= 0, got {eta}")))
            }
            BifRounding::MaxBond(0) => Err(BifError::InvalidArgument("max bond must be >= 1".into())),
            _ => Ok(()),
        }
    }

    fn intermediate(&self) -> Option<RoundingPolicy> {
        match *self {
            BifRounding::Exact => None,
            BifRounding::Tolerance(eta) => Some(RoundingPolicy::Tolerance(eta * INTERMEDIATE_FRACTION)),
            BifRounding::MaxBond(r) => Some(RoundingPolicy::MaxBond(r)),
        }
    }

    fn last(&self) -> Option<RoundingPolicy> {
        match *self {
            BifRounding::Exact => None,
            BifRounding::Tolerance(eta) => Some(RoundingPolicy::Tolerance(eta * FINAL_FRACTION)),
            BifRounding::MaxBond(r) => Some(RoundingPolicy::MaxBond(r)),
        }
    }
}

/// When intermediate roundings happen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildSchedule {
    /// Round each finished product term and the final sum only.
    Literal,
    /// Additionally round after every Hadamard factor and keep the
    /// accumulator bounded while summing.
    Incremental,
}

/// Assembly options shared by the direct and iterative builders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildOptions {
    pub rounding: BifRounding,
    pub schedule: BuildSchedule,
    pub memory_guard: usize,
}

impl BuildOptions {
    pub fn new(rounding: BifRounding) -> Self {
        Self { rounding, schedule: BuildSchedule::Incremental, memory_guard: DEFAULT_MEMORY_GUARD }
    }

    pub fn literal(rounding: BifRounding) -> Self {
        Self { schedule: BuildSchedule::Literal, ..Self::new(rounding) }
    }
}

/// Functional with `order` arguments on the grid `kΔt`, `k = −N..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct BifTT {
    pub tt: TensorTrain,
    pub dt: f64,
    pub n: usize,
    pub order: usize,
    pub xi_ref: f64,
    pub rounding: BifRounding,
}

impl BifTT {
    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    /// Value at signed grid indices `k_1..k_order`.
    pub fn at(&self, ks: &[i64]) -> Result<C64, BifError> {
        let n = self.n as i64;
        if ks.iter().any(|&k| k < -n || k > n) {
            return Err(BifError::InvalidArgument(format!("indices {ks:?} outside -{n}..={n}")));
        }
        let idx: Vec<usize> = ks.iter().map(|&k| (k + n) as usize).collect();
        Ok(self.tt.element(&idx)?)
    }

    /// The functional at coupling `ξ` from one built at `xi_ref`: every term
    /// carries `order/2` correlation factors, each linear in `ξ`.
    pub fn scale_xi(&self, xi: f64) -> Result<Self, BifError> {
        if !(xi >= 0.0) || !xi.is_finite() {
            return Err(BifError::InvalidArgument(format!("xi must be >= 0, got {xi}")));
        }
        if xi == self.xi_ref {
            return Ok(self.clone());
        }
        let factor = (xi / self.xi_ref).powi((self.order / 2) as i32);
        Ok(Self { tt: self.tt.scaled(C64::new(factor, 0.0)), xi_ref: xi, ..self.clone() })
    }

    /// Writes `<stem>.tt` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str, extra: serde_json::Value) -> Result<(), BifError> {
        fs::create_dir_all(dir)?;
        ttcore::write_tt_file(&self.tt, &dir.join(format!("{stem}.tt")))?;
        let meta = BifMeta {
            order: self.order,
            n: self.n,
            dt: self.dt,
            xi_ref: self.xi_ref,
            rounding: self.rounding,
            bonds: self.tt.bond_dims(),
            extra,
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<(Self, BifMeta), BifError> {
        let meta: BifMeta = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let tt = ttcore::read_tt_file(&dir.join(format!("{stem}.tt")))?;
        if tt.order() != meta.order || tt.mode_dims().iter().any(|&d| d != 2 * meta.n + 1) || tt.bond_dims() != meta.bonds {
            return Err(BifError::GridMismatch(format!("{stem}: stored train does not match its metadata")));
        }
        let bif = Self { tt, dt: meta.dt, n: meta.n, order: meta.order, xi_ref: meta.xi_ref, rounding: meta.rounding };
        Ok((bif, meta))
    }
}

/// Sidecar metadata for a persisted functional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BifMeta {
    pub order: usize,
    pub n: usize,
    pub dt: f64,
    pub xi_ref: f64,
    pub rounding: BifRounding,
    pub bonds: Vec<usize>,
    /// Caller-supplied provenance (bath parameters, cache key, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Reference value: sum over connected pairings of correlation products at signed indices.
pub fn bif_dense(b: &TpcMatrix, ks: &[i64]) -> Result<C64, BifError> {
    let set = diagrams::connected_pairings(ks.len())?;
    let n = b.n as i64;
    if ks.iter().any(|&k| k < -n || k > n) {
        return Err(BifError::InvalidArgument(format!("indices {ks:?} outside -{n}..={n}")));
    }
    Ok(set
        .iter()
        .map(|p| {
            p.pairs()
                .iter()
                .fold(C64::new(1.0, 0.0), |acc, &(j, k)| acc * b.at(ks[j - 1], ks[k - 1]))
        })
        .sum())
}

/// Stored entries of a train with these bonds and modes, and of its largest core.
fn storage(bonds: &[usize], dims: &[usize]) -> (usize, usize) {
    let cores = dims.iter().enumerate().map(|(k, &n)| bonds[k].saturating_mul(n).saturating_mul(bonds[k + 1]));
    cores.fold((0usize, 0usize), |(total, big), c| (total.saturating_add(c), big.max(c)))
}

/// Refuses a step whose result (bonds combined by `op`) would not fit: the
/// new train plus two copies of its largest core for the rounding sweep.
fn guard_step(
    a: &TensorTrain,
    b: &TensorTrain,
    op: fn(usize, usize) -> usize,
    order: usize,
    opts: &BuildOptions,
) -> Result<(), BifError> {
    let bonds: Vec<usize> = a.bond_dims().iter().zip(b.bond_dims()).map(|(&x, y)| op(x, y)).collect();
    let (total, big) = storage(&bonds, &a.mode_dims());
    let entries = total.saturating_add(big.saturating_mul(2));
    if entries > opts.memory_guard {
        return Err(BifError::MemoryGuard { order, entries, guard: opts.memory_guard });
    }
    Ok(())
}

fn guard_product(a: &TensorTrain, b: &TensorTrain, order: usize, opts: &BuildOptions) -> Result<(), BifError> {
    guard_step(a, b, usize::saturating_mul, order, opts)
}

fn guard_sum(a: &TensorTrain, b: &TensorTrain, order: usize, opts: &BuildOptions) -> Result<(), BifError> {
    // the sum has block-diagonal interior bonds; the boundary bonds stay 1
    let last = a.bond_dims().len() - 1;
    let bonds: Vec<usize> = a
        .bond_dims()
        .iter()
        .zip(b.bond_dims())
        .enumerate()
        .map(|(k, (&x, y))| if k == 0 || k == last { 1 } else { x.saturating_add(y) })
        .collect();
    let (total, big) = storage(&bonds, &a.mode_dims());
    let entries = total.saturating_add(big.saturating_mul(2));
    if entries > opts.memory_guard {
        return Err(BifError::MemoryGuard { order, entries, guard: opts.memory_guard });
    }
    Ok(())
}

/// Collects terms while keeping their combined storage under the guard.
fn collect_terms<I>(terms: I, order: usize, opts: &BuildOptions) -> Result<Vec<TensorTrain>, BifError>
where
    I: ParallelIterator<Item = Result<TensorTrain, BifError>>,
{
    let held = AtomicUsize::new(0);
    terms
        .map(|t| {
            let t = t?;
            let entries = held.fetch_add(t.storage_len(), Ordering::Relaxed) + t.storage_len();
            if entries > opts.memory_guard {
                return Err(BifError::MemoryGuard { order, entries, guard: opts.memory_guard });
            }
            Ok(t)
        })
        .collect()
}

fn maybe_round(tt: TensorTrain, policy: Option<RoundingPolicy>) -> Result<TensorTrain, BifError> {
    match policy {
        Some(p) => Ok(tt.round(p)?),
        None => Ok(tt),
    }
}

/// Correlation train embedded at 0-based positions `a < b` of an `order`-mode train.
fn extended_pair(b_tt: &TensorTrain, order: usize, a: usize, b: usize) -> Result<TensorTrain, BifError> {
    let dim = b_tt.mode_dims()[0];
    Ok(b_tt.extend(order, &[a, b], &vec![dim; order - 2])?)
}

/// Hadamard product of extended correlation trains over the arcs of `p`,
/// optionally multiplied into `seed` first.
fn pairing_product(
    b_tt: &TensorTrain,
    arcs: &[(usize, usize)],
    order: usize,
    seed: Option<TensorTrain>,
    opts: &BuildOptions,
) -> Result<TensorTrain, BifError> {
    let mut acc = seed;
    for &(j, k) in arcs {
        let factor = extended_pair(b_tt, order, j - 1, k - 1)?;
        let next = match acc {
            None => factor,
            Some(prev) => {
                guard_product(&prev, &factor, order, opts)?;
                let prod = prev.hadamard(&factor)?;
                if opts.schedule == BuildSchedule::Incremental {
                    maybe_round(prod, opts.rounding.intermediate())?
                } else {
                    prod
                }
            }
        };
        acc = Some(next);
    }
    acc.ok_or_else(|| BifError::InvalidArgument("empty pairing".into()))
}

fn accumulate(terms: Vec<TensorTrain>, order: usize, opts: &BuildOptions) -> Result<TensorTrain, BifError> {
    let mut iter = terms.into_iter();
    let mut acc = iter.next().ok_or_else(|| BifError::InvalidArgument("no terms to sum".into()))?;
    for term in iter {
        guard_sum(&acc, &term, order, opts)?;
        acc = acc.sum(&term)?;
        if opts.schedule == BuildSchedule::Incremental {
            let over = match opts.rounding {
                BifRounding::Exact => false,
                BifRounding::Tolerance(_) => true,
                BifRounding::MaxBond(r) => acc.max_bond() > 2 * r,
            };
            if over {
                acc = maybe_round(acc, opts.rounding.intermediate())?;
            }
        }
    }
    maybe_round(acc, opts.rounding.last())
}

fn check_corr_train(b_tt: &TensorTrain) -> Result<usize, BifError> {
    let dims = b_tt.mode_dims();
    if dims.len() != 2 || dims[0] != dims[1] || dims[0].is_multiple_of(2) {
        return Err(BifError::InvalidArgument(format!("correlation train must have two equal odd modes, got {dims:?}")));
    }
    Ok((dims[0] - 1) / 2)
}

/// Sum over connected pairings of Hadamard products of extended correlation trains.
pub fn build_bif_tt(b_tt: &TensorTrain, order: usize, dt: f64, opts: &BuildOptions) -> Result<BifTT, BifError> {
    opts.rounding.validate()?;
    let n = check_corr_train(b_tt)?;
    let set = diagrams::connected_pairings(order)?;
    debug!("building {order}-argument functional from {} pairings", set.len());
    let terms = collect_terms(
        set.par_iter().map(|p| {
            let prod = pairing_product(b_tt, p.pairs(), order, None, opts)?;
            if order == 2 {
                Ok(prod)
            } else {
                maybe_round(prod, opts.rounding.intermediate())
            }
        }),
        order,
        opts,
    )?;
    let tt = accumulate(terms, order, opts)?;
    Ok(BifTT { tt, dt, n, order, xi_ref: 1.0, rounding: opts.rounding })
}

/// Builds the `order`-argument functional from the `order−2` one: each reusable
/// first arc `(1, j)` multiplies the extended lower functional, and the
/// remaining pairings are added as explicit products.
pub fn build_bif_tt_iterative(b_tt: &TensorTrain, lower: &BifTT, opts: &BuildOptions) -> Result<BifTT, BifError> {
    opts.rounding.validate()?;
    let n = check_corr_train(b_tt)?;
    if lower.n != n {
        return Err(BifError::GridMismatch(format!("correlation grid N={n}, lower functional N={}", lower.n)));
    }
    let order = lower.order + 2;
    let dec = diagrams::iterative_decomposition(order)?;
    let dim = 2 * n + 1;
    debug!(
        "building {order}-argument functional from {} reuse terms and {} residual pairings",
        dec.reuse_terms.len(),
        dec.residual_pairings.len()
    );
    let reuse = dec.reuse_terms.par_iter().map(|&j| {
        let complement: Vec<usize> = (1..order).filter(|&p| p != j - 1).collect();
        let lifted = lower.tt.extend(order, &complement, &[dim, dim])?;
        pairing_product(b_tt, &[(1, j)], order, Some(lifted), opts)
            .and_then(|t| maybe_round(t, opts.rounding.intermediate()))
    });
    let residual = dec.residual_pairings.par_iter().map(|p: &Pairing| {
        pairing_product(b_tt, p.pairs(), order, None, opts).and_then(|t| maybe_round(t, opts.rounding.intermediate()))
    });
    let terms = collect_terms(reuse.chain(residual), order, opts)?;
    let tt = accumulate(terms, order, opts)?;
    Ok(BifTT { tt, dt: lower.dt, n, order, xi_ref: lower.xi_ref, rounding: opts.rounding })
}

/// Functionals with 2, 4, ..., `max_order` arguments; orders above 4 are built iteratively.
pub fn build_bif_hierarchy(
    b_tt: &TensorTrain,
    max_order: usize,
    dt: f64,
    opts: &BuildOptions,
) -> Result<Vec<BifTT>, BifError> {
    if max_order < 2 || !max_order.is_multiple_of(2) {
        return Err(BifError::InvalidArgument(format!("max order must be even and >= 2, got {max_order}")));
    }
    let mut out: Vec<BifTT> = Vec::with_capacity(max_order / 2);
    for order in (2..=max_order).step_by(2) {
        let bif = if order <= 4 {
            build_bif_tt(b_tt, order, dt, opts)?
        } else {
            build_bif_tt_iterative(b_tt, out.last().expect("lower order built first"), opts)?
        };
        debug!("{order}-argument functional bonds {:?}", bif.tt.bond_dims());
        out.push(bif);
    }
    Ok(out)
}
