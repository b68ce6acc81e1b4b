//! Complex tensor-train algebra.
//!
//! A [`TensorTrain`] stores a d-way tensor as cores `X^(j)` of shape
//! `(r_{j-1}, n_j, r_j)` with `r_0 = r_d = 1`; an element is the chained
//! product of the core slices selected by the multi-index.

mod io;
pub mod linalg;

use ndarray::{s, Array2, Array3, ArrayD, Axis, IxDyn};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_tt, read_tt_file, write_tt, write_tt_file, TT_MAGIC};
pub use linalg::{numerical_rank, thin_svd, ThinSvd};

/// Largest dense tensor (in elements) the conversion routines will touch.
pub const DENSE_GUARD: usize = 10_000_000;

/// Default relative singular-value floor for rank decisions.
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-12;

const MAX_ORDER: usize = 16;

#[derive(Debug, Error)]
pub enum TtError {
    #[error("index {index:?} out of range for mode dims {dims:?}")]
    IndexOutOfRange { index: Vec<usize>, dims: Vec<usize> },
    #[error("mode dims differ: {left:?} vs {right:?}")]
    ModeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dense size {size} exceeds guard {guard}")]
    SizeGuard { size: usize, guard: usize },
    #[error("invalid cores: {0}")]
    InvalidCores(String),
    #[error("svd failed: {0}")]
    Svd(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed tensor-train file: {0}")]
    Format(String),
}

/// How aggressively [`TensorTrain::round`] may truncate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingPolicy {
    /// Relative Frobenius tolerance η for the whole train.
    Tolerance(f64),
    /// Hard cap on every internal bond.
    MaxBond(usize),
}

impl RoundingPolicy {
    fn validate(&self) -> Result<(), TtError> {
        match *self {
            RoundingPolicy::Tolerance(eta) if !(eta >= 0.0) || !eta.is_finite() => {
                Err(TtError::InvalidArgument(format!("rounding tolerance must be >= 0, got {eta}")))
            }
            RoundingPolicy::MaxBond(0) => Err(TtError::InvalidArgument("max bond must be >= 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorTrain {
    cores: Vec<Array3<C64>>,
}

impl TensorTrain {
    /// Validates bond chaining, boundary bonds and finiteness.
    pub fn from_cores(cores: Vec<Array3<C64>>) -> Result<Self, TtError> {
        if cores.is_empty() {
            return Err(TtError::InvalidCores("a tensor train needs at least one core".into()));
        }
        if cores.len() > MAX_ORDER {
            return Err(TtError::InvalidCores(format!(
                "order {} exceeds the supported maximum {MAX_ORDER}",
                cores.len()
            )));
        }
        if cores[0].dim().0 != 1 || cores[cores.len() - 1].dim().2 != 1 {
            return Err(TtError::InvalidCores("boundary bonds must be 1".into()));
        }
        for (j, w) in cores.windows(2).enumerate() {
            if w[0].dim().2 != w[1].dim().0 {
                return Err(TtError::InvalidCores(format!(
                    "core {j} right bond {} does not match core {} left bond {}",
                    w[0].dim().2,
                    j + 1,
                    w[1].dim().0
                )));
            }
        }
        for (j, c) in cores.iter().enumerate() {
            if c.dim().1 == 0 || c.dim().0 == 0 || c.dim().2 == 0 {
                return Err(TtError::InvalidCores(format!("core {j} has an empty dimension")));
            }
            if c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(TtError::InvalidCores(format!("core {j} has non-finite entries")));
            }
        }
        Ok(Self { cores })
    }

    fn from_cores_unchecked(cores: Vec<Array3<C64>>) -> Self {
        debug_assert!(Self::from_cores(cores.clone()).is_ok());
        Self { cores }
    }

    /// Rank-1 train with every element equal to one.
    pub fn ones(mode_dims: &[usize]) -> Self {
        Self::from_cores_unchecked(
            mode_dims
                .iter()
                .map(|&n| Array3::from_elem((1, n, 1), C64::new(1.0, 0.0)))
                .collect(),
        )
    }

    /// Zero tensor as all-zero rank-1 cores.
    pub fn zeros(mode_dims: &[usize]) -> Self {
        Self::from_cores_unchecked(mode_dims.iter().map(|&n| Array3::zeros((1, n, 1))).collect())
    }

    pub fn cores(&self) -> &[Array3<C64>] {
        &self.cores
    }

    pub fn core(&self, j: usize) -> &Array3<C64> {
        &self.cores[j]
    }

    pub fn into_cores(self) -> Vec<Array3<C64>> {
        self.cores
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dim().1).collect()
    }

    /// `r_0, ..., r_d`.
    pub fn bond_dims(&self) -> Vec<usize> {
        let mut b = Vec::with_capacity(self.cores.len() + 1);
        b.push(1);
        b.extend(self.cores.iter().map(|c| c.dim().2));
        b
    }

    /// Internal bonds `r_1, ..., r_{d-1}`.
    pub fn internal_bonds(&self) -> Vec<usize> {
        let b = self.bond_dims();
        b[1..b.len() - 1].to_vec()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Number of stored complex entries across all cores.
    pub fn storage_len(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    pub fn element(&self, idx: &[usize]) -> Result<C64, TtError> {
        let dims = self.mode_dims();
        if idx.len() != dims.len() || idx.iter().zip(&dims).any(|(&i, &n)| i >= n) {
            return Err(TtError::IndexOutOfRange { index: idx.to_vec(), dims });
        }
        let mut v: Vec<C64> = self.cores[0].slice(s![0, idx[0], ..]).to_vec();
        for (core, &i) in self.cores.iter().zip(idx).skip(1) {
            let (_, _, rb) = core.dim();
            let mut next = vec![C64::new(0.0, 0.0); rb];
            for (a, &va) in v.iter().enumerate() {
                if va == C64::new(0.0, 0.0) {
                    continue;
                }
                for (b, nb) in next.iter_mut().enumerate() {
                    *nb += va * core[[a, i, b]];
                }
            }
            v = next;
        }
        Ok(v[0])
    }

    /// Multiplies the first core by `c`.
    pub fn scaled(&self, c: C64) -> Self {
        let mut cores = self.cores.clone();
        cores[0].mapv_inplace(|z| z * c);
        Self { cores }
    }

    /// TT-SVD with relative tolerance `tol`, split uniformly over the d-1 unfoldings.
    pub fn from_dense(t: &ArrayD<C64>, tol: f64) -> Result<Self, TtError> {
        if !(tol >= 0.0) || !tol.is_finite() {
            return Err(TtError::InvalidArgument(format!("tolerance must be >= 0, got {tol}")));
        }
        if t.len() > DENSE_GUARD {
            return Err(TtError::SizeGuard { size: t.len(), guard: DENSE_GUARD });
        }
        let dims: Vec<usize> = t.shape().to_vec();
        if dims.is_empty() || dims.contains(&0) {
            return Err(TtError::InvalidArgument(format!("cannot decompose tensor of shape {dims:?}")));
        }
        let d = dims.len();
        let norm = t.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(Self::zeros(&dims));
        }
        let delta = if d > 1 { tol * norm / ((d - 1) as f64).sqrt() } else { 0.0 };
        let data: Vec<C64> = t.iter().copied().collect();
        let mut rest = Array2::from_shape_vec((1, data.len()), data).expect("contiguous");
        let mut cores = Vec::with_capacity(d);
        let mut r_prev = 1;
        for &n in dims.iter().take(d - 1) {
            let cols = rest.len() / (r_prev * n);
            let mat = rest.into_shape_with_order((r_prev * n, cols)).expect("reshape");
            let svd = linalg::thin_svd(mat.view())?;
            let keep = linalg::rank_for_tail(&svd.s, delta);
            let u = svd.u.slice(s![.., ..keep]).to_owned();
            cores.push(u.into_shape_with_order((r_prev, n, keep)).expect("reshape"));
            rest = Array2::from_shape_fn((keep, cols), |(i, j)| svd.vh[[i, j]] * svd.s[i]);
            r_prev = keep;
        }
        let n_last = dims[d - 1];
        cores.push(rest.into_shape_with_order((r_prev, n_last, 1)).expect("reshape"));
        Self::from_cores(cores)
    }

    pub fn to_dense(&self) -> Result<ArrayD<C64>, TtError> {
        let dims = self.mode_dims();
        let size: usize = dims.iter().product();
        if size > DENSE_GUARD {
            return Err(TtError::SizeGuard { size, guard: DENSE_GUARD });
        }
        // acc holds the contraction of the first j cores as (prod n, r_j)
        let first = &self.cores[0];
        let mut acc = first.index_axis(Axis(0), 0).to_owned();
        for core in &self.cores[1..] {
            let (ra, n, rb) = core.dim();
            let mat = core.to_shape((ra, n * rb)).expect("reshape").to_owned();
            let prod = linalg::matmul(acc.view(), mat.view());
            let rows = prod.nrows() * n;
            acc = prod.into_shape_with_order((rows, rb)).expect("reshape");
        }
        let data: Vec<C64> = acc.iter().copied().collect();
        Ok(ArrayD::from_shape_vec(IxDyn(&dims), data).expect("shape"))
    }

    fn check_modes(&self, other: &Self) -> Result<(), TtError> {
        let (l, r) = (self.mode_dims(), other.mode_dims());
        if l != r {
            return Err(TtError::ModeMismatch { left: l, right: r });
        }
        Ok(())
    }

    /// Elementwise sum via block-diagonal cores; internal bonds add.
    pub fn sum(&self, other: &Self) -> Result<Self, TtError> {
        self.check_modes(other)?;
        let d = self.order();
        if d == 1 {
            let c = &self.cores[0] + &other.cores[0];
            return Ok(Self::from_cores_unchecked(vec![c]));
        }
        let mut cores = Vec::with_capacity(d);
        for j in 0..d {
            let x = &self.cores[j];
            let y = &other.cores[j];
            let (xa, n, xb) = x.dim();
            let (ya, _, yb) = y.dim();
            let core = if j == 0 {
                let mut c = Array3::zeros((1, n, xb + yb));
                c.slice_mut(s![.., .., ..xb]).assign(x);
                c.slice_mut(s![.., .., xb..]).assign(y);
                c
            } else if j == d - 1 {
                let mut c = Array3::zeros((xa + ya, n, 1));
                c.slice_mut(s![..xa, .., ..]).assign(x);
                c.slice_mut(s![xa.., .., ..]).assign(y);
                c
            } else {
                let mut c = Array3::zeros((xa + ya, n, xb + yb));
                c.slice_mut(s![..xa, .., ..xb]).assign(x);
                c.slice_mut(s![xa.., .., xb..]).assign(y);
                c
            };
            cores.push(core);
        }
        Ok(Self::from_cores_unchecked(cores))
    }

    /// Elementwise product; each core slice is the Kronecker product of the
    /// operands' slices, so internal bonds multiply.
    pub fn hadamard(&self, other: &Self) -> Result<Self, TtError> {
        self.check_modes(other)?;
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .map(|(x, y)| {
                let (xa, n, xb) = x.dim();
                let (ya, _, yb) = y.dim();
                let mut z = Array3::<C64>::zeros((xa * ya, n, xb * yb));
                for a in 0..xa {
                    for i in 0..n {
                        for b in 0..xb {
                            let xv = x[[a, i, b]];
                            if xv == C64::new(0.0, 0.0) {
                                continue;
                            }
                            for a2 in 0..ya {
                                for b2 in 0..yb {
                                    z[[a * ya + a2, i, b * yb + b2]] = xv * y[[a2, i, b2]];
                                }
                            }
                        }
                    }
                }
                z
            })
            .collect();
        Ok(Self::from_cores_unchecked(cores))
    }

    /// Embeds this d-way train into `target_order` modes: core `l` goes to
    /// `positions[l]` (0-based, strictly increasing) and every other position
    /// receives an identity-carrying core of size `inserted_dims` (in order).
    pub fn extend(
        &self,
        target_order: usize,
        positions: &[usize],
        inserted_dims: &[usize],
    ) -> Result<Self, TtError> {
        let d = self.order();
        if positions.len() != d {
            return Err(TtError::InvalidArgument(format!(
                "expected {d} positions, got {}",
                positions.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TtError::InvalidArgument(format!("positions {positions:?} not strictly increasing")));
        }
        if positions.last().is_some_and(|&p| p >= target_order) {
            return Err(TtError::InvalidArgument(format!(
                "positions {positions:?} out of range for order {target_order}"
            )));
        }
        if inserted_dims.len() != target_order - d {
            return Err(TtError::InvalidArgument(format!(
                "expected {} inserted mode dims, got {}",
                target_order - d,
                inserted_dims.len()
            )));
        }
        let bonds = self.bond_dims();
        let mut cores = Vec::with_capacity(target_order);
        let mut kept = 0;
        let mut inserted = inserted_dims.iter();
        for j in 0..target_order {
            if kept < d && positions[kept] == j {
                cores.push(self.cores[kept].clone());
                kept += 1;
            } else {
                let r = bonds[kept];
                let n = *inserted.next().expect("length checked above");
                let mut c = Array3::zeros((r, n, r));
                for a in 0..r {
                    for i in 0..n {
                        c[[a, i, a]] = C64::new(1.0, 0.0);
                    }
                }
                cores.push(c);
            }
        }
        Self::from_cores(cores)
    }

    /// Right-to-left orthogonalization followed by a left-to-right truncated
    /// SVD sweep. Tolerance mode splits η uniformly over the d-1 bonds.
    pub fn round(&self, policy: RoundingPolicy) -> Result<Self, TtError> {
        policy.validate()?;
        let d = self.order();
        if d == 1 {
            return Ok(self.clone());
        }
        let mut cores = self.cores.clone();
        for j in (1..d).rev() {
            let (ra, n, rb) = cores[j].dim();
            // core_j as (ra, n*rb); QR of its transpose gives core_j = R^T Q^T
            let mat_t = cores[j].to_shape((ra, n * rb)).expect("reshape").t().to_owned();
            let (q, r) = linalg::thin_qr(mat_t.view());
            let k = q.ncols();
            cores[j] = q.t().as_standard_layout().into_owned().into_shape_with_order((k, n, rb)).expect("reshape");
            let (pa, pn, _) = cores[j - 1].dim();
            let prev = cores[j - 1].to_shape((pa * pn, ra)).expect("reshape").to_owned();
            let merged = linalg::matmul(prev.view(), r.t());
            cores[j - 1] = merged.into_shape_with_order((pa, pn, k)).expect("reshape");
        }
        let norm = cores[0].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let delta = match policy {
            RoundingPolicy::Tolerance(eta) => eta * norm / ((d - 1) as f64).sqrt(),
            RoundingPolicy::MaxBond(_) => 0.0,
        };
        for j in 0..d - 1 {
            let (ra, n, rb) = cores[j].dim();
            let mat = cores[j].to_shape((ra * n, rb)).expect("reshape").to_owned();
            let svd = linalg::thin_svd(mat.view())?;
            let keep = match policy {
                RoundingPolicy::Tolerance(_) => linalg::rank_for_tail(&svd.s, delta),
                RoundingPolicy::MaxBond(cap) => {
                    let nonzero = linalg::numerical_rank(&svd.s, 1e-15).max(1);
                    cap.min(nonzero).min(svd.s.len()).max(1)
                }
            };
            cores[j] = svd
                .u
                .slice(s![.., ..keep])
                .to_owned()
                .into_shape_with_order((ra, n, keep))
                .expect("reshape");
            let sv = Array2::from_shape_fn((keep, rb), |(i, c)| svd.vh[[i, c]] * svd.s[i]);
            let (na, nn, nb) = cores[j + 1].dim();
            let next = cores[j + 1].to_shape((na, nn * nb)).expect("reshape").to_owned();
            let merged = linalg::matmul(sv.view(), next.view());
            cores[j + 1] = merged.into_shape_with_order((keep, nn, nb)).expect("reshape");
        }
        Self::from_cores(cores)
    }

    /// Frobenius norm by Gram-matrix accumulation along the train.
    pub fn frobenius_norm(&self) -> f64 {
        let mut gram = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
        for core in &self.cores {
            let (ra, n, rb) = core.dim();
            let mut next = Array2::<C64>::zeros((rb, rb));
            for i in 0..n {
                let slice = core.slice(s![.., i, ..]);
                // t = gram * slice  (ra x rb)
                let t = linalg::matmul(gram.view(), slice);
                for b in 0..rb {
                    for b2 in 0..rb {
                        let mut acc = C64::new(0.0, 0.0);
                        for a in 0..ra {
                            acc += slice[[a, b]].conj() * t[[a, b2]];
                        }
                        next[[b, b2]] += acc;
                    }
                }
            }
            gram = next;
        }
        gram[[0, 0]].re.max(0.0).sqrt()
    }
}
