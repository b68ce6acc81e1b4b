//! Simplex integrals of the inchworm right-hand side.
//!
//! For a fixed final label `f`, the recursion levels attached to a node `q`
//! depend only on propagators inside `[q, f]`. A [`Column`] therefore keeps
//! those levels for every node already processed, and a new starting row is
//! added at a cost linear in the window length. A one-off integral is the
//! same computation run from `f` down to the starting label.

use ndarray::Array3;
use num_complex::Complex64 as C64;

use super::{Grid, InchwormError, Mat2, PropagatorTable};
use crate::bath::TpcMatrix;
use crate::bif::{bif_dense, BifTT};

/// Largest number of index tuples the direct quadrature will visit.
pub const DIRECT_COST_GUARD: u64 = 50_000_000;

/// Composite trapezoid weights for the nodes `p_prev..=p_f` (physical units).
///
/// Each segment between consecutive labels contributes half its length to
/// both ends; the segment between `0−` and `0+` has length zero, so a window
/// crossing the origin is two trapezoid rules joined at split nodes.
pub fn trapezoid_weights(grid: &Grid, p_prev: usize, p_f: usize) -> Vec<f64> {
    assert!(p_prev <= p_f && p_f < grid.len(), "window {p_prev}..={p_f} invalid");
    let mut w = vec![0.0; p_f - p_prev + 1];
    for q in p_prev..p_f {
        let h = grid.time(q + 1) - grid.time(q);
        w[q - p_prev] += 0.5 * h;
        w[q + 1 - p_prev] += 0.5 * h;
    }
    w
}

/// Per-order state of one column.
struct OrderColumn {
    m: usize,
    /// `C_f(i, α) = Σ_β L^(m)(α, i, β) L^(m+1)(β, idx f, 0)`, row-major over BIF index `i`.
    top: Vec<C64>,
    top_rank: usize,
    /// `omega[j-1][q]` holds `Ω^(j)(q, ·)` for `j = 1..m−1`.
    omega: Vec<Vec<Option<Vec<Mat2>>>>,
}

fn top_contraction(bif: &BifTT, f_idx: usize) -> (Vec<C64>, usize) {
    let cores = bif.tt.cores();
    let m = cores.len() - 1;
    let (lm, last) = (&cores[m - 1], &cores[m]);
    let (ra, n, rb) = lm.dim();
    let v: Vec<C64> = (0..rb).map(|b| last[[b, f_idx, 0]]).collect();
    let mut top = vec![C64::new(0.0, 0.0); n * ra];
    for i in 0..n {
        for a in 0..ra {
            let mut acc = C64::new(0.0, 0.0);
            for (b, vb) in v.iter().enumerate() {
                acc += lm[[a, i, b]] * vb;
            }
            top[i * ra + a] = acc;
        }
    }
    (top, ra)
}

/// New recursion rows produced for one starting label, before commit.
pub(crate) struct RowUpdate {
    pub integrals: Vec<Mat2>,
    omega: Vec<Vec<Vec<Mat2>>>,
    sandwich: Mat2,
}

/// Cached recursion state for a fixed final label `f`, one entry per order.
pub(crate) struct Column {
    f: usize,
    orders: Vec<OrderColumn>,
    /// `W G(q, f) W` for committed rows.
    sandwich: Vec<Option<Mat2>>,
}

impl Column {
    pub fn new(grid: &Grid, f: usize, bifs: &[&BifTT]) -> Self {
        let f_idx = grid.bif_index(f);
        let orders = bifs
            .iter()
            .map(|bif| {
                let m = bif.order - 1;
                let (top, top_rank) = top_contraction(bif, f_idx);
                OrderColumn { m, top, top_rank, omega: vec![vec![None; f + 1]; m - 1] }
            })
            .collect();
        Self { f, orders, sandwich: vec![None; f + 1] }
    }

    /// Evaluates every order's integral for the window `[p, f]`, reading
    /// propagators through `g`. Rows `p+1..=f` must already be committed.
    pub fn eval_row<G>(&self, grid: &Grid, bifs: &[&BifTT], w_s: &Mat2, p: usize, g: G) -> Result<RowUpdate, InchwormError>
    where
        G: Fn(usize, usize) -> Result<Mat2, InchwormError>,
    {
        let f = self.f;
        let weights = trapezoid_weights(grid, p, f);
        // Y_q = w sgn(q) G(p, q); X_q = W G(q, f) W Y_q
        let mut y = Vec::with_capacity(f - p + 1);
        let mut x = Vec::with_capacity(f - p + 1);
        let own_sandwich = *w_s * g(p, f)? * *w_s;
        for (q, &w) in (p..=f).zip(&weights) {
            let yq = g(p, q)?.scale_re(w * grid.sgn(q));
            let zq = if q == p {
                own_sandwich
            } else {
                self.sandwich[q].ok_or(InchwormError::MissingEntry { p1: q, p2: f })?
            };
            y.push(yq);
            x.push(zq * yq);
        }
        let p_idx = grid.bif_index(p);
        let mut integrals = Vec::with_capacity(self.orders.len());
        let mut omega_rows = Vec::with_capacity(self.orders.len());
        for (oc, bif) in self.orders.iter().zip(bifs) {
            let cores = bif.tt.cores();
            // top level: I^(m-1)(p, α) = Σ_q C_f(idx q, α) X_q
            let r = oc.top_rank;
            let mut level = vec![Mat2::ZERO; r];
            for (q, xq) in (p..=f).zip(&x) {
                if xq.0.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                    continue;
                }
                let row = &oc.top[grid.bif_index(q) * r..(grid.bif_index(q) + 1) * r];
                for (acc, &c) in level.iter_mut().zip(row) {
                    acc.add_scaled(c, xq);
                }
            }
            let mut new_omega = vec![Vec::new(); oc.m - 1];
            for j in (1..oc.m).rev() {
                let om = omega_from_level(&cores[j - 1], p_idx, &level, w_s);
                // I^(j-1)(p, β) = Σ_q Ω^(j)(q, β) Y_q
                let mut next = vec![Mat2::ZERO; om.len()];
                for (k, (q, yq)) in (p..=f).zip(&y).enumerate() {
                    if yq.0.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                        continue;
                    }
                    let src: &[Mat2] = if k == 0 {
                        &om
                    } else {
                        oc.omega[j - 1][q].as_deref().ok_or(InchwormError::MissingEntry { p1: q, p2: f })?
                    };
                    for (acc, o) in next.iter_mut().zip(src) {
                        *acc += *o * *yq;
                    }
                }
                new_omega[j - 1] = om;
                level = next;
            }
            debug_assert_eq!(level.len(), 1);
            integrals.push(level[0]);
            omega_rows.push(new_omega);
        }
        Ok(RowUpdate { integrals, omega: omega_rows, sandwich: own_sandwich })
    }

    pub fn commit(&mut self, p: usize, update: RowUpdate) {
        self.sandwich[p] = Some(update.sandwich);
        for (oc, rows) in self.orders.iter_mut().zip(update.omega) {
            for (j, row) in rows.into_iter().enumerate() {
                oc.omega[j][p] = Some(row);
            }
        }
    }
}

/// `Ω^(j)(p, β) = Σ_α L^(j)(β, idx p, α) I^(j)(p, α) W`.
fn omega_from_level(core: &Array3<C64>, idx: usize, level: &[Mat2], w_s: &Mat2) -> Vec<Mat2> {
    let (ra, _, rb) = core.dim();
    debug_assert_eq!(rb, level.len());
    let slice = core.slice(ndarray::s![.., idx, ..]);
    (0..ra)
        .map(|b| {
            let mut acc = Mat2::ZERO;
            for (a, lv) in level.iter().enumerate() {
                let c = slice[[b, a]];
                if c != C64::new(0.0, 0.0) {
                    acc.add_scaled(c, lv);
                }
            }
            acc * *w_s
        })
        .collect()
}

fn check_window(grid: &Grid, p_i: usize, p_f: usize) -> Result<(), InchwormError> {
    if p_i > p_f || p_f >= grid.len() {
        return Err(InchwormError::InvalidArgument(format!("window {p_i}..={p_f} invalid for {} labels", grid.len())));
    }
    Ok(())
}

fn check_bif(grid: &Grid, bif: &BifTT) -> Result<(), InchwormError> {
    if bif.n != grid.n || (bif.dt - grid.dt).abs() > 1e-12 * grid.dt {
        return Err(InchwormError::GridMismatch(format!(
            "functional grid (N={}, dt={}) vs solver grid (N={}, dt={})",
            bif.n, bif.dt, grid.n, grid.dt
        )));
    }
    if bif.order < 2 || !bif.order.is_multiple_of(2) {
        return Err(InchwormError::InvalidArgument(format!("functional order {} is not even", bif.order)));
    }
    Ok(())
}

/// `I_m` over the window `[p_i, p_f]` by sequential one-dimensional
/// quadratures through the tensor-train functional with `m+1` arguments.
pub fn eval_integral_tt(
    table: &PropagatorTable,
    bif: &BifTT,
    w_s: &Mat2,
    p_i: usize,
    p_f: usize,
) -> Result<Mat2, InchwormError> {
    let grid = table.grid();
    check_window(grid, p_i, p_f)?;
    check_bif(grid, bif)?;
    let bifs = [bif];
    let mut col = Column::new(grid, p_f, &bifs);
    let g = |a: usize, b: usize| table.get(a, b).ok_or(InchwormError::MissingEntry { p1: a, p2: b });
    for p in (p_i..=p_f).rev() {
        let upd = col.eval_row(grid, &bifs, w_s, p, g)?;
        if p == p_i {
            return Ok(upd.integrals[0]);
        }
        col.commit(p, upd);
    }
    unreachable!("loop returns at p_i")
}

/// Number of nondecreasing `m`-tuples over `len` nodes.
fn tuple_count(len: u64, m: u64) -> u64 {
    // C(len + m - 1, m), saturating
    let mut acc: u128 = 1;
    for i in 0..m as u128 {
        acc = acc * (len as u128 + i) / (i + 1);
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Nested trapezoid quadrature over all nondecreasing label tuples, with the
/// functional evaluated pairing by pairing from the correlation matrix.
pub fn eval_integral_direct(
    table: &PropagatorTable,
    b: &TpcMatrix,
    m: usize,
    w_s: &Mat2,
    p_i: usize,
    p_f: usize,
) -> Result<Mat2, InchwormError> {
    let grid = table.grid();
    check_window(grid, p_i, p_f)?;
    if m.is_multiple_of(2) {
        return Err(InchwormError::InvalidArgument(format!("integral dimension must be odd, got {m}")));
    }
    if b.n != grid.n {
        return Err(InchwormError::GridMismatch(format!("correlation N={} vs grid N={}", b.n, grid.n)));
    }
    let tuples = tuple_count((p_f - p_i + 1) as u64, m as u64);
    if tuples > DIRECT_COST_GUARD {
        return Err(InchwormError::CostGuard { tuples, guard: DIRECT_COST_GUARD });
    }
    let g = |a: usize, c: usize| table.get(a, c).ok_or(InchwormError::MissingEntry { p1: a, p2: c });
    let weights: Vec<Vec<f64>> = (p_i..=p_f).map(|q| trapezoid_weights(grid, q, p_f)).collect();
    let k_f = grid.signed_index(p_f);
    let mut total = Mat2::ZERO;
    let mut labels = vec![p_i; m];
    let mut ks = vec![0i64; m + 1];
    ks[m] = k_f;
    loop {
        // weight Π_j w_{[q_{j-1}, f]}(q_j) with q_0 = p_i
        let mut w = 1.0;
        let mut prev = p_i;
        for &q in &labels {
            w *= weights[prev - p_i][q - prev] * grid.sgn(q);
            prev = q;
        }
        if w != 0.0 {
            for (k, &q) in ks.iter_mut().zip(&labels) {
                *k = grid.signed_index(q);
            }
            let bif = bif_dense(b, &ks)?;
            // W G(q_m, f) W G(q_{m-1}, q_m) W ... W G(p_i, q_1)
            let mut u = *w_s * g(labels[m - 1], p_f)?;
            for j in (0..m).rev() {
                let from = if j == 0 { p_i } else { labels[j - 1] };
                u = u * *w_s * g(from, labels[j])?;
            }
            total.add_scaled(bif * w, &u);
        }
        // next nondecreasing tuple (last label fastest)
        let mut j = m;
        loop {
            if j == 0 {
                return Ok(total);
            }
            j -= 1;
            if labels[j] < p_f {
                labels[j] += 1;
                let v = labels[j];
                for l in labels.iter_mut().skip(j + 1) {
                    *l = v;
                }
                break;
            }
        }
    }
}
