//! Heun stepping of the propagator table.
//!
//! Cells are processed in order of increasing span `p2 − p1`. Within a span
//! every cell is independent: Heun cells are advanced first, then cells
//! obtained by symmetry or by the jump at the origin are filled, and finally
//! each cell's recursion row is committed to the cache of its column together
//! with the right-hand side at the final value.

use std::sync::Mutex;

use log::{debug, info, warn};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::integral::{eval_integral_tt, Column};
use super::{Grid, InchwormError, Mat2, PropagatorTable, SystemParams};
use crate::bif::BifTT;

/// What the corrector uses for the unknown cell inside the integrals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorInstall {
    /// The predicted value, wherever the cell occurs.
    Everywhere,
    /// The value at the previous step inside the integrals; the predicted
    /// value only in the Hamiltonian term.
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Highest odd integral dimension `M` kept in the series.
    pub max_order: usize,
    /// Fill cells from conjugate symmetry and shift invariance instead of stepping them.
    pub use_symmetry: bool,
    pub predictor: PredictorInstall,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_order: 5, use_symmetry: true, predictor: PredictorInstall::Everywhere }
    }
}

/// `i^{m+1}` for odd `m`.
fn series_sign(m: usize) -> f64 {
    if m.div_ceil(2).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn select_bifs<'a>(bifs: &'a [BifTT], grid: &Grid, max_order: usize) -> Result<Vec<&'a BifTT>, InchwormError> {
    if max_order.is_multiple_of(2) {
        return Err(InchwormError::InvalidArgument(format!("series cap M must be odd, got {max_order}")));
    }
    (1..=max_order)
        .step_by(2)
        .map(|m| {
            let bif = bifs
                .iter()
                .find(|b| b.order == m + 1)
                .ok_or_else(|| InchwormError::InvalidArgument(format!("missing {}-argument functional", m + 1)))?;
            if bif.n != grid.n || (bif.dt - grid.dt).abs() > 1e-12 * grid.dt {
                return Err(InchwormError::GridMismatch(format!(
                    "{}-argument functional on (N={}, dt={}) vs solver grid (N={}, dt={})",
                    bif.order, bif.n, bif.dt, grid.n, grid.dt
                )));
            }
            Ok(bif)
        })
        .collect()
}

/// Right-hand side `i H_s G + Σ_m i^{m+1} I_m` at one cell of a filled table.
pub fn rhs(
    table: &PropagatorTable,
    sys: &SystemParams,
    bifs: &[BifTT],
    max_order: usize,
    p_i: usize,
    p_f: usize,
) -> Result<Mat2, InchwormError> {
    let sel = select_bifs(bifs, table.grid(), max_order)?;
    let g = table.get(p_i, p_f).ok_or(InchwormError::MissingEntry { p1: p_i, p2: p_f })?;
    let mut out = sys.hamiltonian() * g * C64::new(0.0, 1.0);
    for bif in sel {
        let m = bif.order - 1;
        let im = eval_integral_tt(table, bif, &sys.coupling(), p_i, p_f)?;
        out.add_scaled(C64::new(series_sign(m), 0.0), &im);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum CellKind {
    /// Fixed initial data (diagonal, `(0−, 0+)`).
    Initial,
    Heun,
    /// `G(p, 0+) = O_s G(p, 0−)`.
    JumpEnd,
    /// `G(0−, f) = G(0+, f) O_s`.
    JumpStart,
    /// Positive same-sign cell equal to the one starting at `0+`.
    Shift,
    /// Adjoint of the mirrored cell.
    Mirror,
}

fn classify(grid: &Grid, p: usize, f: usize, use_symmetry: bool, mirror_crossing: bool) -> CellKind {
    let (zm, zp) = (grid.zero_minus(), grid.zero_plus());
    if p == f || (p == zm && f == zp) {
        return CellKind::Initial;
    }
    if f == zp {
        return CellKind::JumpEnd;
    }
    if p == zm {
        return CellKind::JumpStart;
    }
    if !use_symmetry {
        return CellKind::Heun;
    }
    if p >= zp {
        if p == zp {
            CellKind::Heun
        } else {
            CellKind::Shift
        }
    } else if f <= zm || (mirror_crossing && p + f < grid.len() - 1) {
        CellKind::Mirror
    } else {
        CellKind::Heun
    }
}

fn finite_or_abort(grid: &Grid, p: usize, f: usize, g: &Mat2, what: &str) -> Result<(), InchwormError> {
    if g.is_finite() {
        Ok(())
    } else {
        Err(InchwormError::NumericalAbort {
            cell: format!("({}, {})", grid.label(p), grid.label(f)),
            detail: format!("{what} is {:?}", g.0),
        })
    }
}

/// Fills the whole table for `sys` with functionals of 2, 4, ..., `M+1` arguments.
pub fn solve_propagators(
    sys: &SystemParams,
    bifs: &[BifTT],
    grid: Grid,
    opts: &SolverOptions,
) -> Result<PropagatorTable, InchwormError> {
    sys.validate()?;
    let sel = select_bifs(bifs, &grid, opts.max_order)?;
    let obs = sys.observable;
    let mirror_crossing = opts.use_symmetry && obs.is_hermitian(1e-14);
    if opts.use_symmetry && !mirror_crossing {
        warn!("observable is not Hermitian; crossing cells are stepped without the conjugate symmetry");
    }
    let ih = sys.hamiltonian() * C64::new(0.0, 1.0);
    let w_s = sys.coupling();
    let len = grid.len();
    let mut table = PropagatorTable::new(grid, obs);
    let columns: Vec<Mutex<Option<Column>>> =
        (0..len).map(|f| Mutex::new(Some(Column::new(&grid, f, &sel)))).collect();
    let signs: Vec<C64> = sel.iter().map(|b| C64::new(series_sign(b.order - 1), 0.0)).collect();
    let combine = |g: &Mat2, integrals: &[Mat2]| -> Mat2 {
        let mut out = ih * *g;
        for (s, im) in signs.iter().zip(integrals) {
            out.add_scaled(*s, im);
        }
        out
    };
    let mut heun_cells = 0usize;
    for d in 0..len {
        let cells: Vec<(usize, usize, CellKind)> = (0..len - d)
            .map(|p| (p, p + d, classify(&grid, p, p + d, opts.use_symmetry, mirror_crossing)))
            .collect();

        // Heun steps from (p, f−1) to (p, f)
        let stepped = cells
            .par_iter()
            .filter(|c| c.2 == CellKind::Heun)
            .map(|&(p, f, _)| -> Result<(usize, usize, Mat2), InchwormError> {
                let g_old = table.get(p, f - 1).ok_or(InchwormError::MissingEntry { p1: p, p2: f - 1 })?;
                let rhs_old = table.rhs_at(p, f - 1).ok_or(InchwormError::MissingEntry { p1: p, p2: f - 1 })?;
                let step = grid.sgn(f) * (grid.time(f) - grid.time(f - 1));
                let predicted = g_old + rhs_old * step;
                finite_or_abort(&grid, p, f, &predicted, "predictor")?;
                let inner = match opts.predictor {
                    PredictorInstall::Everywhere => predicted,
                    PredictorInstall::Frozen => g_old,
                };
                let col = columns[f].lock().expect("column lock poisoned");
                let col = col.as_ref().expect("column alive until its first row is committed");
                let upd = col.eval_row(&grid, &sel, &w_s, p, |a, b| {
                    if (a, b) == (p, f) {
                        Ok(inner)
                    } else {
                        table.get(a, b).ok_or(InchwormError::MissingEntry { p1: a, p2: b })
                    }
                })?;
                let rhs_new = combine(&predicted, &upd.integrals);
                let g_new = g_old + (rhs_old + rhs_new) * (0.5 * step);
                finite_or_abort(&grid, p, f, &g_new, "corrector")?;
                Ok((p, f, g_new))
            })
            .collect::<Result<Vec<_>, _>>()?;
        heun_cells += stepped.len();
        for (p, f, g) in stepped {
            table.set(p, f, g);
        }

        // cells fixed by structure, in dependency order
        let (zm, zp) = (grid.zero_minus(), grid.zero_plus());
        let source = |t: &PropagatorTable, a: usize, b: usize| t.get(a, b).ok_or(InchwormError::MissingEntry { p1: a, p2: b });
        for kind in [CellKind::Shift, CellKind::JumpEnd, CellKind::JumpStart, CellKind::Mirror] {
            for &(p, f, k) in cells.iter().filter(|c| c.2 == kind) {
                let value = match k {
                    CellKind::Shift => source(&table, zp, zp + d)?,
                    CellKind::JumpEnd => obs * source(&table, p, zm)?,
                    CellKind::JumpStart => source(&table, zp, f)? * obs,
                    CellKind::Mirror => source(&table, grid.mirror(f), grid.mirror(p))?.adjoint(),
                    _ => unreachable!(),
                };
                table.set(p, f, value);
            }
        }

        // commit recursion rows and final right-hand sides
        let finals = cells
            .par_iter()
            .map(|&(p, f, _)| -> Result<(usize, usize, Mat2), InchwormError> {
                let g = table.get(p, f).ok_or(InchwormError::MissingEntry { p1: p, p2: f })?;
                let mut guard = columns[f].lock().expect("column lock poisoned");
                let col = guard.as_mut().expect("column alive until its first row is committed");
                let upd = col.eval_row(&grid, &sel, &w_s, p, |a, b| {
                    table.get(a, b).ok_or(InchwormError::MissingEntry { p1: a, p2: b })
                })?;
                let r = combine(&g, &upd.integrals);
                finite_or_abort(&grid, p, f, &r, "right-hand side")?;
                if p == 0 {
                    *guard = None;
                } else {
                    col.commit(p, upd);
                }
                Ok((p, f, r))
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (p, f, r) in finals {
            table.set_rhs(p, f, r);
        }
        if d % 20 == 0 {
            debug!("span {d}/{} done", len - 1);
        }
    }
    info!(
        "filled {} labels with M={} ({} Heun cells, symmetry {})",
        len, opts.max_order, heun_cells, opts.use_symmetry
    );
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_signs() {
        assert_eq!(series_sign(1), -1.0);
        assert_eq!(series_sign(3), 1.0);
        assert_eq!(series_sign(5), -1.0);
    }

    #[test]
    fn classification() {
        let g = Grid::new(3, 0.1).unwrap();
        let (zm, zp) = (g.zero_minus(), g.zero_plus());
        assert_eq!(classify(&g, 2, 2, true, true), CellKind::Initial);
        assert_eq!(classify(&g, zm, zp, true, true), CellKind::Initial);
        assert_eq!(classify(&g, 0, zp, true, true), CellKind::JumpEnd);
        assert_eq!(classify(&g, zm, 7, true, true), CellKind::JumpStart);
        assert_eq!(classify(&g, zp, 7, true, true), CellKind::Heun);
        assert_eq!(classify(&g, 6, 7, true, true), CellKind::Shift);
        assert_eq!(classify(&g, 0, 2, true, true), CellKind::Mirror);
        // (−3, 1) mirrors to (−1, 3): the latter is stepped
        assert_eq!(classify(&g, 0, 5, true, true), CellKind::Mirror);
        assert_eq!(classify(&g, 2, 7, true, true), CellKind::Heun);
        assert_eq!(classify(&g, 0, 5, true, false), CellKind::Heun);
        assert_eq!(classify(&g, 0, 2, false, true), CellKind::Heun);
    }
}
