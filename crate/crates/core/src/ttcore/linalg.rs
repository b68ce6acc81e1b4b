//! Thin wrappers around faer for the dense kernels used by the tensor-train
//! algebra. Everything crosses the boundary as `ndarray` row-major arrays.

use faer::Mat;
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64 as C64;

use super::TtError;

pub fn to_faer(a: ArrayView2<'_, C64>) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_faer(m: faer::MatRef<'_, C64>) -> Array2<C64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin SVD `a = u * diag(s) * vh` with `s` sorted nonincreasing.
pub struct ThinSvd {
    pub u: Array2<C64>,
    pub s: Vec<f64>,
    pub vh: Array2<C64>,
}

pub fn thin_svd(a: ArrayView2<'_, C64>) -> Result<ThinSvd, TtError> {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Ok(ThinSvd {
            u: Array2::zeros((m, 0)),
            s: Vec::new(),
            vh: Array2::zeros((0, n)),
        });
    }
    if a.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(TtError::Svd(format!("non-finite entries in {m}x{n} matrix")));
    }
    match faer_svd(&to_faer(a)) {
        Ok(svd) => Ok(svd),
        Err(first) => {
            // The bidiagonal iteration occasionally stalls on strongly graded
            // matrices; a QR step first usually removes the grading.
            log::debug!("{first}; retrying through a QR preconditioner");
            svd_via_qr(a).map_err(|e| TtError::Svd(format!("{e} on {m}x{n} matrix (direct attempt: {first})")))
        }
    }
}

fn faer_svd(fa: &Mat<C64>) -> Result<ThinSvd, String> {
    let (m, n) = (fa.nrows(), fa.ncols());
    let svd = fa.thin_svd().map_err(|e| format!("{e:?} on {m}x{n} matrix"))?;
    let q = m.min(n);
    let s_diag = svd.S().column_vector();
    let s: Vec<f64> = (0..q).map(|i| s_diag[i].re).collect();
    if s.iter().any(|x| !x.is_finite()) {
        return Err(format!("non-finite singular values on {m}x{n} matrix"));
    }
    let u = from_faer(svd.U());
    let v = svd.V();
    let vh = Array2::from_shape_fn((q, n), |(i, j)| v[(j, i)].conj());
    Ok(ThinSvd { u, s, vh })
}

/// `a = q r` then the SVD of the square factor; wide inputs go through `a^H`.
fn svd_via_qr(a: ArrayView2<'_, C64>) -> Result<ThinSvd, String> {
    let (m, n) = a.dim();
    if m < n {
        let ah = a.t().mapv(|x| x.conj());
        let t = svd_via_qr(ah.view())?;
        return Ok(ThinSvd { u: t.vh.t().mapv(|x| x.conj()), s: t.s, vh: t.u.t().mapv(|x| x.conj()) });
    }
    let (q, r) = thin_qr(a);
    let scale = r.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        let k = n;
        return Ok(ThinSvd { u: q, s: vec![0.0; k], vh: Array2::eye(k) });
    }
    let rs = r.mapv(|x| x / scale);
    let mut inner = faer_svd(&to_faer(rs.view()))?;
    inner.s.iter_mut().for_each(|x| *x *= scale);
    Ok(ThinSvd { u: matmul(q.view(), inner.u.view()), s: inner.s, vh: inner.vh })
}

/// Thin QR `a = q * r` with `q` of shape (m, k), `r` of shape (k, n), k = min(m, n).
pub fn thin_qr(a: ArrayView2<'_, C64>) -> (Array2<C64>, Array2<C64>) {
    let (m, n) = a.dim();
    let k = m.min(n);
    if k == 0 {
        return (Array2::zeros((m, 0)), Array2::zeros((0, n)));
    }
    let fa = to_faer(a);
    let qr = fa.qr();
    let q = from_faer(qr.compute_thin_Q().as_ref());
    let r = from_faer(qr.thin_R());
    (q, r)
}

pub fn matmul(a: ArrayView2<'_, C64>, b: ArrayView2<'_, C64>) -> Array2<C64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul inner dimension mismatch");
    let (m, k) = a.dim();
    let n = b.ncols();
    if m * k * n < 32_768 {
        let mut out = Array2::<C64>::zeros((m, n));
        for i in 0..m {
            for l in 0..k {
                let x = a[[i, l]];
                if x == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out[[i, j]] += x * b[[l, j]];
                }
            }
        }
        return out;
    }
    let c = to_faer(a) * to_faer(b);
    from_faer(c.as_ref())
}

/// Number of leading singular values to keep so that the discarded tail has
/// Frobenius norm at most `delta`. Always keeps at least one.
pub fn rank_for_tail(s: &[f64], delta: f64) -> usize {
    let mut tail = 0.0_f64;
    let mut keep = s.len();
    while keep > 1 {
        let next = tail + s[keep - 1] * s[keep - 1];
        if next.sqrt() > delta {
            break;
        }
        tail = next;
        keep -= 1;
    }
    keep.max(1).min(s.len().max(1))
}

/// Count of singular values strictly above `rel * s[0]`.
pub fn numerical_rank(s: &[f64], rel: f64) -> usize {
    match s.first() {
        None => 0,
        Some(&0.0) => 0,
        Some(&smax) => s.iter().filter(|&&x| x > rel * smax).count(),
    }
}
