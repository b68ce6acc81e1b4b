//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use biftt::bath::{ohmic_discretize, tpc_factorize, tpc_matrix, BathModes, BathParams, TpcMatrix};
use biftt::bif::{build_bif_hierarchy, BifRounding, BifTT, BuildOptions};
use biftt::inchworm::{Mat2, TracePoint};
use biftt::ttcore::TensorTrain;
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_c64<R: Rng>(r: &mut R) -> C64 {
    C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
}

/// Random train with the given mode sizes and internal bonds drawn from `1..=max_bond`.
pub fn random_tt<R: Rng>(r: &mut R, dims: &[usize], max_bond: usize) -> TensorTrain {
    let d = dims.len();
    let mut bonds = vec![1usize; d + 1];
    for b in bonds.iter_mut().take(d).skip(1) {
        *b = r.random_range(1..=max_bond);
    }
    let cores = (0..d)
        .map(|k| Array3::from_shape_fn((bonds[k], dims[k], bonds[k + 1]), |_| random_c64(r)))
        .collect();
    TensorTrain::from_cores(cores).unwrap()
}

pub fn random_dims<R: Rng>(r: &mut R, max_order: usize, max_mode: usize) -> Vec<usize> {
    let d = r.random_range(1..=max_order);
    (0..d).map(|_| r.random_range(1..=max_mode)).collect()
}

pub fn frob(a: &ArrayD<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `‖a − b‖_F / max(‖b‖_F, tiny)`.
pub fn rel_err(a: &ArrayD<C64>, b: &ArrayD<C64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    diff / frob(b).max(1e-300)
}

/// Dense embedding reference: `out[i_1..i_D] = t[i_{positions}]`, constant along inserted modes.
pub fn dense_extend(t: &ArrayD<C64>, target_dims: &[usize], positions: &[usize]) -> ArrayD<C64> {
    ArrayD::from_shape_fn(IxDyn(target_dims), |idx| {
        let sub: Vec<usize> = positions.iter().map(|&p| idx[p]).collect();
        t[IxDyn(&sub)]
    })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn gl_matrix<F: Fn(f64) -> Array2<C64>>(f: &F, a: f64, b: f64, nodes: &(Vec<f64>, Vec<f64>)) -> Array2<C64> {
    let (half, mid) = (0.5 * (b - a), 0.5 * (b + a));
    let mut acc: Option<Array2<C64>> = None;
    for (x, w) in nodes.0.iter().zip(&nodes.1) {
        let term = f(mid + half * x) * C64::new(w * half, 0.0);
        acc = Some(match acc {
            None => term,
            Some(s) => s + term,
        });
    }
    acc.expect("at least one node")
}

/// Adaptive 20-point Gauss–Legendre quadrature of a matrix-valued integrand to
/// absolute Frobenius tolerance `tol`.
pub fn adaptive_gauss<F: Fn(f64) -> Array2<C64>>(f: &F, a: f64, b: f64, tol: f64) -> Array2<C64> {
    let nodes = gauss_legendre(20);
    fn rec<F: Fn(f64) -> Array2<C64>>(
        f: &F,
        a: f64,
        b: f64,
        whole: Array2<C64>,
        tol: f64,
        depth: usize,
        nodes: &(Vec<f64>, Vec<f64>),
    ) -> Array2<C64> {
        let m = 0.5 * (a + b);
        let left = gl_matrix(f, a, m, nodes);
        let right = gl_matrix(f, m, b, nodes);
        let both = &left + &right;
        let err = (&both - &whole).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if err <= tol || depth >= 30 {
            both
        } else {
            rec(f, a, m, left, 0.5 * tol, depth + 1, nodes) + rec(f, m, b, right, 0.5 * tol, depth + 1, nodes)
        }
    }
    let whole = gl_matrix(f, a, b, &nodes);
    rec(f, a, b, whole, tol, 0, &nodes)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

/// `exp(−i H t)` for `H = ε σz + Δ σx`.
pub fn free_unitary(epsilon: f64, delta: f64, t: f64) -> Mat2 {
    let w = (epsilon * epsilon + delta * delta).sqrt();
    let h = Mat2::SIGMA_Z * epsilon + Mat2::SIGMA_X * delta;
    if w == 0.0 {
        return Mat2::IDENTITY;
    }
    Mat2::IDENTITY * (w * t).cos() - h * C64::new(0.0, (w * t).sin() / w)
}

/// `max_k |a_k − b_k|` over samples with `t ≥ t_min`.
pub fn sup_diff(a: &[TracePoint], b: &[TracePoint], t_min: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .filter(|(p, _)| p.t >= t_min - 1e-12)
        .map(|(p, q)| {
            assert!((p.t - q.t).abs() < 1e-12);
            (p.value - q.value).norm()
        })
        .fold(0.0, f64::max)
}

/// Two-mode bath used by the small oracle tests.
pub fn two_mode_bath() -> BathModes {
    BathModes::new(vec![0.7, 2.1], vec![0.5, 0.9]).unwrap()
}

pub fn small_tpc(n: usize, dt: f64) -> TpcMatrix {
    tpc_matrix(&two_mode_bath(), 2.0, dt, n).unwrap()
}

/// Ohmic correlation matrix at unit coupling for the default bath shape.
pub fn ohmic_tpc(beta: f64, dt: f64, n: usize) -> TpcMatrix {
    let p = BathParams { beta, xi: 1.0, dt, n, ..Default::default() };
    tpc_matrix(&ohmic_discretize(&p).unwrap(), beta, dt, n).unwrap()
}

/// Unit-coupling functionals with 2..=max_order arguments, rescaled to `xi`.
pub fn ohmic_bifs(beta: f64, xi: f64, dt: f64, n: usize, max_order: usize, rounding: BifRounding) -> Vec<BifTT> {
    let b = ohmic_tpc(beta, dt, n);
    let tt = tpc_factorize(&b, 1e-12).unwrap().to_tt();
    build_bif_hierarchy(&tt, max_order, dt, &BuildOptions::new(rounding))
        .unwrap()
        .iter()
        .map(|f| f.scale_xi(xi).unwrap())
        .collect()
}

/// Heun solution of `y' = −y + sin t`, `y(0) = 1`, sampled at every step up to `t_final`.
pub fn manufactured_heun(dt: f64, t_final: f64) -> Vec<f64> {
    let f = |t: f64, y: f64| -y + t.sin();
    let steps = (t_final / dt).round() as usize;
    let mut y = 1.0;
    let mut out = vec![y];
    for k in 0..steps {
        let t = k as f64 * dt;
        let k1 = f(t, y);
        let k2 = f(t + dt, y + dt * k1);
        y += 0.5 * dt * (k1 + k2);
        out.push(y);
    }
    out
}
