//! Dynamical maps and transfer tensors.

mod common;

use biftt::bif::{BifRounding, BifTT};
use biftt::inchworm::{observable_trace, solve_propagators, Grid, Mat2, PropagatorTable, SolverOptions, SystemParams};
use biftt::ttm::{
    basis_runs, dynamical_maps, learn_transfer_tensors, propagate, ttm_trace, unvec, vec_mat, DynamicalMaps, SuperOp,
    TransferTensors, TtmError,
};
use nalgebra::Matrix2;
use num_complex::Complex64 as C64;

use common::{free_unitary, ohmic_bifs, random_c64, rng, sup_diff};

fn spin_boson() -> SystemParams {
    SystemParams { epsilon: 1.0, ..Default::default() }
}

fn opts(m: usize, symmetry: bool) -> SolverOptions {
    SolverOptions { max_order: m, use_symmetry: symmetry, ..Default::default() }
}

/// `ρ ↦ U ρ U†` on row-major vectorisation: `U ⊗ conj(U)`.
fn conjugation_map(u: &Mat2) -> SuperOp {
    SuperOp::from_fn(|r, c| u.at(r / 2, c / 2) * u.at(r % 2, c % 2).conj())
}

fn unitary_from_seed(seed: u64) -> Mat2 {
    let mut r = rng(seed);
    let m = Matrix2::from_fn(|_, _| random_c64(&mut r));
    let q = m.qr().q();
    Mat2([q[(0, 0)], q[(0, 1)], q[(1, 0)], q[(1, 1)]])
}

#[test]
fn decoupled_maps_are_unitary_conjugations() {
    let (eps, delta) = (0.6, 1.0);
    let sys = SystemParams { epsilon: eps, delta, ..Default::default() };
    let err = |dt: f64| {
        let n = (2.0f64 / dt).round() as usize;
        let bifs = ohmic_bifs(5.0, 0.0, dt, n, 2, BifRounding::Tolerance(1e-8));
        let tables = basis_runs(&sys, &bifs, Grid::new(n, dt).unwrap(), &opts(1, true)).unwrap();
        let maps = dynamical_maps(&tables, n).unwrap();
        assert_eq!(maps.maps[0], SuperOp::identity());
        maps.maps
            .iter()
            .enumerate()
            .map(|(k, e)| (e - conjugation_map(&free_unitary(eps, delta, k as f64 * dt))).norm())
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (err(0.1), err(0.05));
    assert!(e2 < 1e-2, "{e2:e}");
    assert!((e1 / e2).log2() > 1.8, "{e1:e} / {e2:e}");
}

#[test]
fn trace_defect_of_maps_vanishes_under_refinement() {
    let sys = spin_boson();
    let defect = |dt: f64| {
        let n = (2.0f64 / dt).round() as usize;
        let bifs = ohmic_bifs(5.0, 0.4, dt, n, 2, BifRounding::Tolerance(1e-10));
        let tables = basis_runs(&sys, &bifs, Grid::new(n, dt).unwrap(), &opts(1, true)).unwrap();
        dynamical_maps(&tables, n).unwrap().trace_defect(&sys.rho)
    };
    let (d1, d2) = (defect(0.2), defect(0.1));
    assert!((d1 / d2).log2() > 1.8, "{d1:e} / {d2:e}");
}

#[test]
fn matrix_unit_and_pauli_runs_give_the_same_maps() {
    let (dt, n) = (0.2, 6);
    let bifs = ohmic_bifs(5.0, 0.4, dt, n, 4, BifRounding::Tolerance(1e-10));
    let grid = Grid::new(n, dt).unwrap();
    let sys = spin_boson();
    let pauli = dynamical_maps(&basis_runs(&sys, &bifs, grid, &opts(3, false)).unwrap(), n).unwrap();
    let units: Vec<PropagatorTable> = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .iter()
        .map(|&(a, b)| {
            let s = SystemParams { observable: Mat2::unit(a, b), ..sys };
            solve_propagators(&s, &bifs, grid, &opts(3, false)).unwrap()
        })
        .collect();
    let direct = dynamical_maps(&units, n).unwrap();
    for (a, b) in pauli.maps.iter().zip(&direct.maps) {
        assert!((a - b).norm() < 1e-10);
    }
}

#[test]
fn maps_reproduce_the_solver_trace_for_any_initial_state() {
    let (dt, n) = (0.2, 8);
    let bifs = ohmic_bifs(5.0, 0.4, dt, n, 4, BifRounding::Tolerance(1e-10));
    let grid = Grid::new(n, dt).unwrap();
    let maps = dynamical_maps(&basis_runs(&spin_boson(), &bifs, grid, &opts(3, true)).unwrap(), n).unwrap();
    let rho = Mat2::real(0.3, 0.2, 0.2, 0.7);
    let sys = SystemParams { rho, observable: Mat2::SIGMA_X, ..spin_boson() };
    let direct = observable_trace(&solve_propagators(&sys, &bifs, grid, &opts(3, true)).unwrap(), &rho);
    for (k, p) in direct.iter().enumerate() {
        let evolved = unvec(&(maps.maps[k] * vec_mat(&rho)));
        assert!(((evolved * Mat2::SIGMA_X).trace() - p.value).norm() < 1e-12, "k={k}");
    }
}

#[test]
fn full_memory_propagation_equals_the_direct_trace() {
    let (dt, n) = (0.2, 10);
    let sys = spin_boson();
    let bifs = ohmic_bifs(5.0, 0.4, dt, n, 4, BifRounding::Tolerance(1e-10));
    let grid = Grid::new(n, dt).unwrap();
    let maps = dynamical_maps(&basis_runs(&sys, &bifs, grid, &opts(3, true)).unwrap(), n).unwrap();
    let tensors = learn_transfer_tensors(&maps).unwrap();
    let series = propagate(&tensors, &sys.rho, n).unwrap();
    let tr = ttm_trace(&series, dt, &sys.observable);
    let direct = observable_trace(&solve_propagators(&sys, &bifs, grid, &opts(3, true)).unwrap(), &sys.rho);
    assert!(sup_diff(&tr, &direct, 0.0) < 1e-10);
    // reconstruction of the inputs
    let back = tensors.reconstruct_maps();
    for (a, b) in back.maps.iter().zip(&maps.maps) {
        assert!((a - b).norm() < 1e-13);
    }
}

#[test]
fn markovian_sequence_has_a_single_tensor() {
    let mut r = rng(21);
    let lam = SuperOp::from_fn(|_, _| random_c64(&mut r) * 0.3);
    let mut maps = vec![SuperOp::identity()];
    for k in 1..=8 {
        maps.push(lam * maps[k - 1]);
    }
    let t = learn_transfer_tensors(&DynamicalMaps { dt: 0.1, maps }).unwrap();
    assert!((t.tensors[0] - lam).norm() < 1e-14);
    assert!(t.tensors[1..].iter().all(|tj| tj.norm() < 1e-13));
}

#[test]
fn trace_preserving_maps_propagate_trace_preserving() {
    // mixture of two unitary evolutions: non-Markovian but trace preserving
    let (u1, u2) = (unitary_from_seed(1), unitary_from_seed(2));
    let (a, b) = (conjugation_map(&u1), conjugation_map(&u2));
    let mut maps = vec![SuperOp::identity()];
    let (mut pa, mut pb) = (SuperOp::identity(), SuperOp::identity());
    for _ in 0..8 {
        pa = a * pa;
        pb = b * pb;
        maps.push((pa + pb) * C64::new(0.5, 0.0));
    }
    let t = learn_transfer_tensors(&DynamicalMaps { dt: 0.1, maps }).unwrap();
    let rho = Mat2::real(0.8, 0.1, 0.1, 0.2);
    let series = propagate(&t, &rho, 80).unwrap();
    let worst = series.iter().map(|s| (s.trace() - C64::new(1.0, 0.0)).norm()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn shorter_memory_is_a_prefix() {
    let t = TransferTensors { dt: 0.1, tensors: (0..5).map(|k| SuperOp::identity() * C64::new(k as f64, 0.0)).collect() };
    let s = t.truncated(3);
    assert_eq!(s.k_max(), 3);
    assert_eq!(s.tensors[..], t.tensors[..3]);
    assert_eq!(t.truncated(99).k_max(), 5);
    assert_eq!(t.frobenius_norms()[2], 4.0);
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(5);
    let t = TransferTensors { dt: 0.2, tensors: (0..4).map(|_| SuperOp::from_fn(|_, _| random_c64(&mut r))).collect() };
    t.save(dir.path(), "tt").unwrap();
    let back = TransferTensors::load(dir.path(), "tt").unwrap();
    assert_eq!(back, t);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tt.json")).unwrap()).unwrap();
    assert_eq!(meta["k_max"], 4);
    assert_eq!(meta["vectorization"], "row-major");
}

#[test]
fn inconsistent_inputs_are_rejected() {
    let bifs_a: Vec<BifTT> = ohmic_bifs(5.0, 0.2, 0.2, 3, 2, BifRounding::Tolerance(1e-8));
    let bifs_b: Vec<BifTT> = ohmic_bifs(5.0, 0.2, 0.2, 4, 2, BifRounding::Tolerance(1e-8));
    let sys = spin_boson();
    let mut tables = basis_runs(&sys, &bifs_a, Grid::new(3, 0.2).unwrap(), &opts(1, true)).unwrap();
    assert!(matches!(dynamical_maps(&tables, 4), Err(TtmError::InvalidArgument(_))));
    assert!(matches!(dynamical_maps(&tables[..3], 2), Err(TtmError::InvalidArgument(_))));
    tables[3] = solve_propagators(&sys, &bifs_b, Grid::new(4, 0.2).unwrap(), &opts(1, true)).unwrap();
    assert!(matches!(dynamical_maps(&tables, 2), Err(TtmError::InvalidArgument(_))));
    let dependent: Vec<PropagatorTable> = (0..4)
        .map(|_| solve_propagators(&sys, &bifs_a, Grid::new(3, 0.2).unwrap(), &opts(1, true)).unwrap())
        .collect();
    assert!(matches!(dynamical_maps(&dependent, 2), Err(TtmError::InvalidArgument(_))));
    let not_identity = DynamicalMaps { dt: 0.1, maps: vec![SuperOp::zeros()] };
    assert!(learn_transfer_tensors(&not_identity).is_err());
}
