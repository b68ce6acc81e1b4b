//! Configuration-driven runs, influence-functional caching and the
//! convergence and benchmark suites behind the command-line tool.
//!
//! Influence functionals are always built at unit coupling and rescaled, so
//! one cached set serves every coupling strength on the same bath and grid.

mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bath::{self, BathError, BathParams};
use crate::bif::{build_bif_hierarchy, BifError, BifRounding, BifTT, BuildOptions};
use crate::inchworm::{
    self, convergence_order, eval_integral_direct, eval_integral_tt, observable_trace, solve_propagators, write_trace_csv,
    InchwormError, PropagatorTable, SolverOptions, SystemParams, TracePoint,
};
use crate::ttm::{self, TtmError};

pub use config::{
    BathConfig, IoConfig, NumericsConfig, ObservableName, RunConfig, SystemConfig, TtmConfig, DEFAULT_ROUND_TOL,
};

/// Bumped whenever the cached file layout or build algorithm changes.
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Bath(#[from] BathError),
    #[error(transparent)]
    Bif(#[from] BifError),
    #[error(transparent)]
    Inchworm(#[from] InchwormError),
    #[error(transparent)]
    Ttm(#[from] TtmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit status: 2 for configuration errors, 3 for numerical aborts
    /// (non-finite values, memory or cost guards), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Bath(BathError::InvalidParams(_)) => 2,
            Self::Bif(BifError::MemoryGuard { .. })
            | Self::Inchworm(InchwormError::NumericalAbort { .. } | InchwormError::CostGuard { .. })
            | Self::Inchworm(InchwormError::Bif(BifError::MemoryGuard { .. }))
            | Self::Ttm(TtmError::Inchworm(InchwormError::NumericalAbort { .. })) => 3,
            _ => 1,
        }
    }
}

/// Everything that determines the unit-coupling functionals.
#[derive(Serialize)]
struct CacheKey {
    version: u32,
    beta: f64,
    modes: usize,
    omega_c: f64,
    omega_max: f64,
    dt: f64,
    n: usize,
    max_order: usize,
    rounding: BifRounding,
    svd_threshold: f64,
}

/// Hex SHA-256 of the bath, grid and build policy, independent of `ξ`.
pub fn bif_cache_key(bath: &BathParams, max_order: usize, rounding: BifRounding, svd_threshold: f64) -> String {
    let key = CacheKey {
        version: CACHE_VERSION,
        beta: bath.beta,
        modes: bath.modes,
        omega_c: bath.omega_c,
        omega_max: bath.omega_max,
        dt: bath.dt,
        n: bath.n,
        max_order,
        rounding,
        svd_threshold,
    };
    let digest = Sha256::digest(serde_json::to_vec(&key).expect("cache key serialises"));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Unit-coupling functionals with 2, 4, ..., `max_order` arguments.
#[derive(Clone, Debug)]
pub struct BifSet {
    pub bifs: Vec<BifTT>,
    pub key: String,
    pub tpc_rank: usize,
    pub cache_hit: bool,
}

impl BifSet {
    /// The set rescaled to coupling `xi`.
    pub fn at_xi(&self, xi: f64) -> Result<Vec<BifTT>, HarnessError> {
        Ok(self.bifs.iter().map(|b| b.scale_xi(xi)).collect::<Result<_, _>>()?)
    }
}

fn try_load(dir: &Path, max_order: usize, bath: &BathParams) -> Result<(Vec<BifTT>, usize), BifError> {
    let mut bifs = Vec::new();
    let mut rank = 0;
    for order in (2..=max_order).step_by(2) {
        let (bif, meta) = BifTT::load(dir, &format!("bif{order}"))?;
        if bif.order != order || bif.n != bath.n || bif.dt != bath.dt || bif.xi_ref != 1.0 {
            return Err(BifError::GridMismatch(format!("cached bif{order} does not match the requested grid")));
        }
        rank = meta.extra.get("tpc_rank").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
        bifs.push(bif);
    }
    Ok((bifs, rank))
}

/// Builds the unit-coupling functionals or loads them from `cache_dir`.
///
/// A cache entry that cannot be read is rebuilt with a warning.
pub fn load_or_build_bifs(
    bath: &BathParams,
    max_order: usize,
    rounding: BifRounding,
    svd_threshold: f64,
    cache_dir: Option<&Path>,
) -> Result<BifSet, HarnessError> {
    let unit = bath.at_unit_coupling();
    unit.validate()?;
    let key = bif_cache_key(&unit, max_order, rounding, svd_threshold);
    let entry = cache_dir.map(|d| d.join(&key));
    if let Some(dir) = entry.as_deref().filter(|d| d.exists()) {
        match try_load(dir, max_order, &unit) {
            Ok((bifs, tpc_rank)) => {
                info!("cache hit {key}: skipping influence-functional construction");
                return Ok(BifSet { bifs, key, tpc_rank, cache_hit: true });
            }
            Err(e) => warn!("cache entry {} unreadable ({e}); rebuilding", dir.display()),
        }
    }
    let t0 = Instant::now();
    let modes = bath::ohmic_discretize(&unit)?;
    let b = bath::tpc_matrix(&modes, unit.beta, unit.dt, unit.n)?;
    let fact = bath::tpc_factorize(&b, svd_threshold)?;
    let bifs = build_bif_hierarchy(&fact.to_tt(), max_order, unit.dt, &BuildOptions::new(rounding))?;
    info!(
        "built functionals up to {max_order} arguments (correlation rank {}, max bonds {:?}) in {:.2?}",
        fact.rank,
        bifs.iter().map(|b| b.tt.max_bond()).collect::<Vec<_>>(),
        t0.elapsed()
    );
    if let Some(dir) = entry.as_deref() {
        let extra = serde_json::json!({ "tpc_rank": fact.rank, "bath": unit, "cache_key": key });
        for bif in &bifs {
            bif.save(dir, &format!("bif{}", bif.order), extra.clone())?;
        }
    }
    Ok(BifSet { bifs, key, tpc_rank: fact.rank, cache_hit: false })
}

/// Cached functionals for a configuration, covering its series cap.
pub fn bif_set_for(cfg: &RunConfig) -> Result<BifSet, HarnessError> {
    load_or_build_bifs(
        &cfg.bath_params(),
        cfg.numerics.order + 1,
        cfg.rounding()?,
        cfg.numerics.svd_threshold,
        cfg.io.cache_dir.as_deref(),
    )
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub bif_s: f64,
    pub solve_s: f64,
    pub ttm_s: f64,
    pub total_s: f64,
}

/// Structured record written next to the traces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub cache_key: String,
    pub tpc_rank: usize,
    pub bif_bonds: Vec<Vec<usize>>,
    pub final_time: f64,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_tensor_norms: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub trace: Vec<TracePoint>,
    pub ttm_trace: Option<Vec<TracePoint>>,
    pub cache_hit: bool,
    pub timings: Timings,
    pub out_dir: PathBuf,
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_csv(path: &Path, trace: &[TracePoint]) -> Result<(), HarnessError> {
    write_trace_csv(trace, BufWriter::new(fs::File::create(path)?))?;
    Ok(())
}

/// Full run: functionals, propagator table, optional transfer tensors, artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let out = cfg.io.out_dir.clone();
    ensure_dir(&out)?;
    if let Some(c) = &cfg.io.cache_dir {
        ensure_dir(c)?;
    }
    let start = Instant::now();
    let set = bif_set_for(cfg)?;
    let bif_s = start.elapsed().as_secs_f64();
    let bifs = set.at_xi(cfg.bath.xi)?;
    let sys = cfg.system_params();
    let grid = cfg.grid()?;
    let opts = cfg.solver_options();

    let t_solve = Instant::now();
    let table = solve_propagators(&sys, &bifs, grid, &opts)?;
    let trace = observable_trace(&table, &sys.rho);
    let solve_s = t_solve.elapsed().as_secs_f64();
    write_csv(&out.join("trace.csv"), &trace)?;
    let mut files = vec!["trace.csv".to_string()];

    let t_ttm = Instant::now();
    let mut norms = None;
    let ttm_trace = if cfg.ttm.enabled {
        let tables = ttm::basis_runs(&sys, &bifs, grid, &opts)?;
        let maps = ttm::dynamical_maps(&tables, cfg.ttm.k_max)?;
        let tensors = ttm::learn_transfer_tensors(&maps)?;
        tensors.save(&out, "transfer_tensors")?;
        let steps = (cfg.ttm.horizon / grid.dt).round() as usize;
        let series = ttm::propagate(&tensors, &sys.rho, steps)?;
        let tr = ttm::ttm_trace(&series, grid.dt, &sys.observable);
        write_csv(&out.join("ttm_trace.csv"), &tr)?;
        files.extend(["ttm_trace.csv", "transfer_tensors.bin", "transfer_tensors.json"].map(String::from));
        norms = Some(tensors.frobenius_norms());
        Some(tr)
    } else {
        None
    };
    let ttm_s = t_ttm.elapsed().as_secs_f64();
    let timings = Timings { bif_s, solve_s, ttm_s, total_s: start.elapsed().as_secs_f64() };

    files.push("run.json".into());
    let record = RunRecord {
        config: cfg.clone(),
        cache_key: set.key.clone(),
        tpc_rank: set.tpc_rank,
        bif_bonds: set.bifs.iter().map(|b| b.tt.bond_dims()).collect(),
        final_time: grid.n as f64 * grid.dt,
        files,
        transfer_tensor_norms: norms,
        timings: (!cfg.io.deterministic).then(|| timings.clone()),
        threads: (!cfg.io.deterministic).then(rayon::current_num_threads),
    };
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&record)?)?;
    fs::write(out.join("timing.json"), serde_json::to_string_pretty(&timings)?)?;
    info!("run finished in {:.2}s, artifacts in {}", timings.total_s, out.display());
    Ok(RunReport { trace, ttm_trace, cache_hit: set.cache_hit, timings, out_dir: out })
}

/// One cell of the convergence table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub xi: f64,
    pub order: usize,
    pub dts: [f64; 3],
    pub p: f64,
}

/// Observed order `p` for each `(ξ, M)` cell from three step sizes halving
/// towards `dts[2]`, all run to `t_final`. Writes `convergence.csv`.
pub fn convergence_suite(
    cfg: &RunConfig,
    cells: &[(f64, usize)],
    dts: [f64; 3],
    t_final: f64,
) -> Result<Vec<ConvergenceRow>, HarnessError> {
    if cells.is_empty() {
        return Err(HarnessError::Config("no (xi, M) cells requested".into()));
    }
    if !(dts[0] > dts[1] && dts[1] > dts[2] && dts[2] > 0.0) {
        return Err(HarnessError::Config(format!("step sizes must decrease, got {dts:?}")));
    }
    let max_order = cells.iter().map(|c| c.1).max().expect("cells non-empty");
    if cells.iter().any(|c| c.1 % 2 == 0) {
        return Err(HarnessError::Config("every M must be odd".into()));
    }
    let mut traces: Vec<[Vec<f64>; 3]> = vec![Default::default(); cells.len()];
    for (level, &dt) in dts.iter().enumerate() {
        let steps = (t_final / dt).round() as usize;
        let mut c = cfg.clone();
        c.numerics.dt = dt;
        c.numerics.steps = steps;
        c.numerics.order = max_order;
        c.validate()?;
        let set = bif_set_for(&c)?;
        for (cell, &(xi, m)) in cells.iter().enumerate() {
            let t0 = Instant::now();
            let bifs = set.at_xi(xi)?;
            let opts = SolverOptions { max_order: m, ..c.solver_options() };
            let table = solve_propagators(&c.system_params(), &bifs, c.grid()?, &opts)?;
            traces[cell][level] = observable_trace(&table, &c.rho()).iter().map(|p| p.value.re).collect();
            info!("convergence cell xi={xi} M={m} dt={dt}: {:.2?}", t0.elapsed());
        }
    }
    let rows = cells
        .iter()
        .zip(&traces)
        .map(|(&(xi, order), [a, b, c])| Ok(ConvergenceRow { xi, order, dts, p: convergence_order(a, b, c)? }))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    ensure_dir(&cfg.io.out_dir)?;
    let mut csv = String::from("xi,order,dt_coarse,dt_mid,dt_fine,p\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{},{:.6}\n", r.xi, r.order, r.dts[0], r.dts[1], r.dts[2], r.p));
    }
    fs::write(cfg.io.out_dir.join("convergence.csv"), csv)?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegralPath {
    Tt,
    Direct,
}

/// Per-integral wall time; `seconds` is `None` when the direct path refused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub path: IntegralPath,
    pub n: usize,
    pub order: usize,
    pub seconds: Option<f64>,
}

impl BenchRow {
    pub fn censored(&self) -> bool {
        self.seconds.is_none()
    }
}

/// Shortest of `repeats` measurements, each averaging enough calls to last `min_window`.
fn time_per_call<F: FnMut() -> Result<(), HarnessError>>(
    repeats: usize,
    min_window: Duration,
    mut f: F,
) -> Result<f64, HarnessError> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        let mut calls = 0u32;
        while calls == 0 || t0.elapsed() < min_window {
            f()?;
            calls += 1;
        }
        best = best.min(t0.elapsed().as_secs_f64() / calls as f64);
    }
    Ok(best)
}

/// Times the tensor-train and direct evaluation of one integral over the
/// whole window `[−NΔt, NΔt]` for each series order `m` in `orders` and each
/// grid size in `ns`; `m` and `n` pairs listed in `direct` also run the direct
/// quadrature. Writes `bench.csv`.
pub fn benchmark_suite(
    cfg: &RunConfig,
    orders: &[usize],
    ns: &[usize],
    direct: &[(usize, usize)],
    repeats: usize,
) -> Result<Vec<BenchRow>, HarnessError> {
    if orders.iter().any(|m| m % 2 == 0) || orders.is_empty() {
        return Err(HarnessError::Config(format!("orders must be odd and non-empty, got {orders:?}")));
    }
    let max_m = *orders.iter().max().expect("orders non-empty");
    let window = Duration::from_millis(50);
    let mut rows = Vec::new();
    for &n in ns {
        let mut c = cfg.clone();
        c.numerics.steps = n;
        c.numerics.order = max_m;
        c.validate()?;
        let set = bif_set_for(&c)?;
        let bifs = set.at_xi(c.bath.xi)?;
        let grid = c.grid()?;
        let sys = c.system_params();
        let table = solve_propagators(&sys, &bifs, grid, &SolverOptions { max_order: 1, ..c.solver_options() })?;
        let bath = c.bath_params();
        let modes = bath::ohmic_discretize(&bath)?;
        let b = bath::tpc_matrix(&modes, bath.beta, bath.dt, bath.n)?;
        let w = sys.coupling();
        let last = grid.len() - 1;
        for &m in orders {
            let bif = bifs.iter().find(|x| x.order == m + 1).expect("hierarchy covers every order");
            let secs = time_per_call(repeats, window, || {
                eval_integral_tt(&table, bif, &w, 0, last)?;
                Ok(())
            })?;
            rows.push(BenchRow { path: IntegralPath::Tt, n, order: m, seconds: Some(secs) });
            if direct.contains(&(m, n)) {
                let secs = match time_per_call(repeats, window, || {
                    eval_integral_direct(&table, &b, m, &w, 0, last)?;
                    Ok(())
                }) {
                    Ok(s) => Some(s),
                    Err(HarnessError::Inchworm(InchwormError::CostGuard { tuples, .. })) => {
                        warn!("direct path censored at m={m}, N={n} ({tuples} tuples)");
                        None
                    }
                    Err(e) => return Err(e),
                };
                rows.push(BenchRow { path: IntegralPath::Direct, n, order: m, seconds: secs });
            }
        }
    }
    ensure_dir(&cfg.io.out_dir)?;
    let mut csv = String::from("path,n,order,seconds,censored\n");
    for r in &rows {
        let path = match r.path {
            IntegralPath::Tt => "tt",
            IntegralPath::Direct => "direct",
        };
        let secs = r.seconds.map(|s| format!("{s:.6e}")).unwrap_or_default();
        csv.push_str(&format!("{path},{},{},{secs},{}\n", r.n, r.order, r.censored()));
    }
    fs::write(cfg.io.out_dir.join("bench.csv"), csv)?;
    Ok(rows)
}

/// Builds (or refreshes) the cached functionals for `cfg` and exports the
/// correlation factorisation next to them.
pub fn build_bif(cfg: &RunConfig) -> Result<BifSet, HarnessError> {
    cfg.validate()?;
    let set = bif_set_for(cfg)?;
    ensure_dir(&cfg.io.out_dir)?;
    let unit = cfg.bath_params().at_unit_coupling();
    let modes = bath::ohmic_discretize(&unit)?;
    let b = bath::tpc_matrix(&modes, unit.beta, unit.dt, unit.n)?;
    let fact = bath::tpc_factorize(&b, cfg.numerics.svd_threshold)?;
    bath::export_tpc(&fact, &unit, &cfg.io.out_dir, "tpc")?;
    Ok(set)
}

/// Propagator table for one configuration without writing artifacts.
pub fn solve_table(cfg: &RunConfig) -> Result<(PropagatorTable, SystemParams), HarnessError> {
    cfg.validate()?;
    let bifs = bif_set_for(cfg)?.at_xi(cfg.bath.xi)?;
    let sys = cfg.system_params();
    let table = solve_propagators(&sys, &bifs, cfg.grid()?, &cfg.solver_options())?;
    Ok((table, sys))
}

/// Trace on a fresh grid, used by the suites and tests.
pub fn trace_for(cfg: &RunConfig) -> Result<Vec<TracePoint>, HarnessError> {
    let (table, sys) = solve_table(cfg)?;
    Ok(inchworm::observable_trace(&table, &sys.rho))
}
