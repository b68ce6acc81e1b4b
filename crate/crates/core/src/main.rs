use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use biftt::harness::{self, HarnessError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "biftt", version, about = "Inchworm spin-boson dynamics with tensor-train bath influence functionals")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; defaults are used for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Influence-functional cache directory.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Cap every bond of the influence functionals at R.
    #[arg(long, global = true, conflicts_with = "round_tol")]
    max_bond: Option<usize>,
    /// Relative rounding tolerance for the influence functionals (0 = exact).
    #[arg(long, global = true)]
    round_tol: Option<f64>,
    /// Series cap M (odd).
    #[arg(long, global = true)]
    order: Option<usize>,
    /// Grid half-size N.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Time step.
    #[arg(long, global = true)]
    dt: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one configuration and write trace.csv, run.json and timing.json.
    Run,
    /// Observed convergence order for (xi, M) cells over three halving step sizes.
    Converge {
        /// Cells as xi:M pairs.
        #[arg(long, value_delimiter = ',', default_value = "0.2:1,0.2:3,0.4:3")]
        cells: Vec<String>,
        /// Step sizes, coarse to fine.
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1")]
        dts: Vec<f64>,
        #[arg(long, default_value_t = 4.0)]
        t_final: f64,
    },
    /// Per-integral timing of the tensor-train and direct quadratures.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,7")]
        orders: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "10,20")]
        ns: Vec<usize>,
        /// Run the direct quadrature for grids up to this N.
        #[arg(long, default_value_t = 10)]
        direct_max_n: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Run with transfer tensors learned on the solved grid.
    Ttm {
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Build the cached influence functionals and export the correlation factors.
    BuildBif,
}

fn load_config(c: &Common) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &c.out {
        cfg.io.out_dir = o.clone();
    }
    if let Some(d) = &c.cache {
        cfg.io.cache_dir = Some(d.clone());
    }
    if let Some(r) = c.max_bond {
        cfg.numerics.max_bond = Some(r);
        cfg.numerics.round_tol = None;
    }
    if let Some(eta) = c.round_tol {
        cfg.numerics.round_tol = Some(eta);
        cfg.numerics.max_bond = None;
    }
    if let Some(m) = c.order {
        cfg.numerics.order = m;
    }
    if let Some(n) = c.steps {
        cfg.numerics.steps = n;
    }
    if let Some(dt) = c.dt {
        cfg.numerics.dt = dt;
    }
    Ok(cfg)
}

fn parse_cells(cells: &[String]) -> Result<Vec<(f64, usize)>, HarnessError> {
    cells
        .iter()
        .map(|s| {
            let (xi, m) = s
                .split_once(':')
                .ok_or_else(|| HarnessError::Config(format!("cell '{s}' is not of the form xi:M")))?;
            let xi = xi.trim().parse::<f64>().map_err(|e| HarnessError::Config(format!("cell '{s}': {e}")))?;
            let m = m.trim().parse::<usize>().map_err(|e| HarnessError::Config(format!("cell '{s}': {e}")))?;
            Ok((xi, m))
        })
        .collect()
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    if let Some(k) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("cannot set thread count: {e}")))?;
    }
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Run => {
            let rep = harness::run(&cfg)?;
            let last = rep.trace.last().expect("trace has at least the initial point");
            println!("t = {:.6}: <O> = {:.12e} {:+.3e}i", last.t, last.value.re, last.value.im);
            println!("artifacts in {}", rep.out_dir.display());
        }
        Command::Converge { cells, dts, t_final } => {
            let cells = parse_cells(&cells)?;
            let dts: [f64; 3] = dts
                .try_into()
                .map_err(|d: Vec<f64>| HarnessError::Config(format!("need exactly three step sizes, got {}", d.len())))?;
            cfg.validate()?;
            for r in harness::convergence_suite(&cfg, &cells, dts, t_final)? {
                println!("xi={} M={} p={:.4}", r.xi, r.order, r.p);
            }
        }
        Command::Bench { orders, ns, direct_max_n, repeats } => {
            cfg.validate()?;
            let direct: Vec<(usize, usize)> =
                ns.iter().filter(|&&n| n <= direct_max_n).flat_map(|&n| orders.iter().map(move |&m| (m, n))).collect();
            for r in harness::benchmark_suite(&cfg, &orders, &ns, &direct, repeats)? {
                let secs = r.seconds.map(|s| format!("{s:.3e}s")).unwrap_or_else(|| "censored".into());
                println!("{:?} N={} m={} {secs}", r.path, r.n, r.order);
            }
        }
        Command::Ttm { k_max, horizon } => {
            cfg.ttm.enabled = true;
            if let Some(k) = k_max {
                cfg.ttm.k_max = k;
            }
            if let Some(h) = horizon {
                cfg.ttm.horizon = h;
            }
            let rep = harness::run(&cfg)?;
            let tr = rep.ttm_trace.expect("transfer tensors enabled");
            let last = tr.last().expect("propagated at least one step");
            println!("t = {:.6}: <O> = {:.12e} (transfer tensors)", last.t, last.value.re);
            println!("artifacts in {}", rep.out_dir.display());
        }
        Command::BuildBif => {
            let set = harness::build_bif(&cfg)?;
            println!("cache key {}{}", set.key, if set.cache_hit { " (already cached)" } else { "" });
            for b in &set.bifs {
                println!("{}-argument functional bonds {:?}", b.order, b.tt.bond_dims());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
