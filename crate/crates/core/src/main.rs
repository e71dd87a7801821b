//! Command-line front end: run simulations, dump Jacobian blocks, and
//! benchmark decoupling patterns on the first Newton system.

use bcpr_sim::bcpr::Bcpr;
use bcpr_sim::config::{parse_config, RunConfig};
use bcpr_sim::disc::assemble_system;
use bcpr_sim::io::{dump_jacobian_mm, write_fields_vtk, write_metrics_csv};
use bcpr_sim::linalg::gmres;
use bcpr_sim::sim::{initial_state, timestep_driver};
use bcpr_sim::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "bcpr-sim",
    version,
    about = "Fully implicit two-phase flow simulator with a block CPR preconditioner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    output: PathBuf,
    /// Decoupling pattern override: Orig, A..F, or dynamic.
    #[arg(long)]
    pattern: Option<String>,
    /// Gravity override.
    #[arg(long)]
    gravity: Option<bool>,
    /// Single-threaded, fixed-order execution.
    #[arg(long)]
    deterministic: bool,
    /// Worker thread count (defaults to the core count).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write metrics and field output.
    Run(Common),
    /// Assemble the first Newton system and dump its nine blocks.
    DumpMatrices(Common),
    /// Build and apply the preconditioner on the first Newton system for a
    /// set of patterns, reporting iteration counts and Schur fill.
    PrecondBench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated pattern list.
        #[arg(long, default_value = "Orig,A,B,C,D,E,F")]
        patterns: String,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut config = parse_config(&common.config)?;
    if let Some(p) = &common.pattern {
        config.solver.pattern = p.clone();
        config.pattern_spec()?;
    }
    if let Some(g) = common.gravity {
        config.run.gravity = g;
    }
    let threads = if common.deterministic { Some(1) } else { common.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool setup failed: {e}")))?;
    }
    std::fs::create_dir_all(&common.output)?;
    // Echo the effective configuration so the run is reproducible from the
    // output directory alone.
    let echoed = toml::to_string_pretty(&config)
        .map_err(|e| Error::Config(format!("config echo failed: {e}")))?;
    std::fs::write(common.output.join("config.toml"), echoed)?;
    Ok(config)
}

fn cmd_run(common: &Common) -> Result<()> {
    let config = load(common)?;
    let scenario = config.build_scenario()?;
    log::info!(
        "running {}x{}x{} cells, pattern {}, gravity {}",
        config.grid.nx,
        config.grid.ny,
        config.grid.nz,
        config.solver.pattern,
        config.run.gravity
    );
    let t0 = Instant::now();
    let (state, metrics) = timestep_driver(&scenario)?;
    let elapsed = t0.elapsed().as_secs_f64();
    write_metrics_csv(&metrics, &common.output.join("metrics.csv"))?;
    write_fields_vtk(&scenario.model.mesh, &state, &common.output.join("fields.vtk"))?;
    println!(
        "completed {} steps to t = {:.3} d in {elapsed:.2} s: {} Newton, {} GMRES \
         (mean {:.1}/system), max CFL {:.2}",
        metrics.steps.len(),
        state.time,
        metrics.total_newton(),
        metrics.total_linear(),
        metrics.mean_linear(),
        metrics.max_cfl()
    );
    Ok(())
}

fn first_system(
    config: &RunConfig,
) -> Result<(bcpr_sim::sim::Scenario, bcpr_sim::physics::State, bcpr_sim::disc::BlockJacobian, Vec<f64>)> {
    let scenario = config.build_scenario()?;
    let state = initial_state(&scenario.model, scenario.p_init, scenario.sw_init)?;
    let (res, jac) = assemble_system(&scenario.model, &state, &state, scenario.schedule.dt_init)?;
    let rhs: Vec<f64> = res.stacked().iter().map(|&v| -v).collect();
    Ok((scenario, state, jac, rhs))
}

fn cmd_dump(common: &Common) -> Result<()> {
    let config = load(common)?;
    let (_, _, jac, _) = first_system(&config)?;
    dump_jacobian_mm(&jac, &common.output.join("system"))?;
    println!(
        "dumped nine blocks (n_f = {}, n_e = {}, n_w = {}) under {}",
        jac.n_f,
        jac.n_e,
        jac.n_w,
        common.output.display()
    );
    Ok(())
}

fn cmd_bench(common: &Common, patterns: &str) -> Result<()> {
    let mut config = load(common)?;
    let (scenario, _, jac, rhs) = first_system(&config)?;
    let settings = config.newton_settings()?;
    let mut report = String::from("pattern,n_linear,converged,r_s,nnz_schur,t_p_s,t_s_s\n");
    for name in patterns.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        config.solver.pattern = name.to_string();
        let spec = config.pattern_spec()?;
        let tp0 = Instant::now();
        let pre = Bcpr::build(&jac, &scenario.model.mesh, &spec, settings.bcpr.clone())?;
        let t_p = tp0.elapsed().as_secs_f64();
        let ts0 = Instant::now();
        let sol = gmres(
            |x| pre.full_matrix().spmv(x),
            &rhs,
            |w| pre.apply(w).expect("preconditioner application failed"),
            settings.tau_l,
            settings.gmres_maxit,
        )?;
        let t_s = ts0.elapsed().as_secs_f64();
        println!(
            "{name:>7}: {:3} iterations (converged {}), R_S = {:.3}, build {t_p:.3} s, solve {t_s:.3} s",
            sol.iterations,
            sol.converged,
            pre.stats().r_s
        );
        report.push_str(&format!(
            "{name},{},{},{},{},{t_p},{t_s}\n",
            sol.iterations,
            sol.converged,
            pre.stats().r_s,
            pre.stats().nnz_schur
        ));
    }
    std::fs::write(common.output.join("precond_bench.csv"), report)?;
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("BCPR_LOG")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::DumpMatrices(c) => cmd_dump(c),
        Command::PrecondBench { common, patterns } => cmd_bench(common, patterns),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
