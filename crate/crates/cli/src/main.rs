use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use loopgas::mc::Exec;
use loopgas_cli::config::{Experiment, ExperimentConfig};
use loopgas_cli::error::{CliError, Result};
use loopgas_cli::experiments::*;
use loopgas_cli::selftest::run_selftest;

#[derive(Parser)]
#[command(name = "loopgas", version, about = "Loop-gas experiments: oracles, Monte Carlo and sweeps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the invariant suite of every module
    Selftest(Common),
    /// Mean-field convergence sweep over ν
    Meanfield(Common),
    /// Large-mass convergence sweep over ν
    Largemass(Common),
    /// Finite-volume stability sweep over L
    Volume(Common),
    /// Heat-kernel identities
    Heatkernel(Common),
    /// Cluster expansion of log 𝒵
    ClusterLogz(Common),
    /// Ginibre loop ensemble against the quantum oracle
    GinibreZ(Common),
    /// Symanzik loop ensemble against the classical field
    SymanzikZ(Common),
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV files
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sample chunks; results are reproducible for a fixed value
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn load(args: &Common, e: Experiment) -> Result<ExperimentConfig> {
    let cfg = match (&args.config, e) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Experiment::Selftest) => ExperimentConfig::selftest_default(),
        (None, _) => return Err(CliError::Config("--config is required".into())),
    };
    cfg.expect(e)?;
    Ok(cfg)
}

fn out_dir(args: &Common, cfg: &ExperimentConfig) -> PathBuf {
    args.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn print_log(log: &[String]) {
    for l in log {
        eprintln!("{l}");
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn run(cmd: Cmd) -> Result<bool> {
    let (args, e) = match &cmd {
        Cmd::Selftest(a) => (a, Experiment::Selftest),
        Cmd::Meanfield(a) => (a, Experiment::Meanfield),
        Cmd::Largemass(a) => (a, Experiment::Largemass),
        Cmd::Volume(a) => (a, Experiment::Volume),
        Cmd::Heatkernel(a) => (a, Experiment::Heatkernel),
        Cmd::ClusterLogz(a) => (a, Experiment::ClusterLogz),
        Cmd::GinibreZ(a) => (a, Experiment::GinibreZ),
        Cmd::SymanzikZ(a) => (a, Experiment::SymanzikZ),
    };
    let cfg = load(args, e)?;
    let seed = cfg.seed_or(args.seed);
    let exec = Exec::new(args.workers);
    let dir = out_dir(args, &cfg);
    match e {
        Experiment::Selftest => {
            let r = run_selftest(&cfg, seed, &exec)?;
            print!("{}", r.render());
            Ok(r.pass())
        }
        Experiment::Meanfield => {
            let r = run_meanfield(&cfg, seed, &exec)?;
            print_log(&r.log);
            r.write(&dir)?;
            for f in &r.fits {
                println!("{}: order {:.3} (R² {:.4}, {} points)", f.quantity, f.slope, f.r_squared, f.n_points);
            }
            Ok(true)
        }
        Experiment::Largemass => {
            let r = run_largemass(&cfg, seed, &exec)?;
            print_log(&r.log);
            r.write(&dir)?;
            for f in &r.fits {
                println!("{}: order {:.3} (R² {:.4}, {} points)", f.quantity, f.slope, f.r_squared, f.n_points);
            }
            Ok(true)
        }
        Experiment::Volume => {
            let r = run_volume(&cfg, seed, &exec)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            print_log(&r.log);
            r.write(&dir)?;
            println!("Cauchy decrease: {}", verdict(r.pass()));
            Ok(r.pass())
        }
        Experiment::Heatkernel => {
            let r = run_heatkernel(&cfg)?;
            r.write(&dir)?;
            println!("heat kernel suite: {}", verdict(r.pass()));
            Ok(r.pass())
        }
        Experiment::ClusterLogz => {
            let r = run_cluster_logz(&cfg, seed, &exec)?;
            print_log(&r.log);
            r.write(&dir)?;
            for s in &r.summary {
                println!(
                    "nu={}: log 𝒵 = {:.7} ± {:.1e} (remainder {:.1e}); 𝒵 oracle {:.7}",
                    s.nu, s.log_z, s.log_z_err, s.remainder, s.z_oracle
                );
            }
            Ok(true)
        }
        Experiment::GinibreZ => {
            let r = run_ginibre_z(&cfg, seed, &exec)?;
            print_log(&r.log);
            r.write(&dir)?;
            for row in &r.rows {
                println!("nu={} {}: {:.6} ± {:.1e} vs oracle {:.6}", row.nu, row.quantity, row.estimate, row.std_error, row.oracle);
            }
            Ok(true)
        }
        Experiment::SymanzikZ => {
            let r = run_symanzik_z(&cfg, seed, &exec)?;
            print_log(&r.log);
            r.write(&dir)?;
            for row in &r.rows {
                println!("eps={}: {:.5} ± {:.1e} vs field {:.5} ({:.1}σ)", row.eps, row.z_eps, row.z_eps_err, row.z_field, row.sigmas);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
