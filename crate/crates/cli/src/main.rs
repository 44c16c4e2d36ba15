//! Batch harness for the ionwave laboratory: amplitude sweeps, solver runs,
//! identity suites, and table dumps, all driven by one TOML config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use ionwave_core::euler_poisson::{solve_poisson_logged, EPParams, FluidState};
use ionwave_core::grid::{Field1D, SpatialGrid};
use ionwave_core::kdv::find_sound_speed;
use ionwave_core::landau::SigmaTable;
use ionwave_core::study::{
    self, run_convergence_study, run_expansion_check, run_kdv_trajectory, run_kinetic_check,
    StudyConfig,
};

#[derive(Parser)]
#[command(name = "ionwave", version, about = "long-wave ion dynamics laboratory")]
struct Cli {
    /// Path to the study config (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's output_dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for amplitude sweeps
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Enforce the amplitude-collisionality window
    #[arg(long, global = true, default_value_t = false)]
    strict_window: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the KdV hierarchy and write rho1 (and rho2) trajectories
    KdvRun,
    /// Integrate the Euler-Poisson system from expansion initial data
    EpRun,
    /// Remainder-bound sweep and background-identity audit
    ExpansionCheck {
        /// Sweep every configured delta (default: first delta only)
        #[arg(long, default_value_t = false)]
        delta_sweep: bool,
    },
    /// Amplitude convergence study against the KdV expansion
    Converge,
    /// Projection and identity suites on the velocity-space toolkit
    KineticCheck,
    /// Dump the collision-frequency radial profiles
    SigmaTable,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    match run(&cli) {
        Ok(pass) => {
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<(StudyConfig, String), Box<dyn std::error::Error>> {
    let path = cli
        .config
        .as_ref()
        .ok_or("this subcommand needs --config <path>")?;
    let (cfg, hash) = StudyConfig::from_file(path)?;
    Ok((cfg, hash))
}

fn out_dir(cli: &Cli, cfg: Option<&StudyConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn ensure_dir(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)
}

fn run(cli: &Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match &cli.command {
        Command::KdvRun => {
            let (cfg, _) = load_config(cli)?;
            let dir = out_dir(cli, Some(&cfg));
            ensure_dir(&dir)?;
            let grid = SpatialGrid::new(cfg.grid.n, cfg.grid.length)?;
            let refs = run_kdv_trajectory(&cfg)?;
            let rho1: Vec<Field1D> = refs.profiles.iter().map(|p| p.rho1.clone()).collect();
            study::write_trajectory_csv(&dir.join("rho1.csv"), &refs.times, &rho1, &grid)?;
            if cfg.second_order {
                let rho2: Vec<Field1D> = refs.profiles.iter().map(|p| p.rho2.clone()).collect();
                study::write_trajectory_csv(&dir.join("rho2.csv"), &refs.times, &rho2, &grid)?;
            }
            info!("wrote {} snapshots to {}", refs.times.len(), dir.display());
            Ok(true)
        }
        Command::EpRun => {
            let (cfg, _) = load_config(cli)?;
            let dir = out_dir(cli, Some(&cfg));
            ensure_dir(&dir)?;
            let delta = cfg.deltas[0];
            let a = find_sound_speed()?;
            let grid = SpatialGrid::new(cfg.grid.n, cfg.grid.length)?;
            let params = EPParams::new(delta, a, cfg.tolerances.poisson, 1.0)?;
            let refs = run_kdv_trajectory(&cfg)?;
            let p0 = &refs.profiles[0];
            let d2 = if cfg.second_order { delta * delta } else { 0.0 };
            let r = p0
                .rho1
                .zip_with(&p0.rho2, |r1, r2| 1.0 + delta * r1 + d2 * r2);
            let u = p0.u1_1.axpy(delta, &p0.u1_2, d2);
            let theta = p0
                .theta1
                .zip_with(&p0.theta2, |t1, t2| 1.5 * (1.0 + delta * t1 + d2 * t2));
            let solve = solve_poisson_logged(&r, &params, &p0.phi1.scale(delta), &grid)?;
            info!(
                "initial Poisson solve: {} Newton steps, residuals {:?}",
                solve.residuals.len() - 1,
                solve
                    .residuals
                    .iter()
                    .map(|r| format!("{r:.2e}"))
                    .collect::<Vec<_>>()
            );
            let initial = FluidState {
                r,
                u,
                theta,
                pi: solve.pi,
                time: 0.0,
            };
            let traj = ionwave_core::euler_poisson::ep_solve(
                &initial,
                &params,
                &grid,
                cfg.t_final,
                &cfg.output_times,
                cfg.filter_policy()?,
            )?;
            study::write_fluid_csv(&dir.join("R.csv"), &cfg.output_times, &traj.states, |s| &s.r, &grid)?;
            study::write_fluid_csv(&dir.join("U.csv"), &cfg.output_times, &traj.states, |s| &s.u, &grid)?;
            study::write_fluid_csv(
                &dir.join("Theta.csv"),
                &cfg.output_times,
                &traj.states,
                |s| &s.theta,
                &grid,
            )?;
            study::write_fluid_csv(&dir.join("Pi.csv"), &cfg.output_times, &traj.states, |s| &s.pi, &grid)?;
            if traj.filter.active {
                info!(
                    "spectral filter active, dissipated int R^2 = {:.3e}",
                    traj.filter.r2_dissipated
                );
            }
            info!("delta = {delta}: wrote R/U/Theta/Pi to {}", dir.display());
            Ok(true)
        }
        Command::ExpansionCheck { delta_sweep } => {
            let (mut cfg, _) = load_config(cli)?;
            if !delta_sweep {
                cfg.deltas.truncate(1);
            }
            let dir = out_dir(cli, Some(&cfg));
            ensure_dir(&dir)?;
            let report = run_expansion_check(&cfg)?;
            study::write_json(&dir.join("remainders.json"), &report)?;
            for rec in &report.table.records {
                println!(
                    "delta = {:>7.4}: H{} norms R1..R4 = {:.4e} {:.4e} {:.4e} {:.4e}",
                    rec.delta, rec.k, rec.norms[0], rec.norms[1], rec.norms[2], rec.norms[3]
                );
            }
            println!(
                "remainder uniformity: {}",
                if report.table.pass { "PASS" } else { "FAIL" }
            );
            println!(
                "background identities: {}",
                if report.background_pass {
                    "PASS"
                } else {
                    "FAIL"
                }
            );
            println!(
                "compensated tail vs analytic limit: {} (rel err {:.2e})",
                if report.taylor.pass { "PASS" } else { "FAIL" },
                report.taylor.rel_err
            );
            Ok(report.pass)
        }
        Command::Converge => {
            let (cfg, hash) = load_config(cli)?;
            let dir = out_dir(cli, Some(&cfg));
            ensure_dir(&dir)?;
            let report = run_convergence_study(&cfg, &hash)?;
            study::write_json(&dir.join("report.json"), &report)?;
            for res in &report.resolutions {
                if let Some(orders) = &res.orders {
                    println!(
                        "n = {}: L2 orders R {:.3} U {:.3} Theta {:.3} Pi {:.3} -> {}",
                        res.n,
                        orders.r.l2.slope,
                        orders.u.l2.slope,
                        orders.theta.l2.slope,
                        orders.pi.l2.slope,
                        if res.pass { "PASS" } else { "FAIL" }
                    );
                } else {
                    println!(
                        "n = {}: {}",
                        res.n,
                        if res.trivially_converged {
                            "trivially converged"
                        } else {
                            "no order fit (need 3+ deltas)"
                        }
                    );
                }
            }
            println!("report: {}", dir.join("report.json").display());
            Ok(report.pass)
        }
        Command::KineticCheck => {
            let (cfg, _) = load_config(cli)?;
            let dir = out_dir(cli, Some(&cfg));
            ensure_dir(&dir)?;
            let report = run_kinetic_check(&cfg.kinetic, cfg.deltas[0], cli.strict_window)?;
            study::write_json(&dir.join("kinetic_report.json"), &report)?;
            for c in &report.checks {
                println!(
                    "{:<36} {:>12.4e} (<= {:.1e}) {}",
                    c.name,
                    c.value,
                    c.threshold,
                    if c.pass { "PASS" } else { "FAIL" }
                );
            }
            Ok(report.pass)
        }
        Command::SigmaTable => {
            let dir = out_dir(cli, None);
            ensure_dir(&dir)?;
            let table = SigmaTable::build()?;
            let rows = table.rows();
            study::write_sigma_csv(&dir.join("sigma_table.csv"), &rows)?;
            info!(
                "wrote {} rows to {}",
                rows.len(),
                dir.join("sigma_table.csv").display()
            );
            Ok(true)
        }
    }
}
