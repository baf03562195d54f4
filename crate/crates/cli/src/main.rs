use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use pwlab::run::VERIFY_TOL;
use pwlab::scenario::parse_list;
use pwlab::{parse_mesh, parse_scenario, run_scenario};
use pwlab_core::flow::{verify_dissipation_identity, verify_mass_identity, Trajectory};
use pwlab_core::nehari::{DepthTable, SolverConfig};
use pwlab_core::Mesh;

#[derive(Parser)]
#[command(name = "pwlab", version, about = "Potential-well experiments for u_t - Δu = |u|^{p-1}u")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task of a scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute d_lambda and d_delta and write depths.csv.
    Depths {
        #[arg(long)]
        p: f64,
        /// Comma-separated list.
        #[arg(long, default_value = "0")]
        lambda: String,
        /// Comma-separated list.
        #[arg(long, default_value = "0")]
        delta: String,
        /// a:b:n per axis joined by x, e.g. 0:pi:1023.
        #[arg(long)]
        mesh: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check the mass and dissipation identities of a trajectory file.
    Verify {
        trajectory: PathBuf,
        /// Relative residual tolerance.
        #[arg(long, default_value_t = VERIFY_TOL)]
        tol: f64,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn real_main() -> Result<u8> {
    match Cli::parse().command {
        Command::Run {
            scenario,
            out,
            jobs,
            seed,
        } => {
            let text = std::fs::read_to_string(&scenario)
                .with_context(|| format!("reading {}", scenario.display()))?;
            let base = scenario.parent().unwrap_or(Path::new("."));
            let mut s = parse_scenario(&text, base)
                .with_context(|| format!("parsing {}", scenario.display()))?;
            if let Some(seed) = seed {
                s.solver.seed = seed;
            }
            let summary = run_scenario(&s, &out, jobs)?;
            print!("{}", summary.render());
            println!("wrote {}", summary.out_path.display());
            Ok(summary.exit_code() as u8)
        }
        Command::Depths {
            p,
            lambda,
            delta,
            mesh,
            out,
        } => {
            let mesh = parse_mesh(&mesh).map_err(anyhow::Error::msg)?;
            let lambdas = parse_list(&lambda).map_err(anyhow::Error::msg)?;
            let deltas = parse_list(&delta).map_err(anyhow::Error::msg)?;
            let table = DepthTable::compute(&mesh, p, &lambdas, &deltas, &SolverConfig::default())?;
            std::fs::create_dir_all(&out)?;
            let tmp = out.join(format!(".depths.csv.{}", std::process::id()));
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            std::fs::write(&tmp, &buf)?;
            std::fs::rename(&tmp, out.join("depths.csv"))?;
            print!("{}", String::from_utf8_lossy(&buf));
            Ok(0)
        }
        Command::Verify { trajectory, tol } => {
            let file = std::fs::File::open(&trajectory)
                .with_context(|| format!("opening {}", trajectory.display()))?;
            // the identities do not involve the mesh
            let mesh = Mesh::interval(0.0, 1.0, 3)?;
            let traj = Trajectory::read_csv(&mesh, file)?;
            if traj.len() < 3 {
                bail!("trajectory has {} rows, need at least 3", traj.len());
            }
            let params = traj.config.params;
            let mass = verify_mass_identity(&traj)?;
            let diss = verify_dissipation_identity(&traj, params.lambda)?;
            let mass_ok = mass.relative() <= tol;
            let diss_ok = diss.residual.relative() <= tol;
            println!(
                "inferred p = {:.6}, lambda = {:.6}, delta = {:.6}",
                params.p, params.lambda, params.delta
            );
            println!(
                "mass identity:        max {:.3e}  median {:.3e}  relative {:.3e}  {}",
                mass.max_abs,
                mass.median_abs,
                mass.relative(),
                if mass_ok { "PASS" } else { "FAIL" }
            );
            println!(
                "dissipation identity: max {:.3e}  median {:.3e}  relative {:.3e}  {}",
                diss.residual.max_abs,
                diss.residual.median_abs,
                diss.residual.relative(),
                if diss_ok { "PASS" } else { "FAIL" }
            );
            println!(
                "energy monotone while I > 0: {} ({} of {} pairs violate)",
                if diss.monotone_while_positive() { "PASS" } else { "FAIL" },
                diss.monotone_violations,
                diss.positive_pairs
            );
            Ok(if mass_ok && diss_ok && diss.monotone_while_positive() { 0 } else { 2 })
        }
    }
}
