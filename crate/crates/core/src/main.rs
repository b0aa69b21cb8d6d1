use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dirichlet_topo::experiment::{self, ExperimentConfig, ExperimentError};

#[derive(Parser)]
#[command(
    name = "dirichlet-topo",
    version,
    about = "Multi-material boundary reconstruction by topological derivatives"
)]
struct Cli {
    /// Replaces the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Replaces the configured number of outer iterations.
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization and write history, snapshots and summary.
    Run { config: PathBuf },
    /// Print mesh size and geometry checks.
    MeshInfo { config: PathBuf },
    /// Compare closed-form and finite-difference topological derivatives.
    FdCheck {
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        faces: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(dir) = &cli.output_dir {
        config.output.directory = dir.clone();
    }
    if let Some(n) = cli.max_iter {
        config.optimizer.max_iter = n;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: &Cli) -> Result<(), ExperimentError> {
    match &cli.command {
        Command::Run { config } => {
            let config = load(cli, config)?;
            let dir = config.output.directory.clone();
            let summary = experiment::run(config, &dir)?;
            println!("initial J     {:.16e}", summary.initial_cost);
            println!("final J       {:.16e}", summary.final_cost);
            println!("ratio         {:.6e}", summary.cost_ratio);
            println!("iterations    {} ({} accepted)", summary.iterations, summary.accepted_steps);
            println!("termination   {}", summary.termination);
            println!("mismatch      {:.4}", summary.reference_mismatch_fraction);
            println!("wall time     {:.3} s", summary.wall_time_seconds);
            println!("output        {}", dir.display());
        }
        Command::MeshInfo { config } => {
            let config = load(cli, config)?;
            print!("{}", experiment::mesh_info(&config)?);
        }
        Command::FdCheck { config, faces, seed } => {
            let config = load(cli, config)?;
            let cmp = experiment::fd_check(&config, *faces, *seed)?;
            println!("face  i  j  closed_form  finite_difference  relative_error");
            for s in &cmp.samples {
                println!(
                    "{:5} {:2} {:2}  {:+.6e}  {:+.6e}  {:.3e}",
                    s.face, s.from, s.to, s.closed_form, s.finite_difference, s.relative_error
                );
            }
            println!("sign agreement        {:.4}", cmp.sign_agreement);
            println!("median relative error {:.4e}", cmp.median_relative_error);
            println!("mean relative error   {:.4e}", cmp.mean_relative_error);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
