use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use homdp::casestudy::{
    cmd_classicvi_run, cmd_compare, cmd_homvi_run, cmd_query, cmd_riccati, cmd_scale_demo,
    cmd_verify, CaseStudy, RunConfig,
};
use homdp::dilation::InputSequence;

/// Homogeneous value iteration for the extended van der Pol case study.
#[derive(Debug, Parser)]
#[command(name = "homdp", version)]
struct Cli {
    /// Run configuration (TOML). Built-in desk-scale defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Homogeneity and scaling-identity checks; exits nonzero on any failure.
    Verify,
    /// Homogeneous value iteration on the sphere grid.
    Homvi {
        #[command(subcommand)]
        action: RunAction,
    },
    /// Classical value iteration on the rectangular grid.
    Classicvi {
        #[command(subcommand)]
        action: RunAction,
    },
    /// Error surface between the classical value and the envelope.
    Compare,
    /// Envelope bounds at one state, read from the tables of `homvi run`.
    Query {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        state: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        iter: usize,
    },
    /// Weighted-cost identity on a supplied sequence and on the exhaustive optimum.
    ScaleDemo {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        state: Vec<f64>,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        horizon: usize,
        /// Inputs flattened step by step; zeros when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        inputs: Option<Vec<f64>>,
        /// Values per input dimension in the exhaustive search.
        #[arg(long, default_value_t = 5)]
        grid_count: usize,
    },
    /// LQ cost matrix of the linearisation and its distance to the configured P.
    Riccati,
}

#[derive(Debug, Subcommand)]
enum RunAction {
    Run,
}

fn load(cli: &Cli) -> Result<CaseStudy> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    Ok(CaseStudy::new(config)?)
}

fn run(cli: Cli) -> Result<bool> {
    let cs = load(&cli)?;
    let out = cs.config.output.dir.clone();
    match cli.command {
        Command::Verify => {
            let rep = cmd_verify(&cs)?;
            print!("{rep}");
            return Ok(rep.passed());
        }
        Command::Homvi { action: RunAction::Run } => {
            let run = cmd_homvi_run(&cs, &out)?;
            for s in &run.stats {
                println!(
                    "sweep {}: {:.2?}, lower [{:.6e}, {:.6e}], upper [{:.6e}, {:.6e}]",
                    s.iteration, s.elapsed, s.min_lower, s.max_lower, s.min_upper, s.max_upper
                );
            }
            println!("wrote {} files to {}", run.files.len(), out.display());
        }
        Command::Classicvi { action: RunAction::Run } => {
            let run = cmd_classicvi_run(&cs, &out)?;
            for t in run.tables.iter().skip(1) {
                println!(
                    "sweep {}: {:.2}% of successors left the grid",
                    t.iteration,
                    100.0 * t.out_of_domain_fraction
                );
            }
            println!("wrote {} files to {}", run.files.len(), out.display());
        }
        Command::Compare => {
            let cmp = cmd_compare(&cs, &out)?;
            print!("{}", cmp.summary);
            println!("wrote {}", cmp.files[0].display());
        }
        Command::Query { state, iter } => {
            print!("{}", cmd_query(&cs, &out, &state, iter)?);
        }
        Command::ScaleDemo {
            state,
            eps,
            horizon,
            inputs,
            grid_count,
        } => {
            let supplied = match inputs {
                Some(flat) => {
                    let m = cs.system.input_dim();
                    if flat.len() != m * horizon {
                        bail!("--inputs needs {} values ({horizon} steps of {m})", m * horizon);
                    }
                    Some(InputSequence::new(flat.chunks(m).map(<[f64]>::to_vec).collect())?)
                }
                None => None,
            };
            let demo = cmd_scale_demo(&cs, &state, eps, horizon, supplied, grid_count)
                .context("scale demo")?;
            print!("{demo}");
            return Ok(demo.identity.residual <= 1e-9 && demo.optimal.residual <= 1e-9);
        }
        Command::Riccati => {
            print!("{}", cmd_riccati(&cs)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
