//! Pipeline driver: optimize, comb, map, project, post — individually or as
//! one run — plus a self-check suite.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure,
//! 4 post-processing non-convergence.

mod validate;

use clap::{Args, Parser, Subcommand};
use dehomo3d::pipeline::{MeshProfile, Pipeline, PipelineConfig};
use dehomo3d::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dehomo3d", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Homogenization-based compliance minimization on the coarse mesh
    Optimize(ConfigArgs),
    /// Comb the optimized frame field into three 1-direction fields
    Comb(ConfigArgs),
    /// Solve the per-layer mapping fields on the intermediate mesh
    Map(ConfigArgs),
    /// Project the implicit geometry onto the fine voxel grid
    Project(ConfigArgs),
    /// Fine-mesh verification and strain-energy cleanup
    Post(ConfigArgs),
    /// All stages in sequence
    Pipeline(ConfigArgs),
    /// Run the built-in property suite
    Validate,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML configuration file; command-line flags override its values
    #[arg(long)]
    config: Option<PathBuf>,

    /// Problem preset: michell_cantilever | torsion_sphere | electrical_mast | l_beam
    #[arg(long)]
    preset: Option<String>,

    /// Coarse mesh dims, e.g. 24x24x72
    #[arg(long, value_parser = parse_dims)]
    coarse_dims: Option<(usize, usize, usize)>,

    /// Maximum volume fraction
    #[arg(long)]
    vmax: Option<f64>,

    /// Average unit-cell spacing in fine-voxel units
    #[arg(long)]
    epsilon: Option<f64>,

    /// Minimum feature size in fine-voxel units (0 disables)
    #[arg(long)]
    fmin: Option<f64>,

    /// Mesh-ratio profile
    #[arg(long, value_parser = parse_profile)]
    profile: Option<MeshProfile>,

    /// Fine-mesh refinement override (per axis, relative to coarse)
    #[arg(long)]
    fine_factor: Option<usize>,

    /// Design iterations per continuation step (8 steps)
    #[arg(long)]
    iterations_per_step: Option<usize>,

    /// Run the post-processing stage at the end of `pipeline`
    #[arg(long)]
    post: bool,

    /// Worker threads (also DEHOMO3D_THREADS); 0 = all cores
    #[arg(long)]
    threads: Option<usize>,

    /// Output directory for stage checkpoints and exports
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<_> = s.split(['x', 'X', ',']).collect();
    if parts.len() != 3 {
        return Err("expected NXxNYxNZ".into());
    }
    let p: Vec<usize> = parts
        .iter()
        .map(|v| v.parse().map_err(|e| format!("{e}")))
        .collect::<Result<_, _>>()?;
    Ok((p[0], p[1], p[2]))
}

fn parse_profile(s: &str) -> Result<MeshProfile, String> {
    match s {
        "paper" => Ok(MeshProfile::Paper),
        "desk" => Ok(MeshProfile::Desk),
        other => Err(format!("unknown profile `{other}` (paper|desk)")),
    }
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(Error::io(format!("read {}", path.display())))?;
                toml::from_str::<PipelineConfig>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.preset {
            cfg.preset = v.clone();
        }
        if let Some(v) = self.coarse_dims {
            cfg.coarse_dims = v;
        }
        if let Some(v) = self.vmax {
            cfg.vmax = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon_hf = v;
        }
        if let Some(v) = self.fmin {
            cfg.fmin_hf = v;
        }
        if let Some(v) = self.profile {
            cfg.profile = v;
        }
        if let Some(v) = self.fine_factor {
            cfg.fine_factor = Some(v);
        }
        if let Some(v) = self.iterations_per_step {
            cfg.iterations_per_step = v;
        }
        if self.post {
            cfg.run_post = true;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        Ok(cfg)
    }

    fn init_threads(&self) {
        let threads = self
            .threads
            .or_else(|| {
                std::env::var("DEHOMO3D_THREADS")
                    .ok()
                    .and_then(|v| v.parse().ok())
            })
            .unwrap_or(0);
        if threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::UnknownPreset(_) | Error::BadFile { .. } | Error::Io { .. } => 2,
        Error::Stage { source, .. } => exit_code_for(source),
        _ => 3,
    }
}

fn run_stage(args: &ConfigArgs, f: impl FnOnce(&Pipeline) -> Result<(), Error>) -> ExitCode {
    args.init_threads();
    let pipeline = match args.build().and_then(Pipeline::new) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    match f(&pipeline) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Optimize(args) => run_stage(&args, |p| p.run_optimize()),
        Command::Comb(args) => run_stage(&args, |p| p.run_comb()),
        Command::Map(args) => run_stage(&args, |p| p.run_map()),
        Command::Project(args) => run_stage(&args, |p| p.run_project()),
        Command::Post(args) => {
            args.init_threads();
            let pipeline = match args.build().and_then(Pipeline::new) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("configuration error: {e}");
                    return ExitCode::from(2);
                }
            };
            match pipeline.run_post() {
                Ok(report) if report.converged => ExitCode::SUCCESS,
                Ok(_) => {
                    eprintln!("post-processing did not converge within the iteration cap");
                    ExitCode::from(4)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code_for(&e))
                }
            }
        }
        Command::Pipeline(args) => run_stage(&args, |p| {
            let metrics = p.run_all()?;
            println!(
                "{}",
                serde_json::to_string_pretty(&metrics).expect("metrics serialize")
            );
            Ok(())
        }),
        Command::Validate => {
            if validate::run_all() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
    }
}
