mod commands;
mod flags;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flags::ConfigFlags;

#[derive(Parser, Debug)]
#[command(name = "plume", version, about = "Transport-based stylization of smoke density volumes")]
struct Cli {
    /// Worker threads (default: all cores). `--threads 1` is bit-reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct ModelArgs {
    /// NSTW weight file; random orthogonal weights seeded by `--seed` if absent
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    /// Style image (PNG or PGM)
    #[arg(long, value_name = "FILE")]
    style: Option<PathBuf>,
    /// Content image whose activations become the content targets
    #[arg(long, value_name = "FILE")]
    content: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stylize a single density volume
    StylizeFrame {
        #[arg(long, value_name = "FILE")]
        density: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// PGM sample depth
        #[arg(long, default_value_t = 8)]
        bits: u8,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Stylize a density sequence coherently in time
    StylizeSeq {
        /// Directory of frame_NNNN.vf32 densities
        #[arg(long, value_name = "DIR")]
        density_dir: PathBuf,
        /// Directory of frame_NNNN.vf32 simulation velocities
        #[arg(long, value_name = "DIR")]
        velocity_dir: PathBuf,
        /// Time step of the simulation velocities
        #[arg(long, default_value_t = 1.0)]
        sim_dt: f64,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also run with window 0 and write both flicker metrics
        #[arg(long)]
        compare_window: bool,
        #[arg(long, default_value_t = 8)]
        bits: u8,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Render a density volume to a PGM image
    Render {
        #[arg(long, value_name = "FILE")]
        density: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta1: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta2: f64,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        /// Scale intensities so the brightest pixel is white
        #[arg(long)]
        normalize: bool,
        #[arg(long, default_value_t = 8)]
        bits: u8,
    },
    /// Derive the soft edit mask of a density volume
    MakeMask {
        #[arg(long, value_name = "FILE")]
        density: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        /// Gaussian blur in cells
        #[arg(long, default_value_t = 2.0)]
        blur: f64,
    },
    /// Finite-difference check of all analytic gradients
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds to check
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = plume::gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Corrupt one component's analytic gradient (self-test of the checker)
        #[arg(long, hide = true, value_name = "COMPONENT")]
        corrupt: Option<String>,
    },
    /// Print VF32 or NSTW headers
    Info {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing input; exit code 2.
    Input(String),
    /// A check ran and failed; exit code 1.
    Check(String),
}

impl From<plume::Error> for CliError {
    fn from(e: plume::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::StylizeFrame {
            density,
            model,
            out,
            bits,
            config,
        } => commands::stylize_frame(&density, &model, &out, bits, &config),
        Command::StylizeSeq {
            density_dir,
            velocity_dir,
            sim_dt,
            model,
            out,
            compare_window,
            bits,
            config,
        } => commands::stylize_seq(&commands::SeqInputs {
            density_dir,
            velocity_dir,
            sim_dt,
            model,
            out,
            compare_window,
            bits,
            config,
        }),
        Command::Render {
            density,
            out,
            theta1,
            theta2,
            gamma,
            normalize,
            bits,
        } => commands::render(&density, &out, theta1, theta2, gamma, normalize, bits),
        Command::MakeMask {
            density,
            out,
            threshold,
            blur,
        } => commands::make_mask(&density, &out, threshold, blur),
        Command::Gradcheck {
            seed,
            seeds,
            tolerance,
            corrupt,
        } => commands::gradcheck(seed, seeds, tolerance, corrupt.as_deref()),
        Command::Info { files } => commands::info(&files),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
