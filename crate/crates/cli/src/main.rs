mod commands;
mod manifest;
mod parse;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::parse::{parse_axis, parse_dims, parse_triple};

#[derive(Debug, Parser)]
#[command(
    name = "fractfield",
    version,
    about = "Fractional Fourier features and variational deformable registration for 3D volumes",
    arg_required_else_help = true
)]
struct Cli {
    /// Worker threads (falls back to FRACTFIELD_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Separable 3D fractional Fourier transform of a volume.
    Frft(FrftArgs),
    /// Print the branch parameter/FLOP table and the weight shape audit as CSV.
    FcaAudit(FcaAuditArgs),
    /// Register a moving volume onto a fixed one.
    Register(RegisterArgs),
    /// Generate a synthetic pair with known ground truth.
    Synth(SynthArgs),
    /// Evaluate warped labels and a displacement field.
    Eval(EvalArgs),
    /// Write one slice of a volume as an 8-bit PGM image.
    SliceDump(SliceDumpArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct FrftArgs {
    #[arg(long = "in")]
    pub input: String,
    /// Fractional order `p` (angle p * pi / 2).
    #[arg(long, allow_hyphen_values = true)]
    pub order: f64,
    #[arg(long)]
    pub out_mag: String,
    /// Phase angle in radians.
    #[arg(long)]
    pub out_phase: String,
    /// Store log(1 + |X|) instead of |X|.
    #[arg(long)]
    pub log: bool,
}

#[derive(Debug, Args)]
pub struct FcaAuditArgs {
    #[arg(long)]
    pub channels: usize,
    /// Channel coefficient, e.g. `1`, `1/3` or `0.25`.
    #[arg(long)]
    pub alpha: String,
    /// Token grid `DxHxW` for FLOP counts.
    #[arg(long, value_parser = parse_dims)]
    pub grid: Option<[usize; 3]>,
    /// Also write the CSV here (a manifest is written next to it).
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub fixed: String,
    #[arg(long)]
    pub moving: String,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 9)]
    pub cc_window: usize,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    /// Adam step size in voxels.
    #[arg(long, default_value_t = 0.25)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_field: String,
    #[arg(long)]
    pub out_warped: String,
    /// Per-iteration loss trace CSV.
    #[arg(long)]
    pub trace: Option<String>,
    /// Moving labels to warp with the recovered field.
    #[arg(long, requires = "out_warped_labels")]
    pub moving_labels: Option<String>,
    #[arg(long, requires = "moving_labels")]
    pub out_warped_labels: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// translate | scale | swirl
    #[arg(long)]
    pub kind: String,
    #[arg(long, value_parser = parse_dims, default_value = "16x64x64")]
    pub dims: [usize; 3],
    /// `z,y,x` voxels for translate; the factor for scale; radians for swirl.
    #[arg(long, allow_hyphen_values = true)]
    pub magnitude: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Voxel spacing `z,y,x` in millimetres.
    #[arg(long, value_parser = parse_triple, default_value = "1,1,1")]
    pub spacing: [f64; 3],
    #[arg(long)]
    pub out_prefix: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub fixed_labels: String,
    #[arg(long)]
    pub warped_labels: String,
    #[arg(long)]
    pub field: String,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct SliceDumpArgs {
    #[arg(long = "in")]
    pub input: String,
    /// z | y | x (or 0 | 1 | 2)
    #[arg(long, value_parser = parse_axis)]
    pub axis: usize,
    #[arg(long)]
    pub index: usize,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: String,
}

fn init_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("FRACTFIELD_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| anyhow::anyhow!("FRACTFIELD_THREADS=`{v}` is not a thread count"))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n.filter(|&n| n > 0) {
        // A second initialization (replay) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn execute(command: Command, recorded: &[String]) -> anyhow::Result<()> {
    match command {
        Command::Frft(a) => commands::frft(&a, recorded),
        Command::FcaAudit(a) => commands::fca_audit(&a, recorded),
        Command::Register(a) => commands::register(&a, recorded),
        Command::Synth(a) => commands::synth(&a, recorded),
        Command::Eval(a) => commands::eval(&a, recorded),
        Command::SliceDump(a) => commands::slice_dump(&a, recorded),
        Command::Replay(a) => replay(&a),
    }
}

/// Re-runs the recorded argv from the recorded working directory.
fn replay(a: &ReplayArgs) -> anyhow::Result<()> {
    let m = manifest::Manifest::read(&a.manifest)?;
    let argv = m.argv()?;
    if let Some(dir) = m.get("cwd") {
        std::env::set_current_dir(dir)
            .map_err(|e| anyhow::anyhow!("cannot enter recorded directory {dir}: {e}"))?;
    }
    let full = std::iter::once("fractfield".to_string()).chain(argv.iter().cloned());
    let cli = Cli::try_parse_from(full)
        .map_err(|e| anyhow::anyhow!("manifest {} holds an invalid command line: {e}", a.manifest))?;
    if matches!(cli.command, Command::Replay(_)) {
        anyhow::bail!("manifest {} records another replay", a.manifest);
    }
    execute(cli.command, &argv)
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let recorded: Vec<String> = argv[1..]
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match init_threads(cli.threads).and_then(|_| execute(cli.command, &recorded)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
