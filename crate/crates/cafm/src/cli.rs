//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cafm_core::nn::Arch;
use cafm_core::train::TrainMode;

use crate::codec::Codec;
use crate::commands::{self, AnalysisSource, Input, Session};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "cafm", version, about = "Shared-backbone video super-resolution with per-chunk feature modulation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration (defaults to <workdir>/config.toml when present)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub scale: Option<usize>,

    #[arg(long, global = true)]
    pub chunks: Option<usize>,

    /// m0 | separate | ft | joint | external
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<TrainMode>,

    /// srcnn | espcn | vdsr | edsr_m
    #[arg(long, global = true, value_parser = parse_arch)]
    pub arch: Option<Arch>,

    /// Modulation kernel size (1, 3, 5 or 7)
    #[arg(long, global = true)]
    pub kernel: Option<usize>,

    /// Repeat for more log output
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

fn parse_mode(s: &str) -> std::result::Result<TrainMode, String> {
    TrainMode::parse(s).map_err(|e| e.to_string())
}

fn parse_arch(s: &str) -> std::result::Result<Arch, String> {
    Arch::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode a video, cache HR/LR frames and split it into chunks
    Prepare {
        /// Video file or directory of frames
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        /// Use the built-in two-clip synthetic video
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value_t = 16)]
        frames_per_clip: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
    },
    /// Train one regime and write its checkpoint
    Train {
        /// Per-chunk step budget (overrides train.iterations)
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Copy a trained model into delivery/ as a bundle
    Pack,
    /// Validate a bundle and print its contents
    Unpack {
        bundle: PathBuf,
        /// Also list every tensor with its section and offset
        #[arg(long)]
        inspect: bool,
    },
    /// Super-resolve the LR video from a bundle
    Reconstruct {
        /// Bundle file (defaults to delivery/<mode>.bundle)
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Only this chunk
        #[arg(long)]
        chunk: Option<usize>,
    },
    /// Evaluate every trained model and write report.csv and plots
    Report {
        /// Score BT.601 luma instead of RGB
        #[arg(long)]
        y_channel: bool,
    },
    /// Compare channel features across models
    Analyze {
        #[arg(long, value_enum, default_value_t = AnalysisSource::Separate)]
        source: AnalysisSource,
        /// Probe image (defaults to the first test frame)
        #[arg(long)]
        probe: Option<PathBuf>,
    },
    /// Encode the video with a classical codec at a matched byte budget
    CodecCompare {
        #[arg(long, value_enum)]
        codec: Option<Codec>,
        /// Byte budget (defaults to the joint delivery size)
        #[arg(long)]
        budget: Option<u64>,
    },
}

/// Loads the config and applies the global flags.
pub fn session(g: &GlobalArgs) -> Result<Session> {
    let from_workdir = g.workdir.as_ref().map(|w| w.join("config.toml")).filter(|p| p.is_file());
    let mut config = match g.config.as_ref().or(from_workdir.as_ref()) {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = g.seed {
        config.seed = v;
    }
    if let Some(v) = g.scale {
        config.media.scale = v;
    }
    if let Some(v) = g.chunks {
        config.media.chunks = v;
    }
    if let Some(v) = g.mode {
        config.train.mode = v;
    }
    if let Some(v) = g.arch {
        config.backbone.arch = v;
    }
    if let Some(v) = g.kernel {
        config.train.kernel = v;
    }
    let workdir = g
        .workdir
        .clone()
        .or_else(|| config.workdir.clone())
        .ok_or_else(|| CliError::Usage(String::from("no workdir: pass --workdir or set `workdir` in the config")))?;
    let mut s = Session::new(config, workdir);
    s.scale_flag = g.scale;
    s.chunks_flag = g.chunks;
    Ok(s)
}

/// Runs one parsed command line, printing results to stdout.
pub fn run(cli: Cli) -> Result<()> {
    if let Command::Unpack { bundle, inspect } = &cli.command {
        print!("{}", commands::inspect(bundle, *inspect)?);
        return Ok(());
    }
    let mut s = session(&cli.global)?;
    let mode = s.config.train.mode;
    match cli.command {
        Command::Prepare { input, synthetic, frames_per_clip, size } => {
            let input = match (input, synthetic) {
                (Some(p), false) => Input::Path(p),
                (None, true) => Input::Synthetic { frames_per_clip, size },
                _ => return Err(CliError::Usage(String::from("pass exactly one of --input and --synthetic"))),
            };
            let m = commands::prepare(&s, &input)?;
            println!("{} frames, {} chunks, x{} -> {}", m.frame_count(), m.n, m.scale, s.workdir.root().display());
        }
        Command::Train { iterations } => {
            if let Some(n) = iterations {
                s.config.train.iterations = n;
            }
            let t = commands::train(&s, mode)?;
            for p in &t.checkpoints {
                println!("{}", p.display());
            }
            println!("{}: {} steps, test PSNR {:.3} dB", mode.name(), t.iterations, t.test_psnr);
        }
        Command::Pack => {
            for p in commands::pack(&s, mode)? {
                println!("{}", p.display());
            }
        }
        Command::Unpack { .. } => unreachable!(),
        Command::Reconstruct { bundle, chunk } => {
            let out = commands::reconstruct(&s, mode, bundle.as_deref(), chunk)?;
            println!("{}", out.display());
        }
        Command::Report { y_channel } => {
            s.config.eval.y_channel |= y_channel;
            let rows = commands::report(&s)?;
            println!("{} rows -> {}", rows.len(), s.workdir.report_path().display());
        }
        Command::Analyze { source, probe } => {
            let sum = commands::analyze(&s, source, probe.as_deref())?;
            println!(
                "{} matrices, diagonal mean {:.4}, off-diagonal mean {:.4}",
                sum.matrices.len(),
                sum.diag_mean,
                sum.offdiag_mean
            );
        }
        Command::CodecCompare { codec, budget } => {
            let codec = codec.unwrap_or(s.config.codec.codec);
            let r = commands::codec_compare(&s, codec, budget)?;
            let mean = r.frame_psnr.iter().sum::<f64>() / r.frame_psnr.len() as f64;
            println!(
                "{}: {} bytes (budget {}) at {} b/s, {} probes, PSNR {:.3} dB",
                codec.name(),
                r.bytes,
                r.budget,
                r.rate.bitrate,
                r.rate.probes.len(),
                mean
            );
        }
    }
    Ok(())
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Process entry: parse, run, map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
