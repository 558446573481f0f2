//! Command-line parsing and dispatch.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use sudf::synth::SynthParams;

use crate::commands::{cmd_bench, cmd_eval, cmd_run, cmd_synth, Status};
use crate::config::{ConfigError, RunConfig, RunVariant};

#[derive(Debug, Parser)]
#[command(name = "sudf", version, about = "Hyperspectral salient object detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute saliency maps for one cube or a directory of cubes.
    Run {
        /// A `.hdr` file or a directory of them.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Score saliency PNGs against ground-truth masks.
    Eval {
        /// Directory of `<stem>.png` saliency maps.
        #[arg(long)]
        input: PathBuf,
        /// Directory of `<stem>.png` masks (or one with a `masks/` subdirectory).
        #[arg(long)]
        gt: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Run and evaluate several variants on a dataset with `cubes/` and `masks/`.
    Bench {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Write synthetic cubes with a known salient square.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Height and width in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 8)]
        bands: usize,
    },
}

/// Settings shared by the processing subcommands. Flags override the
/// config file, which overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// hf-slic, hs-slic or mr-baseline; `bench` takes a comma-separated list.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Image-level worker threads (0 = one per core).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub eps1: Option<f64>,
    #[arg(long)]
    pub eps2: Option<f64>,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sigma_sq: Option<f64>,
    #[arg(long)]
    pub recompute_superpixels_every: Option<usize>,
    /// Leave wall-clock times out of every output.
    #[arg(long)]
    pub no_timings: bool,
}

impl ConfigArgs {
    /// Resolves the configuration. With `multi_variant`, `--variant` may be
    /// a list and is returned separately instead of being applied.
    pub fn resolve(&self, multi_variant: bool) -> Result<(RunConfig, Vec<RunVariant>), ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let mut variants = Vec::new();
        if let Some(v) = &self.variant {
            if multi_variant {
                for part in v.split(',') {
                    variants.push(part.parse()?);
                }
            } else {
                cfg.variant = v.parse()?;
            }
        }
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(x) = self.$field {
                    cfg.$field = x;
                }
            )*};
        }
        apply!(seed, workers, kappa, eps1, eps2, segments, alpha, sigma_sq, recompute_superpixels_every);
        if self.no_timings {
            cfg.timings = false;
        }
        cfg.validate()?;
        if multi_variant && variants.is_empty() {
            variants = RunVariant::ALL.to_vec();
        }
        Ok((cfg, variants))
    }
}

fn dispatch(command: Command) -> Result<Status> {
    match command {
        Command::Run { input, out, opts } => {
            let (cfg, _) = opts.resolve(false)?;
            Ok(cmd_run(&input, &out, &cfg)?.0)
        }
        Command::Eval {
            input,
            gt,
            out,
            opts,
        } => {
            let (cfg, _) = opts.resolve(false)?;
            cmd_eval(&input, &gt, &out, &cfg)
        }
        Command::Bench { input, out, opts } => {
            let (cfg, variants) = opts.resolve(true)?;
            cmd_bench(&input, &variants, &out, &cfg)
        }
        Command::Synth {
            out,
            count,
            seed,
            size,
            bands,
        } => {
            if size < 8 || bands == 0 {
                return Err(ConfigError("synth needs --size >= 8 and --bands >= 1".into()).into());
            }
            cmd_synth(&out, count, seed, &SynthParams::small(size, bands))
        }
    }
}

/// Parses `args` (including the program name), runs the command, prints
/// diagnostics to stderr and returns the process exit status.
pub fn run_cli<I, T>(args: I) -> i32
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
    let result = dispatch(cli.command);
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    crate::exit_code(&result)
}
