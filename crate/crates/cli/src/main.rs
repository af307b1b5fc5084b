use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvlens_core::divergence::Granularity;
use mvlens_core::media_io::FormatHint;
use mvlens_core::report::{self, AnalysisConfig, DensitySource};
use mvlens_core::{Error, Result};

/// Motion-vector statistics for judging the temporal realism of video.
#[derive(Debug, Parser)]
#[command(name = "mvlens", version)]
struct Cli {
    /// Worker threads (default: all cores). Output never depends on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Start from the configuration in this JSON file (a bare config or any
    /// report's `config` block); flags given on the command line override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a motion-vector sidecar for every clip that lacks one.
    Estimate {
        manifest: PathBuf,
        /// Re-estimate clips that already have a sidecar.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Per-clip and per-class motion statistics.
    Stats {
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Divergences of each generated class against the real corpus.
    Compare {
        real_manifest: PathBuf,
        gen_manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Calibrate routing density thresholds over a corpus.
    Calibrate {
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GranularityArg {
    Frame,
    Clip,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DensityArg {
    Threshold,
    MafMask,
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Macroblock side M [default: 16]
    #[arg(long)]
    block_size: Option<usize>,
    /// Search radius S [default: 16]
    #[arg(long)]
    search_radius: Option<usize>,
    /// Reference frame offset k [default: -1]
    #[arg(long, allow_hyphen_values = true)]
    ref_offset: Option<i64>,
    /// Entropy histogram bins [default: 64]
    #[arg(long)]
    entropy_bins: Option<usize>,
    /// Divergence histogram bins [default: 50]
    #[arg(long)]
    div_bins: Option<usize>,
    /// Sample granularity for divergences [default: frame]
    #[arg(long, value_enum)]
    granularity: Option<GranularityArg>,
    /// Directional mask quantile level [default: 0.75]
    #[arg(long)]
    q_mv: Option<f64>,
    /// Lower routing quantile [default: 0.25]
    #[arg(long)]
    alpha_low: Option<f64>,
    /// Upper routing quantile [default: 0.75]
    #[arg(long)]
    alpha_high: Option<f64>,
    /// Floor of p_low [default: 1e-4]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Motion detector threshold in pixels [default: 1]
    #[arg(long)]
    tau: Option<f64>,
    /// Mask behind routing densities [default: threshold]
    #[arg(long, value_enum)]
    density: Option<DensityArg>,
    /// Side of the spatial statistics grid [default: 56]
    #[arg(long)]
    grid: Option<usize>,
    /// Motion evolution segments [default: 5]
    #[arg(long)]
    segments: Option<usize>,
    /// Direction histogram bins [default: 16]
    #[arg(long)]
    dir_bins: Option<usize>,
    /// Flow glyph lattice side [default: 8]
    #[arg(long)]
    lattice: Option<usize>,
    /// Read non-Y4M frame files as raw planar WIDTHxHEIGHTxCHANNELS.
    #[arg(long, value_name = "WxHxC", value_parser = parse_raw)]
    raw: Option<(usize, usize, usize)>,
}

fn parse_raw(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split('x').collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| format!("`{s}`: {e}"))?;
    match nums[..] {
        [w, h, c] => Ok((w, h, c)),
        _ => Err(format!("`{s}`: expected WIDTHxHEIGHTxCHANNELS")),
    }
}

impl Common {
    fn apply(&self, mut c: AnalysisConfig) -> Result<AnalysisConfig> {
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(
            block_size => block_size,
            search_radius => search_radius,
            ref_offset => ref_offset,
            entropy_bins => entropy_bins,
            div_bins => div_bins,
            q_mv => q_mv,
            alpha_low => alpha_low,
            alpha_high => alpha_high,
            epsilon => epsilon,
            tau => tau,
            grid => grid,
            segments => segments,
            dir_bins => dir_bins,
            lattice => glyph_lattice,
        );
        if let Some(g) = self.granularity {
            c.granularity = match g {
                GranularityArg::Frame => Granularity::Frame,
                GranularityArg::Clip => Granularity::Clip,
            };
        }
        if let Some(d) = self.density {
            c.density_source = match d {
                DensityArg::Threshold => DensitySource::Threshold,
                DensityArg::MafMask => DensitySource::MafMask,
            };
        }
        if let Some((width, height, channels)) = self.raw {
            c.frame_format = FormatHint::Raw {
                width,
                height,
                channels,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<String> {
    let base = match &cli.config {
        Some(path) => AnalysisConfig::load(path)?,
        None => AnalysisConfig::default(),
    };
    let done = |label: &str, out: &Path, files: usize| report::summary_line(label, out, files);
    report::with_threads(cli.threads, move || match &cli.command {
        Command::Estimate {
            manifest,
            force,
            common,
        } => {
            let config = common.apply(base)?;
            let s = report::cmd_estimate(manifest, &common.out, &config, *force)?;
            let mut line = done("estimate", &common.out, s.written.len() + 1);
            if !s.skipped.is_empty() {
                line.push_str(&format!(" ({} clip(s) already had sidecars)", s.skipped.len()));
            }
            Ok(line)
        }
        Command::Stats { manifest, common } => {
            let config = common.apply(base)?;
            let r = report::cmd_stats(manifest, &common.out, &config)?;
            Ok(done("stats", &common.out, 6 + r.classes.len()))
        }
        Command::Compare {
            real_manifest,
            gen_manifest,
            common,
        } => {
            let config = common.apply(base)?;
            report::cmd_compare(real_manifest, gen_manifest, &common.out, &config)?;
            Ok(done("compare", &common.out, 3))
        }
        Command::Calibrate { manifest, common } => {
            let config = common.apply(base)?;
            let r = report::cmd_calibrate(manifest, &common.out, &config)?;
            let f = r.fractions;
            Ok(format!(
                "{}; p_low={} p_high={} routes low={} mid={} high={}",
                done("calibrate", &common.out, 1),
                r.thresholds.p_low,
                r.thresholds.p_high,
                f.low,
                f.mid,
                f.high
            ))
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mvlens: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
