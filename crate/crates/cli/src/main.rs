//! `ppsi`: run the projective single-pixel imaging pipeline stage by stage.
//!
//! Every stage reads the previous stage's files from the input directory
//! and writes its own into the output directory; both default to the
//! configured output directory, so the stages chain without extra flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ppsi::config::{RunConfig, SceneConfig};
use ppsi::geometry::StereoRig;
use ppsi::io::{self, ImageFormat, ReconFile};
use ppsi::ltc_sim::RasterizedScene;
use ppsi::metrics::{self, knee, SweepReport};
use ppsi::patterns::{pattern_count, CaptureBudget, ProjectionAxis};
use ppsi::pipeline;

const CANDIDATES: &str = "candidates.csv";
const CLOUD_RAW: &str = "cloud_raw.ply";
const CLOUD: &str = "cloud.ply";
const METRICS: &str = "metrics.csv";
const SWEEP: &str = "sweep.csv";

#[derive(Parser)]
#[command(name = "ppsi", version, about = "Projective parallel single-pixel imaging pipeline")]
struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; defaults to the configured one.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Staged {
    #[command(flatten)]
    common: Common,
    /// Directory holding the previous stage's files; defaults to the output directory.
    #[arg(short, long)]
    input: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Pgm,
    Pfm,
}

#[derive(Subcommand)]
enum Command {
    /// Write the coarse and fine pattern images and print the pattern budget.
    Patterns {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "pgm")]
        format: Format,
        /// Fine period for every direction; otherwise the configured one, or
        /// the one a capture of the scene would choose.
        #[arg(long)]
        fine_period: Option<usize>,
        /// Print the budget without writing images.
        #[arg(long)]
        dry_run: bool,
    },
    /// Simulate the adaptive capture of the scene into an intensity stack.
    Capture(Common),
    /// Reconstruct projection functions from an intensity stack.
    Reconstruct(Staged),
    /// Match projection-function peaks to projector points.
    Match(Staged),
    /// Triangulate candidates and apply the continuity filter.
    Cloud(Staged),
    /// Score a cloud: surface fit and, given a reference cloud, SME and coverage.
    Eval {
        #[command(flatten)]
        staged: Staged,
        /// Reference cloud for SME, coverage and nearest-point RMS.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Capture once and re-run the pipeline at every configured capture ratio.
    Sweep(Common),
    /// Run capture through eval in one go.
    Run(Common),
}

struct Ctx {
    run: RunConfig,
    config_dir: PathBuf,
    out: PathBuf,
}

impl Ctx {
    fn load(common: &Common) -> Result<Self> {
        let run = RunConfig::load(&common.config).context("config")?;
        let config_dir = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
        let out = common.out.clone().unwrap_or_else(|| config_dir.join(&run.output));
        std::fs::create_dir_all(&out).with_context(|| format!("config: cannot create output directory {}", out.display()))?;
        Ok(Ctx { run, config_dir, out })
    }

    fn scene(&self) -> Result<SceneConfig> {
        let path = self.run.scene_path(&self.config_dir);
        SceneConfig::load(&path).with_context(|| format!("scene: {}", path.display()))
    }

    fn rig(&self) -> Result<StereoRig> {
        Ok(self.scene()?.rig().context("scene")?)
    }

    fn rasterized(&self) -> Result<(StereoRig, RasterizedScene, String)> {
        let cfg = self.scene()?;
        let (rig, model, _) = cfg.build().context("scene")?;
        let r = model.rasterize().context("scene")?;
        Ok((rig, r, cfg.name))
    }
}

fn input_dir(staged: &Staged, ctx: &Ctx) -> PathBuf {
    staged.input.clone().unwrap_or_else(|| ctx.out.clone())
}

fn require(path: &Path, stage: &str, produced_by: &str) -> Result<()> {
    if !path.exists() {
        bail!("{stage}: missing input {} (run `ppsi {produced_by}` first)", path.display());
    }
    Ok(())
}

fn cmd_patterns(common: &Common, format: Format, fine_period: Option<usize>, dry_run: bool) -> Result<()> {
    let ctx = Ctx::load(common)?;
    let run = &ctx.run;
    let scene = ctx.scene()?;
    let device = scene.device().context("scene")?;
    let periods = match fine_period.or(run.fine_period) {
        Some(m) => vec![m; run.directions.len()],
        None => {
            let (_, r, _) = ctx.rasterized()?;
            let stack = pipeline::capture(&r, run).context("patterns")?;
            pipeline::stack_fine_periods(&stack).context("patterns")?
        }
    };
    let mut total = 0;
    for (&deg, &m) in run.directions.iter().zip(&periods) {
        let axis = ProjectionAxis::from_degrees(deg, &device).context("patterns")?;
        let b = CaptureBudget {
            coarse_frequencies: pipeline::coarse_frequencies(run, &axis).len(),
            fine_support: m.clamp(2, axis.length),
            ratio: run.eta,
            phase_count: run.phase_count,
            directions: 1,
        };
        let n = pattern_count(&b).context("patterns")?.total;
        println!("direction {deg}: L = {}, fine period {}, {n} patterns", axis.length, b.fine_support);
        total += n;
    }
    println!("total patterns: {total}");
    if dry_run {
        return Ok(());
    }
    let sets = pipeline::pattern_sets(run, &device, &periods).context("patterns")?;
    let fmt = match format {
        Format::Pgm => ImageFormat::Pgm,
        Format::Pfm => ImageFormat::Pfm,
    };
    let dir = ctx.out.join("patterns");
    let written = io::export_patterns(&dir, &device, &sets, fmt).context("patterns")?;
    if written != total {
        bail!("patterns: wrote {written} images but the budget is {total}");
    }
    println!("wrote {written} images to {}", dir.display());
    Ok(())
}

fn cmd_capture(common: &Common) -> Result<()> {
    let ctx = Ctx::load(common)?;
    let (_, r, _) = ctx.rasterized()?;
    let stack = pipeline::capture(&r, &ctx.run).context("capture")?;
    io::write_stack(&ctx.out, &stack).context("capture")?;
    println!("captured {} patterns for {} pixels into {}", stack.pattern_count(), stack.pixels(), ctx.out.display());
    Ok(())
}

fn cmd_reconstruct(staged: &Staged) -> Result<()> {
    let ctx = Ctx::load(&staged.common)?;
    let input = input_dir(staged, &ctx);
    require(&input.join(io::STACK_MANIFEST), "reconstruct", "capture")?;
    let stack = io::read_stack(&input).context("reconstruct")?;
    let directions = pipeline::reconstruct(&stack, &ctx.run, ctx.run.eta).context("reconstruct")?;
    let patterns = pipeline::stack_pattern_count(&stack, &ctx.run, ctx.run.eta).context("reconstruct")?;
    let lit = directions.first().map_or(0, |d| d.functions.iter().filter(|f| !f.is_empty()).count());
    let file = ReconFile { camera: (stack.camera_cols, stack.camera_rows), eta: ctx.run.eta, patterns, directions };
    io::write_recon(&ctx.out, &file).context("reconstruct")?;
    println!("reconstructed {} directions, {lit} lit pixels", file.directions.len());
    Ok(())
}

fn cmd_match(staged: &Staged) -> Result<()> {
    let ctx = Ctx::load(&staged.common)?;
    let input = input_dir(staged, &ctx);
    require(&input.join(io::RECON_MANIFEST), "match", "reconstruct")?;
    let recon = io::read_recon(&input).context("match")?;
    let rig = ctx.rig()?;
    if recon.camera != (rig.device.camera_cols, rig.device.camera_rows) {
        bail!("match: projection functions are for a {:?} camera, scene has {}x{}", recon.camera, rig.device.camera_cols, rig.device.camera_rows);
    }
    let matches = pipeline::match_pixels(&recon.directions, &rig, &ctx.run).context("match")?;
    io::write_text(&ctx.out.join(CANDIDATES), &io::candidates_csv(&matches)).context("match")?;
    let n: usize = matches.iter().map(|m| m.matches.len()).sum();
    println!("{n} candidates over {} pixels", matches.len());
    Ok(())
}

fn cmd_cloud(staged: &Staged) -> Result<()> {
    let ctx = Ctx::load(&staged.common)?;
    let input = input_dir(staged, &ctx);
    let path = input.join(CANDIDATES);
    require(&path, "cloud", "match")?;
    let matches = io::parse_candidates_csv(&io::read_text_file(&path).context("cloud")?).context("cloud")?;
    let rig = ctx.rig()?;
    let (raw, filtered) = pipeline::make_cloud(&matches, &rig, &ctx.run).context("cloud")?;
    io::write_ply(&ctx.out.join(CLOUD_RAW), &raw).context("cloud")?;
    io::write_ply(&ctx.out.join(CLOUD), &filtered).context("cloud")?;
    println!("{} points, {} after continuity filtering", raw.len(), filtered.len());
    Ok(())
}

fn cmd_eval(staged: &Staged, reference: Option<&Path>) -> Result<()> {
    let ctx = Ctx::load(&staged.common)?;
    let input = input_dir(staged, &ctx);
    let path = input.join(CLOUD);
    require(&path, "eval", "cloud")?;
    let cloud = io::read_ply(&path).context("eval")?;
    // The capture ratio and pattern count come from the reconstruction when
    // it sits next to the cloud.
    let (eta, patterns) = if input.join(io::RECON_MANIFEST).exists() {
        let r = io::read_recon(&input).context("eval")?;
        (r.eta, r.patterns)
    } else {
        (ctx.run.eta, 0)
    };
    let reference = match reference {
        Some(p) => {
            require(p, "eval", "cloud")?;
            Some(io::read_ply(p).with_context(|| format!("eval: reference {}", p.display()))?)
        }
        None => None,
    };
    let (sme, coverage) = match &reference {
        Some(r) => {
            let (m, c) = metrics::compare_clouds(r, &cloud);
            (m, Some(c))
        }
        None => (None, None),
    };
    let rms = match pipeline::fit_rms(&cloud, ctx.run.eval.fit).context("eval")? {
        Some(v) => Some(v),
        None => reference.as_ref().and_then(|r| metrics::nearest_rms(&cloud, r)),
    };
    let text = format!("{}\n{}\n", SweepReport::CSV_HEADER, metrics::csv_row(eta, patterns, sme, coverage, rms));
    io::write_text(&ctx.out.join(METRICS), &text).context("eval")?;
    print!("{text}");
    Ok(())
}

fn cmd_sweep(common: &Common) -> Result<()> {
    let ctx = Ctx::load(common)?;
    let (rig, r, name) = ctx.rasterized()?;
    let report = pipeline::capture_ratio_sweep(&r, &rig, &ctx.run, &ctx.run.eval.ratios, &name).context("sweep")?;
    io::write_text(&ctx.out.join(SWEEP), &report.to_csv()).context("sweep")?;
    print!("{}", report.to_csv());
    for row in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("eta {}: {}", row.eta, row.error.as_deref().unwrap_or_default());
    }
    let (x, y) = report.curve();
    if let Ok(k) = knee(&x, &y) {
        println!("knee at eta = {k}");
    }
    Ok(())
}

fn cmd_run(common: &Common) -> Result<()> {
    cmd_capture(common)?;
    let staged = Staged { common: Common { config: common.config.clone(), out: common.out.clone() }, input: None };
    cmd_reconstruct(&staged)?;
    cmd_match(&staged)?;
    cmd_cloud(&staged)?;
    cmd_eval(&staged, None)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let res = match &cli.command {
        Command::Patterns { common, format, fine_period, dry_run } => cmd_patterns(common, *format, *fine_period, *dry_run),
        Command::Capture(c) => cmd_capture(c),
        Command::Reconstruct(s) => cmd_reconstruct(s),
        Command::Match(s) => cmd_match(s),
        Command::Cloud(s) => cmd_cloud(s),
        Command::Eval { staged, reference } => cmd_eval(staged, reference.as_deref()),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Run(c) => cmd_run(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
