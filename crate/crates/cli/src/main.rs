use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use ttmkit::bench::{bench_tm, bench_ttm, loglog_slope, time_ratio, write_bench_csv, TM_METHOD, TTM_METHOD};
use ttmkit::config::RunConfig;
use ttmkit::eval::{
    detection_curve, match_detections, write_curve_csv, write_stats_csv, StatsRow, Symmetry,
};
use ttmkit::io::{
    load_tensorial_template, read_ground_truth, read_peaks_file, read_volume, save_tensorial_template,
    write_ground_truth, write_peaks, write_volume,
};
use ttmkit::so3::sample_so3_uniform;
use ttmkit::synth::{add_noise, gen_grid_tomogram, gen_template, TemplateKind};
use ttmkit::tm::{tm_match, tm_peaks};
use ttmkit::ttm::{build_tensorial_template, run_ttm, TensorialTemplate};
use ttmkit::peaks::default_excl_radius;
use ttmkit::volume::make_soft_mask;
use ttmkit::{Error, SoftMask};

const THREADS_ENV: &str = "TTMKIT_THREADS";

#[derive(Parser)]
#[command(name = "ttmkit", version, about = "Tensorial template matching for 3D volumes")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads (overrides TTMKIT_THREADS and the configuration).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a tensorial template from a template volume.
    TemplateBuild(TemplateBuildArgs),
    /// Locate and orient template copies with a tensorial template.
    Match(MatchArgs),
    /// Baseline matching over a sampled rotation set.
    TmMatch(TmMatchArgs),
    /// Write a synthetic template, grid tomogram and ground truth.
    Synth(SynthArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Time both matchers across rotation-set sizes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct MaskArgs {
    /// Stored mask volume with the template's dimensions.
    #[arg(long, value_name = "PATH")]
    mask: Option<PathBuf>,
    #[arg(long)]
    r_in: Option<f64>,
    #[arg(long)]
    r_out: Option<f64>,
}

#[derive(Args)]
struct PeakArgs {
    /// Peaks to report.
    #[arg(long)]
    n_peaks: Option<usize>,
    /// Minimum distance between reported peaks, in voxels.
    #[arg(long)]
    excl_radius: Option<f64>,
}

#[derive(Args)]
struct TemplateBuildArgs {
    #[arg(long, value_name = "PATH")]
    template: Option<PathBuf>,
    #[command(flatten)]
    mask: MaskArgs,
    /// Rotations integrated into the tensorial template.
    #[arg(long)]
    n_integration: Option<usize>,
    /// Output directory.
    #[arg(long, short, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long, value_name = "PATH")]
    image: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    tensorial_template: Option<PathBuf>,
    #[command(flatten)]
    mask: MaskArgs,
    #[command(flatten)]
    peaks: PeakArgs,
    /// Refine positions and rotations around each peak.
    #[arg(long)]
    refine: bool,
    /// Refinement search radius in voxels.
    #[arg(long)]
    r_s: Option<usize>,
    /// Random eigen-solver starts per refined voxel.
    #[arg(long)]
    refine_inits: Option<usize>,
    /// Block core edge in voxels.
    #[arg(long)]
    block_size: Option<usize>,
    /// Peak CSV; standard output when absent.
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TmMatchArgs {
    #[arg(long, value_name = "PATH")]
    image: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    template: Option<PathBuf>,
    #[command(flatten)]
    mask: MaskArgs,
    #[command(flatten)]
    peaks: PeakArgs,
    /// Size of the uniform rotation set.
    #[arg(long)]
    n_rotations: Option<usize>,
    /// Peak CSV; standard output when absent.
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    LShape,
    Cylinder,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Cylinder radius in voxels.
    #[arg(long, requires = "height")]
    radius: Option<f64>,
    /// Cylinder height in voxels.
    #[arg(long, requires = "radius")]
    height: Option<f64>,
    /// Width of the cylinder's soft edge in voxels.
    #[arg(long, default_value_t = 1.0)]
    edge: f64,
    /// Template edge in voxels (odd).
    #[arg(long)]
    size: Option<usize>,
    /// Instances along x, y and z.
    #[arg(long, value_delimiter = ',', value_name = "NX,NY,NZ")]
    grid: Option<Vec<usize>>,
    /// Distance between neighbouring instance centers.
    #[arg(long)]
    spacing: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Add Gaussian noise at this signal-to-noise ratio.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Output directory for template.mrc, tomogram.mrc and gt.csv.
    #[arg(long, short, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SymmetryArg {
    None,
    Cyclic,
    Axial,
}

#[derive(Args)]
struct EvalArgs {
    /// Detections to score.
    #[arg(long, value_name = "PATH")]
    peaks: PathBuf,
    /// Ground-truth CSV with its JSON sidecar.
    #[arg(long, value_name = "PATH")]
    gt: PathBuf,
    #[arg(long)]
    match_tolerance: Option<f64>,
    #[arg(long, value_enum)]
    symmetry: Option<SymmetryArg>,
    /// Order of a cyclic symmetry.
    #[arg(long, default_value_t = 1)]
    symmetry_order: u32,
    /// Symmetry axis in template coordinates.
    #[arg(long, value_delimiter = ',', value_name = "X,Y,Z", default_values_t = [0.0, 0.0, 1.0])]
    symmetry_axis: Vec<f64>,
    /// Label for the template column.
    #[arg(long, default_value = "template")]
    template_name: String,
    /// Label for the method column.
    #[arg(long, default_value = "ttm")]
    method: String,
    /// Multiples of the ground-truth count for the detection curve.
    #[arg(long, value_delimiter = ',')]
    picking_factors: Option<Vec<f64>>,
    /// Directory for stats.csv and curve.csv; stats go to standard output
    /// when absent.
    #[arg(long, short, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_name = "PATH")]
    image: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    template: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    tensorial_template: Option<PathBuf>,
    #[command(flatten)]
    mask: MaskArgs,
    #[command(flatten)]
    peaks: PeakArgs,
    /// Rotation-set sizes to sweep.
    #[arg(long, value_delimiter = ',')]
    rotations: Option<Vec<usize>>,
    /// Timed repetitions per point; the fastest is kept.
    #[arg(long)]
    repeats: Option<usize>,
    /// Benchmark CSV; standard output when absent.
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Data(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Failure::Usage(format!("missing {what}: pass --{what} or set `{}` in the configuration", what.replace('-', "_"))))
}

fn triple<T: Copy>(v: &[T], flag: &str) -> CliResult<[T; 3]> {
    <[T; 3]>::try_from(v).map_err(|_| Failure::Usage(format!("--{flag} takes three comma-separated values, got {}", v.len())))
}

fn apply_mask(cfg: &mut RunConfig, m: MaskArgs) {
    if m.mask.is_some() {
        cfg.r_in = None;
        cfg.r_out = None;
    }
    if m.r_in.is_some() || m.r_out.is_some() {
        cfg.mask = None;
    }
    set_opt(&mut cfg.mask, m.mask);
    set_opt(&mut cfg.r_in, m.r_in);
    set_opt(&mut cfg.r_out, m.r_out);
}

fn apply_peaks(cfg: &mut RunConfig, p: PeakArgs) {
    set(&mut cfg.n_peaks, p.n_peaks);
    set_opt(&mut cfg.excl_radius, p.excl_radius);
}

fn setup_threads(flag: Option<usize>, cfg: &RunConfig) -> CliResult<()> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(s) => Some(
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got `{s}`")))?,
        ),
        Err(_) => None,
    };
    if flag == Some(0) {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    if let Some(n) = flag.or(env).or(cfg.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
        info!("using {n} worker threads");
    }
    Ok(())
}

fn data_sink(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Mask for a stored tensorial template: explicit settings win, otherwise
/// the radii recorded at build time.
fn mask_for_template(cfg: &RunConfig, t: &TensorialTemplate) -> CliResult<SoftMask> {
    if cfg.mask.is_some() || cfg.r_in.is_some() {
        return Ok(cfg.soft_mask(t.size())?);
    }
    let meta = t.meta();
    Ok(make_soft_mask([t.size(); 3], meta.r_in, meta.r_out)?)
}

fn template_edge(t: &ttmkit::Volume) -> CliResult<usize> {
    if !t.is_odd_cube() {
        return Err(Failure::Data(Error::Geometry(format!(
            "template must be an odd cube, got {:?}",
            t.dims()
        ))));
    }
    Ok(t.dims()[0])
}

fn cmd_template_build(mut cfg: RunConfig, a: TemplateBuildArgs) -> CliResult<()> {
    set_opt(&mut cfg.template, a.template);
    apply_mask(&mut cfg, a.mask);
    set(&mut cfg.n_integration, a.n_integration);
    set_opt(&mut cfg.output, a.output);
    cfg.validate()?;
    let t = read_volume(require(&cfg.template, "template")?)?;
    let out = require(&cfg.output, "output")?;
    let m = cfg.soft_mask(template_edge(&t)?)?;
    info!("integrating {} rotations", cfg.n_integration);
    let tt = build_tensorial_template(&t, &m, cfg.n_integration)?;
    save_tensorial_template(&tt, out)?;
    info!("wrote {}", out.display());
    Ok(())
}

fn cmd_match(mut cfg: RunConfig, a: MatchArgs) -> CliResult<()> {
    set_opt(&mut cfg.image, a.image);
    set_opt(&mut cfg.tensorial_template, a.tensorial_template);
    apply_mask(&mut cfg, a.mask);
    apply_peaks(&mut cfg, a.peaks);
    cfg.refine |= a.refine;
    set(&mut cfg.r_s, a.r_s);
    set(&mut cfg.refine_inits, a.refine_inits);
    set_opt(&mut cfg.block_size, a.block_size);
    set_opt(&mut cfg.output, a.output);
    cfg.validate()?;
    let f = read_volume(require(&cfg.image, "image")?)?;
    let tt = load_tensorial_template(require(&cfg.tensorial_template, "tensorial-template")?)?;
    let m = mask_for_template(&cfg, &tt)?;
    let run = run_ttm(&f, &tt, &m, &cfg.ttm_config())?;
    info!(
        "{} peaks from {} blocks, {} correlations",
        run.peaks.len(),
        run.blocks.len(),
        run.blocks.iter().map(|b| b.correlations).sum::<usize>()
    );
    write_peaks(data_sink(&cfg.output)?, &run.peaks)?;
    Ok(())
}

fn cmd_tm_match(mut cfg: RunConfig, a: TmMatchArgs) -> CliResult<()> {
    set_opt(&mut cfg.image, a.image);
    set_opt(&mut cfg.template, a.template);
    apply_mask(&mut cfg, a.mask);
    apply_peaks(&mut cfg, a.peaks);
    set(&mut cfg.n_rotations, a.n_rotations);
    set_opt(&mut cfg.output, a.output);
    cfg.validate()?;
    let f = read_volume(require(&cfg.image, "image")?)?;
    let t = read_volume(require(&cfg.template, "template")?)?;
    let m = cfg.soft_mask(template_edge(&t)?)?;
    let rotations = sample_so3_uniform(cfg.n_rotations)?;
    info!("correlating {} rotations", rotations.len());
    let res = tm_match(&f, &t, &m, &rotations)?;
    let excl = cfg.excl_radius.unwrap_or_else(|| default_excl_radius(m.r_out()));
    let peaks = tm_peaks(&res, &rotations, cfg.n_peaks, excl)?;
    info!("{} peaks, {} correlations", peaks.len(), res.correlations());
    write_peaks(data_sink(&cfg.output)?, &peaks)?;
    Ok(())
}

fn cmd_synth(mut cfg: RunConfig, a: SynthArgs) -> CliResult<()> {
    match (a.kind, a.radius, a.height) {
        (Some(KindArg::LShape), _, _) => cfg.template_kind = TemplateKind::LShape,
        (Some(KindArg::Cylinder), Some(radius), Some(height)) => {
            cfg.template_kind = TemplateKind::Cylinder {
                radius,
                height,
                edge: a.edge,
            }
        }
        (Some(KindArg::Cylinder), _, _) => {
            if !matches!(cfg.template_kind, TemplateKind::Cylinder { .. }) {
                return Err(Failure::Usage("--kind cylinder needs --radius and --height".into()));
            }
        }
        (None, _, _) => {}
    }
    set(&mut cfg.template_size, a.size);
    if let Some(g) = a.grid {
        cfg.grid = triple(&g, "grid")?;
    }
    set(&mut cfg.spacing, a.spacing);
    set(&mut cfg.seed, a.seed);
    set_opt(&mut cfg.snr, a.snr);
    set(&mut cfg.noise_seed, a.noise_seed);
    set_opt(&mut cfg.output, a.output);
    cfg.validate()?;
    let out = require(&cfg.output, "output")?;
    std::fs::create_dir_all(out)?;
    let t = gen_template(&cfg.template_kind, cfg.template_size)?;
    let (mut f, gt) = gen_grid_tomogram(&t, &cfg.grid_spec(), cfg.seed)?;
    if let Some(snr) = cfg.snr {
        f = add_noise(&f, snr, cfg.noise_seed)?;
    }
    write_volume(&t, &out.join("template.mrc"))?;
    write_volume(&f, &out.join("tomogram.mrc"))?;
    write_ground_truth(&out.join("gt.csv"), &gt)?;
    info!("{} instances in a {:?} tomogram", gt.len(), f.dims());
    Ok(())
}

fn cmd_eval(mut cfg: RunConfig, a: EvalArgs) -> CliResult<()> {
    set(&mut cfg.match_tolerance, a.match_tolerance);
    set(&mut cfg.picking_factors, a.picking_factors);
    set_opt(&mut cfg.output, a.output);
    let axis = triple(&a.symmetry_axis, "symmetry-axis")?;
    match a.symmetry {
        Some(SymmetryArg::None) => cfg.symmetry = None,
        Some(SymmetryArg::Cyclic) => {
            cfg.symmetry = Some(Symmetry::Cyclic {
                n: a.symmetry_order,
                axis,
            })
        }
        Some(SymmetryArg::Axial) => cfg.symmetry = Some(Symmetry::Axial { axis }),
        None => {}
    }
    cfg.validate()?;
    let peaks = read_peaks_file(&a.peaks)?;
    let gt = read_ground_truth(&a.gt)?;
    let report = match_detections(&peaks, &gt.instances, cfg.match_tolerance)?;
    info!(
        "{} of {} ground-truth instances matched by {} detections",
        report.n_matched(),
        report.n_gt(),
        report.n_pred()
    );
    let row = StatsRow::from_report(&a.template_name, &a.method, &report, cfg.symmetry.as_ref())?;
    match &cfg.output {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_stats_csv(File::create(dir.join("stats.csv"))?, &[row])?;
            let curve = detection_curve(&peaks, &gt.instances, cfg.match_tolerance, &cfg.picking_factors)?;
            write_curve_csv(File::create(dir.join("curve.csv"))?, &curve)?;
        }
        None => write_stats_csv(io::stdout().lock(), &[row])?,
    }
    Ok(())
}

fn cmd_bench(mut cfg: RunConfig, a: BenchArgs) -> CliResult<()> {
    set_opt(&mut cfg.image, a.image);
    set_opt(&mut cfg.template, a.template);
    set_opt(&mut cfg.tensorial_template, a.tensorial_template);
    apply_mask(&mut cfg, a.mask);
    apply_peaks(&mut cfg, a.peaks);
    set(&mut cfg.bench_rotations, a.rotations);
    set(&mut cfg.bench_repeats, a.repeats);
    set_opt(&mut cfg.output, a.output);
    cfg.validate()?;
    let f = read_volume(require(&cfg.image, "image")?)?;
    let t = read_volume(require(&cfg.template, "template")?)?;
    let tt = match &cfg.tensorial_template {
        Some(dir) => load_tensorial_template(dir)?,
        None => {
            info!("building the tensorial template from {} rotations", cfg.n_integration);
            build_tensorial_template(&t, &cfg.soft_mask(template_edge(&t)?)?, cfg.n_integration)?
        }
    };
    let m = mask_for_template(&cfg, &tt)?;
    if tt.size() != template_edge(&t)? {
        return Err(Failure::Data(Error::Shape(format!(
            "tensorial template edge {} differs from template edge {}",
            tt.size(),
            t.dims()[0]
        ))));
    }
    let mut rows = bench_tm(&f, &t, &m, &cfg.bench_rotations, cfg.bench_repeats)?;
    rows.extend(bench_ttm(&f, &tt, &m, &cfg.ttm_config(), &cfg.bench_rotations, cfg.bench_repeats)?);
    if cfg.bench_rotations.len() >= 2 {
        info!(
            "tm log-log slope {:.3}, ttm max/min time {:.3}",
            loglog_slope(&rows, TM_METHOD)?,
            time_ratio(&rows, TTM_METHOD)?
        );
    }
    write_bench_csv(data_sink(&cfg.output)?, &rows)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    setup_threads(cli.threads, &cfg)?;
    match cli.command {
        Command::TemplateBuild(a) => cmd_template_build(cfg, a),
        Command::Match(a) => cmd_match(cfg, a),
        Command::TmMatch(a) => cmd_tm_match(cfg, a),
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Bench(a) => cmd_bench(cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
