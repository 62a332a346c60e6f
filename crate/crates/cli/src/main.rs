//! `cmif`: alignment runs, CMIF map dumps, benchmark sweeps and synthetic
//! evaluation.

mod raster;
mod settings;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cmif::bench::{records_to_csv, sweep, Method, SweepConfig};
use cmif::eval::{run_eval, synthetic_pair, EvalParams};
use cmif::mapio::{diff, read_binary, write_binary, write_csv};
use cmif::oracle::direct_mi_map;
use cmif::synth::Modality;
use cmif::{
    align_prepared, cmif_map, fit_kmeans, make_circular_mask, quantize, AlignmentInputs,
    AlignmentReport, Error, GridShape, IntensityImage, Mask,
};
use serde::Serialize;

use settings::{FileConfig, Resolved};

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub const IO: u8 = 1;
    pub const DEGENERATE: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const MAPS_DIFFER: u8 = 4;

    pub fn io(message: String) -> Self {
        Self {
            code: Self::IO,
            message,
        }
    }

    /// Bad flags or inconsistent inputs; same code clap uses.
    pub fn usage(message: String) -> Self {
        Self { code: 2, message }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Json(_) | Error::Format(_) => Self::IO,
            Error::NumericalHealth { .. } | Error::ChecksumMismatch { .. } => Self::NUMERICAL,
            _ => Self::DEGENERATE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "cmif",
    version,
    about = "Mutual information at every displacement, and rigid multimodal alignment"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with defaults for `k`, `angles`, `refine`, `gamma`, `seed`,
    /// `threads`, `kmeans_batch`, `kmeans_iter`. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rigidly align a floating image onto a reference image.
    Align(AlignArgs),
    /// Compute one CMIF map at angle 0.
    CmifMap(MapArgs),
    /// Time the frequency-domain and direct methods over sizes and k.
    Bench(BenchArgs),
    /// Success rate on synthetic rigid pairs.
    Eval(EvalArgs),
    /// Compare two map files.
    Diff(DiffArgs),
    /// Write a synthetic reference/floating pair with its ground truth.
    Synth(SynthArgs),
}

/// Flags shared by commands that quantize images.
#[derive(Args, Clone, Default)]
struct QuantFlags {
    /// Quantization levels per image (at least 2).
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    k: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct SearchFlags {
    /// Equispaced grid angles over [-pi, pi).
    #[arg(long)]
    angles: Option<usize>,
    /// Random refinement angles around the best grid angle.
    #[arg(long)]
    refine: Option<usize>,
    /// Overlap gate as a fraction of the largest overlap.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct MaskFlags {
    /// Mask image for the reference; nonzero is inside.
    #[arg(long)]
    ref_mask: Option<PathBuf>,
    /// Mask image for the floating image; nonzero is inside.
    #[arg(long)]
    flt_mask: Option<PathBuf>,
    /// Use the inscribed disc as mask where no mask file is given.
    #[arg(long)]
    circular: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Timing {
    /// Only the MI computation and search.
    Map,
    /// Quantization included.
    Pipeline,
}

#[derive(Args)]
struct AlignArgs {
    reference: PathBuf,
    floating: PathBuf,
    #[command(flatten)]
    quant: QuantFlags,
    #[command(flatten)]
    search: SearchFlags,
    #[command(flatten)]
    masks: MaskFlags,
    /// JSON result path (default: stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// PNG with the reference in red and the aligned floating image in green.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Add wall-clock timing to the result.
    #[arg(long, value_enum)]
    timing: Option<Timing>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Fft,
    Direct,
}

#[derive(Args)]
struct MapArgs {
    reference: PathBuf,
    floating: PathBuf,
    #[command(flatten)]
    quant: QuantFlags,
    #[command(flatten)]
    masks: MaskFlags,
    #[arg(long, value_enum, default_value = "fft")]
    method: MethodArg,
    /// Binary map file.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// One row per displacement.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print wall-clock timing to stderr.
    #[arg(long, value_enum)]
    timing: Option<Timing>,
}

#[derive(Args)]
struct BenchArgs {
    /// Reference side lengths; floating images are half as large.
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 256, 512])]
    sizes: Vec<usize>,
    #[arg(long = "k", value_delimiter = ',', default_values_t = [2usize, 4, 8, 16])]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values = ["fft", "direct"])]
    methods: Vec<String>,
    /// Seconds allowed for one direct map; larger projected runs are skipped.
    #[arg(long, default_value_t = 600.0)]
    budget: f64,
    /// Frequency-domain runs whose working set would exceed this are skipped.
    #[arg(long, default_value_t = 2048)]
    memory_cap_mb: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path (default: stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Image size as `HxW` or a single side length.
    #[arg(long, default_value = "256x256", value_parser = parse_shape)]
    size: GridShape,
    /// Ground-truth angles are drawn from plus or minus this many radians.
    #[arg(long, default_value_t = std::f64::consts::PI)]
    angle_range: f64,
    /// Ground-truth translations as a fraction of the image size.
    #[arg(long, default_value_t = 0.1)]
    translation: f64,
    #[arg(long, default_value = "gamma-remap", value_parser = parse_modality)]
    modality_sim: Modality,
    /// Fraction of pixels replaced by uniform noise.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[command(flatten)]
    quant: QuantFlags,
    #[command(flatten)]
    search: SearchFlags,
    /// JSON report path (default: stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Per-trial CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DiffArgs {
    a: PathBuf,
    b: PathBuf,
    /// Largest MI difference accepted on cells valid in both maps.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for `ref.png`, `flt.png` and `truth.json`.
    out_dir: PathBuf,
    #[arg(long, default_value = "128x128", value_parser = parse_shape)]
    size: GridShape,
    #[arg(long, default_value_t = std::f64::consts::PI)]
    angle_range: f64,
    #[arg(long, default_value_t = 0.1)]
    translation: f64,
    #[arg(long, default_value = "gamma-remap", value_parser = parse_modality)]
    modality_sim: Modality,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_shape(s: &str) -> Result<GridShape, String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    let (h, w) = match s.split_once(['x', 'X']) {
        Some((h, w)) => (parse(h)?, parse(w)?),
        None => {
            let v = parse(s)?;
            (v, v)
        }
    };
    GridShape::new(h, w).map_err(|e| e.to_string())
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse()
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

/// Writes `text` to `path`, or stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn masks(
    flags: &MaskFlags,
    a: &IntensityImage,
    b: &IntensityImage,
) -> Result<(Mask, Mask), Failure> {
    let pick = |path: &Option<PathBuf>, shape: GridShape| -> Result<Mask, Failure> {
        match path {
            Some(p) => raster::load_mask(p, shape),
            None if flags.circular => Ok(make_circular_mask(shape)),
            None => Ok(Mask::full(shape)),
        }
    };
    Ok((
        pick(&flags.ref_mask, a.shape())?,
        pick(&flags.flt_mask, b.shape())?,
    ))
}

#[derive(Serialize)]
struct TimingReport {
    mode: &'static str,
    seconds: f64,
}

#[derive(Serialize)]
struct AlignOutput {
    #[serde(flatten)]
    result: AlignmentReport,
    config: Resolved,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<TimingReport>,
}

fn cmd_align(args: &AlignArgs, file: &FileConfig, threads: Option<usize>) -> Result<(), Failure> {
    let resolved = Resolved::new(file, &args.quant, &args.search, threads)?;
    let config = resolved.alignment();
    let a = raster::load_image(&args.reference)?;
    let b = raster::load_image(&args.floating)?;
    let (ma, mb) = masks(&args.masks, &a, &b)?;

    let start = Instant::now();
    let inputs = AlignmentInputs::prepare(&a, &ma, &b, &mb, &config)?;
    let search_start = Instant::now();
    let result = align_prepared(&inputs, &config)?;
    let timing = args.timing.map(|t| match t {
        Timing::Map => TimingReport {
            mode: "map",
            seconds: search_start.elapsed().as_secs_f64(),
        },
        Timing::Pipeline => TimingReport {
            mode: "pipeline",
            seconds: start.elapsed().as_secs_f64(),
        },
    });

    let out = AlignOutput {
        result: result.report(&config),
        config: resolved,
        timing,
    };
    let mut json = serde_json::to_string_pretty(&out).map_err(Error::from)?;
    json.push('\n');
    emit(args.output.as_deref(), &json)?;
    if let Some(p) = &args.overlay {
        raster::write_overlay(p, &a, &b, &result.transform)?;
    }
    Ok(())
}

fn cmd_map(args: &MapArgs, file: &FileConfig, threads: Option<usize>) -> Result<(), Failure> {
    let resolved = Resolved::new(file, &args.quant, &SearchFlags::default(), threads)?;
    let a = raster::load_image(&args.reference)?;
    let b = raster::load_image(&args.floating)?;
    let (ma, mb) = masks(&args.masks, &a, &b)?;

    let start = Instant::now();
    let kmeans = resolved.kmeans();
    let model_a = fit_kmeans(&a, &ma, resolved.k, kmeans, resolved.seed)?;
    let model_b = fit_kmeans(&b, &mb, resolved.k, kmeans, resolved.seed.wrapping_add(1))?;
    let (la, lb) = (quantize(&a, &model_a)?, quantize(&b, &model_b)?);
    let map_start = Instant::now();
    let map = match args.method {
        MethodArg::Fft => cmif_map(&la, &ma, &lb, &mb)?,
        MethodArg::Direct => direct_mi_map(&la, &ma, &lb, &mb)?,
    };
    if let Some(t) = args.timing {
        let (mode, from) = match t {
            Timing::Map => ("map", map_start),
            Timing::Pipeline => ("pipeline", start),
        };
        eprintln!("timing {mode}: {:.6} s", from.elapsed().as_secs_f64());
    }

    if let Some(p) = &args.output {
        let mut w = create(p)?;
        write_binary(&map, &mut w)?;
        w.flush()?;
    }
    if let Some(p) = &args.csv {
        let mut w = create(p)?;
        write_csv(&map, &mut w)?;
        w.flush()?;
    }
    let d = map.domain();
    eprintln!(
        "map {} cells, origin ({}, {}), {} valid, max N {}",
        d.extent(),
        d.origin().row,
        d.origin().col,
        map.valid_count(),
        map.max_n()
    );
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let methods = args
        .methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(Failure::usage))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(&k) = args.ks.iter().find(|&&k| k < 2) {
        return Err(Failure::usage(format!("k = {k} (need at least 2)")));
    }
    let config = SweepConfig {
        sizes: args.sizes.clone(),
        ks: args.ks.clone(),
        methods,
        budget: args.budget,
        memory_cap: args.memory_cap_mb << 20,
        seed: args.seed,
    };
    let records = sweep(&config, |r| eprintln!("{}", r.csv_row()))?;
    emit(args.output.as_deref(), &records_to_csv(&records))
}

fn cmd_eval(args: &EvalArgs, file: &FileConfig, threads: Option<usize>) -> Result<(), Failure> {
    let mut resolved = Resolved::new(file, &args.quant, &args.search, threads)?;
    // success-rate runs use the accuracy-oriented k-means unless configured
    resolved.kmeans_batch = file
        .kmeans_batch
        .unwrap_or(cmif::KMeansParams::ACCURACY.batch_size);
    resolved.kmeans_iter = file
        .kmeans_iter
        .unwrap_or(cmif::KMeansParams::ACCURACY.max_iter);
    if args.search.angles.is_none() && file.angles.is_none() {
        resolved.angles = 100;
    }
    let params = EvalParams {
        trials: args.trials,
        seed: resolved.seed,
        size: args.size,
        angle_range: args.angle_range,
        translation_fraction: args.translation,
        modality: args.modality_sim,
        noise_rate: args.noise,
        config: resolved.alignment(),
    };
    let report = run_eval(&params, |t| {
        eprintln!(
            "seed {} corner error {:.3} px {}",
            t.seed,
            t.corner_error,
            if t.success { "ok" } else { "miss" }
        )
    })?;
    if let Some(p) = &args.csv {
        emit(Some(p), &report.to_csv())?;
    }
    let mut json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    json.push('\n');
    emit(args.output.as_deref(), &json)?;
    eprintln!(
        "success rate {:.3}, mean corner error {:.3} px, time p50 {:.2} s, p90 {:.2} s",
        report.success_rate, report.mean_corner_error, report.time_p50, report.time_p90
    );
    Ok(())
}

fn cmd_diff(args: &DiffArgs) -> Result<(), Failure> {
    let read = |p: &Path| -> Result<_, Failure> {
        let f = File::open(p).map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
        Ok(read_binary(std::io::BufReader::new(f))?)
    };
    let d = diff(&read(&args.a)?, &read(&args.b)?);
    println!(
        "same_domain={} n_mismatches={} valid_mismatches={} max_mi_diff={:e}",
        d.same_domain, d.n_mismatches, d.valid_mismatches, d.max_mi_diff
    );
    if d.within(args.tol) {
        Ok(())
    } else {
        Err(Failure {
            code: Failure::MAPS_DIFFER,
            message: format!("maps differ beyond tolerance {:e}", args.tol),
        })
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    let params = EvalParams {
        size: args.size,
        angle_range: args.angle_range,
        translation_fraction: args.translation,
        modality: args.modality_sim,
        noise_rate: args.noise,
        ..EvalParams::default()
    };
    let pair = synthetic_pair(&params, args.seed)?;
    std::fs::create_dir_all(&args.out_dir)?;
    raster::save_image(&args.out_dir.join("ref.png"), &pair.reference)?;
    raster::save_image(&args.out_dir.join("flt.png"), &pair.floating)?;
    let mut json = serde_json::to_string_pretty(&pair.truth).map_err(Error::from)?;
    json.push('\n');
    emit(Some(&args.out_dir.join("truth.json")), &json)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::usage("threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Align(a) => cmd_align(a, &file, threads),
        Command::CmifMap(a) => cmd_map(a, &file, threads),
        Command::Bench(a) => cmd_bench(a),
        Command::Eval(a) => cmd_eval(a, &file, threads),
        Command::Diff(a) => cmd_diff(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
