//! Command-line front end shared by the `mpseg` binary and the tests.
//!
//! Reports go to files or stdout, diagnostics to stderr. Every command that
//! writes an output also writes `<output stem>.run.toml` holding the fully
//! resolved settings; `predict --config` replays such a record.
//!
//! Exit codes: 0 success, 1 usage or invalid argument, 2 data error,
//! 3 plugin or protocol failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::distance::{detect_collisions_limited, weight_map, DistanceUnits, WeightMapParams};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalConfig};
use crate::multiplanar::{
    extract_slices, fit_grid, generate_views, FitMode, SliceInputs, ViewGrid, ViewMode, ViewSet,
};
use crate::phantom::{generate_phantom, presets, PhantomSpec};
use crate::pipeline::{predict_volume, PredictSettings};
use crate::postprocess::{symmetric_cc_filter, Connectivity, SymmetryPairs};
use crate::preprocess::{preprocess, Center};
use crate::segmenter::{
    oracle_corrupted, protocol, Corruption, ExternalPlugin, SegmenterHandle, DEFAULT_TIMEOUT_SECS,
};
use crate::volume::{
    read_intensity, read_labels, read_volume, write_volume, LabelVolume, VolumeGeometry,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PLUGIN: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mpseg", version, about = "Multiplanar volumetric segmentation toolkit")]
pub struct Cli {
    /// Seed for every random choice (view directions, phantom noise, corruption).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log verbosity on stderr; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic image and label pair.
    Phantom(PhantomArgs),
    /// Clip negatives and robust-standardize an intensity volume.
    Preprocess(PreprocessArgs),
    /// Boundary-emphasis loss weights for a label volume.
    Weightmap(WeightmapArgs),
    /// Draw plane normals with a minimum pairwise angle.
    Views(ViewsArgs),
    /// Export one view's slices (and optional labels and weights) in plugin format.
    Sample(SampleArgs),
    /// Full multiplanar inference: sample, segment, reconstruct, fuse.
    Predict(PredictArgs),
    /// Symmetric connected-component clean-up.
    Postprocess(PostprocessArgs),
    /// Inter-class collision detection.
    Collisions(CollisionArgs),
    /// Dice, gap Dice, Hausdorff and collision counts against a reference.
    Evaluate(EvaluateArgs),
    /// Run a plugin on a phantom and check that it speaks the protocol.
    Conformance(ConformanceArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Built-in spec: two-spheres, gap3 or hip.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub preset: Option<String>,
    /// Spec file (TOML).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CenterArg {
    Mean,
    Median,
}

impl From<CenterArg> for Center {
    fn from(c: CenterArg) -> Self {
        match c {
            CenterArg::Mean => Center::Mean,
            CenterArg::Median => Center::Median,
        }
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = CenterArg::Mean)]
    pub center: CenterArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum UnitsArg {
    Voxel,
    Mm,
}

#[derive(Debug, Args)]
pub struct WeightmapArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Start from the eroded recipe (radius 3, w0 20); explicit flags still apply.
    #[arg(long)]
    pub eroded_recipe: bool,
    #[arg(long)]
    pub w0: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub wc: Option<f64>,
    #[arg(long)]
    pub erode_radius: Option<u32>,
    #[arg(long, value_enum, default_value_t = UnitsArg::Voxel)]
    pub units: UnitsArg,
}

#[derive(Debug, Args, Clone)]
pub struct ViewArgs {
    /// Number of views.
    #[arg(long = "views", default_value_t = 6)]
    pub num_views: usize,
    /// Minimum angle between any two view lines, degrees.
    #[arg(long, default_value_t = 60.0)]
    pub min_angle: f64,
    /// Start from the three coordinate axes.
    #[arg(long)]
    pub canonical: bool,
}

impl ViewArgs {
    fn mode(&self) -> ViewMode {
        if self.canonical {
            ViewMode::Canonical
        } else {
            ViewMode::Random
        }
    }
}

#[derive(Debug, Args)]
pub struct ViewsArgs {
    #[command(flatten)]
    pub views: ViewArgs,
    /// Write the view set here (TOML) instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FitArg {
    Infer,
    Train,
}

impl From<FitArg> for FitMode {
    fn from(f: FitArg) -> Self {
        match f {
            FitArg::Infer => FitMode::Infer,
            FitArg::Train => FitMode::Train,
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct GridArgs {
    /// Pixels per side (and slices per view). Fitted from the images if omitted.
    #[arg(long = "d")]
    pub pixels_per_side: Option<usize>,
    /// Side length of the sampling cube in mm. Fitted if omitted.
    #[arg(long = "m")]
    pub side_mm: Option<f64>,
    #[arg(long, value_enum, default_value_t = FitArg::Infer)]
    pub fit: FitArg,
    /// Size the cube by the volume diagonal so no voxel is cut off.
    #[arg(long)]
    pub diagonal: bool,
    /// Extra headers whose geometry joins the fit (dataset-wide sizing).
    #[arg(long, value_delimiter = ',')]
    pub fit_from: Vec<PathBuf>,
    /// Center the sampling cube on the physical origin instead of the image center.
    #[arg(long, conflicts_with = "center")]
    pub literal_origin: bool,
    /// Explicit cube center `x,y,z` in mm.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub center: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub views: ViewArgs,
    /// Which of the generated views to export.
    #[arg(long, default_value_t = 0)]
    pub view_index: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Class count written into the manifest (taken from `--labels` if given).
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Replay a `.run.toml` written by an earlier predict; only `--out` may be changed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub image: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub out: Option<PathBuf>,
    /// Plugin command line; `--input <manifest> --output <dir>` is appended.
    #[arg(long, conflicts_with = "oracle")]
    pub plugin: Option<String>,
    /// Class count the plugin must produce.
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_SECS)]
    pub timeout: f64,
    /// Use an oracle built from this reference label volume.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[command(flatten)]
    pub corruption: CorruptionArgs,
    #[command(flatten)]
    pub views: ViewArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Standardize the image before slicing.
    #[arg(long, value_enum)]
    pub preprocess: Option<CenterArg>,
    /// Worker threads; views run in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Scratch directory for plugin exchange; defaults to `<out stem>.work`.
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    /// Also write each view's reconstructed probabilities.
    #[arg(long)]
    pub emit_intermediate: bool,
}

#[derive(Debug, Args, Clone)]
pub struct CorruptionArgs {
    /// Fraction of boundary-band voxels swapped to the partner class.
    #[arg(long, default_value_t = 0.0)]
    pub swap_fraction: f64,
    #[arg(long, default_value_t = 2.0)]
    pub swap_band: f64,
    /// Pairs for swapping, e.g. `1:2,3:4`.
    #[arg(long, default_value = "")]
    pub swap_pairs: String,
    #[arg(long, default_value_t = 0)]
    pub dilate: u32,
    #[arg(long, default_value_t = 0)]
    pub floaters: usize,
    #[arg(long, default_value_t = 2)]
    pub floater_radius: u32,
}

impl CorruptionArgs {
    pub fn to_corruption(&self, seed: u64) -> Result<Corruption> {
        Ok(Corruption {
            swap_fraction: self.swap_fraction,
            swap_band_vox: self.swap_band,
            pairs: self.swap_pairs.parse::<SymmetryPairs>()?.pairs,
            dilate_vox: self.dilate,
            floaters: self.floaters,
            floater_radius_vox: self.floater_radius,
            seed,
        })
    }
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Symmetric class pairs, e.g. `1:2,3:4`.
    #[arg(long, default_value = "")]
    pub pairs: String,
    #[arg(long, default_value_t = 26)]
    pub connectivity: u32,
    /// Component statistics; defaults to `<output stem>.stats.toml`.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CollisionArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub epsilon: f64,
    /// Cap on the number of listed voxels (the count is always exact).
    #[arg(long, default_value_t = 10_000)]
    pub max_points: usize,
    /// Full report (TOML).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Binary label volume marking colliding voxels.
    #[arg(long)]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub gap_epsilon: f64,
    #[arg(long, default_value_t = 2.0)]
    pub collision_epsilon: f64,
    /// Report file; stdout if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConformanceArgs {
    #[arg(long)]
    pub plugin: String,
    #[arg(long, default_value = "two-spheres")]
    pub preset: String,
    #[arg(long = "views", default_value_t = 6)]
    pub num_views: usize,
    #[arg(long = "d", default_value_t = 32)]
    pub pixels_per_side: usize,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_SECS)]
    pub timeout: f64,
    #[arg(long)]
    pub work_dir: PathBuf,
}

/// Wrapper around the resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord<T> {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub settings: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SegmenterConfig {
    Plugin {
        command: String,
        num_classes: usize,
        timeout_secs: f64,
    },
    Oracle {
        reference: PathBuf,
        corruption: Corruption,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub image: PathBuf,
    pub output: PathBuf,
    pub num_views: usize,
    pub min_angle_deg: f64,
    pub view_mode: ViewMode,
    pub fit_mode: FitMode,
    pub diagonal: bool,
    pub pixels_per_side: usize,
    pub side_mm: f64,
    pub center_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<Center>,
    pub jobs: usize,
    pub work_dir: PathBuf,
    pub emit_intermediate: bool,
    pub segmenter: SegmenterConfig,
    /// Resolved plane normals, replayed verbatim.
    pub views: Vec<[f64; 3]>,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_plugin_error() {
        return EXIT_PLUGIN;
    }
    match e {
        Error::InvalidArgument(_) | Error::InfeasibleViews(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Phantom(a) => cmd_phantom(a, seed),
        Command::Preprocess(a) => cmd_preprocess(a, seed),
        Command::Weightmap(a) => cmd_weightmap(a, seed),
        Command::Views(a) => cmd_views(a, seed),
        Command::Sample(a) => cmd_sample(a, seed),
        Command::Predict(a) => cmd_predict(a, seed),
        Command::Postprocess(a) => cmd_postprocess(a, seed),
        Command::Collisions(a) => cmd_collisions(a, seed),
        Command::Evaluate(a) => cmd_evaluate(a, seed),
        Command::Conformance(a) => cmd_conformance(a, seed),
    }
}

/// `out/labels.toml` -> `out/labels.run.toml`.
pub fn run_record_path(output: &Path) -> PathBuf {
    output.with_extension("run.toml")
}

fn sidecar(output: &Path, suffix: &str) -> PathBuf {
    output.with_extension(suffix)
}

fn write_toml<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = toml::to_string(value)
        .map_err(|e| Error::InvalidArgument(format!("cannot serialize {}: {e}", path.display())))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Header {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write_record<T: Serialize>(output: &Path, command: &str, seed: u64, settings: T) -> Result<()> {
    let record = RunRecord {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        settings,
    };
    write_toml(&record, &run_record_path(output))
}

pub fn read_predict_record(path: &Path) -> Result<RunRecord<PredictConfig>> {
    read_toml(path)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Serialize)]
struct PhantomRecord {
    spec: PhantomSpec,
    image: PathBuf,
    labels: PathBuf,
}

fn cmd_phantom(a: PhantomArgs, seed: Option<u64>) -> Result<()> {
    let mut spec = match (&a.preset, &a.spec) {
        (Some(name), _) => presets::by_name(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset {name:?}")))?,
        (None, Some(path)) => read_toml(path)?,
        (None, None) => unreachable!("clap requires one of --preset/--spec"),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (image, labels) = generate_phantom(&spec)?;
    ensure_parent(&a.image)?;
    ensure_parent(&a.labels)?;
    write_volume(image, &a.image)?;
    write_volume(labels, &a.labels)?;
    let seed = spec.seed;
    write_record(
        &a.labels,
        "phantom",
        seed,
        PhantomRecord {
            spec,
            image: a.image,
            labels: a.labels.clone(),
        },
    )
}

#[derive(Serialize)]
struct PreprocessRecord {
    input: PathBuf,
    output: PathBuf,
    center: Center,
}

fn cmd_preprocess(a: PreprocessArgs, seed: Option<u64>) -> Result<()> {
    let image = read_intensity(&a.input)?;
    let center = Center::from(a.center);
    let (out, stats) = preprocess(&image, center)?;
    ensure_parent(&a.output)?;
    write_volume(out, &a.output)?;
    write_toml(&stats, &sidecar(&a.output, "stats.toml"))?;
    write_record(
        &a.output,
        "preprocess",
        seed.unwrap_or(0),
        PreprocessRecord {
            input: a.input,
            output: a.output.clone(),
            center,
        },
    )
}

#[derive(Serialize)]
struct WeightmapRecord {
    labels: PathBuf,
    output: PathBuf,
    params: WeightMapParams,
    emptied_classes: Vec<u8>,
}

fn cmd_weightmap(a: WeightmapArgs, seed: Option<u64>) -> Result<()> {
    let labels = read_labels(&a.labels)?;
    let mut params = if a.eroded_recipe {
        WeightMapParams::eroded_recipe()
    } else {
        WeightMapParams::default()
    };
    if let Some(w0) = a.w0 {
        params.w0 = w0;
    }
    if let Some(sigma) = a.sigma {
        params.sigma = sigma;
    }
    if let Some(wc) = a.wc {
        params.wc = wc;
    }
    if let Some(r) = a.erode_radius {
        params.erode_radius_vox = r;
    }
    params.units = match a.units {
        UnitsArg::Voxel => DistanceUnits::Voxel,
        UnitsArg::Mm => DistanceUnits::Millimeter,
    };
    let map = weight_map(&labels, &params)?;
    for w in map.warnings() {
        log::warn!("{w}");
    }
    ensure_parent(&a.output)?;
    write_volume(map.weights, &a.output)?;
    write_record(
        &a.output,
        "weightmap",
        seed.unwrap_or(0),
        WeightmapRecord {
            labels: a.labels,
            output: a.output.clone(),
            params: map.params,
            emptied_classes: map.emptied_classes,
        },
    )
}

fn cmd_views(a: ViewsArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let set = generate_views(a.views.num_views, seed, a.views.min_angle, a.views.mode())?;
    let text = toml::to_string(&set).expect("view set serializes");
    match &a.output {
        Some(path) => {
            ensure_parent(path)?;
            fs::write(path, text).map_err(|e| Error::io(path, e))?;
            write_record(path, "views", seed, a.views.mode())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Resolves `(d, m, center)` for an image from the grid flags.
fn resolve_grid(g: &GridArgs, geometry: &VolumeGeometry) -> Result<(usize, f64, [f64; 3])> {
    let mut geometries = vec![geometry.clone()];
    for path in &g.fit_from {
        geometries.push(read_volume(path)?.geometry().clone());
    }
    let fit = fit_grid(&geometries, g.fit.into(), g.diagonal)?;
    let d = g.pixels_per_side.unwrap_or(fit.pixels_per_side);
    let m = g.side_mm.unwrap_or(fit.side_mm);
    let center = match (&g.center, g.literal_origin) {
        (Some(c), _) if c.len() == 3 => [c[0], c[1], c[2]],
        (Some(c), _) => {
            return Err(Error::InvalidArgument(format!("--center needs x,y,z (got {} values)", c.len())))
        }
        (None, true) => [0.0; 3],
        (None, false) => geometry.center_mm(),
    };
    if d < 2 || !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidArgument(format!("grid needs d >= 2 and m > 0 (got d={d}, m={m})")));
    }
    Ok((d, m, center))
}

#[derive(Serialize)]
struct SampleRecord {
    image: PathBuf,
    labels: Option<PathBuf>,
    weights: Option<PathBuf>,
    view_index: usize,
    views: ViewSet,
    grid: ViewGrid,
    num_classes: usize,
}

fn cmd_sample(a: SampleArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let image = read_intensity(&a.image)?;
    let labels = a.labels.as_ref().map(read_labels).transpose()?;
    let weights = a.weights.as_ref().map(read_intensity).transpose()?;
    for g in labels.iter().map(|l| &l.geometry).chain(weights.iter().map(|w| &w.geometry)) {
        if !g.same_lattice(&image.geometry) {
            return Err(Error::Mismatch("labels/weights must share the image lattice".into()));
        }
    }
    let num_classes = match (&labels, a.num_classes) {
        (Some(l), Some(k)) if l.num_classes != k => {
            return Err(Error::Mismatch(format!(
                "--num-classes {k} disagrees with labels ({})",
                l.num_classes
            )))
        }
        (Some(l), _) => l.num_classes,
        (None, Some(k)) => k,
        (None, None) => {
            return Err(Error::InvalidArgument("--num-classes is required without --labels".into()))
        }
    };
    let views = generate_views(a.views.num_views, seed, a.views.min_angle, a.views.mode())?;
    let normal = *views.views.get(a.view_index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "view index {} out of range for {} views",
            a.view_index,
            views.views.len()
        ))
    })?;
    let (d, m, center) = resolve_grid(&a.grid, &image.geometry)?;
    let grid = ViewGrid::new(normal, center, m, d)?;
    let batch = extract_slices(
        &SliceInputs {
            image: &image,
            labels: labels.as_ref(),
            weights: weights.as_ref(),
        },
        &grid,
    );
    let manifest = protocol::write_batch(&batch, num_classes, &a.out_dir)?;
    write_record(
        &manifest,
        "sample",
        seed,
        SampleRecord {
            image: a.image,
            labels: a.labels,
            weights: a.weights,
            view_index: a.view_index,
            views,
            grid,
            num_classes,
        },
    )
}

fn build_handle(config: &SegmenterConfig) -> Result<(SegmenterHandle, usize)> {
    match config {
        SegmenterConfig::Plugin {
            command,
            num_classes,
            timeout_secs,
        } => {
            let mut plugin = ExternalPlugin::from_command_line(command)?;
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                return Err(Error::InvalidArgument(format!("timeout {timeout_secs} must be > 0")));
            }
            plugin.timeout = Duration::from_secs_f64(*timeout_secs);
            Ok((SegmenterHandle::External(plugin), *num_classes))
        }
        SegmenterConfig::Oracle {
            reference,
            corruption,
        } => {
            let reference = read_labels(reference)?;
            let k = reference.num_classes;
            Ok((oracle_corrupted(&reference, corruption)?, k))
        }
    }
}

fn default_work_dir(output: &Path) -> PathBuf {
    output.with_extension("work")
}

fn predict_config_from_args(a: &PredictArgs, seed: u64) -> Result<PredictConfig> {
    let image_path = a.image.clone().expect("clap requires --image");
    let output = a.out.clone().expect("clap requires --out");
    let image = read_intensity(&image_path)?;
    let segmenter = match (&a.plugin, &a.oracle) {
        (Some(command), None) => SegmenterConfig::Plugin {
            command: command.clone(),
            num_classes: a.num_classes.ok_or_else(|| {
                Error::InvalidArgument("--num-classes is required with --plugin".into())
            })?,
            timeout_secs: a.timeout,
        },
        (None, Some(reference)) => SegmenterConfig::Oracle {
            reference: reference.clone(),
            corruption: a.corruption.to_corruption(seed)?,
        },
        _ => {
            return Err(Error::InvalidArgument(
                "exactly one of --plugin or --oracle is required".into(),
            ))
        }
    };
    let (d, m, center) = resolve_grid(&a.grid, &image.geometry)?;
    let views = generate_views(a.views.num_views, seed, a.views.min_angle, a.views.mode())?;
    Ok(PredictConfig {
        image: image_path,
        work_dir: a.work_dir.clone().unwrap_or_else(|| default_work_dir(&output)),
        output,
        num_views: a.views.num_views,
        min_angle_deg: a.views.min_angle,
        view_mode: a.views.mode(),
        fit_mode: a.grid.fit.into(),
        diagonal: a.grid.diagonal,
        pixels_per_side: d,
        side_mm: m,
        center_mm: center,
        preprocess: a.preprocess.map(Center::from),
        jobs: a.jobs.max(1),
        emit_intermediate: a.emit_intermediate,
        segmenter,
        views: views.views,
    })
}

/// Runs a resolved prediction and writes the fused labels, the intermediate
/// views if requested, and the run record.
pub fn run_predict(config: &PredictConfig, seed: u64) -> Result<LabelVolume> {
    let mut image = read_intensity(&config.image)?;
    if let Some(center) = config.preprocess {
        image = preprocess(&image, center)?.0;
    }
    let (handle, num_classes) = build_handle(&config.segmenter)?;
    let views = ViewSet {
        views: config.views.clone(),
        seed,
        min_pairwise_angle_deg: config.min_angle_deg,
    };
    let settings = PredictSettings {
        pixels_per_side: config.pixels_per_side,
        side_mm: config.side_mm,
        center_mm: Some(config.center_mm),
        num_classes,
        jobs: config.jobs,
        work_dir: config.work_dir.clone(),
        keep_views: config.emit_intermediate,
    };
    log::info!(
        "predicting {} views at d={} m={} mm",
        views.views.len(),
        settings.pixels_per_side,
        settings.side_mm
    );
    let prediction = predict_volume(&image, &handle, &views, &settings)?;
    ensure_parent(&config.output)?;
    for (i, probs) in prediction.views.into_iter().enumerate() {
        let path = config.work_dir.join(format!("view_{i:02}.probs.toml"));
        ensure_parent(&path)?;
        write_volume(probs, &path)?;
    }
    write_volume(prediction.labels.clone(), &config.output)?;
    write_record(&config.output, "predict", seed, config.clone())?;
    Ok(prediction.labels)
}

fn cmd_predict(a: PredictArgs, seed: Option<u64>) -> Result<()> {
    let (config, seed) = match &a.config {
        Some(path) => {
            let record = read_predict_record(path)?;
            let mut config = record.settings;
            if let Some(out) = &a.out {
                config.output = out.clone();
                if a.work_dir.is_none() {
                    config.work_dir = default_work_dir(out);
                }
            }
            if let Some(work) = &a.work_dir {
                config.work_dir = work.clone();
            }
            (config, seed.unwrap_or(record.seed))
        }
        None => {
            let seed = seed.unwrap_or(0);
            (predict_config_from_args(&a, seed)?, seed)
        }
    };
    run_predict(&config, seed).map(|_| ())
}

#[derive(Serialize)]
struct PostprocessRecord {
    labels: PathBuf,
    output: PathBuf,
    pairs: SymmetryPairs,
    connectivity: u32,
    stats: PathBuf,
}

fn cmd_postprocess(a: PostprocessArgs, seed: Option<u64>) -> Result<()> {
    let labels = read_labels(&a.labels)?;
    let pairs: SymmetryPairs = a.pairs.parse()?;
    let connectivity = Connectivity::from_count(a.connectivity)?;
    let (out, stats) = symmetric_cc_filter(&labels, &pairs, connectivity)?;
    log::info!(
        "relabeled {} components, removed {}",
        stats.relabeled.len(),
        stats.removed.len()
    );
    ensure_parent(&a.output)?;
    write_volume(out, &a.output)?;
    let stats_path = a.stats.clone().unwrap_or_else(|| sidecar(&a.output, "stats.toml"));
    write_toml(&stats, &stats_path)?;
    write_record(
        &a.output,
        "postprocess",
        seed.unwrap_or(0),
        PostprocessRecord {
            labels: a.labels,
            output: a.output.clone(),
            pairs,
            connectivity: connectivity.count(),
            stats: stats_path,
        },
    )
}

fn eps_key(epsilon: f64) -> String {
    if epsilon.fract() == 0.0 && epsilon.is_finite() {
        format!("{}", epsilon as i64)
    } else {
        format!("{epsilon:?}")
    }
}

#[derive(Serialize)]
struct CollisionRecord {
    labels: PathBuf,
    epsilon: f64,
    max_points: usize,
}

fn cmd_collisions(a: CollisionArgs, seed: Option<u64>) -> Result<()> {
    if !(a.epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon {} must be >= 0", a.epsilon)));
    }
    let labels = read_labels(&a.labels)?;
    let report = detect_collisions_limited(&labels, a.epsilon, a.max_points);
    println!("collisions.count.eps{} = {}", eps_key(a.epsilon), report.count);
    if let Some(map_path) = &a.map {
        let field = crate::distance::class_distances(&labels);
        let marks = labels
            .labels
            .iter()
            .zip(&field.d2)
            .map(|(&l, &d2)| u8::from(l != 0 && d2 <= a.epsilon))
            .collect();
        ensure_parent(map_path)?;
        write_volume(LabelVolume::new(labels.geometry.clone(), marks, 2)?, map_path)?;
    }
    if let Some(path) = &a.output {
        write_toml(&report, path)?;
        write_record(
            path,
            "collisions",
            seed.unwrap_or(0),
            CollisionRecord {
                labels: a.labels,
                epsilon: a.epsilon,
                max_points: a.max_points,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluateRecord {
    pred: PathBuf,
    truth: PathBuf,
    gap_epsilon: f64,
    collision_epsilon: f64,
}

fn cmd_evaluate(a: EvaluateArgs, seed: Option<u64>) -> Result<()> {
    let pred = read_labels(&a.pred)?;
    let truth = read_labels(&a.truth)?;
    let config = EvalConfig {
        gap_epsilon: a.gap_epsilon,
        collision_epsilon: a.collision_epsilon,
    };
    let mut report = evaluate(&pred, &truth, &config)?;
    report.metadata.insert("pred".into(), file_name(&a.pred));
    report.metadata.insert("truth".into(), file_name(&a.truth));
    let text = report.to_text();
    match &a.output {
        Some(path) => {
            ensure_parent(path)?;
            fs::write(path, &text).map_err(|e| Error::io(path, e))?;
            write_record(
                path,
                "evaluate",
                seed.unwrap_or(0),
                EvaluateRecord {
                    pred: a.pred,
                    truth: a.truth,
                    gap_epsilon: a.gap_epsilon,
                    collision_epsilon: a.collision_epsilon,
                },
            )
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_conformance(a: ConformanceArgs, seed: Option<u64>) -> Result<()> {
    let mut spec = presets::by_name(&a.preset)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown preset {:?}", a.preset)))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (image, labels) = generate_phantom(&spec)?;
    let image_path = a.work_dir.join("phantom_image.toml");
    fs::create_dir_all(&a.work_dir).map_err(|e| Error::io(&a.work_dir, e))?;
    write_volume(image, &image_path)?;
    let geometry = labels.geometry.clone();
    let views = generate_views(a.num_views, seed.unwrap_or(0), 0.0, ViewMode::Canonical)?;
    let config = PredictConfig {
        image: image_path,
        output: a.work_dir.join("fused.toml"),
        num_views: a.num_views,
        min_angle_deg: 0.0,
        view_mode: ViewMode::Canonical,
        fit_mode: FitMode::Infer,
        diagonal: false,
        pixels_per_side: a.pixels_per_side,
        side_mm: geometry.extent_mm().iter().copied().fold(0.0, f64::max),
        center_mm: geometry.center_mm(),
        preprocess: None,
        jobs: 1,
        work_dir: a.work_dir.join("exchange"),
        emit_intermediate: false,
        segmenter: SegmenterConfig::Plugin {
            command: a.plugin.clone(),
            num_classes: labels.num_classes,
            timeout_secs: a.timeout,
        },
        views: views.views,
    };
    let fused = run_predict(&config, seed.unwrap_or(0))?;
    let dice = crate::metrics::dice(&fused, &labels)?;
    println!("conformance = pass");
    println!("views = {}", a.num_views);
    println!("num_classes = {}", labels.num_classes);
    match dice.macro_avg {
        Some(d) => println!("dice.macro = {d:?}"),
        None => println!("dice.macro = none"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_paths() {
        assert_eq!(run_record_path(Path::new("out/labels.toml")), PathBuf::from("out/labels.run.toml"));
        assert_eq!(sidecar(Path::new("a/b.toml"), "stats.toml"), PathBuf::from("a/b.stats.toml"));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["mpseg", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["mpseg", "--help"]), EXIT_OK);
        assert_eq!(run(["mpseg", "views", "--views", "7", "--min-angle", "60"]), EXIT_USAGE);
    }

    #[test]
    fn data_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.toml");
        let out = dir.path().join("o.toml");
        assert_eq!(
            run([
                "mpseg",
                "postprocess",
                "--labels",
                missing.to_str().unwrap(),
                "--output",
                out.to_str().unwrap()
            ]),
            EXIT_DATA
        );
    }

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(exit_code(&Error::PluginTimeout { seconds: 1.0 }), EXIT_PLUGIN);
        assert_eq!(exit_code(&Error::Geometry("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), EXIT_USAGE);
    }
}
