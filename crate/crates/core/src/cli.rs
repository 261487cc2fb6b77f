//! Batch front-end: `synth`, `generate`, `distort`, `rectify`, `split` and
//! `evaluate`.
//!
//! Every artefact-producing command writes `manifest.json` (image paths
//! relative to it) and `run.json` (seed and realised configuration) into its
//! output directory. Entries are processed in parallel on a dedicated pool
//! and written in input order, so the worker count never changes output.
//!
//! Exit codes: 0 success, 1 some entries failed, 2 usage or config error.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Component, Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use image::RgbImage;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::distort::{apply_recipe, DistortionRecipe, DistortionStep};
use crate::geometry::Quad;
use crate::metrics::{macro_auroc, MetricsError, ScoredPredictions, N_LABELS};
use crate::rectify::{rectify_pipeline, RectifyConfig, RectifyMode, RectifyReport};
use crate::render::{render_record, GridConfig, PaperImage};
use crate::seeds;
use crate::synth::synthetic_record;
use crate::waveform::{
    load_record, read_manifest, write_manifest, write_record, DatasetManifest, Diagnosis, ManifestEntry,
    ManifestError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("output directory {} is not empty (pass --force to overwrite)", .0.display())]
    NonEmptyOutDir(PathBuf),
    #[error("no parseable records in {}", .0.display())]
    NoRecords(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("missing prediction for id {0}")]
    MissingPrediction(String),
    #[error("bad predictions file: {0}")]
    BadPredictions(String),
    #[error("{entries} entries cannot fill {k} folds")]
    TooFewEntries { entries: usize, k: u32 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.to_path_buf();
    move |source| CliError::Io { path, source }
}

#[derive(Debug, Parser)]
#[command(name = "paperecg", version, about = "Paper ECG image synthesis, distortion, rectification and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; output does not depend on this.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    CropOnly,
    Full,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic 12-lead records (CSV + JSON sidecar).
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 100)]
        fs: u32,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
    },
    /// Render waveform records to clean paper images.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Directory of `<id>.csv` + `<id>.json` records.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Render a seeded subset of this size.
        #[arg(long)]
        count: Option<usize>,
        /// GridConfig JSON.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Apply a distortion recipe template to every manifest entry.
    Distort {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// JSON object `{"steps": [...]}`.
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Locate, rectify and enhance every manifest image.
    Rectify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        /// RectifyConfig JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Assign cross-validation folds.
    Split {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: u32,
        #[arg(long)]
        seed: u64,
    },
    /// Score a prediction CSV against manifest labels.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// CSV with header `id,MI,AF,HYP,CD,STTC`.
        #[arg(long)]
        predictions: PathBuf,
        /// Read score columns named `<label><suffix>` instead.
        #[arg(long, default_value = "")]
        column_suffix: String,
        /// Directory for metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Result of a successful command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: Vec<EntryFailure>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub id: String,
    pub error: String,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
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
    match run(cli) {
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("failed: {}: {}", f.id, f.error);
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Synth {
            common,
            seed,
            count,
            fs,
            duration,
        } => cmd_synth(&common, seed, count, fs, duration),
        Command::Generate {
            common,
            input,
            seed,
            count,
            grid,
        } => {
            let grid = match grid {
                Some(p) => read_json_config::<GridConfig>(&p)?,
                None => GridConfig::default(),
            };
            grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            cmd_generate(&common, &input, seed, count, &grid)
        }
        Command::Distort {
            common,
            manifest,
            recipe,
            seed,
        } => {
            let template = read_json_config::<RecipeTemplate>(&recipe)?;
            cmd_distort(&common, &manifest, &template, seed)
        }
        Command::Rectify {
            common,
            manifest,
            mode,
            config,
        } => {
            let cfg = match config {
                Some(p) => read_json_config::<RectifyConfig>(&p)?,
                None => RectifyConfig::default(),
            };
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let mode = match mode {
                ModeArg::CropOnly => RectifyMode::CropOnly,
                ModeArg::Full => RectifyMode::Full,
            };
            cmd_rectify(&common, &manifest, &cfg, mode)
        }
        Command::Split {
            out,
            force,
            manifest,
            k,
            seed,
        } => cmd_split(&out, force, &manifest, k, seed),
        Command::Evaluate {
            manifest,
            predictions,
            column_suffix,
            out,
        } => {
            let report = cmd_evaluate(&manifest, &predictions, &column_suffix)?;
            let text = serde_json::to_string_pretty(&report).expect("metrics serialise") + "\n";
            print!("{text}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let path = dir.join("metrics.json");
                fs::write(&path, text).map_err(io_err(&path))?;
            }
            Ok(Outcome::default())
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Creates `out`, refusing a non-empty directory unless `force`. With
/// `force`, the subdirectories this tool writes are cleared.
fn prepare_out(out: &Path, force: bool, owned: &[&str]) -> Result<(), CliError> {
    if out.exists() {
        let non_empty = fs::read_dir(out).map_err(io_err(out))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::NonEmptyOutDir(out.to_path_buf()));
        }
        for sub in owned {
            let p = out.join(sub);
            if p.is_dir() {
                fs::remove_dir_all(&p).map_err(io_err(&p))?;
            }
        }
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    for sub in owned {
        let p = out.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    Ok(())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    if workers == 0 {
        return Err(CliError::Usage("--workers must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serialises") + "\n";
    fs::write(path, text).map_err(io_err(path))
}

fn save_png(img: &RgbImage, path: &Path) -> Result<(), String> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn load_png(path: &Path) -> Result<RgbImage, String> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn safe_id(id: &str) -> Result<(), String> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(format!("id {id:?} is not a safe file name"))
    }
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    match manifest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn absolute(p: &Path) -> PathBuf {
    let p = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().unwrap_or_default().join(p)
    };
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// `target` expressed relative to directory `base`, with `/` separators.
fn relative_path(target: &Path, base: &Path) -> String {
    let t = absolute(target);
    let b = absolute(base);
    let tc: Vec<_> = t.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(a, b)| a == b).count();
    let mut parts: Vec<String> = vec!["..".into(); bc.len() - common];
    parts.extend(tc[common..].iter().map(|c| c.as_os_str().to_string_lossy().into_owned()));
    parts.join("/")
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    let m = read_manifest(path)?;
    m.validate()?;
    Ok(m)
}

#[derive(Serialize)]
struct RunRecord<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: C,
    entries: usize,
    failures: &'a [EntryFailure],
}

fn write_run<C: Serialize>(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    config: C,
    entries: usize,
    failures: &[EntryFailure],
) -> Result<(), CliError> {
    write_json(
        &out.join("run.json"),
        &RunRecord {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            entries,
            failures,
        },
    )
}

// ---------------------------------------------------------------------------
// Commands

pub fn cmd_synth(common: &Common, seed: u64, count: usize, fs_hz: u32, duration: f64) -> Result<Outcome, CliError> {
    if count == 0 || fs_hz == 0 || !(duration >= 2.5) {
        return Err(CliError::Usage("need count >= 1, fs >= 1 and duration >= 2.5 s".into()));
    }
    prepare_out(&common.out, common.force, &[])?;
    let pool = pool(common.workers)?;
    let results: Vec<Result<(), String>> = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let id = format!("rec{i:05}");
                let rec = synthetic_record(&id, fs_hz, duration, seed, None);
                write_record(&rec, &common.out.join(format!("{id}.csv"))).map_err(|e| e.to_string())
            })
            .collect()
    });
    let failures: Vec<EntryFailure> = results
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| {
            r.err().map(|error| EntryFailure {
                id: format!("rec{i:05}"),
                error,
            })
        })
        .collect();
    info!("synthesised {} records", count - failures.len());
    Ok(Outcome { failures })
}

pub fn cmd_generate(
    common: &Common,
    input: &Path,
    seed: u64,
    count: Option<usize>,
    grid: &GridConfig,
) -> Result<Outcome, CliError> {
    let mut csvs: Vec<PathBuf> = fs::read_dir(input)
        .map_err(io_err(input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(CliError::NoRecords(input.to_path_buf()));
    }
    if let Some(n) = count {
        if n == 0 {
            return Err(CliError::Usage("--count must be >= 1".into()));
        }
        if n < csvs.len() {
            let mut keyed: Vec<(u64, PathBuf)> = csvs
                .into_iter()
                .map(|p| (seeds::for_entry(seed, &p.file_name().unwrap().to_string_lossy()), p))
                .collect();
            keyed.sort();
            keyed.truncate(n);
            csvs = keyed.into_iter().map(|(_, p)| p).collect();
            csvs.sort();
        }
    }

    prepare_out(&common.out, common.force, &["images"])?;
    let pool = pool(common.workers)?;
    let results: Vec<Result<ManifestEntry, EntryFailure>> = pool.install(|| {
        csvs.par_iter()
            .map(|csv| {
                let stem = csv.file_stem().unwrap().to_string_lossy().into_owned();
                let fail = |error: String| EntryFailure { id: stem.clone(), error };
                let rec = load_record(csv).map_err(|e| fail(e.to_string()))?;
                let id = if rec.id.is_empty() { stem.clone() } else { rec.id.clone() };
                safe_id(&id).map_err(fail)?;
                let paper = render_record(&rec, grid).map_err(|e| fail(e.to_string()))?;
                let rel = format!("images/{id}.png");
                save_png(&paper.pixels, &common.out.join(&rel)).map_err(fail)?;
                Ok(ManifestEntry {
                    id,
                    image_path: rel,
                    labels: rec.labels,
                    corners: Some(paper.corners),
                    recipe: None,
                    fold: None,
                })
            })
            .collect()
    });
    let (entries, failures) = partition(results);
    if entries.is_empty() {
        return Err(CliError::NoRecords(input.to_path_buf()));
    }
    let manifest = DatasetManifest::new(entries);
    if let Err(e) = manifest.validate() {
        return Err(CliError::Manifest(e));
    }
    write_manifest(&manifest, &common.out.join("manifest.json"))?;
    write_run(
        &common.out,
        "generate",
        Some(seed),
        json!({ "count": count, "grid": grid }),
        manifest.len(),
        &failures,
    )?;
    info!("generated {} images", manifest.len());
    Ok(Outcome { failures })
}

fn partition<T>(results: Vec<Result<T, EntryFailure>>) -> (Vec<T>, Vec<EntryFailure>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(f) => failed.push(f),
        }
    }
    (ok, failed)
}

/// Distortion steps without a seed; each entry gets its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeTemplate {
    pub steps: Vec<DistortionStep>,
}

pub fn cmd_distort(common: &Common, manifest_path: &Path, template: &RecipeTemplate, seed: u64) -> Result<Outcome, CliError> {
    let manifest = load_manifest(manifest_path)?;
    let src_dir = manifest_dir(manifest_path);
    prepare_out(&common.out, common.force, &["images"])?;
    let pool = pool(common.workers)?;
    let results: Vec<Result<ManifestEntry, EntryFailure>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let fail = |error: String| EntryFailure {
                    id: entry.id.clone(),
                    error,
                };
                safe_id(&entry.id).map_err(fail)?;
                let pixels = load_png(&src_dir.join(&entry.image_path)).map_err(|e| fail(format!("missing image: {e}")))?;
                let corners = entry.corners.unwrap_or_else(|| Quad::from_dims(pixels.width(), pixels.height()));
                let img = PaperImage {
                    pixels,
                    px_per_mm: 0.0,
                    corners,
                };
                let recipe = DistortionRecipe::new(seeds::for_entry(seed, &entry.id), template.steps.clone());
                let out = apply_recipe(&img, &recipe).map_err(|e| fail(e.to_string()))?;
                let rel = format!("images/{}.png", entry.id);
                save_png(&out.image.pixels, &common.out.join(&rel)).map_err(fail)?;
                Ok(ManifestEntry {
                    id: entry.id.clone(),
                    image_path: rel,
                    labels: entry.labels,
                    corners: Some(out.image.corners),
                    recipe: Some(out.realised),
                    fold: entry.fold,
                })
            })
            .collect()
    });
    let (entries, failures) = partition(results);
    let out_manifest = DatasetManifest::new(entries);
    write_manifest(&out_manifest, &common.out.join("manifest.json"))?;
    write_run(
        &common.out,
        "distort",
        Some(seed),
        json!({ "template": template }),
        out_manifest.len(),
        &failures,
    )?;
    info!("distorted {} images, {} failed", out_manifest.len(), failures.len());
    Ok(Outcome { failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerErrorSummary {
    pub count: usize,
    pub mean: f64,
    pub max: f64,
    pub per_entry: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifySummary {
    pub mode: RectifyMode,
    pub succeeded: usize,
    pub failed: Vec<EntryFailure>,
    /// Ground-truth corners mapped into the canonical frame versus the
    /// canonical corners, in canonical pixels. Full mode only.
    pub corner_rmse: Option<CornerErrorSummary>,
}

pub fn cmd_rectify(
    common: &Common,
    manifest_path: &Path,
    cfg: &RectifyConfig,
    mode: RectifyMode,
) -> Result<Outcome, CliError> {
    let manifest = load_manifest(manifest_path)?;
    let src_dir = manifest_dir(manifest_path);
    prepare_out(&common.out, common.force, &["images", "reports"])?;
    let pool = pool(common.workers)?;
    let canonical = Quad::from_dims(cfg.canonical_width, cfg.canonical_height);
    type Done = (ManifestEntry, Option<f64>);
    let results: Vec<Result<Done, EntryFailure>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let fail = |error: String| EntryFailure {
                    id: entry.id.clone(),
                    error,
                };
                safe_id(&entry.id).map_err(fail)?;
                let pixels = load_png(&src_dir.join(&entry.image_path)).map_err(fail)?;
                let report_path = common.out.join(format!("reports/{}.json", entry.id));
                let (out, report) = match rectify_pipeline(&pixels, cfg, mode) {
                    Ok(r) => r,
                    Err((e, report)) => {
                        let _ = write_report(&report_path, &report, Some(&e.to_string()));
                        return Err(fail(e.to_string()));
                    }
                };
                write_report(&report_path, &report, None).map_err(|e| fail(e.to_string()))?;
                let rmse = match (&report.homography, &entry.corners) {
                    (Some(h), Some(gt)) => Some(h.apply_quad(gt).rmse(&canonical)),
                    _ => None,
                };
                let rel = format!("images/{}.png", entry.id);
                save_png(&out.pixels, &common.out.join(&rel)).map_err(fail)?;
                Ok((
                    ManifestEntry {
                        id: entry.id.clone(),
                        image_path: rel,
                        labels: entry.labels,
                        corners: Some(Quad::from_dims(out.width(), out.height())),
                        recipe: None,
                        fold: entry.fold,
                    },
                    rmse,
                ))
            })
            .collect()
    });
    let (done, failures) = partition(results);
    let mut per_entry = BTreeMap::new();
    for (e, r) in &done {
        if let Some(r) = r {
            per_entry.insert(e.id.clone(), *r);
        }
    }
    let corner_rmse = (!per_entry.is_empty()).then(|| {
        let values: Vec<f64> = per_entry.values().copied().collect();
        CornerErrorSummary {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().copied().fold(0.0, f64::max),
            per_entry,
        }
    });
    let entries: Vec<ManifestEntry> = done.into_iter().map(|(e, _)| e).collect();
    let summary = RectifySummary {
        mode,
        succeeded: entries.len(),
        failed: failures.clone(),
        corner_rmse,
    };
    write_json(&common.out.join("rectify_summary.json"), &summary)?;
    let out_manifest = DatasetManifest::new(entries);
    write_manifest(&out_manifest, &common.out.join("manifest.json"))?;
    write_run(
        &common.out,
        "rectify",
        None,
        json!({ "mode": mode, "rectify": cfg }),
        out_manifest.len(),
        &failures,
    )?;
    if let Some(c) = &summary.corner_rmse {
        info!("corner RMSE over {} entries: mean {:.3} px, max {:.3} px", c.count, c.mean, c.max);
    }
    Ok(Outcome { failures })
}

fn write_report(path: &Path, report: &RectifyReport, error: Option<&str>) -> Result<(), CliError> {
    let mut value = serde_json::to_value(report).expect("report serialises");
    if let Some(e) = error {
        value["error"] = json!(e);
    }
    write_json(path, &value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: u32,
    pub size: usize,
    pub positives: BTreeMap<String, usize>,
    pub frequency: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub k: u32,
    pub seed: u64,
    pub entries: usize,
    pub overall_frequency: BTreeMap<String, f64>,
    pub folds: Vec<FoldSummary>,
    /// Largest |fold frequency − overall frequency| over folds and labels.
    pub max_frequency_drift: f64,
}

/// Fold per entry: entries ordered by their per-entry seed, then dealt
/// round-robin, so fold sizes differ by at most one.
pub fn assign_folds(ids: &[&str], k: u32, seed: u64) -> Result<Vec<u32>, CliError> {
    if k < 2 {
        return Err(CliError::Usage("k must be >= 2".into()));
    }
    if ids.len() < k as usize {
        return Err(CliError::TooFewEntries { entries: ids.len(), k });
    }
    let mut order: Vec<(u64, usize)> = ids.iter().enumerate().map(|(i, id)| (seeds::for_entry(seed, id), i)).collect();
    order.sort();
    let mut folds = vec![0; ids.len()];
    for (pos, (_, i)) in order.into_iter().enumerate() {
        folds[i] = (pos % k as usize) as u32;
    }
    Ok(folds)
}

pub fn cmd_split(out: &Path, force: bool, manifest_path: &Path, k: u32, seed: u64) -> Result<Outcome, CliError> {
    let manifest = load_manifest(manifest_path)?;
    let ids: Vec<&str> = manifest.entries.iter().map(|e| e.id.as_str()).collect();
    let folds = assign_folds(&ids, k, seed)?;
    prepare_out(out, force, &[])?;
    let src_dir = manifest_dir(manifest_path);
    let mut entries = manifest.entries.clone();
    for (e, f) in entries.iter_mut().zip(&folds) {
        e.fold = Some(*f);
        e.image_path = relative_path(&src_dir.join(&e.image_path), out);
    }

    let freq = |members: &[&ManifestEntry]| -> (BTreeMap<String, usize>, BTreeMap<String, f64>) {
        let mut pos = BTreeMap::new();
        let mut fr = BTreeMap::new();
        for d in Diagnosis::ALL {
            let c = members.iter().filter(|e| e.labels.get(d)).count();
            pos.insert(d.name().to_string(), c);
            fr.insert(d.name().to_string(), c as f64 / members.len().max(1) as f64);
        }
        (pos, fr)
    };
    let all: Vec<&ManifestEntry> = entries.iter().collect();
    let (_, overall) = freq(&all);
    let mut fold_summaries = Vec::new();
    let mut drift: f64 = 0.0;
    for f in 0..k {
        let members: Vec<&ManifestEntry> = entries.iter().filter(|e| e.fold == Some(f)).collect();
        let (positives, frequency) = freq(&members);
        for (name, v) in &frequency {
            drift = drift.max((v - overall[name]).abs());
        }
        fold_summaries.push(FoldSummary {
            fold: f,
            size: members.len(),
            positives,
            frequency,
        });
    }
    let summary = SplitSummary {
        k,
        seed,
        entries: entries.len(),
        overall_frequency: overall,
        folds: fold_summaries,
        max_frequency_drift: drift,
    };
    let out_manifest = DatasetManifest::new(entries);
    write_manifest(&out_manifest, &out.join("manifest.json"))?;
    write_json(&out.join("split_summary.json"), &summary)?;
    write_run(out, "split", Some(seed), json!({ "k": k }), out_manifest.len(), &[])?;
    info!("split {} entries into {k} folds (max label drift {drift:.4})", out_manifest.len());
    Ok(Outcome::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub auroc: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub samples: usize,
    pub per_label: BTreeMap<String, LabelMetrics>,
    pub macro_auroc: f64,
}

/// Reads `id` plus one score column per label; other columns are ignored.
pub fn read_predictions(path: &Path, suffix: &str) -> Result<HashMap<String, [f64; N_LABELS]>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::BadPredictions(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::BadPredictions(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::BadPredictions(format!("missing column {name}")))
    };
    let id_col = col("id")?;
    let mut label_cols = [0usize; N_LABELS];
    for d in Diagnosis::ALL {
        label_cols[d.index()] = col(&format!("{}{suffix}", d.name()))?;
    }
    let mut out = HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::BadPredictions(e.to_string()))?;
        let id = rec.get(id_col).unwrap_or("").trim().to_string();
        let mut scores = [0.0; N_LABELS];
        for (k, &c) in label_cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("").trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::BadPredictions(format!("row {}: bad score {cell:?}", row + 1)))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::BadPredictions(format!("row {}: score {v} outside [0, 1]", row + 1)));
            }
            scores[k] = v;
        }
        if out.insert(id.clone(), scores).is_some() {
            return Err(CliError::BadPredictions(format!("duplicate id {id}")));
        }
    }
    Ok(out)
}

pub fn cmd_evaluate(manifest_path: &Path, predictions: &Path, suffix: &str) -> Result<EvaluationReport, CliError> {
    let manifest = load_manifest(manifest_path)?;
    let preds = read_predictions(predictions, suffix)?;
    let mut scored = ScoredPredictions::default();
    let mut used = HashSet::new();
    for e in &manifest.entries {
        let s = preds.get(&e.id).ok_or_else(|| CliError::MissingPrediction(e.id.clone()))?;
        used.insert(e.id.as_str());
        scored.scores.push(*s);
        scored.truth.push(e.labels);
    }
    let extra = preds.len() - used.len();
    if extra > 0 {
        warn!("{extra} predictions have no manifest entry and were ignored");
    }
    let summary = macro_auroc(&scored)?;
    let mut per_label = BTreeMap::new();
    for d in Diagnosis::ALL {
        let positives = scored.truth.iter().filter(|t| t.get(d)).count();
        per_label.insert(
            d.name().to_string(),
            LabelMetrics {
                auroc: summary.per_label[d.index()],
                positives,
                negatives: scored.truth.len() - positives,
            },
        );
    }
    Ok(EvaluationReport {
        samples: scored.truth.len(),
        per_label,
        macro_auroc: summary.macro_auroc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths() {
        assert_eq!(relative_path(Path::new("/a/b/img/x.png"), Path::new("/a/c")), "../b/img/x.png");
        assert_eq!(relative_path(Path::new("/a/b/x.png"), Path::new("/a/b")), "x.png");
    }

    #[test]
    fn folds_balanced_and_deterministic() {
        let ids: Vec<String> = (0..15009).map(|i| format!("e{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let f = assign_folds(&refs, 5, 3).unwrap();
        let mut sizes = [0; 5];
        for &x in &f {
            sizes[x as usize] += 1;
        }
        sizes.sort();
        assert_eq!(sizes, [3001, 3002, 3002, 3002, 3002]);
        assert_eq!(f, assign_folds(&refs, 5, 3).unwrap());
        assert_ne!(f, assign_folds(&refs, 5, 4).unwrap());
        assert!(matches!(assign_folds(&refs[..4], 5, 0), Err(CliError::TooFewEntries { entries: 4, k: 5 })));
    }

    #[test]
    fn unsafe_ids_rejected() {
        assert!(safe_id("rec_01.a").is_ok());
        assert!(safe_id("../x").is_err());
        assert!(safe_id("").is_err());
    }
}
