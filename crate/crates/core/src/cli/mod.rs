//! The `logosynth` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. Every subcommand that
//! writes files does so only under `--out`, and records a `run.json` there
//! (argv, effective settings, seed, tool version). Passing that `run.json`
//! back through `--config` reproduces the run.
//!
//! The worker count defaults to `LOGOSYNTH_THREADS` when set, otherwise to
//! the number of CPUs. It never changes any output byte.

pub mod config;
pub mod preview;

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dataset::{self, make_plan, read_manifest_any, split_dataset, ManifestRef, PlanName, Source};
use crate::error::Error;
use crate::eval::{self, ApInterpolation, EvalOptions, MatchOptions};
use crate::exemplar::load_registry;
use crate::raster::{ColourParams, Interpolation};
use crate::synth::{self, ContextMode, ImageFormat, SynthConfig};
use config::{load_config, ConfigMap, Range, Resolver, Size};

pub const THREADS_ENV: &str = "LOGOSYNTH_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(m) => CliError::Usage(m),
            e => CliError::Data(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "logosynth",
    version,
    about = "Synthetic context logo data, curriculum plans and AP/mAP scoring"
)]
struct Cli {
    /// Master seed for everything random.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key = value` file (or a previous run.json); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Split a manifest into per-class train and test sets.
    Split(SplitArgs),
    /// Emit a curriculum training plan.
    Plan(PlanArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Render a contact sheet of sampled composites.
    Preview(PreviewArgs),
    /// Check a manifest or an exemplar/context registry.
    Validate(ValidateArgs),
    /// Convert `image,class,xmin,ymin,xmax,ymax` CSV into annotations.jsonl.
    Import(ImportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Directory of `<class>.png` exemplars.
    #[arg(long)]
    exemplars: Option<PathBuf>,
    /// Directory of context images.
    #[arg(long)]
    contexts: Option<PathBuf>,
    #[arg(long)]
    per_class: Option<u32>,
    /// `scene` or `clean-black`.
    #[arg(long)]
    context_mode: Option<String>,
    #[arg(long)]
    no_scaling: bool,
    #[arg(long)]
    no_shearing: bool,
    #[arg(long)]
    no_rotation: bool,
    #[arg(long)]
    no_colouring: bool,
    /// Enable out-of-plane tilt.
    #[arg(long)]
    tilt: bool,
    /// Logo-to-background width ratio, `lo,hi`.
    #[arg(long)]
    scale_range: Option<Range>,
    #[arg(long)]
    shear_range: Option<Range>,
    #[arg(long)]
    rotation_range: Option<Range>,
    #[arg(long)]
    colour_range: Option<Range>,
    #[arg(long)]
    tilt_range: Option<Range>,
    #[arg(long)]
    focal: Option<f64>,
    /// Clean canvas size, `WxH`.
    #[arg(long)]
    canvas: Option<Size>,
    /// Resize backgrounds to this longer side.
    #[arg(long)]
    long_side: Option<u32>,
    /// `bilinear` or `nearest`.
    #[arg(long)]
    interp: Option<String>,
    #[arg(long)]
    alpha_threshold: Option<u8>,
    #[arg(long)]
    black_substitute: Option<u8>,
    /// `png` or `jpeg`.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Debug, Args)]
struct PreviewArgs {
    #[command(flatten)]
    synth: SynthArgs,
    /// Number of composites.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Training images per class.
    #[arg(long)]
    per_class: Option<usize>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Plan name, or `all`.
    #[arg(long)]
    plan: Option<String>,
    /// Synthetic manifest.
    #[arg(long)]
    synth: Option<PathBuf>,
    /// Real training manifest.
    #[arg(long)]
    real: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Detections, JSON Lines.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth annotations.jsonl or manifest.json.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    iou: Option<f64>,
    /// `all-point` or `eleven-point`.
    #[arg(long)]
    ap: Option<String>,
    #[arg(long)]
    respect_difficult: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Also decode every image and compare its size.
    #[arg(long)]
    check_images: bool,
    #[arg(long)]
    exemplars: Option<PathBuf>,
    #[arg(long)]
    contexts: Option<PathBuf>,
    #[arg(long)]
    alpha_threshold: Option<u8>,
}

#[derive(Debug, Args)]
struct ImportArgs {
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Root the CSV image names are relative to.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    argv: Vec<String>,
    subcommand: &'a str,
    seed: u64,
    effective_config: &'a ConfigMap,
}

struct Ctx {
    argv: Vec<String>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    verbose: bool,
    file: ConfigMap,
}

impl Ctx {
    fn out_dir(&self) -> Result<&Path, CliError> {
        let out = self
            .out
            .as_deref()
            .ok_or_else(|| CliError::Usage("missing required option --out".into()))?;
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(out)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("logosynth: {}", msg.as_ref());
        }
    }

    fn write_run(&self, out: &Path, subcommand: &str, seed: u64, effective: &ConfigMap) -> Result<(), CliError> {
        let rec = RunRecord {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            argv: self.argv.clone(),
            subcommand,
            seed,
            effective_config: effective,
        };
        let path = out.join("run.json");
        let mut s = serde_json::to_string_pretty(&rec).expect("run record serialises");
        s.push('\n');
        fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        let threads = match self.threads {
            Some(t) => Some(t),
            None => match std::env::var(THREADS_ENV) {
                Ok(v) => Some(
                    v.parse()
                        .map_err(|_| CliError::Usage(format!("{THREADS_ENV}=`{v}` is not a thread count")))?,
                ),
                Err(_) => None,
            },
        };
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = threads {
            if t == 0 {
                return Err(CliError::Usage("--threads must be at least 1".into()));
            }
            b = b.num_threads(t);
        }
        b.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))
    }
}

/// Runs the tool on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, argv.iter().map(|a| a.to_string_lossy().into_owned()).collect()) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\nFor more information, try '--help'.");
            1
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            2
        }
    }
}

fn dispatch(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => ConfigMap::new(),
    };
    let ctx = Ctx {
        argv,
        seed: cli.seed,
        threads: cli.threads,
        out: cli.out,
        verbose: cli.verbose,
        file,
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Preview(a) => cmd_preview(&ctx, a),
        Command::Split(a) => cmd_split(&ctx, a),
        Command::Plan(a) => cmd_plan(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Validate(a) => cmd_validate(&ctx, a),
        Command::Import(a) => cmd_import(&ctx, a),
    }
}

fn parse_with<T>(
    r: &mut Resolver<'_>,
    key: &str,
    flag: Option<String>,
    default: &str,
    f: impl Fn(&str) -> Option<T>,
) -> Result<T, CliError> {
    let s = r.get(key, flag, default.to_owned())?;
    f(&s).ok_or_else(|| CliError::Usage(format!("invalid value `{s}` for --{key}")))
}

struct SynthInputs {
    exemplars: PathBuf,
    contexts: Option<PathBuf>,
    config: SynthConfig,
}

fn resolve_synth(ctx: &Ctx, r: &mut Resolver<'_>, a: SynthArgs) -> Result<SynthInputs, CliError> {
    let d = SynthConfig::default();
    let exemplars: PathBuf = r
        .required("exemplars", a.exemplars.map(|p| p.display().to_string()))?
        .into();
    let mode = parse_with(r, "context-mode", a.context_mode, "scene", |s| match s {
        "scene" => Some(ContextMode::Scene),
        "clean-black" | "clean_black" | "clean" => Some(ContextMode::CleanBlack),
        _ => None,
    })?;
    let contexts = r
        .optional("contexts", a.contexts.map(|p| p.display().to_string()))?
        .map(PathBuf::from);
    if mode == ContextMode::Scene && contexts.is_none() {
        return Err(CliError::Usage("scene mode needs --contexts".into()));
    }
    let config = SynthConfig {
        images_per_class: r.get("per-class", a.per_class, d.images_per_class)?,
        context_mode: mode,
        enable_scaling: !r.switch("no-scaling", a.no_scaling)?,
        enable_shearing: !r.switch("no-shearing", a.no_shearing)?,
        enable_rotation: !r.switch("no-rotation", a.no_rotation)?,
        enable_colouring: !r.switch("no-colouring", a.no_colouring)?,
        enable_tilt: r.switch("tilt", a.tilt)?,
        scale_range: r.get("scale-range", a.scale_range, Range(d.scale_range))?.0,
        shear_range: r.get("shear-range", a.shear_range, Range(d.shear_range))?.0,
        rotation_range: r.get("rotation-range", a.rotation_range, Range(d.rotation_range))?.0,
        colour_r_range: r.get("colour-range", a.colour_range, Range(d.colour_r_range))?.0,
        tilt_range: r.get("tilt-range", a.tilt_range, Range(d.tilt_range))?.0,
        focal: r.get("focal", a.focal, d.focal)?,
        clean_canvas_size: r.get("canvas", a.canvas, Size(d.clean_canvas_size))?.0,
        placement_policy: d.placement_policy,
        master_seed: r.get("seed", ctx.seed, 0)?,
        output_long_side: r.optional("long-side", a.long_side)?,
        interpolation: parse_with(r, "interp", a.interp, "bilinear", |s| s.parse::<Interpolation>().ok())?,
        alpha_threshold: r.get("alpha-threshold", a.alpha_threshold, d.alpha_threshold)?,
        black_substitute: r.get(
            "black-substitute",
            a.black_substitute,
            ColourParams::DEFAULT_BLACK_SUBSTITUTE,
        )?,
        image_format: parse_with(r, "format", a.format, "png", |s| match s {
            "png" => Some(ImageFormat::Png),
            "jpeg" | "jpg" => Some(ImageFormat::Jpeg),
            _ => None,
        })?,
    };
    config.validate()?;
    Ok(SynthInputs {
        exemplars,
        contexts: if mode == ContextMode::Scene { contexts } else { None },
        config,
    })
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(&ctx.file);
    let inputs = resolve_synth(ctx, &mut r, a)?;
    let out = ctx.out_dir()?;
    let pool = ctx.pool()?;
    ctx.log(format!("loading exemplars from {}", inputs.exemplars.display()));
    let started = std::time::Instant::now();
    let generated = pool.install(|| {
        let registry = load_registry(
            &inputs.exemplars,
            inputs.contexts.as_deref(),
            inputs.config.alpha_threshold,
        )?;
        ctx.log(format!(
            "{} classes, {} contexts, {} threads",
            registry.exemplars.len(),
            registry.contexts.len(),
            rayon::current_num_threads()
        ));
        synth::generate_dataset(&registry, &inputs.config, out)
    })?;
    ctx.write_run(out, "synth", inputs.config.master_seed, &r.effective)?;
    println!(
        "wrote {} images ({} classes) to {} in {:.1}s",
        generated.records.len(),
        generated.manifest.classes.len(),
        out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_preview(ctx: &Ctx, a: PreviewArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(&ctx.file);
    let n = r.get("n", a.n, 16)?;
    let inputs = resolve_synth(ctx, &mut r, a.synth)?;
    let out = ctx.out_dir()?;
    let registry = load_registry(
        &inputs.exemplars,
        inputs.contexts.as_deref(),
        inputs.config.alpha_threshold,
    )?;
    let sheet = preview::preview(&registry, &inputs.config, n)?;
    let path = out.join("preview.png");
    synth::save_image(&sheet.image, ImageFormat::Png, &path)?;
    ctx.write_run(out, "preview", inputs.config.master_seed, &r.effective)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_split(ctx: &Ctx, a: SplitArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(&ctx.file);
    let manifest_path: PathBuf = r
        .required("manifest", a.manifest.map(|p| p.display().to_string()))?
        .into();
    let per_class = r.required("per-class", a.per_class)?;
    let seed = r.get("seed", ctx.seed, 0)?;
    let out = ctx.out_dir()?;
    let mut manifest = read_manifest_any(&manifest_path)?;
    // Keep image paths valid relative to the new files.
    for img in &mut manifest.images {
        img.path = dataset::resolve_image_path(&manifest_path, img).display().to_string();
    }
    let (train, test) = split_dataset(&manifest, per_class, seed)?;
    dataset::write_annotations(&train, &out.join("train.jsonl"))?;
    dataset::write_annotations(&test, &out.join("test.jsonl"))?;
    ctx.write_run(out, "split", seed, &r.effective)?;
    println!(
        "train: {} images / {} annotations; test: {} images / {} annotations",
        train.images.len(),
        train.annotations.len(),
        test.images.len(),
        test.annotations.len()
    );
    Ok(())
}

fn cmd_plan(ctx: &Ctx, a: PlanArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(&ctx.file);
    let plan = r.required("plan", a.plan)?;
    let synth_path = r.optional("synth", a.synth.map(|p| p.display().to_string()))?;
    let real_path = r.optional("real", a.real.map(|p| p.display().to_string()))?;
    let names: Vec<PlanName> = if plan.eq_ignore_ascii_case("all") {
        PlanName::ALL.to_vec()
    } else {
        vec![plan.parse()?]
    };
    let load = |p: &Option<String>, source| -> Result<Option<ManifestRef>, CliError> {
        Ok(match p {
            Some(p) => Some(ManifestRef::new(&read_manifest_any(Path::new(p))?, p.clone(), source)),
            None => None,
        })
    };
    let synth = load(&synth_path, Source::Synthetic)?;
    let real = load(&real_path, Source::Real)?;
    let out = ctx.out_dir()?;
    for name in &names {
        let plan = make_plan(*name, synth.as_ref(), real.as_ref())?;
        let file = if names.len() == 1 {
            "plan.json".to_owned()
        } else {
            format!("plan-{}.json", name.as_str().replace('+', "_"))
        };
        let path = out.join(file);
        fs::write(&path, plan.to_json()).map_err(|e| Error::io(&path, e))?;
        println!("{}: {} stage(s) -> {}", name, plan.stages.len(), path.display());
    }
    ctx.write_run(out, "plan", ctx.seed.unwrap_or(0), &r.effective)?;
    Ok(())
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(&ctx.file);
    let pred: PathBuf = r.required("pred", a.pred.map(|p| p.display().to_string()))?.into();
    let gt: PathBuf = r.required("gt", a.gt.map(|p| p.display().to_string()))?.into();
    let iou_threshold = r.get("iou", a.iou, 0.5)?;
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(CliError::Usage(format!("--iou {iou_threshold} outside [0, 1]")));
    }
    let interpolation = parse_with(&mut r, "ap", a.ap, "all-point", |s| s.parse::<ApInterpolation>().ok())?;
    let respect_difficult = r.switch("respect-difficult", a.respect_difficult)?;
    let dets = eval::read_detections_file(&pred)?;
    let manifest = read_manifest_any(&gt)?;
    let report = eval::evaluate(
        &dets,
        &manifest,
        &EvalOptions {
            matching: MatchOptions {
                iou_threshold,
                respect_difficult,
            },
            interpolation,
        },
    )?;
    print!("{}", report.table());
    let _ = std::io::stdout().flush();
    if ctx.out.is_some() {
        let out = ctx.out_dir()?;
        let path = out.join("report.json");
        fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
        ctx.write_run(out, "eval", ctx.seed.unwrap_or(0), &r.effective)?;
    }
    Ok(())
}

fn cmd_validate(ctx: &Ctx, a: ValidateArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(&ctx.file);
    let manifest = r.optional("manifest", a.manifest.map(|p| p.display().to_string()))?;
    let exemplars = r.optional("exemplars", a.exemplars.map(|p| p.display().to_string()))?;
    let contexts = r.optional("contexts", a.contexts.map(|p| p.display().to_string()))?;
    let check_images = r.switch("check-images", a.check_images)?;
    let alpha_threshold = r.get("alpha-threshold", a.alpha_threshold, 0)?;
    if manifest.is_none() && exemplars.is_none() {
        return Err(CliError::Usage("validate needs --manifest or --exemplars".into()));
    }
    if let Some(p) = manifest {
        let path = Path::new(&p);
        let m = read_manifest_any(path)?;
        let dims: std::collections::HashMap<&str, (u32, u32)> = m
            .images
            .iter()
            .map(|i| (i.image_id.as_str(), (i.width, i.height)))
            .collect();
        for (i, a) in m.annotations.iter().enumerate() {
            let (w, h) = dims[a.image_id.as_str()];
            if !a.bbox.inside(w, h) {
                return Err(Error::Schema {
                    line: m.images.len() + 2 + i,
                    message: format!(
                        "bbox {:?} outside {w}x{h} image `{}`",
                        <[i64; 4]>::from(a.bbox),
                        a.image_id
                    ),
                }
                .in_file(path)
                .into());
            }
        }
        if check_images {
            for img in &m.images {
                let file = dataset::resolve_image_path(path, img);
                let (w, h) = image::image_dimensions(&file).map_err(|source| Error::Decode {
                    path: file.clone(),
                    source,
                })?;
                if (w, h) != (img.width, img.height) {
                    return Err(Error::Schema {
                        line: 0,
                        message: format!(
                            "{} is {w}x{h}, manifest says {}x{}",
                            file.display(),
                            img.width,
                            img.height
                        ),
                    }
                    .in_file(path)
                    .into());
                }
            }
        }
        println!(
            "{}: ok ({} classes, {} images, {} annotations)",
            path.display(),
            m.classes.len(),
            m.images.len(),
            m.annotations.len()
        );
    }
    if let Some(ex) = exemplars {
        let reg = load_registry(Path::new(&ex), contexts.as_deref().map(Path::new), alpha_threshold)?;
        println!(
            "registry: ok ({} classes, {} contexts)",
            reg.exemplars.len(),
            reg.contexts.len()
        );
    }
    ctx.log("validation passed");
    Ok(())
}

fn cmd_import(ctx: &Ctx, a: ImportArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(&ctx.file);
    let csv: PathBuf = r.required("csv", a.csv.map(|p| p.display().to_string()))?.into();
    let images: PathBuf = r.required("images", a.images.map(|p| p.display().to_string()))?.into();
    let name = r.get("name", a.name, "real".to_owned())?;
    let out = ctx.out_dir()?;
    let images = std::path::absolute(&images).map_err(|e| Error::io(&images, e))?;
    let m = dataset::import_csv(&csv, &images, &name)?;
    dataset::write_annotations(&m, &out.join("annotations.jsonl"))?;
    ctx.write_run(out, "import", 0, &r.effective)?;
    println!(
        "imported {} images / {} annotations",
        m.images.len(),
        m.annotations.len()
    );
    Ok(())
}
