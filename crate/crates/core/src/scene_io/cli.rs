//! `meshsplat` command line.
//!
//! Exit codes: 0 ok, 1 usage, 2 I/O or invalid input, 3 verification failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{load_cameras, load_image, load_mask, load_scene, save_image, save_scene, write_atomic, IoError};
use crate::core::{build_sampling_mask, Camera, Scene};
use crate::fit::{fit_with, scene_extent, FitConfig, LearningRates, LossWeights, View};
use crate::oracle::{all_param_refs, check_gradients, reference_render};
use crate::synth::{fuzzy_head, orbit_cameras, random_scene, random_weights, FuzzSpec, HeadSpec, RandomSceneSpec};
use crate::{render, RenderConfig, RenderMode};

pub const THREADS_ENV: &str = "MESHSPLAT_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "meshsplat", version, about = "Hybrid mesh + Gaussian splat renderer")]
struct Cli {
    /// Worker threads; overrides MESHSPLAT_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render one view of a scene to PNG or PPM.
    Render(RenderArgs),
    /// Fit a scene to target images.
    Fit(FitArgs),
    /// MAE / PSNR / SSIM between two images.
    Metrics(MetricsArgs),
    /// Per-view render timings as CSV.
    Bench(BenchArgs),
    /// Oracle agreement and gradient checks on random scenes.
    Verify(VerifyArgs),
    /// Build a Gaussian sampling mask from a UV priority image.
    MakeMask(MakeMaskArgs),
    /// Write the procedural fuzzy-head scene and orbit cameras.
    Demo(DemoArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Hybrid,
    OpaqueMesh,
    GsOnly,
    MeshOnly,
}

impl From<ModeArg> for RenderMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Hybrid => RenderMode::Hybrid,
            ModeArg::OpaqueMesh => RenderMode::OpaqueMesh,
            ModeArg::GsOnly => RenderMode::GaussianOnly,
            ModeArg::MeshOnly => RenderMode::MeshOnly,
        }
    }
}

#[derive(Args, Debug)]
struct RenderArgs {
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    view: usize,
    /// Cameras file; defaults to the scene's own cameras.
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Hybrid)]
    mode: ModeArg,
    /// Apply the sRGB transfer curve before quantizing.
    #[arg(long)]
    srgb: bool,
    /// Disable alpha skipping, clamping, and early termination.
    #[arg(long)]
    exact: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Directory of target images, matched to cameras in file-name order.
    #[arg(long)]
    targets: PathBuf,
    /// Directory of loss masks, matched like the targets.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    views: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// TOML loss weights; missing keys keep their defaults.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    /// CSV loss / PSNR trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    /// Save the scene every K iterations next to the output (0: never).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Views per step (0: all).
    #[arg(long, default_value_t = 0)]
    batch: usize,
    /// Multiplier on the default learning rates.
    #[arg(long, default_value_t = 1.0)]
    lr_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Hybrid)]
    mode: ModeArg,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    views: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Hybrid)]
    mode: ModeArg,
    /// Untimed renders per view before measuring.
    #[arg(long, default_value_t = 1)]
    warmup: usize,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    cases: usize,
}

#[derive(Args, Debug)]
struct MakeMaskArgs {
    /// Square UV image; pixels with a channel above 127 are priority texels.
    #[arg(long)]
    priority: PathBuf,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0.75)]
    frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON output path.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 2000)]
    gaussians: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    views: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Verify(String),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn out_err(e: std::io::Error) -> CliError {
    CliError::Io(format!("stdout: {e}"))
}

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_ENV}={v:?} is not a positive integer")),
        },
        Err(_) => Ok(None),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    let threads = match cli.threads.map(Ok).or_else(|| threads_from_env().transpose()) {
        Some(Ok(0)) => {
            let _ = writeln!(stderr, "error: --threads must be positive");
            return EXIT_USAGE;
        }
        Some(Ok(n)) => Some(n),
        Some(Err(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            return EXIT_USAGE;
        }
        None => None,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: thread pool: {e}");
            return EXIT_IO;
        }
    };
    let result = pool.install(|| dispatch(cli.command, stdout, stderr));
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Io(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_IO
        }
        Err(CliError::Verify(msg)) => {
            let _ = writeln!(stderr, "verification failed: {msg}");
            EXIT_VERIFY
        }
    }
}

fn dispatch(cmd: Command, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult {
    match cmd {
        Command::Render(a) => cmd_render(a),
        Command::Fit(a) => cmd_fit(a, out, err),
        Command::Metrics(a) => cmd_metrics(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::MakeMask(a) => cmd_make_mask(a, out),
        Command::Demo(a) => cmd_demo(a, out),
    }
}

fn scene_and_cameras(scene: &Path, cameras: Option<&Path>) -> Result<(Scene, Vec<Camera>), CliError> {
    let (scene, own) = load_scene(scene)?;
    let cams = match cameras {
        Some(p) => load_cameras(p)?,
        None => own,
    };
    if cams.is_empty() {
        return Err(CliError::Io("no cameras".into()));
    }
    Ok((scene, cams))
}

fn cmd_render(a: RenderArgs) -> CliResult {
    let (scene, cams) = scene_and_cameras(&a.scene, a.cameras.as_deref())?;
    let cam = cams
        .get(a.view)
        .ok_or_else(|| CliError::Io(format!("view {} out of range ({} cameras)", a.view, cams.len())))?;
    let cfg = if a.exact {
        RenderConfig::exact()
    } else {
        RenderConfig::default()
    };
    let frame = render(&scene, cam, a.mode.into(), &cfg)?;
    save_image(&frame.image, &a.output, a.srgb)?;
    Ok(())
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(str::to_ascii_lowercase)
                    .as_deref(),
                Some("png" | "ppm" | "pnm")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

fn cmd_fit(a: FitArgs, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult {
    let (scene, cams) = scene_and_cameras(&a.scene, a.views.as_deref())?;
    let targets = sorted_images(&a.targets)?;
    if targets.len() != cams.len() {
        return Err(CliError::Io(format!(
            "{} target images for {} cameras",
            targets.len(),
            cams.len()
        )));
    }
    let masks = match &a.masks {
        Some(dir) => {
            let m = sorted_images(dir)?;
            if m.len() != cams.len() {
                return Err(CliError::Io(format!("{} masks for {} cameras", m.len(), cams.len())));
            }
            m.iter()
                .map(|p| load_mask(p).map(Some))
                .collect::<Result<Vec<_>, _>>()?
        }
        None => vec![None; cams.len()],
    };
    let views = cams
        .into_iter()
        .zip(&targets)
        .zip(masks)
        .map(|((camera, path), mask)| {
            let target = load_image(path)?;
            if target.width() != camera.width || target.height() != camera.height {
                return Err(CliError::Io(format!(
                    "{}: {}x{} image for a {}x{} camera",
                    path.display(),
                    target.width(),
                    target.height(),
                    camera.width,
                    camera.height
                )));
            }
            Ok(View { camera, target, mask })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let weights = match &a.weights {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let w: LossWeights = toml::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            w.validate()?;
            w
        }
        None => LossWeights::default(),
    };
    let mut lr = LearningRates::for_extent(scene_extent(&scene));
    lr.scale(a.lr_scale);
    let mut cfg = FitConfig::new(a.iters, lr);
    cfg.log_every = a.log_every;
    cfg.views_per_step = a.batch;
    cfg.seed = a.seed;
    cfg.mode = a.mode.into();
    let ckpt_path = with_suffix(&a.output, "-checkpoint");
    let mut ckpt_err = None;
    let mut observer = |row: &crate::fit::TraceRow, s: &Scene| {
        let _ = writeln!(
            err,
            "iter {:>6}  loss {:.6e}  psnr {:.3}",
            row.iteration, row.loss.total, row.psnr
        );
        if a.checkpoint_every > 0
            && row.iteration > 0
            && row.iteration.is_multiple_of(a.checkpoint_every)
            && ckpt_err.is_none()
        {
            if let Err(e) = save_scene(s, &[], &ckpt_path) {
                ckpt_err = Some(e);
            }
        }
    };
    let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    let outcome = match fit_with(&scene, &views, &cfg, &weights, &mut observer) {
        Ok(o) => o,
        Err(e) => {
            let failed = with_suffix(&a.output, "-failed");
            save_scene(&e.snapshot, &cams, &failed)?;
            return Err(CliError::Io(format!(
                "{e}; last good scene saved to {}",
                failed.display()
            )));
        }
    };
    if let Some(e) = ckpt_err {
        return Err(e.into());
    }
    save_scene(&outcome.scene, &cams, &a.output)?;
    if let Some(t) = &a.trace {
        write_atomic(t, crate::fit::trace_csv(&outcome.trace).as_bytes())?;
    }
    if let Some(last) = outcome.trace.last() {
        writeln!(
            out,
            "iterations = {}\nloss = {:.9e}\npsnr = {:.6}",
            last.iteration, last.loss.total, last.psnr
        )
        .map_err(out_err)?;
    }
    Ok(())
}

fn cmd_metrics(a: MetricsArgs, out: &mut (dyn Write + Send)) -> CliResult {
    let x = load_image(&a.a)?;
    let y = load_image(&a.b)?;
    let mask = a.mask.as_deref().map(load_mask).transpose()?;
    let mae = super::metric_mae(&x, &y, mask.as_ref())?;
    let psnr = super::metric_psnr(&x, &y, mask.as_ref())?;
    let ssim = super::metric_ssim(&x, &y, mask.as_ref())?;
    writeln!(out, "mae = {mae:.6}\npsnr = {psnr:.6}\nssim = {ssim:.6}").map_err(out_err)
}

pub const BENCH_HEADER: &str = "mode,view,gaussians,triangles,width,height,repeat,mean_ms,median_ms,min_ms,max_ms";

fn cmd_bench(a: BenchArgs, out: &mut (dyn Write + Send)) -> CliResult {
    let (scene, cams) = scene_and_cameras(&a.scene, a.views.as_deref())?;
    if a.repeat == 0 {
        return Err(CliError::Io("--repeat must be positive".into()));
    }
    let mode: RenderMode = a.mode.into();
    let name = a
        .mode
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default();
    let cfg = RenderConfig::default();
    writeln!(out, "{BENCH_HEADER}").map_err(out_err)?;
    for (i, cam) in cams.iter().enumerate() {
        for _ in 0..a.warmup {
            render(&scene, cam, mode, &cfg)?;
        }
        let mut ms = Vec::with_capacity(a.repeat);
        for _ in 0..a.repeat {
            let t = Instant::now();
            let frame = render(&scene, cam, mode, &cfg)?;
            ms.push(t.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(frame);
        }
        ms.sort_by(f64::total_cmp);
        let mean = ms.iter().sum::<f64>() / ms.len() as f64;
        writeln!(
            out,
            "{name},{i},{},{},{},{},{},{mean:.3},{:.3},{:.3},{:.3}",
            scene.gaussians.len(),
            scene.mesh.triangles().len(),
            cam.width,
            cam.height,
            a.repeat,
            ms[ms.len() / 2],
            ms[0],
            ms[ms.len() - 1]
        )
        .map_err(out_err)?;
    }
    Ok(())
}

pub const VERIFY_SPEC: RandomSceneSpec = RandomSceneSpec {
    grid: 8,
    gaussians: 50,
    image: 32,
    texture: 8,
};
pub const VERIFY_ORACLE_TOL: f64 = 1e-5;
pub const VERIFY_GRAD_TOL: f64 = 1e-3;

fn cmd_verify(a: VerifyArgs, out: &mut (dyn Write + Send)) -> CliResult {
    let cfg = RenderConfig::exact();
    let mut failures = 0usize;
    for case in 0..a.cases {
        let seed = a.seed.wrapping_add(case as u64);
        let (scene, cam) = random_scene(seed, VERIFY_SPEC);
        let frame = render(&scene, &cam, RenderMode::Hybrid, &cfg)?;
        let reference = reference_render(&scene, &cam, RenderMode::Hybrid, &cfg)?;
        let diff = frame.image.max_abs_diff(&reference);
        let weights = random_weights(seed, cam.pixel_count());
        let checks = check_gradients(
            &scene,
            &cam,
            RenderMode::Hybrid,
            &cfg,
            &weights,
            &all_param_refs(&scene),
        )?;
        let mut worst = 0.0f64;
        let mut skipped = 0usize;
        for c in &checks {
            worst = worst.max(c.relative_error(1e-8));
            skipped += c.skipped;
        }
        let ok = diff <= VERIFY_ORACLE_TOL && worst < VERIFY_GRAD_TOL;
        failures += usize::from(!ok);
        writeln!(
            out,
            "case {case} seed {seed} oracle_max_diff {diff:.3e} grad_max_rel {worst:.3e} skipped {skipped} {}",
            if ok { "pass" } else { "FAIL" }
        )
        .map_err(out_err)?;
    }
    writeln!(out, "{} of {} cases passed", a.cases - failures, a.cases).map_err(out_err)?;
    if failures > 0 {
        return Err(CliError::Verify(format!("{failures} of {} cases failed", a.cases)));
    }
    Ok(())
}

fn cmd_make_mask(a: MakeMaskArgs, out: &mut (dyn Write + Send)) -> CliResult {
    let img = load_mask(&a.priority)?;
    if img.width() != img.height() {
        return Err(CliError::Io(format!(
            "{}: priority map must be square, got {}x{}",
            a.priority.display(),
            img.width(),
            img.height()
        )));
    }
    let mask = build_sampling_mask(img.bits(), img.width(), a.budget, a.frac, a.seed)?;
    let json = serde_json::to_string_pretty(&mask).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&a.output, json.as_bytes())?;
    writeln!(
        out,
        "selected = {}\npriority = {}",
        mask.selected.len(),
        mask.priority_count
    )
    .map_err(out_err)?;
    for w in &mask.warnings {
        writeln!(out, "# warning: {w}").map_err(out_err)?;
    }
    Ok(())
}

fn cmd_demo(a: DemoArgs, out: &mut (dyn Write + Send)) -> CliResult {
    // the hair region covers about a third of the UV map
    let mut res = FuzzSpec::default().mask_resolution;
    while res * res < 4 * a.gaussians {
        res *= 2;
    }
    let spec = HeadSpec {
        fuzz: FuzzSpec {
            count: a.gaussians,
            seed: a.seed,
            mask_resolution: res,
            ..FuzzSpec::default()
        },
        ..HeadSpec::default()
    };
    let scene = fuzzy_head(&spec)?;
    let cams = orbit_cameras(a.views, a.size);
    save_scene(&scene, &cams, &a.output)?;
    writeln!(out, "gaussians = {}\nviews = {}", scene.gaussians.len(), cams.len()).map_err(out_err)
}
