//! `demoforge` — command-line front end for the imitation-learning data
//! pipeline: demonstration validation, keyframe discovery, replay-buffer
//! construction and statistics, training-curve diagnosis, orthographic
//! rendering, mixup augmentation, heatmap localization, and synthetic
//! demo generation.
//!
//! Exit codes: 0 on success, 1 on a domain error (I/O, format, geometry),
//! 2 on a usage error. `--json-errors` switches stderr error reporting to
//! one JSON object per line. All randomness flows from `--seed` (or the
//! config's `seed`); identical invocations produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use demoforge::config::{ConfigError, PipelineConfig};
use demoforge::demo::{
    self, bpc1, load_frame_cloud, load_manifest, save_demopack, validate_demonstration,
    ActionRecord, DemoError, Demonstration, PointCloud,
};
use demoforge::diagnostics::{
    ascii_histogram, classify_scenario, compute_stats, read_curves_csv, ClassifierConfig,
    DiagnosticsError,
};
use demoforge::geom::Vec3;
use demoforge::heatmap::{hmp1, make_gt_heatmaps, two_stage_localize, HeatmapError, Stage};
use demoforge::mixup::{augment_buffer, MixProvenance, MixupError, SupervisedSample};
use demoforge::render::{
    img1, invert_views, render_orthographic, InvertMode, RenderError, ViewSet,
};
use demoforge::repair::{discover_keyframes, RepairError};
use demoforge::replay::{
    build_buffer, load_buffer, save_buffer, strategy_by_name, BufferError, BuildParams,
    INDEX_FILE,
};
use demoforge::synth::{scenario_by_name, ScenarioParams, SynthError, SCENARIOS};

/// Print a line to stdout, treating a closed pipe (e.g. `... | head`) as a
/// polite request to stop rather than a panic.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let mut out = std::io::stdout().lock();
        if writeln!(out, $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

/// Print a line to stderr, ignoring a hung-up reader.
macro_rules! complain {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stderr().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "demoforge", version, about = "Imitation-learning data pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Config file; defaults to $DEMOFORGE_CONFIG when set, else built-ins.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker-thread cap; overrides the config's `threads` (0 = default).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Report domain errors as one JSON object per line on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate demonstration bundles and report every violation.
    Ingest(IngestArgs),
    /// Rediscover keyframes from gripper flips and stationarity.
    ExtractKeyframes(ExtractArgs),
    /// Materialize a replay buffer from demonstration bundles.
    BuildBuffer(BuildBufferArgs),
    /// Print buffer statistics and the temporal draw histogram.
    Stats(StatsArgs),
    /// Classify training-curve pathologies from a success-rate CSV.
    Diagnose(DiagnoseArgs),
    /// Render one frame's cloud into the five orthographic views.
    Render(RenderArgs),
    /// Mix a buffer into augmented supervised samples.
    Augment(AugmentArgs),
    /// Localize a target with the ground-truth-heatmap pipeline.
    Localize(LocalizeArgs),
    /// Generate a synthetic demonstration bundle.
    SynthDemo(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Bundle directories, or roots whose subdirectories are bundles.
    #[arg(required = true, value_name = "DIR")]
    dirs: Vec<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    /// One demonstration bundle directory.
    #[arg(value_name = "DIR")]
    dir: PathBuf,
    /// Rewrite the manifest's keyframe_indices with the discovered set.
    #[arg(long)]
    write: bool,
}

#[derive(Args)]
struct BuildBufferArgs {
    /// A bundle directory, or a root whose subdirectories are bundles.
    #[arg(value_name = "DEMO_DIR")]
    demo_dir: PathBuf,
    /// Output buffer directory.
    #[arg(value_name = "OUT")]
    out: PathBuf,
    /// Buffer strategy name; overrides the config's `[buffer] strategy`.
    #[arg(long, value_name = "NAME")]
    strategy: Option<String>,
    /// Observation sampling interval; overrides `[buffer] interval`.
    #[arg(long, value_name = "FRAMES")]
    interval: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    /// Buffer directories; with exactly two, reduction ratios are printed.
    #[arg(required = true, value_name = "DIR")]
    dirs: Vec<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// CSV of success curves: step,instance,train_sr[,test_sr].
    #[arg(value_name = "CSV")]
    csv: PathBuf,
    /// Also write the verdict as JSON.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Minimum peak-to-final drop for the erroneous-samples rule.
    #[arg(long, value_name = "X")]
    decline_threshold: Option<f64>,
    /// Aggregate-slope magnitude below which training counts as stable.
    #[arg(long, value_name = "X")]
    stability_eps: Option<f64>,
    /// Final-third train−test gap for the generalization-gap rule.
    #[arg(long, value_name = "X")]
    gap_threshold: Option<f64>,
    /// Peak success below which an instance counts as never trained.
    #[arg(long, value_name = "X")]
    near_zero: Option<f64>,
}

#[derive(Args)]
struct RenderArgs {
    /// Demonstration bundle directory.
    #[arg(long, value_name = "DIR")]
    demo: PathBuf,
    /// Frame index value (as in the manifest).
    #[arg(long, value_name = "N")]
    frame: usize,
    /// Output directory for IMG1 rasters.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Also write the color-inverted rasters.
    #[arg(long)]
    invert: bool,
    /// Inversion scope; overrides the config's `[render] invert_mode`.
    #[arg(long, value_name = "occupied|full")]
    invert_mode: Option<String>,
}

#[derive(Args)]
struct AugmentArgs {
    /// Buffer directory produced by build-buffer.
    #[arg(value_name = "BUFFER")]
    buffer: PathBuf,
    /// Output directory for augmented samples.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Probability a sample becomes an intra-task mix.
    #[arg(long, value_name = "X")]
    intra_rate: Option<f64>,
    /// Probability a sample becomes a cross-task mix.
    #[arg(long, value_name = "X")]
    cross_rate: Option<f64>,
    /// Upper bound on distractors per cross-task mix.
    #[arg(long, value_name = "N")]
    max_distractors: Option<usize>,
    /// Renormalize intra-task heatmap sums back to unit mass.
    #[arg(long)]
    renormalize: bool,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("target_source")
    .required(true)
    .args(["target_from_keyframe", "target"]))]
struct LocalizeArgs {
    /// Demonstration bundle directory.
    #[arg(long, value_name = "DIR")]
    demo: PathBuf,
    /// Frame index value whose cloud is localized against.
    #[arg(long, value_name = "N")]
    frame: usize,
    /// Take the target from the next keyframe after --frame.
    #[arg(long)]
    target_from_keyframe: bool,
    /// Explicit target position, meters.
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_vec3)]
    target: Option<Vec3>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario name (see `synth-demo --help` for the registry).
    #[arg(value_name = "SCENARIO")]
    scenario: String,
    /// Output bundle directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Demo id written into the manifest.
    #[arg(long, value_name = "ID")]
    demo_id: Option<String>,
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got {s:?}"));
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad coordinate {part:?}: {e}"))?;
    }
    Ok(v)
}

/// A command failure: domain errors exit 1, usage errors exit 2.
enum Failure {
    Domain { kind: &'static str, detail: String },
    Usage { detail: String },
}

fn usage(detail: impl Into<String>) -> Failure {
    Failure::Usage { detail: detail.into() }
}

macro_rules! domain_from {
    ($ty:ty, $kind:literal) => {
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Failure {
                Failure::Domain { kind: $kind, detail: e.to_string() }
            }
        }
    };
}

domain_from!(ConfigError, "config");
domain_from!(DemoError, "demo");
domain_from!(RepairError, "repair");
domain_from!(BufferError, "buffer");
domain_from!(DiagnosticsError, "diagnostics");
domain_from!(RenderError, "render");
domain_from!(HeatmapError, "heatmap");
domain_from!(MixupError, "mixup");
domain_from!(SynthError, "synth");

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Domain { kind: "io", detail: format!("{}: {e}", path.display()) }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_errors = cli.global.json_errors;
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain { kind, detail }) => {
            if json_errors {
                let line = serde_json::json!({ "error": { "kind": kind, "detail": detail } });
                complain!("{line}");
            } else {
                complain!("error: {detail}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Usage { detail }) => {
            complain!("usage error: {detail}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let (mut cfg, _path) = PipelineConfig::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.global.threads {
        cfg.threads = threads;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Failure::Domain { kind: "threads", detail: e.to_string() })?;
    }
    match cli.command {
        Command::Ingest(args) => cmd_ingest(&cfg, args),
        Command::ExtractKeyframes(args) => cmd_extract(&cfg, args),
        Command::BuildBuffer(args) => cmd_build_buffer(&cfg, args),
        Command::Stats(args) => cmd_stats(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Render(args) => cmd_render(&cfg, args),
        Command::Augment(args) => cmd_augment(&cfg, args),
        Command::Localize(args) => cmd_localize(&cfg, args),
        Command::SynthDemo(args) => cmd_synth(&cfg, args),
    }
}

/// A bundle directory itself, or every immediate subdirectory holding a
/// manifest, sorted by name so downstream output is deterministic.
fn collect_bundle_dirs(root: &Path) -> Result<Vec<PathBuf>, Failure> {
    if root.join(demo::MANIFEST_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = fs::read_dir(root).map_err(|e| io_failure(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_failure(root, e))?;
        let path = entry.path();
        if path.join(demo::MANIFEST_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Failure::Domain {
            kind: "demo",
            detail: format!("no demonstration bundles under {}", root.display()),
        });
    }
    Ok(dirs)
}

fn cmd_ingest(cfg: &PipelineConfig, args: IngestArgs) -> Result<(), Failure> {
    let mut demos = 0usize;
    let mut violations = 0usize;
    for root in &args.dirs {
        for dir in collect_bundle_dirs(root)? {
            let demo = load_manifest(&dir)?;
            let report = validate_demonstration(&dir, &demo, &cfg.workspace);
            demos += 1;
            if report.is_clean() {
                say!("ok {} ({})", demo.demo_id, dir.display());
            } else {
                for v in &report.violations {
                    say!("violation {}: {v}", demo.demo_id);
                }
                violations += report.violations.len();
            }
        }
    }
    if violations > 0 {
        return Err(Failure::Domain {
            kind: "validation",
            detail: format!("{violations} violation(s) across {demos} demonstration(s)"),
        });
    }
    say!("all {demos} demonstration(s) clean");
    Ok(())
}

fn cmd_extract(cfg: &PipelineConfig, args: ExtractArgs) -> Result<(), Failure> {
    let mut demo = load_manifest(&args.dir)?;
    let discovered = discover_keyframes(&demo, &cfg.repair)?;
    let line = serde_json::json!({
        "demo_id": demo.demo_id,
        "annotated": demo.keyframe_indices,
        "discovered": discovered,
    });
    say!("{line}");
    if args.write {
        demo.keyframe_indices = discovered;
        write_manifest(&args.dir, &demo)?;
    }
    Ok(())
}

fn write_manifest(dir: &Path, demo: &Demonstration) -> Result<(), Failure> {
    let path = dir.join(demo::MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(demo).expect("manifest serialization");
    json.push(b'\n');
    fs::write(&path, json).map_err(|e| io_failure(&path, e))
}

fn cmd_build_buffer(cfg: &PipelineConfig, args: BuildBufferArgs) -> Result<(), Failure> {
    let strategy_name = args.strategy.as_deref().unwrap_or(&cfg.buffer.strategy);
    let strategy = strategy_by_name(strategy_name)
        .map_err(|_| usage(format!("unknown buffer strategy {strategy_name:?}")))?;
    let params = BuildParams {
        interval: args.interval.unwrap_or(cfg.buffer.interval),
        saliency_min_dist: cfg.repair.saliency_min_dist,
    };

    let dirs = collect_bundle_dirs(&args.demo_dir)?;
    let mut demos = Vec::with_capacity(dirs.len());
    let mut roots = BTreeMap::new();
    for dir in &dirs {
        let demo = load_manifest(dir)?;
        let abs = std::path::absolute(dir).map_err(|e| io_failure(dir, e))?;
        roots.insert(demo.demo_id.clone(), abs);
        demos.push(demo);
    }

    let buffer = build_buffer(&demos, strategy, &params)?;
    let out = std::path::absolute(&args.out).map_err(|e| io_failure(&args.out, e))?;
    let stats = save_buffer(&out, &buffer, Some(&roots))?;

    say!("strategy: {}", buffer.strategy);
    say!("demos: {}", demos.len());
    say!("samples: {}", stats.sample_count);
    say!("bytes_on_disk: {}", stats.bytes_on_disk);
    say!("redundancy_ratio: {:.6}", stats.redundancy_ratio);
    say!("entropy_bits: {:.6}", stats.entropy);
    say!("out: {}", args.out.display());
    Ok(())
}

fn load_buffer_stats(dir: &Path) -> Result<demoforge::diagnostics::BufferStats, Failure> {
    let samples = load_buffer(dir)?;
    let index = dir.join(INDEX_FILE);
    let bytes = fs::metadata(&index).map_err(|e| io_failure(&index, e))?.len();
    Ok(compute_stats(&samples, bytes))
}

fn cmd_stats(args: StatsArgs) -> Result<(), Failure> {
    let mut all = Vec::new();
    for dir in &args.dirs {
        let stats = load_buffer_stats(dir)?;
        say!("buffer: {}", dir.display());
        say!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
        say!("{}", ascii_histogram(&stats));
        all.push(stats);
    }
    if let [first, second] = all.as_slice() {
        let samples = second.sample_count as f64 / first.sample_count as f64;
        let bytes = second.bytes_on_disk as f64 / first.bytes_on_disk as f64;
        say!("reduction ratio (samples): {samples:.6}");
        say!("reduction ratio (bytes): {bytes:.6}");
    }
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<(), Failure> {
    let file = fs::File::open(&args.csv).map_err(|e| io_failure(&args.csv, e))?;
    let curves = read_curves_csv(file)?;
    let mut cfg = ClassifierConfig::default();
    if let Some(x) = args.decline_threshold {
        cfg.decline_threshold = x;
    }
    if let Some(x) = args.stability_eps {
        cfg.stability_eps = x;
    }
    if let Some(x) = args.gap_threshold {
        cfg.gap_threshold = x;
    }
    if let Some(x) = args.near_zero {
        cfg.near_zero = x;
    }
    let verdict = classify_scenario(&curves, &cfg)?;
    let e = &verdict.evidence;
    say!("scenario: {}", verdict.scenario);
    say!("curves: {} over {} checkpoints", e.curves, e.checkpoints);
    say!("peak train_sr: {:.4} at checkpoint {}", e.peak_train_sr, e.peak_checkpoint);
    say!("final train_sr: {:.4}", e.final_train_sr);
    say!("final-half slope: {:.6}", e.final_half_slope);
    say!("aggregate slope: {:.6}", e.aggregate_slope);
    say!("weakest instance peak: {:.4}", e.weakest_instance_peak);
    match e.final_third_gap {
        Some(gap) => say!("final-third train−test gap: {gap:.4}"),
        None => say!("final-third train−test gap: unavailable"),
    }
    for note in &e.notes {
        say!("note: {note}");
    }
    if let Some(out) = &args.out {
        let mut body = serde_json::to_vec_pretty(&verdict).expect("verdict serialize");
        body.push(b'\n');
        fs::write(out, body).map_err(|e| io_failure(out, e))?;
        say!("verdict written: {}", out.display());
    }
    Ok(())
}

fn parse_invert_mode(s: &str) -> Result<InvertMode, Failure> {
    match s {
        "occupied" => Ok(InvertMode::Occupied),
        "full" => Ok(InvertMode::Full),
        other => Err(usage(format!("unknown invert mode {other:?} (occupied|full)"))),
    }
}

fn load_frame<'d>(demo: &'d Demonstration, index: usize) -> Result<&'d demo::Frame, Failure> {
    demo.position_of_index(index).map(|pos| &demo.frames[pos]).ok_or_else(|| Failure::Domain {
        kind: "demo",
        detail: format!("demo {} has no frame with index {index}", demo.demo_id),
    })
}

fn cmd_render(cfg: &PipelineConfig, args: RenderArgs) -> Result<(), Failure> {
    let demo = load_manifest(&args.demo)?;
    let frame = load_frame(&demo, args.frame)?;
    let cloud = load_frame_cloud(&args.demo, frame)?;
    let res = cfg.render.resolution;
    let set = ViewSet::standard_five(cfg.workspace.aabb, res, res)
        .with_splat(cfg.render.splat_radius);
    let views = render_orthographic(&cloud, &set)?;
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;

    let write = |name: String, bytes: Vec<u8>| -> Result<(), Failure> {
        let path = args.out.join(name);
        fs::write(&path, bytes).map_err(|e| io_failure(&path, e))?;
        say!("wrote {}", path.display());
        Ok(())
    };
    for view in &views {
        let label = view.axis.label();
        let (h, w) = (view.h as u32, view.w as u32);
        write(format!("{label}_rgb.img1"), img1::encode_rgb(h, w, &view.rgb))?;
        let depth: Vec<f32> = view.depth.iter().map(|&d| d as f32).collect();
        write(format!("{label}_depth.img1"), img1::encode_depth(h, w, &depth))?;
    }
    if args.invert {
        let mode = match &args.invert_mode {
            Some(s) => parse_invert_mode(s)?,
            None => cfg.render.invert_mode,
        };
        for view in invert_views(&views, mode) {
            let label = view.axis.label();
            let bytes = img1::encode_rgb(view.h as u32, view.w as u32, &view.rgb);
            write(format!("{label}_inverted_rgb.img1"), bytes)?;
        }
    }
    Ok(())
}

/// Load one cloud referenced by a buffer index entry (relative to the
/// buffer directory).
fn load_referenced_cloud(buffer_dir: &Path, rel: &str) -> Result<PointCloud, Failure> {
    let path = buffer_dir.join(rel);
    let bytes = fs::read(&path).map_err(|e| io_failure(&path, e))?;
    bpc1::decode(&bytes).map_err(|e| Failure::Domain {
        kind: "demo",
        detail: format!("{}: {e}", path.display()),
    })
}

#[derive(Serialize)]
struct AugmentRecord<'a> {
    index: usize,
    cloud_file: String,
    heatmap_file: String,
    instruction: &'a str,
    action: ActionRecord,
    points: usize,
    provenance: &'a MixProvenance,
}

fn cmd_augment(cfg: &PipelineConfig, args: AugmentArgs) -> Result<(), Failure> {
    let entries = load_buffer(&args.buffer)?;
    let res = cfg.render.resolution;
    let set = ViewSet::standard_five(cfg.workspace.aabb, res, res)
        .with_splat(cfg.render.splat_radius);

    let mut samples = Vec::with_capacity(entries.len());
    for entry in &entries {
        let cloud = load_referenced_cloud(&args.buffer, &entry.obs_cloud)?;
        let target = entry.target_action.pose.position;
        let heatmaps = make_gt_heatmaps(target, &set, cfg.render.heatmap_sigma)?;
        samples.push(SupervisedSample {
            cloud,
            heatmaps,
            instruction: entry.instruction.clone(),
            action: entry.target_action,
        });
    }

    let mut policy = cfg.mixup.clone();
    if let Some(x) = args.intra_rate {
        policy.intra_rate = x;
    }
    if let Some(x) = args.cross_rate {
        policy.cross_rate = x;
    }
    if let Some(n) = args.max_distractors {
        policy.max_distractors = n;
    }
    if args.renormalize {
        policy.renormalize = true;
    }

    let augmented = augment_buffer(&samples, &policy, cfg.seed)?;
    for warning in &augmented.warnings {
        complain!("warning: {warning}");
    }

    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    let mut index_body = String::new();
    for (i, sample) in augmented.samples.iter().enumerate() {
        let cloud_file = format!("aug_{i:05}.bpc");
        let heatmap_file = format!("aug_{i:05}.hmp");
        let cloud_path = args.out.join(&cloud_file);
        fs::write(&cloud_path, bpc1::encode(&sample.cloud))
            .map_err(|e| io_failure(&cloud_path, e))?;
        let hm_path = args.out.join(&heatmap_file);
        fs::write(&hm_path, hmp1::encode(&sample.heatmaps))
            .map_err(|e| io_failure(&hm_path, e))?;
        let record = AugmentRecord {
            index: i,
            cloud_file,
            heatmap_file,
            instruction: &sample.instruction,
            action: sample.action,
            points: sample.cloud.points.len(),
            provenance: &augmented.provenance[i],
        };
        index_body.push_str(&serde_json::to_string(&record).expect("record serialize"));
        index_body.push('\n');
    }
    let index_path = args.out.join("augment_index.jsonl");
    fs::write(&index_path, index_body).map_err(|e| io_failure(&index_path, e))?;
    say!("augmented samples: {}", augmented.samples.len());
    say!("out: {}", args.out.display());
    Ok(())
}

fn cmd_localize(cfg: &PipelineConfig, args: LocalizeArgs) -> Result<(), Failure> {
    let demo = load_manifest(&args.demo)?;
    let frame = load_frame(&demo, args.frame)?;
    let cloud = load_frame_cloud(&args.demo, frame)?;

    let target: Vec3 = if let Some(t) = args.target {
        t
    } else {
        // --target-from-keyframe: the next keyframe strictly after --frame.
        let next = demo
            .keyframe_indices
            .iter()
            .copied()
            .find(|&k| k > args.frame)
            .ok_or_else(|| Failure::Domain {
                kind: "demo",
                detail: format!("frame {} has no subsequent keyframe", args.frame),
            })?;
        load_frame(&demo, next)?.action.pose.position
    };

    let res = cfg.render.resolution;
    let set = ViewSet::standard_five(cfg.workspace.aabb, res, res)
        .with_splat(cfg.render.splat_radius);
    let sigma = cfg.render.heatmap_sigma;
    let provider = |_rendered: &[demoforge::render::RenderedView], view_set: &ViewSet| {
        make_gt_heatmaps(target, view_set, sigma)
    };
    let result = two_stage_localize(
        &cloud,
        &set,
        provider,
        cfg.render.coarse_grid,
        cfg.render.zoom_side,
        cfg.render.fine_grid,
    )?;

    let error: Vec3 = [
        result.position[0] - target[0],
        result.position[1] - target[1],
        result.position[2] - target[2],
    ];
    let error_inf = error.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let stage = match result.stage {
        Stage::Coarse => "coarse",
        Stage::Fine => "fine",
    };
    let line = serde_json::json!({
        "frame": args.frame,
        "target": target,
        "position": result.position,
        "score": result.score,
        "stage": stage,
        "error": error,
        "error_inf": error_inf,
    });
    say!("{line}");
    Ok(())
}

fn cmd_synth(cfg: &PipelineConfig, args: SynthArgs) -> Result<(), Failure> {
    let scenario = scenario_by_name(&args.scenario).map_err(|_| {
        let known: Vec<&str> = SCENARIOS.iter().map(|s| s.name()).collect();
        usage(format!("unknown scenario {:?}; known: {}", args.scenario, known.join(", ")))
    })?;
    let demo_id = args
        .demo_id
        .unwrap_or_else(|| format!("{}_{:04}", scenario.name(), cfg.seed));
    let params = ScenarioParams::new(cfg.seed, demo_id);
    let bundle = scenario.bundle(&params);
    save_demopack(&args.out, &bundle.demo, &bundle.clouds)?;
    say!(
        "wrote {} ({} frames, keyframes {:?})",
        args.out.join(demo::MANIFEST_FILE).display(),
        bundle.demo.frames.len(),
        bundle.demo.keyframe_indices,
    );
    Ok(())
}
