//! Demonstration forging: turn raw expert robot demonstrations into
//! deduplicated, temporally balanced, repaired, and augmented replay
//! buffers, plus the geometric side — orthographic multi-view point-cloud
//! rendering, ground-truth heatmaps, multi-view back-projection, and
//! coarse-to-fine action localization.
//!
//! The pipeline, end to end:
//!
//! 1. [`demo`] — load and validate demonstration bundles (manifest +
//!    per-frame `BPC1` point clouds).
//! 2. [`repair`] — keyframe discovery and the keypose repairs: motion
//!    saliency, boundary retreat, via keyframes at path bends, height
//!    clearance, defensive via-points around risk zones.
//! 3. [`replay`] — build replay buffers from keyframe transitions and
//!    interval observations, under interchangeable strategies.
//! 4. [`diagnostics`] — buffer statistics and the training-curve
//!    classifier that names the likely failure mode of a run.
//! 5. [`schedule`] — cyclic, temporally balanced sampling schedules.
//! 6. [`render`] — orthographic five-face rendering, color inversion,
//!    zoom crops, and SE(3) perturbation.
//! 7. [`heatmap`] — ground-truth heatmaps, back-projection argmax, and
//!    two-stage localization.
//! 8. [`mixup`] — intra-task and cross-task sample mixing.
//! 9. [`synth`] — deterministic scenario generators for all of the above.
//!
//! Everything randomized takes an explicit seed and is reproducible bit
//! for bit; on-disk formats round-trip byte-identically.

pub mod config;
pub mod demo;
pub mod diagnostics;
pub mod geom;
pub mod heatmap;
pub mod mixup;
pub mod render;
pub mod repair;
pub mod replay;
pub mod schedule;
pub mod synth;

pub use config::{ConfigError, PipelineConfig};
pub use demo::{
    load_demopack, load_manifest, save_demopack, validate_demonstration, DemoBundle, DemoError,
    Demonstration, PointCloud, Workspace,
};
pub use diagnostics::{compute_stats, BufferStats, Scenario, ScenarioVerdict};
pub use heatmap::{
    back_project_argmax, make_gt_heatmaps, two_stage_localize, Heatmap, HeatmapError,
    LocalizationResult, Stage,
};
pub use mixup::{augment_buffer, MixupError, MixupPolicy, SupervisedSample};
pub use render::{
    invert_views, perturb_with_retries, render_orthographic, zoom_crop, InvertMode, RenderError,
    RenderedView, ViewSet,
};
pub use repair::{discover_keyframes, RepairConfig, RepairError};
pub use replay::{
    build_buffer, dedup, load_buffer, save_buffer, strategy_by_name, BufferError, BuildParams,
    ReplayBuffer, ReplaySample, SampleType, STRATEGIES,
};
pub use schedule::{CyclicSchedule, ScheduleError};
pub use synth::{scenario_by_name, DemoScenario, ScenarioParams, SynthError, SCENARIOS};
