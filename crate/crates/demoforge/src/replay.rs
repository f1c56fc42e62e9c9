//! Replay-buffer construction.
//!
//! Two strategies build training samples from a demonstration:
//!
//! * `conventional` reproduces the duplicative baseline: every observation
//!   frame re-emits all keyframe transitions from its next keyframe onward,
//!   and the duplicates are intentionally retained.
//! * `optimized` emits each keyframe transition and each observation frame
//!   exactly once, then prunes near-static samples with the motion-saliency
//!   filter.
//!
//! Buffers persist as a directory holding `buffer_index.jsonl` (one sample
//! per line) plus `buffer_stats.json`; point clouds are referenced by path,
//! never copied.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demo::{ActionRecord, Demonstration};
use crate::diagnostics::{compute_stats, BufferStats};
use crate::repair::motion_saliency_filter;

pub const INDEX_FILE: &str = "buffer_index.jsonl";
pub const STATS_FILE: &str = "buffer_stats.json";

/// What a sample's observation is: a keyframe predicting the next keyframe,
/// or an intermediate observation predicting the next keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleType {
    Keyframe,
    DemoAug,
}

/// One training pair: an observation frame and the next-keyframe action it
/// should predict. Cloud fields are file paths relative to the demo
/// directory at build time and rewritten relative to the buffer directory
/// on save.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SampleRepr", into = "SampleRepr")]
pub struct ReplaySample {
    pub sample_type: SampleType,
    pub demo_id: String,
    pub task: String,
    pub instruction: String,
    pub obs_frame: usize,
    pub target_frame: usize,
    pub obs_action: ActionRecord,
    pub target_action: ActionRecord,
    pub obs_cloud: String,
    pub target_cloud: String,
}

/// Serialized form: poses flattened to 7-element arrays, field order fixed
/// so that identical buffers serialize to identical bytes.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRepr {
    sample_type: SampleType,
    demo_id: String,
    task: String,
    instruction: String,
    obs_frame: usize,
    target_frame: usize,
    obs_pose: [f64; 7],
    obs_gripper_open: bool,
    obs_ignore_collision: bool,
    target_pose: [f64; 7],
    target_gripper_open: bool,
    target_ignore_collision: bool,
    obs_cloud: String,
    target_cloud: String,
}

impl From<SampleRepr> for ReplaySample {
    fn from(r: SampleRepr) -> ReplaySample {
        ReplaySample {
            sample_type: r.sample_type,
            demo_id: r.demo_id,
            task: r.task,
            instruction: r.instruction,
            obs_frame: r.obs_frame,
            target_frame: r.target_frame,
            obs_action: ActionRecord {
                pose: crate::demo::Pose::from_array(r.obs_pose),
                gripper_open: r.obs_gripper_open,
                ignore_collision: r.obs_ignore_collision,
            },
            target_action: ActionRecord {
                pose: crate::demo::Pose::from_array(r.target_pose),
                gripper_open: r.target_gripper_open,
                ignore_collision: r.target_ignore_collision,
            },
            obs_cloud: r.obs_cloud,
            target_cloud: r.target_cloud,
        }
    }
}

impl From<ReplaySample> for SampleRepr {
    fn from(s: ReplaySample) -> SampleRepr {
        SampleRepr {
            sample_type: s.sample_type,
            demo_id: s.demo_id,
            task: s.task,
            instruction: s.instruction,
            obs_frame: s.obs_frame,
            target_frame: s.target_frame,
            obs_pose: s.obs_action.pose.to_array(),
            obs_gripper_open: s.obs_action.gripper_open,
            obs_ignore_collision: s.obs_action.ignore_collision,
            target_pose: s.target_action.pose.to_array(),
            target_gripper_open: s.target_action.gripper_open,
            target_ignore_collision: s.target_action.ignore_collision,
            obs_cloud: s.obs_cloud,
            target_cloud: s.target_cloud,
        }
    }
}

/// A built buffer plus the strategy name that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    pub samples: Vec<ReplaySample>,
    pub strategy: String,
}

#[derive(Debug, Error)]
pub enum BufferError {
    #[error("demo {demo_id} has no keyframes")]
    NoKeyframes { demo_id: String },
    #[error("observation interval must be ≥ 1, got {interval}")]
    BadInterval { interval: usize },
    #[error(transparent)]
    Demo(#[from] crate::demo::DemoError),
    #[error("unknown buffer strategy {name:?}; known: {known}")]
    UnknownStrategy { name: String, known: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {detail}")]
    Index { path: PathBuf, line: usize, detail: String },
}

/// Build-time knobs shared by all strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    /// Observation frames are taken every this many frames, starting at 0.
    pub interval: usize,
    /// Motion-saliency threshold (meters) applied by the optimized
    /// strategy; a negative value disables the filter.
    pub saliency_min_dist: f64,
}

impl Default for BuildParams {
    fn default() -> BuildParams {
        BuildParams { interval: 10, saliency_min_dist: 0.02 }
    }
}

/// A buffer-construction algorithm, selectable by name at the CLI.
pub trait BufferStrategy: Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn build(
        &self,
        demo: &Demonstration,
        params: &BuildParams,
    ) -> Result<Vec<ReplaySample>, BufferError>;
}

/// Duplicative baseline. For each observation frame that is not itself a
/// keyframe: one demo-augmentation sample toward the next keyframe, plus a
/// re-emission of every keyframe transition from that keyframe onward.
pub struct Conventional;

/// Deduplicated builder: each keyframe transition once, each observation
/// frame once, followed by the motion-saliency filter.
pub struct Optimized;

pub static STRATEGIES: &[&dyn BufferStrategy] = &[&Conventional, &Optimized];

pub fn strategy_by_name(name: &str) -> Result<&'static dyn BufferStrategy, BufferError> {
    STRATEGIES.iter().copied().find(|s| s.name() == name).ok_or_else(|| {
        BufferError::UnknownStrategy {
            name: name.to_string(),
            known: STRATEGIES.iter().map(|s| s.name()).collect::<Vec<_>>().join(", "),
        }
    })
}

/// Frame positions (not index values) shared by both strategies:
/// observation positions and keyframe positions.
struct DemoLayout {
    obs_positions: Vec<usize>,
    kf_positions: Vec<usize>,
}

fn layout(demo: &Demonstration, params: &BuildParams) -> Result<DemoLayout, BufferError> {
    if params.interval == 0 {
        return Err(BufferError::BadInterval { interval: 0 });
    }
    if demo.keyframe_indices.is_empty() {
        return Err(BufferError::NoKeyframes { demo_id: demo.demo_id.clone() });
    }
    let kf_positions = demo.keyframe_positions()?;
    let obs_positions = (0..demo.frames.len()).step_by(params.interval).collect();
    Ok(DemoLayout { obs_positions, kf_positions })
}

fn make_sample(
    demo: &Demonstration,
    obs_pos: usize,
    target_pos: usize,
    sample_type: SampleType,
) -> ReplaySample {
    let obs = &demo.frames[obs_pos];
    let target = &demo.frames[target_pos];
    ReplaySample {
        sample_type,
        demo_id: demo.demo_id.clone(),
        task: demo.task.clone(),
        instruction: demo.instruction.clone(),
        obs_frame: obs.index,
        target_frame: target.index,
        obs_action: obs.action,
        target_action: target.action,
        obs_cloud: obs.cloud_file.clone(),
        target_cloud: target.cloud_file.clone(),
    }
}

impl BufferStrategy for Conventional {
    fn name(&self) -> &'static str {
        "conventional"
    }
    fn description(&self) -> &'static str {
        "duplicative baseline: every observation frame re-emits all subsequent keyframe transitions"
    }
    fn build(
        &self,
        demo: &Demonstration,
        params: &BuildParams,
    ) -> Result<Vec<ReplaySample>, BufferError> {
        let DemoLayout { obs_positions, kf_positions } = layout(demo, params)?;
        let mut out = Vec::new();
        for &t in &obs_positions {
            if kf_positions.binary_search(&t).is_ok() {
                continue; // keyframe-coincident observation: skipped entirely
            }
            // First keyframe strictly after t.
            let next = kf_positions.partition_point(|&k| k <= t);
            if next == kf_positions.len() {
                continue; // observation after the last keyframe has no target
            }
            out.push(make_sample(demo, t, kf_positions[next], SampleType::DemoAug));
            for pair in kf_positions[next..].windows(2) {
                out.push(make_sample(demo, pair[0], pair[1], SampleType::Keyframe));
            }
        }
        Ok(out)
    }
}

impl BufferStrategy for Optimized {
    fn name(&self) -> &'static str {
        "optimized"
    }
    fn description(&self) -> &'static str {
        "deduplicated: each keyframe transition and observation once, then saliency-filtered"
    }
    fn build(
        &self,
        demo: &Demonstration,
        params: &BuildParams,
    ) -> Result<Vec<ReplaySample>, BufferError> {
        let DemoLayout { obs_positions, kf_positions } = layout(demo, params)?;
        let mut out = Vec::new();
        for pair in kf_positions.windows(2) {
            out.push(make_sample(demo, pair[0], pair[1], SampleType::Keyframe));
        }
        for &t in &obs_positions {
            if kf_positions.binary_search(&t).is_ok() {
                continue;
            }
            let next = kf_positions.partition_point(|&k| k <= t);
            if next == kf_positions.len() {
                continue;
            }
            out.push(make_sample(demo, t, kf_positions[next], SampleType::DemoAug));
        }
        Ok(motion_saliency_filter(out, params.saliency_min_dist))
    }
}

/// Baseline builder at default saliency settings. See [`Conventional`].
pub fn build_conventional(
    demo: &Demonstration,
    interval: usize,
) -> Result<Vec<ReplaySample>, BufferError> {
    Conventional.build(demo, &BuildParams { interval, ..BuildParams::default() })
}

/// Deduplicated builder. See [`Optimized`].
pub fn build_optimized(
    demo: &Demonstration,
    interval: usize,
    saliency_min_dist: f64,
) -> Result<Vec<ReplaySample>, BufferError> {
    Optimized.build(demo, &BuildParams { interval, saliency_min_dist })
}

/// Build one buffer over many demos (parallel per demo, output in input
/// order).
pub fn build_buffer(
    demos: &[Demonstration],
    strategy: &dyn BufferStrategy,
    params: &BuildParams,
) -> Result<ReplayBuffer, BufferError> {
    let per_demo: Vec<Result<Vec<ReplaySample>, BufferError>> =
        demos.par_iter().map(|d| strategy.build(d, params)).collect();
    let mut samples = Vec::new();
    for r in per_demo {
        samples.extend(r?);
    }
    Ok(ReplayBuffer { samples, strategy: strategy.name().to_string() })
}

/// Keep the first occurrence per (demo_id, obs_frame, target_frame);
/// survivor order is unchanged.
pub fn dedup(samples: Vec<ReplaySample>) -> Vec<ReplaySample> {
    let mut seen: BTreeSet<(String, usize, usize)> = BTreeSet::new();
    samples
        .into_iter()
        .filter(|s| seen.insert((s.demo_id.clone(), s.obs_frame, s.target_frame)))
        .collect()
}

/// `to`, expressed relative to `from_dir`, with `/` separators. Both paths
/// are normalized lexically (no filesystem access), so the result is stable
/// across runs.
fn relative_path(from_dir: &Path, to: &Path) -> String {
    fn normalize(p: &Path) -> Vec<String> {
        let abs = if p.is_absolute() {
            p.to_path_buf()
        } else {
            std::env::current_dir().unwrap_or_else(|_| PathBuf::from("/")).join(p)
        };
        let mut parts: Vec<String> = Vec::new();
        for c in abs.components() {
            match c {
                Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
                Component::ParentDir => {
                    parts.pop();
                }
                Component::RootDir | Component::Prefix(_) | Component::CurDir => {}
            }
        }
        parts
    }
    let a = normalize(from_dir);
    let b = normalize(to);
    let common = a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count();
    let mut parts: Vec<String> = std::iter::repeat("..".to_string()).take(a.len() - common).collect();
    parts.extend_from_slice(&b[common..]);
    if parts.is_empty() {
        ".".to_string()
    } else {
        parts.join("/")
    }
}

/// Write `buffer_index.jsonl` + `buffer_stats.json` under `dir`.
///
/// When `demo_roots` maps demo ids to their demo directories, cloud fields
/// are rewritten relative to `dir` so the buffer references the original
/// cloud files in place. With `None` the cloud fields are written verbatim,
/// which makes load → save a byte-identical round trip.
pub fn save_buffer(
    dir: &Path,
    buffer: &ReplayBuffer,
    demo_roots: Option<&std::collections::BTreeMap<String, PathBuf>>,
) -> Result<BufferStats, BufferError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source: std::io::Error| BufferError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let index_path = dir.join(INDEX_FILE);
    let mut body = String::new();
    for s in &buffer.samples {
        let mut s = s.clone();
        if let Some(roots) = demo_roots {
            if let Some(root) = roots.get(&s.demo_id) {
                s.obs_cloud = relative_path(dir, &root.join(&s.obs_cloud));
                s.target_cloud = relative_path(dir, &root.join(&s.target_cloud));
            }
        }
        let repr = SampleRepr::from(s);
        body.push_str(&serde_json::to_string(&repr).expect("sample serializes"));
        body.push('\n');
    }
    fs::write(&index_path, &body).map_err(io_err(&index_path))?;
    let stats = compute_stats(&buffer.samples, body.len() as u64);
    let stats_path = dir.join(STATS_FILE);
    let mut stats_body = serde_json::to_string_pretty(&stats).expect("stats serialize");
    stats_body.push('\n');
    fs::write(&stats_path, stats_body).map_err(io_err(&stats_path))?;
    Ok(stats)
}

/// Read the samples back from a buffer directory.
pub fn load_buffer(dir: &Path) -> Result<Vec<ReplaySample>, BufferError> {
    let index_path = dir.join(INDEX_FILE);
    let file = fs::File::open(&index_path)
        .map_err(|source| BufferError::Io { path: index_path.clone(), source })?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| BufferError::Io { path: index_path.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let repr: SampleRepr = serde_json::from_str(&line).map_err(|e| BufferError::Index {
            path: index_path.clone(),
            line: lineno + 1,
            detail: e.to_string(),
        })?;
        samples.push(ReplaySample::from(repr));
    }
    Ok(samples)
}

/// Stream the index to an arbitrary writer (used by the CLI for stdout
/// previews).
pub fn write_index<W: Write>(mut w: W, samples: &[ReplaySample]) -> std::io::Result<()> {
    for s in samples {
        let repr = SampleRepr::from(s.clone());
        serde_json::to_writer(&mut w, &repr)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
