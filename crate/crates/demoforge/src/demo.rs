//! Demonstration data model: poses, frames, point clouds, bundle IO,
//! and total (never-aborting) validation.
//!
//! A demonstration bundle is a directory holding `manifest.json` plus one
//! binary point-cloud file per frame. Clouds are referenced by file name so
//! that downstream consumers (replay buffers, augmentation) can share them
//! without copying.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Aabb, Quat, Vec3};

/// Tolerance on `|  |q| - 1 |` for a quaternion to count as unit.
pub const UNIT_QUAT_TOL: f64 = 1e-6;

/// Manifest file name inside a demonstration bundle directory.
pub const MANIFEST_FILE: &str = "manifest.json";

/// End-effector pose: position plus unit orientation quaternion (x, y, z, w).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quat) -> Pose {
        Pose { position, orientation }
    }

    pub fn is_unit(&self) -> bool {
        (self.orientation.norm() - 1.0).abs() <= UNIT_QUAT_TOL
    }

    /// Flat `[x, y, z, qx, qy, qz, qw]` layout used by on-disk records.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.orientation;
        let p = self.position;
        [p[0], p[1], p[2], q.x, q.y, q.z, q.w]
    }

    pub fn from_array(a: [f64; 7]) -> Pose {
        Pose {
            position: [a[0], a[1], a[2]],
            orientation: Quat::new(a[3], a[4], a[5], a[6]),
        }
    }
}

/// The supervised action attached to a frame: where the end effector is (or
/// should go), whether the gripper is open, and whether collisions with the
/// scene are expected and acceptable while reaching it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub pose: Pose,
    pub gripper_open: bool,
    pub ignore_collision: bool,
}

/// One recorded frame of a demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "FrameRepr", into = "FrameRepr")]
pub struct Frame {
    /// Recorder-assigned index; strictly increasing across the demo.
    pub index: usize,
    pub timestamp_s: f64,
    pub action: ActionRecord,
    /// Cloud file name, relative to the bundle directory.
    pub cloud_file: String,
}

/// On-disk frame layout: the pose is flattened to a 7-array.
#[derive(Serialize, Deserialize)]
struct FrameRepr {
    index: usize,
    timestamp_s: f64,
    pose: [f64; 7],
    gripper_open: bool,
    ignore_collision: bool,
    cloud_file: String,
}

impl From<FrameRepr> for Frame {
    fn from(r: FrameRepr) -> Frame {
        Frame {
            index: r.index,
            timestamp_s: r.timestamp_s,
            action: ActionRecord {
                pose: Pose::from_array(r.pose),
                gripper_open: r.gripper_open,
                ignore_collision: r.ignore_collision,
            },
            cloud_file: r.cloud_file,
        }
    }
}

impl From<Frame> for FrameRepr {
    fn from(f: Frame) -> FrameRepr {
        FrameRepr {
            index: f.index,
            timestamp_s: f.timestamp_s,
            pose: f.action.pose.to_array(),
            gripper_open: f.action.gripper_open,
            ignore_collision: f.action.ignore_collision,
            cloud_file: f.cloud_file,
        }
    }
}

/// One colored point; coordinates in meters, colors in 0..=255.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub pos: [f32; 3],
    pub rgb: [u8; 3],
}

/// Unordered colored point cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A full expert demonstration: ordered frames plus keyframe annotations.
///
/// Invariants expected of well-formed demos (checked by
/// [`validate_demonstration`], not enforced structurally): frame indices
/// strictly increase, `keyframe_indices` reference existing frame indices,
/// the final frame is a keyframe, and the instruction is non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demonstration {
    pub demo_id: String,
    pub task: String,
    pub instruction: String,
    pub keyframe_indices: Vec<usize>,
    pub frames: Vec<Frame>,
}

impl Demonstration {
    /// Position (offset into `frames`) of the frame whose `index` equals
    /// `value`, if any. Frame indices normally equal positions, but the
    /// format only promises they strictly increase.
    pub fn position_of_index(&self, value: usize) -> Option<usize> {
        self.frames
            .binary_search_by(|f| f.index.cmp(&value))
            .ok()
            .or_else(|| self.frames.iter().position(|f| f.index == value))
    }

    /// Keyframe positions (offsets into `frames`), in annotation order.
    /// Fails if an annotation references a missing frame index.
    pub fn keyframe_positions(&self) -> Result<Vec<usize>, DemoError> {
        self.keyframe_indices
            .iter()
            .map(|&k| {
                self.position_of_index(k).ok_or(DemoError::KeyframeOutOfRange { keyframe: k })
            })
            .collect()
    }
}

/// Workspace geometry shared by the whole pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub aabb: Aabb,
    /// Height of the supporting surface; poses are pushed above
    /// `floor_z + clearance` by the height-clearance repair.
    pub floor_z: f64,
    /// Distance from an AABB face within which a keypose counts as
    /// boundary-adjacent (and eligible for the retreat repair).
    pub boundary_margin: f64,
}

impl Workspace {
    pub fn new(aabb: Aabb, floor_z: f64, boundary_margin: f64) -> Result<Workspace, DemoError> {
        if (0..3).any(|a| aabb.min[a] >= aabb.max[a]) {
            return Err(DemoError::BadWorkspace {
                detail: "aabb min must be strictly below max on every axis".into(),
            });
        }
        if floor_z < aabb.min[2] {
            return Err(DemoError::BadWorkspace {
                detail: "floor_z below the workspace box".into(),
            });
        }
        if boundary_margin < 0.0 {
            return Err(DemoError::BadWorkspace { detail: "negative boundary_margin".into() });
        }
        Ok(Workspace { aabb, floor_z, boundary_margin })
    }

    /// One-meter cube centered on the origin in x/y, resting on z = 0.
    pub fn standard() -> Workspace {
        Workspace {
            aabb: Aabb::new([-0.5, -0.5, 0.0], [0.5, 0.5, 1.0]),
            floor_z: 0.0,
            boundary_margin: 0.05,
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.aabb.contains(p)
    }
}

impl Default for Workspace {
    fn default() -> Workspace {
        Workspace::standard()
    }
}

/// Errors raised by bundle IO. Validation never raises these for content
/// problems; it reports [`Violation`]s instead.
#[derive(Debug, Error)]
pub enum DemoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("manifest error in {path}: {detail}")]
    Manifest { path: String, detail: String },
    #[error("cloud file {path}: {source}")]
    Cloud {
        path: String,
        #[source]
        source: bpc1::FormatError,
    },
    #[error("demo has {frames} frames but {clouds} clouds were supplied")]
    CloudCount { frames: usize, clouds: usize },
    #[error("keyframe index {keyframe} does not match any frame")]
    KeyframeOutOfRange { keyframe: usize },
    #[error("invalid workspace: {detail}")]
    BadWorkspace { detail: String },
}

/// A demonstration together with its decoded clouds, one per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoBundle {
    pub demo: Demonstration,
    pub clouds: Vec<PointCloud>,
}

fn io_err(path: &Path, source: io::Error) -> DemoError {
    DemoError::Io { path: path.display().to_string(), source }
}

/// Read only the manifest of a bundle; clouds stay on disk.
pub fn load_manifest(dir: &Path) -> Result<Demonstration, DemoError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| DemoError::Manifest {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Read a full bundle: manifest plus every referenced cloud.
pub fn load_demopack(dir: &Path) -> Result<DemoBundle, DemoError> {
    let demo = load_manifest(dir)?;
    let clouds = demo
        .frames
        .iter()
        .map(|f| load_frame_cloud(dir, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DemoBundle { demo, clouds })
}

/// Decode the cloud file referenced by one frame.
pub fn load_frame_cloud(dir: &Path, frame: &Frame) -> Result<PointCloud, DemoError> {
    let path = dir.join(&frame.cloud_file);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    bpc1::decode(&bytes)
        .map_err(|e| DemoError::Cloud { path: path.display().to_string(), source: e })
}

/// Write a bundle: manifest plus one cloud file per frame.
///
/// Saving a freshly loaded bundle reproduces every cloud file byte for byte
/// (the codec round-trips exactly), so bundles can be rewritten in place
/// without churning referenced data.
pub fn save_demopack(
    dir: &Path,
    demo: &Demonstration,
    clouds: &[PointCloud],
) -> Result<(), DemoError> {
    if clouds.len() != demo.frames.len() {
        return Err(DemoError::CloudCount { frames: demo.frames.len(), clouds: clouds.len() });
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(demo).expect("manifest serialization");
    json.push(b'\n');
    fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;
    for (frame, cloud) in demo.frames.iter().zip(clouds) {
        let path = dir.join(&frame.cloud_file);
        fs::write(&path, bpc1::encode(cloud)).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// One content problem found by validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyInstruction,
    NonMonotonicFrameIndex { frame: usize },
    NonMonotonicTimestamp { frame: usize },
    NonFinitePosition { frame: usize },
    OutOfWorkspace { frame: usize },
    NonUnitQuaternion { frame: usize },
    KeyframeOutOfRange { keyframe: usize },
    LastFrameNotKeyframe,
    NoFrames,
    MissingCloudFile { frame: usize, path: String },
    CorruptCloudFile { frame: usize, path: String, detail: String },
    NonFiniteCloudPoint { frame: usize, point: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyInstruction => write!(f, "instruction is empty"),
            Violation::NonMonotonicFrameIndex { frame } => {
                write!(f, "frame {frame}: index not strictly increasing")
            }
            Violation::NonMonotonicTimestamp { frame } => {
                write!(f, "frame {frame}: timestamp decreases")
            }
            Violation::NonFinitePosition { frame } => {
                write!(f, "frame {frame}: non-finite position")
            }
            Violation::OutOfWorkspace { frame } => {
                write!(f, "frame {frame}: pose outside the workspace box")
            }
            Violation::NonUnitQuaternion { frame } => {
                write!(f, "frame {frame}: orientation quaternion is not unit length")
            }
            Violation::KeyframeOutOfRange { keyframe } => {
                write!(f, "keyframe index {keyframe} matches no frame")
            }
            Violation::LastFrameNotKeyframe => write!(f, "final frame is not a keyframe"),
            Violation::NoFrames => write!(f, "demo has no frames"),
            Violation::MissingCloudFile { frame, path } => {
                write!(f, "frame {frame}: cloud file {path} is missing or unreadable")
            }
            Violation::CorruptCloudFile { frame, path, detail } => {
                write!(f, "frame {frame}: cloud file {path} is corrupt: {detail}")
            }
            Violation::NonFiniteCloudPoint { frame, point } => {
                write!(f, "frame {frame}: cloud point {point} has non-finite coordinates")
            }
        }
    }
}

/// Everything validation found. Empty means the demo is well-formed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check a demonstration against the workspace and its on-disk clouds.
///
/// Validation is total: any byte string presented as a demo yields a report,
/// never a panic or an early abort. Unreadable and undecodable cloud files
/// become violations naming the offending path.
pub fn validate_demonstration(
    dir: &Path,
    demo: &Demonstration,
    ws: &Workspace,
) -> ValidationReport {
    let mut v = Vec::new();
    if demo.instruction.trim().is_empty() {
        v.push(Violation::EmptyInstruction);
    }
    if demo.frames.is_empty() {
        v.push(Violation::NoFrames);
    }
    for (i, frame) in demo.frames.iter().enumerate() {
        if i > 0 && frame.index <= demo.frames[i - 1].index {
            v.push(Violation::NonMonotonicFrameIndex { frame: frame.index });
        }
        if i > 0 && frame.timestamp_s < demo.frames[i - 1].timestamp_s {
            v.push(Violation::NonMonotonicTimestamp { frame: frame.index });
        }
        let p = frame.action.pose.position;
        if !p.iter().all(|c| c.is_finite()) {
            v.push(Violation::NonFinitePosition { frame: frame.index });
        } else if !ws.contains(p) {
            v.push(Violation::OutOfWorkspace { frame: frame.index });
        }
        if !frame.action.pose.is_unit() {
            v.push(Violation::NonUnitQuaternion { frame: frame.index });
        }
    }
    let known: BTreeSet<usize> = demo.frames.iter().map(|f| f.index).collect();
    for &k in &demo.keyframe_indices {
        if !known.contains(&k) {
            v.push(Violation::KeyframeOutOfRange { keyframe: k });
        }
    }
    if let Some(last) = demo.frames.last() {
        if !demo.keyframe_indices.contains(&last.index) {
            v.push(Violation::LastFrameNotKeyframe);
        }
    }
    for frame in &demo.frames {
        let path = dir.join(&frame.cloud_file);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(_) => {
                v.push(Violation::MissingCloudFile {
                    frame: frame.index,
                    path: frame.cloud_file.clone(),
                });
                continue;
            }
        };
        match bpc1::decode(&bytes) {
            Ok(cloud) => {
                for (pi, pt) in cloud.points.iter().enumerate() {
                    if !pt.pos.iter().all(|c| c.is_finite()) {
                        v.push(Violation::NonFiniteCloudPoint { frame: frame.index, point: pi });
                        break;
                    }
                }
            }
            Err(e) => v.push(Violation::CorruptCloudFile {
                frame: frame.index,
                path: frame.cloud_file.clone(),
                detail: e.to_string(),
            }),
        }
    }
    ValidationReport { violations: v }
}

/// Binary point-cloud codec.
///
/// Layout: 4 magic bytes `BPC1`, a little-endian `u32` point count, then one
/// 15-byte record per point — three `f32` (little-endian) coordinates
/// followed by three `u8` color channels. No padding anywhere; total size is
/// exactly `8 + 15 * count` bytes. Decode errors carry the byte offset at
/// which the problem was detected.
pub mod bpc1 {
    use super::{CloudPoint, PointCloud};
    use thiserror::Error;

    pub const MAGIC: &[u8; 4] = b"BPC1";
    pub const HEADER_LEN: usize = 8;
    pub const RECORD_LEN: usize = 15;

    #[derive(Debug, Clone, PartialEq, Error)]
    pub enum FormatError {
        #[error("bad magic bytes at byte offset 0")]
        BadMagic,
        #[error("truncated header at byte offset {offset}")]
        TruncatedHeader { offset: usize },
        #[error(
            "point count mismatch: header declares {declared} points but payload holds \
             {complete} complete records; truncated at byte offset {offset}"
        )]
        Truncated { declared: u32, complete: usize, offset: usize },
        #[error("trailing bytes after {declared} records at byte offset {offset}")]
        TrailingBytes { declared: u32, offset: usize },
    }

    pub fn encode(cloud: &PointCloud) -> Vec<u8> {
        assert!(cloud.points.len() <= u32::MAX as usize, "cloud too large for format");
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * cloud.points.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(cloud.points.len() as u32).to_le_bytes());
        for p in &cloud.points {
            for c in p.pos {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&p.rgb);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<PointCloud, FormatError> {
        if bytes.len() < 4 {
            // Too short to even hold the magic; report it as a bad magic at 0
            // when the prefix already disagrees, otherwise a truncated header.
            if !MAGIC.starts_with(&bytes[..bytes.len().min(4)]) {
                return Err(FormatError::BadMagic);
            }
            return Err(FormatError::TruncatedHeader { offset: bytes.len() });
        }
        if &bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::TruncatedHeader { offset: bytes.len() });
        }
        let declared = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let payload = &bytes[HEADER_LEN..];
        let expected = (declared as usize).checked_mul(RECORD_LEN).unwrap();
        if payload.len() < expected {
            let complete = payload.len() / RECORD_LEN;
            return Err(FormatError::Truncated {
                declared,
                complete,
                offset: HEADER_LEN + complete * RECORD_LEN,
            });
        }
        if payload.len() > expected {
            return Err(FormatError::TrailingBytes { declared, offset: HEADER_LEN + expected });
        }
        let mut points = Vec::with_capacity(declared as usize);
        for rec in payload.chunks_exact(RECORD_LEN) {
            let x = f32::from_le_bytes(rec[0..4].try_into().unwrap());
            let y = f32::from_le_bytes(rec[4..8].try_into().unwrap());
            let z = f32::from_le_bytes(rec[8..12].try_into().unwrap());
            points.push(CloudPoint { pos: [x, y, z], rgb: [rec[12], rec[13], rec[14]] });
        }
        Ok(PointCloud { points })
    }
}
