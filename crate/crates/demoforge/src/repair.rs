//! Keyframe discovery and the repair heuristics applied to brittle keyframe
//! annotations: motion-saliency filtering, boundary retreat, curvature-peak
//! via keyframes, height clearance, and defensive via-points around declared
//! risk zones.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demo::{Demonstration, Pose, Workspace};
use crate::geom::{self, Aabb, Vec3};
use crate::replay::{ReplaySample, SampleType};

/// Tunables for discovery and the repair heuristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    /// Minimum observation-to-target travel (meters) for a demo-augmentation
    /// sample to be worth keeping.
    pub saliency_min_dist: f64,
    /// Interpolation fraction for the boundary retreat; the repaired keypose
    /// sits at this fraction of the way from the previous keypose to the
    /// boundary-adjacent target. Sensible values live in [0.8, 0.9].
    pub retreat_alpha: f64,
    /// When true, retreat interpolates along the demonstrated dense path
    /// instead of the straight pose pair.
    pub retreat_dense_path: bool,
    /// Minimum height above the floor (meters) enforced on keyposes.
    pub clearance_delta: f64,
    /// Via keyframes inserted per keyframe segment by the curvature repair.
    pub via_count: usize,
    /// Declared collision-prone regions with their preparation poses.
    pub risk_zones: Vec<RiskZone>,
    /// Whether gripper-flag flips mark keyframes during discovery.
    pub gripper_change_detect: bool,
    /// Speed (m/s) below which the end effector counts as stationary.
    pub velocity_epsilon: f64,
}

impl Default for RepairConfig {
    fn default() -> RepairConfig {
        RepairConfig {
            saliency_min_dist: 0.02,
            retreat_alpha: 0.85,
            retreat_dense_path: false,
            clearance_delta: 0.008,
            via_count: 2,
            risk_zones: Vec::new(),
            gripper_change_detect: true,
            velocity_epsilon: 0.002,
        }
    }
}

/// A box the trajectory should not cut through, plus the pose to adopt
/// before entering its vicinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskZone {
    pub zone: Aabb,
    pub prep_pose: Pose,
}

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("demo needs at least 2 frames for keyframe discovery, found {found}")]
    TooFewFrames { found: usize },
    #[error("segment ({start}, {end}) is not a valid frame range")]
    BadSegment { start: usize, end: usize },
    #[error(
        "segment ({start}, {end}) has {interior} interior frames; {needed} are needed \
         to place {count} via keyframes at least 2 frames apart"
    )]
    SegmentTooShort { start: usize, end: usize, interior: usize, needed: usize, count: usize },
    #[error("target keypose is not within the boundary margin; retreat does not apply")]
    NotNearBoundary,
    #[error("retreat alpha {alpha} outside (0, 1]")]
    BadAlpha { alpha: f64 },
    #[error("risk zone {zone} preparation pose lies outside the workspace")]
    PrepPoseOutsideWorkspace { zone: usize },
    #[error(transparent)]
    Demo(#[from] crate::demo::DemoError),
}

/// Finite-difference end-effector speeds; entry `i` is the speed over the
/// step into frame `i` (entry 0 is unused and set to infinity). A zero or
/// negative timestamp delta yields an infinite speed, i.e. "not stationary".
fn step_speeds(demo: &Demonstration) -> Vec<f64> {
    let mut speeds = vec![f64::INFINITY; demo.frames.len()];
    for i in 1..demo.frames.len() {
        let dt = demo.frames[i].timestamp_s - demo.frames[i - 1].timestamp_s;
        let dp = geom::dist(
            demo.frames[i].action.pose.position,
            demo.frames[i - 1].action.pose.position,
        );
        speeds[i] = if dt > 0.0 { dp / dt } else { f64::INFINITY };
    }
    speeds
}

/// Recover keyframe annotations from raw frames.
///
/// A frame is a keyframe when the gripper flag flips relative to the
/// previous frame, or when the end-effector speed drops below
/// `velocity_epsilon` having been at or above it on the previous step. The
/// final frame is always a keyframe. Stationarity keyframes closer than 2
/// frames to the previously kept keyframe are suppressed; gripper-change
/// keyframes are always kept.
///
/// Returns frame *index values* in increasing order.
pub fn discover_keyframes(
    demo: &Demonstration,
    cfg: &RepairConfig,
) -> Result<Vec<usize>, RepairError> {
    let n = demo.frames.len();
    if n < 2 {
        return Err(RepairError::TooFewFrames { found: n });
    }
    let speeds = step_speeds(demo);
    // (position, caused by gripper change)
    let mut kept: Vec<(usize, bool)> = Vec::new();
    for i in 1..n {
        let gripper_change = cfg.gripper_change_detect
            && demo.frames[i].action.gripper_open != demo.frames[i - 1].action.gripper_open;
        let stopped = i >= 2
            && speeds[i] < cfg.velocity_epsilon
            && speeds[i - 1] >= cfg.velocity_epsilon;
        if gripper_change {
            kept.push((i, true));
        } else if stopped {
            match kept.last() {
                Some(&(prev, _)) if i - prev < 2 => {} // too close to the last keyframe
                _ => kept.push((i, false)),
            }
        }
    }
    // The final frame is always a keyframe. If a stationarity keyframe sits
    // right next to it, the final frame wins.
    let last = n - 1;
    match kept.last().copied() {
        Some((pos, _)) if pos == last => {}
        Some((pos, false)) if last - pos < 2 => {
            kept.pop();
            kept.push((last, false));
        }
        _ => kept.push((last, false)),
    }
    Ok(kept.into_iter().map(|(pos, _)| demo.frames[pos].index).collect())
}

/// Drop demo-augmentation samples whose observation barely moves toward the
/// target. Keyframe-transition samples always pass. Idempotent; never
/// reorders survivors.
pub fn motion_saliency_filter(samples: Vec<ReplaySample>, min_dist: f64) -> Vec<ReplaySample> {
    samples
        .into_iter()
        .filter(|s| {
            s.sample_type == SampleType::Keyframe
                || geom::dist(s.obs_action.pose.position, s.target_action.pose.position)
                    > min_dist
        })
        .collect()
}

/// Pull a boundary-adjacent target keypose back toward the previous keypose.
///
/// Applies only when the target lies within `ws.boundary_margin` of the
/// workspace box (or outside it); otherwise [`RepairError::NotNearBoundary`]
/// is returned and the caller keeps the original keypose. The repaired pose
/// sits at fraction `alpha` of the way from `prev` to `target`: position by
/// linear interpolation, orientation by spherical interpolation.
pub fn retreat_keypose(
    prev: &Pose,
    target: &Pose,
    alpha: f64,
    ws: &Workspace,
) -> Result<Pose, RepairError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(RepairError::BadAlpha { alpha });
    }
    if ws.aabb.face_distance(target.position) >= ws.boundary_margin {
        return Err(RepairError::NotNearBoundary);
    }
    Ok(Pose {
        position: geom::lerp(prev.position, target.position, alpha),
        orientation: prev.orientation.slerp(&target.orientation, alpha),
    })
}

/// Dense-path variant of [`retreat_keypose`]: walk the recorded frames from
/// the previous keyframe to the target keyframe and stop at fraction `alpha`
/// of the accumulated arc length. Orientation still interpolates spherically
/// between the two keyposes by `alpha`.
///
/// `prev_kf` and `target_kf` are frame index values with `prev_kf` earlier.
pub fn retreat_along_path(
    demo: &Demonstration,
    prev_kf: usize,
    target_kf: usize,
    alpha: f64,
    ws: &Workspace,
) -> Result<Pose, RepairError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(RepairError::BadAlpha { alpha });
    }
    let a = demo
        .position_of_index(prev_kf)
        .ok_or(RepairError::BadSegment { start: prev_kf, end: target_kf })?;
    let b = demo
        .position_of_index(target_kf)
        .ok_or(RepairError::BadSegment { start: prev_kf, end: target_kf })?;
    if a >= b {
        return Err(RepairError::BadSegment { start: prev_kf, end: target_kf });
    }
    let prev = demo.frames[a].action.pose;
    let target = demo.frames[b].action.pose;
    if ws.aabb.face_distance(target.position) >= ws.boundary_margin {
        return Err(RepairError::NotNearBoundary);
    }
    let pts: Vec<Vec3> = demo.frames[a..=b].iter().map(|f| f.action.pose.position).collect();
    let total: f64 = pts.windows(2).map(|w| geom::dist(w[0], w[1])).sum();
    let position = if total == 0.0 {
        target.position
    } else {
        let mut remaining = alpha * total;
        let mut position = *pts.last().unwrap();
        for w in pts.windows(2) {
            let step = geom::dist(w[0], w[1]);
            if remaining <= step {
                let t = if step == 0.0 { 0.0 } else { remaining / step };
                position = geom::lerp(w[0], w[1], t);
                break;
            }
            remaining -= step;
        }
        position
    };
    Ok(Pose { position, orientation: prev.orientation.slerp(&target.orientation, alpha) })
}

/// Discrete curvature at each interior frame of a keyframe segment:
/// the norm of the second difference of positions, normalized by the
/// squared mean step length over the segment.
fn segment_curvature(demo: &Demonstration, a: usize, b: usize) -> Vec<(usize, f64)> {
    let pos = |i: usize| demo.frames[i].action.pose.position;
    let steps: Vec<f64> = (a..b).map(|i| geom::dist(pos(i + 1), pos(i))).collect();
    let mean_step = steps.iter().sum::<f64>() / steps.len() as f64;
    (a + 1..b)
        .map(|j| {
            if mean_step <= f64::EPSILON {
                return (j, 0.0);
            }
            let second_diff =
                geom::sub(geom::sub(pos(j + 1), pos(j)), geom::sub(pos(j), pos(j - 1)));
            (j, geom::norm(second_diff) / (mean_step * mean_step))
        })
        .collect()
}

/// Choose `count` via keyframes inside the segment `(start, end)` (frame
/// index values of two keyframes) at the sharpest bends of the recorded
/// path.
///
/// Frames are ranked by discrete curvature; selection is greedy from the
/// highest value down, ties broken toward the lower frame index, and any
/// candidate closer than 2 frames to an already chosen one is skipped. The
/// result is sorted ascending and strictly interior to the segment.
pub fn insert_via_keyframes(
    demo: &Demonstration,
    segment: (usize, usize),
    count: usize,
) -> Result<Vec<usize>, RepairError> {
    let (s, e) = segment;
    let a = demo.position_of_index(s).ok_or(RepairError::BadSegment { start: s, end: e })?;
    let b = demo.position_of_index(e).ok_or(RepairError::BadSegment { start: s, end: e })?;
    if a >= b {
        return Err(RepairError::BadSegment { start: s, end: e });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let interior = b - a - 1;
    let needed = 2 * count - 1;
    if interior < needed {
        return Err(RepairError::SegmentTooShort { start: s, end: e, interior, needed, count });
    }
    let mut ranked = segment_curvature(demo, a, b);
    // Descending curvature, then ascending frame position.
    ranked.sort_by(|(ja, ka), (jb, kb)| {
        kb.partial_cmp(ka).unwrap_or(std::cmp::Ordering::Equal).then(ja.cmp(jb))
    });
    let mut picked: Vec<usize> = Vec::with_capacity(count);
    for (j, _) in ranked {
        if picked.iter().all(|&p| j.abs_diff(p) >= 2) {
            picked.push(j);
            if picked.len() == count {
                break;
            }
        }
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|pos| demo.frames[pos].index).collect())
}

/// Clamp every keypose to at least `floor_z + delta` above the floor.
/// Identity for poses already clear of the floor.
pub fn apply_height_clearance(keyposes: &[Pose], floor_z: f64, delta: f64) -> Vec<Pose> {
    keyposes
        .iter()
        .map(|p| {
            let mut out = *p;
            out.position[2] = out.position[2].max(floor_z + delta);
            out
        })
        .collect()
}

/// Where a planned keypose came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum KeyposeSource {
    /// An original keyframe, by frame index value.
    Frame { index: usize },
    /// A preparation pose inserted ahead of a risk-zone crossing;
    /// `zone` indexes into the configured risk-zone list.
    DefensiveViaPoint { zone: usize },
}

/// One entry of a repaired keypose plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyposeEntry {
    pub pose: Pose,
    pub source: KeyposeSource,
}

/// Insert each risk zone's preparation pose ahead of every keyframe segment
/// whose straight-line chord cuts through the zone.
///
/// The plan replays the demo's keyframes in order; for a segment crossing
/// one or more zones, the prep poses are inserted immediately before the
/// segment's target keypose, ordered by where along the chord each zone is
/// first touched. A zone is inserted at most once per segment, but separate
/// segments crossing the same zone each get their own insertion.
pub fn insert_defensive_viapoints(
    demo: &Demonstration,
    zones: &[RiskZone],
    ws: &Workspace,
) -> Result<Vec<KeyposeEntry>, RepairError> {
    for (zi, z) in zones.iter().enumerate() {
        if !ws.contains(z.prep_pose.position) {
            return Err(RepairError::PrepPoseOutsideWorkspace { zone: zi });
        }
    }
    let positions = demo.keyframe_positions()?;
    let mut plan = Vec::new();
    for (i, &pos) in positions.iter().enumerate() {
        let frame = &demo.frames[pos];
        if i > 0 {
            let prev = &demo.frames[positions[i - 1]];
            let chord = (prev.action.pose.position, frame.action.pose.position);
            let mut crossings: Vec<(f64, usize)> = zones
                .iter()
                .enumerate()
                .filter_map(|(zi, z)| z.zone.segment_entry(chord.0, chord.1).map(|t| (t, zi)))
                .collect();
            crossings.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            for (_, zi) in crossings {
                plan.push(KeyposeEntry {
                    pose: zones[zi].prep_pose,
                    source: KeyposeSource::DefensiveViaPoint { zone: zi },
                });
            }
        }
        plan.push(KeyposeEntry {
            pose: frame.action.pose,
            source: KeyposeSource::Frame { index: frame.index },
        });
    }
    Ok(plan)
}
