//! Synthetic demonstration generators.
//!
//! Each scenario builds a fully valid bundle — manifest plus per-frame
//! point clouds — deterministically from its parameters, and is shaped to
//! exercise one corner of the pipeline: late keyframes for buffer
//! compression, sharp path corners for via-keyframe recovery, a
//! boundary-hugging keypose for the retreat repair, a floor-scraping
//! keypose for height clearance, and a cluttered crossing for defensive
//! via-points.
//!
//! Scenarios live behind a trait-object registry so the CLI and tests can
//! select them by name.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::demo::{
    ActionRecord, CloudPoint, DemoBundle, Demonstration, Frame, PointCloud, Pose, Workspace,
};
use crate::geom::{Aabb, Quat, Vec3};
use crate::repair::RiskZone;

/// Inputs every scenario understands.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub seed: u64,
    pub demo_id: String,
    /// Varies instruction phrasing (and task label) within a scenario
    /// family, so one generator can span many distinct tasks.
    pub variant: usize,
}

impl ScenarioParams {
    pub fn new(seed: u64, demo_id: impl Into<String>) -> ScenarioParams {
        ScenarioParams { seed, demo_id: demo_id.into(), variant: 0 }
    }
}

/// A named demonstration generator.
pub trait DemoScenario: Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    /// The manifest alone — cheap enough to call thousands of times.
    fn manifest(&self, params: &ScenarioParams) -> Demonstration;
    /// The cloud for one frame (position into `demo.frames`).
    fn frame_cloud(&self, demo: &Demonstration, pos: usize, params: &ScenarioParams)
        -> PointCloud;

    /// Manifest plus every frame cloud.
    fn bundle(&self, params: &ScenarioParams) -> DemoBundle {
        let demo = self.manifest(params);
        let clouds = (0..demo.frames.len())
            .map(|i| self.frame_cloud(&demo, i, params))
            .collect();
        DemoBundle { demo, clouds }
    }
}

/// Every built-in scenario, in registry order.
pub static SCENARIOS: &[&dyn DemoScenario] =
    &[&PickPlace, &ZigzagWipe, &DrawerBoundary, &LowClearance, &ClutteredZone];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown scenario {name:?}; known scenarios: {known}")]
    UnknownScenario { name: String, known: String },
}

pub fn scenario_by_name(name: &str) -> Result<&'static dyn DemoScenario, SynthError> {
    SCENARIOS
        .iter()
        .find(|s| s.name() == name)
        .copied()
        .ok_or_else(|| SynthError::UnknownScenario {
            name: name.to_string(),
            known: SCENARIOS.iter().map(|s| s.name()).collect::<Vec<_>>().join(", "),
        })
}

// ---------------------------------------------------------------------------
// Shared construction helpers.

const FPS: f64 = 20.0;

/// Piecewise-linear trajectory through `(frame, position)` waypoints;
/// `gripper(i)` supplies the per-frame gripper flag. Waypoint frames must
/// start at 0, strictly increase, and end at `n - 1`.
fn interp_frames(
    waypoints: &[(usize, Vec3)],
    n: usize,
    gripper: impl Fn(usize) -> bool,
) -> Vec<Frame> {
    assert!(waypoints.len() >= 2);
    assert_eq!(waypoints[0].0, 0);
    assert_eq!(waypoints.last().unwrap().0, n - 1);
    let mut frames = Vec::with_capacity(n);
    let mut seg = 0usize;
    for i in 0..n {
        while waypoints[seg + 1].0 < i {
            seg += 1;
        }
        let (fa, pa) = waypoints[seg];
        let (fb, pb) = waypoints[seg + 1];
        let t = if fb == fa { 0.0 } else { (i - fa) as f64 / (fb - fa) as f64 };
        let position = crate::geom::lerp(pa, pb, t);
        frames.push(Frame {
            index: i,
            timestamp_s: i as f64 / FPS,
            action: ActionRecord {
                pose: Pose::new(position, Quat::IDENTITY),
                gripper_open: gripper(i),
                ignore_collision: false,
            },
            cloud_file: format!("frame_{i:05}.bpc"),
        });
    }
    frames
}

/// Scatter `n` points uniformly in a ball of radius `r` around `center`,
/// clamped into the standard workspace cube.
fn ball(rng: &mut ChaCha8Rng, center: Vec3, r: f64, n: usize, rgb: [u8; 3]) -> Vec<CloudPoint> {
    let ws = Workspace::standard();
    (0..n)
        .map(|_| {
            let mut p = center;
            loop {
                let d = [
                    rng.gen_range(-r..=r),
                    rng.gen_range(-r..=r),
                    rng.gen_range(-r..=r),
                ];
                if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r {
                    for a in 0..3 {
                        p[a] = (center[a] + d[a])
                            .clamp(ws.aabb.min[a] + 1e-3, ws.aabb.max[a] - 1e-3);
                    }
                    break;
                }
            }
            CloudPoint { pos: [p[0] as f32, p[1] as f32, p[2] as f32], rgb }
        })
        .collect()
}

/// Flat scatter on the table surface.
fn table_patch(rng: &mut ChaCha8Rng, n: usize) -> Vec<CloudPoint> {
    (0..n)
        .map(|_| CloudPoint {
            pos: [
                rng.gen_range(-0.45f32..0.45),
                rng.gen_range(-0.45f32..0.45),
                0.01 + rng.gen_range(0.0f32..0.004),
            ],
            rgb: [120, 96, 72],
        })
        .collect()
}

/// Default cloud: a static seeded table scene plus a small gripper blob
/// tracking the frame's action position. The scene is identical across
/// frames of one demo; only the blob moves.
fn default_frame_cloud(
    demo: &Demonstration,
    pos: usize,
    params: &ScenarioParams,
    landmarks: &[(Vec3, [u8; 3])],
) -> PointCloud {
    let mut scene_rng = ChaCha8Rng::seed_from_u64(params.seed);
    scene_rng.set_stream(0x5CE4E);
    let mut points = table_patch(&mut scene_rng, 150);
    for &(center, rgb) in landmarks {
        points.extend(ball(&mut scene_rng, center, 0.03, 40, rgb));
    }
    let mut blob_rng = ChaCha8Rng::seed_from_u64(params.seed);
    blob_rng.set_stream(0xB10B);
    let at = demo.frames[pos].action.pose.position;
    points.extend(ball(&mut blob_rng, at, 0.02, 40, [200, 200, 210]));
    PointCloud { points }
}

// ---------------------------------------------------------------------------
// pick_place: the corpus workhorse. A long, slow approach (~70% of the
// demo) followed by a dense burst of late keyframes — the regime where
// re-emitting keyframe transitions per observation frame explodes the
// conventional buffer.

pub struct PickPlace;

/// Total frames in a pick-and-place demo.
pub const PICK_PLACE_FRAME_COUNT: usize = 200;
/// The first keyframe lands in this inclusive range.
pub const PICK_PLACE_FIRST_KEYFRAME: (usize, usize) = (140, 146);
/// Consecutive keyframes are this many frames apart (inclusive range),
/// except the final hop onto the last frame, which may be shorter.
pub const PICK_PLACE_KEYFRAME_SPACING: (usize, usize) = (7, 8);

const PICK_OBJECTS: [&str; 18] = [
    "red block", "blue mug", "green prism", "yellow cup", "wooden cube", "steel bolt",
    "glass jar", "black knob", "white tile", "copper ring", "small gear", "round puck",
    "long peg", "flat washer", "blue lid", "red cap", "toy brick", "cork stopper",
];

impl DemoScenario for PickPlace {
    fn name(&self) -> &'static str {
        "pick_place"
    }

    fn description(&self) -> &'static str {
        "long approach, then grasp-lift-place with densely packed late keyframes"
    }

    fn manifest(&self, params: &ScenarioParams) -> Demonstration {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let n = PICK_PLACE_FRAME_COUNT;
        let last = n - 1;

        let (first_lo, first_hi) = PICK_PLACE_FIRST_KEYFRAME;
        let (step_lo, step_hi) = PICK_PLACE_KEYFRAME_SPACING;
        let mut keyframes = vec![rng.gen_range(first_lo..=first_hi)];
        loop {
            let next = keyframes.last().unwrap() + rng.gen_range(step_lo..=step_hi);
            if next >= last {
                break;
            }
            keyframes.push(next);
        }
        keyframes.push(last);

        let object: Vec3 = [
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.15..0.15),
            0.035,
        ];
        let place: Vec3 = [
            rng.gen_range(0.20..0.40) * if object[0] > 0.0 { -1.0 } else { 1.0 },
            rng.gen_range(-0.30..0.30),
            0.04,
        ];
        let start: Vec3 = [-object[0].signum() * 0.38, rng.gen_range(-0.35..0.35), 0.75];

        let k = keyframes.len();
        let grasp = keyframes[1];
        let lift = keyframes[2];
        let above_place = keyframes[k - 2];
        let waypoints = vec![
            (0, start),
            (keyframes[0], [object[0], object[1], 0.18]),
            (grasp, [object[0], object[1], object[2]]),
            (lift, [object[0], object[1], 0.30]),
            (above_place, [place[0], place[1], 0.30]),
            (last, place),
        ];
        let frames = interp_frames(&waypoints, n, |i| !(grasp..last).contains(&i));

        let object_name = PICK_OBJECTS[params.variant % PICK_OBJECTS.len()];
        Demonstration {
            demo_id: params.demo_id.clone(),
            task: format!("pick_place_{:02}", params.variant % PICK_OBJECTS.len()),
            instruction: format!("pick up the {object_name} and place it on the tray"),
            keyframe_indices: keyframes,
            frames,
        }
    }

    fn frame_cloud(&self, demo: &Demonstration, pos: usize, params: &ScenarioParams) -> PointCloud {
        let first = demo.keyframe_indices[0];
        let above = demo
            .position_of_index(first)
            .map(|p| demo.frames[p].action.pose.position)
            .unwrap_or([0.0, 0.0, 0.18]);
        let object = [above[0], above[1], 0.035];
        let place = demo.frames.last().unwrap().action.pose.position;
        let landmarks = [(object, [200u8, 40, 40]), ([place[0], place[1], 0.02], [40, 40, 200])];
        default_frame_cloud(demo, pos, params, &landmarks)
    }
}

/// Manifests for a whole corpus: `tasks` × `demos_per_task` pick-and-place
/// demos, each task a distinct instruction variant, every demo seeded
/// independently of the others.
pub fn pick_place_corpus(tasks: usize, demos_per_task: usize, seed: u64) -> Vec<Demonstration> {
    let mut corpus = Vec::with_capacity(tasks * demos_per_task);
    for t in 0..tasks {
        for d in 0..demos_per_task {
            let mut mix = ChaCha8Rng::seed_from_u64(seed);
            mix.set_stream((t * demos_per_task + d + 1) as u64);
            let params = ScenarioParams {
                seed: mix.gen(),
                demo_id: format!("t{t:02}_d{d:03}"),
                variant: t,
            };
            corpus.push(PickPlace.manifest(&params));
        }
    }
    corpus
}

// ---------------------------------------------------------------------------
// zigzag_wipe: a surface wipe whose path bends sharply at two known frames,
// the ground truth for curvature-based via-keyframe recovery.

pub struct ZigzagWipe;

pub const ZIGZAG_FRAME_COUNT: usize = 100;
pub const ZIGZAG_KEYFRAMES: [usize; 3] = [10, 90, 99];
/// The wipe path turns sharply at exactly these frames.
pub const ZIGZAG_CORNER_A: usize = 25;
pub const ZIGZAG_CORNER_B: usize = 55;

impl DemoScenario for ZigzagWipe {
    fn name(&self) -> &'static str {
        "zigzag_wipe"
    }

    fn description(&self) -> &'static str {
        "table wipe with two sharp direction changes inside one keyframe segment"
    }

    fn manifest(&self, params: &ScenarioParams) -> Demonstration {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let z = 0.02;
        // Jitter the corner layout without moving the corner frames.
        let jx = rng.gen_range(-0.05..0.05);
        let jy = rng.gen_range(-0.05..0.05);
        let a: Vec3 = [-0.30 + jx, -0.20 + jy, z];
        let corner1: Vec3 = [0.15 + jx, -0.05 + jy, z];
        let corner2: Vec3 = [-0.15 + jx, 0.10 + jy, z];
        let d: Vec3 = [0.25 + jx, 0.25 + jy, z];
        let hover: Vec3 = [a[0], a[1], 0.30];
        let done: Vec3 = [d[0], d[1], 0.35];

        let [approach_end, wipe_end, last] = ZIGZAG_KEYFRAMES;
        let waypoints = vec![
            (0, hover),
            (approach_end, a),
            (ZIGZAG_CORNER_A, corner1),
            (ZIGZAG_CORNER_B, corner2),
            (wipe_end, d),
            (last, done),
        ];
        let frames = interp_frames(&waypoints, ZIGZAG_FRAME_COUNT, |i| {
            !(approach_end..wipe_end).contains(&i)
        });
        Demonstration {
            demo_id: params.demo_id.clone(),
            task: "zigzag_wipe".to_string(),
            instruction: "wipe the table following the marked zigzag".to_string(),
            keyframe_indices: ZIGZAG_KEYFRAMES.to_vec(),
            frames,
        }
    }

    fn frame_cloud(&self, demo: &Demonstration, pos: usize, params: &ScenarioParams) -> PointCloud {
        let smudge = demo.frames[ZIGZAG_CORNER_A].action.pose.position;
        default_frame_cloud(demo, pos, params, &[([smudge[0], smudge[1], 0.015], [90, 90, 90])])
    }
}

// ---------------------------------------------------------------------------
// drawer_boundary: pulling a drawer drags exactly one keypose into the
// workspace boundary margin — the retreat repair's target.

pub struct DrawerBoundary;

pub const DRAWER_FRAME_COUNT: usize = 120;
pub const DRAWER_KEYFRAMES: [usize; 4] = [40, 70, 100, 119];
/// The keypose at this frame is the only boundary-adjacent one.
pub const DRAWER_BOUNDARY_KEYFRAME: usize = 100;

impl DemoScenario for DrawerBoundary {
    fn name(&self) -> &'static str {
        "drawer_boundary"
    }

    fn description(&self) -> &'static str {
        "drawer pull whose fully-open keypose hugs the workspace boundary"
    }

    fn manifest(&self, params: &ScenarioParams) -> Demonstration {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let hx = rng.gen_range(-0.05..0.15);
        let handle: Vec3 = [hx, -0.30, 0.25];
        let grasped: Vec3 = [hx, -0.30, 0.22];
        // 0.03 m from the y = -0.5 face: inside the 0.05 boundary margin.
        let pulled: Vec3 = [hx, -0.47, 0.22];
        let released: Vec3 = [hx, -0.38, 0.35];
        let start: Vec3 = [hx - 0.2, 0.10, 0.55];

        let [reach, grasp, pull, last] = DRAWER_KEYFRAMES;
        let waypoints = vec![
            (0, start),
            (reach, handle),
            (grasp, grasped),
            (pull, pulled),
            (last, released),
        ];
        let frames = interp_frames(&waypoints, DRAWER_FRAME_COUNT, |i| {
            !(grasp..pull).contains(&i)
        });
        Demonstration {
            demo_id: params.demo_id.clone(),
            task: "drawer_boundary".to_string(),
            instruction: "pull the drawer fully open".to_string(),
            keyframe_indices: DRAWER_KEYFRAMES.to_vec(),
            frames,
        }
    }

    fn frame_cloud(&self, demo: &Demonstration, pos: usize, params: &ScenarioParams) -> PointCloud {
        let handle = demo.frames[DRAWER_KEYFRAMES[0]].action.pose.position;
        default_frame_cloud(demo, pos, params, &[(handle, [150, 120, 60])])
    }
}

// ---------------------------------------------------------------------------
// low_clearance: sliding a flat object drags keyposes below the safe height
// above the floor; the clearance repair must lift them.

pub struct LowClearance;

pub const LOW_CLEARANCE_FRAME_COUNT: usize = 100;
pub const LOW_CLEARANCE_KEYFRAMES: [usize; 3] = [30, 60, 99];
/// Heights of the two sliding keyposes; both below the 0.008 m clearance.
pub const LOW_CLEARANCE_HEIGHTS: (f64, f64) = (0.004, 0.005);

impl DemoScenario for LowClearance {
    fn name(&self) -> &'static str {
        "low_clearance"
    }

    fn description(&self) -> &'static str {
        "table slide whose contact keyposes sit below the minimum floor clearance"
    }

    fn manifest(&self, params: &ScenarioParams) -> Demonstration {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let y = rng.gen_range(-0.25..0.25);
        let (z_touch, z_slide) = LOW_CLEARANCE_HEIGHTS;
        let touch: Vec3 = [-0.20, y, z_touch];
        let slid: Vec3 = [0.15, y, z_slide];
        let start: Vec3 = [-0.20, y, 0.45];
        let done: Vec3 = [0.15, y, 0.30];

        let [down, slide, last] = LOW_CLEARANCE_KEYFRAMES;
        let waypoints = vec![(0, start), (down, touch), (slide, slid), (last, done)];
        let frames = interp_frames(&waypoints, LOW_CLEARANCE_FRAME_COUNT, |i| {
            !(down..slide).contains(&i)
        });
        Demonstration {
            demo_id: params.demo_id.clone(),
            task: "low_clearance".to_string(),
            instruction: "slide the tile across the table".to_string(),
            keyframe_indices: LOW_CLEARANCE_KEYFRAMES.to_vec(),
            frames,
        }
    }

    fn frame_cloud(&self, demo: &Demonstration, pos: usize, params: &ScenarioParams) -> PointCloud {
        let tile = demo.frames[LOW_CLEARANCE_KEYFRAMES[0]].action.pose.position;
        default_frame_cloud(demo, pos, params, &[([tile[0], tile[1], 0.012], [230, 230, 230])])
    }
}

// ---------------------------------------------------------------------------
// cluttered_zone: the recorded path cuts straight through a known risk
// volume; the defensive via-point repair must add its preparation pose.

pub struct ClutteredZone;

pub const CLUTTERED_FRAME_COUNT: usize = 120;
pub const CLUTTERED_KEYFRAMES: [usize; 3] = [40, 80, 119];

/// The risk volume this scenario's path crosses, with the preparation pose
/// a planner should visit first.
pub fn cluttered_zone_risk() -> RiskZone {
    RiskZone {
        zone: Aabb::new([0.0, -0.10, 0.0], [0.20, 0.10, 0.40]),
        prep_pose: Pose::new([-0.05, 0.0, 0.45], Quat::IDENTITY),
    }
}

impl DemoScenario for ClutteredZone {
    fn name(&self) -> &'static str {
        "cluttered_zone"
    }

    fn description(&self) -> &'static str {
        "transfer whose middle segment cuts through a declared risk volume"
    }

    fn manifest(&self, params: &ScenarioParams) -> Demonstration {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let z = rng.gen_range(0.15..0.25);
        let pick: Vec3 = [-0.30, 0.0, z];
        let drop: Vec3 = [0.35, 0.0, z];
        let start: Vec3 = [-0.30, 0.30, 0.50];
        let done: Vec3 = [0.35, 0.30, 0.50];

        let [reach, cross, last] = CLUTTERED_KEYFRAMES;
        let waypoints = vec![(0, start), (reach, pick), (cross, drop), (last, done)];
        let frames = interp_frames(&waypoints, CLUTTERED_FRAME_COUNT, |i| {
            !(reach..cross).contains(&i)
        });
        Demonstration {
            demo_id: params.demo_id.clone(),
            task: "cluttered_zone".to_string(),
            instruction: "carry the bottle past the clutter to the right side".to_string(),
            keyframe_indices: CLUTTERED_KEYFRAMES.to_vec(),
            frames,
        }
    }

    fn frame_cloud(&self, demo: &Demonstration, pos: usize, params: &ScenarioParams) -> PointCloud {
        let risk = cluttered_zone_risk();
        let c = risk.zone.center();
        default_frame_cloud(
            demo,
            pos,
            params,
            &[(c, [60, 160, 60]), ([c[0], c[1], 0.05], [60, 160, 60])],
        )
    }
}
