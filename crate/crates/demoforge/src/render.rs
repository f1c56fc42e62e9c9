//! Orthographic multi-view point-cloud rendering.
//!
//! A [`ViewSet`] fixes K axis-aligned orthographic cameras over a cube.
//! Rendering z-buffers points into RGB/depth/occupancy rasters on a black
//! background; the inversion branch produces the complementary rasters that
//! keep dark objects visible. Zoom cropping re-targets the same camera
//! geometry onto a smaller cube for the fine localization stage.
//!
//! One pixel-mapping rule is used everywhere (rendering, heatmaps,
//! back-projection): `u = floor((coord − min) / side · W)`, clamped to
//! `W − 1` on the max face. Raster row 0 sits at the v-axis minimum; there
//! is no image flipping.

use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demo::{ActionRecord, CloudPoint, PointCloud, Workspace};
use crate::geom::{Aabb, Quat, Vec3};

/// Camera direction: the axis the camera looks along, named by the cube
/// face it sits on. `PosZ` looks downward from above, `NegY` looks from the
/// front face toward +y, and so on. The bottom face is never used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewAxis {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
}

impl ViewAxis {
    /// Stable human name, also used for raster file names.
    pub fn label(self) -> &'static str {
        match self {
            ViewAxis::PosZ => "top",
            ViewAxis::NegY => "front",
            ViewAxis::PosY => "back",
            ViewAxis::NegX => "left",
            ViewAxis::PosX => "right",
        }
    }

    /// Index of the axis the camera looks along.
    fn depth_axis(self) -> usize {
        match self {
            ViewAxis::PosX | ViewAxis::NegX => 0,
            ViewAxis::PosY | ViewAxis::NegY => 1,
            ViewAxis::PosZ => 2,
        }
    }

    /// (u-axis, v-axis) world-coordinate indices of the image plane.
    fn plane_axes(self) -> (usize, usize) {
        match self {
            ViewAxis::PosZ => (0, 1),
            ViewAxis::PosX | ViewAxis::NegX => (1, 2),
            ViewAxis::PosY | ViewAxis::NegY => (0, 2),
        }
    }
}

/// One orthographic camera: a direction, the cube it images, and the raster
/// resolution. The image plane spans the cube face exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub axis: ViewAxis,
    pub cube: Aabb,
    pub h: usize,
    pub w: usize,
}

impl View {
    /// Continuous raster coordinates and depth for a point inside the cube
    /// (inclusive); `None` for points outside. `pu` ∈ [0, w], `pv` ∈ [0, h];
    /// the floor-and-clamp of [`pixel`](View::pixel) turns them into pixel
    /// indices. Depth is the distance from the camera's cube face, so
    /// smaller is nearer.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        if !self.cube.contains(p) {
            return None;
        }
        let (ua, va) = self.axis.plane_axes();
        let pu = (p[ua] - self.cube.min[ua]) / self.cube.side(ua) * self.w as f64;
        let pv = (p[va] - self.cube.min[va]) / self.cube.side(va) * self.h as f64;
        let da = self.axis.depth_axis();
        let depth = match self.axis {
            ViewAxis::PosX | ViewAxis::PosY | ViewAxis::PosZ => self.cube.max[da] - p[da],
            ViewAxis::NegX | ViewAxis::NegY => p[da] - self.cube.min[da],
        };
        Some((pu, pv, depth))
    }

    /// Floor-and-clamp a continuous raster coordinate to a pixel index.
    pub fn pixel(coord: f64, limit: usize) -> usize {
        (coord.floor() as i64).clamp(0, limit as i64 - 1) as usize
    }
}

/// The camera rig: K views over one cube plus the splat radius applied when
/// rasterizing (radius 0 = single pixel; radius r covers the (2r+1)²
/// Chebyshev square).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSet {
    pub views: Vec<View>,
    pub splat_radius: usize,
}

impl ViewSet {
    /// The default five faces: top, front, back, left, right.
    pub fn standard_five(cube: Aabb, h: usize, w: usize) -> ViewSet {
        let views = [ViewAxis::PosZ, ViewAxis::NegY, ViewAxis::PosY, ViewAxis::NegX, ViewAxis::PosX]
            .into_iter()
            .map(|axis| View { axis, cube, h, w })
            .collect();
        ViewSet { views, splat_radius: 0 }
    }

    pub fn with_splat(mut self, radius: usize) -> ViewSet {
        self.splat_radius = radius;
        self
    }

    /// The same rig re-aimed at the cube of `side` centered on `center`,
    /// keeping per-view axes and resolutions (so meters-per-pixel shrinks by
    /// the side ratio).
    pub fn zoomed(&self, center: Vec3, side: f64) -> ViewSet {
        let half = side / 2.0;
        let cube = Aabb::new(
            [center[0] - half, center[1] - half, center[2] - half],
            [center[0] + half, center[1] + half, center[2] + half],
        );
        ViewSet {
            views: self
                .views
                .iter()
                .map(|v| View { axis: v.axis, cube, h: v.h, w: v.w })
                .collect(),
            splat_radius: self.splat_radius,
        }
    }
}

/// One rendered raster triple. `depth` holds meters from the camera face
/// with `f64::INFINITY` marking empty pixels; `occupancy` is true exactly
/// where depth is finite; background rgb is (0,0,0).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub axis: ViewAxis,
    pub h: usize,
    pub w: usize,
    /// Row-major H×W×3.
    pub rgb: Vec<u8>,
    /// Row-major H×W.
    pub depth: Vec<f64>,
    /// Row-major H×W.
    pub occupancy: Vec<bool>,
}

impl RenderedView {
    fn empty(axis: ViewAxis, h: usize, w: usize) -> RenderedView {
        RenderedView {
            axis,
            h,
            w,
            rgb: vec![0; h * w * 3],
            depth: vec![f64::INFINITY; h * w],
            occupancy: vec![false; h * w],
        }
    }

    pub fn rgb_at(&self, u: usize, v: usize) -> [u8; 3] {
        let i = (v * self.w + u) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.w + u]
    }

    pub fn is_occupied(&self, u: usize, v: usize) -> bool {
        self.occupancy[v * self.w + u]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }
}

/// Whether inversion touches only occupied pixels (the default — keeps the
/// black background, which is the point of the branch) or every pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvertMode {
    Occupied,
    Full,
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("empty render: {detail}")]
    EmptyRender { detail: String },
    #[error("view resolution must be at least 1×1")]
    ZeroResolution,
    #[error("perturbed action pose left the workspace; retry with another seed")]
    ResampleNeeded,
    #[error("no in-workspace perturbation found after {attempts} attempts")]
    PerturbExhausted { attempts: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("raster data: {0}")]
    Img1(#[from] img1::FormatError),
}

/// Z-buffer the cloud into every view of the rig.
///
/// Points outside a view's cube are dropped; if nothing remains for some
/// view the whole render fails with [`RenderError::EmptyRender`]. Per pixel
/// the smallest depth wins, ties going to the lower point index. Splatting
/// stamps the (2r+1)² square around the hit pixel with the point's depth.
pub fn render_orthographic(
    cloud: &PointCloud,
    set: &ViewSet,
) -> Result<Vec<RenderedView>, RenderError> {
    set.views
        .iter()
        .enumerate()
        .map(|(vi, view)| render_one(cloud, view, set.splat_radius, vi))
        .collect()
}

fn render_one(
    cloud: &PointCloud,
    view: &View,
    splat_radius: usize,
    view_index: usize,
) -> Result<RenderedView, RenderError> {
    if view.h == 0 || view.w == 0 {
        return Err(RenderError::ZeroResolution);
    }
    let mut out = RenderedView::empty(view.axis, view.h, view.w);
    let mut any = false;
    let r = splat_radius as i64;
    for p in &cloud.points {
        let pos = [p.pos[0] as f64, p.pos[1] as f64, p.pos[2] as f64];
        let Some((pu, pv, depth)) = view.project(pos) else { continue };
        any = true;
        let u = View::pixel(pu, view.w) as i64;
        let v = View::pixel(pv, view.h) as i64;
        for dv in -r..=r {
            for du in -r..=r {
                let (su, sv) = (u + du, v + dv);
                if su < 0 || sv < 0 || su >= view.w as i64 || sv >= view.h as i64 {
                    continue;
                }
                let idx = sv as usize * view.w + su as usize;
                if depth < out.depth[idx] {
                    out.depth[idx] = depth;
                    out.occupancy[idx] = true;
                    out.rgb[idx * 3..idx * 3 + 3].copy_from_slice(&p.rgb);
                }
            }
        }
    }
    if !any {
        return Err(RenderError::EmptyRender {
            detail: format!(
                "no points inside the {} view's cube (view {view_index})",
                view.axis.label()
            ),
        });
    }
    Ok(out)
}

/// The complementary rasters: occupied pixels become 255−c per channel
/// (every pixel under [`InvertMode::Full`]); depth and occupancy are copied
/// unchanged.
pub fn invert_views(views: &[RenderedView], mode: InvertMode) -> Vec<RenderedView> {
    views
        .iter()
        .map(|view| {
            let mut out = view.clone();
            for idx in 0..view.h * view.w {
                if mode == InvertMode::Full || view.occupancy[idx] {
                    for c in &mut out.rgb[idx * 3..idx * 3 + 3] {
                        *c = 255 - *c;
                    }
                }
            }
            out
        })
        .collect()
}

/// Points within the axis-aligned cube of `side` centered at `center`
/// (inclusive bounds), plus the rig re-aimed at that cube.
pub fn zoom_crop(
    cloud: &PointCloud,
    set: &ViewSet,
    center: Vec3,
    side: f64,
) -> Result<(PointCloud, ViewSet), RenderError> {
    let zoomed = set.zoomed(center, side);
    let cube = zoomed.views[0].cube;
    let points: Vec<CloudPoint> = cloud
        .points
        .iter()
        .filter(|p| cube.contains([p.pos[0] as f64, p.pos[1] as f64, p.pos[2] as f64]))
        .copied()
        .collect();
    if points.is_empty() {
        return Err(RenderError::EmptyRender {
            detail: format!("zoom crop at {center:?} side {side} contains no points"),
        });
    }
    Ok((PointCloud { points }, zoomed))
}

/// Per-axis translation bounds (meters) and yaw bound (radians) for
/// [`perturb_se3`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbBounds {
    pub max_translation: [f64; 3],
    pub max_yaw: f64,
}

/// Apply one rigid transform — yaw about the vertical axis through
/// `pivot_xy`, then translation — to every cloud point and to the action.
pub fn apply_se3(
    cloud: &PointCloud,
    action: &ActionRecord,
    translation: Vec3,
    yaw: f64,
    pivot_xy: [f64; 2],
) -> (PointCloud, ActionRecord) {
    let rot = Quat::from_yaw(yaw);
    let move_point = |p: Vec3| -> Vec3 {
        let centered = [p[0] - pivot_xy[0], p[1] - pivot_xy[1], p[2]];
        let r = rot.rotate(centered);
        [
            r[0] + pivot_xy[0] + translation[0],
            r[1] + pivot_xy[1] + translation[1],
            r[2] + translation[2],
        ]
    };
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let m = move_point([p.pos[0] as f64, p.pos[1] as f64, p.pos[2] as f64]);
            CloudPoint { pos: [m[0] as f32, m[1] as f32, m[2] as f32], rgb: p.rgb }
        })
        .collect();
    let mut new_action = *action;
    new_action.pose.position = move_point(action.pose.position);
    new_action.pose.orientation = rot.mul(&action.pose.orientation).normalized();
    (PointCloud { points }, new_action)
}

/// One random rigid perturbation: translations drawn uniformly within
/// ±bounds per axis, yaw uniform within ±max_yaw about the workspace
/// center's vertical axis, applied identically to cloud and action.
/// Fails with [`RenderError::ResampleNeeded`] when the transformed action
/// pose leaves the workspace.
pub fn perturb_se3(
    cloud: &PointCloud,
    action: &ActionRecord,
    bounds: &PerturbBounds,
    ws: &Workspace,
    seed: u64,
) -> Result<(PointCloud, ActionRecord), RenderError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = [
        rng.gen_range(-bounds.max_translation[0]..=bounds.max_translation[0]),
        rng.gen_range(-bounds.max_translation[1]..=bounds.max_translation[1]),
        rng.gen_range(-bounds.max_translation[2]..=bounds.max_translation[2]),
    ];
    let yaw = rng.gen_range(-bounds.max_yaw..=bounds.max_yaw);
    let center = ws.aabb.center();
    let (new_cloud, new_action) = apply_se3(cloud, action, t, yaw, [center[0], center[1]]);
    if !ws.contains(new_action.pose.position) {
        return Err(RenderError::ResampleNeeded);
    }
    Ok((new_cloud, new_action))
}

/// [`perturb_se3`] with the retry protocol: seeds `seed`, `seed+1`, … are
/// tried until one keeps the action inside the workspace, up to
/// `max_attempts` (20 by default at the CLI).
pub fn perturb_with_retries(
    cloud: &PointCloud,
    action: &ActionRecord,
    bounds: &PerturbBounds,
    ws: &Workspace,
    seed: u64,
    max_attempts: usize,
) -> Result<(PointCloud, ActionRecord), RenderError> {
    for attempt in 0..max_attempts {
        match perturb_se3(cloud, action, bounds, ws, seed + attempt as u64) {
            Err(RenderError::ResampleNeeded) => continue,
            other => return other,
        }
    }
    Err(RenderError::PerturbExhausted { attempts: max_attempts })
}

/// Raster dump format: `IMG1` magic, u32 height, u32 width, u32 channels,
/// then row-major u8 RGB (channels = 3) or little-endian f32 depth
/// (channels = 1).
pub mod img1 {
    use thiserror::Error;

    pub const MAGIC: &[u8; 4] = b"IMG1";
    pub const HEADER_LEN: usize = 16;

    #[derive(Debug, Clone, PartialEq)]
    pub enum Payload {
        Rgb(Vec<u8>),
        Depth(Vec<f32>),
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct Image {
        pub h: u32,
        pub w: u32,
        pub payload: Payload,
    }

    #[derive(Debug, Error, PartialEq, Eq)]
    pub enum FormatError {
        #[error("bad magic at offset 0 (expected IMG1)")]
        BadMagic,
        #[error("truncated header: {found} bytes, need {}", HEADER_LEN)]
        TruncatedHeader { found: usize },
        #[error("unsupported channel count {channels} (1 = depth, 3 = rgb)")]
        BadChannels { channels: u32 },
        #[error("payload is {found} bytes at offset {}, expected {expected}", HEADER_LEN)]
        WrongPayloadLen { expected: usize, found: usize },
    }

    fn header(h: u32, w: u32, channels: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&h.to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out
    }

    pub fn encode_rgb(h: u32, w: u32, rgb: &[u8]) -> Vec<u8> {
        assert_eq!(rgb.len(), h as usize * w as usize * 3, "rgb payload shape");
        let mut out = header(h, w, 3);
        out.extend_from_slice(rgb);
        out
    }

    pub fn encode_depth(h: u32, w: u32, depth: &[f32]) -> Vec<u8> {
        assert_eq!(depth.len(), h as usize * w as usize, "depth payload shape");
        let mut out = header(h, w, 1);
        for d in depth {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Image, FormatError> {
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::TruncatedHeader { found: bytes.len() });
        }
        if &bytes[0..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let channels = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let pixels = h as usize * w as usize;
        let body = &bytes[HEADER_LEN..];
        match channels {
            3 => {
                if body.len() != pixels * 3 {
                    return Err(FormatError::WrongPayloadLen {
                        expected: pixels * 3,
                        found: body.len(),
                    });
                }
                Ok(Image { h, w, payload: Payload::Rgb(body.to_vec()) })
            }
            1 => {
                if body.len() != pixels * 4 {
                    return Err(FormatError::WrongPayloadLen {
                        expected: pixels * 4,
                        found: body.len(),
                    });
                }
                let depth = body
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Ok(Image { h, w, payload: Payload::Depth(depth) })
            }
            other => Err(FormatError::BadChannels { channels: other }),
        }
    }
}

impl RenderedView {
    pub fn to_img1_rgb(&self) -> Vec<u8> {
        img1::encode_rgb(self.h as u32, self.w as u32, &self.rgb)
    }

    pub fn to_img1_depth(&self) -> Vec<u8> {
        let depth: Vec<f32> = self.depth.iter().map(|&d| d as f32).collect();
        img1::encode_depth(self.h as u32, self.w as u32, &depth)
    }
}
