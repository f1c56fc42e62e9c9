//! Per-view action heatmaps and 3D localization by back-projection.
//!
//! Ground-truth heatmaps place a truncated, per-view-normalized Gaussian on
//! the target's projected pixel. Back-projection scores every voxel center
//! of a grid over the cube by summing bilinear heatmap samples across
//! views and takes the argmax; two-stage localization repeats the process
//! inside a small cube centered on the coarse estimate.
//!
//! Scores are kept as f64 end to end; the HMP1 disk format stores f32 and
//! is the only place precision is dropped.

use serde::Serialize;
use thiserror::Error;

use crate::demo::PointCloud;
use crate::geom::Vec3;
use crate::render::{render_orthographic, zoom_crop, RenderError, RenderedView, View, ViewSet};

/// Non-negative score raster aligned with one rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub h: usize,
    pub w: usize,
    /// Row-major H×W.
    pub scores: Vec<f64>,
}

impl Heatmap {
    /// Panics on shape mismatch; debug-asserts value validity (decoders and
    /// builders enforce it for real).
    pub fn new(h: usize, w: usize, scores: Vec<f64>) -> Heatmap {
        assert_eq!(scores.len(), h * w, "heatmap shape");
        debug_assert!(scores.iter().all(|s| s.is_finite() && *s >= 0.0));
        Heatmap { h, w, scores }
    }

    pub fn zeros(h: usize, w: usize) -> Heatmap {
        Heatmap { h, w, scores: vec![0.0; h * w] }
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.scores[v * self.w + u]
    }

    pub fn mass(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// First maximum in row-major scan order, as (u, v).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &s) in self.scores.iter().enumerate() {
            if s > best.1 {
                best = (i, s);
            }
        }
        (best.0 % self.w, best.0 / self.w)
    }

    /// Bilinear sample at continuous raster coordinates (`pu` ∈ [0, w]).
    ///
    /// Sampling happens in pixel-center space: coordinate `u + 0.5` hits
    /// pixel `u` exactly. The interpolation is arranged so that a constant
    /// raster samples to exactly that constant everywhere, which keeps
    /// argmax tie-breaking deterministic on uniform heatmaps.
    pub fn sample(&self, pu: f64, pv: f64) -> f64 {
        let xc = (pu - 0.5).clamp(0.0, (self.w - 1) as f64);
        let yc = (pv - 0.5).clamp(0.0, (self.h - 1) as f64);
        let (i0, t) = if self.w == 1 {
            (0usize, 0.0)
        } else {
            let i = (xc.floor() as usize).min(self.w - 2);
            (i, xc - i as f64)
        };
        let (j0, s) = if self.h == 1 {
            (0usize, 0.0)
        } else {
            let j = (yc.floor() as usize).min(self.h - 2);
            (j, yc - j as f64)
        };
        let v00 = self.at(i0, j0);
        let v10 = self.at((i0 + 1).min(self.w - 1), j0);
        let v01 = self.at(i0, (j0 + 1).min(self.h - 1));
        let v11 = self.at((i0 + 1).min(self.w - 1), (j0 + 1).min(self.h - 1));
        let b = v00 + t * (v10 - v00);
        let c = v01 + t * (v11 - v01);
        b + s * (c - b)
    }
}

/// Which pass produced a localization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalizationResult {
    pub position: Vec3,
    pub score: f64,
    pub stage: Stage,
}

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("target {target:?} lies outside the view cube")]
    TargetOutsideCube { target: Vec3 },
    #[error("sigma must be positive, got {sigma}")]
    BadSigma { sigma: f64 },
    #[error("{heatmaps} heatmaps for {views} views")]
    ViewCountMismatch { heatmaps: usize, views: usize },
    #[error("heatmap {index} is {hh}×{hw} but its view renders {vh}×{vw}")]
    ShapeMismatch { index: usize, hh: usize, hw: usize, vh: usize, vw: usize },
    #[error("back-projection grid must be at least 2 per axis, got {grid}")]
    GridTooSmall { grid: usize },
    #[error("views must share one cube for back-projection")]
    CubeMismatch,
    #[error("all candidate scores are zero: the heatmaps carry no evidence")]
    ZeroEvidence,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("heatmap data: {0}")]
    Hmp1(#[from] hmp1::FormatError),
}

/// Ground-truth heatmaps: per view, an isotropic Gaussian of std `sigma`
/// pixels centered on the target's continuous projection, truncated at 3σ
/// (by pixel-center distance) and normalized to unit mass. When truncation
/// leaves no pixel (tiny σ), the projection's pixel gets all the mass.
pub fn make_gt_heatmaps(
    target: Vec3,
    set: &ViewSet,
    sigma: f64,
) -> Result<Vec<Heatmap>, HeatmapError> {
    if !(sigma > 0.0) {
        return Err(HeatmapError::BadSigma { sigma });
    }
    set.views
        .iter()
        .map(|view| {
            let (pu, pv, _) = view
                .project(target)
                .ok_or(HeatmapError::TargetOutsideCube { target })?;
            let mut hm = Heatmap::zeros(view.h, view.w);
            let radius = 3.0 * sigma;
            let u_lo = ((pu - radius - 0.5).floor().max(0.0)) as usize;
            let u_hi = ((pu + radius + 0.5).ceil() as usize).min(view.w);
            let v_lo = ((pv - radius - 0.5).floor().max(0.0)) as usize;
            let v_hi = ((pv + radius + 0.5).ceil() as usize).min(view.h);
            let mut mass = 0.0;
            for v in v_lo..v_hi {
                for u in u_lo..u_hi {
                    let du = u as f64 + 0.5 - pu;
                    let dv = v as f64 + 0.5 - pv;
                    let d2 = du * du + dv * dv;
                    if d2 <= radius * radius {
                        let w = (-d2 / (2.0 * sigma * sigma)).exp();
                        hm.scores[v * view.w + u] = w;
                        mass += w;
                    }
                }
            }
            if mass == 0.0 {
                let u = View::pixel(pu, view.w);
                let v = View::pixel(pv, view.h);
                hm.scores[v * view.w + u] = 1.0;
            } else {
                for s in &mut hm.scores {
                    *s /= mass;
                }
            }
            Ok(hm)
        })
        .collect()
}

fn check_alignment(heatmaps: &[Heatmap], set: &ViewSet) -> Result<(), HeatmapError> {
    if heatmaps.len() != set.views.len() {
        return Err(HeatmapError::ViewCountMismatch {
            heatmaps: heatmaps.len(),
            views: set.views.len(),
        });
    }
    for (i, (hm, view)) in heatmaps.iter().zip(&set.views).enumerate() {
        if hm.h != view.h || hm.w != view.w {
            return Err(HeatmapError::ShapeMismatch {
                index: i,
                hh: hm.h,
                hw: hm.w,
                vh: view.h,
                vw: view.w,
            });
        }
        if view.cube != set.views[0].cube {
            return Err(HeatmapError::CubeMismatch);
        }
    }
    Ok(())
}

fn voxel_center(cube: &crate::geom::Aabb, grid: usize, ix: usize, iy: usize, iz: usize) -> Vec3 {
    [
        cube.min[0] + (ix as f64 + 0.5) * cube.side(0) / grid as f64,
        cube.min[1] + (iy as f64 + 0.5) * cube.side(1) / grid as f64,
        cube.min[2] + (iz as f64 + 0.5) * cube.side(2) / grid as f64,
    ]
}

fn finish_argmax(
    best: Option<(usize, usize, usize, f64)>,
    cube: &crate::geom::Aabb,
    grid: usize,
) -> Result<LocalizationResult, HeatmapError> {
    let (ix, iy, iz, score) = best.expect("grid ≥ 2 always yields a candidate");
    if score == 0.0 {
        return Err(HeatmapError::ZeroEvidence);
    }
    Ok(LocalizationResult {
        position: voxel_center(cube, grid, ix, iy, iz),
        score,
        stage: Stage::Coarse,
    })
}

/// Dense back-projection over every voxel of `grid`³, memoized per view.
///
/// A voxel's bilinear sample in a view depends only on its two in-plane
/// grid coordinates, so each view contributes a grid×grid table computed
/// once; per-voxel scores then sum table entries in view order. The
/// floating-point operations and their order are identical to
/// [`back_project_argmax_reference`], making the two bit-equal — a property
/// the tests assert.
///
/// Ties take the lexicographically smallest (ix, iy, iz); an all-zero best
/// score is [`HeatmapError::ZeroEvidence`]. The returned stage is `Coarse`;
/// [`two_stage_localize`] re-tags its fine pass.
pub fn back_project_argmax(
    heatmaps: &[Heatmap],
    set: &ViewSet,
    grid: usize,
) -> Result<LocalizationResult, HeatmapError> {
    check_alignment(heatmaps, set)?;
    if grid < 2 {
        return Err(HeatmapError::GridTooSmall { grid });
    }
    let cube = set.views[0].cube;
    // Per view: table[a][b] = sample at in-plane grid coords (a, b), where
    // (a, b) index the view's (u-axis, v-axis) world axes.
    let tables: Vec<(usize, usize, Vec<f64>)> = heatmaps
        .iter()
        .zip(&set.views)
        .map(|(hm, view)| {
            let (ua, va) = plane_axes_of(view);
            let mut table = vec![0.0f64; grid * grid];
            for a in 0..grid {
                for b in 0..grid {
                    // A probe point whose (ua, va) coordinates are the voxel
                    // center's; the depth axis is irrelevant to (pu, pv).
                    let mut probe = cube.center();
                    probe[ua] = cube.min[ua] + (a as f64 + 0.5) * cube.side(ua) / grid as f64;
                    probe[va] = cube.min[va] + (b as f64 + 0.5) * cube.side(va) / grid as f64;
                    let (pu, pv, _) = view.project(probe).expect("probe is inside the cube");
                    table[a * grid + b] = hm.sample(pu, pv);
                }
            }
            (ua, va, table)
        })
        .collect();
    let mut best: Option<(usize, usize, usize, f64)> = None;
    for ix in 0..grid {
        for iy in 0..grid {
            for iz in 0..grid {
                let coords = [ix, iy, iz];
                let mut score = 0.0;
                for (ua, va, table) in &tables {
                    score += table[coords[*ua] * grid + coords[*va]];
                }
                if best.is_none() || score > best.unwrap().3 {
                    best = Some((ix, iy, iz, score));
                }
            }
        }
    }
    finish_argmax(best, &cube, grid)
}

/// Exhaustive form of [`back_project_argmax`]: re-projects every voxel
/// center into every view and re-samples the heatmap each time. Quadratic
/// amounts of repeated work, kept as the oracle the memoized scorer must
/// match bit for bit.
pub fn back_project_argmax_reference(
    heatmaps: &[Heatmap],
    set: &ViewSet,
    grid: usize,
) -> Result<LocalizationResult, HeatmapError> {
    check_alignment(heatmaps, set)?;
    if grid < 2 {
        return Err(HeatmapError::GridTooSmall { grid });
    }
    let cube = set.views[0].cube;
    let mut best: Option<(usize, usize, usize, f64)> = None;
    for ix in 0..grid {
        for iy in 0..grid {
            for iz in 0..grid {
                let center = voxel_center(&cube, grid, ix, iy, iz);
                let mut score = 0.0;
                for (hm, view) in heatmaps.iter().zip(&set.views) {
                    let (pu, pv, _) =
                        view.project(center).expect("voxel centers are inside the cube");
                    score += hm.sample(pu, pv);
                }
                if best.is_none() || score > best.unwrap().3 {
                    best = Some((ix, iy, iz, score));
                }
            }
        }
    }
    finish_argmax(best, &cube, grid)
}

fn plane_axes_of(view: &View) -> (usize, usize) {
    use crate::render::ViewAxis::*;
    match view.axis {
        PosZ => (0, 1),
        PosX | NegX => (1, 2),
        PosY | NegY => (0, 2),
    }
}

/// Coarse-to-fine localization.
///
/// Stage 1 renders the cloud over the full rig, asks `provider` for
/// heatmaps, and back-projects over `coarse_grid`. Stage 2 re-centers a
/// cube of `zoom_side` on the coarse position (clamped to stay inside the
/// rig's cube), crops, re-renders, re-queries, and back-projects over
/// `fine_grid`. An empty crop or empty stage-2 render falls back to the
/// coarse result, identifiable by its `Coarse` stage tag.
pub fn two_stage_localize<P>(
    cloud: &PointCloud,
    set: &ViewSet,
    mut provider: P,
    coarse_grid: usize,
    zoom_side: f64,
    fine_grid: usize,
) -> Result<LocalizationResult, HeatmapError>
where
    P: FnMut(&[RenderedView], &ViewSet) -> Result<Vec<Heatmap>, HeatmapError>,
{
    let rendered = render_orthographic(cloud, set)?;
    let heatmaps = provider(&rendered, set)?;
    let coarse = back_project_argmax(&heatmaps, set, coarse_grid)?;

    let cube = set.views[0].cube;
    let mut center = coarse.position;
    for a in 0..3 {
        let half = zoom_side / 2.0;
        let (lo, hi) = (cube.min[a] + half, cube.max[a] - half);
        center[a] = if lo <= hi { center[a].clamp(lo, hi) } else { cube.center()[a] };
    }
    let (cropped, zoomed) = match zoom_crop(cloud, set, center, zoom_side) {
        Ok(ok) => ok,
        Err(RenderError::EmptyRender { .. }) => return Ok(coarse),
        Err(e) => return Err(e.into()),
    };
    let rendered2 = match render_orthographic(&cropped, &zoomed) {
        Ok(ok) => ok,
        Err(RenderError::EmptyRender { .. }) => return Ok(coarse),
        Err(e) => return Err(e.into()),
    };
    let heatmaps2 = provider(&rendered2, &zoomed)?;
    let fine = back_project_argmax(&heatmaps2, &zoomed, fine_grid)?;
    Ok(LocalizationResult { stage: Stage::Fine, ..fine })
}

/// Heatmap dump format: `HMP1` magic, u32 view count, u32 height, u32
/// width, then K·H·W little-endian f32 scores (row-major per view, views
/// concatenated).
pub mod hmp1 {
    use super::Heatmap;
    use thiserror::Error;

    pub const MAGIC: &[u8; 4] = b"HMP1";
    pub const HEADER_LEN: usize = 16;

    #[derive(Debug, Error, PartialEq)]
    pub enum FormatError {
        #[error("bad magic at offset 0 (expected HMP1)")]
        BadMagic,
        #[error("truncated header: {found} bytes, need {}", HEADER_LEN)]
        TruncatedHeader { found: usize },
        #[error("payload is {found} bytes at offset {}, expected {expected}", HEADER_LEN)]
        WrongPayloadLen { expected: usize, found: usize },
        #[error("score at view {view}, offset {offset}: {value} is not a finite non-negative number")]
        BadScore { view: usize, offset: usize, value: f32 },
        #[error("views disagree on shape")]
        MixedShapes,
    }

    /// Scores cast to f32; this is the single precision-dropping edge.
    pub fn encode(heatmaps: &[Heatmap]) -> Vec<u8> {
        let (h, w) = heatmaps.first().map_or((0, 0), |m| (m.h, m.w));
        assert!(
            heatmaps.iter().all(|m| m.h == h && m.w == w),
            "all heatmaps must share one shape"
        );
        let mut out = Vec::with_capacity(HEADER_LEN + heatmaps.len() * h * w * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(heatmaps.len() as u32).to_le_bytes());
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        for hm in heatmaps {
            for &s in &hm.scores {
                out.extend_from_slice(&(s as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Vec<Heatmap>, FormatError> {
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::TruncatedHeader { found: bytes.len() });
        }
        if &bytes[0..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let k = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        let expected = k * h * w * 4;
        if body.len() != expected {
            return Err(FormatError::WrongPayloadLen { expected, found: body.len() });
        }
        let mut maps = Vec::with_capacity(k);
        for view in 0..k {
            let mut scores = Vec::with_capacity(h * w);
            for i in 0..h * w {
                let off = (view * h * w + i) * 4;
                let value = f32::from_le_bytes(body[off..off + 4].try_into().unwrap());
                if !value.is_finite() || value < 0.0 {
                    return Err(FormatError::BadScore {
                        view,
                        offset: HEADER_LEN + off,
                        value,
                    });
                }
                scores.push(value as f64);
            }
            maps.push(Heatmap { h, w, scores });
        }
        Ok(maps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::CloudPoint;
    use crate::geom::Aabb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cube() -> Aabb {
        Aabb::new([-0.5, -0.5, 0.0], [0.5, 0.5, 1.0])
    }

    fn rig(res: usize) -> ViewSet {
        ViewSet::standard_five(unit_cube(), res, res)
    }

    fn random_target(rng: &mut ChaCha8Rng) -> Vec3 {
        [
            rng.gen_range(-0.45..0.45),
            rng.gen_range(-0.45..0.45),
            rng.gen_range(0.05..0.95),
        ]
    }

    #[test]
    fn gt_heatmaps_have_unit_mass_and_peak_at_the_projection() {
        let set = rig(224);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let target = random_target(&mut rng);
            let maps = make_gt_heatmaps(target, &set, 1.5).unwrap();
            assert_eq!(maps.len(), 5);
            for (hm, view) in maps.iter().zip(&set.views) {
                assert!((hm.mass() - 1.0).abs() < 1e-6, "mass {}", hm.mass());
                let (pu, pv, _) = view.project(target).unwrap();
                let expected = (View::pixel(pu, 224), View::pixel(pv, 224));
                assert_eq!(hm.argmax(), expected, "axis {:?}", view.axis);
            }
        }
    }

    #[test]
    fn center_target_peaks_at_the_center_pixel_pair() {
        // The exact center projects to raster coordinate 112.0 — a boundary
        // between pixels 111 and 112, whose centers are equidistant from the
        // peak. The scan tie-break must settle on 111 deterministically,
        // and both candidates are legitimate peaks.
        let set = rig(224);
        let maps = make_gt_heatmaps([0.0, 0.0, 0.5], &set, 1.5).unwrap();
        for hm in &maps {
            let (u, v) = hm.argmax();
            assert!(u == 111 || u == 112);
            assert!(v == 111 || v == 112);
            assert!((hm.mass() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tiny_sigma_collapses_to_one_near_unit_pixel() {
        let set = rig(64);
        let target = [0.123, -0.2345, 0.678];
        let maps = make_gt_heatmaps(target, &set, 0.1).unwrap();
        for (hm, view) in maps.iter().zip(&set.views) {
            let nonzero = hm.scores.iter().filter(|&&s| s > 0.0).count();
            assert!(nonzero <= 2, "σ=0.1 must light at most a couple pixels, got {nonzero}");
            let top = hm.scores.iter().cloned().fold(0.0, f64::max);
            assert!(top > 0.9, "nearly all mass on one pixel, got {top}");
            let (pu, pv, _) = view.project(target).unwrap();
            assert_eq!(hm.argmax(), (View::pixel(pu, 64), View::pixel(pv, 64)));
        }
    }

    #[test]
    fn corner_targets_are_renormalized_to_unit_mass() {
        let set = rig(64);
        let corner = [-0.5, -0.5, 0.0];
        for hm in make_gt_heatmaps(corner, &set, 2.0).unwrap() {
            assert!((hm.mass() - 1.0).abs() < 1e-6);
            assert_eq!(hm.argmax(), (0, 0));
        }
    }

    #[test]
    fn gt_heatmaps_reject_bad_inputs() {
        let set = rig(16);
        assert!(matches!(
            make_gt_heatmaps([2.0, 0.0, 0.5], &set, 1.5),
            Err(HeatmapError::TargetOutsideCube { .. })
        ));
        assert!(matches!(
            make_gt_heatmaps([0.0, 0.0, 0.5], &set, 0.0),
            Err(HeatmapError::BadSigma { .. })
        ));
    }

    #[test]
    fn uniform_heatmaps_argmax_to_the_first_voxel() {
        let set = rig(32);
        let maps: Vec<Heatmap> =
            (0..5).map(|_| Heatmap::new(32, 32, vec![0.125; 32 * 32])).collect();
        let r = back_project_argmax(&maps, &set, 10).unwrap();
        let first = voxel_center(&unit_cube(), 10, 0, 0, 0);
        assert_eq!(r.position, first);
        assert!((r.score - 5.0 * 0.125).abs() < 1e-12);
    }

    #[test]
    fn all_zero_heatmaps_are_zero_evidence() {
        let set = rig(16);
        let maps: Vec<Heatmap> = (0..5).map(|_| Heatmap::zeros(16, 16)).collect();
        assert!(matches!(
            back_project_argmax(&maps, &set, 8),
            Err(HeatmapError::ZeroEvidence)
        ));
    }

    #[test]
    fn coarse_localization_recovers_random_targets_within_bound() {
        let set = rig(224);
        let grid = 50;
        let bound = 0.5 * (1.0 / grid as f64) + 0.5 * (1.0 / 224.0) + 1e-12;
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..20 {
            let target = random_target(&mut rng);
            let maps = make_gt_heatmaps(target, &set, 1.5).unwrap();
            let r = back_project_argmax(&maps, &set, grid).unwrap();
            let err = (0..3)
                .map(|a| (r.position[a] - target[a]).abs())
                .fold(0.0, f64::max);
            assert!(err <= bound, "target {target:?}: ∞-norm error {err} > {bound}");
        }
    }

    #[test]
    fn memoized_scorer_is_bit_identical_to_the_exhaustive_reference() {
        let set = rig(48);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Random (non-Gaussian) heatmaps exercise arbitrary tie structure.
        for case in 0..3 {
            let maps: Vec<Heatmap> = (0..5)
                .map(|_| {
                    Heatmap::new(
                        48,
                        48,
                        (0..48 * 48).map(|_| rng.gen_range(0.0..1.0)).collect(),
                    )
                })
                .collect();
            let fast = back_project_argmax(&maps, &set, 21).unwrap();
            let slow = back_project_argmax_reference(&maps, &set, 21).unwrap();
            assert_eq!(fast.position, slow.position, "case {case}");
            assert_eq!(fast.score.to_bits(), slow.score.to_bits(), "case {case}");
        }
        // And on a GT-heatmap case.
        let maps = make_gt_heatmaps([0.2, -0.1, 0.7], &set, 1.5).unwrap();
        let fast = back_project_argmax(&maps, &set, 30).unwrap();
        let slow = back_project_argmax_reference(&maps, &set, 30).unwrap();
        assert_eq!(fast.position, slow.position);
        assert_eq!(fast.score.to_bits(), slow.score.to_bits());
    }

    #[test]
    fn single_view_leaves_the_depth_axis_at_the_first_voxel() {
        let cube = unit_cube();
        let set = ViewSet {
            views: vec![View { axis: crate::render::ViewAxis::PosZ, cube, h: 64, w: 64 }],
            splat_radius: 0,
        };
        let target = [0.2, 0.1, 0.8];
        let maps = make_gt_heatmaps(target, &set, 0.5).unwrap();
        let grid = 20;
        let r = back_project_argmax(&maps, &set, grid).unwrap();
        // x and y recovered; z unconstrained → lexicographically first voxel.
        assert!((r.position[0] - 0.2).abs() <= 0.5 / grid as f64 + 0.5 / 64.0 + 1e-12);
        assert!((r.position[1] - 0.1).abs() <= 0.5 / grid as f64 + 0.5 / 64.0 + 1e-12);
        assert_eq!(r.position[2], cube.min[2] + 0.5 * cube.side(2) / grid as f64);
    }

    #[test]
    fn adding_views_never_breaks_the_coarse_bound() {
        let cube = unit_cube();
        let grid = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let target = random_target(&mut rng);
            for k in 2..=5 {
                let set = ViewSet {
                    views: ViewSet::standard_five(cube, 112, 112).views[..k].to_vec(),
                    splat_radius: 0,
                };
                let maps = make_gt_heatmaps(target, &set, 1.5).unwrap();
                let r = back_project_argmax(&maps, &set, grid).unwrap();
                let err = (0..3)
                    .map(|a| (r.position[a] - target[a]).abs())
                    .fold(0.0, f64::max);
                let bound = 0.5 / grid as f64 + 0.5 / 112.0 + 1e-12;
                assert!(err <= bound, "k={k} target {target:?} err {err}");
            }
        }
    }

    fn dense_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud {
            points: (0..n)
                .map(|_| CloudPoint {
                    pos: [
                        rng.gen_range(-0.5f32..0.5),
                        rng.gen_range(-0.5f32..0.5),
                        rng.gen_range(0.0f32..1.0),
                    ],
                    rgb: [rng.gen(), rng.gen(), rng.gen()],
                })
                .collect(),
        }
    }

    #[test]
    fn two_stage_localization_tightens_the_estimate() {
        let set = rig(112);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let cloud = dense_cloud(&mut rng, 4000);
        for _ in 0..5 {
            let target = random_target(&mut rng);
            let provider = |_rendered: &[RenderedView], s: &ViewSet| {
                make_gt_heatmaps(target, s, 1.5)
            };
            let r = two_stage_localize(&cloud, &set, provider, 50, 0.2, 50).unwrap();
            assert_eq!(r.stage, Stage::Fine);
            let err = (0..3)
                .map(|a| (r.position[a] - target[a]).abs())
                .fold(0.0, f64::max);
            // Fine pitch 0.2/50 = 4 mm; half of it plus half a zoom pixel.
            let bound = 0.5 * (0.2 / 50.0) + 0.5 * (0.2 / 112.0) + 1e-12;
            assert!(err <= bound, "target {target:?}: fine err {err} > {bound}");
        }
    }

    #[test]
    fn stage_two_without_points_falls_back_to_coarse() {
        let set = rig(64);
        // One far-away cluster renders fine at stage 1, but the zoom cube
        // around a target on the other side holds nothing.
        let cloud = PointCloud {
            points: vec![CloudPoint { pos: [0.4, 0.4, 0.9], rgb: [9, 9, 9] }],
        };
        let target = [-0.4, -0.4, 0.1];
        let provider =
            |_: &[RenderedView], s: &ViewSet| make_gt_heatmaps(target, s, 1.5);
        let r = two_stage_localize(&cloud, &set, provider, 32, 0.1, 32).unwrap();
        assert_eq!(r.stage, Stage::Coarse);
        let err = (0..3).map(|a| (r.position[a] - target[a]).abs()).fold(0.0, f64::max);
        assert!(err <= 0.5 / 32.0 + 0.5 / 64.0 + 1e-12);
    }

    #[test]
    fn zero_evidence_propagates_through_two_stage() {
        let set = rig(32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = dense_cloud(&mut rng, 100);
        let provider = |r: &[RenderedView], _: &ViewSet| {
            Ok(r.iter().map(|v| Heatmap::zeros(v.h, v.w)).collect())
        };
        assert!(matches!(
            two_stage_localize(&cloud, &set, provider, 16, 0.2, 16),
            Err(HeatmapError::ZeroEvidence)
        ));
    }

    #[test]
    fn misaligned_heatmaps_are_rejected() {
        let set = rig(32);
        let maps: Vec<Heatmap> = (0..4).map(|_| Heatmap::zeros(32, 32)).collect();
        assert!(matches!(
            back_project_argmax(&maps, &set, 8),
            Err(HeatmapError::ViewCountMismatch { heatmaps: 4, views: 5 })
        ));
        let mut maps: Vec<Heatmap> = (0..5).map(|_| Heatmap::zeros(32, 32)).collect();
        maps[2] = Heatmap::zeros(16, 32);
        assert!(matches!(
            back_project_argmax(&maps, &set, 8),
            Err(HeatmapError::ShapeMismatch { index: 2, .. })
        ));
        let maps: Vec<Heatmap> = (0..5).map(|_| Heatmap::zeros(32, 32)).collect();
        assert!(matches!(
            back_project_argmax(&maps, &set, 1),
            Err(HeatmapError::GridTooSmall { grid: 1 })
        ));
    }

    #[test]
    fn bilinear_sampling_interpolates_and_respects_edges() {
        // 2×2 raster: values 0,1 / 2,3.
        let hm = Heatmap::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        // Pixel centers sample exactly.
        assert_eq!(hm.sample(0.5, 0.5), 0.0);
        assert_eq!(hm.sample(1.5, 0.5), 1.0);
        assert_eq!(hm.sample(0.5, 1.5), 2.0);
        assert_eq!(hm.sample(1.5, 1.5), 3.0);
        // Midpoint mixes all four equally.
        assert!((hm.sample(1.0, 1.0) - 1.5).abs() < 1e-15);
        // Beyond the first/last center the value clamps.
        assert_eq!(hm.sample(0.0, 0.0), 0.0);
        assert_eq!(hm.sample(2.0, 2.0), 3.0);
        // A constant raster samples to exactly the constant everywhere.
        let c = Heatmap::new(3, 3, vec![0.7; 9]);
        for i in 0..=30 {
            let x = i as f64 / 10.0;
            assert_eq!(c.sample(x, 1.3), 0.7);
            assert_eq!(c.sample(1.1, x), 0.7);
        }
    }

    #[test]
    fn hmp1_round_trips_and_validates() {
        let set = rig(32);
        let maps = make_gt_heatmaps([0.1, 0.1, 0.5], &set, 1.5).unwrap();
        let bytes = hmp1::encode(&maps);
        let decoded = hmp1::decode(&bytes).unwrap();
        assert_eq!(decoded.len(), 5);
        // f64→f32→f64 loses precision, but a second encode is byte-identical.
        assert_eq!(hmp1::encode(&decoded), bytes);
        for (a, b) in maps.iter().zip(&decoded) {
            assert_eq!((a.h, a.w), (b.h, b.w));
            for (x, y) in a.scores.iter().zip(&b.scores) {
                assert!((x - y).abs() < 1e-6);
            }
        }

        assert_eq!(hmp1::decode(b"HMP"), Err(hmp1::FormatError::TruncatedHeader { found: 3 }));
        assert_eq!(
            hmp1::decode(b"XXXX\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00"),
            Err(hmp1::FormatError::BadMagic)
        );
        let mut short = bytes.clone();
        short.truncate(bytes.len() - 1);
        assert!(matches!(
            hmp1::decode(&short),
            Err(hmp1::FormatError::WrongPayloadLen { .. })
        ));
        // Negative scores are rejected with their offset.
        let mut bad = hmp1::encode(&[Heatmap::new(1, 2, vec![0.5, 0.25])]);
        bad[hmp1::HEADER_LEN + 4..].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert_eq!(
            hmp1::decode(&bad),
            Err(hmp1::FormatError::BadScore {
                view: 0,
                offset: hmp1::HEADER_LEN + 4,
                value: -1.0
            })
        );
    }
}
