//! Spatial saliency reduction: patch grids scored with the Sobel operator,
//! four-neighbour smoothing, lowest-saliency patch dropping, and
//! interpolation of the patch mask onto feature maps.

use serde::{Deserialize, Serialize};

use crate::frame::{rgb_to_gray, Frame, GrayPlane, VideoSequence};
use crate::metrics::{evaluate, greedy_iou_tracker, MotScores};
use crate::rng::Rng;
use crate::scenario::{BBox, ScenarioTruth};
use crate::util::floor_count;
use crate::{Error, Result};

pub const DEFAULT_PATCH_SIZE: usize = 60;
pub const MIN_PATCH_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub width: usize,
    pub height: usize,
    pub scores: Vec<f64>,
    pub smoothed: Option<Vec<f64>>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel rectangle `(x0, y0, w, h)` of patch `(row, col)`; boundary
    /// patches may be narrower.
    pub fn patch_rect(&self, row: usize, col: usize) -> (usize, usize, usize, usize) {
        patch_rect(self.patch_size, self.width, self.height, row, col)
    }
}

fn patch_rect(ps: usize, width: usize, height: usize, row: usize, col: usize) -> (usize, usize, usize, usize) {
    let x0 = col * ps;
    let y0 = row * ps;
    (x0, y0, ps.min(width - x0), ps.min(height - y0))
}

pub fn build_patch_grid(width: usize, height: usize, patch_size: usize) -> Result<PatchGrid> {
    if patch_size < MIN_PATCH_SIZE {
        return Err(Error::invalid_config(format!(
            "patch_size {patch_size} < {MIN_PATCH_SIZE}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid_config("frame dimensions must be positive"));
    }
    let rows = height.div_ceil(patch_size);
    let cols = width.div_ceil(patch_size);
    Ok(PatchGrid {
        patch_size,
        rows,
        cols,
        width,
        height,
        scores: vec![0.0; rows * cols],
        smoothed: None,
    })
}

/// Mean of `|gx| + |gy|` over interior pixels; 0 for patches thinner than
/// 3 pixels.
pub fn sobel_saliency(patch: &GrayPlane) -> f64 {
    let (w, h) = (patch.width, patch.height);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut total = 0.0;
    for y in 1..h - 1 {
        let (up, mid, dn) = (
            &patch.data[(y - 1) * w..y * w],
            &patch.data[y * w..(y + 1) * w],
            &patch.data[(y + 1) * w..(y + 2) * w],
        );
        for x in 1..w - 1 {
            let gx = (up[x + 1] - up[x - 1]) + 2.0 * (mid[x + 1] - mid[x - 1]) + (dn[x + 1] - dn[x - 1]);
            let gy = (dn[x - 1] + 2.0 * dn[x] + dn[x + 1]) - (up[x - 1] + 2.0 * up[x] + up[x + 1]);
            total += gx.abs() + gy.abs();
        }
    }
    total / ((w - 2) * (h - 2)) as f64
}

pub fn score_patches(grid: &mut PatchGrid, gray: &GrayPlane) -> Result<()> {
    if gray.width != grid.width || gray.height != grid.height {
        return Err(Error::contract("gray plane does not match patch grid"));
    }
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let (x0, y0, w, h) = grid.patch_rect(r, c);
            grid.scores[r * grid.cols + c] = sobel_saliency(&gray.crop(x0, y0, w, h));
        }
    }
    grid.smoothed = None;
    Ok(())
}

/// Each patch becomes the mean of itself and its existing 4-neighbours.
pub fn smooth_scores(mut grid: PatchGrid) -> PatchGrid {
    let (rows, cols) = (grid.rows, grid.cols);
    let s = &grid.scores;
    let smoothed = (0..rows * cols)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let mut sum = s[i];
            let mut n = 1.0;
            let mut add = |j: usize| {
                sum += s[j];
                n += 1.0;
            };
            if r > 0 {
                add(i - cols);
            }
            if r + 1 < rows {
                add(i + cols);
            }
            if c > 0 {
                add(i - 1);
            }
            if c + 1 < cols {
                add(i + 1);
            }
            sum / n
        })
        .collect();
    grid.smoothed = Some(smoothed);
    grid
}

/// Scored and smoothed grid for one frame.
pub fn frame_saliency(frame: &Frame, patch_size: usize) -> Result<PatchGrid> {
    let mut grid = build_patch_grid(frame.width(), frame.height(), patch_size)?;
    score_patches(&mut grid, &rgb_to_gray(frame))?;
    Ok(smooth_scores(grid))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MaskJson", try_from = "MaskJson")]
pub struct SaliencyMask {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub width: usize,
    pub height: usize,
    /// `true` = keep.
    pub keep: Vec<bool>,
    pub drop_ratio: f64,
}

/// JSON form: grid geometry plus a row-major `'1'`/`'0'` keep string.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskJson {
    patch_size: usize,
    rows: usize,
    cols: usize,
    width: usize,
    height: usize,
    drop_ratio: f64,
    keep: String,
}

impl From<SaliencyMask> for MaskJson {
    fn from(m: SaliencyMask) -> Self {
        MaskJson {
            patch_size: m.patch_size,
            rows: m.rows,
            cols: m.cols,
            width: m.width,
            height: m.height,
            drop_ratio: m.drop_ratio,
            keep: bitstring(&m.keep),
        }
    }
}

impl TryFrom<MaskJson> for SaliencyMask {
    type Error = Error;

    fn try_from(j: MaskJson) -> Result<Self> {
        let keep = parse_bitstring(&j.keep)?;
        if keep.len() != j.rows * j.cols {
            return Err(Error::format("mask bitstring length does not match grid"));
        }
        if j.patch_size == 0 || j.rows != j.height.div_ceil(j.patch_size) || j.cols != j.width.div_ceil(j.patch_size) {
            return Err(Error::format("mask grid does not match frame geometry"));
        }
        Ok(SaliencyMask {
            patch_size: j.patch_size,
            rows: j.rows,
            cols: j.cols,
            width: j.width,
            height: j.height,
            keep,
            drop_ratio: j.drop_ratio,
        })
    }
}

pub fn bitstring(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn parse_bitstring(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(Error::format(format!("invalid bit {other:?}"))),
        })
        .collect()
}

impl SaliencyMask {
    pub fn dropped(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    fn with_keep(grid: &PatchGrid, keep: Vec<bool>, drop_ratio: f64) -> Self {
        SaliencyMask {
            patch_size: grid.patch_size,
            rows: grid.rows,
            cols: grid.cols,
            width: grid.width,
            height: grid.height,
            keep,
            drop_ratio,
        }
    }

    /// Fraction of the box area lying in kept patches.
    pub fn visible_fraction(&self, b: &BBox) -> f64 {
        let area = b.area();
        if area <= 0.0 {
            return 0.0;
        }
        let mut kept = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                if !self.keep[r * self.cols + c] {
                    continue;
                }
                let (x0, y0, w, h) = patch_rect(self.patch_size, self.width, self.height, r, c);
                let p = BBox::new(x0 as f64, y0 as f64, (x0 + w) as f64, (y0 + h) as f64);
                kept += p.intersection(b);
            }
        }
        kept / area
    }
}

fn check_drop_ratio(drop_ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&drop_ratio) {
        return Err(Error::invalid_config(format!("drop_ratio {drop_ratio} not in [0, 1)")));
    }
    Ok(())
}

/// Drops the `⌊N·drop_ratio⌋` patches with the lowest smoothed score; equal
/// scores drop in row-major order.
pub fn build_mask(grid: &PatchGrid, drop_ratio: f64) -> Result<SaliencyMask> {
    check_drop_ratio(drop_ratio)?;
    let smoothed = grid
        .smoothed
        .as_ref()
        .ok_or_else(|| Error::contract("build_mask needs smoothed scores"))?;
    let n = grid.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| smoothed[a].total_cmp(&smoothed[b]).then(a.cmp(&b)));
    let mut keep = vec![true; n];
    for &i in order.iter().take(floor_count(n, drop_ratio)) {
        keep[i] = false;
    }
    Ok(SaliencyMask::with_keep(grid, keep, drop_ratio))
}

/// Baseline mask dropping `⌊N·drop_ratio⌋` uniformly chosen patches.
pub fn random_mask(grid: &PatchGrid, drop_ratio: f64, rng: &mut Rng) -> Result<SaliencyMask> {
    check_drop_ratio(drop_ratio)?;
    let n = grid.len();
    let mut keep = vec![true; n];
    for i in rng.sample_indices(n, floor_count(n, drop_ratio)) {
        keep[i] = false;
    }
    Ok(SaliencyMask::with_keep(grid, keep, drop_ratio))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub layer: String,
    pub h: usize,
    pub w: usize,
    pub keep: Vec<bool>,
}

impl FeatureMask {
    pub fn all_kept(layer: impl Into<String>, h: usize, w: usize) -> Self {
        FeatureMask {
            layer: layer.into(),
            h,
            w,
            keep: vec![true; h * w],
        }
    }

    pub fn kept_fraction(&self) -> f64 {
        if self.keep.is_empty() {
            return 1.0;
        }
        self.keep.iter().filter(|&&k| k).count() as f64 / self.keep.len() as f64
    }

    #[inline]
    pub fn is_kept(&self, y: usize, x: usize) -> bool {
        self.keep[y * self.w + x]
    }
}

fn overlap(a0: u64, a1: u64, b0: u64, b1: u64) -> u64 {
    a1.min(b1).saturating_sub(a0.max(b0))
}

/// Nearest-area resampling of the patch mask to an `h × w` feature map. A
/// cell is dropped iff the dropped-patch share of its pixel footprint is at
/// least `drop_threshold`.
///
/// Coordinates are scaled by `h` (rows) and `w` (columns) so every footprint
/// and patch boundary is an integer and the area test is exact.
pub fn interpolate_mask(
    mask: &SaliencyMask,
    layer: &str,
    h: usize,
    w: usize,
    drop_threshold: f64,
) -> Result<FeatureMask> {
    if h == 0 || w == 0 {
        return Err(Error::contract("feature map dims must be >= 1"));
    }
    if !(drop_threshold > 0.0 && drop_threshold <= 1.0) {
        return Err(Error::invalid_config(format!(
            "drop_threshold {drop_threshold} not in (0, 1]"
        )));
    }
    let (fh, fw) = (mask.height as u64, mask.width as u64);
    let (sh, sw) = (h as u64, w as u64);
    let ps = mask.patch_size as u64;
    let cell_area = fh * fw;
    let mut keep = Vec::with_capacity(h * w);
    for r in 0..sh {
        let (y0, y1) = (r * fh, (r + 1) * fh);
        let pr0 = (y0 / sh / ps) as usize;
        let pr1 = ((y1 - 1) / sh / ps) as usize;
        for c in 0..sw {
            let (x0, x1) = (c * fw, (c + 1) * fw);
            let pc0 = (x0 / sw / ps) as usize;
            let pc1 = ((x1 - 1) / sw / ps) as usize;
            let mut dropped = 0u64;
            for pr in pr0..=pr1.min(mask.rows - 1) {
                let py0 = pr as u64 * ps * sh;
                let py1 = ((pr as u64 + 1) * ps).min(fh) * sh;
                let oy = overlap(y0, y1, py0, py1);
                for pc in pc0..=pc1.min(mask.cols - 1) {
                    if mask.keep[pr * mask.cols + pc] {
                        continue;
                    }
                    let px0 = pc as u64 * ps * sw;
                    let px1 = ((pc as u64 + 1) * ps).min(fw) * sw;
                    dropped += oy * overlap(x0, x1, px0, px1);
                }
            }
            keep.push((dropped as f64) < drop_threshold * cell_area as f64);
        }
    }
    Ok(FeatureMask {
        layer: layer.to_owned(),
        h,
        w,
        keep,
    })
}

/// Kept-cell fraction of every `(name, h, w)` layer.
pub fn dropped_fraction_per_layer(
    mask: &SaliencyMask,
    layers: &[(String, usize, usize)],
    drop_threshold: f64,
) -> Result<Vec<(String, f64)>> {
    layers
        .iter()
        .map(|(name, h, w)| {
            interpolate_mask(mask, name, *h, *w, drop_threshold).map(|m| (name.clone(), m.kept_fraction()))
        })
        .collect()
}

/// Detections whose kept-patch coverage reaches `min_visible`; the rest are
/// lost to patch dropping.
pub fn mask_detections(dets: &[BBox], mask: &SaliencyMask, min_visible: f64) -> Vec<BBox> {
    dets.iter()
        .copied()
        .filter(|b| mask.visible_fraction(b) >= min_visible)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Saliency,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskedEvalConfig {
    pub patch_size: usize,
    pub drop_ratio: f64,
    /// A detection survives when at least this share of its box is kept.
    pub min_visible: f64,
    pub iou_threshold: f64,
}

impl Default for MaskedEvalConfig {
    fn default() -> Self {
        MaskedEvalConfig {
            patch_size: DEFAULT_PATCH_SIZE,
            drop_ratio: 0.2,
            min_visible: 0.5,
            iou_threshold: crate::metrics::DEFAULT_IOU_THRESHOLD,
        }
    }
}

/// Per-frame masks for a rendered sequence.
pub fn sequence_masks(
    video: &VideoSequence,
    patch_size: usize,
    drop_ratio: f64,
    mode: MaskMode,
    rng: &mut Rng,
) -> Result<Vec<SaliencyMask>> {
    video
        .frames()
        .iter()
        .map(|f| match mode {
            MaskMode::Saliency => build_mask(&frame_saliency(f, patch_size)?, drop_ratio),
            MaskMode::Random => random_mask(&build_patch_grid(f.width(), f.height(), patch_size)?, drop_ratio, rng),
        })
        .collect()
}

/// Tracks the detections that survive per-frame patch masks and scores the
/// result against the full ground truth.
pub fn evaluate_masked(truth: &ScenarioTruth, masks: &[SaliencyMask], config: &MaskedEvalConfig) -> Result<MotScores> {
    if masks.len() != truth.n_frames {
        return Err(Error::contract(format!(
            "{} masks for {} frames",
            masks.len(),
            truth.n_frames
        )));
    }
    let dets: Vec<Vec<BBox>> = truth
        .detections
        .iter()
        .zip(masks)
        .map(|(d, m)| mask_detections(d, m, config.min_visible))
        .collect();
    let assignment = greedy_iou_tracker(&dets, config.iou_threshold);
    evaluate(truth, &assignment, config.iou_threshold)
}
