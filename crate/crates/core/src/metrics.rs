//! Mask scoring: Jaccard, boundary F, pixel accuracy, max F-beta, and
//! dataset-level aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor_io::{
    read_mask, sorted_stems, sorted_subdirs, AveragingMode, FrameKey, MaskSource, PixelMask,
};

pub const BETA_SQ: f64 = 0.3;
/// Binarization thresholds are `k / THRESHOLD_LEVELS` for `k = 1..THRESHOLD_LEVELS`.
pub const THRESHOLD_LEVELS: usize = 256;

fn check_dims(a: &PixelMask, b: &PixelMask) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::shape(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Intersection over union; 1 when both masks are empty.
pub fn jaccard(pred: &PixelMask, gt: &PixelMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let (inter, union) = pred
        .data
        .iter()
        .zip(&gt.data)
        .fold((0usize, 0usize), |(i, u), (&p, &g)| (i + (p & g) as usize, u + (p | g) as usize));
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn accuracy(pred: &PixelMask, gt: &PixelMask) -> Result<f64> {
    check_dims(pred, gt)?;
    if pred.data.is_empty() {
        return Ok(1.0);
    }
    let same = pred.data.iter().zip(&gt.data).filter(|(p, g)| p == g).count();
    Ok(same as f64 / pred.data.len() as f64)
}

/// Foreground pixels with at least one 4-neighbour background pixel inside the image.
pub fn boundary(mask: &PixelMask) -> Vec<bool> {
    let (h, w) = (mask.height, mask.width);
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) == 0 {
                continue;
            }
            let bg = (y > 0 && mask.get(y - 1, x) == 0)
                || (y + 1 < h && mask.get(y + 1, x) == 0)
                || (x > 0 && mask.get(y, x - 1) == 0)
                || (x + 1 < w && mask.get(y, x + 1) == 0);
            out[y * w + x] = bg;
        }
    }
    out
}

/// `ceil(0.008 * diagonal)`, the usual contour-matching tolerance.
pub fn default_boundary_tol(height: usize, width: usize) -> usize {
    (0.008 * ((height * height + width * width) as f64).sqrt()).ceil() as usize
}

/// Dilate with a Euclidean disk of radius `tol`.
fn dilate(map: &[bool], height: usize, width: usize, tol: usize) -> Vec<bool> {
    let r = tol as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let mut out = vec![false; map.len()];
    for (i, _) in map.iter().enumerate().filter(|(_, &b)| b) {
        let (y, x) = ((i / width) as isize, (i % width) as isize);
        for &(dy, dx) in &offsets {
            let (yy, xx) = (y + dy, x + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < height && (xx as usize) < width {
                out[yy as usize * width + xx as usize] = true;
            }
        }
    }
    out
}

/// Contour F-measure with boundary pixels matched within `tol_px`.
///
/// Both boundaries empty gives 1; exactly one empty gives 0.
pub fn boundary_f(pred: &PixelMask, gt: &PixelMask, tol_px: usize) -> Result<f64> {
    check_dims(pred, gt)?;
    let (h, w) = (pred.height, pred.width);
    let bp = boundary(pred);
    let bg = boundary(gt);
    let np = bp.iter().filter(|&&b| b).count();
    let ng = bg.iter().filter(|&&b| b).count();
    match (np, ng) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let gt_zone = dilate(&bg, h, w, tol_px);
    let pred_zone = dilate(&bp, h, w, tol_px);
    let matched_pred = bp.iter().zip(&gt_zone).filter(|(&b, &z)| b && z).count();
    let matched_gt = bg.iter().zip(&pred_zone).filter(|(&b, &z)| b && z).count();
    let precision = matched_pred as f64 / np as f64;
    let recall = matched_gt as f64 / ng as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

pub fn f_beta(precision: f64, recall: f64) -> f64 {
    let denom = BETA_SQ * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + BETA_SQ) * precision * recall / denom
    }
}

/// `(precision, recall)` at each threshold `k / 256`, `k = 1..=255`, with `p >= t` positive.
///
/// Precision with no predicted positives and recall with no GT positives are taken as 0.
pub fn precision_recall_curve(pred_soft: &[f64], gt: &PixelMask) -> Result<Vec<(f64, f64)>> {
    if pred_soft.len() != gt.data.len() {
        return Err(Error::shape(format!(
            "{} soft values for a {}x{} mask",
            pred_soft.len(),
            gt.height,
            gt.width
        )));
    }
    // bin b holds values with floor(256 p) = b, so p >= k/256 <=> bin >= k (exact: 256 is a power of two)
    let mut pos = vec![0usize; THRESHOLD_LEVELS];
    let mut hit = vec![0usize; THRESHOLD_LEVELS];
    for (&p, &g) in pred_soft.iter().zip(&gt.data) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Argument(format!("soft prediction {p} outside [0, 1]")));
        }
        let bin = ((p * THRESHOLD_LEVELS as f64) as usize).min(THRESHOLD_LEVELS - 1);
        pos[bin] += 1;
        hit[bin] += g as usize;
    }
    let gt_pos = gt.area();
    let mut curve = vec![(0.0, 0.0); THRESHOLD_LEVELS - 1];
    let (mut cum_pos, mut cum_hit) = (0usize, 0usize);
    for k in (1..THRESHOLD_LEVELS).rev() {
        cum_pos += pos[k];
        cum_hit += hit[k];
        let precision = if cum_pos == 0 { 0.0 } else { cum_hit as f64 / cum_pos as f64 };
        let recall = if gt_pos == 0 { 0.0 } else { cum_hit as f64 / gt_pos as f64 };
        curve[k - 1] = (precision, recall);
    }
    Ok(curve)
}

/// Maximum F-beta (beta^2 = 0.3) over the 255 uniform thresholds.
pub fn max_f_beta(pred_soft: &[f64], gt: &PixelMask) -> Result<f64> {
    Ok(precision_recall_curve(pred_soft, gt)?
        .iter()
        .map(|&(p, r)| f_beta(p, r))
        .fold(0.0, f64::max))
}

/// Pixelwise union.
pub fn merge_masks(masks: &[PixelMask]) -> Result<PixelMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Argument("cannot merge an empty list of masks".into()))?;
    let mut out = first.clone();
    for m in &masks[1..] {
        check_dims(first, m)?;
        out.data.iter_mut().zip(&m.data).for_each(|(o, &v)| *o |= v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub sequence: String,
    pub frame: String,
    pub j: f64,
    pub f: f64,
    pub accuracy: f64,
    /// Per-threshold `(precision, recall)`; feeds the dataset-level max F-beta.
    #[serde(skip)]
    pub curve: Vec<(f64, f64)>,
}

/// Score one binary prediction against its ground truth.
pub fn score_frame(key: &FrameKey, pred: &PixelMask, gt: &PixelMask) -> Result<FrameScore> {
    let soft: Vec<f64> = pred.data.iter().map(|&v| v as f64).collect();
    Ok(FrameScore {
        sequence: key.sequence.clone(),
        frame: key.frame.clone(),
        j: jaccard(pred, gt)?,
        f: boundary_f(pred, gt, default_boundary_tol(gt.height, gt.width))?,
        accuracy: accuracy(pred, gt)?,
        curve: precision_recall_curve(&soft, gt)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub averaging_mode: AveragingMode,
    pub dataset_j: f64,
    pub dataset_f: f64,
    pub dataset_accuracy: f64,
    pub max_f_beta: f64,
    /// Mean J per sequence.
    pub per_sequence: BTreeMap<String, f64>,
    pub per_frame: Vec<FrameScore>,
    /// Frames that had a prediction but no ground truth.
    #[serde(default)]
    pub skipped: Vec<String>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Average frame scores per `mode`. Dataset max F-beta is the best F-beta of
/// the frame-averaged precision/recall curve.
pub fn aggregate(frames: &[FrameScore], mode: AveragingMode) -> Result<EvalReport> {
    if frames.is_empty() {
        return Err(Error::Argument("no scored frames to aggregate".into()));
    }
    let mut by_seq: BTreeMap<&str, Vec<&FrameScore>> = BTreeMap::new();
    for f in frames {
        by_seq.entry(&f.sequence).or_default().push(f);
    }
    let average = |metric: fn(&FrameScore) -> f64| -> f64 {
        match mode {
            AveragingMode::FrameAverage => mean(frames.iter().map(metric)),
            AveragingMode::SequenceAverage => {
                mean(by_seq.values().map(|fs| mean(fs.iter().map(|f| metric(f)))))
            }
        }
    };
    let per_sequence = by_seq
        .iter()
        .map(|(s, fs)| (s.to_string(), mean(fs.iter().map(|f| f.j))))
        .collect();

    let levels = frames.iter().map(|f| f.curve.len()).min().unwrap_or(0);
    let max_f_beta = (0..levels)
        .map(|k| {
            let p = mean(frames.iter().map(|f| f.curve[k].0));
            let r = mean(frames.iter().map(|f| f.curve[k].1));
            f_beta(p, r)
        })
        .fold(0.0, f64::max);

    Ok(EvalReport {
        averaging_mode: mode,
        dataset_j: average(|f| f.j),
        dataset_f: average(|f| f.f),
        dataset_accuracy: average(|f| f.accuracy),
        max_f_beta,
        per_sequence,
        per_frame: frames.to_vec(),
        skipped: Vec::new(),
    })
}

fn round4(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Number(n) if n.is_f64() => {
            let v = n.as_f64().unwrap_or(0.0);
            if let Some(r) = serde_json::Number::from_f64((v * 1e4).round() / 1e4) {
                *n = r;
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round4),
        serde_json::Value::Object(map) => map.values_mut().for_each(round4),
        _ => {}
    }
}

impl EvalReport {
    /// Pretty JSON with every float rounded to 4 decimals.
    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report is serializable");
        round4(&mut value);
        serde_json::to_string_pretty(&value).expect("value is serializable")
    }
}

/// Ground truth for one frame: a mask file, or a directory of per-object
/// masks that are merged into one.
fn read_gt(dir: &Path, stem: &str) -> Result<Option<PixelMask>> {
    for ext in ["png", "npy"] {
        let p = dir.join(format!("{stem}.{ext}"));
        if p.is_file() {
            return read_mask(&p, MaskSource::GroundTruth).map(Some);
        }
    }
    let sub = dir.join(stem);
    if sub.is_dir() {
        let mut masks = Vec::new();
        for ext in ["png", "npy"] {
            for obj in sorted_stems(&sub, ext)? {
                masks.push(read_mask(sub.join(format!("{obj}.{ext}")), MaskSource::GroundTruth)?);
            }
        }
        if !masks.is_empty() {
            return merge_masks(&masks).map(Some);
        }
    }
    Ok(None)
}

fn gt_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = sorted_stems(dir, "png")?;
    stems.extend(sorted_stems(dir, "npy")?);
    stems.extend(sorted_subdirs(dir)?);
    stems.sort();
    stems.dedup();
    Ok(stems)
}

/// Score `<pred>/<seq>/<frame>.{png,npy}` against `<gt>/<seq>/<frame>`.
///
/// Every ground-truth frame must have a prediction; predictions at a different
/// resolution are nearest-resized to the ground truth. Predictions without
/// ground truth are listed in `skipped`.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, mode: AveragingMode) -> Result<EvalReport> {
    let mut jobs = Vec::new();
    let mut missing = Vec::new();
    for seq in sorted_subdirs(gt_dir)? {
        for stem in gt_stems(&gt_dir.join(&seq))? {
            let key = FrameKey::new(seq.clone(), stem.clone());
            let pred = ["png", "npy"]
                .iter()
                .map(|ext| key.path_in(pred_dir, ext))
                .find(|p| p.is_file());
            match pred {
                Some(p) => jobs.push((key, p)),
                None => missing.push(key.to_string()),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Argument(format!(
            "no prediction for {} frame(s): {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let scores = par::map(&jobs, |(key, pred_path)| -> Result<FrameScore> {
        let gt = read_gt(&gt_dir.join(&key.sequence), &key.frame)?
            .ok_or_else(|| Error::Argument(format!("unreadable ground truth for {key}")))?;
        let pred = read_mask(pred_path, MaskSource::Graphcut)?;
        let pred = if pred.same_dims(&gt) {
            pred
        } else {
            pred.resize_nearest(gt.height, gt.width)
        };
        score_frame(key, &pred, &gt)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut report = aggregate(&scores, mode)?;
    if pred_dir.is_dir() {
        for seq in sorted_subdirs(pred_dir)? {
            let mut stems = sorted_stems(&pred_dir.join(&seq), "png")?;
            stems.extend(sorted_stems(&pred_dir.join(&seq), "npy")?);
            stems.sort();
            stems.dedup();
            for stem in stems {
                let key = FrameKey::new(seq.clone(), stem);
                if !jobs.iter().any(|(k, _)| *k == key) {
                    report.skipped.push(key.to_string());
                }
            }
        }
    }
    Ok(report)
}
