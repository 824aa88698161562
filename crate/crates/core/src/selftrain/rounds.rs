//! Round directories and the round-to-round driver.
//!
//! ```text
//! <run>/round_<t>/masks/<sequence>/<frame>.png   pseudo ground truth of round t
//! <run>/round_<t>/probe.json                     probe that produced it (t >= 1)
//! <run>/round_<t>/report.json                    scores against ground truth, if any
//! <run>/round_<t>/external/<sequence>/<frame>.png  predictions deposited by an external trainer
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{l2_normalized, probe_predict, train_from, LinearProbe, TrainConfig, TrainingFrame};
use crate::error::{Error, Result};
use crate::maskpipe::{downsample_majority, patch_to_pixel};
use crate::metrics::{aggregate, score_frame, EvalReport};
use crate::par;
use crate::tensor_io::{
    read_array, read_mask, read_mask_strict, write_mask, DatasetManifest, FeatureGrid, FeatureKind,
    FrameKey, MaskSource, PixelMask,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainConfig {
    pub rounds: usize,
    pub seed: u64,
    pub lr: f64,
    pub iterations: usize,
    /// Gaussian init scale; 0 keeps the zero initialization.
    pub init_scale: f64,
    /// Scale each patch feature vector to unit length before the probe sees it.
    pub normalize_features: bool,
    /// Stop when fewer than this fraction of pixels change between rounds; 0 disables.
    pub early_stop: f64,
    /// Start each round from the previous probe instead of a fresh one.
    pub resume: bool,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            seed: 0,
            lr: 0.1,
            iterations: 500,
            init_scale: 0.0,
            normalize_features: true,
            early_stop: 0.001,
            resume: false,
        }
    }
}

impl SelfTrainConfig {
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            iterations: self.iterations,
            init_scale: self.init_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train().validate()?;
        if !(0.0..1.0).contains(&self.early_stop) {
            return Err(Error::Config(format!("early_stop {} must lie in [0, 1)", self.early_stop)));
        }
        Ok(())
    }
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config is serializable");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round: usize,
    /// Mask file per frame, used as training targets by the next round.
    pub pseudo_gt: BTreeMap<FrameKey, PathBuf>,
    /// Probe that produced this round's masks; absent for round 0 and external rounds.
    pub probe: Option<LinearProbe>,
    pub metrics: Option<EvalReport>,
    pub seed: u64,
    /// Fraction of pixels that differ from the previous round's masks.
    pub changed_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProbeRecord {
    weights: Vec<f64>,
    bias: f64,
    seed: u64,
    round: usize,
    config_hash: String,
    initial_loss: f64,
    final_loss: f64,
}

pub fn round_dir(run_dir: &Path, round: usize) -> PathBuf {
    run_dir.join(format!("round_{round}"))
}

fn mask_path(run_dir: &Path, round: usize, key: &FrameKey) -> PathBuf {
    key.path_in(&round_dir(run_dir, round).join("masks"), "png")
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Score masks against whatever ground truth the manifest has.
fn evaluate_masks(manifest: &DatasetManifest, masks: &BTreeMap<FrameKey, PixelMask>) -> Result<Option<EvalReport>> {
    let jobs: Vec<(FrameKey, PathBuf)> = manifest
        .frames()
        .filter_map(|(k, f)| f.ground_truth.clone().map(|p| (k, p)))
        .filter(|(k, _)| masks.contains_key(k))
        .collect();
    if jobs.is_empty() {
        return Ok(None);
    }
    let scores = par::map(&jobs, |(key, gt_path)| {
        let gt = read_mask(gt_path, MaskSource::GroundTruth)?;
        let pred = &masks[key];
        let pred = if pred.same_dims(&gt) {
            pred.clone()
        } else {
            pred.resize_nearest(gt.height, gt.width)
        };
        score_frame(key, &pred, &gt)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    aggregate(&scores, manifest.averaging_mode()).map(Some)
}

fn read_round_masks(run_dir: &Path, round: usize, manifest: &DatasetManifest) -> Result<BTreeMap<FrameKey, PixelMask>> {
    let keys: Vec<FrameKey> = manifest.frames().map(|(k, _)| k).collect();
    let missing: Vec<String> = keys
        .iter()
        .filter(|k| !mask_path(run_dir, round, k).is_file())
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Round(format!(
            "round {round} has no pseudo ground truth for {}",
            missing.join(", ")
        )));
    }
    let masks = par::map(&keys, |k| read_mask(mask_path(run_dir, round, k), MaskSource::Graphcut))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(keys.into_iter().zip(masks).collect())
}

/// Adopt the graph-cut masks already written to `round_0/masks` as round 0.
pub fn init_round_zero(run_dir: &Path, manifest: &DatasetManifest, seed: u64) -> Result<RoundState> {
    let masks = read_round_masks(run_dir, 0, manifest)?;
    let metrics = evaluate_masks(manifest, &masks)?;
    if let Some(report) = &metrics {
        write_json(&round_dir(run_dir, 0).join("report.json"), &report.to_json())?;
    }
    Ok(RoundState {
        round: 0,
        pseudo_gt: masks.keys().map(|k| (k.clone(), mask_path(run_dir, 0, k))).collect(),
        probe: None,
        metrics,
        seed,
        changed_fraction: None,
    })
}

/// Rebuild the state of an existing round from disk.
pub fn load_round_state(run_dir: &Path, round: usize, manifest: &DatasetManifest, seed: u64) -> Result<RoundState> {
    let masks = read_round_masks(run_dir, round, manifest)?;
    let dir = round_dir(run_dir, round);
    let probe = match fs::read_to_string(dir.join("probe.json")) {
        Ok(text) => {
            let rec: ProbeRecord = serde_json::from_str(&text)
                .map_err(|e| Error::Round(format!("{}: {e}", dir.join("probe.json").display())))?;
            Some(LinearProbe {
                weights: rec.weights,
                bias: rec.bias,
            })
        }
        Err(_) => None,
    };
    Ok(RoundState {
        round,
        pseudo_gt: masks.keys().map(|k| (k.clone(), mask_path(run_dir, round, k))).collect(),
        probe,
        metrics: evaluate_masks(manifest, &masks)?,
        seed,
        changed_fraction: None,
    })
}

/// Write `predictions` as the pseudo ground truth of round `state.round + 1`
/// and score them.
pub fn adopt_predictions(
    state: &RoundState,
    manifest: &DatasetManifest,
    run_dir: &Path,
    predictions: BTreeMap<FrameKey, PixelMask>,
) -> Result<RoundState> {
    let next = state.round + 1;
    let masks_dir = round_dir(run_dir, next).join("masks");
    if masks_dir.exists() {
        fs::remove_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
    }
    let entries: Vec<(&FrameKey, &PixelMask)> = predictions.iter().collect();
    let changes = par::map(&entries, |(key, mask)| -> Result<(usize, usize)> {
        write_mask(mask_path(run_dir, next, key), mask)?;
        let prev = match state.pseudo_gt.get(*key) {
            Some(p) => read_mask(p, MaskSource::Graphcut)?,
            None => return Ok((0, 0)),
        };
        let prev = if prev.same_dims(mask) {
            prev
        } else {
            prev.resize_nearest(mask.height, mask.width)
        };
        let diff = prev.data.iter().zip(&mask.data).filter(|(a, b)| a != b).count();
        Ok((diff, mask.data.len()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (diff, total) = changes.iter().fold((0, 0), |(d, t), (a, b)| (d + a, t + b));

    let metrics = evaluate_masks(manifest, &predictions)?;
    if let Some(report) = &metrics {
        write_json(&round_dir(run_dir, next).join("report.json"), &report.to_json())?;
    }
    Ok(RoundState {
        round: next,
        pseudo_gt: predictions.keys().map(|k| (k.clone(), mask_path(run_dir, next, k))).collect(),
        probe: None,
        metrics,
        seed: state.seed,
        changed_fraction: (total > 0).then(|| diff as f64 / total as f64),
    })
}

fn load_features(manifest: &DatasetManifest, key: &FrameKey, normalize: bool) -> Result<FeatureGrid> {
    let entry = manifest
        .frames()
        .find(|(k, _)| k == key)
        .map(|(_, e)| e.appearance.clone())
        .ok_or_else(|| Error::Round(format!("frame {key} is not in the manifest")))?;
    let raw = read_array(&entry)?;
    let (rows, cols) = match raw.shape.as_slice() {
        [r, c, _] => (*r, *c),
        other => return Err(Error::shape(format!("{}: feature array shape {other:?}", entry.display()))),
    };
    let geometry = manifest.config.geometry(rows, cols);
    let grid = FeatureGrid::from_array(raw, geometry, FeatureKind::Appearance)?;
    Ok(if normalize { l2_normalized(&grid) } else { grid })
}

/// Train a probe on the current pseudo ground truth and write its predictions
/// as the next round.
pub fn run_round(
    state: &RoundState,
    manifest: &DatasetManifest,
    run_dir: &Path,
    cfg: &SelfTrainConfig,
) -> Result<RoundState> {
    cfg.validate()?;
    let keys: Vec<FrameKey> = manifest.frames().map(|(k, _)| k).collect();
    let missing: Vec<String> = keys
        .iter()
        .filter(|k| state.pseudo_gt.get(*k).is_none_or(|p| !p.is_file()))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Round(format!(
            "round {} is missing pseudo ground truth for {}",
            state.round,
            missing.join(", ")
        )));
    }

    let frames = par::map(&keys, |key| -> Result<TrainingFrame> {
        let features = load_features(manifest, key, cfg.normalize_features)?;
        let g = features.geometry;
        let mask = read_mask(&state.pseudo_gt[key], MaskSource::Graphcut)?;
        let mask = if mask.height == g.image_height && mask.width == g.image_width {
            mask
        } else {
            mask.resize_nearest(g.image_height, g.image_width)
        };
        let (rows, cols, labels) = downsample_majority(&mask, g.patch_size)?;
        if (rows, cols) != (features.rows, features.cols) {
            return Err(Error::shape(format!(
                "{key}: mask grid {rows}x{cols} vs features {}x{}",
                features.rows, features.cols
            )));
        }
        TrainingFrame::new(features, labels)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let next = state.round + 1;
    let channels = frames
        .first()
        .ok_or_else(|| Error::Round("no frames to train on".into()))?
        .features
        .channels;
    let start = match (&state.probe, cfg.resume) {
        (Some(p), true) => p.clone(),
        _ => LinearProbe::init(channels, cfg.seed, next, cfg.init_scale)?,
    };
    let trained = train_from(start, &frames, &cfg.train())?;
    log::info!(
        "round {next}: loss {:.6} -> {:.6}",
        trained.initial_loss,
        trained.final_loss
    );

    let predictions = par::map(&frames, |frame| -> Result<PixelMask> {
        let soft = probe_predict(&trained.probe, &frame.features)?;
        let labels: Vec<u8> = soft.iter().map(|&p| u8::from(p >= 0.5)).collect();
        let g = frame.features.geometry;
        patch_to_pixel(
            &labels,
            frame.features.rows,
            frame.features.cols,
            g.patch_size,
            g.image_height,
            g.image_width,
            MaskSource::Probe,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut out = adopt_predictions(state, manifest, run_dir, keys.into_iter().zip(predictions).collect())?;
    let record = ProbeRecord {
        weights: trained.probe.weights.clone(),
        bias: trained.probe.bias,
        seed: cfg.seed,
        round: next,
        config_hash: config_hash(cfg),
        initial_loss: trained.initial_loss,
        final_loss: trained.final_loss,
    };
    let text = serde_json::to_string_pretty(&record).expect("probe record is serializable");
    write_json(&round_dir(run_dir, next).join("probe.json"), &text)?;
    out.probe = Some(trained.probe);
    Ok(out)
}

/// Validate and adopt masks an external trainer left in `round_<t>/external/`.
///
/// Every frame needs a strictly binary mask with the pseudo ground truth's
/// dimensions; otherwise nothing is adopted and all offenders are reported.
pub fn external_trainer_exchange(state: &RoundState, manifest: &DatasetManifest, run_dir: &Path) -> Result<RoundState> {
    let ext = round_dir(run_dir, state.round).join("external");
    let keys: Vec<FrameKey> = manifest.frames().map(|(k, _)| k).collect();
    let checked = par::map(&keys, |key| -> std::result::Result<PixelMask, String> {
        let path = ["png", "npy"]
            .iter()
            .map(|ext_name| key.path_in(&ext, ext_name))
            .find(|p| p.is_file())
            .ok_or_else(|| format!("{key}: missing prediction"))?;
        let mask = read_mask_strict(&path, MaskSource::External).map_err(|e| format!("{key}: {e}"))?;
        let reference = state
            .pseudo_gt
            .get(key)
            .ok_or_else(|| format!("{key}: no pseudo ground truth to compare against"))?;
        let reference = read_mask(reference, MaskSource::Graphcut).map_err(|e| format!("{key}: {e}"))?;
        if !mask.same_dims(&reference) {
            return Err(format!(
                "{key}: prediction is {}x{}, expected {}x{}",
                mask.height, mask.width, reference.height, reference.width
            ));
        }
        Ok(mask)
    });
    let mut offenders = Vec::new();
    let mut predictions = BTreeMap::new();
    for (key, result) in keys.into_iter().zip(checked) {
        match result {
            Ok(mask) => {
                predictions.insert(key, mask);
            }
            Err(msg) => offenders.push(msg),
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Exchange(offenders));
    }
    adopt_predictions(state, manifest, run_dir, predictions)
}
