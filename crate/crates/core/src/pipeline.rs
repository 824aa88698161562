//! End-to-end drivers: graph-cut segmentation of a dataset, self-training
//! rounds, and mask-directory ensembling.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::affinity::{build_graph, AffinityConfig};
use crate::error::{Error, Result};
use crate::maskpipe::{crf_refine, patch_to_pixel, CrfParams};
use crate::par;
use crate::selftrain::{
    config_hash, ensemble_vote, external_trainer_exchange, init_round_zero, load_round_state, round_dir, run_round,
    RoundState, SelfTrainConfig,
};
use crate::spectral::{graph_cut, ncut_value, HeuristicTrace, SpectralConfig};
use crate::tensor_io::{
    load_manifest, read_array, read_mask, read_rgb, sorted_stems, sorted_subdirs, write_mask, DatasetManifest,
    FeatureGrid, FeatureKind, FrameEntry, FrameKey, MaskSource, PixelMask, RgbFrame,
};

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory (the one holding `dataset.toml`).
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub affinity: AffinityConfig,
    pub spectral: SpectralConfig,
    pub crf_enabled: bool,
    pub crf: CrfParams,
    pub selftrain: SelfTrainConfig,
    /// Worker threads; 0 uses the default pool.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            output: PathBuf::new(),
            affinity: AffinityConfig::default(),
            spectral: SpectralConfig::default(),
            crf_enabled: true,
            crf: CrfParams::default(),
            selftrain: SelfTrainConfig::default(),
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.affinity.validate()?;
        self.spectral.validate()?;
        self.crf.validate()?;
        self.selftrain.validate()?;
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("dataset path is not set".into()));
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::Config("output path is not set".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Write `config.json` (config plus its hash) under `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let snapshot = serde_json::json!({ "hash": self.hash(), "config": self });
        let path = dir.join("config.json");
        let text = serde_json::to_string_pretty(&snapshot).expect("config is serializable");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub mask: PixelMask,
    pub eigenvalue: f64,
    pub residual: f64,
    /// `None` when the bipartition put every patch on one side.
    pub ncut: Option<f64>,
    pub degenerate: bool,
    pub trace: HeuristicTrace,
    pub crf_applied: bool,
}

/// Graph-cut one frame: affinity graph, second eigenvector, mean split,
/// foreground choice, pixel mask, and optional CRF refinement.
pub fn segment_frame(
    app: &FeatureGrid,
    flow: &FeatureGrid,
    image: Option<&RgbFrame>,
    cfg: &RunConfig,
) -> Result<FrameOutcome> {
    let graph = build_graph(app, flow, &cfg.affinity)?;
    let cut = graph_cut(&graph, app.rows, app.cols, &cfg.spectral)?;
    let ncut = if cut.degenerate {
        None
    } else {
        Some(ncut_value(&graph, &cut.labels)?.0)
    };
    let g = app.geometry;
    let mut mask = patch_to_pixel(
        &cut.foreground,
        app.rows,
        app.cols,
        g.patch_size,
        g.image_height,
        g.image_width,
        MaskSource::Graphcut,
    )?;
    let mut crf_applied = false;
    if cfg.crf_enabled {
        if let Some(img) = image {
            let img = img.resized(mask.height, mask.width);
            mask = crf_refine(&mask, &img, &cfg.crf)?;
            crf_applied = true;
        }
    }
    Ok(FrameOutcome {
        mask,
        eigenvalue: cut.eigenvalue,
        residual: cut.residual,
        ncut,
        degenerate: cut.degenerate,
        trace: cut.trace,
        crf_applied,
    })
}

fn load_grid(path: &Path, manifest: &DatasetManifest, kind: FeatureKind) -> Result<FeatureGrid> {
    let array = read_array(path)?;
    let (rows, cols) = match array.shape.as_slice() {
        [r, c, _] => (*r, *c),
        other => {
            return Err(Error::shape(format!(
                "{}: expected (rows, cols, channels), got {other:?}",
                path.display()
            )))
        }
    };
    FeatureGrid::from_array(array, manifest.config.geometry(rows, cols), kind)
}

fn process_frame(key: &FrameKey, entry: &FrameEntry, manifest: &DatasetManifest, cfg: &RunConfig, masks_dir: &Path) -> Result<FrameOutcome> {
    let app = load_grid(&entry.appearance, manifest, FeatureKind::Appearance)?;
    let flow = load_grid(&entry.flow, manifest, FeatureKind::Flow)?;
    let image = match (&entry.image, cfg.crf_enabled) {
        (Some(p), true) => Some(read_rgb(p)?),
        (None, true) => {
            log::warn!("{key}: no RGB frame, skipping CRF");
            None
        }
        _ => None,
    };
    let out = segment_frame(&app, &flow, image.as_ref(), cfg)?;
    write_mask(key.path_in(masks_dir, "png"), &out.mask)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentSummary {
    pub frames: usize,
    pub failures: Vec<(FrameKey, String)>,
}

impl SegmentSummary {
    pub fn succeeded(&self) -> usize {
        self.frames - self.failures.len()
    }
}

fn log_line(key: &FrameKey, result: &Result<FrameOutcome>) -> serde_json::Value {
    match result {
        Ok(o) => serde_json::json!({
            "sequence": key.sequence,
            "frame": key.frame,
            "status": "ok",
            "eigenvalue": o.eigenvalue,
            "residual": o.residual,
            "ncut": o.ncut,
            "degenerate": o.degenerate,
            "peak_index": o.trace.peak_index,
            "swapped": o.trace.swapped,
            "foreground_pixels": o.mask.area(),
            "crf": o.crf_applied,
        }),
        Err(e) => serde_json::json!({
            "sequence": key.sequence,
            "frame": key.frame,
            "status": "error",
            "error": e.to_string(),
        }),
    }
}

/// Segment every frame of `manifest` into `masks_dir`, appending one JSON
/// line per frame (in manifest order) to `log_path`. Frame failures are
/// logged and counted; the run continues.
pub fn segment_manifest(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    masks_dir: &Path,
    log_path: &Path,
) -> Result<SegmentSummary> {
    let frames: Vec<(FrameKey, &FrameEntry)> = manifest.frames().collect();
    let results = par::map(&frames, |(key, entry)| process_frame(key, entry, manifest, cfg, masks_dir));

    if let Some(parent) = log_path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut log = fs::File::create(log_path).map_err(|e| Error::io(log_path, e))?;
    let mut summary = SegmentSummary {
        frames: frames.len(),
        failures: Vec::new(),
    };
    for ((key, _), result) in frames.iter().zip(&results) {
        writeln!(log, "{}", log_line(key, result)).map_err(|e| Error::io(log_path, e))?;
        match result {
            Ok(o) => log::debug!("{key}: ncut {:?}, {} fg pixels", o.ncut, o.mask.area()),
            Err(e) => {
                log::error!("{key}: {e}");
                summary.failures.push((key.clone(), e.to_string()));
            }
        }
    }
    Ok(summary)
}

/// `segment`: masks under `<output>/masks`, plus `log.jsonl` and `config.json`.
pub fn segment_dataset(cfg: &RunConfig) -> Result<SegmentSummary> {
    cfg.validate()?;
    let manifest = load_manifest(&cfg.dataset)?;
    cfg.write_snapshot(&cfg.output)?;
    segment_manifest(&manifest, cfg, &cfg.output.join("masks"), &cfg.output.join("log.jsonl"))
}

/// `selftrain`: graph-cut masks become round 0, then up to
/// `cfg.selftrain.rounds` probe rounds (early stop on convergence).
pub fn run_selftrain(cfg: &RunConfig) -> Result<Vec<RoundState>> {
    cfg.validate()?;
    let manifest = load_manifest(&cfg.dataset)?;
    let run_dir = &cfg.output;
    cfg.write_snapshot(run_dir)?;
    let summary = segment_manifest(
        &manifest,
        cfg,
        &round_dir(run_dir, 0).join("masks"),
        &run_dir.join("log.jsonl"),
    )?;
    if !summary.failures.is_empty() {
        return Err(Error::Round(format!(
            "graph-cut failed on {} frame(s); round 0 is incomplete",
            summary.failures.len()
        )));
    }
    let st = &cfg.selftrain;
    let mut states = vec![init_round_zero(run_dir, &manifest, st.seed)?];
    for _ in 0..st.rounds {
        let next = run_round(states.last().expect("nonempty"), &manifest, run_dir, st)?;
        let converged = next.changed_fraction.is_some_and(|c| c < st.early_stop);
        if let Some(m) = &next.metrics {
            log::info!("round {}: J {:.4}", next.round, m.dataset_j);
        }
        states.push(next);
        if converged {
            log::info!("masks stopped changing; stopping early");
            break;
        }
    }
    Ok(states)
}

/// Latest `round_<t>` under `run_dir` that has a masks directory.
pub fn latest_round(run_dir: &Path) -> Result<usize> {
    sorted_subdirs(run_dir)?
        .iter()
        .filter_map(|d| d.strip_prefix("round_")?.parse::<usize>().ok())
        .filter(|&t| round_dir(run_dir, t).join("masks").is_dir())
        .max()
        .ok_or_else(|| Error::Round(format!("no rounds under {}", run_dir.display())))
}

/// Adopt externally trained predictions for the latest round as the next one.
pub fn run_external_step(cfg: &RunConfig) -> Result<RoundState> {
    cfg.validate()?;
    let manifest = load_manifest(&cfg.dataset)?;
    let t = latest_round(&cfg.output)?;
    let state = load_round_state(&cfg.output, t, &manifest, cfg.selftrain.seed)?;
    external_trainer_exchange(&state, &manifest, &cfg.output)
}

/// Continue training from the latest existing round for `cfg.selftrain.rounds` more rounds.
pub fn continue_selftrain(cfg: &RunConfig) -> Result<Vec<RoundState>> {
    cfg.validate()?;
    let manifest = load_manifest(&cfg.dataset)?;
    let t = latest_round(&cfg.output)?;
    let mut states = vec![load_round_state(&cfg.output, t, &manifest, cfg.selftrain.seed)?];
    for _ in 0..cfg.selftrain.rounds {
        let next = run_round(states.last().expect("nonempty"), &manifest, &cfg.output, &cfg.selftrain)?;
        states.push(next);
    }
    Ok(states)
}

fn mask_keys(dir: &Path) -> Result<Vec<FrameKey>> {
    let mut keys = Vec::new();
    for seq in sorted_subdirs(dir)? {
        for stem in sorted_stems(&dir.join(&seq), "png")? {
            keys.push(FrameKey::new(seq.clone(), stem));
        }
    }
    Ok(keys)
}

/// Majority-vote mask trees (`<dir>/<seq>/<frame>.png`) into `out`.
pub fn ensemble_dirs(inputs: &[PathBuf], out: &Path) -> Result<usize> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Argument("no ensemble inputs".into()))?;
    let keys = mask_keys(first)?;
    let mut missing = BTreeMap::<String, Vec<String>>::new();
    for dir in &inputs[1..] {
        for k in &keys {
            if !k.path_in(dir, "png").is_file() {
                missing.entry(dir.display().to_string()).or_default().push(k.to_string());
            }
        }
    }
    if !missing.is_empty() {
        let detail: Vec<String> = missing.iter().map(|(d, ks)| format!("{d}: {}", ks.join(", "))).collect();
        return Err(Error::Argument(format!("ensemble inputs disagree: {}", detail.join("; "))));
    }
    par::map(&keys, |k| -> Result<()> {
        let masks = inputs
            .iter()
            .map(|d| read_mask(k.path_in(d, "png"), MaskSource::Graphcut))
            .collect::<Result<Vec<_>>>()?;
        write_mask(k.path_in(out, "png"), &ensemble_vote(&masks)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(keys.len())
}
