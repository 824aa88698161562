//! Dataset directory layout:
//!
//! ```text
//! <dataset>/dataset.toml
//! <dataset>/feat_app/<sequence>/<frame>.npy    appearance features (required)
//! <dataset>/feat_flow/<sequence>/<frame>.npy   flow features (required)
//! <dataset>/gt/<sequence>/<frame>.{png,npy}    ground truth (optional, per frame)
//! <dataset>/frames/<sequence>/<frame>.{png,ppm} RGB frames (optional, needed for CRF)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::GridGeometry;

pub const CONFIG_FILE: &str = "dataset.toml";

const GT_EXTENSIONS: &[&str] = &["png", "npy"];
const FRAME_EXTENSIONS: &[&str] = &["png", "ppm", "pnm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AveragingMode {
    #[default]
    #[serde(alias = "seq", alias = "sequence")]
    SequenceAverage,
    #[serde(alias = "frame")]
    FrameAverage,
}

impl std::str::FromStr for AveragingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq" | "sequence" | "sequence_average" => Ok(AveragingMode::SequenceAverage),
            "frame" | "frame_average" => Ok(AveragingMode::FrameAverage),
            other => Err(Error::Config(format!("unknown averaging mode `{other}`"))),
        }
    }
}

/// Contents of `dataset.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub averaging_mode: AveragingMode,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    /// Working resolution the features were extracted at. When absent the
    /// resolution is taken to be exactly `rows * patch_size` by `cols * patch_size`.
    #[serde(default)]
    pub image_height: Option<usize>,
    #[serde(default)]
    pub image_width: Option<usize>,
}

fn default_patch_size() -> usize {
    8
}

impl DatasetConfig {
    pub fn geometry(&self, rows: usize, cols: usize) -> GridGeometry {
        GridGeometry {
            patch_size: self.patch_size,
            image_height: self.image_height.unwrap_or(rows * self.patch_size),
            image_width: self.image_width.unwrap_or(cols * self.patch_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameKey {
    pub sequence: String,
    pub frame: String,
}

impl FrameKey {
    pub fn new(sequence: impl Into<String>, frame: impl Into<String>) -> Self {
        Self {
            sequence: sequence.into(),
            frame: frame.into(),
        }
    }

    /// `<sequence>/<frame>.<ext>` below `root`.
    pub fn path_in(&self, root: &Path, ext: &str) -> PathBuf {
        root.join(&self.sequence).join(format!("{}.{ext}", self.frame))
    }
}

impl std::fmt::Display for FrameKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.sequence, self.frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub id: String,
    pub appearance: PathBuf,
    pub flow: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub image: Option<PathBuf>,
}

impl FrameEntry {
    pub fn evaluable(&self) -> bool {
        self.ground_truth.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub config: DatasetConfig,
    pub sequences: Vec<Sequence>,
}

impl DatasetManifest {
    pub fn averaging_mode(&self) -> AveragingMode {
        self.config.averaging_mode
    }

    pub fn frames(&self) -> impl Iterator<Item = (FrameKey, &FrameEntry)> {
        self.sequences.iter().flat_map(|s| {
            s.frames
                .iter()
                .map(move |f| (FrameKey::new(s.id.clone(), f.id.clone()), f))
        })
    }

    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    pub fn ground_truth_paths(&self) -> BTreeMap<FrameKey, PathBuf> {
        self.frames()
            .filter_map(|(k, f)| f.ground_truth.clone().map(|p| (k, p)))
            .collect()
    }
}

pub(crate) fn sorted_subdirs(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// File stems with the given extension, sorted lexicographically.
pub(crate) fn sorted_stems(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && super::extension(&path).as_deref() == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn first_existing(dir: &Path, stem: &str, extensions: &[&str]) -> Option<PathBuf> {
    extensions
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// Numeric frame names must share one width so lexicographic order is numeric order.
fn check_zero_padding(sequence: &str, frames: &[String]) -> Result<()> {
    let mut width = None;
    for frame in frames {
        if frame.is_empty() || !frame.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        match width {
            None => width = Some(frame.len()),
            Some(w) if w != frame.len() => {
                return Err(Error::Manifest(format!(
                    "sequence `{sequence}`: frame `{frame}` is not zero-padded to {w} digits"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn read_dataset_config(root: &Path) -> Result<DatasetConfig> {
    let path = root.join(CONFIG_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|_| Error::Manifest(format!("missing {}", path.display())))?;
    let config: DatasetConfig = toml::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    if config.patch_size == 0 {
        return Err(Error::Manifest("patch_size must be positive".into()));
    }
    Ok(config)
}

/// Scan a dataset directory.
pub fn load_manifest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Manifest(format!("{} is not a directory", root.display())));
    }
    let config = read_dataset_config(root)?;
    let app_root = root.join("feat_app");
    let flow_root = root.join("feat_flow");
    let gt_root = root.join("gt");
    let frames_root = root.join("frames");
    if !app_root.is_dir() {
        return Err(Error::Manifest(format!("missing {}", app_root.display())));
    }

    let mut sequences = Vec::new();
    for seq in sorted_subdirs(&app_root)? {
        let ids = sorted_stems(&app_root.join(&seq), "npy")?;
        check_zero_padding(&seq, &ids)?;
        let mut frames = Vec::with_capacity(ids.len());
        for id in ids {
            let flow = flow_root.join(&seq).join(format!("{id}.npy"));
            if !flow.is_file() {
                return Err(Error::Manifest(format!(
                    "frame {seq}/{id}: missing flow features {}",
                    flow.display()
                )));
            }
            frames.push(FrameEntry {
                appearance: app_root.join(&seq).join(format!("{id}.npy")),
                flow,
                ground_truth: first_existing(&gt_root.join(&seq), &id, GT_EXTENSIONS),
                image: first_existing(&frames_root.join(&seq), &id, FRAME_EXTENSIONS),
                id,
            });
        }
        if !frames.is_empty() {
            sequences.push(Sequence { id: seq, frames });
        }
    }
    if sequences.is_empty() {
        return Err(Error::Manifest(format!(
            "no sequences with features under {}",
            app_root.display()
        )));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        config,
        sequences,
    })
}
