//! Feature grids, pixel masks and their on-disk representations.

mod manifest;
pub mod npy;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use manifest::{sorted_stems, sorted_subdirs};
pub use manifest::{load_manifest, AveragingMode, DatasetConfig, DatasetManifest, FrameEntry, FrameKey, Sequence};
pub use npy::{read_array, write_array, ArrayData, NpyArray};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Appearance,
    Flow,
}

/// Pixel geometry of a patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub patch_size: usize,
    pub image_height: usize,
    pub image_width: usize,
}

impl GridGeometry {
    pub fn rows(&self) -> usize {
        self.image_height.div_ceil(self.patch_size)
    }

    pub fn cols(&self) -> usize {
        self.image_width.div_ceil(self.patch_size)
    }
}

/// `rows x cols x channels` patch features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub geometry: GridGeometry,
    pub kind: FeatureKind,
}

impl FeatureGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        channels: usize,
        data: Vec<f32>,
        geometry: GridGeometry,
        kind: FeatureKind,
    ) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(Error::shape(format!(
                "feature grid {rows}x{cols}x{channels} needs {} values, got {}",
                rows * cols * channels,
                data.len()
            )));
        }
        if geometry.patch_size == 0 || geometry.rows() != rows || geometry.cols() != cols {
            return Err(Error::shape(format!(
                "grid {rows}x{cols} does not tile a {}x{} image with patch size {}",
                geometry.image_height, geometry.image_width, geometry.patch_size
            )));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            data,
            geometry,
            kind,
        })
    }

    /// Build a grid whose geometry is exactly `rows*patch x cols*patch`.
    pub fn with_patch_size(
        rows: usize,
        cols: usize,
        channels: usize,
        data: Vec<f32>,
        patch_size: usize,
        kind: FeatureKind,
    ) -> Result<Self> {
        let geometry = GridGeometry {
            patch_size,
            image_height: rows * patch_size,
            image_width: cols * patch_size,
        };
        Self::new(rows, cols, channels, data, geometry, kind)
    }

    pub fn from_array(array: NpyArray, geometry: GridGeometry, kind: FeatureKind) -> Result<Self> {
        let (shape, data) = array.into_f32()?;
        let [rows, cols, channels] = shape[..] else {
            return Err(Error::shape(format!(
                "feature arrays must be 3-d (rows, cols, channels), got {shape:?}"
            )));
        };
        Self::new(rows, cols, channels, data, geometry, kind)
    }

    pub fn to_array(&self) -> NpyArray {
        NpyArray {
            shape: vec![self.rows, self.cols, self.channels],
            data: ArrayData::F32(self.data.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch(&self, index: usize) -> &[f32] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }
}

pub fn read_feature_grid(
    path: impl AsRef<Path>,
    geometry: GridGeometry,
    kind: FeatureKind,
) -> Result<FeatureGrid> {
    FeatureGrid::from_array(read_array(path)?, geometry, kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Graphcut,
    Crf,
    Probe,
    Ensemble,
    GroundTruth,
    External,
}

/// Binary pixel mask, row-major, values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
    pub source: MaskSource,
}

impl PixelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>, source: MaskSource) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Argument(format!("mask value {bad} is not binary")));
        }
        Ok(Self {
            height,
            width,
            data,
            source,
        })
    }

    pub fn zeros(height: usize, width: usize, source: MaskSource) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
            source,
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn same_dims(&self, other: &PixelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn with_source(mut self, source: MaskSource) -> Self {
        self.source = source;
        self
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, height: usize, width: usize) -> PixelMask {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = ((y * self.height) / height.max(1)).min(self.height.saturating_sub(1));
            for x in 0..width {
                let sx = ((x * self.width) / width.max(1)).min(self.width.saturating_sub(1));
                data.push(self.get(sy, sx));
            }
        }
        PixelMask {
            height,
            width,
            data,
            source: self.source,
        }
    }

    pub fn from_array(array: NpyArray, source: MaskSource) -> Result<Self> {
        let (shape, data) = array.into_u8()?;
        let [height, width] = shape[..] else {
            return Err(Error::shape(format!("mask arrays must be 2-d, got {shape:?}")));
        };
        Self::new(height, width, data, source)
    }

    pub fn to_array(&self) -> NpyArray {
        NpyArray {
            shape: vec![self.height, self.width],
            data: ArrayData::U8(self.data.clone()),
        }
    }
}

/// Read a mask from `.npy` (uint8 {0,1}) or an 8-bit image (nonzero above 127 = foreground).
pub fn read_mask(path: impl AsRef<Path>, source: MaskSource) -> Result<PixelMask> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("npy") => PixelMask::from_array(read_array(path)?, source),
        _ => {
            let img = image::open(path).map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let luma = img.to_luma8();
            let (w, h) = luma.dimensions();
            let data = luma.into_raw().into_iter().map(|v| u8::from(v > 127)).collect();
            PixelMask::new(h as usize, w as usize, data, source)
        }
    }
}

/// Read a mask and reject anything that is not strictly binary (0/1 or 0/255).
pub fn read_mask_strict(path: impl AsRef<Path>, source: MaskSource) -> Result<PixelMask> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("npy") => PixelMask::from_array(read_array(path)?, source),
        _ => {
            let img = image::open(path).map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let luma = img.to_luma8();
            let (w, h) = luma.dimensions();
            let raw = luma.into_raw();
            if let Some(bad) = raw.iter().find(|&&v| v != 0 && v != 1 && v != 255) {
                return Err(Error::Argument(format!(
                    "{}: pixel value {bad} is not binary",
                    path.display()
                )));
            }
            let data = raw.into_iter().map(|v| u8::from(v != 0)).collect();
            PixelMask::new(h as usize, w as usize, data, source)
        }
    }
}

/// Write a mask as an 8-bit PNG (0 / 255) or `.npy` depending on the extension.
pub fn write_mask(path: impl AsRef<Path>, mask: &PixelMask) -> Result<()> {
    let path = path.as_ref();
    if extension(path).as_deref() == Some("npy") {
        return write_array(path, &mask.to_array());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let pixels: Vec<u8> = mask.data.iter().map(|&v| v * 255).collect();
    image::save_buffer_with_format(
        path,
        &pixels,
        mask.width as u32,
        mask.height as u32,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// 8-bit RGB frame, row-major interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbFrame {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "rgb frame {height}x{width} needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn pixel(&self, index: usize) -> [u8; 3] {
        let p = &self.data[index * 3..index * 3 + 3];
        [p[0], p[1], p[2]]
    }

    /// Bilinear resize (used when a frame is stored at a different resolution than the mask).
    pub fn resized(&self, height: usize, width: usize) -> RgbFrame {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("frame buffer length checked at construction");
        let out = image::imageops::resize(
            &img,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        RgbFrame {
            height,
            width,
            data: out.into_raw(),
        }
    }
}

/// Read an 8-bit PNG or binary PPM frame.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbFrame> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    RgbFrame::new(h as usize, w as usize, rgb.into_raw())
}

pub fn write_rgb(path: impl AsRef<Path>, frame: &RgbFrame) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer_with_format(
        path,
        &frame.data,
        frame.width as u32,
        frame.height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub(crate) fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}
