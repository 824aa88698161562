//! Flow frame pairing and Middlebury colour-wheel rendering of flow fields.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor_io::{read_array, sorted_stems, sorted_subdirs, write_rgb, NpyArray, RgbFrame};

/// Segment lengths of the 55-bin wheel: red-yellow, yellow-green, green-cyan,
/// cyan-blue, blue-magenta, magenta-red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];
/// Added to the per-frame maximum radius in auto mode, as in the reference converter.
const AUTO_EPS: f64 = 1e-5;

/// Dense flow, `u` horizontal and `v` vertical displacement in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::shape(format!(
                "flow {height}x{width} with {} u and {} v values",
                u.len(),
                v.len()
            )));
        }
        Ok(Self { height, width, u, v })
    }

    /// From an `(H, W, 2)` float32 array.
    pub fn from_array(array: NpyArray) -> Result<Self> {
        let (shape, data) = array.into_f32()?;
        if shape.len() != 3 || shape[2] != 2 {
            return Err(Error::shape(format!("flow array must be (H, W, 2), got {shape:?}")));
        }
        let (u, v) = data.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
        Self::new(shape[0], shape[1], u, v)
    }

    pub fn to_array(&self) -> NpyArray {
        let data = self.u.iter().zip(&self.v).flat_map(|(&u, &v)| [u, v]).collect();
        NpyArray::f32(vec![self.height, self.width, 2], data).expect("length matches shape")
    }
}

/// `(f_i, f_{i+1})` for every frame but the last, which pairs backwards with its predecessor.
pub fn pair_frames<T: Clone>(frames: &[T]) -> Result<Vec<(T, T)>> {
    let n = frames.len();
    if n < 2 {
        return Err(Error::Pairing(n));
    }
    let mut pairs: Vec<(T, T)> = frames.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
    pairs.push((frames[n - 1].clone(), frames[n - 2].clone()));
    Ok(pairs)
}

/// The 55x3 Middlebury colour wheel.
pub fn colorwheel() -> Vec<[u8; 3]> {
    let ramp = |i: usize, n: usize| (255 * i / n) as u8;
    let mut wheel = Vec::with_capacity(SEGMENTS.iter().sum());
    let [ry, yg, gc, cb, bm, mr] = SEGMENTS;
    wheel.extend((0..ry).map(|i| [255, ramp(i, ry), 0]));
    wheel.extend((0..yg).map(|i| [255 - ramp(i, yg), 255, 0]));
    wheel.extend((0..gc).map(|i| [0, 255, ramp(i, gc)]));
    wheel.extend((0..cb).map(|i| [0, 255 - ramp(i, cb), 255]));
    wheel.extend((0..bm).map(|i| [ramp(i, bm), 0, 255]));
    wheel.extend((0..mr).map(|i| [255, 0, 255 - ramp(i, mr)]));
    wheel
}

/// Colour of a single flow vector already divided by the normalizing magnitude.
pub fn flow_color(u: f64, v: f64, wheel: &[[u8; 3]]) -> [u8; 3] {
    let ncols = wheel.len();
    let rad = (u * u + v * v).sqrt();
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (ncols - 1) as f64;
    let k0 = fk.floor() as usize;
    let k1 = if k0 + 1 == ncols { 0 } else { k0 + 1 };
    let f = fk - k0 as f64;
    let mut out = [0u8; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let c0 = wheel[k0][ch] as f64 / 255.0;
        let c1 = wheel[k1][ch] as f64 / 255.0;
        let mut col = (1.0 - f) * c0 + f * c1;
        if rad <= 1.0 {
            col = 1.0 - rad * (1.0 - col);
        } else {
            col *= 0.75;
        }
        *o = (255.0 * col).floor() as u8;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxMagnitude {
    /// Per-frame maximum radius (plus a small epsilon).
    Auto,
    Fixed(f64),
}

/// Render flow on the colour wheel; zero flow is white.
pub fn flow_to_rgb(flow: &FlowField, max_magnitude: MaxMagnitude) -> Result<RgbFrame> {
    let scale = match max_magnitude {
        MaxMagnitude::Fixed(m) if m > 0.0 && m.is_finite() => m,
        MaxMagnitude::Fixed(m) => {
            return Err(Error::Argument(format!("max magnitude {m} must be positive")))
        }
        MaxMagnitude::Auto => {
            let max_rad = flow
                .u
                .iter()
                .zip(&flow.v)
                .map(|(&u, &v)| ((u as f64).powi(2) + (v as f64).powi(2)).sqrt())
                .fold(0.0, f64::max);
            max_rad + AUTO_EPS
        }
    };
    let wheel = colorwheel();
    let mut data = vec![0u8; flow.height * flow.width * 3];
    par::for_each_row(&mut data, 3, |i, px| {
        let c = flow_color(flow.u[i] as f64 / scale, flow.v[i] as f64 / scale, &wheel);
        px.copy_from_slice(&c);
    });
    RgbFrame::new(flow.height, flow.width, data)
}

/// Flow arrays directly in `dir` or one level down, as relative stems.
fn flow_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = sorted_stems(dir, "npy")?
        .into_iter()
        .map(|s| PathBuf::from(format!("{s}.npy")))
        .collect();
    for sub in sorted_subdirs(dir)? {
        files.extend(
            sorted_stems(&dir.join(&sub), "npy")?
                .into_iter()
                .map(|s| Path::new(&sub).join(format!("{s}.npy"))),
        );
    }
    Ok(files)
}

/// Convert every `(H, W, 2)` array under `input` to a PNG under `output`,
/// mirroring the relative layout. Returns the number of files written.
pub fn flow2rgb_dir(input: &Path, output: &Path, max_magnitude: MaxMagnitude) -> Result<usize> {
    let files = flow_files(input)?;
    par::map(&files, |rel| -> Result<()> {
        let flow = FlowField::from_array(read_array(input.join(rel))?)?;
        let rgb = flow_to_rgb(&flow, max_magnitude)?;
        write_rgb(output.join(rel).with_extension("png"), &rgb)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(files.len())
}
