//! Binary fully connected CRF with Gaussian pairwise kernels and Potts
//! compatibility, solved by mean-field iterations.
//!
//! Pairwise kernel between pixels i != j:
//!
//! ```text
//! k(i, j) = w_app    * exp(-|p_i - p_j|^2 / 2θα^2 - |I_i - I_j|^2 / 2θβ^2)
//!         + w_smooth * exp(-|p_i - p_j|^2 / 2θγ^2)
//! ```
//!
//! Small images use exact O(N²) message passing. Larger images use a
//! permutohedral lattice for the bilateral term (scale-calibrated against
//! exact sums on a sample of pixels) and a separable convolution for the
//! spatial term.

use serde::{Deserialize, Serialize};

use super::permutohedral::PermutohedralLattice;
use crate::error::{Error, Result};
use crate::par;
use crate::tensor_io::{MaskSource, PixelMask, RgbFrame};

/// Images with at most this many pixels use exact message passing in `Auto` mode.
pub const EXACT_MAX_PIXELS: usize = 64 * 64;
const CALIBRATION_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfParams {
    pub iterations: usize,
    pub w_appearance: f64,
    pub w_smoothness: f64,
    pub theta_alpha: f64,
    pub theta_beta: f64,
    pub theta_gamma: f64,
    /// Unary foreground probability where the input mask is 1 (and 1 - p elsewhere).
    pub unary_confidence: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            iterations: 10,
            w_appearance: 10.0,
            w_smoothness: 3.0,
            theta_alpha: 60.0,
            theta_beta: 13.0,
            theta_gamma: 3.0,
            unary_confidence: 0.9,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("CRF needs at least one iteration".into()));
        }
        if self.w_appearance < 0.0 || self.w_smoothness < 0.0 {
            return Err(Error::Config("CRF kernel weights must be non-negative".into()));
        }
        if !(self.theta_alpha > 0.0 && self.theta_beta > 0.0 && self.theta_gamma > 0.0) {
            return Err(Error::Config("CRF kernel widths must be positive".into()));
        }
        if !(self.unary_confidence > 0.5 && self.unary_confidence < 1.0) {
            return Err(Error::Config(format!(
                "unary confidence {} must lie in (0.5, 1)",
                self.unary_confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseMode {
    #[default]
    Auto,
    Exact,
    Approximate,
}

struct Pixels<'a> {
    width: usize,
    image: &'a RgbFrame,
}

impl Pixels<'_> {
    fn pos(&self, i: usize) -> (f64, f64) {
        ((i % self.width) as f64, (i / self.width) as f64)
    }

    fn color(&self, i: usize) -> [f64; 3] {
        let p = self.image.pixel(i);
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }
}

/// The dense kernel factored into lookup tables: Gaussians of the pixel
/// offset `(|dx|, |dy|)` and of the integer squared colour distance.
struct ExactKernel {
    height: usize,
    width: usize,
    appearance_spatial: Vec<f64>,
    smoothness_spatial: Vec<f64>,
    colour: Vec<f64>,
    pixels: Vec<[i32; 3]>,
}

const MAX_COLOUR_DIST2: usize = 3 * 255 * 255;

impl ExactKernel {
    fn new(params: &CrfParams, image: &RgbFrame) -> Self {
        let (height, width) = (image.height, image.width);
        let offsets = |theta: f64, weight: f64| -> Vec<f64> {
            (0..height * width)
                .map(|k| {
                    let (dx, dy) = ((k % width) as f64, (k / width) as f64);
                    weight * (-(dx * dx + dy * dy) / (2.0 * theta * theta)).exp()
                })
                .collect()
        };
        let tb = 2.0 * params.theta_beta.powi(2);
        Self {
            height,
            width,
            appearance_spatial: offsets(params.theta_alpha, params.w_appearance),
            smoothness_spatial: offsets(params.theta_gamma, params.w_smoothness),
            colour: (0..=MAX_COLOUR_DIST2).map(|d| (-(d as f64) / tb).exp()).collect(),
            pixels: (0..height * width)
                .map(|i| image.pixel(i).map(i32::from))
                .collect(),
        }
    }

    /// `(Σ_{j≠i} k(i,j) Q_j(0), Σ_{j≠i} k(i,j) Q_j(1))` for every pixel.
    fn messages(&self, q1: &[f64]) -> Vec<(f64, f64)> {
        let (h, w) = (self.height, self.width);
        par::map_range(h * w, |i| {
            let (xi, yi) = (i % w, i / w);
            let ci = self.pixels[i];
            let mut m0 = 0.0;
            let mut m1 = 0.0;
            for yj in 0..h {
                let row = yi.abs_diff(yj) * w;
                let app = &self.appearance_spatial[row..row + w];
                let smooth = &self.smoothness_spatial[row..row + w];
                let base = yj * w;
                for xj in 0..w {
                    let j = base + xj;
                    if j == i {
                        continue;
                    }
                    let dx = xi.abs_diff(xj);
                    let cj = self.pixels[j];
                    let dc = (ci[0] - cj[0]).pow(2) + (ci[1] - cj[1]).pow(2) + (ci[2] - cj[2]).pow(2);
                    let k = app[dx] * self.colour[dc as usize] + smooth[dx];
                    m0 += k * (1.0 - q1[j]);
                    m1 += k * q1[j];
                }
            }
            (m0, m1)
        })
    }
}

struct ApproxPairwise {
    lattice: PermutohedralLattice,
    /// Multiplies the lattice output so it matches exact bilateral sums.
    lattice_scale: f64,
    spatial_taps: Vec<f64>,
}

impl ApproxPairwise {
    fn new(px: &Pixels, params: &CrfParams, height: usize) -> Self {
        let n = px.image.height * px.image.width;
        let mut feats = Vec::with_capacity(n * 5);
        for i in 0..n {
            let (x, y) = px.pos(i);
            let c = px.color(i);
            feats.extend_from_slice(&[
                x / params.theta_alpha,
                y / params.theta_alpha,
                c[0] / params.theta_beta,
                c[1] / params.theta_beta,
                c[2] / params.theta_beta,
            ]);
        }
        let lattice = PermutohedralLattice::new(&feats, 5);

        // calibrate the lattice's global gain on a deterministic pixel sample
        let filtered_ones = lattice.filter(&vec![1.0; n], 1);
        let stride = (n / CALIBRATION_SAMPLES).max(1);
        let samples: Vec<usize> = (0..n).step_by(stride).collect();
        let exact: f64 = par::map(&samples, |&i| {
            (0..n)
                .map(|j| {
                    let (xi, yi) = px.pos(i);
                    let (xj, yj) = px.pos(j);
                    let dp = (xi - xj).powi(2) + (yi - yj).powi(2);
                    let dc: f64 = px
                        .color(i)
                        .iter()
                        .zip(&px.color(j))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    (-dp / (2.0 * params.theta_alpha.powi(2)) - dc / (2.0 * params.theta_beta.powi(2))).exp()
                })
                .sum::<f64>()
        })
        .into_iter()
        .sum();
        let approx: f64 = samples.iter().map(|&i| filtered_ones[i]).sum();
        let lattice_scale = if approx > 0.0 { exact / approx } else { 1.0 };

        let radius = ((4.0 * params.theta_gamma).ceil() as usize).min(height.max(px.width));
        let spatial_taps = (0..=radius)
            .map(|r| (-((r * r) as f64) / (2.0 * params.theta_gamma.powi(2))).exp())
            .collect();
        Self {
            lattice,
            lattice_scale,
            spatial_taps,
        }
    }

    fn separable(&self, input: &[f64], height: usize, width: usize) -> Vec<f64> {
        let taps = &self.spatial_taps;
        let r = taps.len() as isize - 1;
        let mut tmp = vec![0.0; input.len()];
        par::for_each_row(&mut tmp, width, |y, row| {
            for (x, out) in row.iter_mut().enumerate() {
                let lo = (x as isize - r).max(0) as usize;
                let hi = (x as isize + r).min(width as isize - 1) as usize;
                *out = (lo..=hi)
                    .map(|xx| taps[xx.abs_diff(x)] * input[y * width + xx])
                    .sum();
            }
        });
        let mut out = vec![0.0; input.len()];
        par::for_each_row(&mut out, width, |y, row| {
            let lo = (y as isize - r).max(0) as usize;
            let hi = (y as isize + r).min(height as isize - 1) as usize;
            for (x, o) in row.iter_mut().enumerate() {
                *o = (lo..=hi).map(|yy| taps[yy.abs_diff(y)] * tmp[yy * width + x]).sum();
            }
        });
        out
    }

    fn messages(&self, params: &CrfParams, q1: &[f64], height: usize, width: usize) -> Vec<(f64, f64)> {
        let n = q1.len();
        let q0: Vec<f64> = q1.iter().map(|q| 1.0 - q).collect();
        let mut interleaved = Vec::with_capacity(2 * n);
        for i in 0..n {
            interleaved.push(q0[i]);
            interleaved.push(q1[i]);
        }
        let bilateral = self.lattice.filter(&interleaved, 2);
        let s0 = self.separable(&q0, height, width);
        let s1 = self.separable(q1, height, width);
        (0..n)
            .map(|i| {
                // kernel value at zero distance is 1 for both terms; drop the self term
                let b0 = (bilateral[2 * i] * self.lattice_scale - q0[i]).max(0.0);
                let b1 = (bilateral[2 * i + 1] * self.lattice_scale - q1[i]).max(0.0);
                (
                    params.w_appearance * b0 + params.w_smoothness * (s0[i] - q0[i]),
                    params.w_appearance * b1 + params.w_smoothness * (s1[i] - q1[i]),
                )
            })
            .collect()
    }
}

enum Pairwise {
    Exact(ExactKernel),
    Approximate(ApproxPairwise),
}

/// Foreground marginals `Q_i(1)` after `params.iterations` mean-field updates.
pub fn crf_marginals(
    mask: &PixelMask,
    image: &RgbFrame,
    params: &CrfParams,
    mode: PairwiseMode,
) -> Result<Vec<f64>> {
    params.validate()?;
    if mask.height != image.height || mask.width != image.width {
        return Err(Error::shape(format!(
            "mask {}x{} vs image {}x{}",
            mask.height, mask.width, image.height, image.width
        )));
    }
    let n = mask.height * mask.width;
    let p = params.unary_confidence;
    let unary1: Vec<f64> = mask.data.iter().map(|&m| -(if m == 1 { p } else { 1.0 - p }).ln()).collect();
    let unary0: Vec<f64> = mask.data.iter().map(|&m| -(if m == 1 { 1.0 - p } else { p }).ln()).collect();
    let mut q1: Vec<f64> = mask.data.iter().map(|&m| if m == 1 { p } else { 1.0 - p }).collect();

    let px = Pixels {
        width: mask.width,
        image,
    };
    let exact = match mode {
        PairwiseMode::Exact => true,
        PairwiseMode::Approximate => false,
        PairwiseMode::Auto => n <= EXACT_MAX_PIXELS,
    };
    let pairwise = if exact {
        Pairwise::Exact(ExactKernel::new(params, image))
    } else {
        Pairwise::Approximate(ApproxPairwise::new(&px, params, mask.height))
    };

    for _ in 0..params.iterations {
        let messages = match &pairwise {
            Pairwise::Exact(k) => k.messages(&q1),
            Pairwise::Approximate(a) => a.messages(params, &q1, mask.height, mask.width),
        };
        // Potts: label l pays for the kernel mass currently on the other label
        for i in 0..n {
            let (m0, m1) = messages[i];
            let e1 = unary1[i] + m0;
            let e0 = unary0[i] + m1;
            q1[i] = 1.0 / (1.0 + (e1 - e0).exp());
        }
    }
    Ok(q1)
}

/// Refine a binary mask; returns the per-pixel argmax labelling.
pub fn crf_refine(mask: &PixelMask, image: &RgbFrame, params: &CrfParams) -> Result<PixelMask> {
    crf_refine_with(mask, image, params, PairwiseMode::Auto)
}

pub fn crf_refine_with(
    mask: &PixelMask,
    image: &RgbFrame,
    params: &CrfParams,
    mode: PairwiseMode,
) -> Result<PixelMask> {
    let area = mask.area();
    if area == 0 || area == mask.data.len() {
        params.validate()?;
        return Ok(mask.clone().with_source(MaskSource::Crf));
    }
    let q1 = crf_marginals(mask, image, params, mode)?;
    let data = q1.iter().map(|&q| u8::from(q > 0.5)).collect();
    PixelMask::new(mask.height, mask.width, data, MaskSource::Crf)
}
