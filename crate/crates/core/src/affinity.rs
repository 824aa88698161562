//! Fully connected patch graph built from appearance and flow similarities.
//!
//! Edge weights are the α-blend of two cosine similarities, snapped to
//! `{ε, 1}` by a threshold τ. The matrix is stored dense.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor_io::{FeatureGrid, FeatureKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffinityConfig {
    pub alpha: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub self_loops: bool,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            tau: 0.25,
            epsilon: 1e-5,
            self_loops: true,
        }
    }
}

impl AffinityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} not in [0, 1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} not in [0, 1]", self.tau)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if self.tau > 0.0 && self.epsilon >= self.tau {
            return Err(Error::Config(format!(
                "epsilon {} must be below tau {}",
                self.epsilon, self.tau
            )));
        }
        Ok(())
    }
}

/// Storage type of the dense weight matrix.
pub trait Weight: Copy + Send + Sync + PartialEq + std::fmt::Debug + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Weight for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Weight for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Symmetric dense `n x n` weight matrix with its degree vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph<W: Weight = f32> {
    n: usize,
    weights: Vec<W>,
    degrees: Vec<f64>,
}

impl<W: Weight> AffinityGraph<W> {
    /// Wrap an explicit weight matrix. Fails if it is not square and exactly symmetric.
    pub fn from_weights(n: usize, weights: Vec<W>) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::shape(format!(
                "{n}-node graph needs {} weights, got {}",
                n * n,
                weights.len()
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if weights[i * n + j] != weights[j * n + i] {
                    return Err(Error::Argument(format!("weights not symmetric at ({i}, {j})")));
                }
            }
        }
        let degrees = compute_degrees(n, &weights);
        Ok(Self { n, weights, degrees })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[W] {
        &self.weights
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn row(&self, i: usize) -> &[W] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j].to_f64()
    }

    /// `out = W x`.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        par::for_each_indexed(out, |i, o| {
            *o = self
                .row(i)
                .iter()
                .zip(x)
                .map(|(w, v)| w.to_f64() * v)
                .sum();
        });
    }
}

fn compute_degrees<W: Weight>(n: usize, weights: &[W]) -> Vec<f64> {
    par::map_range(n, |i| {
        weights[i * n..(i + 1) * n].iter().map(|w| w.to_f64()).sum()
    })
}

fn norm(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

fn dot(x: &[f32], y: &[f32]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| (a as f64) * (b as f64)).sum()
}

fn cosine_with_norms(x: &[f32], y: &[f32], nx: f64, ny: f64) -> Option<f64> {
    if nx == 0.0 || ny == 0.0 {
        return None;
    }
    Some(dot(x, y) / (nx * ny))
}

/// `x·y / (‖x‖ ‖y‖)`, evaluated in f64.
pub fn cosine_similarity(x: &[f32], y: &[f32]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "cosine of {}-vector and {}-vector",
            x.len(),
            y.len()
        )));
    }
    cosine_with_norms(x, y, norm(x), norm(y)).ok_or(Error::DegenerateFeature)
}

fn blend(alpha: f64, app: Option<f64>, flow: Option<f64>) -> Option<f64> {
    match (alpha == 0.0, alpha == 1.0) {
        (true, _) => flow,
        (_, true) => app,
        _ => Some(alpha * app? + (1.0 - alpha) * flow?),
    }
}

/// `α·cos(app_i, app_j) + (1-α)·cos(flow_i, flow_j)`.
///
/// A term whose coefficient is zero is not evaluated, so a degenerate vector
/// in an unused modality is not an error.
pub fn combined_similarity(
    app_i: &[f32],
    app_j: &[f32],
    flow_i: &[f32],
    flow_j: &[f32],
    alpha: f64,
) -> Result<f64> {
    let app = (alpha != 0.0).then(|| cosine_similarity(app_i, app_j)).transpose()?;
    let flow = (alpha != 1.0).then(|| cosine_similarity(flow_i, flow_j)).transpose()?;
    Ok(blend(alpha, app, flow).expect("active terms evaluated above"))
}

/// Snap a similarity to `{ε, 1}`.
pub fn threshold(similarity: f64, cfg: &AffinityConfig) -> f64 {
    if similarity >= cfg.tau {
        1.0
    } else {
        cfg.epsilon
    }
}

/// Build the thresholded graph with `f32` weights.
pub fn build_graph(app: &FeatureGrid, flow: &FeatureGrid, cfg: &AffinityConfig) -> Result<AffinityGraph<f32>> {
    build_graph_with(app, flow, cfg)
}

pub fn build_graph_with<W: Weight>(
    app: &FeatureGrid,
    flow: &FeatureGrid,
    cfg: &AffinityConfig,
) -> Result<AffinityGraph<W>> {
    cfg.validate()?;
    if app.kind != FeatureKind::Appearance || flow.kind != FeatureKind::Flow {
        return Err(Error::shape(format!(
            "expected appearance and flow grids, got {:?} and {:?}",
            app.kind, flow.kind
        )));
    }
    if app.rows != flow.rows || app.cols != flow.cols {
        return Err(Error::shape(format!(
            "appearance grid {}x{} vs flow grid {}x{}",
            app.rows, app.cols, flow.rows, flow.cols
        )));
    }
    let n = app.len();
    let use_app = cfg.alpha != 0.0;
    let use_flow = cfg.alpha != 1.0;
    let app_norms: Vec<f64> = (0..n).map(|i| norm(app.patch(i))).collect();
    let flow_norms: Vec<f64> = (0..n).map(|i| norm(flow.patch(i))).collect();

    let degenerate = (0..n)
        .filter(|&i| (use_app && app_norms[i] == 0.0) || (use_flow && flow_norms[i] == 0.0))
        .count();
    if degenerate > 0 {
        log::warn!("{degenerate} patch(es) have zero-norm features; their edges get weight epsilon");
    }

    let one = W::from_f64(1.0);
    let eps = W::from_f64(cfg.epsilon);
    let diag = W::from_f64(if cfg.self_loops { 1.0 } else { 0.0 });
    let mut weights = vec![eps; n * n];

    par::for_each_row(&mut weights, n, |i, row| {
        row[i] = diag;
        for j in (i + 1)..n {
            let s_app = if use_app {
                cosine_with_norms(app.patch(i), app.patch(j), app_norms[i], app_norms[j])
            } else {
                None
            };
            let s_flow = if use_flow {
                cosine_with_norms(flow.patch(i), flow.patch(j), flow_norms[i], flow_norms[j])
            } else {
                None
            };
            row[j] = match blend(cfg.alpha, s_app, s_flow) {
                Some(s) if s >= cfg.tau => one,
                _ => eps,
            };
        }
    });
    for i in 0..n {
        for j in 0..i {
            weights[i * n + j] = weights[j * n + i];
        }
    }

    let degrees = compute_degrees(n, &weights);
    Ok(AffinityGraph { n, weights, degrees })
}
