//! Normalized-cut bipartition of an affinity graph.

mod lanczos;
mod tridiag;

use serde::{Deserialize, Serialize};

use crate::affinity::{AffinityGraph, Weight};
use crate::error::{Error, Result};

pub use lanczos::{solve_second_eigenpair, solve_second_eigenpair_with, EigenSolverOptions, SecondEigenpair};
pub use tridiag::eigh_tridiagonal;

/// Corner-occupancy bookkeeping used when picking the foreground side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicTrace {
    /// Node with the largest `|y|`.
    pub peak_index: usize,
    pub peak_on_high_side: bool,
    /// Number of image corners (0..=4) occupied by the high / low side.
    pub high_side_corners: usize,
    pub low_side_corners: usize,
    /// True when the corner rule overrode the peak proposal.
    pub swapped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenBipartition {
    pub eigenvalue: f64,
    pub eigenvector: Vec<f64>,
    pub mean: f64,
    /// 1 where `eigenvector[j] >= mean`.
    pub labels: Vec<u8>,
    pub degenerate: bool,
    pub foreground_is_high_side: bool,
    pub foreground: Vec<u8>,
    pub trace: HeuristicTrace,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcutValue(pub f64);

/// Split at the mean: label 1 for `y[j] >= mean`.
///
/// Returns `(mean, labels, degenerate)`; `degenerate` is set when every
/// component lands on the same side.
pub fn bipartition(y: &[f64]) -> Result<(f64, Vec<u8>, bool)> {
    if y.is_empty() {
        return Err(Error::Argument("cannot bipartition an empty vector".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let labels: Vec<u8> = y.iter().map(|&v| u8::from(v >= mean)).collect();
    let degenerate = labels.iter().all(|&l| l == labels[0]);
    Ok((mean, labels, degenerate))
}

/// Indices of the patches that make up each image corner block.
fn corner_blocks(rows: usize, cols: usize, block: usize) -> [Vec<usize>; 4] {
    let bh = block.clamp(1, rows.max(1));
    let bw = block.clamp(1, cols.max(1));
    let cells = |r0: usize, c0: usize| -> Vec<usize> {
        (r0..r0 + bh)
            .flat_map(|r| (c0..c0 + bw).map(move |c| r * cols + c))
            .collect()
    };
    [
        cells(0, 0),
        cells(0, cols - bw),
        cells(rows - bh, 0),
        cells(rows - bh, cols - bw),
    ]
}

/// Count the corners where `side` holds a strict majority of the corner block.
fn corners_occupied(labels: &[u8], side: u8, blocks: &[Vec<usize>; 4]) -> usize {
    blocks
        .iter()
        .filter(|cells| {
            let hits = cells.iter().filter(|&&i| labels[i] == side).count();
            2 * hits > cells.len()
        })
        .count()
}

/// Pick the foreground side: the side holding the largest `|y|` proposes,
/// and a side occupying two or more corners is vetoed in favour of the other.
///
/// Returns the per-node foreground indicator, whether the foreground is the
/// high (label 1) side, and the decision trace.
pub fn select_foreground(
    y: &[f64],
    labels: &[u8],
    rows: usize,
    cols: usize,
    corner_block: usize,
) -> Result<(Vec<u8>, bool, HeuristicTrace)> {
    if y.len() != labels.len() || y.len() != rows * cols || y.is_empty() {
        return Err(Error::shape(format!(
            "{} eigenvector entries, {} labels, grid {rows}x{cols}",
            y.len(),
            labels.len()
        )));
    }
    let mut peak = 0usize;
    for (i, v) in y.iter().enumerate() {
        if v.abs() > y[peak].abs() {
            peak = i;
        }
    }
    let blocks = corner_blocks(rows, cols, corner_block);
    let high_corners = corners_occupied(labels, 1, &blocks);
    let low_corners = corners_occupied(labels, 0, &blocks);

    let peak_high = labels[peak] == 1;
    let proposed_corners = if peak_high { high_corners } else { low_corners };
    let swapped = proposed_corners >= 2;
    let fg_high = peak_high != swapped;

    let foreground = labels
        .iter()
        .map(|&l| u8::from((l == 1) == fg_high))
        .collect();
    let trace = HeuristicTrace {
        peak_index: peak,
        peak_on_high_side: peak_high,
        high_side_corners: high_corners,
        low_side_corners: low_corners,
        swapped,
    };
    Ok((foreground, fg_high, trace))
}

/// `cut/assoc(P) + cut/assoc(Q)` with `assoc(A) = Σ_{a∈A} d_a`.
pub fn ncut_value<W: Weight>(graph: &AffinityGraph<W>, labels: &[u8]) -> Result<NcutValue> {
    let n = graph.n();
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} nodes", labels.len())));
    }
    let p_count = labels.iter().filter(|&&l| l == 1).count();
    if p_count == 0 || p_count == n {
        return Err(Error::DegeneratePartition(format!(
            "one side is empty ({p_count} of {n} nodes labelled 1)"
        )));
    }
    let mut cut = 0.0;
    let mut assoc_p = 0.0;
    let mut assoc_q = 0.0;
    for i in 0..n {
        let row = graph.row(i);
        let d = graph.degrees()[i];
        if labels[i] == 1 {
            assoc_p += d;
            cut += labels
                .iter()
                .zip(row)
                .filter(|(&l, _)| l == 0)
                .map(|(_, w)| w.to_f64())
                .sum::<f64>();
        } else {
            assoc_q += d;
        }
    }
    Ok(NcutValue(cut / assoc_p + cut / assoc_q))
}

/// Options for the full graph-cut step on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub eig_tol: f64,
    pub corner_block: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            eig_tol: 1e-8,
            corner_block: 1,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eig_tol > 0.0) {
            return Err(Error::Config(format!("eig_tol {} must be positive", self.eig_tol)));
        }
        if self.corner_block == 0 {
            return Err(Error::Config("corner_block must be at least 1".into()));
        }
        Ok(())
    }
}

/// Solve, split at the mean, and pick the foreground side.
pub fn graph_cut<W: Weight>(
    graph: &AffinityGraph<W>,
    rows: usize,
    cols: usize,
    cfg: &SpectralConfig,
) -> Result<EigenBipartition> {
    let pair = solve_second_eigenpair(graph, cfg.eig_tol)?;
    let (mean, labels, degenerate) = bipartition(&pair.eigenvector)?;
    let (foreground, fg_high, trace) =
        select_foreground(&pair.eigenvector, &labels, rows, cols, cfg.corner_block)?;
    Ok(EigenBipartition {
        eigenvalue: pair.eigenvalue,
        eigenvector: pair.eigenvector,
        mean,
        labels,
        degenerate,
        foreground_is_high_side: fg_high,
        foreground,
        trace,
        residual: pair.residual,
    })
}
