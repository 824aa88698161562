//! Second-smallest eigenpair of `(D - W) y = λ D y`.
//!
//! Works on the symmetric normalized Laplacian `L = I - D^{-1/2} W D^{-1/2}`
//! with `z = D^{1/2} y`. The trivial eigenvector `z0 ∝ D^{1/2} 1` (λ = 0) is
//! projected out of every Krylov vector, so the smallest Ritz pair of the
//! deflated operator is the pair we want. Lanczos runs with full
//! reorthogonalization and explicit restarts from the current Ritz vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tridiag::eigh_tridiagonal;
use crate::affinity::{AffinityGraph, Weight};
use crate::error::{Error, Result};

const START_SEED: u64 = 0x6e63_7574;
const CHECK_EVERY: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSolverOptions {
    /// Relative residual target `‖(D-W)y - λDy‖ / ‖Dy‖`.
    pub tol: f64,
    /// Matrix-vector product budget; `None` means `10 n`.
    pub max_matvecs: Option<usize>,
    /// Largest Krylov basis kept before restarting.
    pub krylov_dim: usize,
}

impl Default for EigenSolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_matvecs: None,
            krylov_dim: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondEigenpair {
    pub eigenvalue: f64,
    /// D-normalized (`yᵀ D y = 1`), sign fixed so the largest-magnitude entry is positive.
    pub eigenvector: Vec<f64>,
    pub residual: f64,
    pub matvecs: usize,
}

struct NormalizedLaplacian<'a, W: Weight> {
    graph: &'a AffinityGraph<W>,
    inv_sqrt_deg: Vec<f64>,
    trivial: Vec<f64>,
    scratch_in: Vec<f64>,
    scratch_out: Vec<f64>,
    matvecs: usize,
}

impl<'a, W: Weight> NormalizedLaplacian<'a, W> {
    fn new(graph: &'a AffinityGraph<W>) -> Result<Self> {
        let degrees = graph.degrees();
        if let Some(i) = degrees.iter().position(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::Numerical(format!(
                "node {i} has degree {}; the generalized problem needs positive degrees",
                degrees[i]
            )));
        }
        let sqrt_deg: Vec<f64> = degrees.iter().map(|d| d.sqrt()).collect();
        let norm = norm(&sqrt_deg);
        let trivial = sqrt_deg.iter().map(|s| s / norm).collect();
        let n = graph.n();
        Ok(Self {
            graph,
            inv_sqrt_deg: sqrt_deg.iter().map(|s| 1.0 / s).collect(),
            trivial,
            scratch_in: vec![0.0; n],
            scratch_out: vec![0.0; n],
            matvecs: 0,
        })
    }

    fn apply(&mut self, v: &[f64], out: &mut [f64]) {
        for ((x, vi), s) in self.scratch_in.iter_mut().zip(v).zip(&self.inv_sqrt_deg) {
            *x = vi * s;
        }
        self.graph.matvec(&self.scratch_in, &mut self.scratch_out);
        self.matvecs += 1;
        for (((o, vi), wi), s) in out.iter_mut().zip(v).zip(&self.scratch_out).zip(&self.inv_sqrt_deg) {
            *o = vi - s * wi;
        }
    }

    fn deflate(&self, w: &mut [f64]) {
        let c = dot(w, &self.trivial);
        axpy(-c, &self.trivial, w);
    }

    /// Back-transform `z` and measure the generalized residual in y-space.
    /// Returns `(λ, y, relative residual)`.
    fn generalized_residual(&mut self, z: &[f64]) -> (f64, Vec<f64>, f64) {
        let degrees = self.graph.degrees();
        let y: Vec<f64> = z.iter().zip(&self.inv_sqrt_deg).map(|(a, s)| a * s).collect();
        let mut wy = vec![0.0; y.len()];
        self.graph.matvec(&y, &mut wy);
        self.matvecs += 1;
        let dy: Vec<f64> = y.iter().zip(degrees).map(|(a, d)| a * d).collect();
        let y_dy = dot(&y, &dy);
        let y_ly = y_dy - dot(&y, &wy);
        let lambda = y_ly / y_dy;
        let r: Vec<f64> = dy
            .iter()
            .zip(&wy)
            .map(|(d, w)| d - w - lambda * d)
            .collect();
        let residual = norm(&r) / norm(&dy);
        (lambda, y, residual)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Make the largest-magnitude entry positive (first index wins ties).
pub(crate) fn fix_sign(y: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in y.iter().enumerate() {
        if v.abs() > y[best].abs() {
            best = i;
        }
    }
    if y.get(best).is_some_and(|v| *v < 0.0) {
        y.iter_mut().for_each(|v| *v = -*v);
    }
}

struct Candidate {
    lambda: f64,
    y: Vec<f64>,
    residual: f64,
}

pub fn solve_second_eigenpair<W: Weight>(graph: &AffinityGraph<W>, tol: f64) -> Result<SecondEigenpair> {
    solve_second_eigenpair_with(
        graph,
        &EigenSolverOptions {
            tol,
            ..Default::default()
        },
    )
}

pub fn solve_second_eigenpair_with<W: Weight>(
    graph: &AffinityGraph<W>,
    opts: &EigenSolverOptions,
) -> Result<SecondEigenpair> {
    let n = graph.n();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 nodes, got {n}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("eigensolver tolerance {} must be positive", opts.tol)));
    }
    let mut op = NormalizedLaplacian::new(graph)?;
    let budget = opts.max_matvecs.unwrap_or(10 * n).max(2);
    let kmax = (n - 1).min(opts.krylov_dim.max(2));
    // Ritz target in z-space; tightened when the y-space check disagrees.
    let mut target = (opts.tol * 1e-2).max(4.0 * f64::EPSILON);
    let breakdown = 1e-13;

    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut start: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    op.deflate(&mut start);
    if normalize(&mut start) == 0.0 {
        return Err(Error::Numerical("degenerate Lanczos start vector".into()));
    }

    let mut best: Option<Candidate> = None;
    let mut w = vec![0.0; n];

    'restart: loop {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alphas: Vec<f64> = Vec::with_capacity(kmax);
        let mut betas: Vec<f64> = Vec::with_capacity(kmax);

        for j in 0..kmax {
            op.apply(&basis[j], &mut w);
            let a = dot(&w, &basis[j]);
            alphas.push(a);
            axpy(-a, &basis[j], &mut w);
            if j > 0 {
                axpy(-betas[j - 1], &basis[j - 1], &mut w);
            }
            for _ in 0..2 {
                op.deflate(&mut w);
                for v in &basis {
                    let c = dot(&w, v);
                    axpy(-c, v, &mut w);
                }
            }
            let b = norm(&w);
            let m = j + 1;
            let exhausted = op.matvecs >= budget;
            let invariant = b <= breakdown;
            let last = m == kmax;

            if invariant || last || exhausted || m % CHECK_EVERY == 0 {
                let (_, vecs) = eigh_tridiagonal(&alphas, &betas)?;
                let estimate = b * vecs[(m - 1) * m].abs();
                if estimate <= target || invariant || last || exhausted {
                    let mut z = vec![0.0; n];
                    for (k, v) in basis.iter().enumerate() {
                        axpy(vecs[k * m], v, &mut z);
                    }
                    op.deflate(&mut z);
                    normalize(&mut z);
                    let (lambda, y, residual) = op.generalized_residual(&z);
                    log::trace!(
                        "lanczos m={m} matvecs={} estimate={estimate:.3e} residual={residual:.3e}",
                        op.matvecs
                    );
                    if best.as_ref().is_none_or(|c| residual < c.residual) {
                        best = Some(Candidate { lambda, y, residual });
                    }
                    let done = residual <= opts.tol && (estimate <= target || invariant || last);
                    if done || op.matvecs >= budget {
                        break 'restart;
                    }
                    if estimate <= target {
                        target = (estimate * 1e-2).max(f64::EPSILON);
                    }
                    if invariant || last {
                        start = z;
                        continue 'restart;
                    }
                }
            }
            if invariant {
                break;
            }
            let mut next = w.clone();
            next.iter_mut().for_each(|x| *x /= b);
            basis.push(next);
            betas.push(b);
        }
    }

    let best = best.expect("at least one Ritz pair is evaluated before exit");
    if best.residual > opts.tol {
        return Err(Error::Convergence {
            matvecs: op.matvecs,
            best_residual: best.residual,
        });
    }
    let mut y = best.y;
    fix_sign(&mut y);
    Ok(SecondEigenpair {
        eigenvalue: best.lambda,
        eigenvector: y,
        residual: best.residual,
        matvecs: op.matvecs,
    })
}
