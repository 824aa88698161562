//! Permutohedral lattice for fast high-dimensional Gaussian filtering
//! (splat / blur / slice), used for the bilateral CRF kernel on full-size frames.

use std::collections::HashMap;

pub struct PermutohedralLattice {
    dim: usize,
    points: usize,
    vertices: usize,
    /// Lattice vertex index per (point, simplex corner).
    offsets: Vec<usize>,
    barycentric: Vec<f64>,
    /// Per blur direction and vertex: the two neighbours (vertex index + 1, 0 = none).
    neighbors: Vec<(usize, usize)>,
}

impl PermutohedralLattice {
    /// `features` is `points x dim` row-major, already divided by the kernel
    /// standard deviations so the target kernel is `exp(-|f_i - f_j|^2 / 2)`.
    pub fn new(features: &[f64], dim: usize) -> Self {
        assert!(dim > 0);
        assert_eq!(features.len() % dim, 0);
        let points = features.len() / dim;
        let d = dim;
        let d1 = d + 1;

        let scale: Vec<f64> = (0..d)
            .map(|i| d1 as f64 * (2.0f64 / 3.0).sqrt() / (((i + 1) * (i + 2)) as f64).sqrt())
            .collect();
        let mut canonical = vec![0i32; d1 * d1];
        for i in 0..=d {
            for j in 0..=(d - i) {
                canonical[i * d1 + j] = i as i32;
            }
            for j in (d - i + 1)..=d {
                canonical[i * d1 + j] = i as i32 - d1 as i32;
            }
        }

        let mut table: HashMap<Vec<i32>, usize> = HashMap::new();
        let mut keys: Vec<Vec<i32>> = Vec::new();
        let mut offsets = vec![0usize; points * d1];
        let mut barycentric_out = vec![0.0; points * d1];

        let mut elevated = vec![0.0f64; d1];
        let mut rem0 = vec![0i32; d1];
        let mut rank = vec![0i32; d1];
        let mut bary = vec![0.0f64; d + 2];
        let mut key = vec![0i32; d];
        let down = 1.0 / d1 as f64;

        for k in 0..points {
            let f = &features[k * d..(k + 1) * d];
            let mut sm = 0.0;
            for i in (1..=d).rev() {
                let cf = f[i - 1] * scale[i - 1];
                elevated[i] = sm - i as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            let mut sum = 0i32;
            for i in 0..=d {
                let v = down * elevated[i];
                let up = v.ceil() * d1 as f64;
                let dn = v.floor() * d1 as f64;
                rem0[i] = if up - elevated[i] < elevated[i] - dn { up } else { dn } as i32;
                sum += rem0[i];
            }
            sum /= d1 as i32;

            rank.iter_mut().for_each(|r| *r = 0);
            for i in 0..d {
                let di = elevated[i] - rem0[i] as f64;
                for j in (i + 1)..=d {
                    if di < elevated[j] - rem0[j] as f64 {
                        rank[i] += 1;
                    } else {
                        rank[j] += 1;
                    }
                }
            }
            for i in 0..=d {
                rank[i] += sum;
                if rank[i] < 0 {
                    rank[i] += d1 as i32;
                    rem0[i] += d1 as i32;
                } else if rank[i] > d as i32 {
                    rank[i] -= d1 as i32;
                    rem0[i] -= d1 as i32;
                }
            }

            bary.iter_mut().for_each(|b| *b = 0.0);
            for i in 0..=d {
                let v = (elevated[i] - rem0[i] as f64) * down;
                let r = rank[i] as usize;
                bary[d - r] += v;
                bary[d - r + 1] -= v;
            }
            bary[0] += 1.0 + bary[d + 1];

            for remainder in 0..=d {
                for i in 0..d {
                    key[i] = rem0[i] + canonical[remainder * d1 + rank[i] as usize];
                }
                let next = keys.len();
                let idx = *table.entry(key.clone()).or_insert_with(|| {
                    keys.push(key.clone());
                    next
                });
                offsets[k * d1 + remainder] = idx;
                barycentric_out[k * d1 + remainder] = bary[remainder];
            }
        }

        let vertices = keys.len();
        let mut neighbors = vec![(0usize, 0usize); d1 * vertices];
        let mut n1 = vec![0i32; d];
        let mut n2 = vec![0i32; d];
        for j in 0..=d {
            for (i, key) in keys.iter().enumerate() {
                for k in 0..d {
                    n1[k] = key[k] - 1;
                    n2[k] = key[k] + 1;
                }
                if j < d {
                    n1[j] = key[j] + d as i32;
                    n2[j] = key[j] - d as i32;
                }
                let a = table.get(&n1).map_or(0, |&v| v + 1);
                let b = table.get(&n2).map_or(0, |&v| v + 1);
                neighbors[j * vertices + i] = (a, b);
            }
        }

        Self {
            dim,
            points,
            vertices,
            offsets,
            barycentric: barycentric_out,
            neighbors,
        }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Gaussian-filter `input` (`points x value_dim`). The result approximates
    /// `Σ_j k(f_i, f_j) v_j` up to a global scale factor.
    pub fn filter(&self, input: &[f64], value_dim: usize) -> Vec<f64> {
        assert_eq!(input.len(), self.points * value_dim);
        let d1 = self.dim + 1;
        let vd = value_dim;
        let mut values = vec![0.0; (self.vertices + 1) * vd];
        let mut scratch = vec![0.0; (self.vertices + 1) * vd];

        for i in 0..self.points {
            for j in 0..d1 {
                let o = (self.offsets[i * d1 + j] + 1) * vd;
                let w = self.barycentric[i * d1 + j];
                for k in 0..vd {
                    values[o + k] += w * input[i * vd + k];
                }
            }
        }

        for j in 0..d1 {
            for i in 0..self.vertices {
                let (n1, n2) = self.neighbors[j * self.vertices + i];
                let o = (i + 1) * vd;
                for k in 0..vd {
                    scratch[o + k] = values[o + k] + 0.5 * (values[n1 * vd + k] + values[n2 * vd + k]);
                }
            }
            std::mem::swap(&mut values, &mut scratch);
        }

        let alpha = 1.0 / (1.0 + 2f64.powi(-(self.dim as i32)));
        let mut out = vec![0.0; self.points * vd];
        for i in 0..self.points {
            for j in 0..d1 {
                let o = (self.offsets[i * d1 + j] + 1) * vd;
                let w = self.barycentric[i * d1 + j];
                for k in 0..vd {
                    out[i * vd + k] += w * values[o + k] * alpha;
                }
            }
        }
        out
    }
}
