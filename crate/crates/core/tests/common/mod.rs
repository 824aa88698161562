//! Fixtures and independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use flowcut::affinity::{build_graph_with, cosine_similarity, AffinityConfig, AffinityGraph};
use flowcut::maskpipe::patch_to_pixel;
use flowcut::metrics::{f_beta, jaccard};
use flowcut::pipeline::RunConfig;
use flowcut::selftrain::{bce_loss, round_dir, sigmoid, LinearProbe, TrainingFrame};
use flowcut::tensor_io::{
    load_manifest, read_mask, write_array, write_mask, write_rgb, DatasetManifest, FeatureGrid, FeatureKind,
    GridGeometry, MaskSource, PixelMask, RgbFrame,
};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn geometry(rows: usize, cols: usize, patch: usize) -> GridGeometry {
    GridGeometry {
        patch_size: patch,
        image_height: rows * patch,
        image_width: cols * patch,
    }
}

pub fn grid(rows: usize, cols: usize, channels: usize, data: Vec<f32>, kind: FeatureKind) -> FeatureGrid {
    FeatureGrid::new(rows, cols, channels, data, geometry(rows, cols, 8), kind).unwrap()
}

pub fn random_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize, channels: usize, kind: FeatureKind) -> FeatureGrid {
    let data = (0..rows * cols * channels).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    grid(rows, cols, channels, data, kind)
}

/// Features drawn around `centers[label[i]]` with uniform noise of size `noise`.
pub fn clustered_data(rng: &mut ChaCha8Rng, labels: &[usize], centers: &[Vec<f32>], noise: f32) -> Vec<f32> {
    labels
        .iter()
        .flat_map(|&l| centers[l].iter().map(|&c| c + rng.random_range(-noise..=noise)).collect::<Vec<_>>())
        .collect()
}

/// Thresholded graph from clustered random features (2-4 latent groups).
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> AffinityGraph<f64> {
    let c = 6;
    let groups = rng.random_range(2..=4);
    let centers: Vec<Vec<f32>> = (0..groups)
        .map(|_| (0..c).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..groups)).collect();
    let noise = rng.random_range(0.2f32..0.9);
    let app = clustered_data(rng, &labels, &centers, noise);
    let flow = clustered_data(rng, &labels, &centers, noise);
    let app = grid(1, n, c, app, FeatureKind::Appearance);
    let flow = grid(1, n, c, flow, FeatureKind::Flow);
    let cfg = AffinityConfig {
        alpha: rng.random_range(0.0..=1.0),
        tau: rng.random_range(0.1..0.6),
        epsilon: 1e-5,
        self_loops: rng.random_bool(0.5),
    };
    build_graph_with::<f64>(&app, &flow, &cfg).unwrap()
}

/// Dense generalized eigen-solve of `(D - W) y = λ D y` through a full
/// symmetric eigendecomposition of `D^{-1/2} (D - W) D^{-1/2}`.
/// Returns all eigenvalues ascending and the second eigenvector (unit 2-norm).
pub fn dense_second_eigenpair(n: usize, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w[i * n + j]).sum()).collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let lap = if i == j { d[i] - w[i * n + j] } else { -w[i * n + j] };
            m[(i, j)] = lap / (d[i].sqrt() * d[j].sqrt());
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let z = eig.eigenvectors.column(order[1]);
    let y: Vec<f64> = (0..n).map(|i| z[i] / d[i].sqrt()).collect();
    (values, unit(&y))
}

pub fn unit(y: &[f64]) -> Vec<f64> {
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    y.iter().map(|v| v / norm).collect()
}

/// Max-norm distance between two vectors, minimized over a global sign.
pub fn sign_free_distance(a: &[f64], b: &[f64]) -> f64 {
    let plus = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let minus = a.iter().zip(b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
    plus.min(minus)
}

/// Ncut straight from its definition, with U(A, B) = Σ_{a∈A, b∈B} w(a, b).
pub fn ncut_oracle(n: usize, w: &[f64], labels: &[u8]) -> f64 {
    let u = |a: u8, b: Option<u8>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] == a && b.is_none_or(|b| labels[j] == b) {
                    s += w[i * n + j];
                }
            }
        }
        s
    };
    let cut = u(1, Some(0));
    cut / u(1, None) + cut / u(0, None)
}

/// Brute-force mean-field for the binary dense CRF: pairwise sums over all
/// `j != i` with an explicit 2x2 Potts matrix and a softmax update.
pub fn crf_oracle(
    mask: &PixelMask,
    img: &RgbFrame,
    iterations: usize,
    w_app: f64,
    w_sm: f64,
    theta: (f64, f64, f64),
    confidence: f64,
) -> Vec<f64> {
    let (h, w) = (mask.height, mask.width);
    let n = h * w;
    let (ta, tb, tg) = theta;
    let mut q: Vec<[f64; 2]> = mask
        .data
        .iter()
        .map(|&m| if m == 1 { [1.0 - confidence, confidence] } else { [confidence, 1.0 - confidence] })
        .collect();
    let unary: Vec<[f64; 2]> = q.iter().map(|p| [-p[0].ln(), -p[1].ln()]).collect();
    let potts = [[0.0, 1.0], [1.0, 0.0]];
    for _ in 0..iterations {
        let mut next = vec![[0.0; 2]; n];
        for i in 0..n {
            let (yi, xi) = ((i / w) as f64, (i % w) as f64);
            let ci = img.pixel(i);
            let mut energy = unary[i];
            for (j, qj) in q.iter().enumerate() {
                if j == i {
                    continue;
                }
                let (yj, xj) = ((j / w) as f64, (j % w) as f64);
                let cj = img.pixel(j);
                let dp = (xi - xj).powi(2) + (yi - yj).powi(2);
                let dc: f64 = (0..3).map(|k| (ci[k] as f64 - cj[k] as f64).powi(2)).sum();
                let k = w_app * (-dp / (2.0 * ta * ta) - dc / (2.0 * tb * tb)).exp()
                    + w_sm * (-dp / (2.0 * tg * tg)).exp();
                for l in 0..2 {
                    for lp in 0..2 {
                        energy[l] += potts[l][lp] * k * qj[lp];
                    }
                }
            }
            let m = energy[0].min(energy[1]);
            let e0 = (-(energy[0] - m)).exp();
            let e1 = (-(energy[1] - m)).exp();
            next[i] = [e0 / (e0 + e1), e1 / (e0 + e1)];
        }
        q = next;
    }
    q.iter().map(|p| p[1]).collect()
}

pub struct FrameSpec {
    pub app: FeatureGrid,
    pub flow: FeatureGrid,
    pub gt: Option<PixelMask>,
    pub image: Option<RgbFrame>,
}

/// Write a dataset directory in the layout `load_manifest` expects.
pub fn write_dataset(root: &Path, mode: &str, sequences: &[(&str, Vec<(&str, FrameSpec)>)]) {
    let patch = sequences[0].1[0].1.app.geometry.patch_size;
    fs::create_dir_all(root).unwrap();
    fs::write(
        root.join("dataset.toml"),
        format!("averaging_mode = \"{mode}\"\npatch_size = {patch}\n"),
    )
    .unwrap();
    for (seq, frames) in sequences {
        for (frame, spec) in frames {
            let app = root.join("feat_app").join(seq).join(format!("{frame}.npy"));
            let flow = root.join("feat_flow").join(seq).join(format!("{frame}.npy"));
            fs::create_dir_all(app.parent().unwrap()).unwrap();
            fs::create_dir_all(flow.parent().unwrap()).unwrap();
            write_array(&app, &spec.app.to_array()).unwrap();
            write_array(&flow, &spec.flow.to_array()).unwrap();
            if let Some(gt) = &spec.gt {
                write_mask(root.join("gt").join(seq).join(format!("{frame}.png")), gt).unwrap();
            }
            if let Some(img) = &spec.image {
                write_rgb(root.join("frames").join(seq).join(format!("{frame}.png")), img).unwrap();
            }
        }
    }
}

/// A centered rectangle of foreground patches on a `rows x cols` grid.
pub fn planted_labels(rows: usize, cols: usize) -> Vec<usize> {
    (0..rows * cols)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            usize::from(r >= rows / 4 && r < rows - rows / 4 && c >= cols / 4 && c < cols - cols / 4)
        })
        .collect()
}

/// Appearance/flow grids whose two clusters are nearly orthogonal, plus the
/// pixel-level ground truth of the foreground cluster.
pub fn planted_frame(rng: &mut ChaCha8Rng, rows: usize, cols: usize, patch: usize, channels: usize, noise: f32) -> FrameSpec {
    let labels = planted_labels(rows, cols);
    let mut bg = vec![0.0f32; channels];
    let mut fg = vec![0.0f32; channels];
    bg[0] = 1.0;
    fg[1] = 1.0;
    let centers = vec![bg, fg];
    let geo = geometry(rows, cols, patch);
    let app = FeatureGrid::new(rows, cols, channels, clustered_data(rng, &labels, &centers, noise), geo, FeatureKind::Appearance).unwrap();
    let flow = FeatureGrid::new(rows, cols, channels, clustered_data(rng, &labels, &centers, noise), geo, FeatureKind::Flow).unwrap();
    let (h, w) = (geo.image_height, geo.image_width);
    let gt_data = (0..h * w)
        .map(|i| labels[(i / w / patch) * cols + (i % w) / patch] as u8)
        .collect();
    let gt = PixelMask::new(h, w, gt_data, MaskSource::GroundTruth).unwrap();
    let image_data = gt.data.iter().flat_map(|&v| if v == 1 { [200u8, 60, 40] } else { [30, 90, 160] }).collect();
    FrameSpec {
        app,
        flow,
        gt: Some(gt),
        image: Some(RgbFrame::new(h, w, image_data).unwrap()),
    }
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push((p.strip_prefix(base).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

/// Smallest gap `λ2 - λ1` accepted by [`well_posed_graph`]. Below it the
/// second eigenvector is not unique up to sign and no oracle can pin it down.
pub const MIN_EIGENGAP: f64 = 1e-6;

/// A [`random_graph`] whose second eigenvalue is simple, together with the
/// dense oracle's eigenvalues and unit second eigenvector. Returns the number
/// of rejected draws as well.
pub fn well_posed_graph(rng: &mut ChaCha8Rng, n: usize) -> (AffinityGraph<f64>, Vec<f64>, Vec<f64>, usize) {
    let mut rejected = 0;
    loop {
        let g = random_graph(rng, n);
        let (values, y) = dense_second_eigenpair(n, g.weights());
        if values[2] - values[1] >= MIN_EIGENGAP {
            return (g, values, y, rejected);
        }
        rejected += 1;
    }
}

pub fn random_crf_instance(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (PixelMask, RgbFrame) {
    let mask = PixelMask::new(h, w, (0..h * w).map(|_| rng.random_range(0..2)).collect(), MaskSource::Graphcut).unwrap();
    let img = RgbFrame::new(h, w, (0..h * w * 3).map(|_| rng.random()).collect()).unwrap();
    (mask, img)
}

pub fn spectral_residual(g: &AffinityGraph<f64>, lambda: f64, y: &[f64]) -> f64 {
    let n = g.n();
    let d = g.degrees();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let wy: f64 = (0..n).map(|j| g.weight(i, j) * y[j]).sum();
        let r = d[i] * y[i] - wy - lambda * d[i] * y[i];
        num += r * r;
        den += (d[i] * y[i]).powi(2);
    }
    (num / den).sqrt()
}

/// 12-node graph with two planted communities of 4..=8 nodes: clustered
/// features, random α and τ, and enough noise that some within-community
/// edges drop to ε and some between-community edges reach 1.
pub fn planted_twelve_node_graph(rng: &mut ChaCha8Rng) -> AffinityGraph<f64> {
    use flowcut::affinity::{build_graph_with, AffinityConfig};
    use flowcut::tensor_io::FeatureKind;
    let n = 12;
    let c = 6;
    let k = rng.random_range(4..=8);
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i >= k)).collect();
    // scatter the communities over the index range
    for i in (1..n).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    let centers: Vec<Vec<f32>> = (0..2)
        .map(|_| (0..c).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let noise = rng.random_range(0.2f32..0.6);
    let app = clustered_data(rng, &labels, &centers, noise);
    let flow = clustered_data(rng, &labels, &centers, noise);
    let cfg = AffinityConfig {
        alpha: rng.random_range(0.0..=1.0),
        tau: rng.random_range(0.2..0.5),
        epsilon: 1e-5,
        self_loops: true,
    };
    build_graph_with::<f64>(
        &grid(1, n, c, app, FeatureKind::Appearance),
        &grid(1, n, c, flow, FeatureKind::Flow),
        &cfg,
    )
    .unwrap()
}

/// Pairwise weights straight from the definition: cosine per modality,
/// α-blend, then snap to {ε, 1}; the diagonal is 1 or 0.
pub fn affinity_oracle(app: &FeatureGrid, flow: &FeatureGrid, cfg: &AffinityConfig) -> Vec<f64> {
    let n = app.rows * app.cols;
    let cos = |g: &FeatureGrid, i: usize, j: usize| {
        let (a, b) = (g.patch(i), g.patch(j));
        let mut ab = 0.0;
        let mut aa = 0.0;
        let mut bb = 0.0;
        for k in 0..a.len() {
            let (x, y) = (a[k] as f64, b[k] as f64);
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        ab / (aa.sqrt() * bb.sqrt())
    };
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            w[i * n + j] = if i == j {
                if cfg.self_loops {
                    1.0
                } else {
                    0.0
                }
            } else {
                let a = cfg.alpha;
                let s = if a == 1.0 {
                    cos(app, i, j)
                } else if a == 0.0 {
                    cos(flow, i, j)
                } else {
                    a * cos(app, i, j) + (1.0 - a) * cos(flow, i, j)
                };
                if s >= cfg.tau {
                    1.0
                } else {
                    cfg.epsilon
                }
            };
        }
    }
    w
}

pub fn random_affinity_config(rng: &mut ChaCha8Rng) -> AffinityConfig {
    AffinityConfig {
        alpha: [0.0, 1.0, rng.random_range(0.0..1.0)][rng.random_range(0..3)],
        tau: rng.random_range(0.0..0.5),
        epsilon: 1e-5,
        self_loops: rng.random_bool(0.5),
    }
}

pub fn jaccard_oracle(a: &PixelMask, b: &PixelMask) -> f64 {
    let mut inter = 0;
    let mut union = 0;
    for y in 0..a.height {
        for x in 0..a.width {
            let (p, g) = (a.get(y, x) == 1, b.get(y, x) == 1);
            inter += usize::from(p && g);
            union += usize::from(p || g);
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn boundary_points(m: &PixelMask) -> Vec<(i64, i64)> {
    let mut pts = Vec::new();
    for y in 0..m.height as i64 {
        for x in 0..m.width as i64 {
            if m.get(y as usize, x as usize) == 0 {
                continue;
            }
            let touches_bg = [(0, 1), (0, -1), (1, 0), (-1, 0)].iter().any(|(dy, dx)| {
                let (yy, xx) = (y + dy, x + dx);
                yy >= 0 && xx >= 0 && yy < m.height as i64 && xx < m.width as i64 && m.get(yy as usize, xx as usize) == 0
            });
            if touches_bg {
                pts.push((y, x));
            }
        }
    }
    pts
}

/// Exhaustive nearest-boundary-distance matcher.
pub fn boundary_f_oracle(pred: &PixelMask, gt: &PixelMask, tol: usize) -> f64 {
    let bp = boundary_points(pred);
    let bg = boundary_points(gt);
    if bp.is_empty() && bg.is_empty() {
        return 1.0;
    }
    if bp.is_empty() || bg.is_empty() {
        return 0.0;
    }
    let matched = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        from.iter()
            .filter(|(y, x)| {
                to.iter()
                    .map(|(v, u)| (((y - v).pow(2) + (x - u).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min)
                    <= tol as f64
            })
            .count() as f64
            / from.len() as f64
    };
    let p = matched(&bp, &bg);
    let r = matched(&bg, &bp);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn max_f_beta_oracle(soft: &[f64], gt: &PixelMask) -> f64 {
    let mut values: Vec<f64> = soft.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let gt_pos = gt.area() as f64;
    values
        .iter()
        .map(|&t| {
            let mut tp = 0.0;
            let mut pos = 0.0;
            for (p, g) in soft.iter().zip(&gt.data) {
                if *p >= t {
                    pos += 1.0;
                    tp += *g as f64;
                }
            }
            let precision = if pos > 0.0 { tp / pos } else { 0.0 };
            let recall = if gt_pos > 0.0 { tp / gt_pos } else { 0.0 };
            f_beta(precision, recall)
        })
        .fold(0.0, f64::max)
}

/// Mean BCE evaluated from scratch: logits, sigmoid, then the textbook formula.
pub fn bce_oracle(probe: &LinearProbe, data: &[TrainingFrame]) -> f64 {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for frame in data {
        for (i, &t) in frame.targets.iter().enumerate() {
            let x = frame.features.patch(i);
            let z: f64 = probe.bias + x.iter().zip(&probe.weights).map(|(&a, &w)| a as f64 * w).sum::<f64>();
            preds.push(sigmoid(z));
            targets.push(t);
        }
    }
    bce_loss(&preds, &targets).unwrap()
}

pub fn random_training_frames(rng: &mut ChaCha8Rng, channels: usize) -> Vec<TrainingFrame> {
    (0..rng.random_range(1..=3))
        .map(|_| {
            let (rows, cols) = (rng.random_range(1..=4), rng.random_range(1..=5));
            let grid = random_grid(rng, rows, cols, channels, FeatureKind::Appearance);
            let targets = (0..rows * cols).map(|_| u8::from(rng.random_bool(0.5))).collect();
            TrainingFrame::new(grid, targets).unwrap()
        })
        .collect()
}

pub const NOISY_ROWS: usize = 8;

pub const NOISY_COLS: usize = 10;

pub const NOISY_PATCH: usize = 4;

pub fn noisy_dataset(root: &Path, seed: u64) -> Vec<(String, String, PixelMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gts = Vec::new();
    let seqs: Vec<(&str, Vec<(&str, FrameSpec)>)> = ["alpha", "beta"]
        .into_iter()
        .map(|s| {
            let frames = ["00", "01", "02"]
                .into_iter()
                .map(|f| {
                    let spec = planted_frame(&mut rng, NOISY_ROWS, NOISY_COLS, NOISY_PATCH, 8, 0.3);
                    gts.push((s.to_string(), f.to_string(), spec.gt.clone().unwrap()));
                    (f, spec)
                })
                .collect();
            (s, frames)
        })
        .collect();
    write_dataset(root, "sequence_average", &seqs);
    gts
}

/// Round-0 pseudo ground truth: the planted labels with a fraction of patches flipped.
pub fn write_round_zero(run: &Path, gts: &[(String, String, PixelMask)], flip: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (s, f, _) in gts {
        let labels: Vec<u8> = planted_labels(NOISY_ROWS, NOISY_COLS)
            .into_iter()
            .map(|l| (l as u8) ^ u8::from(rng.random_bool(flip)))
            .collect();
        let mask = patch_to_pixel(&labels, NOISY_ROWS, NOISY_COLS, NOISY_PATCH, NOISY_ROWS * NOISY_PATCH, NOISY_COLS * NOISY_PATCH, MaskSource::Graphcut).unwrap();
        write_mask(round_dir(run, 0).join("masks").join(s).join(format!("{f}.png")), &mask).unwrap();
    }
}

pub fn mean_j(run: &Path, round: usize, gts: &[(String, String, PixelMask)]) -> f64 {
    let js: Vec<f64> = gts
        .iter()
        .map(|(s, f, gt)| {
            let m = read_mask(round_dir(run, round).join("masks").join(s).join(format!("{f}.png")), MaskSource::Probe).unwrap();
            jaccard(&m, gt).unwrap()
        })
        .collect();
    js.iter().sum::<f64>() / js.len() as f64
}

pub fn noisy_selftrain_setup(dir: &Path, flip: f64) -> (DatasetManifest, Vec<(String, String, PixelMask)>) {
    let gts = noisy_dataset(&dir.join("data"), 7);
    write_round_zero(&dir.join("run"), &gts, flip, 8);
    (load_manifest(dir.join("data")).unwrap(), gts)
}

// Frozen output of the published reference colour-wheel code.
pub const REFERENCE_WHEEL: [[u8; 3]; 55] = [
    [255, 0, 0], [255, 17, 0], [255, 34, 0], [255, 51, 0], [255, 68, 0], [255, 85, 0], [255, 102, 0],
    [255, 119, 0], [255, 136, 0], [255, 153, 0], [255, 170, 0], [255, 187, 0], [255, 204, 0], [255, 221, 0],
    [255, 238, 0], [255, 255, 0], [213, 255, 0], [170, 255, 0], [128, 255, 0], [85, 255, 0], [43, 255, 0],
    [0, 255, 0], [0, 255, 63], [0, 255, 127], [0, 255, 191], [0, 255, 255], [0, 232, 255], [0, 209, 255],
    [0, 186, 255], [0, 163, 255], [0, 140, 255], [0, 116, 255], [0, 93, 255], [0, 70, 255], [0, 47, 255],
    [0, 24, 255], [0, 0, 255], [19, 0, 255], [39, 0, 255], [58, 0, 255], [78, 0, 255], [98, 0, 255],
    [117, 0, 255], [137, 0, 255], [156, 0, 255], [176, 0, 255], [196, 0, 255], [215, 0, 255], [235, 0, 255],
    [255, 0, 255], [255, 0, 213], [255, 0, 170], [255, 0, 128], [255, 0, 85], [255, 0, 43],
];

/// East, north-east, ... in image coordinates (v grows downward).
pub fn compass(scale: f64) -> Vec<(f64, f64)> {
    let d = std::f64::consts::FRAC_1_SQRT_2;
    [(1.0, 0.0), (d, d), (0.0, 1.0), (-d, d), (-1.0, 0.0), (-d, -d), (0.0, -1.0), (d, -d)]
        .iter()
        .map(|(u, v)| (u * scale, v * scale))
        .collect()
}

pub const WHEEL_UNIT: [[u8; 3]; 8] = [
    [255, 0, 0], [255, 114, 0], [255, 229, 0], [32, 255, 0], [0, 209, 255], [0, 52, 255], [88, 0, 255], [219, 0, 255],
];

pub const WHEEL_HALF: [[u8; 3]; 8] = [
    [255, 127, 127], [255, 184, 127], [255, 242, 127], [143, 255, 127], [127, 232, 255], [127, 153, 255],
    [171, 127, 255], [237, 127, 255],
];

pub const WHEEL_DOUBLE: [[u8; 3]; 8] = [
    [191, 0, 0], [191, 86, 0], [191, 172, 0], [24, 191, 0], [0, 156, 191], [0, 39, 191], [65, 0, 191], [164, 0, 191],
];

/// Unit f32 flows through the per-frame auto normalization.
pub const WHEEL_AUTO: [[u8; 3]; 8] = [
    [255, 0, 0], [255, 114, 0], [255, 229, 0], [32, 255, 0], [0, 209, 255], [0, 52, 255], [88, 0, 255], [220, 0, 255],
];

pub const PLANTED_TAU: f64 = 0.5;

pub fn planted_dataset(root: &Path, rows: usize, cols: usize, seed: u64) -> Vec<(String, String, FrameSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::new();
    for s in ["bus", "dog"] {
        for f in ["00000", "00001", "00002"] {
            specs.push((s.to_string(), f.to_string(), planted_frame(&mut rng, rows, cols, 8, 8, 0.05)));
        }
    }
    let seqs: Vec<(&str, Vec<(&str, FrameSpec)>)> = ["bus", "dog"]
        .iter()
        .map(|s| {
            let frames = specs
                .iter()
                .filter(|(q, _, _)| q == s)
                .map(|(_, f, spec)| {
                    let copy = FrameSpec {
                        app: spec.app.clone(),
                        flow: spec.flow.clone(),
                        gt: spec.gt.clone(),
                        image: spec.image.clone(),
                    };
                    (f.as_str(), copy)
                })
                .collect();
            (*s, frames)
        })
        .collect();
    write_dataset(root, "sequence_average", &seqs);
    specs
}

pub fn run_config(dataset: &Path, output: &Path, crf: bool) -> RunConfig {
    RunConfig {
        dataset: dataset.to_path_buf(),
        output: output.to_path_buf(),
        affinity: AffinityConfig {
            tau: PLANTED_TAU,
            ..AffinityConfig::default()
        },
        crf_enabled: crf,
        ..RunConfig::default()
    }
}

/// Every within-cluster cosine sits above τ and every between-cluster cosine below it.
pub fn assert_clusters_straddle_tau(grid: &FeatureGrid) {
    let labels = planted_labels(grid.rows, grid.cols);
    let n = grid.len();
    let (mut within_min, mut between_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = cosine_similarity(grid.patch(i), grid.patch(j)).unwrap();
            if labels[i] == labels[j] {
                within_min = within_min.min(c);
            } else {
                between_max = between_max.max(c);
            }
        }
    }
    assert!(between_max < PLANTED_TAU && PLANTED_TAU < within_min, "between {between_max}, within {within_min}");
}
