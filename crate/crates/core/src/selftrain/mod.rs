//! Bootstrapped self-training with a per-patch linear probe.
//!
//! Each round trains a fresh probe on the previous round's masks (mean BCE,
//! full-batch gradient descent) and writes its thresholded predictions as the
//! next round's pseudo ground truth.

mod rounds;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor_io::{FeatureGrid, MaskSource, PixelMask};

pub use rounds::{
    adopt_predictions, config_hash, external_trainer_exchange, init_round_zero, load_round_state, round_dir,
    run_round, RoundState, SelfTrainConfig,
};

/// Predictions are clamped to `[EPS_NUM, 1 - EPS_NUM]` inside the loss.
pub const EPS_NUM: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS_NUM, 1.0 - EPS_NUM)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy.
pub fn bce_loss(pred: &[f64], target: &[u8]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Argument("BCE of an empty batch".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            if t == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearProbe {
    pub fn zeros(channels: usize) -> Self {
        Self {
            weights: vec![0.0; channels],
            bias: 0.0,
        }
    }

    /// Fresh initialization for `round`. Zero when `init_scale` is 0, otherwise
    /// Gaussian weights seeded by `seed ^ round` only.
    pub fn init(channels: usize, seed: u64, round: usize, init_scale: f64) -> Result<Self> {
        if init_scale == 0.0 {
            return Ok(Self::zeros(channels));
        }
        let normal = Normal::new(0.0, init_scale)
            .map_err(|e| Error::Config(format!("init_scale {init_scale}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ round as u64);
        Ok(Self {
            weights: (0..channels).map(|_| normal.sample(&mut rng)).collect(),
            bias: 0.0,
        })
    }

    pub fn logit(&self, x: &[f32]) -> f64 {
        self.weights
            .iter()
            .zip(x)
            .map(|(&w, &v)| w * v as f64)
            .sum::<f64>()
            + self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

/// `σ(w·x + b)` for every patch.
pub fn probe_predict(probe: &LinearProbe, features: &FeatureGrid) -> Result<Vec<f64>> {
    if features.channels != probe.weights.len() {
        return Err(Error::shape(format!(
            "probe has {} weights, features have {} channels",
            probe.weights.len(),
            features.channels
        )));
    }
    Ok((0..features.len())
        .map(|i| sigmoid(probe.logit(features.patch(i))))
        .collect())
}

/// Copy of `grid` with each patch vector scaled to unit L2 norm (zero vectors stay zero).
pub fn l2_normalized(grid: &FeatureGrid) -> FeatureGrid {
    let mut out = grid.clone();
    let c = grid.channels;
    if c == 0 {
        return out;
    }
    for patch in out.data.chunks_exact_mut(c) {
        let norm = patch.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            patch.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        }
    }
    out
}

/// One frame of training data: patch features and patch-level binary targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame {
    pub features: FeatureGrid,
    pub targets: Vec<u8>,
}

impl TrainingFrame {
    pub fn new(features: FeatureGrid, targets: Vec<u8>) -> Result<Self> {
        if targets.len() != features.len() {
            return Err(Error::shape(format!(
                "{} targets for {} patches",
                targets.len(),
                features.len()
            )));
        }
        Ok(Self { features, targets })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub grad_weights: Vec<f64>,
    pub grad_bias: f64,
}

/// Mean BCE over all patches of all frames and its gradient.
///
/// Frames are reduced independently and summed in order, so the result does
/// not depend on the thread count.
pub fn loss_and_gradient(probe: &LinearProbe, data: &[TrainingFrame]) -> Result<LossGradient> {
    let c = probe.weights.len();
    let total: usize = data.iter().map(|f| f.targets.len()).sum();
    if total == 0 {
        return Err(Error::Argument("no training patches".into()));
    }
    if let Some(bad) = data.iter().find(|f| f.features.channels != c) {
        return Err(Error::shape(format!(
            "probe has {c} weights, a frame has {} channels",
            bad.features.channels
        )));
    }
    let partials = par::map(data, |frame| {
        let mut loss = 0.0;
        let mut gw = vec![0.0; c];
        let mut gb = 0.0;
        for (i, &t) in frame.targets.iter().enumerate() {
            let x = frame.features.patch(i);
            let p = sigmoid(probe.logit(x));
            let pc = clamp_prob(p);
            loss += if t == 1 { -pc.ln() } else { -(1.0 - pc).ln() };
            // the clamp is flat outside its range, so the gradient vanishes there
            let dz = if pc == p { p - t as f64 } else { 0.0 };
            for (g, &v) in gw.iter_mut().zip(x) {
                *g += dz * v as f64;
            }
            gb += dz;
        }
        (loss, gw, gb)
    });
    let n = total as f64;
    let mut out = LossGradient {
        loss: 0.0,
        grad_weights: vec![0.0; c],
        grad_bias: 0.0,
    };
    for (loss, gw, gb) in partials {
        out.loss += loss;
        out.grad_bias += gb;
        out.grad_weights.iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
    }
    out.loss /= n;
    out.grad_bias /= n;
    out.grad_weights.iter_mut().for_each(|g| *g /= n);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub iterations: usize,
    /// Standard deviation of the Gaussian weight init; 0 means zero init.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            iterations: 500,
            init_scale: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!("init_scale {} must be >= 0", self.init_scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    pub probe: LinearProbe,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Full-batch gradient descent from `start`. The lowest-loss iterate is
/// returned, so `final_loss <= initial_loss`.
pub fn train_from(start: LinearProbe, data: &[TrainingFrame], cfg: &TrainConfig) -> Result<TrainedProbe> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("no training frames".into()));
    }
    let mut probe = start;
    let mut best: Option<(f64, LinearProbe)> = None;
    let mut initial_loss = f64::NAN;
    for step in 0..=cfg.iterations {
        let lg = loss_and_gradient(&probe, data)?;
        if !lg.loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at iteration {step}")));
        }
        if step == 0 {
            initial_loss = lg.loss;
        }
        if best.as_ref().is_none_or(|(l, _)| lg.loss < *l) {
            best = Some((lg.loss, probe.clone()));
        }
        if step == cfg.iterations || cfg.lr == 0.0 {
            break;
        }
        probe
            .weights
            .iter_mut()
            .zip(&lg.grad_weights)
            .for_each(|(w, g)| *w -= cfg.lr * g);
        probe.bias -= cfg.lr * lg.grad_bias;
        if !probe.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters at iteration {step}")));
        }
    }
    let (final_loss, probe) = best.expect("at least one iteration evaluated");
    Ok(TrainedProbe {
        probe,
        initial_loss,
        final_loss,
    })
}

/// Train a freshly initialized probe (seeded by `seed` and `round`).
pub fn train_probe(data: &[TrainingFrame], seed: u64, round: usize, cfg: &TrainConfig) -> Result<TrainedProbe> {
    let channels = data
        .first()
        .ok_or_else(|| Error::Argument("no training frames".into()))?
        .features
        .channels;
    train_from(LinearProbe::init(channels, seed, round, cfg.init_scale)?, data, cfg)
}

/// Pixelwise majority over an odd number (at least 3) of equally sized masks.
pub fn ensemble_vote(masks: &[PixelMask]) -> Result<PixelMask> {
    let n = masks.len();
    if n < 3 || n.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "majority vote needs an odd number of masks (at least 3), got {n}"
        )));
    }
    let first = &masks[0];
    if let Some(m) = masks.iter().find(|m| !m.same_dims(first)) {
        return Err(Error::shape(format!(
            "{}x{} vs {}x{}",
            first.height, first.width, m.height, m.width
        )));
    }
    let data = (0..first.data.len())
        .map(|i| {
            let votes: usize = masks.iter().map(|m| m.data[i] as usize).sum();
            u8::from(2 * votes > n)
        })
        .collect();
    PixelMask::new(first.height, first.width, data, MaskSource::Ensemble)
}
