//! Central finite-difference check of [`MatchingNetwork::backward`] on small
//! random networks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{mean_bce, Activation, DropoutMasks, MatchingNetwork, NetDims};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub parameters_checked: usize,
    /// max over all parameters of |analytic - numeric| / max(1, |numeric|)
    pub max_relative_error: f64,
    pub worst_trial: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Network, video batch, text batch, labels and dropout masks.
pub type Trial = (MatchingNetwork, Array2<f64>, Array2<f64>, Vec<f64>, DropoutMasks);

/// Random reduced-size network, batch, labels and dropout masks for one trial.
pub fn random_trial(rng: &mut impl Rng) -> Result<Trial> {
    let dims = NetDims {
        video_in: rng.random_range(2..=6),
        text_in: rng.random_range(2..=5),
        joint: rng.random_range(2..=6),
        head_hidden: (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=5)).collect(),
    };
    let mut net = MatchingNetwork::new(dims.clone(), rng.random())?;
    // Non-zero biases so ReLU boundaries are not all at the origin.
    for layer in net.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    if rng.random_bool(0.25) {
        net.set_projection_activation(Activation::Identity);
    }
    let rows = rng.random_range(1..=3);
    let videos = Array2::from_shape_simple_fn((rows, dims.video_in), || rng.random_range(-2.0..2.0));
    let texts = Array2::from_shape_simple_fn((rows, dims.text_in), || rng.random_range(-2.0..2.0));
    let labels = (0..rows)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
        .collect();
    if rng.random_bool(0.5) {
        net.set_dropout_rate(0.5)?;
    }
    let masks = net.sample_masks(rows, rng);
    Ok((net, videos, texts, labels, masks))
}

/// Relative error of every parameter's analytic gradient against a central
/// difference with the given step.
pub fn check_network(
    net: &MatchingNetwork,
    videos: &Array2<f64>,
    texts: &Array2<f64>,
    labels: &[f64],
    masks: &DropoutMasks,
    step: f64,
) -> Result<Vec<f64>> {
    let cache = net.forward_with_masks(videos.clone(), texts.clone(), masks.clone())?;
    let analytic = net.backward(&cache, labels)?.flatten();
    let loss = |n: &MatchingNetwork| -> Result<f64> {
        let c = n.forward_with_masks(videos.clone(), texts.clone(), masks.clone())?;
        Ok(mean_bce(c.probabilities(), labels))
    };
    let mut errors = Vec::with_capacity(analytic.len());
    let mut probe = net.clone();
    let mut flat = 0;
    let layer_sizes: Vec<usize> = net.layers().map(|l| l.param_count()).collect();
    for (li, &count) in layer_sizes.iter().enumerate() {
        for k in 0..count {
            let original = net.layers().nth(li).expect("layer").param(k);
            *probe.layers_mut().nth(li).expect("layer").param_mut(k) = original + step;
            let plus = loss(&probe)?;
            *probe.layers_mut().nth(li).expect("layer").param_mut(k) = original - step;
            let minus = loss(&probe)?;
            *probe.layers_mut().nth(li).expect("layer").param_mut(k) = original;
            let numeric = (plus - minus) / (2.0 * step);
            errors.push((analytic[flat] - numeric).abs() / numeric.abs().max(1.0));
            flat += 1;
        }
    }
    Ok(errors)
}

/// Runs `trials` random checks.
pub fn run(trials: usize, seed: u64, step: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        trials,
        parameters_checked: 0,
        max_relative_error: 0.0,
        worst_trial: 0,
    };
    for trial in 0..trials {
        let (net, v, t, y, m) = random_trial(&mut rng)?;
        let errors = check_network(&net, &v, &t, &y, &m, step)?;
        report.parameters_checked += errors.len();
        let worst = errors.into_iter().fold(0.0, f64::max);
        if worst > report.max_relative_error {
            report.max_relative_error = worst;
            report.worst_trial = trial;
        }
    }
    Ok(report)
}
