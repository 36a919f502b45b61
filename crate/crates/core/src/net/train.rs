use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean_bce, rows_from_slices, MatchingNetwork};
use crate::error::{Error, Result};

/// One labelled (video, text) pair borrowed from the caller's buffers.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub video: &'a [f64],
    pub text: &'a [f64],
    /// 1.0 for a matching pair, 0.0 otherwise.
    pub label: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainPreset {
    /// 2000 epochs, lr 0.5, dropout 0.5, batch 1024.
    Paper,
    /// Small-machine settings that converge on synthetic data in seconds.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn preset(preset: TrainPreset, seed: u64) -> Self {
        match preset {
            TrainPreset::Paper => Self {
                epochs: 2000,
                learning_rate: 0.5,
                batch_size: 1024,
                dropout: 0.5,
                seed,
                shuffle: true,
            },
            TrainPreset::Desk => Self {
                epochs: 20,
                learning_rate: 0.05,
                batch_size: 16,
                dropout: 0.2,
                seed,
                shuffle: true,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be a finite non-negative number",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

impl MatchingNetwork {
    /// Mini-batch SGD over `examples`. Shuffling and dropout masks come from a
    /// generator seeded by `cfg.seed`, so identical inputs give bit-identical
    /// parameters. Returns the mean training loss of every epoch.
    pub fn train(&mut self, examples: &[Example<'_>], cfg: &TrainConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        if examples.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let (video_in, text_in) = (self.dims().video_in, self.dims().text_in);
        for ex in examples {
            if ex.video.len() != video_in {
                return Err(Error::dims("training video", video_in, ex.video.len()));
            }
            if ex.text.len() != text_in {
                return Err(Error::dims("training text", text_in, ex.text.len()));
            }
        }
        self.set_dropout_rate(cfg.dropout)?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        // Stream 0 is used for initialisation.
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            if cfg.shuffle {
                order.shuffle(&mut rng);
            }
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let videos: Vec<&[f64]> = chunk.iter().map(|&i| examples[i].video).collect();
                let texts: Vec<&[f64]> = chunk.iter().map(|&i| examples[i].text).collect();
                let labels: Vec<f64> = chunk.iter().map(|&i| examples[i].label).collect();
                let cache = self.forward_train(
                    rows_from_slices(&videos, video_in),
                    rows_from_slices(&texts, text_in),
                    &mut rng,
                )?;
                total += mean_bce(cache.probabilities(), &labels) * chunk.len() as f64;
                let grads = self.backward(&cache, &labels)?;
                self.sgd_step(&grads, cfg.learning_rate)?;
            }
            let mean = total / examples.len() as f64;
            log::debug!("epoch {}/{}: mean loss {mean:.6}", epoch + 1, cfg.epochs);
            trace.push(mean);
            if !self.is_finite() {
                return Err(Error::InvalidValue(format!(
                    "parameters diverged at epoch {}; lower the learning rate",
                    epoch + 1
                )));
            }
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetDims;

    fn toy() -> MatchingNetwork {
        toy_seeded(3)
    }

    fn toy_seeded(seed: u64) -> MatchingNetwork {
        MatchingNetwork::new(
            NetDims {
                video_in: 4,
                text_in: 3,
                joint: 6,
                head_hidden: vec![5, 3],
            },
            seed,
        )
        .unwrap()
    }

    fn toy_examples() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let videos = vec![vec![1.0, 0.0, 0.5, 0.0], vec![0.0, 1.0, 0.0, 0.5]];
        let texts = vec![vec![1.0, 0.2, 0.0], vec![0.0, 0.2, 1.0]];
        (videos, texts)
    }

    fn pairs<'a>(videos: &'a [Vec<f64>], texts: &'a [Vec<f64>]) -> Vec<Example<'a>> {
        let mut out = Vec::new();
        for (i, v) in videos.iter().enumerate() {
            for (j, t) in texts.iter().enumerate() {
                out.push(Example {
                    video: v,
                    text: t,
                    label: if i == j { 1.0 } else { 0.0 },
                });
            }
        }
        out
    }

    #[test]
    fn zero_lr_single_epoch_is_a_no_op() {
        let (v, t) = toy_examples();
        let mut net = toy();
        let before = net.clone();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::preset(TrainPreset::Desk, 1)
        };
        let trace = net.train(&pairs(&v, &t), &cfg).unwrap();
        assert_eq!(trace.len(), 1);
        assert!(net.layers().zip(before.layers()).all(|(a, b)| a == b));
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let (v, t) = toy_examples();
        let ex = pairs(&v, &t);
        let cfg = TrainConfig {
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 2,
            dropout: 0.3,
            seed: 4,
            shuffle: true,
        };
        let mut a = toy();
        let mut b = toy();
        let ta = a.train(&ex, &cfg).unwrap();
        let tb = b.train(&ex, &cfg).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
    }

    #[test]
    fn loss_decreases_on_separable_toy() {
        let (v, t) = toy_examples();
        let ex = pairs(&v, &t);
        let cfg = TrainConfig {
            epochs: 300,
            learning_rate: 0.5,
            batch_size: 4,
            dropout: 0.0,
            seed: 4,
            shuffle: true,
        };
        let mut net = toy();
        let trace = net.train(&ex, &cfg).unwrap();
        assert!(
            trace.last().unwrap() < &(trace[0] * 0.5),
            "{:?}",
            (trace[0], trace.last())
        );
    }

    #[test]
    fn empty_and_invalid_inputs() {
        let mut net = toy();
        let cfg = TrainConfig::preset(TrainPreset::Desk, 0);
        assert!(matches!(net.train(&[], &cfg), Err(Error::EmptyTrainingSet)));
        let bad = [Example {
            video: &[1.0],
            text: &[1.0, 2.0, 3.0],
            label: 1.0,
        }];
        assert!(matches!(net.train(&bad, &cfg), Err(Error::DimensionMismatch { .. })));
        let (v, t) = toy_examples();
        let zero_epochs = TrainConfig { epochs: 0, ..cfg };
        assert!(net.train(&pairs(&v, &t), &zero_epochs).is_err());
    }

    #[test]
    fn paper_preset_values() {
        let p = TrainConfig::preset(TrainPreset::Paper, 0);
        assert_eq!(
            (p.epochs, p.learning_rate, p.dropout, p.batch_size),
            (2000, 0.5, 0.5, 1024)
        );
    }
}
