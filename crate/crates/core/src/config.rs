use serde::{Deserialize, Serialize};

use crate::corpus::MAX_TOKENS;

/// Architecture sizes. Defaults are the full-scale sizes; tests shrink them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding and hidden width shared by every block.
    pub dim: usize,
    /// Length of the precomputed visual feature vector.
    pub feature_dim: usize,
    /// Similar catalog items retrieved per item.
    pub neighbors: usize,
    /// Hidden width of the two policy perceptrons.
    pub head_hidden: usize,
    /// Layers of every recurrent stack.
    pub rnn_layers: usize,
    /// Longest generated utterance.
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            feature_dim: 2048,
            neighbors: 32,
            head_hidden: 128,
            rnn_layers: 2,
            max_tokens: MAX_TOKENS,
            seed: 17,
        }
    }
}

impl ModelConfig {
    /// History encoding plus three 7-way price one-hots.
    pub fn state_dim(&self) -> usize {
        self.dim + 3 * crate::encoder::PRICE_BUCKETS
    }
}

/// Optimisation settings for both training regimes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// `(epochs, learning rate)` phases run in order.
    pub schedule: Vec<(usize, f64)>,
    pub batch_size: usize,
    pub dropout: f64,
    /// Global-norm clip for the recurrent networks; `None` disables it.
    pub clip_norm: Option<f64>,
    pub rl_episodes: usize,
    pub rl_lr: f64,
    /// Subtract a running-mean reward baseline in REINFORCE.
    pub rl_baseline: bool,
    pub rl_max_turns: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: vec![(20, 1e-3), (320, 1e-4)],
            batch_size: 128,
            dropout: 0.3,
            clip_norm: Some(5.0),
            rl_episodes: 5000,
            rl_lr: 1e-4,
            rl_baseline: true,
            rl_max_turns: 20,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Invariant(format!("train config: {m}")));
        if self.schedule.is_empty() || self.schedule.iter().any(|(e, lr)| *e == 0 || *lr <= 0.0) {
            return bad("schedule needs positive epochs and learning rates");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.rl_lr <= 0.0 || self.rl_max_turns < 2 {
            return bad("rl_lr must be positive and rl_max_turns at least 2");
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch, following the schedule.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut start = 0;
        for (epochs, lr) in &self.schedule {
            if epoch < start + epochs {
                return *lr;
            }
            start += epochs;
        }
        self.schedule.last().map_or(1e-4, |(_, lr)| *lr)
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.iter().map(|(e, _)| e).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 1e-3);
        assert_eq!(c.lr_at(19), 1e-3);
        assert_eq!(c.lr_at(20), 1e-4);
        assert_eq!(c.total_epochs(), 340);
        assert_eq!(c.batch_size, 128);
        c.validate().unwrap();
    }

    #[test]
    fn default_state_is_321() {
        assert_eq!(ModelConfig::default().state_dim(), 321);
    }
}
