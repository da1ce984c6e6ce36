use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture of the CRNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub stem_channels: usize,
    /// `(block_count, channels)` per residual group.
    pub block_plan: Vec<(usize, usize)>,
    pub recurrent_layers: usize,
    /// Hidden units per direction; the two directions are summed.
    pub recurrent_hidden: usize,
    pub alphabet_size: usize,
    pub aux_loss_weight: f32,
    pub dropout_rate: f32,
}

impl ModelConfig {
    /// 7x7/32 stem, groups of 2x64, 3x128, 2x256 blocks, three BiLSTM layers
    /// of 256 units.
    pub fn paper(input_height: usize, input_width: usize, alphabet_size: usize) -> Self {
        Self {
            input_height,
            input_width,
            input_channels: 1,
            stem_channels: 32,
            block_plan: vec![(2, 64), (3, 128), (2, 256)],
            recurrent_layers: 3,
            recurrent_hidden: 256,
            alphabet_size,
            aux_loss_weight: 0.1,
            dropout_rate: 0.2,
        }
    }

    /// Reduced preset that trains on a laptop CPU.
    pub fn desk(input_width: usize, alphabet_size: usize) -> Self {
        Self {
            input_height: 32,
            input_width,
            input_channels: 1,
            stem_channels: 16,
            block_plan: vec![(1, 16), (1, 32), (1, 64)],
            recurrent_layers: 1,
            recurrent_hidden: 64,
            alphabet_size,
            aux_loss_weight: 0.1,
            dropout_rate: 0.2,
        }
    }

    /// Total spatial reduction of the encoder.
    pub fn downsampling(&self) -> usize {
        2 << self.block_plan.len().saturating_sub(1)
    }

    /// Output frames per image.
    pub fn frames(&self) -> usize {
        self.input_width / self.downsampling()
    }

    pub fn classes(&self) -> usize {
        self.alphabet_size + 1
    }

    pub fn feature_dim(&self) -> usize {
        self.block_plan.last().map_or(self.stem_channels, |g| g.1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.block_plan.is_empty() {
            return bad("block_plan must contain at least one group".into());
        }
        if self.block_plan.iter().any(|&(count, ch)| count == 0 || ch == 0) {
            return bad("every block group needs at least one block and channel".into());
        }
        if self.block_plan.windows(2).any(|w| w[1].1 < w[0].1) {
            return bad("block_plan channels must be nondecreasing".into());
        }
        let d = self.downsampling();
        if self.input_height == 0 || self.input_height % d != 0 {
            return bad(format!("input_height {} is not a positive multiple of {d}", self.input_height));
        }
        if self.input_width == 0 || self.input_width % d != 0 {
            return bad(format!("input_width {} is not a positive multiple of {d}", self.input_width));
        }
        if self.input_channels == 0 || self.stem_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.recurrent_layers == 0 || self.recurrent_hidden == 0 {
            return bad("recurrent head needs at least one layer and unit".into());
        }
        if self.alphabet_size == 0 {
            return bad("alphabet_size must be positive".into());
        }
        if !(self.aux_loss_weight >= 0.0) {
            return bad("aux_loss_weight must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// Optimization schedule and early-stopping settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Fractions of `max_epochs` at which the rate is multiplied by `lr_factor`.
    pub scheduler_milestones: Vec<f64>,
    pub lr_factor: f32,
    pub patience: usize,
    pub seed: u64,
    /// Fixed seeds everywhere; when false the seed is drawn from the OS.
    pub deterministic: bool,
    /// Optional global gradient-norm clip.
    pub grad_clip: Option<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 800,
            batch_size: 16,
            learning_rate: 5e-4,
            scheduler_milestones: vec![0.5, 0.75],
            lr_factor: 0.1,
            patience: 20,
            seed: 0,
            deterministic: true,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    /// Schedule used for the synthetic desk-scale experiments.
    pub fn desk() -> Self {
        Self {
            max_epochs: 60,
            learning_rate: 2e-3,
            patience: 6,
            grad_clip: Some(5.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.into()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.scheduler_milestones.iter().any(|&m| !(m > 0.0 && m < 1.0)) {
            return bad("scheduler_milestones must lie strictly between 0 and 1");
        }
        if self.scheduler_milestones.windows(2).any(|w| w[1] <= w[0]) {
            return bad("scheduler_milestones must be strictly increasing");
        }
        Ok(())
    }

    /// Learning rate during the zero-based epoch `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        let passed = self
            .scheduler_milestones
            .iter()
            .filter(|&&m| epoch >= (m * self.max_epochs as f64).round() as usize)
            .count();
        self.learning_rate * self.lr_factor.powi(passed as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::paper(64, 512, 40).validate().unwrap();
        ModelConfig::desk(256, 10).validate().unwrap();
        assert_eq!(ModelConfig::paper(32, 256, 5).frames(), 32);
        assert_eq!(ModelConfig::paper(64, 512, 5).frames(), 64);
        assert_eq!(ModelConfig::paper(64, 512, 5).feature_dim(), 256);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::desk(250, 10);
        assert!(c.validate().is_err());
        c.input_width = 256;
        c.block_plan = vec![(1, 32), (1, 16)];
        assert!(c.validate().is_err());
        c.block_plan = vec![(1, 16)];
        c.aux_loss_weight = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn learning_rate_schedule() {
        let t = TrainConfig::default();
        assert_eq!(t.lr_at(0), 5e-4);
        assert_eq!(t.lr_at(399), 5e-4);
        assert!((t.lr_at(400) / 5e-5 - 1.0).abs() < 1e-6);
        assert!((t.lr_at(600) / 5e-6 - 1.0).abs() < 1e-6);
        let bad = TrainConfig {
            scheduler_milestones: vec![0.75, 0.5],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"max_epoch": 3}"#).is_err());
        let t: TrainConfig = serde_json::from_str(r#"{"max_epochs": 3}"#).unwrap();
        assert_eq!(t.max_epochs, 3);
        assert_eq!(t.batch_size, 16);
    }
}
