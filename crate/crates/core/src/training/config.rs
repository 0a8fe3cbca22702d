//! Training configuration and its flat `key=value` text form.

use std::fmt::Write as _;

use crate::error::{AeclError, Result};
use crate::losses::{EntropySign, InstanceTerms, LossWeights};
use crate::model::ModelDims;
use crate::training::adam::AdamConfig;

/// How stage-3 pseudo-labels are generated from the original-view
/// probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PseudoMode {
    /// Only rows whose maximum probability exceeds the threshold.
    #[default]
    Threshold,
    /// Every row, labelled with its argmax.
    Argmax,
}

/// Cluster-balance presets for `lambda4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalancePreset {
    Balanced,
    SlightImbalance,
    HeavyImbalance,
}

impl BalancePreset {
    pub fn lambda4(self) -> f64 {
        match self {
            BalancePreset::Balanced => 10.0,
            BalancePreset::SlightImbalance => 0.18,
            BalancePreset::HeavyImbalance => 0.09,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "balanced" => Some(Self::Balanced),
            "slight" => Some(Self::SlightImbalance),
            "heavy" => Some(Self::HeavyImbalance),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dims: ModelDims,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub epochs_total: usize,
    pub weights: LossWeights,
    pub lr_heads: f64,
    /// Kept for configuration compatibility; the encoder is frozen.
    pub lr_encoder: f64,
    pub confidence_threshold: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub pseudo_mode: PseudoMode,
    pub instance_terms: InstanceTerms,
    /// Feature-space augmentation used when the dataset has no second view.
    pub augment_noise: f64,
    pub augment_mask: f64,
}

impl TrainConfig {
    /// Defaults with the given model dimensions.
    pub fn new(dims: ModelDims) -> Self {
        Self {
            dims,
            batch_size: 400,
            epochs_stage1: 10,
            epochs_stage2: 1,
            epochs_total: 70,
            weights: LossWeights::default(),
            lr_heads: 5e-4,
            lr_encoder: 5e-6,
            confidence_threshold: 0.95,
            seed: 0,
            adam: AdamConfig::default(),
            pseudo_mode: PseudoMode::Threshold,
            instance_terms: InstanceTerms::Full,
            augment_noise: 0.1,
            augment_mask: 0.1,
        }
    }

    pub fn epochs_stage3(&self) -> usize {
        self.epochs_total
            .saturating_sub(self.epochs_stage1 + self.epochs_stage2)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.weights.validate()?;
        if self.epochs_stage1 + self.epochs_stage2 > self.epochs_total {
            return Err(AeclError::StageBudget {
                stage1: self.epochs_stage1,
                stage2: self.epochs_stage2,
                total: self.epochs_total,
            });
        }
        if self.batch_size < 2 {
            return Err(AeclError::Config("batch_size must be at least 2".into()));
        }
        if !(self.lr_heads > 0.0 && self.lr_heads.is_finite()) {
            return Err(AeclError::Config("lr_heads must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.confidence_threshold) {
            return Err(AeclError::Config(
                "confidence_threshold must lie in [0, 1)".into(),
            ));
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(AeclError::Config("invalid Adam hyperparameters".into()));
        }
        if !(0.0..1.0).contains(&self.augment_mask) || self.augment_noise.is_nan() || self.augment_noise < 0.0 {
            return Err(AeclError::Config("invalid augmentation settings".into()));
        }
        Ok(())
    }

    /// Serializes every field as `key=value`, one per line, in a fixed
    /// order. Floats use the shortest round-trip representation.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let w = &self.weights;
        vec![
            ("d1", self.dims.d1.to_string()),
            ("d2", self.dims.d2.to_string()),
            ("m", self.dims.m.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs_stage1", self.epochs_stage1.to_string()),
            ("epochs_stage2", self.epochs_stage2.to_string()),
            ("epochs_total", self.epochs_total.to_string()),
            ("lambda1", format!("{:?}", w.lambda1)),
            ("lambda2", format!("{:?}", w.lambda2)),
            ("lambda3", format!("{:?}", w.lambda3)),
            ("lambda4", format!("{:?}", w.lambda4)),
            ("tau_i", format!("{:?}", w.tau_i)),
            ("tau_c", format!("{:?}", w.tau_c)),
            (
                "entropy_sign",
                match w.entropy_sign {
                    EntropySign::Intent => "intent",
                    EntropySign::Paper => "paper",
                }
                .into(),
            ),
            ("lr_heads", format!("{:?}", self.lr_heads)),
            ("lr_encoder", format!("{:?}", self.lr_encoder)),
            ("confidence_threshold", format!("{:?}", self.confidence_threshold)),
            ("seed", self.seed.to_string()),
            ("adam_beta1", format!("{:?}", self.adam.beta1)),
            ("adam_beta2", format!("{:?}", self.adam.beta2)),
            ("adam_eps", format!("{:?}", self.adam.eps)),
            (
                "pseudo_mode",
                match self.pseudo_mode {
                    PseudoMode::Threshold => "threshold",
                    PseudoMode::Argmax => "argmax",
                }
                .into(),
            ),
            (
                "instance_terms",
                match self.instance_terms {
                    InstanceTerms::Full => "full",
                    InstanceTerms::PairOnly => "pair-only",
                }
                .into(),
            ),
            ("augment_noise", format!("{:?}", self.augment_noise)),
            ("augment_mask", format!("{:?}", self.augment_mask)),
        ]
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| AeclError::Config(format!("bad value `{value}` for `{key}`")))
        }
        let value = value.trim();
        match key.trim() {
            "d1" => self.dims.d1 = num(key, value)?,
            "d2" => self.dims.d2 = num(key, value)?,
            "m" => self.dims.m = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs_stage1" => self.epochs_stage1 = num(key, value)?,
            "epochs_stage2" => self.epochs_stage2 = num(key, value)?,
            "epochs_total" => self.epochs_total = num(key, value)?,
            "lambda1" => self.weights.lambda1 = num(key, value)?,
            "lambda2" => self.weights.lambda2 = num(key, value)?,
            "lambda3" => self.weights.lambda3 = num(key, value)?,
            "lambda4" => self.weights.lambda4 = num(key, value)?,
            "tau_i" => self.weights.tau_i = num(key, value)?,
            "tau_c" => self.weights.tau_c = num(key, value)?,
            "entropy_sign" => {
                self.weights.entropy_sign = match value {
                    "intent" => EntropySign::Intent,
                    "paper" => EntropySign::Paper,
                    _ => return Err(AeclError::Config(format!("bad entropy_sign `{value}`"))),
                }
            }
            "preset" => {
                let preset = BalancePreset::parse(value)
                    .ok_or_else(|| AeclError::Config(format!("unknown preset `{value}`")))?;
                self.weights.lambda4 = preset.lambda4();
            }
            "lr_heads" => self.lr_heads = num(key, value)?,
            "lr_encoder" => self.lr_encoder = num(key, value)?,
            "confidence_threshold" => self.confidence_threshold = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "adam_beta1" => self.adam.beta1 = num(key, value)?,
            "adam_beta2" => self.adam.beta2 = num(key, value)?,
            "adam_eps" => self.adam.eps = num(key, value)?,
            "pseudo_mode" => {
                self.pseudo_mode = match value {
                    "threshold" => PseudoMode::Threshold,
                    "argmax" => PseudoMode::Argmax,
                    _ => return Err(AeclError::Config(format!("bad pseudo_mode `{value}`"))),
                }
            }
            "instance_terms" => {
                self.instance_terms = match value {
                    "full" => InstanceTerms::Full,
                    "pair-only" => InstanceTerms::PairOnly,
                    _ => return Err(AeclError::Config(format!("bad instance_terms `{value}`"))),
                }
            }
            "augment_noise" => self.augment_noise = num(key, value)?,
            "augment_mask" => self.augment_mask = num(key, value)?,
            other => return Err(AeclError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` document. Blank lines and `#` comments are
    /// ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                AeclError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_settings() {
        let c = TrainConfig::new(ModelDims::new(768, 128, 8).unwrap());
        assert_eq!(c.batch_size, 400);
        assert_eq!(c.epochs_total, 70);
        assert_eq!(c.lr_heads, 5e-4);
        assert_eq!(c.lr_encoder, 5e-6);
        assert_eq!(c.confidence_threshold, 0.95);
        assert_eq!(
            (c.weights.lambda1, c.weights.lambda2, c.weights.lambda3),
            (10.0, 5.0, 0.01)
        );
        assert_eq!((c.weights.tau_i, c.weights.tau_c), (1.0, 0.5));
        assert_eq!(c.epochs_stage3(), 59);
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig::new(ModelDims::new(32, 16, 4).unwrap());
        c.weights.lambda4 = 0.18;
        c.seed = 99;
        c.pseudo_mode = PseudoMode::Argmax;
        c.instance_terms = InstanceTerms::PairOnly;
        c.weights.entropy_sign = EntropySign::Paper;
        let text = c.to_kv();
        let mut back = TrainConfig::new(ModelDims::new(1, 1, 2).unwrap());
        back.apply_kv(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = TrainConfig::new(ModelDims::new(4, 4, 2).unwrap());
        assert!(c.apply_kv("nonsense").is_err());
        assert!(c.apply_kv("lambda1=abc").is_err());
        assert!(c.apply_kv("unknown=1").is_err());
        c.apply_kv("# comment\n\npreset=heavy\n").unwrap();
        assert_eq!(c.weights.lambda4, 0.09);
    }

    #[test]
    fn stage_budget_checked() {
        let mut c = TrainConfig::new(ModelDims::new(4, 4, 2).unwrap());
        c.epochs_stage1 = 60;
        c.epochs_stage2 = 20;
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("stage budget exceeds total epochs"));
    }
}
