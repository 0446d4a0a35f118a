//! Training configuration.

use svdiff_linalg::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Svdiff,
    Full,
    Lora,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "svdiff" => Ok(TrainMode::Svdiff),
            "full" => Ok(TrainMode::Full),
            "lora" => Ok(TrainMode::Lora),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Svdiff => "svdiff",
            TrainMode::Full => "full",
            TrainMode::Lora => "lora",
        }
    }
}

/// Knobs for every trainer. Spectral shifts train with a learning rate
/// around a thousand times the full-weight rate; 1-D weights get their
/// own rate (fast adaptation by default).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub steps: usize,
    pub lr_spectral: f64,
    pub lr_1d: f64,
    pub lr_full: f64,
    pub lr_lora_2d: f64,
    /// Prior-preservation weight.
    pub lambda: f64,
    pub cutmix_prob: f64,
    pub unmix_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Svdiff,
            steps: 500,
            lr_spectral: 1e-3,
            lr_1d: 1e-3,
            lr_full: 5e-6,
            lr_lora_2d: 1e-4,
            lambda: 1.0,
            cutmix_prob: 0.6,
            unmix_weight: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("lr_spectral", self.lr_spectral),
            ("lr_1d", self.lr_1d),
            ("lr_full", self.lr_full),
            ("lr_lora_2d", self.lr_lora_2d),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.cutmix_prob) {
            return Err(Error::Config(format!(
                "cutmix_prob must lie in [0, 1], got {}",
                self.cutmix_prob
            )));
        }
        if !(self.unmix_weight.is_finite() && self.unmix_weight >= 0.0) {
            return Err(Error::Config(format!(
                "unmix_weight must be >= 0, got {}",
                self.unmix_weight
            )));
        }
        Ok(())
    }

    /// One-line summary recorded in run manifests.
    pub fn summary(&self) -> String {
        format!(
            "mode={} steps={} lr_spectral={} lr_1d={} lr_full={} lr_lora_2d={} lambda={} cutmix_prob={} unmix_weight={} seed={}",
            self.mode.as_str(),
            self.steps,
            self.lr_spectral,
            self.lr_1d,
            self.lr_full,
            self.lr_lora_2d,
            self.lambda,
            self.cutmix_prob,
            self.unmix_weight,
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainConfig::default();
        c.lr_spectral = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.cutmix_prob = 1.2;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lambda = -1.0;
        assert!(c.validate().is_err());
    }
}
