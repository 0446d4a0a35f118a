//! Classifier-free guidance, with optional negative prompting.

use svdiff_linalg::error::{Error, Result};

use crate::grid::SampleGrid;
use crate::loss::TokenId;

/// Guidance configuration for a sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSpec {
    /// Extrapolation scale `s >= 0`; 1 means plain conditional sampling.
    pub scale: f64,
    /// Blend between the null score and the negative-prompt score,
    /// in [0, 1]; only consulted when negative prompts are present.
    pub beta: f64,
    /// Zero or more negative prompts; their scores are averaged.
    pub negatives: Vec<Vec<TokenId>>,
}

impl GuidanceSpec {
    pub fn conditional() -> Self {
        Self {
            scale: 1.0,
            beta: 1.0,
            negatives: Vec::new(),
        }
    }

    pub fn with_scale(scale: f64) -> Self {
        Self {
            scale,
            ..Self::conditional()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() || self.scale < 0.0 {
            return Err(Error::Domain(format!("guidance scale {} must be >= 0", self.scale)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Domain(format!("beta {} outside [0, 1]", self.beta)));
        }
        Ok(())
    }

    pub fn needs_null_score(&self) -> bool {
        self.scale != 1.0 || !self.negatives.is_empty()
    }
}

/// `s * eps(c) + (1 - s) * eps(null)`.
pub fn guided_score(
    eps_cond: &SampleGrid,
    eps_null: &SampleGrid,
    spec: &GuidanceSpec,
) -> Result<SampleGrid> {
    spec.validate()?;
    eps_cond.scaled_add(spec.scale, eps_null, 1.0 - spec.scale)
}

/// Negative-prompt variant: the null score is first replaced by
/// `beta * eps(null) + (1 - beta) * mean_i eps(neg_i)`.
pub fn guided_score_negative(
    eps_cond: &SampleGrid,
    eps_null: &SampleGrid,
    eps_negatives: &[SampleGrid],
    spec: &GuidanceSpec,
) -> Result<SampleGrid> {
    spec.validate()?;
    if eps_negatives.is_empty() {
        return guided_score(eps_cond, eps_null, spec);
    }
    let mut mean = SampleGrid::zeros(eps_null.channels(), eps_null.height(), eps_null.width());
    let w = 1.0 / eps_negatives.len() as f64;
    for neg in eps_negatives {
        mean = mean.scaled_add(1.0, neg, w)?;
    }
    let blended = eps_null.scaled_add(spec.beta, &mean, 1.0 - spec.beta)?;
    eps_cond.scaled_add(spec.scale, &blended, 1.0 - spec.scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(v: f64) -> SampleGrid {
        SampleGrid::filled(1, 2, 2, v)
    }

    #[test]
    fn scale_one_returns_conditional_exactly() {
        let cond = grid(0.7);
        let null = grid(-0.3);
        let out = guided_score(&cond, &null, &GuidanceSpec::conditional()).unwrap();
        assert_eq!(out.data(), cond.data());
    }

    #[test]
    fn beta_one_reduces_to_plain_guidance() {
        let cond = grid(0.7);
        let null = grid(-0.3);
        let neg = grid(0.1);
        let spec = GuidanceSpec {
            scale: 3.0,
            beta: 1.0,
            negatives: vec![vec![1]],
        };
        let plain = guided_score(&cond, &null, &spec).unwrap();
        let with_neg = guided_score_negative(&cond, &null, &[neg], &spec).unwrap();
        assert_eq!(plain.data(), with_neg.data());
    }

    #[test]
    fn negative_blend_arithmetic() {
        // s=3, beta=0.5, cond=1, null=0, neg=2 -> 3*1 + (1-3)*(0.5*0+0.5*2) = 1
        let spec = GuidanceSpec {
            scale: 3.0,
            beta: 0.5,
            negatives: vec![vec![1]],
        };
        let out = guided_score_negative(&grid(1.0), &grid(0.0), &[grid(2.0)], &spec).unwrap();
        for &x in out.data() {
            assert!((x - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn multiple_negatives_average() {
        let spec = GuidanceSpec {
            scale: 2.0,
            beta: 0.0,
            negatives: vec![vec![1], vec![2]],
        };
        // mean(neg) = 1.5; score = 2*1 + (1-2)*1.5 = 0.5
        let out =
            guided_score_negative(&grid(1.0), &grid(9.0), &[grid(1.0), grid(2.0)], &spec).unwrap();
        for &x in out.data() {
            assert!((x - 0.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_spec() {
        let bad_scale = GuidanceSpec {
            scale: -1.0,
            ..GuidanceSpec::conditional()
        };
        assert!(guided_score(&grid(0.0), &grid(0.0), &bad_scale).is_err());
        let bad_beta = GuidanceSpec {
            beta: 1.5,
            ..GuidanceSpec::conditional()
        };
        assert!(guided_score(&grid(0.0), &grid(0.0), &bad_beta).is_err());
    }

    #[test]
    fn shape_mismatch_is_shape_error() {
        let a = SampleGrid::zeros(1, 2, 2);
        let b = SampleGrid::zeros(1, 2, 3);
        assert!(matches!(
            guided_score(&a, &b, &GuidanceSpec::with_scale(2.0)),
            Err(Error::Shape(_))
        ));
    }
}
