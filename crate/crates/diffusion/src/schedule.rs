//! Discrete diffusion noise schedule and the forward (noising) process.

use svdiff_linalg::error::{Error, Result};

use crate::grid::SampleGrid;

pub const DEFAULT_STEPS: usize = 100;
const BETA_START: f64 = 1e-4;
const BETA_END: f64 = 0.02;

/// Cumulative signal fractions `alpha_bar_0 ..= alpha_bar_T` with
/// `alpha_bar_0 = 1`, strictly decreasing and positive at `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from 1e-4 to 0.02 over `t_steps` steps.
    pub fn linear(t_steps: usize) -> Self {
        assert!(t_steps >= 1);
        let mut alpha_bar = Vec::with_capacity(t_steps + 1);
        alpha_bar.push(1.0);
        let mut prod = 1.0;
        for t in 0..t_steps {
            let beta = if t_steps == 1 {
                BETA_START
            } else {
                BETA_START + (BETA_END - BETA_START) * t as f64 / (t_steps - 1) as f64
            };
            prod *= 1.0 - beta;
            alpha_bar.push(prod);
        }
        Self { alpha_bar }
    }

    pub fn default_toy() -> Self {
        Self::linear(DEFAULT_STEPS)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::Domain("schedule needs at least one step".into()));
        }
        if (alpha_bar[0] - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "alpha_bar_0 must be 1 within 1e-12, got {}",
                alpha_bar[0]
            )));
        }
        if !alpha_bar.windows(2).all(|w| w[1] < w[0]) {
            return Err(Error::Domain("alpha_bar must be strictly decreasing".into()));
        }
        let last = *alpha_bar.last().unwrap();
        if last <= 0.0 {
            return Err(Error::Domain(format!("alpha_bar_T must stay positive, got {last}")));
        }
        Ok(Self { alpha_bar })
    }

    /// Number of diffusion steps T.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.steps() {
            return Err(Error::Domain(format!(
                "step {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Ascending grid of `count` timesteps subsampling [1, T], always
    /// ending at T. Sampling walks it in reverse; inversion forwards.
    pub fn timestep_grid(&self, count: usize) -> Result<Vec<usize>> {
        let t = self.steps();
        if count == 0 || count > t {
            return Err(Error::Domain(format!("cannot place {count} steps in [1, {t}]")));
        }
        Ok((1..=count)
            .map(|k| ((k * t) as f64 / count as f64).round() as usize)
            .collect())
    }
}

/// `z_t = sqrt(alpha_bar_t) z_0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_diffuse(
    z0: &SampleGrid,
    t: usize,
    eps: &SampleGrid,
    sched: &NoiseSchedule,
) -> Result<SampleGrid> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    z0.scaled_add(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngKey};

    #[test]
    fn linear_schedule_invariants() {
        let s = NoiseSchedule::default_toy();
        assert_eq!(s.steps(), 100);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(100) > 0.0);
        for t in 1..=100 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        // round-trip through the validated constructor
        let v: Vec<f64> = (0..=100).map(|t| s.alpha_bar(t)).collect();
        NoiseSchedule::from_alpha_bar(v).unwrap();
    }

    #[test]
    fn from_alpha_bar_rejects_bad_schedules() {
        assert!(NoiseSchedule::from_alpha_bar(vec![0.9, 0.5]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.6]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.0]).is_err());
    }

    #[test]
    fn forward_diffuse_near_full_signal_returns_z0() {
        // schedule endpoint: alpha_bar as close to 1 as the invariants allow
        let sched = NoiseSchedule::from_alpha_bar(vec![1.0, 1.0 - 1e-12, 0.5]).unwrap();
        let z0 = SampleGrid::new(1, 2, 2, vec![0.5, -0.25, 1.0, -1.0]).unwrap();
        let eps = SampleGrid::zeros(1, 2, 2);
        let zt = forward_diffuse(&z0, 1, &eps, &sched).unwrap();
        for (a, b) in zt.data().iter().zip(z0.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn forward_diffuse_zero_noise_scales_by_sqrt_alpha_bar() {
        let sched = NoiseSchedule::default_toy();
        let z0 = SampleGrid::new(1, 1, 3, vec![1.0, -0.5, 0.25]).unwrap();
        let eps = SampleGrid::zeros(1, 1, 3);
        let t = 40;
        let zt = forward_diffuse(&z0, t, &eps, &sched).unwrap();
        let scale = sched.alpha_bar(t).sqrt();
        for (a, b) in zt.data().iter().zip(z0.data()) {
            assert_eq!(*a, b * scale);
        }
    }

    #[test]
    fn forward_diffuse_rejects_out_of_range_step() {
        let sched = NoiseSchedule::default_toy();
        let z = SampleGrid::zeros(1, 1, 1);
        assert!(forward_diffuse(&z, 0, &z, &sched).is_err());
        assert!(forward_diffuse(&z, 101, &z, &sched).is_err());
    }

    #[test]
    fn forward_diffuse_preserves_unit_variance() {
        // Monte-Carlo oracle: for unit-variance z0 and eps the mix stays
        // unit variance.
        let sched = NoiseSchedule::default_toy();
        let key = RngKey::new(3);
        let mut s1 = key.stream(0, Purpose::Noise);
        let mut s2 = key.stream(1, Purpose::Noise);
        let n = 10_000;
        let z0 = SampleGrid::normal(1, 100, 100, &mut s1);
        let eps = SampleGrid::normal(1, 100, 100, &mut s2);
        let zt = forward_diffuse(&z0, 50, &eps, &sched).unwrap();
        let mean: f64 = zt.data().iter().sum::<f64>() / n as f64;
        let var: f64 = zt.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() <= 0.05, "variance {var}");
    }

    #[test]
    fn timestep_grid_subsamples_monotonically() {
        let sched = NoiseSchedule::default_toy();
        for count in [1usize, 10, 25, 50, 100] {
            let grid = sched.timestep_grid(count).unwrap();
            assert_eq!(grid.len(), count);
            assert_eq!(*grid.last().unwrap(), 100);
            assert!(grid.windows(2).all(|w| w[0] < w[1]));
            assert!(grid[0] >= 1);
        }
        assert!(sched.timestep_grid(0).is_err());
        assert!(sched.timestep_grid(101).is_err());
    }
}
