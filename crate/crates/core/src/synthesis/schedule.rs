use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::latent::LatentTensor;
use super::SynthError;

/// Sampling schedule negotiated with a backend. Entry `i` is the `i`-th
/// denoising step: timesteps descend and ᾱ ascends along the list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub schedule_id: String,
    pub timesteps: Vec<u32>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn num_steps(&self) -> usize {
        self.timesteps.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let n = self.timesteps.len();
        let bad = |why: String| Err(SynthError::InvalidSchedule(why));
        if n == 0 {
            return bad("empty schedule".into());
        }
        if self.alpha_bars.len() != n {
            return bad(format!("{n} timesteps but {} alpha_bars", self.alpha_bars.len()));
        }
        if let Some(a) = self.alpha_bars.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return bad(format!("alpha_bar {a} outside (0, 1]"));
        }
        if self.timesteps.windows(2).any(|w| w[0] <= w[1]) {
            return bad("timesteps not strictly descending".into());
        }
        if self.alpha_bars.windows(2).any(|w| w[0] > w[1]) {
            return bad("alpha_bars decrease along the sampling order".into());
        }
        Ok(())
    }

    /// ᾱ reached after step `index`; the step past the last one is clean.
    pub fn alpha_bar_after(&self, index: usize) -> f64 {
        self.alpha_bars.get(index + 1).copied().unwrap_or(1.0)
    }
}

/// Number of trailing steps to run for `strength`: `round(strength · N)`.
/// The loop starts at 0-based step `N − k`.
pub fn strength_to_start(strength: f64, num_steps: usize) -> Result<usize, SynthError> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(SynthError::InvalidStrength(strength));
    }
    Ok(((strength * num_steps as f64).round() as usize).min(num_steps))
}

/// Per-element noising at one level: `√ᾱ·x + √(1−ᾱ)·e` in f64.
#[derive(Clone, Copy, Debug)]
pub struct NoiseLevel {
    a: f64,
    b: f64,
}

impl NoiseLevel {
    pub fn new(alpha_bar: f64) -> Self {
        Self {
            a: alpha_bar.sqrt(),
            b: (1.0 - alpha_bar).max(0.0).sqrt(),
        }
    }

    #[inline]
    pub fn apply(&self, x: f32, e: f32) -> f32 {
        (self.a * x as f64 + self.b * e as f64) as f32
    }

    /// Noises `x` with a fresh standard-normal draw from `rng`.
    #[inline]
    pub fn apply_fresh(&self, x: f32, rng: &mut impl Rng) -> f32 {
        self.apply(x, rng.sample::<f32, _>(StandardNormal))
    }
}

/// `√ᾱ·x0 + √(1−ᾱ)·eps`, evaluated in f64 per element.
pub fn forward_noise(
    x0: &LatentTensor,
    alpha_bar: f64,
    eps: &LatentTensor,
) -> Result<LatentTensor, SynthError> {
    x0.ensure_same_shape(eps)?;
    let level = NoiseLevel::new(alpha_bar);
    let data = x0.data.iter().zip(&eps.data).map(|(&x, &e)| level.apply(x, e)).collect();
    LatentTensor::from_vec(x0.shape(), data)
}

/// Same as `forward_noise(x0, alpha_bar, &gaussian_like(x0.shape(), rng))`
/// without materializing the noise.
pub fn forward_noise_fresh(x0: &LatentTensor, alpha_bar: f64, rng: &mut impl Rng) -> LatentTensor {
    let level = NoiseLevel::new(alpha_bar);
    LatentTensor {
        channels: x0.channels,
        height: x0.height,
        width: x0.width,
        data: x0.data.iter().map(|&x| level.apply_fresh(x, rng)).collect(),
    }
}

/// Standard-normal tensor of the given shape.
pub fn gaussian_like(shape: [usize; 3], rng: &mut impl Rng) -> LatentTensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    LatentTensor::from_vec(shape, data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(v: Vec<f32>) -> LatentTensor {
        LatentTensor::from_vec([1, 1, v.len()], v).unwrap()
    }

    #[test]
    fn strength_mapping_at_forty_steps() {
        let ks: Vec<usize> = [0.3, 0.35, 0.5, 0.7, 0.9, 1.0]
            .iter()
            .map(|&s| strength_to_start(s, 40).unwrap())
            .collect();
        assert_eq!(ks, vec![12, 14, 20, 28, 36, 40]);
    }

    #[test]
    fn out_of_range_strengths_are_rejected() {
        for s in [0.0, -0.1, 1.0001, f64::NAN] {
            assert!(matches!(strength_to_start(s, 40), Err(SynthError::InvalidStrength(_))));
        }
    }

    #[test]
    fn fused_noising_matches_materialized_noise() {
        use rand::SeedableRng;
        let x0 = LatentTensor::from_vec([3, 4, 5], (0..60).map(|i| i as f32 / 7.0 - 4.0).collect()).unwrap();
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut r2 = r1.clone();
        let eps = gaussian_like(x0.shape(), &mut r1);
        assert_eq!(forward_noise(&x0, 0.37, &eps).unwrap(), forward_noise_fresh(&x0, 0.37, &mut r2));
    }

    #[test]
    fn forward_noise_endpoints() {
        let x = tensor(vec![1.0, -2.0, 0.5]);
        let e = tensor(vec![0.3, 0.1, -0.7]);
        assert_eq!(forward_noise(&x, 1.0, &e).unwrap(), x);
        let z = tensor(vec![0.0; 3]);
        assert_eq!(forward_noise(&x, 0.25, &z).unwrap().data, vec![0.5, -1.0, 0.25]);
        assert!(forward_noise(&x, 0.5, &tensor(vec![0.0; 2])).is_err());
    }

    #[test]
    fn schedule_validation() {
        let ok = NoiseSchedule {
            schedule_id: "s".into(),
            timesteps: vec![901, 501, 1],
            alpha_bars: vec![0.1, 0.5, 0.99],
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.alpha_bar_after(2), 1.0);
        let mut bad = ok.clone();
        bad.alpha_bars[1] = 0.05;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.timesteps[2] = 501;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.alpha_bars[0] = 0.0;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn k_is_monotone_and_bounded(a in 0.001f64..=1.0, b in 0.001f64..=1.0, n in 1usize..200) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (klo, khi) = (strength_to_start(lo, n).unwrap(), strength_to_start(hi, n).unwrap());
            prop_assert!(klo <= khi && khi <= n);
            prop_assert_eq!(strength_to_start(1.0, n).unwrap(), n);
        }
    }
}
