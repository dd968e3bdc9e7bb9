use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Uniform on `[-sigma, sigma]`.
    #[default]
    Uniform,
    /// Normal with standard deviation `sigma / 2`, resampled until it falls
    /// inside `[-sigma, sigma]`.
    TruncatedGaussian,
}

/// Bounded reward noise: every draw satisfies `|eta| <= sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub kind: NoiseKind,
    pub sigma: f64,
}

impl Noise {
    pub fn new(kind: NoiseKind, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParam(format!("noise sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { kind, sigma })
    }

    pub fn none() -> Self {
        Self { kind: NoiseKind::Uniform, sigma: 0.0 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        match self.kind {
            NoiseKind::Uniform => rng.random_range(-self.sigma..=self.sigma),
            NoiseKind::TruncatedGaussian => {
                let normal = Normal::new(0.0, self.sigma / 2.0).expect("positive sd");
                loop {
                    let x: f64 = normal.sample(rng);
                    if x.abs() <= self.sigma {
                        return x;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn draws_are_bounded_and_centered() {
        for kind in [NoiseKind::Uniform, NoiseKind::TruncatedGaussian] {
            let noise = Noise::new(kind, 0.3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let n = 50_000;
            let mut sum = 0.0;
            for _ in 0..n {
                let x = noise.sample(&mut rng);
                assert!(x.abs() <= 0.3);
                sum += x;
            }
            assert!((sum / n as f64).abs() < 0.01);
        }
    }

    #[test]
    fn zero_sigma_is_silent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(Noise::none().sample(&mut rng), 0.0);
    }

    #[test]
    fn rejects_negative_sigma() {
        assert!(Noise::new(NoiseKind::Uniform, -0.1).is_err());
    }
}
