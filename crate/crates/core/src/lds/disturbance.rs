use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Generator of bounded disturbances `w_t` with `||w_t|| <= 1`.
///
/// Every variant may look at the current state, which is how the
/// sign-adversarial source pushes against the trajectory.
#[derive(Debug, Clone)]
pub enum DisturbanceSource {
    Zero,
    /// i.i.d. `N(0, sigma^2 I)`, radially clipped to the unit ball.
    ClippedGaussian { sigma: f64, rng: ChaCha8Rng },
    /// `amplitude / sqrt(d) * sin(2 pi t / period + 2 pi j / d)` in coordinate `j`.
    Sinusoidal { amplitude: f64, period: f64 },
    /// `-scale * x / ||x||` (zero at the origin).
    SignAdversarial { scale: f64 },
    /// Recorded sequence `w_1, w_2, ...`; zero past the end.
    Replay { values: Vec<DVector<f64>> },
}

impl DisturbanceSource {
    pub fn gaussian(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Precondition(format!("gaussian sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self::ClippedGaussian {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn sinusoidal(amplitude: f64, period: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&amplitude) || !(period > 0.0) || !period.is_finite() {
            return Err(Error::Precondition(format!(
                "sinusoid needs amplitude in [0, 1] and a positive period (got {amplitude}, {period})"
            )));
        }
        Ok(Self::Sinusoidal { amplitude, period })
    }

    pub fn sign_adversarial(scale: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&scale) {
            return Err(Error::Precondition(format!("adversarial scale must lie in [0, 1], got {scale}")));
        }
        Ok(Self::SignAdversarial { scale })
    }

    /// Replays a recording; rejects entries outside the unit ball.
    pub fn replay(values: Vec<DVector<f64>>) -> Result<Self> {
        if let Some((i, w)) = values.iter().enumerate().find(|(_, w)| !(w.norm() <= 1.0 + 1e-12)) {
            return Err(Error::Precondition(format!(
                "replayed disturbance {} has norm {} > 1",
                i + 1,
                w.norm()
            )));
        }
        Ok(Self::Replay { values })
    }

    /// Disturbance for step `t` (1-based) given the current state.
    pub fn next(&mut self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        let d = x.len();
        match self {
            Self::Zero => DVector::zeros(d),
            Self::ClippedGaussian { sigma, rng } => {
                let w = DVector::from_fn(d, |_, _| *sigma * rng.sample::<f64, _>(StandardNormal));
                clip_unit(w)
            }
            Self::Sinusoidal { amplitude, period } => {
                let scale = *amplitude / (d as f64).sqrt();
                let omega = 2.0 * PI * t as f64 / *period;
                DVector::from_fn(d, |j, _| scale * (omega + 2.0 * PI * j as f64 / d as f64).sin())
            }
            Self::SignAdversarial { scale } => {
                let n = x.norm();
                if n > 0.0 && n.is_finite() {
                    clip_unit(x * (-*scale / n))
                } else {
                    DVector::zeros(d)
                }
            }
            Self::Replay { values } => match values.get(t.wrapping_sub(1)) {
                Some(w) if w.len() == d => clip_unit(w.clone()),
                _ => DVector::zeros(d),
            },
        }
    }
}

fn clip_unit(w: DVector<f64>) -> DVector<f64> {
    let n = w.norm();
    if n > 1.0 {
        // rounding can leave n / n slightly above one
        w / (n * (1.0 + f64::EPSILON))
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources() -> Vec<DisturbanceSource> {
        vec![
            DisturbanceSource::Zero,
            DisturbanceSource::gaussian(3.0, 5).unwrap(),
            DisturbanceSource::sinusoidal(1.0, 7.3).unwrap(),
            DisturbanceSource::sign_adversarial(1.0).unwrap(),
            DisturbanceSource::replay(vec![DVector::from_vec(vec![0.6, 0.8, 0.0]); 50]).unwrap(),
        ]
    }

    #[test]
    fn every_variant_stays_in_unit_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mut src in sources() {
            for t in 1..=10_000 {
                let x = DVector::from_fn(3, |_, _| 1e3 * rng.sample::<f64, _>(StandardNormal));
                let w = src.next(t, &x);
                assert!(w.norm() <= 1.0, "{src:?} emitted norm {}", w.norm());
            }
        }
    }

    #[test]
    fn sign_adversarial_opposes_state() {
        let mut src = DisturbanceSource::sign_adversarial(0.5).unwrap();
        let w = src.next(1, &DVector::from_vec(vec![3.0, 4.0]));
        assert!((w - DVector::from_vec(vec![-0.3, -0.4])).norm() < 1e-15);
        assert_eq!(src.next(2, &DVector::zeros(2)), DVector::zeros(2));
    }

    #[test]
    fn seeded_gaussian_repeats() {
        let mut a = DisturbanceSource::gaussian(0.2, 42).unwrap();
        let mut b = DisturbanceSource::gaussian(0.2, 42).unwrap();
        let x = DVector::zeros(4);
        for t in 1..100 {
            assert_eq!(a.next(t, &x), b.next(t, &x));
        }
    }

    #[test]
    fn replay_validates_and_pads() {
        assert!(DisturbanceSource::replay(vec![DVector::from_vec(vec![2.0])]).is_err());
        let mut src = DisturbanceSource::replay(vec![DVector::from_vec(vec![0.5])]).unwrap();
        let x = DVector::zeros(1);
        assert_eq!(src.next(1, &x)[0], 0.5);
        assert_eq!(src.next(2, &x)[0], 0.0);
    }
}
