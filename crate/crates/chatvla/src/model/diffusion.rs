//! Denoising-diffusion schedule and ancestral sampler for action chunks.
//!
//! The schedule is a fixed linear beta ramp. Training adds noise with
//! [`DiffusionSchedule::add_noise`]; sampling runs the reverse process from
//! unit Gaussian noise with a caller-supplied denoiser, which keeps the
//! sampler testable against a closed-form posterior independent of the
//! neural head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::TensorError;

/// Linear beta schedule with precomputed alpha products.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Betas spaced linearly from `beta_start` to `beta_end` over `steps`
    /// (a single step uses `beta_start` alone).
    pub fn linear(beta_start: f64, beta_end: f64, steps: usize) -> DiffusionSchedule {
        assert!(steps >= 1, "diffusion needs at least one step");
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|t| beta_start + (beta_end - beta_start) * t as f64 / (steps - 1) as f64)
                .collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        DiffusionSchedule {
            betas,
            alphas,
            alpha_bars,
        }
    }

    /// Default desk-scale schedule.
    ///
    /// The ramp must destroy most of the signal within the few steps we run
    /// (`alpha_bar_T` near zero), otherwise reverse sampling starts from a
    /// distribution the denoiser never saw and the per-step noise slopes
    /// `1/sqrt(1 - alpha_bar_t)` become untrainably steep. A 0.05..0.5 linear
    /// ramp gives `alpha_bar_10 ~ 0.003` with mild slopes throughout.
    pub fn default_for(steps: usize) -> DiffusionSchedule {
        DiffusionSchedule::linear(0.05, 0.5, steps)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// Forward process: `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps`.
    pub fn add_noise(&self, clean: &[f64], noise: &[f64], t: usize) -> Vec<f64> {
        let abar = self.alpha_bars[t];
        let sa = abar.sqrt();
        let sn = (1.0 - abar).sqrt();
        clean
            .iter()
            .zip(noise)
            .map(|(x0, e)| sa * x0 + sn * e)
            .collect()
    }
}

/// Fixed-length window of consecutive actions, each dimension in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    pub chunk_len: usize,
    pub action_dim: usize,
    pub data: Vec<f64>,
}

impl ActionChunk {
    /// Build a chunk, clipping every entry into `[-1, 1]`. Non-finite values
    /// are clamped to 0 so the environment never sees them.
    pub fn clipped(chunk_len: usize, action_dim: usize, data: Vec<f64>) -> ActionChunk {
        debug_assert_eq!(data.len(), chunk_len * action_dim);
        let data = data
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        ActionChunk {
            chunk_len,
            action_dim,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.action_dim..(i + 1) * self.action_dim]
    }
}

/// Gaussian noise vector from a seeded stream.
pub fn sample_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// DDPM ancestral sampling: start from unit Gaussian noise and walk the
/// reverse chain. `denoise(x_t, t)` predicts the added noise.
pub fn ancestral_sample<D>(
    schedule: &DiffusionSchedule,
    n: usize,
    seed: u64,
    denoise: D,
) -> Result<Vec<f64>, TensorError>
where
    D: Fn(&[f64], usize) -> Result<Vec<f64>, TensorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = sample_noise(n, &mut rng);
    for t in (0..schedule.steps()).rev() {
        let eps_hat = denoise(&x, t)?;
        let beta = schedule.betas[t];
        let alpha = schedule.alphas[t];
        let abar = schedule.alpha_bars[t];
        let coef = beta / (1.0 - abar).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        for (xi, ei) in x.iter_mut().zip(&eps_hat) {
            *xi = inv_sqrt_alpha * (*xi - coef * ei);
        }
        if t > 0 {
            let abar_prev = schedule.alpha_bars[t - 1];
            let sigma = (beta * (1.0 - abar_prev) / (1.0 - abar)).sqrt();
            let z = sample_noise(n, &mut rng);
            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi += sigma * zi;
            }
        }
    }
    Ok(x)
}

/// Sinusoidal timestep embedding of width `dim` (even).
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    debug_assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 1.0 / 10_000f64.powf(i as f64 / half as f64);
        let angle = t as f64 * freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}
