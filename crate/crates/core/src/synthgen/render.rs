//! Ridge rendering by iterated oriented filtering.
//!
//! White noise is repeatedly convolved, pixel by pixel, with an even Gabor
//! kernel tuned to the local ridge angle and the ridge frequency, then
//! saturated. After a few rounds a ridge pattern following the field
//! emerges; a soft threshold maps it to dark ridges on a light background.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Ridges per pixel, in `(0, 0.5)`.
    pub frequency: f64,
    pub iterations: usize,
    /// Angular resolution of the filter bank over `[0, pi)`.
    pub orientations: usize,
    /// Slope of the final soft threshold.
    pub sharpness: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            frequency: 1.0 / 9.0,
            iterations: 6,
            orientations: 24,
            sharpness: 2.5,
        }
    }
}

struct FilterBank {
    radius: usize,
    kernels: Vec<Vec<f64>>,
}

impl FilterBank {
    fn new(frequency: f64, orientations: usize) -> Self {
        let period = 1.0 / frequency;
        let radius = period.ceil() as usize;
        let (s_across, s_along) = (0.45 * period, 0.65 * period);
        let side = 2 * radius + 1;
        let kernels = (0..orientations)
            .map(|o| {
                let theta = PI * o as f64 / orientations as f64;
                let (s, c) = theta.sin_cos();
                let mut env = Vec::with_capacity(side * side);
                let mut k = Vec::with_capacity(side * side);
                for dy in 0..side {
                    for dx in 0..side {
                        let (x, y) = (dx as f64 - radius as f64, dy as f64 - radius as f64);
                        let across = -x * s + y * c;
                        let along = x * c + y * s;
                        let e = (-0.5 * ((across / s_across).powi(2) + (along / s_along).powi(2))).exp();
                        env.push(e);
                        k.push(e * (2.0 * PI * frequency * across).cos());
                    }
                }
                // zero DC response so flat regions stay flat
                let dc = k.iter().sum::<f64>() / env.iter().sum::<f64>();
                let mut k: Vec<f64> = k.iter().zip(&env).map(|(v, e)| v - dc * e).collect();
                let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
                k.iter_mut().for_each(|v| *v /= norm);
                k
            })
            .collect();
        Self { radius, kernels }
    }

    fn bin(&self, theta: f64) -> usize {
        let n = self.kernels.len();
        ((theta.rem_euclid(PI) / PI * n as f64).round() as usize) % n
    }
}

/// Renders ridges along `orientation` (`[H, W]` angles). Output is
/// `[1, H, W]` with integer grey levels in `0..=255`, ridges dark.
pub fn render_ridges(
    orientation: &Tensor<f64>,
    config: &RenderConfig,
    rng: &mut RngStream,
) -> Result<Tensor<f32>> {
    if !(config.frequency > 0.0 && config.frequency < 0.5) {
        return Err(Error::invalid(format!(
            "ridge frequency must be in (0, 0.5), got {}",
            config.frequency
        )));
    }
    let [h, w] = match *orientation.shape() {
        [h, w] => [h, w],
        _ => {
            return Err(Error::shape(format!(
                "orientation must be [H, W], got {:?}",
                orientation.shape()
            )))
        }
    };
    let bank = FilterBank::new(config.frequency, config.orientations.max(1));
    let bins: Vec<usize> = orientation.data().iter().map(|&t| bank.bin(t)).collect();
    let r = bank.radius as isize;
    let side = 2 * bank.radius + 1;

    let mut field: Vec<f64> = (0..h * w).map(|_| rng.symmetric(1.0)).collect();
    let mut next = vec![0.0; h * w];
    for _ in 0..config.iterations {
        for y in 0..h {
            for x in 0..w {
                let k = &bank.kernels[bins[y * w + x]];
                let mut acc = 0.0;
                for dy in -r..=r {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let krow = &k[(dy + r) as usize * side..];
                    let row = &field[yy as usize * w..(yy as usize + 1) * w];
                    let x0 = (x as isize - r).max(0);
                    let x1 = (x as isize + r).min(w as isize - 1);
                    for xx in x0..=x1 {
                        acc += krow[(xx - x as isize + r) as usize] * row[xx as usize];
                    }
                }
                next[y * w + x] = acc;
            }
        }
        let rms = (next.iter().map(|v| v * v).sum::<f64>() / next.len() as f64).sqrt();
        let scale = if rms > 0.0 { 1.5 / rms } else { 0.0 };
        for (f, &n) in field.iter_mut().zip(&next) {
            *f = (n * scale).tanh();
        }
    }
    let data = field
        .iter()
        .map(|&v| {
            (127.5 * (1.0 - (config.sharpness * v).tanh()))
                .round()
                .clamp(0.0, 255.0) as f32
        })
        .collect();
    Tensor::from_vec(&[1, h, w], data)
}
