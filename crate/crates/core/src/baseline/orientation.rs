use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Block-wise ridge orientation in `[0, pi)` (x right, y down) with
/// coherence in `[0, 1]`. Row-major over `rows x cols` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationMap {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    pub angles: Vec<f64>,
    pub coherence: Vec<f64>,
}

impl OrientationMap {
    pub fn angle(&self, r: usize, c: usize) -> f64 {
        self.angles[r * self.cols + c]
    }

    pub fn coherence_at(&self, r: usize, c: usize) -> f64 {
        self.coherence[r * self.cols + c]
    }

    pub fn mean_coherence(&self) -> f64 {
        self.coherence.iter().sum::<f64>() / self.coherence.len() as f64
    }

    /// Doubled-angle averaging over each 3x3 neighbourhood (clipped at the
    /// border), weighted by coherence. Coherence is left unchanged.
    pub fn smoothed(&self) -> Self {
        let mut angles = vec![0.0; self.angles.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (mut sx, mut sy) = (0.0, 0.0);
                for rr in r.saturating_sub(1)..(r + 2).min(self.rows) {
                    for cc in c.saturating_sub(1)..(c + 2).min(self.cols) {
                        let (a, w) = (self.angle(rr, cc), self.coherence_at(rr, cc));
                        sx += w * (2.0 * a).cos();
                        sy += w * (2.0 * a).sin();
                    }
                }
                angles[r * self.cols + c] = if sx == 0.0 && sy == 0.0 {
                    self.angle(r, c)
                } else {
                    wrap_pi(0.5 * sy.atan2(sx))
                };
            }
        }
        Self {
            angles,
            ..self.clone()
        }
    }
}

fn wrap_pi(a: f64) -> f64 {
    let w = a.rem_euclid(PI);
    if w >= PI {
        0.0
    } else {
        w
    }
}

/// Sobel gradients with edge replication; returns `(gx, gy)`, y pointing down.
fn sobel(img: &[f32], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        img[y * w + x] as f64
    };
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        }
    }
    (gx, gy)
}

/// Gradient-based orientation map of a `[1, H, W]` or `[H, W]` image.
pub fn estimate_orientation_map(image: &Tensor<f32>, block_size: usize) -> Result<OrientationMap> {
    let (h, w) = match *image.shape() {
        [1, h, w] | [h, w] => (h, w),
        _ => {
            return Err(Error::shape(format!(
                "expected a grey image, got {:?}",
                image.shape()
            )))
        }
    };
    if block_size == 0 || h < block_size || w < block_size {
        return Err(Error::shape(format!(
            "image {h}x{w} smaller than block {block_size}"
        )));
    }
    let (gx, gy) = sobel(image.data(), h, w);
    let (rows, cols) = (h / block_size, w / block_size);
    let mut angles = Vec::with_capacity(rows * cols);
    let mut coherence = Vec::with_capacity(rows * cols);
    for br in 0..rows {
        for bc in 0..cols {
            let (mut sxx_yy, mut sxy, mut energy) = (0.0, 0.0, 0.0);
            for y in br * block_size..(br + 1) * block_size {
                for x in bc * block_size..(bc + 1) * block_size {
                    let (a, b) = (gx[y * w + x], gy[y * w + x]);
                    sxx_yy += a * a - b * b;
                    sxy += 2.0 * a * b;
                    energy += a * a + b * b;
                }
            }
            angles.push(wrap_pi(0.5 * sxy.atan2(sxx_yy) + PI / 2.0));
            let coh = if energy > 0.0 {
                (sxx_yy.hypot(sxy) / energy).clamp(0.0, 1.0)
            } else {
                0.0
            };
            coherence.push(coh);
        }
    }
    Ok(OrientationMap {
        rows,
        cols,
        block_size,
        angles,
        coherence,
    })
}
