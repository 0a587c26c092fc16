//! Capture perturbations.

use super::QualityPreset;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Grey level used wherever the capture has no finger.
pub const BACKGROUND: f64 = 230.0;

/// One capture of `master`: rigid motion about the image centre, contrast
/// change, elliptical occlusions and additive Gaussian noise, each drawn
/// uniformly within the preset bounds. The output has the master's shape and
/// integer grey levels in `0..=255`.
pub fn make_impression(master: &Tensor<f32>, preset: &QualityPreset, rng: &mut RngStream) -> Tensor<f32> {
    let (h, w) = (master.shape()[1], master.shape()[2]);
    // All draws happen up front and in a fixed order, whatever the preset.
    let tx = rng.symmetric(preset.translation);
    let ty = rng.symmetric(preset.translation);
    let angle = rng.symmetric(preset.rotation).to_radians();
    let contrast = 1.0 + rng.symmetric(preset.contrast);
    let blobs: Vec<[f64; 5]> = (0..preset.blobs)
        .map(|_| {
            let m = h.min(w) as f64;
            [
                rng.uniform_range(0.1, 0.9) * w as f64,
                rng.uniform_range(0.1, 0.9) * h as f64,
                rng.uniform_range(0.08, 0.2) * m,
                rng.uniform_range(0.08, 0.2) * m,
                rng.uniform_range(110.0, 220.0),
            ]
        })
        .collect();
    let mut noise_rng = rng.derive(0);

    let src = master.data();
    let mut out: Vec<f64> = if tx == 0.0 && ty == 0.0 && angle == 0.0 {
        src.iter().map(|&v| v as f64).collect()
    } else {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (s, c) = angle.sin_cos();
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                // inverse map: output pixel -> master coordinates
                let (dx, dy) = (x as f64 - cx - tx, y as f64 - cy - ty);
                let sx = c * dx + s * dy + cx;
                let sy = -s * dx + c * dy + cy;
                v.push(bilinear(src, h, w, sx, sy));
            }
        }
        v
    };

    if contrast != 1.0 {
        for v in &mut out {
            *v = 127.5 + contrast * (*v - 127.5);
        }
    }
    for [bx, by, rx, ry, grey] in blobs {
        for y in 0..h {
            for x in 0..w {
                let d = ((x as f64 - bx) / rx).powi(2) + ((y as f64 - by) / ry).powi(2);
                if d < 1.3 {
                    // opaque core with a short soft rim
                    let a = ((1.3 - d) / 0.3).min(1.0);
                    let v = &mut out[y * w + x];
                    *v = (1.0 - a) * *v + a * grey;
                }
            }
        }
    }
    if preset.noise_sigma > 0.0 {
        for v in &mut out {
            *v += preset.noise_sigma * noise_rng.normal();
        }
    }
    let data = out.iter().map(|v| v.round().clamp(0.0, 255.0) as f32).collect();
    Tensor::from_vec(master.shape(), data).expect("same shape as master")
}

fn bilinear(src: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return BACKGROUND;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |yy: usize, xx: usize| src[yy * w + xx] as f64;
    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
    let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}
