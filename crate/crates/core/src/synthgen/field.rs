//! Zero-pole orientation model.

use std::f64::consts::PI;

use super::ClassTemplate;
use crate::tensor::Tensor;

/// Ridge angle in `[0, pi)` at pixel position `(x, y)` (pixel units, `y`
/// downwards) of an `height x width` image:
///
/// `theta = bg(x, y) + 1/2 sum_cores arg(z - z_c) - 1/2 sum_deltas arg(z - z_d)`
pub fn orientation_at(template: &ClassTemplate, x: f64, y: f64, height: usize, width: usize) -> f64 {
    let (w, h) = (width as f64, height as f64);
    let (u, v) = (x / w, y / h);
    let mut theta = template.background + (template.bend * (u - 0.5) * (1.0 - v)).atan();
    for &(cx, cy) in &template.cores {
        theta += 0.5 * (y - cy * h).atan2(x - cx * w);
    }
    for &(dx, dy) in &template.deltas {
        theta -= 0.5 * (y - dy * h).atan2(x - dx * w);
    }
    theta.rem_euclid(PI)
}

/// Field sampled at pixel centres, `[H, W]`.
pub fn orientation_field(template: &ClassTemplate, height: usize, width: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            data.push(orientation_at(
                template,
                x as f64 + 0.5,
                y as f64 + 0.5,
                height,
                width,
            ));
        }
    }
    Tensor::from_vec(&[height.max(1), width.max(1)], data).expect("non-empty field")
}
