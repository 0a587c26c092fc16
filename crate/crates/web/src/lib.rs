//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each export is a thin shim over a plain Rust function of the same name
//! with a `_native` suffix, which is what the tests call.

use fpclass_core::baseline::{
    detection_map, estimate_orientation_map, poincare_singular_points, FeatureConfig,
};
use fpclass_core::evaluation::{penetration_rate_avg, ConfusionMatrix};
use fpclass_core::synthgen::{generate_fingers, GeneratorConfig, HenryClass, Quality, QualityPreset};
use fpclass_core::Tensor;
use wasm_bindgen::prelude::*;

/// Grey image handed to JavaScript.
#[wasm_bindgen]
pub struct GreyImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

#[wasm_bindgen]
impl GreyImage {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major grey levels.
    #[wasm_bindgen(getter)]
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }
}

fn to_tensor(pixels: &[u8], width: usize, height: usize) -> Result<Tensor<f32>, String> {
    if pixels.len() != width * height {
        return Err(format!("{} pixels for a {width}x{height} image", pixels.len()));
    }
    Tensor::from_vec(
        &[1, height, width],
        pixels.iter().map(|&p| f32::from(p)).collect(),
    )
    .map_err(|e| e.to_string())
}

/// Impression 1 of finger 1 with the given class, as `generate` would write it. `size` is `full` or `desk`.
pub fn render_fingerprint_native(
    class: &str,
    quality: &str,
    seed: u32,
    size: &str,
) -> Result<GreyImage, String> {
    let class = HenryClass::from_code(class).ok_or_else(|| format!("unknown class {class:?}"))?;
    let config = match size {
        "full" => GeneratorConfig::full(),
        "desk" => GeneratorConfig::desk(),
        other => return Err(format!("unknown size {other:?}")),
    };
    let preset = match quality {
        "clean" => QualityPreset::none(Quality::Hq),
        q => QualityPreset::of(q.parse::<Quality>().map_err(|e| e.to_string())?),
    };
    let mut fingers =
        generate_fingers(&[1], &[class], 1, &preset, u64::from(seed), &config).map_err(|e| e.to_string())?;
    let image = fingers.pop().expect("one finger").1.remove(0).image;
    Ok(GreyImage {
        width: config.width,
        height: config.height,
        pixels: image.data().iter().map(|&v| v as u8).collect(),
    })
}

/// Detected singular points as `[x, y, index]` triples in pixels, index `+0.5`
/// for cores and `-0.5` for deltas.
pub fn singular_points_native(pixels: &[u8], width: usize, height: usize) -> Result<Vec<f64>, String> {
    let image = to_tensor(pixels, width, height)?;
    let config = FeatureConfig::for_width(width);
    let map = detection_map(&image, &config).map_err(|e| e.to_string())?;
    Ok(poincare_singular_points(&map)
        .points
        .iter()
        .flat_map(|p| {
            let (x, y) = p.pixel_position(config.block_size);
            [x, y, p.index()]
        })
        .collect())
}

/// `[rows, cols, block, angle_0, coherence_0, angle_1, ...]`, angles in
/// radians with y pointing down.
pub fn orientation_map_native(pixels: &[u8], width: usize, height: usize) -> Result<Vec<f64>, String> {
    let image = to_tensor(pixels, width, height)?;
    let block = FeatureConfig::for_width(width).block_size;
    let map = estimate_orientation_map(&image, block).map_err(|e| e.to_string())?;
    let mut out = vec![map.rows as f64, map.cols as f64, block as f64];
    for (a, c) in map.angles.iter().zip(&map.coherence) {
        out.extend([*a, *c]);
    }
    Ok(out)
}

/// Average penetration rate of a 5x5 confusion matrix (rows true, columns
/// predicted, order A L R T W), followed by overall accuracy.
pub fn penetration_rate_native(counts: &[f64]) -> Result<Vec<f64>, String> {
    if counts.len() != 25 {
        return Err(format!("expected 25 counts, got {}", counts.len()));
    }
    let mut m = [[0u64; 5]; 5];
    for (i, &c) in counts.iter().enumerate() {
        if !(c >= 0.0 && c.fract() == 0.0 && c.is_finite()) {
            return Err(format!("count {c} is not a non-negative integer"));
        }
        m[i / 5][i % 5] = c as u64;
    }
    let m = ConfusionMatrix::from_counts(m);
    let stats = m.class_stats().map_err(|e| e.to_string())?;
    let r = penetration_rate_avg(&stats).map_err(|e| e.to_string())?;
    Ok(vec![r, m.accuracy()])
}

#[wasm_bindgen]
pub fn render_fingerprint(class: &str, quality: &str, seed: u32, size: &str) -> Result<GreyImage, JsError> {
    render_fingerprint_native(class, quality, seed, size).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn singular_points(pixels: &[u8], width: usize, height: usize) -> Result<Vec<f64>, JsError> {
    singular_points_native(pixels, width, height).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn orientation_map(pixels: &[u8], width: usize, height: usize) -> Result<Vec<f64>, JsError> {
    orientation_map_native(pixels, width, height).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn penetration_rate(counts: &[f64]) -> Result<Vec<f64>, JsError> {
    penetration_rate_native(counts).map_err(|e| JsError::new(&e))
}
