//! Classical pipeline: gradient orientation map, Poincare singular points,
//! a fixed-length feature vector with rejection, and k-NN.

mod knn;
mod orientation;
mod poincare;

use std::io::Write;

pub use knn::knn_classify;
pub use orientation::{estimate_orientation_map, OrientationMap};
pub use poincare::{poincare_singular_points, ring_sum, SingularPoint, SingularPointSet};

use crate::error::{Error, Result};
use crate::synthgen::{FingerprintRecord, SingularKind};
use crate::tensor::Tensor;

pub const COHERENCE_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub block_size: usize,
    /// Orientation cells of the downsampled map, `(rows, cols)`.
    pub grid: (usize, usize),
    pub coherence_threshold: f64,
    /// Smooth the block map once before singular-point detection.
    pub smooth: bool,
}

impl FeatureConfig {
    /// Block size 16 at 288 pixels of width, scaled proportionally (at least 4).
    pub fn for_width(width: usize) -> Self {
        Self {
            block_size: ((16 * width + 144) / 288).max(4),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        2 * self.grid.0 * self.grid.1 + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            block_size: 16,
            grid: (8, 6),
            coherence_threshold: COHERENCE_THRESHOLD,
            smooth: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// `(cos 2t, sin 2t)` per grid cell, then core count, delta count,
    /// core-delta distance (in map diagonals) and core-to-delta direction.
    pub values: Vec<f64>,
    pub singular_points: SingularPointSet,
}

impl FeatureVector {
    pub fn core_count(&self) -> usize {
        self.singular_points.count(SingularKind::Core)
    }

    pub fn delta_count(&self) -> usize {
        self.singular_points.count(SingularKind::Delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    NoCoreFound,
    LowCoherence,
}

impl Rejection {
    pub fn name(self) -> &'static str {
        match self {
            Rejection::NoCoreFound => "no-core-found",
            Rejection::LowCoherence => "low-coherence",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    Features(FeatureVector),
    Rejected(Rejection),
}

impl Extraction {
    pub fn features(&self) -> Option<&FeatureVector> {
        match self {
            Extraction::Features(f) => Some(f),
            Extraction::Rejected(_) => None,
        }
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, Extraction::Rejected(_))
    }
}

/// Detection map used for singular points under `config`.
pub fn detection_map(image: &Tensor<f32>, config: &FeatureConfig) -> Result<OrientationMap> {
    let map = estimate_orientation_map(image, config.block_size)?;
    Ok(if config.smooth { map.smoothed() } else { map })
}

/// Builds the feature vector, or rejects on low mean coherence, or on deltas
/// without any core.
pub fn extract_feature_vector(image: &Tensor<f32>, config: &FeatureConfig) -> Result<Extraction> {
    let (gr, gc) = config.grid;
    if gr == 0 || gc == 0 {
        return Err(Error::invalid("feature grid must be non-empty"));
    }
    let raw = estimate_orientation_map(image, config.block_size)?;
    if raw.mean_coherence() < config.coherence_threshold {
        return Ok(Extraction::Rejected(Rejection::LowCoherence));
    }
    let map = if config.smooth {
        raw.smoothed()
    } else {
        raw.clone()
    };
    let points = poincare_singular_points(&map);
    let (cores, deltas) = (
        points.count(SingularKind::Core),
        points.count(SingularKind::Delta),
    );
    if cores == 0 && deltas > 0 {
        return Ok(Extraction::Rejected(Rejection::NoCoreFound));
    }

    let mut cells = vec![(0.0, 0.0); gr * gc];
    for r in 0..raw.rows {
        for c in 0..raw.cols {
            let cell = (r * gr / raw.rows) * gc + c * gc / raw.cols;
            let (a, w) = (raw.angle(r, c), raw.coherence_at(r, c));
            cells[cell].0 += w * (2.0 * a).cos();
            cells[cell].1 += w * (2.0 * a).sin();
        }
    }
    let mut values = Vec::with_capacity(config.len());
    for (x, y) in cells {
        let n = x.hypot(y);
        if n > 0.0 {
            values.extend([x / n, y / n]);
        } else {
            values.extend([0.0, 0.0]);
        }
    }

    let diagonal = (raw.rows as f64).hypot(raw.cols as f64);
    let pair = points
        .cores()
        .flat_map(|c| points.deltas().map(move |d| (c.position, d.position)))
        .map(|(c, d)| ((d.0 - c.0).hypot(d.1 - c.1), c, d))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    let (dist, dir) = match pair {
        Some((len, c, d)) => (len / diagonal, (d.1 - c.1).atan2(d.0 - c.0)),
        None => (0.0, 0.0),
    };
    values.extend([cores as f64, deltas as f64, dist, dir]);
    Ok(Extraction::Features(FeatureVector {
        values,
        singular_points: points,
    }))
}

/// Writes `finger_id,impression_id,label,rejected,f0..` rows. Rejected rows
/// leave the feature columns empty.
pub fn write_feature_csv<W: Write>(
    out: W,
    rows: &[(&FingerprintRecord, &Extraction)],
    config: &FeatureConfig,
) -> Result<()> {
    let to_err = |e: csv::Error| Error::InvalidArgument(format!("feature CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "finger_id".to_string(),
        "impression_id".into(),
        "label".into(),
        "rejected".into(),
    ];
    header.extend((0..config.len()).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(to_err)?;
    for (rec, ex) in rows {
        let mut row = vec![
            rec.finger_id.to_string(),
            rec.impression_id.to_string(),
            rec.class.code().to_string(),
        ];
        match ex {
            Extraction::Features(f) => {
                row.push("0".into());
                row.extend(f.values.iter().map(|v| v.to_string()));
            }
            Extraction::Rejected(r) => {
                row.push(r.name().into());
                row.extend(std::iter::repeat_n(String::new(), config.len()));
            }
        }
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidArgument(format!("feature CSV: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn noise_is_rejected() {
        let mut rng = RngStream::new(3, 0);
        let data = (0..128 * 96).map(|_| (rng.uniform() * 255.0) as f32).collect();
        let img = Tensor::from_vec(&[1, 128, 96], data).unwrap();
        let ex = extract_feature_vector(&img, &FeatureConfig::for_width(96)).unwrap();
        assert_eq!(ex, Extraction::Rejected(Rejection::LowCoherence));
    }

    #[test]
    fn block_size_scales_with_width() {
        assert_eq!(FeatureConfig::for_width(288).block_size, 16);
        assert_eq!(FeatureConfig::for_width(96).block_size, 5);
        assert_eq!(FeatureConfig::default().len(), 100);
    }
}
