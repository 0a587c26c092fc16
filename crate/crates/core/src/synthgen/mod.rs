//! Synthetic fingerprints for the five Henry classes.
//!
//! Each finger gets a class, a jittered [`ClassTemplate`] (singular points and
//! background flow), a master image rendered by iterated oriented filtering of
//! white noise along the template's orientation field, and a number of
//! impressions degraded according to a [`QualityPreset`]. All randomness is
//! derived per finger from the dataset seed, so generation order and worker
//! count never affect the output.

mod field;
mod impression;
mod render;

pub use field::{orientation_at, orientation_field};
pub use impression::make_impression;
pub use render::{render_ridges, RenderConfig};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HenryClass {
    Arch,
    LeftLoop,
    RightLoop,
    TentedArch,
    Whorl,
}

impl HenryClass {
    pub const ALL: [HenryClass; 5] = [
        HenryClass::Arch,
        HenryClass::LeftLoop,
        HenryClass::RightLoop,
        HenryClass::TentedArch,
        HenryClass::Whorl,
    ];

    /// Real-world class frequencies, in [`HenryClass::ALL`] order.
    pub const NATURAL_PRIORS: [f64; 5] = [0.037, 0.338, 0.317, 0.029, 0.279];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> char {
        ['A', 'L', 'R', 'T', 'W'][self.index()]
    }

    pub fn from_code(c: &str) -> Option<Self> {
        Some(match c {
            "A" => HenryClass::Arch,
            "L" => HenryClass::LeftLoop,
            "R" => HenryClass::RightLoop,
            "T" => HenryClass::TentedArch,
            "W" => HenryClass::Whorl,
            _ => return None,
        })
    }

    pub fn natural_prior(self) -> f64 {
        Self::NATURAL_PRIORS[self.index()]
    }
}

impl fmt::Display for HenryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularKind {
    Core,
    Delta,
}

/// Class-defining flow: singular points plus a smooth background.
///
/// Positions are in the unit square, `x` across the width and `y` down the
/// height.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTemplate {
    pub cores: Vec<(f64, f64)>,
    pub deltas: Vec<(f64, f64)>,
    /// Constant background ridge angle (radians).
    pub background: f64,
    /// Arch curvature: adds `atan(bend * (x - 0.5) * (1 - y))` to the background.
    pub bend: f64,
}

impl ClassTemplate {
    /// The canonical, un-jittered template of a class.
    pub fn canonical(class: HenryClass) -> Self {
        let (cores, deltas, background, bend) = match class {
            HenryClass::Arch => (vec![], vec![], 0.0, 2.4),
            HenryClass::TentedArch => (vec![(0.5, 0.40)], vec![(0.5, 0.62)], 0.0, 0.0),
            HenryClass::LeftLoop => (vec![(0.44, 0.40)], vec![(0.72, 0.68)], 0.15, 0.0),
            HenryClass::RightLoop => (vec![(0.56, 0.40)], vec![(0.28, 0.68)], -0.15, 0.0),
            HenryClass::Whorl => (
                vec![(0.40, 0.40), (0.60, 0.52)],
                vec![(0.20, 0.74), (0.80, 0.74)],
                0.0,
                0.0,
            ),
        };
        Self {
            cores,
            deltas,
            background,
            bend,
        }
    }

    /// Per-finger variation of the canonical template.
    pub fn jittered(class: HenryClass, rng: &mut RngStream) -> Self {
        let mut t = Self::canonical(class);
        let (dx, dy) = (rng.symmetric(0.05), rng.symmetric(0.05));
        for p in t.cores.iter_mut().chain(t.deltas.iter_mut()) {
            p.0 += dx + rng.symmetric(0.025);
            p.1 += dy + rng.symmetric(0.025);
        }
        t.background += rng.symmetric(0.12);
        if class == HenryClass::Arch {
            t.bend *= rng.uniform_range(0.7, 1.3);
        }
        t
    }

    pub fn singular_points(&self) -> impl Iterator<Item = ((f64, f64), SingularKind)> + '_ {
        self.cores
            .iter()
            .map(|&p| (p, SingularKind::Core))
            .chain(self.deltas.iter().map(|&p| (p, SingularKind::Delta)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quality {
    /// High quality, no perturbations.
    Hq,
    Default,
    /// Varying quality with perturbations.
    Vq,
}

impl Quality {
    pub const ALL: [Quality; 3] = [Quality::Hq, Quality::Default, Quality::Vq];

    pub fn name(self) -> &'static str {
        match self {
            Quality::Hq => "hq",
            Quality::Default => "default",
            Quality::Vq => "vq",
        }
    }

    pub fn preset(self) -> QualityPreset {
        QualityPreset::of(self)
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hq" | "hqnopert" => Ok(Quality::Hq),
            "default" => Ok(Quality::Default),
            "vq" | "vqandpert" => Ok(Quality::Vq),
            _ => Err(Error::invalid(format!(
                "unknown quality preset {s:?} (hq, default, vq)"
            ))),
        }
    }
}

/// Perturbation magnitudes; each is the bound of a uniform draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityPreset {
    pub quality: Quality,
    /// Pixels, per axis.
    pub translation: f64,
    /// Degrees.
    pub rotation: f64,
    /// Grey levels.
    pub noise_sigma: f64,
    pub blobs: usize,
    /// Relative contrast change.
    pub contrast: f64,
}

impl QualityPreset {
    //                         shift  rot   noise blobs contrast
    const TABLE: [(f64, f64, f64, usize, f64); 3] = [
        (2.0, 3.0, 4.0, 0, 0.05),
        (6.0, 8.0, 10.0, 2, 0.15),
        (12.0, 15.0, 20.0, 5, 0.30),
    ];

    pub fn of(quality: Quality) -> Self {
        let (translation, rotation, noise_sigma, blobs, contrast) = Self::TABLE[quality as usize];
        Self {
            quality,
            translation,
            rotation,
            noise_sigma,
            blobs,
            contrast,
        }
    }

    /// A preset that leaves the master untouched.
    pub fn none(quality: Quality) -> Self {
        Self {
            quality,
            translation: 0.0,
            rotation: 0.0,
            noise_sigma: 0.0,
            blobs: 0,
            contrast: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassDistribution {
    Natural,
    Uniform,
}

impl ClassDistribution {
    pub fn weights(self) -> [f64; 5] {
        match self {
            ClassDistribution::Natural => HenryClass::NATURAL_PRIORS,
            ClassDistribution::Uniform => [0.2; 5],
        }
    }
}

impl FromStr for ClassDistribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(ClassDistribution::Natural),
            "uniform" => Ok(ClassDistribution::Uniform),
            _ => Err(Error::invalid(format!(
                "unknown class distribution {s:?} (natural, uniform)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintRecord {
    pub finger_id: u32,
    pub impression_id: u32,
    pub class: HenryClass,
    pub quality: Quality,
    /// `[1, H, W]`, integer grey levels in `0..=255`.
    pub image: Tensor<f32>,
}

/// Generator-side ground truth for one finger.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerTruth {
    pub finger_id: u32,
    pub class: HenryClass,
    pub template: ClassTemplate,
    pub ridge_frequency: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FingerprintDataset {
    pub records: Vec<FingerprintRecord>,
    /// Empty for datasets read back from disk.
    pub truth: Vec<FingerTruth>,
}

impl FingerprintDataset {
    pub fn class_histogram(&self) -> [usize; 5] {
        let mut h = [0; 5];
        for r in &self.records {
            h[r.class.index()] += 1;
        }
        h
    }

    /// Records with the given impression id.
    pub fn impression(&self, impression_id: u32) -> impl Iterator<Item = &FingerprintRecord> {
        self.records
            .iter()
            .filter(move |r| r.impression_id == impression_id)
    }
}

/// Image geometry and ridge rendering parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub render: RenderConfig,
}

impl GeneratorConfig {
    /// 384x288 (portrait), the scanner geometry of the reference databases.
    pub fn full() -> Self {
        Self {
            height: 384,
            width: 288,
            render: RenderConfig {
                frequency: 1.0 / 9.0,
                ..RenderConfig::default()
            },
        }
    }

    /// 128x96, for CPU-scale experiments.
    pub fn desk() -> Self {
        Self {
            height: 128,
            width: 96,
            render: RenderConfig {
                frequency: 1.0 / 6.0,
                ..RenderConfig::default()
            },
        }
    }
}

/// Class assignment for `n` fingers: counts follow the distribution by
/// largest-remainder apportionment, order is shuffled by `seed`.
pub fn assign_classes(n: usize, distribution: ClassDistribution, seed: u64) -> Vec<HenryClass> {
    let w = distribution.weights();
    let total: f64 = w.iter().sum();
    let exact: Vec<f64> = w.iter().map(|p| p / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..5).collect();
    rest.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - counts[a] as f64, exact[b] - counts[b] as f64);
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let missing = n - counts.iter().sum::<usize>();
    for &i in rest.iter().take(missing) {
        counts[i] += 1;
    }
    let mut classes: Vec<HenryClass> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(HenryClass::ALL[i], c))
        .collect();
    RngStream::new(seed, u64::MAX).shuffle(&mut classes);
    classes
}

fn finger_stream(seed: u64, finger_id: u32) -> RngStream {
    RngStream::new(seed, 0).derive(finger_id as u64)
}

/// Renders the clean master of one finger.
pub fn render_master(
    finger_id: u32,
    class: HenryClass,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<(FingerTruth, Tensor<f32>)> {
    let root = finger_stream(seed, finger_id);
    let template = ClassTemplate::jittered(class, &mut root.derive(1));
    let mut fr = root.derive(2);
    let frequency = config.render.frequency * fr.uniform_range(0.92, 1.08);
    let field = orientation_field(&template, config.height, config.width);
    let render = RenderConfig {
        frequency,
        ..config.render
    };
    let image = render_ridges(&field, &render, &mut root.derive(3))?;
    Ok((
        FingerTruth {
            finger_id,
            class,
            template,
            ridge_frequency: frequency,
        },
        image,
    ))
}

/// Generates fingers `ids` (1-based) of a dataset whose class list is
/// `classes` (indexed by `id - 1`).
pub fn generate_fingers(
    ids: &[u32],
    classes: &[HenryClass],
    impressions: u32,
    preset: &QualityPreset,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<Vec<(FingerTruth, Vec<FingerprintRecord>)>> {
    crate::par_map(ids, |&id| {
        let class = classes[(id - 1) as usize];
        let (truth, master) = render_master(id, class, seed, config)?;
        let root = finger_stream(seed, id);
        let records = (1..=impressions)
            .map(|imp| FingerprintRecord {
                finger_id: id,
                impression_id: imp,
                class,
                quality: preset.quality,
                image: make_impression(&master, preset, &mut root.derive(100 + imp as u64)),
            })
            .collect();
        Ok((truth, records))
    })
    .into_iter()
    .collect()
}

/// `fingers` fingers with `impressions` captures each. Fingers are numbered
/// from 1, impressions from 1.
pub fn generate_dataset(
    fingers: usize,
    impressions: u32,
    preset: &QualityPreset,
    distribution: ClassDistribution,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<FingerprintDataset> {
    if fingers == 0 || impressions == 0 {
        return Err(Error::invalid("need at least one finger and one impression"));
    }
    let classes = assign_classes(fingers, distribution, seed);
    let ids: Vec<u32> = (1..=fingers as u32).collect();
    let mut ds = FingerprintDataset::default();
    for (truth, records) in generate_fingers(&ids, &classes, impressions, preset, seed, config)? {
        ds.truth.push(truth);
        ds.records.extend(records);
    }
    Ok(ds)
}
