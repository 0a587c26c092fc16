use std::f64::consts::PI;

use super::orientation::OrientationMap;
use crate::synthgen::SingularKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPoint {
    /// Block coordinates `(col, row)`; fractional after merging.
    pub position: (f64, f64),
    pub kind: SingularKind,
}

impl SingularPoint {
    pub fn index(&self) -> f64 {
        match self.kind {
            SingularKind::Core => 0.5,
            SingularKind::Delta => -0.5,
        }
    }

    /// Position in pixels of the block centre.
    pub fn pixel_position(&self, block_size: usize) -> (f64, f64) {
        let b = block_size as f64;
        ((self.position.0 + 0.5) * b, (self.position.1 + 0.5) * b)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SingularPointSet {
    pub points: Vec<SingularPoint>,
}

impl SingularPointSet {
    pub fn count(&self, kind: SingularKind) -> usize {
        self.points.iter().filter(|p| p.kind == kind).count()
    }

    pub fn cores(&self) -> impl Iterator<Item = &SingularPoint> {
        self.points.iter().filter(|p| p.kind == SingularKind::Core)
    }

    pub fn deltas(&self) -> impl Iterator<Item = &SingularPoint> {
        self.points.iter().filter(|p| p.kind == SingularKind::Delta)
    }
}

/// Neighbour offsets `(dc, dr)` in order of increasing angle with y down.
const RING: [(isize, isize); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Principal value of a pi-periodic angle difference, in `(-pi/2, pi/2]`.
fn principal(d: f64) -> f64 {
    let mut d = d.rem_euclid(PI);
    if d > PI / 2.0 {
        d -= PI;
    }
    d
}

/// Sum of orientation differences around the 8-neighbour ring of an interior block.
pub fn ring_sum(map: &OrientationMap, r: usize, c: usize) -> f64 {
    let a = |k: usize| {
        let (dc, dr) = RING[k % 8];
        map.angle((r as isize + dr) as usize, (c as isize + dc) as usize)
    };
    (0..8).map(|k| principal(a(k + 1) - a(k))).sum()
}

/// Poincare detection on interior blocks: ring sum within pi/4 of +pi is a
/// core, of -pi a delta. 8-connected detections of one kind merge into their
/// centroid.
pub fn poincare_singular_points(map: &OrientationMap) -> SingularPointSet {
    let mut set = SingularPointSet::default();
    if map.rows < 3 || map.cols < 3 {
        return set;
    }
    let mut label = vec![None; map.rows * map.cols];
    for r in 1..map.rows - 1 {
        for c in 1..map.cols - 1 {
            let s = ring_sum(map, r, c);
            label[r * map.cols + c] = if (s - PI).abs() <= PI / 4.0 {
                Some(SingularKind::Core)
            } else if (s + PI).abs() <= PI / 4.0 {
                Some(SingularKind::Delta)
            } else {
                None
            };
        }
    }
    let mut seen = vec![false; label.len()];
    for start in 0..label.len() {
        let Some(kind) = label[start] else { continue };
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let (mut sc, mut sr, mut n) = (0.0, 0.0, 0.0);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / map.cols, i % map.cols);
            sc += c as f64;
            sr += r as f64;
            n += 1.0;
            for (dc, dr) in RING {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || rr >= map.rows as isize || cc >= map.cols as isize {
                    continue;
                }
                let j = rr as usize * map.cols + cc as usize;
                if !seen[j] && label[j] == Some(kind) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        set.points.push(SingularPoint {
            position: (sc / n, sr / n),
            kind,
        });
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map_from(rows: usize, cols: usize, f: impl Fn(f64, f64) -> f64) -> OrientationMap {
        let mut angles = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                angles.push(f(c as f64 + 0.5, r as f64 + 0.5).rem_euclid(PI));
            }
        }
        OrientationMap {
            rows,
            cols,
            block_size: 8,
            angles,
            coherence: vec![1.0; rows * cols],
        }
    }

    #[test]
    fn constant_field_is_empty() {
        let m = map_from(10, 10, |_, _| 0.8);
        assert!(poincare_singular_points(&m).points.is_empty());
    }

    #[test]
    fn planted_core_and_delta() {
        let core = map_from(12, 12, |x, y| 0.5 * (y - 6.2).atan2(x - 5.7));
        let s = poincare_singular_points(&core);
        assert_eq!(s.points.len(), 1);
        assert_eq!(s.points[0].kind, SingularKind::Core);
        let (px, py) = s.points[0].position;
        assert!((px + 0.5 - 5.7).abs() <= 1.0 && (py + 0.5 - 6.2).abs() <= 1.0);

        let delta = map_from(12, 12, |x, y| -0.5 * (y - 6.2).atan2(x - 5.7));
        let s = poincare_singular_points(&delta);
        assert_eq!(s.count(SingularKind::Delta), 1);
        assert_eq!(s.points[0].index(), -0.5);
    }

    #[test]
    fn too_small_map_is_empty() {
        assert!(poincare_singular_points(&map_from(2, 9, |x, _| x))
            .points
            .is_empty());
    }

    proptest! {
        #[test]
        fn smooth_fields_have_no_singularities(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -0.3f64..0.3, d in -0.3f64..0.3, off in 0.0f64..PI,
        ) {
            // Slowly varying potential: consecutive ring angles differ by < pi/2.
            let m = map_from(9, 9, |x, y| off + 0.1 * (a * x + b * y) + 0.05 * (c * x * x + d * x * y));
            for r in 1..8 {
                for col in 1..8 {
                    prop_assert!(ring_sum(&m, r, col).abs() < 1e-9);
                }
            }
            prop_assert!(poincare_singular_points(&m).points.is_empty());
        }
    }
}
