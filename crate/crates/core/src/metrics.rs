//! Region similarity (J), boundary accuracy (F) and their mean.

use crate::error::{ensure, Result};

/// Boundary tolerance as a fraction of the image diagonal.
pub const BOUNDARY_TOLERANCE_FRACTION: f64 = 0.008;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        ensure!(
            data.len() == height * width,
            Shape,
            "mask data has {} pixels, expected {height}x{width}",
            data.len()
        );
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    /// Pixels equal to `id` in a label map.
    pub fn from_labels(height: usize, width: usize, labels: &[u8], id: u8) -> Result<Self> {
        Self::new(height, width, labels.iter().map(|&l| l == id).collect())
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn hflip(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Self { data, ..*self }
    }

    /// Foreground pixels with a background 4-neighbour or on the image edge.
    pub fn boundary(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut data = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                if !self.get(y, x) {
                    continue;
                }
                data[y * w + x] = y == 0
                    || x == 0
                    || y + 1 == h
                    || x + 1 == w
                    || !self.get(y - 1, x)
                    || !self.get(y + 1, x)
                    || !self.get(y, x - 1)
                    || !self.get(y, x + 1);
            }
        }
        Self { data, ..*self }
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        ensure!(
            (self.height, self.width) == (other.height, other.width),
            Contract,
            "mask extents differ: {}x{} vs {}x{}",
            self.height,
            self.width,
            other.height,
            other.width
        );
        Ok(())
    }
}

/// Intersection over union; two empty masks score 1.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.check_same(gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// `ceil(0.008 * diagonal)` pixels.
pub fn default_tolerance(height: usize, width: usize) -> usize {
    let diag = ((height * height + width * width) as f64).sqrt();
    (BOUNDARY_TOLERANCE_FRACTION * diag).ceil() as usize
}

/// Fraction of `from` boundary pixels with a `to` boundary pixel within
/// Euclidean distance `tol`, searched over a `(2 tol + 1)^2` window.
fn matched_fraction(from: &BinaryMask, to: &BinaryMask, tol: usize) -> (usize, usize) {
    let (h, w) = (from.height as isize, from.width as isize);
    let t = tol as isize;
    let t2 = t * t;
    let (mut hit, mut total) = (0, 0);
    for y in 0..h {
        for x in 0..w {
            if !from.get(y as usize, x as usize) {
                continue;
            }
            total += 1;
            let found = (-t..=t).any(|dy| {
                (-t..=t).any(|dx| {
                    let (yy, xx) = (y + dy, x + dx);
                    dy * dy + dx * dx <= t2
                        && (0..h).contains(&yy)
                        && (0..w).contains(&xx)
                        && to.get(yy as usize, xx as usize)
                })
            });
            hit += usize::from(found);
        }
    }
    (hit, total)
}

/// Boundary F-measure with distance tolerance `tol` (pixels).
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask, tol: usize) -> Result<f64> {
    pred.check_same(gt)?;
    let pb = pred.boundary();
    let gb = gt.boundary();
    let (p_hit, p_total) = matched_fraction(&pb, &gb, tol);
    let (r_hit, r_total) = matched_fraction(&gb, &pb, tol);
    Ok(match (p_total, r_total) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => {
            let precision = p_hit as f64 / p_total as f64;
            let recall = r_hit as f64 / r_total as f64;
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        }
    })
}

/// One object in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameObjectScore {
    pub frame_index: usize,
    pub object_id: u8,
    /// In `[0, 1]`.
    pub j: f64,
    /// In `[0, 1]`.
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JfSummary {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

/// Mean J and F over every object and frame, on a 0-100 scale.
///
/// Frame 0 carries the given annotation and is excluded, unless it is the
/// only frame present.
pub fn jf_score(entries: &[FrameObjectScore]) -> Result<JfSummary> {
    ensure!(!entries.is_empty(), Contract, "no scores to summarize");
    let later: Vec<&FrameObjectScore> = entries.iter().filter(|e| e.frame_index > 0).collect();
    let used: Vec<&FrameObjectScore> = if later.is_empty() {
        entries.iter().collect()
    } else {
        later
    };
    let n = used.len() as f64;
    let j = 100.0 * used.iter().map(|e| e.j).sum::<f64>() / n;
    let f = 100.0 * used.iter().map(|e| e.f).sum::<f64>() / n;
    Ok(JfSummary {
        j,
        f,
        jf: (j + f) / 2.0,
    })
}

/// Scores every object of a frame: `(J, F)` per id, with the default tolerance.
pub fn score_frame(
    height: usize,
    width: usize,
    pred: &[u8],
    gt: &[u8],
    object_ids: &[u8],
) -> Result<Vec<(u8, f64, f64)>> {
    let tol = default_tolerance(height, width);
    object_ids
        .iter()
        .map(|&id| {
            let p = BinaryMask::from_labels(height, width, pred, id)?;
            let g = BinaryMask::from_labels(height, width, gt, id)?;
            Ok((id, jaccard(&p, &g)?, boundary_f(&p, &g, tol)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, y0: usize, x0: usize, sh: usize, sw: usize) -> BinaryMask {
        let data = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                (y0..y0 + sh).contains(&y) && (x0..x0 + sw).contains(&x)
            })
            .collect();
        BinaryMask::new(h, w, data).unwrap()
    }

    #[test]
    fn jaccard_cases() {
        let a = square(16, 16, 2, 2, 8, 8);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let b = square(16, 16, 2, 11, 3, 3);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
        // shifted by 4 rows: overlap 4x8 = 32, union 96
        let c = square(16, 16, 6, 2, 8, 8);
        assert!((jaccard(&a, &c).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let e = BinaryMask::empty(4, 4);
        assert_eq!(jaccard(&e, &e).unwrap(), 1.0);
        assert!(jaccard(&e, &BinaryMask::empty(4, 5)).is_err());
    }

    #[test]
    fn boundary_cases() {
        let a = square(16, 16, 4, 4, 8, 8);
        assert_eq!(boundary_f(&a, &a, 0).unwrap(), 1.0);
        assert_eq!(boundary_f(&a, &a, 3).unwrap(), 1.0);
        let e = BinaryMask::empty(16, 16);
        assert_eq!(boundary_f(&e, &a, 2).unwrap(), 0.0);
        assert_eq!(boundary_f(&a, &e, 2).unwrap(), 0.0);
        assert_eq!(boundary_f(&e, &e, 2).unwrap(), 1.0);
    }

    #[test]
    fn boundary_ring_of_square() {
        let a = square(8, 8, 2, 2, 4, 4);
        assert_eq!(a.boundary().count(), 12);
        let full = square(3, 3, 0, 0, 3, 3);
        assert_eq!(full.boundary().count(), 8);
    }

    #[test]
    fn default_tolerance_values() {
        assert_eq!(default_tolerance(480, 854), 8);
        assert_eq!(default_tolerance(64, 64), 1);
    }

    #[test]
    fn jf_cases() {
        let perfect: Vec<_> = (1..4)
            .map(|t| FrameObjectScore {
                frame_index: t,
                object_id: 1,
                j: 1.0,
                f: 1.0,
            })
            .collect();
        let s = jf_score(&perfect).unwrap();
        assert_eq!((s.j, s.f, s.jf), (100.0, 100.0, 100.0));

        let mixed = [
            FrameObjectScore { frame_index: 1, object_id: 1, j: 1.0, f: 1.0 },
            FrameObjectScore { frame_index: 2, object_id: 1, j: 0.0, f: 0.0 },
        ];
        let s = jf_score(&mixed).unwrap();
        assert_eq!((s.j, s.f, s.jf), (50.0, 50.0, 50.0));

        let with_first = [
            FrameObjectScore { frame_index: 0, object_id: 1, j: 0.0, f: 0.0 },
            FrameObjectScore { frame_index: 1, object_id: 1, j: 0.5, f: 1.0 },
        ];
        let s = jf_score(&with_first).unwrap();
        assert_eq!((s.j, s.f, s.jf), (50.0, 100.0, 75.0));
        assert!(jf_score(&[]).is_err());
    }
}
