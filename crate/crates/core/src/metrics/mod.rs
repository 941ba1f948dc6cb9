//! Scanpath similarity: ScanMatch, MultiMatch and string-edit distance,
//! plus scanpath accuracy, report aggregation and cross-subject evaluation.

mod cross;
mod report;

pub use cross::{cross_subject_eval, CrossEvalConfig, CrossReport, CrossRow};
pub(crate) use cross::prediction_matrix;
pub use report::{
    ci95_half_width, evaluate, evaluate_resamplings, key_of, scanpath_accuracy, write_aggregate_csv, Aggregate, Ci95, MetricConfig,
    MetricReport, PairMetrics, ScanpathKey,
};

use serde::{Deserialize, Serialize};

use crate::data::{Fixation, ScanpathInstance};
use crate::error::{Error, Result};

pub const MAX_GRID_CELLS: usize = 4096;

/// Quantization grid for ScanMatch and edit distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { cols: 12, rows: 8 }
    }
}

impl GridSpec {
    pub fn new(cols: usize, rows: usize) -> Result<Self> {
        let g = GridSpec { cols, rows };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cols == 0 || self.rows == 0 || self.cols * self.rows > MAX_GRID_CELLS {
            return Err(Error::domain("grid", format!("{}x{} outside 1..={MAX_GRID_CELLS} cells", self.cols, self.rows)));
        }
        if self.cols * self.rows < 2 {
            return Err(Error::domain("grid", "needs at least two cells"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.cols * self.rows
    }

    pub fn cell(&self, x: f64, y: f64) -> usize {
        let col = ((x * self.cols as f64).floor().max(0.0) as usize).min(self.cols - 1);
        let row = ((y * self.rows as f64).floor().max(0.0) as usize).min(self.rows - 1);
        col + self.cols * row
    }

    /// Normalized center of `cell`.
    pub fn center(&self, cell: usize) -> (f64, f64) {
        (
            ((cell % self.cols) as f64 + 0.5) / self.cols as f64,
            ((cell / self.cols) as f64 + 0.5) / self.rows as f64,
        )
    }

    /// Distance between cell centers, in cell units.
    pub fn cell_distance(&self, p: usize, q: usize) -> f64 {
        let dx = (p % self.cols) as f64 - (q % self.cols) as f64;
        let dy = (p / self.cols) as f64 - (q / self.cols) as f64;
        dx.hypot(dy)
    }

    /// Largest center-to-center distance.
    pub fn diagonal(&self) -> f64 {
        ((self.cols - 1) as f64).hypot((self.rows - 1) as f64)
    }
}

pub fn quantize(fixations: &[Fixation], grid: &GridSpec) -> Vec<usize> {
    fixations.iter().map(|f| grid.cell(f.x, f.y)).collect()
}

fn non_empty(s: &ScanpathInstance) -> Result<()> {
    if s.fixations.is_empty() {
        return Err(Error::invalid(format!("empty scanpath for {} / {}", s.scene_id, s.subject_id)));
    }
    Ok(())
}

/// Best global alignment score of two cell sequences (Needleman-Wunsch).
pub fn alignment_score(a: &[usize], b: &[usize], grid: &GridSpec, gap: f64) -> f64 {
    let d_max = grid.diagonal();
    let mut prev: Vec<f64> = (0..=b.len()).map(|j| j as f64 * gap).collect();
    let mut cur = vec![0.0; b.len() + 1];
    for (i, &p) in a.iter().enumerate() {
        cur[0] = (i + 1) as f64 * gap;
        for (j, &q) in b.iter().enumerate() {
            let sub = prev[j] + d_max - grid.cell_distance(p, q);
            cur[j + 1] = sub.max(prev[j + 1] + gap).max(cur[j] + gap);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ScanMatch similarity in [0, 1].
pub fn scanmatch(a: &ScanpathInstance, b: &ScanpathInstance, grid: &GridSpec, gap_penalty: f64) -> Result<f64> {
    non_empty(a)?;
    non_empty(b)?;
    grid.validate()?;
    let (qa, qb) = (quantize(&a.fixations, grid), quantize(&b.fixations, grid));
    let score = alignment_score(&qa, &qb, grid, gap_penalty);
    Ok((score / (grid.diagonal() * qa.len().max(qb.len()) as f64)).clamp(0.0, 1.0))
}

/// Levenshtein distance between quantized scanpaths.
pub fn sed(a: &ScanpathInstance, b: &ScanpathInstance, grid: &GridSpec) -> Result<usize> {
    non_empty(a)?;
    non_empty(b)?;
    Ok(strsim::generic_levenshtein(&quantize(&a.fixations, grid), &quantize(&b.fixations, grid)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiMatchScore {
    pub shape: f64,
    pub direction: f64,
    pub length: f64,
    pub position: f64,
    pub duration: f64,
    pub mean: f64,
}

impl MultiMatchScore {
    pub fn from_components(shape: f64, direction: f64, length: f64, position: f64, duration: f64) -> Self {
        MultiMatchScore {
            shape,
            direction,
            length,
            position,
            duration,
            mean: (shape + direction + length + position + duration) / 5.0,
        }
    }

    pub fn components(&self) -> [f64; 5] {
        [self.shape, self.direction, self.length, self.position, self.duration]
    }
}

/// One saccade: start point, displacement and the duration of the
/// fixation it leaves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Saccade {
    pub start: (f64, f64),
    pub vector: (f64, f64),
    pub duration_ms: f64,
}

pub fn saccades(fixations: &[Fixation]) -> Vec<Saccade> {
    fixations
        .windows(2)
        .map(|w| Saccade {
            start: (w[0].x, w[0].y),
            vector: (w[1].x - w[0].x, w[1].y - w[0].y),
            duration_ms: f64::from(w[0].duration_ms),
        })
        .collect()
}

/// Vector-difference cost between two saccades.
pub fn shape_cost(a: &Saccade, b: &Saccade) -> f64 {
    (a.vector.0 - b.vector.0).hypot(a.vector.1 - b.vector.1)
}

/// Minimum summed shape cost over monotone pairings that start with both
/// first saccades, end with both last ones and advance one or both
/// sequences per step. Returns the cost and the aligned index pairs.
pub fn mm_alignment(a: &[Saccade], b: &[Saccade]) -> (f64, Vec<(usize, usize)>) {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return (0.0, Vec::new());
    }
    let mut acc = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[i - 1][j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[i - 1][j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i][j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i][j] = best + shape_cost(&a[i], &b[j]);
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { acc[i - 1][j - 1] } else { f64::INFINITY };
        let up = if i > 0 { acc[i - 1][j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i][j - 1] } else { f64::INFINITY };
        (i, j) = if diag <= up && diag <= left {
            (i - 1, j - 1)
        } else if up <= left {
            (i - 1, j)
        } else {
            (i, j - 1)
        };
        path.push((i, j));
    }
    path.reverse();
    (acc[n - 1][m - 1], path)
}

fn angle(v: (f64, f64)) -> f64 {
    v.1.atan2(v.0)
}

/// MultiMatch similarity on the five dimensions, without saccade
/// simplification.
pub fn multimatch(a: &ScanpathInstance, b: &ScanpathInstance) -> Result<MultiMatchScore> {
    for s in [a, b] {
        if s.fixations.len() < 2 {
            return Err(Error::invalid(format!(
                "MultiMatch needs at least 2 fixations, {} / {} has {}",
                s.scene_id,
                s.subject_id,
                s.fixations.len()
            )));
        }
    }
    let (sa, sb) = (saccades(&a.fixations), saccades(&b.fixations));
    let (_, path) = mm_alignment(&sa, &sb);
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut sums = [0.0; 5];
    for &(i, j) in &path {
        let (p, q) = (&sa[i], &sb[j]);
        let len_p = p.vector.0.hypot(p.vector.1);
        let len_q = q.vector.0.hypot(q.vector.1);
        let mut turn = (angle(p.vector) - angle(q.vector)).abs();
        if turn > std::f64::consts::PI {
            turn = 2.0 * std::f64::consts::PI - turn;
        }
        let longest = p.duration_ms.max(q.duration_ms);
        sums[0] += shape_cost(p, q) / (2.0 * sqrt2);
        sums[1] += turn / std::f64::consts::PI;
        sums[2] += (len_p - len_q).abs() / sqrt2;
        sums[3] += (p.start.0 - q.start.0).hypot(p.start.1 - q.start.1) / sqrt2;
        sums[4] += if longest > 0.0 { (p.duration_ms - q.duration_ms).abs() / longest } else { 0.0 };
    }
    let k = path.len() as f64;
    let sim = |s: f64| (1.0 - s / k).clamp(0.0, 1.0);
    Ok(MultiMatchScore::from_components(sim(sums[0]), sim(sums[1]), sim(sums[2]), sim(sums[3]), sim(sums[4])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FREE_VIEWING;
    use crate::seed;
    use rand::Rng;

    fn path(points: &[(f64, f64, u32)]) -> ScanpathInstance {
        ScanpathInstance {
            scene_id: "scene000".into(),
            subject_id: "s0".into(),
            task: FREE_VIEWING.into(),
            fixations: points.iter().map(|&(x, y, d)| Fixation::new(x, y, d)).collect(),
        }
    }

    fn random_path(rng: &mut seed::Rng, len: usize) -> ScanpathInstance {
        let pts: Vec<(f64, f64, u32)> = (0..len).map(|_| (rng.random(), rng.random(), rng.random_range(50..1000))).collect();
        path(&pts)
    }

    #[test]
    fn quantize_corners_and_loop() {
        let g = GridSpec::default();
        assert_eq!(quantize(&[Fixation::new(0.0, 0.0, 100)], &g), vec![0]);
        assert_eq!(quantize(&[Fixation::new(1.0, 1.0, 100)], &g), vec![95]);
        let mut rng = seed::rng(3);
        let p = random_path(&mut rng, 20);
        let q = quantize(&p.fixations, &g);
        assert_eq!(q.len(), 20);
        for (f, c) in p.fixations.iter().zip(&q) {
            let col = ((f.x * 12.0) as usize).min(11);
            let row = ((f.y * 8.0) as usize).min(7);
            assert_eq!(*c, col + 12 * row);
        }
    }

    #[test]
    fn grid_bounds() {
        assert!(GridSpec::new(0, 3).is_err());
        assert!(GridSpec::new(1, 1).is_err());
        assert!(GridSpec::new(64, 65).is_err());
        assert!(GridSpec::new(64, 64).is_ok());
        let g = GridSpec::default();
        for c in 0..g.cells() {
            let (x, y) = g.center(c);
            assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
            assert_eq!(g.cell(x, y), c);
        }
    }

    #[test]
    fn scanmatch_basics() {
        let g = GridSpec::default();
        let s = path(&[(0.1, 0.1, 100), (0.5, 0.4, 200), (0.9, 0.9, 300)]);
        assert_eq!(scanmatch(&s, &s, &g, 0.0).unwrap(), 1.0);
        let a = path(&[(0.0, 0.0, 100)]);
        let b = path(&[(1.0, 1.0, 100)]);
        assert_eq!(scanmatch(&a, &b, &g, 0.0).unwrap(), 0.0);
        assert!(scanmatch(&a, &path(&[]), &g, 0.0).is_err());
    }

    #[test]
    fn sed_basics() {
        let g = GridSpec::default();
        let s = path(&[(0.1, 0.1, 100), (0.5, 0.4, 200)]);
        assert_eq!(sed(&s, &s, &g).unwrap(), 0);
        let t = path(&[(0.1, 0.1, 100), (0.9, 0.9, 200)]);
        assert_eq!(sed(&s, &t, &g).unwrap(), 1);
    }

    #[test]
    fn multimatch_identity_and_translation() {
        let s = path(&[(0.1, 0.1, 100), (0.5, 0.4, 200), (0.3, 0.8, 300)]);
        let mm = multimatch(&s, &s).unwrap();
        assert_eq!(mm.components(), [1.0; 5]);
        assert_eq!(mm.mean, 1.0);
        let t = path(&[(0.2, 0.15, 100), (0.6, 0.45, 200), (0.4, 0.85, 300)]);
        let mm = multimatch(&s, &t).unwrap();
        assert!((mm.shape - 1.0).abs() < 1e-12 && (mm.length - 1.0).abs() < 1e-12 && (mm.direction - 1.0).abs() < 1e-12);
        assert!(mm.position < 1.0);
        assert!(multimatch(&s, &path(&[(0.5, 0.5, 100)])).is_err());
    }

    #[test]
    fn degradation_never_raises_scanmatch() {
        let g = GridSpec::default();
        let mut rng = seed::rng(11);
        for _ in 0..100 {
            let len = rng.random_range(1..8);
            let a = random_path(&mut rng, len);
            let k = rng.random_range(0..len);
            let cell = quantize(&a.fixations[k..=k], &g)[0];
            let far = (0..g.cells())
                .max_by(|&p, &q| g.cell_distance(cell, p).total_cmp(&g.cell_distance(cell, q)))
                .unwrap();
            let mut b = a.clone();
            let (x, y) = g.center(far);
            b.fixations[k] = Fixation::new(x, y, b.fixations[k].duration_ms);
            assert!(scanmatch(&b, &a, &g, 0.0).unwrap() <= scanmatch(&a, &a, &g, 0.0).unwrap());
        }
    }
}
