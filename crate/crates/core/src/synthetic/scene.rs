use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_GRID: usize = 16;

/// A semantic scene: one category label and one salience value per cell,
/// stored row-major (`index = row * width_cells + col`). Category 0 is the
/// background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGrid {
    pub width_cells: usize,
    pub height_cells: usize,
    pub channel_count: usize,
    pub labels: Vec<u16>,
    pub salience: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_channel: Option<usize>,
}

impl SceneGrid {
    pub fn cell_count(&self) -> usize {
        self.width_cells * self.height_cells
    }

    /// Normalized center of a cell.
    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let col = cell % self.width_cells;
        let row = cell / self.width_cells;
        (
            (col as f64 + 0.5) / self.width_cells as f64,
            (row as f64 + 0.5) / self.height_cells as f64,
        )
    }

    /// Cell containing a normalized point; the right and bottom borders
    /// belong to the last column and row.
    pub fn cell_at(&self, x: f64, y: f64) -> usize {
        let col = ((x * self.width_cells as f64) as usize).min(self.width_cells - 1);
        let row = ((y * self.height_cells as f64) as usize).min(self.height_cells - 1);
        row * self.width_cells + col
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.cell_count();
        if cells == 0 || self.labels.len() != cells || self.salience.len() != cells {
            return Err(Error::domain("labels", "grid size does not match label/salience counts"));
        }
        if let Some(l) = self.labels.iter().find(|&&l| usize::from(l) >= self.channel_count) {
            return Err(Error::domain("labels", format!("label {l} >= channel_count")));
        }
        if self.salience.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::domain("salience", "outside [0, 1]"));
        }
        if let Some(t) = self.target_channel {
            if !self.labels.iter().any(|&l| usize::from(l) == t) {
                return Err(Error::domain("target_channel", format!("no cell of category {t}")));
            }
        }
        Ok(())
    }
}

/// Places 3 to 8 non-touching rectangular blobs of non-background
/// categories on a 16x16 grid. The first blobs cycle through every object
/// category so each appears when the blob count allows it. Blob cells are
/// more salient than background.
pub fn generate_scene(channel_count: usize, seed: u64) -> SceneGrid {
    let channel_count = channel_count.max(2);
    let (w, h) = (DEFAULT_GRID, DEFAULT_GRID);
    let mut rng = seed::rng(seed);
    let mut labels = vec![0u16; w * h];
    let mut salience: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..0.2)).collect();
    let wanted = rng.random_range(3..=8);
    let objects = channel_count - 1;
    let mut placed = 0;
    let mut attempts = 0;
    while placed < wanted && attempts < 2000 {
        attempts += 1;
        // shrink blobs when space runs out
        let max_r = if attempts > 400 { 0 } else { 2 };
        let rx = rng.random_range(0..=max_r);
        let ry = rng.random_range(0..=max_r);
        let cx = rng.random_range(rx..w - rx);
        let cy = rng.random_range(ry..h - ry);
        let fits = (cy - ry..=cy + ry).all(|y| {
            (cx - rx..=cx + rx).all(|x| neighbourhood_free(&labels, w, h, x, y))
        });
        if !fits {
            continue;
        }
        let category = if placed < objects {
            1 + placed
        } else {
            rng.random_range(1..channel_count)
        };
        let level: f64 = rng.random_range(0.6..0.9);
        for y in cy - ry..=cy + ry {
            for x in cx - rx..=cx + rx {
                labels[y * w + x] = category as u16;
                salience[y * w + x] = (level + rng.random_range(0.0..0.1)).min(1.0);
            }
        }
        placed += 1;
    }
    SceneGrid {
        width_cells: w,
        height_cells: h,
        channel_count,
        labels,
        salience,
        target_channel: None,
    }
}

/// One of the eight symmetries of the square: optional transpose, then
/// optional horizontal and vertical flips. Non-square grids only admit the
/// flips.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symmetry(u8);

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry(0);

    /// Symmetries valid for a `width x height` grid.
    pub fn all_for(width: usize, height: usize) -> Vec<Symmetry> {
        let n = if width == height { 8 } else { 4 };
        (0..n).map(Symmetry).collect()
    }

    fn transpose(self) -> bool {
        self.0 & 4 != 0
    }

    /// Maps a normalized point.
    pub fn apply(self, x: f64, y: f64) -> (f64, f64) {
        let (mut x, mut y) = if self.transpose() { (y, x) } else { (x, y) };
        if self.0 & 1 != 0 {
            x = 1.0 - x;
        }
        if self.0 & 2 != 0 {
            y = 1.0 - y;
        }
        (x, y)
    }
}

impl SceneGrid {
    /// The scene seen through `sym`; cell contents move with their centers.
    pub fn transformed(&self, sym: Symmetry) -> SceneGrid {
        let (w, h) = (self.width_cells, self.height_cells);
        let mut out = self.clone();
        for cell in 0..w * h {
            let (x, y) = self.cell_center(cell);
            let (tx, ty) = sym.apply(x, y);
            let to = self.cell_at(tx, ty);
            out.labels[to] = self.labels[cell];
            out.salience[to] = self.salience[cell];
        }
        out
    }
}

fn neighbourhood_free(labels: &[u16], w: usize, h: usize, x: usize, y: usize) -> bool {
    let at = |x: usize, y: usize| labels[y * w + x] == 0;
    at(x, y)
        && (x == 0 || at(x - 1, y))
        && (x + 1 == w || at(x + 1, y))
        && (y == 0 || at(x, y - 1))
        && (y + 1 == h || at(x, y + 1))
}
