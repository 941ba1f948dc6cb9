use serde::{Deserialize, Serialize};

use crate::data::Fixation;
use crate::error::{Error, Result};
use crate::numerics::{pos2d, AttentionBlock, Init, Linear, Matrix, ParamId, ParamStore, Tape, Var};
use crate::synthetic::SceneGrid;

/// Network sizes shared by the embedding network and the predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `dim`.
    pub ff_mult: usize,
    /// Rows of the category embedding table; scene labels must stay below it.
    pub categories: usize,
    /// Side of the coarse token grid.
    pub coarse_side: usize,
    pub layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            heads: 4,
            ff_mult: 2,
            categories: 8,
            coarse_side: 4,
            layers: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.dim.is_multiple_of(4) {
            return Err(Error::domain("dim", "must be a positive multiple of 4"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::domain("heads", format!("must divide dim {}", self.dim)));
        }
        if self.ff_mult == 0 || self.categories < 2 || self.coarse_side == 0 || self.layers == 0 {
            return Err(Error::domain("model", "ff_mult, coarse_side and layers must be positive, categories >= 2"));
        }
        Ok(())
    }

    pub fn ff_dim(&self) -> usize {
        self.ff_mult * self.dim
    }

    pub fn coarse_cells(&self) -> usize {
        self.coarse_side * self.coarse_side
    }
}

/// Parameter-free summary of a scene: how much of each category (and of
/// salience) falls in every coarse cell and every fine cell.
#[derive(Clone, Debug)]
pub struct SceneFeatures {
    pub coarse_mix: Matrix,
    pub coarse_salience: Matrix,
    pub coarse_pos: Matrix,
    pub fine_mix: Matrix,
    pub fine_salience: Matrix,
    pub fine_pos: Matrix,
    width: usize,
    height: usize,
    labels: Vec<u16>,
    salience: Vec<f64>,
}

impl SceneFeatures {
    pub fn new(scene: &SceneGrid, config: &ModelConfig) -> Result<Self> {
        scene.validate()?;
        if let Some(l) = scene.labels.iter().find(|&&l| usize::from(l) >= config.categories) {
            return Err(Error::domain("labels", format!("category {l} outside the {}-row table", config.categories)));
        }
        let (w, h) = (scene.width_cells, scene.height_cells);
        let side = config.coarse_side;
        let cells = w * h;
        let mut coarse_mix = Matrix::zeros((side * side, config.categories));
        let mut coarse_salience = Matrix::zeros((side * side, 1));
        let mut members = vec![0usize; side * side];
        let mut fine_mix = Matrix::zeros((cells, config.categories));
        let mut fine_salience = Matrix::zeros((cells, 1));
        for cell in 0..cells {
            let (col, row) = (cell % w, cell / w);
            let coarse = (row * side / h) * side + col * side / w;
            let label = usize::from(scene.labels[cell]);
            coarse_mix[[coarse, label]] += 1.0;
            coarse_salience[[coarse, 0]] += scene.salience[cell];
            members[coarse] += 1;
            fine_mix[[cell, label]] = 1.0;
            fine_salience[[cell, 0]] = scene.salience[cell];
        }
        for (k, &m) in members.iter().enumerate() {
            if m > 0 {
                coarse_mix.row_mut(k).mapv_inplace(|v| v / m as f64);
                coarse_salience[[k, 0]] /= m as f64;
            }
        }
        let mut coarse_pos = Matrix::zeros((side * side, config.dim));
        for k in 0..side * side {
            let (x, y) = (((k % side) as f64 + 0.5) / side as f64, ((k / side) as f64 + 0.5) / side as f64);
            coarse_pos.row_mut(k).assign(&ndarray::Array1::from(pos2d(x, y, config.dim)?));
        }
        let mut fine_pos = Matrix::zeros((cells, config.dim));
        for cell in 0..cells {
            let (x, y) = scene.cell_center(cell);
            fine_pos.row_mut(cell).assign(&ndarray::Array1::from(pos2d(x, y, config.dim)?));
        }
        Ok(SceneFeatures {
            coarse_mix,
            coarse_salience,
            coarse_pos,
            fine_mix,
            fine_salience,
            fine_pos,
            width: w,
            height: h,
            labels: scene.labels.clone(),
            salience: scene.salience.clone(),
        })
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Bilinear weights of the fine cells around a point, using cell-center
    /// sample positions and clamping at the border.
    pub fn bilinear(&self, x: f64, y: f64) -> [(usize, f64); 4] {
        let axis = |t: f64, n: usize| {
            let u = (t * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, u - i0 as f64)
        };
        let (c0, c1, fx) = axis(x, self.width);
        let (r0, r1, fy) = axis(y, self.height);
        let w = self.width;
        [
            (r0 * w + c0, (1.0 - fx) * (1.0 - fy)),
            (r0 * w + c1, fx * (1.0 - fy)),
            (r1 * w + c0, (1.0 - fx) * fy),
            (r1 * w + c1, fx * fy),
        ]
    }

    /// Category and salience mixtures sampled at each fixation.
    pub fn fixation_mix(&self, fixations: &[Fixation], categories: usize) -> (Matrix, Matrix) {
        let mut mix = Matrix::zeros((fixations.len(), categories));
        let mut sal = Matrix::zeros((fixations.len(), 1));
        for (i, f) in fixations.iter().enumerate() {
            for (cell, wt) in self.bilinear(f.x, f.y) {
                mix[[i, usize::from(self.labels[cell])]] += wt;
                sal[[i, 0]] += wt * self.salience[cell];
            }
        }
        (mix, sal)
    }
}

/// Learned stand-in for a visual backbone: a category embedding table plus
/// a salience direction, projected separately for the coarse and fine grids.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub categories: ParamId,
    pub salience: ParamId,
    pub coarse: Linear,
    pub fine: Linear,
}

impl FeatureExtractor {
    pub fn new(store: &mut ParamStore, name: &str, config: &ModelConfig) -> Result<Self> {
        let c = config.dim;
        Ok(FeatureExtractor {
            categories: store.add(&format!("{name}.categories"), &[config.categories, c], Init::Normal(1.0))?,
            salience: store.add(&format!("{name}.salience"), &[1, c], Init::Normal(1.0))?,
            coarse: Linear::new(store, &format!("{name}.coarse"), c, c)?,
            fine: Linear::new(store, &format!("{name}.fine"), c, c)?,
        })
    }

    fn embed(&self, tape: &mut Tape, mix: &Matrix, sal: &Matrix) -> Var {
        let table = tape.param(self.categories);
        let dir = tape.param(self.salience);
        let m = tape.constant(mix.clone());
        let s = tape.constant(sal.clone());
        let a = tape.matmul(m, table);
        let b = tape.matmul(s, dir);
        tape.add(a, b)
    }

    /// Coarse image tokens with their 2D position encodings added.
    pub fn image_tokens(&self, tape: &mut Tape, scene: &SceneFeatures) -> Var {
        let e = self.embed(tape, &scene.coarse_mix, &scene.coarse_salience);
        let t = self.coarse.forward(tape, e);
        let pos = tape.constant(scene.coarse_pos.clone());
        tape.add(t, pos)
    }

    /// Fine-grid tokens sampled bilinearly at each fixation. Bilinear weights
    /// sum to one, so sampling before the affine projection gives the same
    /// result as projecting the whole grid first.
    pub fn fixation_tokens(&self, tape: &mut Tape, scene: &SceneFeatures, fixations: &[Fixation], categories: usize) -> Var {
        let (mix, sal) = scene.fixation_mix(fixations, categories);
        let e = self.embed(tape, &mix, &sal);
        self.fine.forward(tape, e)
    }

    /// Projected embedding of every fine cell, one row per cell.
    pub fn fine_tokens(&self, tape: &mut Tape, scene: &SceneFeatures) -> Var {
        let e = self.embed(tape, &scene.fine_mix, &scene.fine_salience);
        self.fine.forward(tape, e)
    }
}

/// Task table, task projection and the visual-task self-attention stack.
#[derive(Clone, Debug)]
pub struct ContextEncoder {
    pub tasks: ParamId,
    pub project: Linear,
    pub blocks: Vec<AttentionBlock>,
}

impl ContextEncoder {
    pub fn new(store: &mut ParamStore, name: &str, config: &ModelConfig, task_count: usize, with_blocks: bool) -> Result<Self> {
        if task_count == 0 {
            return Err(Error::invalid("context encoder needs at least one task"));
        }
        let c = config.dim;
        let tasks = store.add(&format!("{name}.tasks"), &[task_count, c], Init::Normal(1.0))?;
        let project = Linear::new(store, &format!("{name}.task_proj"), c, c)?;
        let blocks = if with_blocks {
            (0..config.layers)
                .map(|i| AttentionBlock::new(store, &format!("{name}.block{i}"), c, config.heads, config.ff_dim(), false))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(ContextEncoder { tasks, project, blocks })
    }

    pub fn task_count(&self, store: &ParamStore) -> usize {
        store.shape(self.tasks)[0]
    }

    /// `{t W, F_I}` through the self-attention stack; row 0 is the task slot.
    pub fn forward(&self, tape: &mut Tape, task: usize, image: Var) -> Result<Var> {
        let count = self.task_count(tape.params());
        if task >= count {
            return Err(Error::domain("task", format!("index {task} outside the {count}-row task table")));
        }
        let table = tape.param(self.tasks);
        let t = tape.gather_rows(table, &[task]);
        let t = self.project.forward(tape, t);
        let mut x = tape.concat_rows(&[t, image]);
        for block in &self.blocks {
            x = block.forward(tape, x, None, None)?.out;
        }
        Ok(x)
    }
}
