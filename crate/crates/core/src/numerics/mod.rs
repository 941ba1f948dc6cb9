//! Dense tensor math, attention blocks, positional encodings, parameter
//! storage and gradient verification.
//!
//! Values are `f64` in memory; checkpoints store `f32`.

mod attention;
mod gradcheck;
mod optim;
mod params;
mod posenc;
mod tape;

pub use attention::{causal_mask, Attended, AttentionBlock, LayerNorm, Linear};
pub use gradcheck::{grad_check, GradCheckReport, FULL_CHECK_LIMIT};
pub use optim::AdamW;
pub use params::{Gradients, Init, ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use posenc::{pos1d, pos2d};
pub use tape::{Matrix, Tape, Var};

use ndarray::Array2;

use crate::error::{Error, Result};

/// A token sequence: one row per token, one column per feature.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix(Matrix);

impl TokenMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token matrix".into()));
        }
        Ok(TokenMatrix(values))
    }

    pub fn from_rows(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let m = Matrix::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::Shape(format!("{rows}x{cols}: {e}")))?;
        Self::new(m)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Output of a standalone attention block evaluation.
pub struct MhaOutput {
    pub tokens: TokenMatrix,
    /// Per-head `queries x keys` weights.
    pub weights: Vec<Matrix>,
}

/// Runs one attention block outside of training. `masked[k] = true` hides
/// key `k` from every query.
pub fn mha(
    params: &ParamStore,
    block: &AttentionBlock,
    queries: &TokenMatrix,
    keys_values: &TokenMatrix,
    masked: Option<&[bool]>,
) -> Result<MhaOutput> {
    let allowed = match masked {
        Some(m) if m.len() != keys_values.rows() => {
            return Err(Error::Shape(format!(
                "mask has {} entries for {} keys",
                m.len(),
                keys_values.rows()
            )))
        }
        Some(m) => {
            if m.iter().all(|&x| x) {
                return Err(Error::invalid("every key is masked"));
            }
            Some(Array2::from_shape_fn((queries.rows(), m.len()), |(_, k)| !m[k]))
        }
        None => None,
    };
    let mut tape = Tape::new(params);
    let q = tape.constant(queries.matrix().clone());
    let self_attention = std::ptr::eq(queries, keys_values) && block.norm_kv.is_none();
    let memory = if self_attention {
        None
    } else {
        Some(tape.constant(keys_values.matrix().clone()))
    };
    let out = block.forward(&mut tape, q, memory, allowed.as_ref())?;
    Ok(MhaOutput {
        tokens: TokenMatrix::new(tape.value(out.out).clone())?,
        weights: out.weights.iter().map(|&w| tape.value(w).clone()).collect(),
    })
}
