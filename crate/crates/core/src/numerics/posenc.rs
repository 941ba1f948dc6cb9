use crate::error::{Error, Result};

/// Lowest and highest angular frequency of the 2D encoding (radians per unit).
const POS2D_MIN_FREQ: f64 = std::f64::consts::PI;
const POS2D_MAX_FREQ: f64 = 32.0 * std::f64::consts::PI;

/// 2D sinusoidal encoding of a normalized point. The first half of the
/// vector encodes `x`, the second half `y`; each half interleaves
/// `sin, cos` pairs at frequencies spaced geometrically between pi and 32 pi.
pub fn pos2d(x: f64, y: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::Shape(format!("2D position encoding needs a multiple of 4, got {dim}")));
    }
    let pairs = dim / 4;
    let mut out = Vec::with_capacity(dim);
    for coord in [x, y] {
        for i in 0..pairs {
            let t = if pairs == 1 { 0.0 } else { i as f64 / (pairs - 1) as f64 };
            let freq = POS2D_MIN_FREQ * (POS2D_MAX_FREQ / POS2D_MIN_FREQ).powf(t);
            let angle = coord * freq;
            out.push(angle.sin());
            out.push(angle.cos());
        }
    }
    Ok(out)
}

/// Transformer sinusoidal encoding of an integer index:
/// `[2i] = sin(index / 10000^(2i/dim))`, `[2i+1] = cos(...)`.
pub fn pos1d(index: usize, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::Shape(format!("1D position encoding needs an even width, got {dim}")));
    }
    Ok((0..dim / 2)
        .flat_map(|i| {
            let angle = index as f64 * pos1d_freq(i, dim);
            [angle.sin(), angle.cos()]
        })
        .collect())
}

pub(crate) fn pos1d_freq(pair: usize, dim: usize) -> f64 {
    1.0 / 10000f64.powf(2.0 * pair as f64 / dim as f64)
}
