use ndarray::Array2;
use rand::Rng;

/// Glorot-uniform weight matrix.
pub fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit))
}

pub fn zeros_row(width: usize) -> Array2<f64> {
    Array2::zeros((1, width))
}

pub fn ones_row(width: usize) -> Array2<f64> {
    Array2::ones((1, width))
}
