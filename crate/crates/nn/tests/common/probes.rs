#![allow(dead_code)]

use ndarray::{concatenate, s, Array2, Axis};

/// Prepends a pinned timestep row to a token matrix.
pub fn with_time_row(time: &Array2<f64>, lat: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(0), &[time.view(), lat.view()]).unwrap()
}

pub fn latent_rows(z: &Array2<f64>) -> Array2<f64> {
    z.slice(s![1.., ..]).to_owned()
}
