//! Dense f64 kernels, a reverse-mode tape over them, and a central
//! difference gradient checker.

mod dropout;
mod gradcheck;
mod matrix;
mod tape;

pub use dropout::{dropout, DropoutMode};
pub use gradcheck::{finite_diff_check, relative_error, GradEntry, GradReport};
pub use matrix::{relu, sigmoid, Activation, Matrix, Vector};
pub use tape::{Gradients, NodeId, ParamId, Tape};

use crate::error::Result;

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    m.softmax_rows()
}

pub fn elementwise(m: &Matrix, kind: Activation) -> Matrix {
    m.activate(kind)
}

pub fn maxpool_over_rows(m: &Matrix) -> Result<Vector> {
    m.maxpool_over_rows().map(|(v, _)| v)
}
