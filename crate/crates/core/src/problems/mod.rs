//! Concrete problems: a quadratic saddle with closed forms, a toy
//! distributionally robust logistic regression, and an interpolating
//! finite sum.

mod dro;
mod interp;
mod quadratic;

pub use dro::{generate_blobs, DroConfig, ToyDro};
pub use interp::{InterpConfig, InterpolatingFiniteSum};
pub use quadratic::{QuadraticConfig, QuadraticSaddle, SaddleCore};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Matrix, Vector};

pub(crate) fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize, sd: f64) -> Vector {
    Vector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub(crate) fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
