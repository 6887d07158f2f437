//! Seeded random instances for property checks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::spd::SpdMatrix;

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-ish orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, n, n).qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn symmetric<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = gaussian(rng, n, n);
    (&g + g.transpose()) * 0.5
}

/// `U diag(2^{spread·zᵢ}) Uᵀ` with standard normal `zᵢ`.
pub fn spd<R: Rng + ?Sized>(rng: &mut R, n: usize, spread: f64) -> SpdMatrix {
    let u = orthogonal(rng, n);
    let d = DVector::from_fn(n, |_, _| 2f64.powf(spread * rng.sample::<f64, _>(StandardNormal)));
    SpdMatrix::new(&u * DMatrix::from_diagonal(&d) * u.transpose()).expect("eigenvalues are bounded away from zero")
}

/// Gaussian matrix resampled until its condition number is below 1e3.
pub fn invertible<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    loop {
        let g = gaussian(rng, n, n);
        let sv = g.clone().svd(false, false).singular_values;
        if sv.min() > 0.0 && sv.max() / sv.min() < 1e3 {
            return g;
        }
    }
}
