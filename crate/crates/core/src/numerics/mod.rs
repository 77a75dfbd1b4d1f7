//! Minimal numeric foundations: dense linear algebra, seeded RNG,
//! reverse-mode autodiff, DFT, and Adam/AdamW.

mod adam;
mod dft;
mod graph;
mod matrix;
mod rng;

pub use adam::AdamState;
pub use dft::{dft_energies, dft_magnitudes};
pub use graph::{CompGraph, NodeId};
pub use matrix::{cosine, Matrix, Vector};
pub use rng::Rng;

/// Gram-Schmidt QR of a square Gaussian draw with sign-fixed diagonal,
/// giving an orthogonal matrix.
pub fn random_orthogonal(n: usize, rng: &mut Rng) -> Matrix {
    loop {
        let mut a = Matrix::zeros(n, n);
        for v in &mut a.data {
            *v = rng.normal();
        }
        if let Some(q) = gram_schmidt(&a) {
            return q;
        }
    }
}

/// Orthonormalize the columns of `a`; None if rank-deficient.
fn gram_schmidt(a: &Matrix) -> Option<Matrix> {
    let n = a.rows;
    let mut cols: Vec<Vector> = (0..a.cols).map(|c| a.col(c)).collect();
    for i in 0..cols.len() {
        for j in 0..i {
            let proj = cols[i].dot(&cols[j]);
            cols[i] = cols[i].sub(&cols[j].scale(proj));
        }
        let norm = cols[i].l2_norm();
        if norm < 1e-10 {
            return None;
        }
        // sign-fix: make the diagonal entry non-negative
        let sign = if cols[i].data[i] < 0.0 { -1.0 } else { 1.0 };
        cols[i] = cols[i].scale(sign / norm);
    }
    let mut q = Matrix::zeros(n, n);
    for (c, col) in cols.iter().enumerate() {
        for r in 0..n {
            q.set(r, c, col.data[r]);
        }
    }
    Some(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = Rng::new(11);
        for _ in 0..5 {
            let q = random_orthogonal(6, &mut rng);
            let qtq = q.transpose().matmul(&q).unwrap();
            let err = qtq.sub(&Matrix::identity(6)).unwrap().frobenius_norm();
            assert!(err < 1e-12, "orthogonality error {err}");
        }
    }
}
