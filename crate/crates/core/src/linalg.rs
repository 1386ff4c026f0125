//! Dense real LU helpers on top of `nalgebra`.

use nalgebra::{DMatrix, LU, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Pivots below this magnitude are treated as exact zeros. Matrices passed
/// here have entries in `{-1, 0, 1}`, so genuine pivots are far larger.
const PIVOT_TOL: f64 = 1e-9;

type Lu = LU<f64, Dyn, Dyn>;

fn factor(m: DMatrix<f64>) -> Result<(Lu, f64)> {
    assert!(m.is_square());
    let lu = m.lu();
    let u = lu.u();
    let mut logdet = 0.0;
    for (i, &p) in u.diagonal().iter().enumerate() {
        if !(p.abs() > PIVOT_TOL) {
            return Err(Error::Singular { step: i, pivot: p });
        }
        logdet += p.abs().ln();
    }
    Ok((lu, logdet))
}

/// `log |det m|`.
pub fn lu_log_abs_det(m: DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    factor(m).map(|(_, l)| l)
}

/// `(log |det m|, m⁻¹)`. Columns of the inverse are solved in parallel chunks.
pub fn lu_inverse(m: DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((0.0, m));
    }
    let (lu, logdet) = factor(m)?;
    const CHUNK: usize = 64;
    let blocks: Vec<DMatrix<f64>> = (0..n)
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let k = CHUNK.min(n - start);
            let rhs = DMatrix::from_fn(n, k, |i, j| if i == start + j { 1.0 } else { 0.0 });
            lu.solve(&rhs).expect("nonsingular after pivot check")
        })
        .collect();
    let mut inv = DMatrix::zeros(n, n);
    for (bi, block) in blocks.into_iter().enumerate() {
        let start = bi * CHUNK;
        inv.columns_mut(start, block.ncols()).copy_from(&block);
    }
    Ok((logdet, inv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_small_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let (ld, inv) = lu_inverse(m.clone()).unwrap();
        assert!((ld - 18.0f64.ln()).abs() < 1e-12);
        let id = &m * inv;
        assert!((id - DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(lu_inverse(m), Err(Error::Singular { .. })));
    }

    #[test]
    fn wide_inverse_uses_several_chunks() {
        let n = 150;
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { 3.0 } else if i.abs_diff(j) == 1 { -1.0 } else { 0.0 });
        let (_, inv) = lu_inverse(m.clone()).unwrap();
        assert!((&m * inv - DMatrix::identity(n, n)).amax() < 1e-12);
    }
}
