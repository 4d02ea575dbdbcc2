//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Assembles a block matrix from rows of blocks. Every block in a row must
/// share its height and every block column its width.
pub fn block(rows: &[Vec<&DMatrix<f64>>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ncols = rows[0].len();
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::Dimension(format!("block row {i} has {} blocks, expected {ncols}", r.len())));
        }
        for (j, b) in r.iter().enumerate() {
            if b.nrows() != heights[i] || b.ncols() != widths[j] {
                return Err(Error::Dimension(format!(
                    "block ({i},{j}) is {}x{}, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    heights[i],
                    widths[j]
                )));
            }
        }
    }
    let total_rows: usize = heights.iter().sum();
    let total_cols: usize = widths.iter().sum();
    let mut out = DMatrix::zeros(total_rows, total_cols);
    let mut r0 = 0;
    for (i, r) in rows.iter().enumerate() {
        let mut c0 = 0;
        for (j, b) in r.iter().enumerate() {
            out.view_mut((r0, c0), (heights[i], widths[j])).copy_from(*b);
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    Ok(out)
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(*b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

pub fn hstack(blocks: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    block(&[blocks.to_vec()])
}

pub fn vstack(blocks: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<&DMatrix<f64>>> = blocks.iter().map(|b| vec![*b]).collect();
    block(&rows)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Largest singular value (0 for empty matrices).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Upper-triangular `R` with `RᵀR = m`.
pub fn upper_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    nalgebra::Cholesky::new(symmetrize(m)).map(|c| c.l().transpose())
}

/// Serde helpers storing a matrix as nested row arrays.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], ncols_hint: usize) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map(|r| r.len()).unwrap_or(ncols_hint);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows, 0).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_assembles_and_checks_shapes() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let b = DMatrix::from_element(2, 1, 2.0);
        let c = DMatrix::from_element(1, 2, 3.0);
        let d = DMatrix::from_element(1, 1, 4.0);
        let m = block(&[vec![&a, &b], vec![&c, &d]]).unwrap();
        assert_eq!(m.shape(), (3, 3));
        assert_eq!(m[(2, 2)], 4.0);
        assert_eq!(m[(0, 2)], 2.0);
        assert!(block(&[vec![&a, &c]]).is_err());
    }

    #[test]
    fn upper_cholesky_reconstructs() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let r = upper_cholesky(&m).unwrap();
        assert!((r.transpose() * &r - &m).norm() < 1e-12);
        assert_eq!(r[(1, 0)], 0.0);
    }
}
