//! Small dense kernels: cross-product accumulation over row-major tall
//! matrices and a rank-revealing Cholesky of the resulting Gram matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Relative pivot tolerance: a column whose squared residual after projecting
/// on the earlier columns is below this fraction of its squared norm is
/// treated as linearly dependent.
pub const RANK_TOL: f64 = 1e-10;

/// Upper-triangle accumulator for `AᵀA` where `A` is row-major `n × k`.
/// Row-major `AᵀA` (full, symmetric) of the rows of `a` in `rows`.
pub(crate) fn gram_rows(a: &[f64], k: usize, rows: std::ops::Range<usize>) -> Vec<f64> {
    let mut g = vec![0.0; k * k];
    let n = rows.len();
    if n == 0 || k == 0 {
        return g;
    }
    let block = &a[rows.start * k..rows.end * k];
    // SAFETY: `block` holds n×k row-major values and `g` k×k; the strides
    // describe exactly those extents (Aᵀ reads the same buffer transposed).
    unsafe {
        matrixmultiply::dgemm(
            k,
            n,
            k,
            1.0,
            block.as_ptr(),
            1,
            k as isize,
            block.as_ptr(),
            k as isize,
            1,
            0.0,
            g.as_mut_ptr(),
            k as isize,
            1,
        );
    }
    g
}

/// `AᵀA` for a row-major `n × k` matrix, formed deterministically.
pub fn gram(a: &[f64], k: usize, exec: Exec) -> DMatrix<f64> {
    let n = a.len().checked_div(k).unwrap_or(0);
    let acc = exec
        .chunked_reduce(
            n,
            |rows| gram_rows(a, k, rows),
            |acc, p| acc.iter_mut().zip(p).for_each(|(x, y)| *x += y),
        )
        .unwrap_or_else(|| vec![0.0; k * k]);
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            m[(i, j)] = acc[i * k + j];
            m[(j, i)] = acc[i * k + j];
        }
    }
    m
}

/// Cholesky factor of an equilibrated symmetric positive definite matrix:
/// `G = S L Lᵀ S` with `S = diag(sqrt(G_ii))`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
    scale: Vec<f64>,
}

impl SpdFactor {
    /// Factor `g`, failing with [`Error::RankDeficient`] on the first column
    /// that is numerically dependent on its predecessors.
    pub fn new(g: &DMatrix<f64>, names: &[String]) -> Result<Self> {
        let k = g.nrows();
        debug_assert_eq!(names.len(), k);
        let scale: Vec<f64> = (0..k).map(|i| g[(i, i)].max(0.0).sqrt()).collect();
        let mut l = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            if scale[j] == 0.0 || !scale[j].is_finite() {
                return Err(Error::RankDeficient {
                    column: names[j].clone(),
                    dependent_on: Vec::new(),
                });
            }
            let mut d = g[(j, j)] / (scale[j] * scale[j]);
            for p in 0..j {
                d -= l[(j, p)] * l[(j, p)];
            }
            if d < RANK_TOL {
                return Err(Error::RankDeficient {
                    column: names[j].clone(),
                    dependent_on: dependents(&l, j, names),
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..k {
                let mut s = g[(i, j)] / (scale[i] * scale[j]);
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(SpdFactor { l, scale })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Solve `G x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.dim();
        let mut y: Vec<f64> = (0..k).map(|i| b[i] / self.scale[i]).collect();
        for i in 0..k {
            let mut s = y[i];
            for p in 0..i {
                s -= self.l[(i, p)] * y[p];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..k).rev() {
            let mut s = y[i];
            for p in (i + 1)..k {
                s -= self.l[(p, i)] * y[p];
            }
            y[i] = s / self.l[(i, i)];
        }
        y.iter().zip(&self.scale).map(|(v, s)| v / s).collect()
    }

    /// `G⁻¹`, exactly symmetric.
    pub fn inverse(&self) -> DMatrix<f64> {
        let k = self.dim();
        let mut inv = DMatrix::zeros(k, k);
        let mut e = vec![0.0; k];
        for j in 0..k {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..k {
                inv[(i, j)] = col[i];
            }
        }
        symmetrize(&mut inv);
        inv
    }
}

/// Columns before `j` that carry weight in the projection of column `j`.
fn dependents(l: &DMatrix<f64>, j: usize, names: &[String]) -> Vec<String> {
    // Solve L[..j, ..j]ᵀ b = L[j, ..j] for the projection coefficients.
    let mut b: Vec<f64> = (0..j).map(|p| l[(j, p)]).collect();
    for i in (0..j).rev() {
        let mut s = b[i];
        for p in (i + 1)..j {
            s -= l[(p, i)] * b[p];
        }
        b[i] = s / l[(i, i)];
    }
    let big = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    b.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 1e-6 * big.max(1e-300))
        .map(|(i, _)| names[i].clone())
        .collect()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn gram_matches_naive() {
        let a: Vec<f64> = (0..30).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let g = gram(&a, 3, Exec::Sequential);
        let m = DMatrix::from_row_slice(10, 3, &a);
        let naive = m.transpose() * &m;
        assert!((g - naive).abs().max() < 1e-12);
    }

    #[test]
    fn solve_and_inverse() {
        let g = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = SpdFactor::new(&g, &names(3)).unwrap();
        let x = f.solve(&[1.0, 2.0, 3.0]);
        let back = &g * nalgebra::DVector::from_vec(x);
        for (i, v) in [1.0, 2.0, 3.0].iter().enumerate() {
            assert!((back[i] - v).abs() < 1e-12);
        }
        let eye = &g * f.inverse();
        assert!((eye - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn duplicated_column_is_named() {
        // columns: a, b, a + 2b
        let rows = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0], [0.5, 3.0]];
        let a: Vec<f64> = rows.iter().flat_map(|r| [r[0], r[1], r[0] + 2.0 * r[1]]).collect();
        let g = gram(&a, 3, Exec::Sequential);
        match SpdFactor::new(&g, &names(3)) {
            Err(Error::RankDeficient { column, dependent_on }) => {
                assert_eq!(column, "x2");
                assert_eq!(dependent_on, vec!["x0".to_string(), "x1".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            SpdFactor::new(&g, &names(2)),
            Err(Error::RankDeficient { .. })
        ));
    }
}
