//! Small dense linear-algebra helpers shared by the other modules.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Memoized integer powers of a square matrix.
#[derive(Debug, Clone)]
pub struct Powers {
    pows: Vec<Mat>,
}

impl Powers {
    pub fn new(base: &Mat) -> Self {
        assert!(base.is_square(), "power of a non-square matrix");
        let n = base.nrows();
        Powers {
            pows: vec![Mat::identity(n, n), base.clone()],
        }
    }

    /// `base^k`. Negative exponents are treated as zero.
    pub fn get(&mut self, k: i64) -> &Mat {
        let k = k.max(0) as usize;
        while self.pows.len() <= k {
            let next = self.pows.last().unwrap() * &self.pows[1];
            self.pows.push(next);
        }
        &self.pows[k]
    }
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root of a PSD matrix. Tiny negative eigenvalues from
/// rounding are clipped to zero.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// `true` when `m` is symmetric to `tol` relative to its largest entry.
pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

/// Build a matrix from row-major nested vectors. Returns `None` on ragged or
/// empty input.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<Mat> {
    let r = rows.len();
    let c = rows.first()?.len();
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Some(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

/// Row-major nested vectors of a matrix.
pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
