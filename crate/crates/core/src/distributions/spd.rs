use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, WceError};

const SYMMETRY_TOL: f64 = 1e-10;
const JITTER_SCALE: f64 = 1e-8;

/// Symmetric positive-definite matrix together with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl SpdMatrix {
    /// Factorizes `matrix`. On failure the diagonal is jittered once by
    /// `1e-8 * trace / p` before giving up.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let p = matrix.nrows();
        if p == 0 || matrix.ncols() != p {
            return Err(WceError::DimensionMismatch {
                expected: p,
                got: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(WceError::NotPositiveDefinite);
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(WceError::NotPositiveDefinite);
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        if let Some(chol) = Cholesky::new(sym.clone()) {
            return Ok(Self::from_parts(sym, chol));
        }
        let jitter = JITTER_SCALE * sym.trace() / p as f64;
        if !(jitter > 0.0) {
            return Err(WceError::NotPositiveDefinite);
        }
        let mut jittered = sym;
        for i in 0..p {
            jittered[(i, i)] += jitter;
        }
        match Cholesky::new(jittered.clone()) {
            Some(chol) => Ok(Self::from_parts(jittered, chol)),
            None => Err(WceError::NotPositiveDefinite),
        }
    }

    pub fn identity(p: usize) -> Self {
        Self::new(DMatrix::identity(p, p)).expect("identity is SPD")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        for r in rows {
            if r.len() != p {
                return Err(WceError::DimensionMismatch {
                    expected: p,
                    got: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    fn from_parts(matrix: DMatrix<f64>, chol: Cholesky<f64, Dyn>) -> Self {
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Self {
            matrix,
            chol,
            log_det,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Lower Cholesky factor.
    pub fn chol_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `v' A^-1 v` via a triangular solve, `||L^-1 v||^2`.
    pub fn inv_quad_form(&self, v: &DVector<f64>) -> f64 {
        let l = self.chol.l_dirty();
        let p = v.len();
        let mut z = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if p <= 16 {
            &mut z[..p]
        } else {
            heap = vec![0.0; p];
            &mut heap[..]
        };
        let mut acc = 0.0;
        for i in 0..p {
            let mut s = v[i];
            for j in 0..i {
                s -= l[(i, j)] * z[j];
            }
            z[i] = s / l[(i, i)];
            acc += z[i] * z[i];
        }
        acc
    }

    /// `L z` with `L` the lower Cholesky factor.
    pub fn lower_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let p = z.len();
        DVector::from_fn(p, |i, _| (0..=i).map(|j| l[(i, j)] * z[j]).sum())
    }

    /// Eigenvalues and eigenvectors (columns).
    pub fn eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        let e = SymmetricEigen::new(self.matrix.clone());
        (e.eigenvalues, e.eigenvectors)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().0.min()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let p = self.dim();
        (0..p)
            .map(|i| (0..p).map(|j| self.matrix[(i, j)]).collect())
            .collect()
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SpdMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for `DVector<f64>` as a plain JSON array.
pub(crate) mod vec_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
