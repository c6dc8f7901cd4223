//! Validated data containers.

use nalgebra::DMatrix;

use crate::error::{ProbDrError, Result};

/// Observed data, one point per row (n x d).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(DMatrix<f64>);

impl DataMatrix {
    /// Requires n >= 2, d >= 1 and finite entries.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(ProbDrError::InvalidArgument(format!(
                "data needs at least 2 points, got {}",
                values.nrows()
            )));
        }
        if values.ncols() < 1 {
            return Err(ProbDrError::InvalidArgument("data needs at least 1 feature".into()));
        }
        ensure_finite(&values, "data matrix")?;
        Ok(Self(values))
    }

    /// Builds from row-major values.
    pub fn from_row_slice(n: usize, d: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * d {
            return Err(ProbDrError::ShapeMismatch {
                expected: format!("{} values", n * d),
                got: format!("{} values", data.len()),
            });
        }
        Self::new(DMatrix::from_row_slice(n, d, data))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn d(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Stacks `self` on top of `other` (same feature count).
    pub fn vstack(&self, other: &DataMatrix) -> Result<DataMatrix> {
        if self.d() != other.d() {
            return Err(ProbDrError::ShapeMismatch {
                expected: format!("{} columns", self.d()),
                got: format!("{} columns", other.d()),
            });
        }
        let n = self.n() + other.n();
        let mut out = DMatrix::zeros(n, self.d());
        out.rows_mut(0, self.n()).copy_from(&self.0);
        out.rows_mut(self.n(), other.n()).copy_from(&other.0);
        Ok(DataMatrix(out))
    }
}

/// Latent coordinates, one point per row (n x q).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(DMatrix<f64>);

impl Embedding {
    /// Requires finite entries and q >= 1. Any row count is accepted,
    /// including blocks of a single out-of-sample row.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() < 1 {
            return Err(ProbDrError::InvalidArgument("embedding needs q >= 1".into()));
        }
        ensure_finite(&values, "embedding")?;
        Ok(Self(values))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn q(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

pub(crate) fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return Err(ProbDrError::NonFinite(format!("{what} at ({r}, {c})")));
    }
    Ok(())
}

pub(crate) fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("square {what}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_point() {
        assert!(DataMatrix::new(DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn rejects_nan() {
        let mut m = DMatrix::zeros(3, 2);
        m[(2, 1)] = f64::NAN;
        let err = DataMatrix::new(m).unwrap_err();
        assert!(err.to_string().contains("(2, 1)"));
    }

    #[test]
    fn vstack_checks_width() {
        let a = DataMatrix::new(DMatrix::zeros(2, 2)).unwrap();
        let b = DataMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(a.vstack(&b).is_err());
        let c = DataMatrix::new(DMatrix::from_element(3, 2, 1.0)).unwrap();
        let s = a.vstack(&c).unwrap();
        assert_eq!(s.n(), 5);
        assert_eq!(s.values()[(4, 1)], 1.0);
    }
}
