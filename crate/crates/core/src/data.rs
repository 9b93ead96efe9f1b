use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input–label pairs of one task. Rows of `x` are the inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset", into = "RawDataset")]
pub struct LabeledDataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl LabeledDataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "labels per input row",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(LabeledDataset { x, y })
    }

    /// Like [`LabeledDataset::new`] but also enforces `‖x_i‖ ≤ radius`.
    pub fn with_radius(x: DMatrix<f64>, y: DVector<f64>, radius: f64) -> Result<Self> {
        let ds = Self::new(x, y)?;
        ds.check_radius(radius)?;
        Ok(ds)
    }

    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                context: "row length",
                expected: d,
                got: bad.len(),
            });
        }
        let x = DMatrix::from_row_iterator(rows.len(), d, rows.iter().flatten().copied());
        Self::new(x, DVector::from_column_slice(y))
    }

    pub fn check_radius(&self, radius: f64) -> Result<()> {
        for (row, r) in self.x.row_iter().enumerate() {
            let norm = r.norm();
            if norm > radius * (1.0 + 1e-12) {
                return Err(Error::RadiusExceeded { row, norm, radius });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn input(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    pub fn label(&self, i: usize) -> f64 {
        self.y[i]
    }

    /// Largest input norm.
    pub fn radius(&self) -> f64 {
        self.x.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
    }

    /// Rows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let x = DMatrix::from_fn(idx.len(), self.d(), |i, j| self.x[(idx[i], j)]);
        let y = DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]);
        Self::new(x, y)
    }
}

#[derive(Serialize, Deserialize)]
struct RawDataset {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl TryFrom<RawDataset> for LabeledDataset {
    type Error = Error;

    fn try_from(raw: RawDataset) -> Result<Self> {
        LabeledDataset::from_rows(&raw.x, &raw.y)
    }
}

impl From<LabeledDataset> for RawDataset {
    fn from(ds: LabeledDataset) -> Self {
        RawDataset {
            x: ds.x.row_iter().map(|r| r.iter().copied().collect()).collect(),
            y: ds.y.iter().copied().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(matches!(
            LabeledDataset::new(DMatrix::zeros(0, 2), DVector::zeros(0)),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(
            LabeledDataset::new(DMatrix::zeros(2, 2), DVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn radius_is_enforced() {
        let err = LabeledDataset::from_rows(&[vec![3.0, 4.0]], &[1.0])
            .unwrap()
            .check_radius(1.0)
            .unwrap_err();
        assert!(matches!(err, Error::RadiusExceeded { row: 0, .. }));
    }

    #[test]
    fn json_round_trip() {
        let ds = LabeledDataset::from_rows(&[vec![0.1, -2.0], vec![1.0 / 3.0, 4.0]], &[0.5, -1.0]).unwrap();
        let s = serde_json::to_string(&ds).unwrap();
        let back: LabeledDataset = serde_json::from_str(&s).unwrap();
        assert_eq!(ds, back);
    }
}
