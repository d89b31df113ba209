use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// How an optimizer should treat a parameter block.
///
/// Every 2-D parameter is a neuron matrix: each row is one neuron's weight
/// vector and the column count is its fan-in. 1-D parameters (biases, gains)
/// are generic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    NeuronMatrix { fan_in: usize },
    Generic,
}

/// A named, flat parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup<F> {
    name: String,
    kind: ParamKind,
    rows: usize,
    cols: usize,
    values: Vec<F>,
    /// Row norms at construction; empty for generic groups.
    init_row_norms: Vec<F>,
}

impl<F: Scalar> ParamGroup<F> {
    pub fn matrix(name: impl Into<String>, m: Matrix<F>) -> Result<Self> {
        let (rows, cols) = m.shape();
        if cols == 0 || rows == 0 {
            return Err(Error::Config(format!(
                "neuron matrix needs at least one row and column, got {rows}x{cols}"
            )));
        }
        let init_row_norms = m.row_iter().map(norm).collect();
        Ok(Self {
            name: name.into(),
            kind: ParamKind::NeuronMatrix { fan_in: cols },
            rows,
            cols,
            values: m.into_vec(),
            init_row_norms,
        })
    }

    pub fn vector(name: impl Into<String>, values: Vec<F>) -> Self {
        let n = values.len();
        Self {
            name: name.into(),
            kind: ParamKind::Generic,
            rows: 1,
            cols: n,
            values,
            init_row_norms: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn is_neuron_matrix(&self) -> bool {
        matches!(self.kind, ParamKind::NeuronMatrix { .. })
    }

    pub fn fan_in(&self) -> Option<usize> {
        match self.kind {
            ParamKind::NeuronMatrix { fan_in } => Some(fan_in),
            ParamKind::Generic => None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    /// Overwrites the values, keeping the recorded initial norms.
    pub fn set_values(&mut self, values: &[F]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::ShapeMismatch {
                what: format!("values for `{}`", self.name),
                expected: self.values.len(),
                got: values.len(),
            });
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn init_row_norms(&self) -> &[F] {
        &self.init_row_norms
    }

    /// Number of neuron rows (1 for a generic group).
    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_norms(&self) -> Vec<F> {
        self.values.chunks_exact(self.cols.max(1)).map(norm).collect()
    }

    /// A copy of the values as a matrix (a 1 x n matrix for generic groups).
    pub fn to_matrix(&self) -> Matrix<F> {
        Matrix::from_vec(self.rows, self.cols, self.values.clone()).expect("consistent shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_group_records_norms() {
        let m = Matrix::from_vec(2, 2, vec![3.0, 4.0, 0.0, 1.0]).unwrap();
        let g = ParamGroup::matrix("w", m).unwrap();
        assert_eq!(g.kind(), ParamKind::NeuronMatrix { fan_in: 2 });
        assert_eq!(g.init_row_norms(), &[5.0, 1.0]);
        assert_eq!(g.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn vector_group_is_generic() {
        let g = ParamGroup::vector("b", vec![1.0f64, 2.0]);
        assert_eq!(g.kind(), ParamKind::Generic);
        assert!(g.fan_in().is_none());
        assert!(g.init_row_norms().is_empty());
    }

    #[test]
    fn set_values_checks_length() {
        let mut g = ParamGroup::vector("b", vec![1.0f64, 2.0]);
        assert!(g.set_values(&[1.0]).is_err());
        g.set_values(&[5.0, 6.0]).unwrap();
        assert_eq!(g.values(), &[5.0, 6.0]);
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(ParamGroup::<f64>::matrix("w", Matrix::zeros(3, 0)).is_err());
    }
}
