//! Column-major feature matrix shared by the preprocessor and the tree learners.

/// Column order produced by [`crate::dataset::Preprocessor::transform`].
pub const FEATURE_NAMES: [&str; 4] = ["radionuclide", "stability", "release_height", "distance"];

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
}

impl Matrix {
    /// Panics if the columns differ in length.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Self {
        let n_rows = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == n_rows), "ragged columns");
        Self { n_rows, columns }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        let columns = (0..width).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        Self::from_columns(columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, f: usize) -> &[f64] {
        &self.columns[f]
    }

    pub fn column_mut(&mut self, f: usize) -> &mut [f64] {
        &mut self.columns[f]
    }

    pub fn get(&self, row: usize, f: usize) -> f64 {
        self.columns[f][row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    /// Copy keeping only the listed columns, in the given order.
    pub fn select_columns(&self, features: &[usize]) -> Self {
        Self::from_columns(features.iter().map(|&f| self.columns[f].clone()).collect())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self::from_columns(self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_columns_agree() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(m.n_rows(), 3);
        assert_eq!(m.column(1), &[2.0, 4.0, 6.0]);
        assert_eq!(m.row(2), vec![5.0, 6.0]);
        assert_eq!(m.select_columns(&[1]).column(0), m.column(1));
        assert_eq!(m.select_rows(&[2, 0]).row(0), vec![5.0, 6.0]);
    }
}
