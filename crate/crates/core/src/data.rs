//! Column-major n×p data matrix with CSV interchange and column summaries.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::CoreError;

/// `n` observations of `p` variables, stored column-major so that per-pair
/// featurization reads contiguous memory.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    cols: Vec<f64>,
}

impl DataMatrix {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            cols: vec![0.0; n * p],
        }
    }

    pub fn from_columns(columns: Vec<Vec<f64>>) -> Self {
        let p = columns.len();
        let n = columns.first().map_or(0, |c| c.len());
        let mut cols = Vec::with_capacity(n * p);
        for c in &columns {
            assert_eq!(c.len(), n, "ragged columns");
            cols.extend_from_slice(c);
        }
        Self { n, p, cols }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.p
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.cols[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cols[col * self.n + row]
    }

    /// Reorder columns: output column `j` is input column `perm[j]`.
    pub fn permuted_columns(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.p);
        Self::from_columns(perm.iter().map(|&src| self.col(src).to_vec()).collect())
    }

    /// Rows as CSV with header `x0,...,x{p-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<(), CoreError> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (0..self.p).map(|j| format!("x{}", j)).collect();
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for row in 0..self.n {
            line.clear();
            for col in 0..self.p {
                if col > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{}", self.get(row, col)));
            }
            writeln!(out, "{}", line)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, CoreError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let p = {
            let headers = reader.headers()?;
            for (j, h) in headers.iter().enumerate() {
                if h != format!("x{}", j) {
                    return Err(CoreError::Schema(format!(
                        "data file {}: column {} header {:?}, expected \"x{}\"",
                        path.display(),
                        j,
                        h,
                        j
                    )));
                }
            }
            headers.len()
        };
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); p];
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != p {
                return Err(CoreError::Schema(format!(
                    "data file {} row {}: {} fields, expected {}",
                    path.display(),
                    row_idx + 2,
                    record.len(),
                    p
                )));
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    CoreError::Schema(format!(
                        "data file {} row {}: bad value {:?}",
                        path.display(),
                        row_idx + 2,
                        field
                    ))
                })?;
                columns[j].push(v);
            }
        }
        Ok(Self::from_columns(columns))
    }
}

/// Mean, sample standard deviation, skewness and excess kurtosis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnMoments {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn column_moments(column: &[f64]) -> ColumnMoments {
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let m2 = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = column.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = column.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let std = if n > 1.0 {
        (m2 * n / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    ColumnMoments {
        mean,
        std,
        skewness,
        excess_kurtosis,
    }
}

pub fn sample_mean(column: &[f64]) -> f64 {
    column.iter().sum::<f64>() / column.len() as f64
}

/// Sample variance with the n-1 divisor.
pub fn sample_variance(column: &[f64]) -> f64 {
    let n = column.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = sample_mean(column);
    column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn sample_std(column: &[f64]) -> f64 {
    sample_variance(column).sqrt()
}
