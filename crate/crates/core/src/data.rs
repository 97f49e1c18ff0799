use crate::error::{Error, Result};

/// Individual-level data: outcome vector plus a row-major covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub p: usize,
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, p: usize, names: Vec<String>) -> Result<Dataset> {
        if x.len() != y.len() * p {
            return Err(Error::Dimension(format!(
                "{} outcomes but {} covariate cells for {p} covariates",
                y.len(),
                x.len()
            )));
        }
        if names.len() != p {
            return Err(Error::Dimension(format!("{} covariate names for {p} covariates", names.len())));
        }
        Ok(Dataset { y, x, p, names })
    }

    /// Builds a dataset from row vectors, naming covariates x1, x2, ...
    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Dataset> {
        let p = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("ragged covariate rows".into()));
        }
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Dataset::new(y, rows.concat(), p, names)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n()).map(move |i| self.x[i * self.p + j])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}
