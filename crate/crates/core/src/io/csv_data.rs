use std::io::{Read, Write};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// A headed CSV table. Cells stay as text until columns are selected, so
/// unrelated non-numeric columns do not block ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl Table {
    pub fn from_reader<R: Read>(reader: R) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("CSV header: {e}")))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
            return Err(Error::Parse("CSV header is missing".into()));
        }
        if let Some(dup) = headers.iter().enumerate().find(|(i, h)| headers[..*i].contains(h)) {
            return Err(Error::Parse(format!("duplicate CSV column '{}'", dup.1)));
        }
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse(format!("CSV: {e}")))?;
            records.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { headers, records })
    }

    pub fn from_path(path: &Path) -> Result<Table> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Table::from_reader(std::io::BufReader::new(file))
    }

    pub fn n_rows(&self) -> usize {
        self.records.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("column '{name}' not found (have: {})", self.headers.join(", "))))
    }

    /// Parses one column; errors carry the 1-based data row and the column.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.index_of(name)?;
        self.records
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let cell = rec[j].trim();
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Parse(format!(
                        "row {}, column {} ('{name}'): cannot read '{cell}' as a finite number",
                        i + 1,
                        j + 1
                    ))),
                }
            })
            .collect()
    }

    pub fn dataset(&self, outcome: &str, covariates: &[String]) -> Result<Dataset> {
        if covariates.iter().any(|c| c == outcome) {
            return Err(Error::Config(format!("column '{outcome}' is both the outcome and a covariate")));
        }
        let y = self.numeric_column(outcome)?;
        let cols = covariates.iter().map(|c| self.numeric_column(c)).collect::<Result<Vec<_>>>()?;
        let p = cols.len();
        let mut x = Vec::with_capacity(y.len() * p);
        for i in 0..y.len() {
            x.extend(cols.iter().map(|c| c[i]));
        }
        Dataset::new(y, x, p, covariates.to_vec())
    }
}

/// Writes a dataset as CSV with the outcome first.
pub fn write_dataset<W: Write>(data: &Dataset, outcome: &str, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![outcome.to_string()];
    header.extend(data.names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for i in 0..data.n() {
        let mut rec = vec![data.y[i].to_string()];
        rec.extend(data.row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
