//! Dataset CSV: one row per sample, the class label first and then the
//! features. A first row whose label cell is not an integer is taken as a
//! header. Features are standardized to zero mean and unit variance per
//! column; constant columns are only centered.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use blindtrain::dataset::Dataset;
use blindtrain::Matrix;
use serde::{Deserialize, Serialize};

/// Per-feature affine map `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Fits to the rows (samples) of `rows`.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / n).collect();
        let scale = (0..dim)
            .map(|d| {
                let var = rows.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Result<Matrix> {
        let dim = self.mean.len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            bail!("sample has {} features, expected {dim}", r.len());
        }
        Ok(Matrix::from_fn(dim, rows.len(), |d, s| {
            (rows[s][d] - self.mean[d]) / self.scale[d]
        }))
    }
}

/// Labels and raw feature rows as read from the file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCsv {
    pub labels: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_csv(path: &Path) -> Result<RawCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open dataset {}", path.display()))?;
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: unreadable CSV", path.display()))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let label_cell = record.get(0).unwrap_or("");
        let label = match label_cell.parse::<usize>() {
            Ok(l) => l,
            Err(_) if i == 0 => continue,
            Err(_) => bail!(
                "{} line {line}, column 1: label {label_cell:?} is not a class index",
                path.display()
            ),
        };
        let features = record
            .iter()
            .enumerate()
            .skip(1)
            .map(|(col, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        anyhow!(
                            "{} line {line}, column {}: {cell:?} is not a finite number",
                            path.display(),
                            col + 1
                        )
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.is_empty() {
            bail!("{} line {line}: no feature columns", path.display());
        }
        if let Some(first) = rows.first() {
            if first.len() != features.len() {
                bail!(
                    "{} line {line}: {} features, earlier rows have {}",
                    path.display(),
                    features.len(),
                    first.len()
                );
            }
        }
        labels.push(label);
        rows.push(features);
    }
    if rows.is_empty() {
        bail!("{}: no samples", path.display());
    }
    Ok(RawCsv { labels, rows })
}

/// Reads and standardizes a dataset. The class count is one more than the
/// largest label.
pub fn load_csv(path: &Path) -> Result<(Dataset, Standardization)> {
    let raw = read_csv(path)?;
    let std = Standardization::fit(&raw.rows);
    let features = std.apply(&raw.rows)?;
    let n_classes = raw.labels.iter().max().map_or(1, |m| m + 1);
    Ok((Dataset::new(features, raw.labels, n_classes)?, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_rows() {
        let f = file("0,1.0,2.0\n1,3.0,2.0\n");
        let (ds, std) = load_csv(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(std.mean, vec![2.0, 2.0]);
        assert_eq!(ds.features().get(0, 0), -1.0);
        assert_eq!(ds.features().get(0, 1), 1.0);
        assert_eq!(ds.features().get(1, 0), 0.0);
    }

    #[test]
    fn header_is_skipped() {
        let f = file("label,x,y\n2,0.5,1\n0,1.5,3\n");
        let raw = read_csv(f.path()).unwrap();
        assert_eq!(raw.labels, vec![2, 0]);
        assert_eq!(raw.rows[1], vec![1.5, 3.0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = file("");
        assert!(load_csv(f.path()).is_err());
    }

    #[test]
    fn bad_cell_names_its_location() {
        let f = file("0,1,2\n1,oops,2\n");
        let msg = load_csv(f.path()).unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("column 2"), "{msg}");
    }

    #[test]
    fn ragged_rows_rejected() {
        let f = file("0,1,2\n1,2\n");
        assert!(load_csv(f.path()).unwrap_err().to_string().contains("line 2"));
    }

    #[test]
    fn missing_file_names_the_path() {
        let msg = load_csv(Path::new("/nonexistent/data.csv")).unwrap_err().to_string();
        assert!(msg.contains("/nonexistent/data.csv"));
    }
}
