use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::MolecularGraph;
use super::smiles::parse_smiles;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub smiles: String,
    pub graph: MolecularGraph,
    /// One entry per task; `None` marks a missing label.
    pub labels: Vec<Option<bool>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub records: Vec<Record>,
    pub task_names: Vec<String>,
    /// Rows dropped because the SMILES did not parse.
    pub skipped_unparseable: usize,
    /// Rows dropped because every label was missing (only when tasks are requested).
    pub skipped_unlabeled: usize,
}

impl LabeledDataset {
    pub fn task_count(&self) -> usize {
        self.task_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Builds a dataset from already parsed records, checking label widths.
    pub fn from_records(
        records: Vec<Record>,
        task_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        for (row, r) in records.iter().enumerate() {
            if r.labels.len() != task_names.len() {
                return Err(DatasetError::LabelWidth {
                    row,
                    expected: task_names.len(),
                    found: r.labels.len(),
                });
            }
        }
        if records.is_empty() {
            return Err(DatasetError::NoRecords);
        }
        Ok(LabeledDataset {
            records,
            task_names,
            skipped_unparseable: 0,
            skipped_unlabeled: 0,
        })
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            task_names: self.task_names.clone(),
            skipped_unparseable: 0,
            skipped_unlabeled: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("column '{0}' not found in CSV header")]
    MissingColumn(String),
    #[error("row {row}, column '{column}': label '{value}' is not 0, 1 or empty")]
    InvalidLabel {
        row: usize,
        column: String,
        value: String,
    },
    #[error("record {row} has {found} labels, expected {expected}")]
    LabelWidth {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("no usable rows")]
    NoRecords,
}

impl DatasetError {
    /// Whether the error stems from configuration rather than file contents.
    pub fn is_config(&self) -> bool {
        matches!(self, DatasetError::MissingColumn(_))
    }
}

fn parse_label(cell: &str) -> Option<Option<bool>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Some(None);
    }
    match cell.parse::<f64>() {
        Ok(0.0) => Some(Some(false)),
        Ok(1.0) => Some(Some(true)),
        _ => None,
    }
}

/// Reads a header-first CSV with one SMILES column and binary task columns.
pub fn load_csv(
    path: &Path,
    smiles_column: &str,
    task_columns: &[String],
) -> Result<LabeledDataset, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, smiles_column, task_columns)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    smiles_column: &str,
    task_columns: &[String],
) -> Result<LabeledDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let smiles_idx = find(smiles_column)?;
    let task_idx = task_columns
        .iter()
        .map(|t| find(t))
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    let mut skipped_unparseable = 0;
    let mut skipped_unlabeled = 0;
    for (row, result) in rdr.records().enumerate() {
        let rec = result?;
        let smiles = rec.get(smiles_idx).unwrap_or("").trim().to_string();
        let mut labels = Vec::with_capacity(task_idx.len());
        for (&ci, name) in task_idx.iter().zip(task_columns) {
            let cell = rec.get(ci).unwrap_or("");
            labels.push(parse_label(cell).ok_or_else(|| DatasetError::InvalidLabel {
                row: row + 1,
                column: name.clone(),
                value: cell.to_string(),
            })?);
        }
        let graph = match parse_smiles(&smiles) {
            Ok(g) => g,
            Err(e) => {
                log::debug!("row {}: skipping '{}': {}", row + 1, smiles, e);
                skipped_unparseable += 1;
                continue;
            }
        };
        if !labels.is_empty() && labels.iter().all(Option::is_none) {
            skipped_unlabeled += 1;
            continue;
        }
        records.push(Record {
            smiles,
            graph,
            labels,
        });
    }
    if skipped_unparseable + skipped_unlabeled > 0 {
        log::info!(
            "skipped {} unparseable and {} unlabeled rows",
            skipped_unparseable,
            skipped_unlabeled
        );
    }
    if records.is_empty() {
        return Err(DatasetError::NoRecords);
    }
    Ok(LabeledDataset {
        records,
        task_names: task_columns.to_vec(),
        skipped_unparseable,
        skipped_unlabeled,
    })
}

/// Header names, other than `smiles_column`, whose cells are all 0, 1 or empty, with at
/// least one non-empty cell. These are taken as binary task columns.
pub fn detect_task_columns<R: std::io::Read>(
    reader: R,
    smiles_column: &str,
) -> Result<Vec<String>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if !headers.iter().any(|h| h.trim() == smiles_column) {
        return Err(DatasetError::MissingColumn(smiles_column.to_string()));
    }
    let mut binary = vec![true; headers.len()];
    let mut seen = vec![false; headers.len()];
    for result in rdr.records() {
        let rec = result?;
        for (i, cell) in rec.iter().enumerate() {
            match parse_label(cell) {
                Some(Some(_)) => seen[i] = true,
                Some(None) => {}
                None => binary[i] = false,
            }
        }
    }
    Ok(headers
        .iter()
        .enumerate()
        .filter(|&(i, h)| h.trim() != smiles_column && binary[i] && seen[i])
        .map(|(_, h)| h.trim().to_string())
        .collect())
}

/// [`detect_task_columns`] on a file.
pub fn detect_task_columns_in(
    path: &Path,
    smiles_column: &str,
) -> Result<Vec<String>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    detect_task_columns(file, smiles_column)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tasks(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn labels_and_skips() {
        let csv = "smiles,a,b\nCCO,1,\nC1CC,0,1\nc1ccccc1,,0.0\n";
        let ds = read_csv(csv.as_bytes(), "smiles", &tasks(&["a", "b"])).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.skipped_unparseable, 1);
        assert_eq!(ds.records[0].labels, vec![Some(true), None]);
        assert_eq!(ds.records[1].labels, vec![None, Some(false)]);
    }

    #[test]
    fn missing_column_is_config_error() {
        let err = read_csv("smiles,a\nC,1\n".as_bytes(), "smiles", &tasks(&["b"])).unwrap_err();
        assert!(err.is_config());
        let err = read_csv("smi,a\nC,1\n".as_bytes(), "smiles", &tasks(&["a"])).unwrap_err();
        assert!(matches!(err, DatasetError::MissingColumn(_)));
    }

    #[test]
    fn zero_rows_rejected() {
        let err = read_csv("smiles,a\nC1CC,1\n".as_bytes(), "smiles", &tasks(&["a"])).unwrap_err();
        assert!(matches!(err, DatasetError::NoRecords));
    }

    #[test]
    fn bad_label_rejected() {
        let err = read_csv("smiles,a\nC,2\n".as_bytes(), "smiles", &tasks(&["a"])).unwrap_err();
        assert!(matches!(err, DatasetError::InvalidLabel { row: 1, .. }));
    }

    #[test]
    fn detects_binary_columns() {
        let csv = "num,name,p_np,smiles,other\n1,x,1,CCO,\n2,y,0,CC,1.0\n3,z,,C,\n";
        let cols = detect_task_columns(csv.as_bytes(), "smiles").unwrap();
        assert_eq!(cols, tasks(&["p_np", "other"]));
        assert!(detect_task_columns(csv.as_bytes(), "smi").is_err());
    }
}
