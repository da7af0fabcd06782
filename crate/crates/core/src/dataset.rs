//! CSV datasets and seeded random splits.
//!
//! Files are UTF-8 CSV with a header containing a `smiles` column; every
//! other column is a label, an empty cell meaning missing. Rows whose
//! SMILES fails to parse or perceive are skipped and counted.

use std::io::Read;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::perception::{perceive, PerceivedMolecule};
use crate::smiles::parse_smiles;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no `smiles` column in header")]
    MissingSmilesColumn,
    #[error("dataset has no usable rows")]
    EmptyDataset,
    #[error("row {row}: label `{value}` in column `{column}` is not a number")]
    BadLabel { row: usize, column: String, value: String },
    #[error("row {row}: classification label {value} is not 0 or 1")]
    NonBinaryLabel { row: usize, value: f64 },
    #[error("expected {expected} label columns, found {found}")]
    LabelArityMismatch { expected: usize, found: usize },
    #[error("need at least 5 records to split, got {0}")]
    TooSmall(usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Record {
    pub smiles: String,
    pub mol: PerceivedMolecule,
    pub labels: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub label_names: Vec<String>,
    /// `(1-based data row, reason)` for skipped rows.
    pub skipped: Vec<(usize, String)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_tasks(&self) -> usize {
        self.label_names.len()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            label_names: self.label_names.clone(),
            skipped: Vec::new(),
        }
    }

    /// Checks every present label is 0 or 1.
    pub fn check_binary(&self) -> Result<(), DatasetError> {
        for (row, r) in self.records.iter().enumerate() {
            for &v in r.labels.iter().flatten() {
                if v != 0.0 && v != 1.0 {
                    return Err(DatasetError::NonBinaryLabel { row: row + 1, value: v });
                }
            }
        }
        Ok(())
    }
}

pub fn load_csv(path: &Path) -> Result<Dataset, DatasetError> {
    load_csv_reader(std::fs::File::open(path)?)
}

pub fn load_csv_reader(reader: impl Read) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) if matches!(e.kind(), csv::ErrorKind::UnequalLengths { .. }) => return Err(e.into()),
        Err(_) => return Err(DatasetError::EmptyDataset),
    };
    if headers.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let smiles_col = headers.iter().position(|h| h == "smiles").ok_or(DatasetError::MissingSmilesColumn)?;
    let label_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != smiles_col).collect();
    let label_names: Vec<String> = label_cols.iter().map(|&c| headers[c].to_string()).collect();

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let smiles = row.get(smiles_col).unwrap_or("").to_string();
        let mut labels = Vec::with_capacity(label_cols.len());
        for (&c, name) in label_cols.iter().zip(&label_names) {
            let cell = row.get(c).unwrap_or("");
            if cell.is_empty() {
                labels.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| DatasetError::BadLabel {
                    row: i + 1,
                    column: name.clone(),
                    value: cell.to_string(),
                })?;
                labels.push(Some(v));
            }
        }
        let mol = parse_smiles(&smiles).map_err(|e| e.to_string()).and_then(|m| perceive(&m).map_err(|e| e.to_string()));
        match mol {
            Ok(mol) => records.push(Record { smiles, mol, labels }),
            Err(reason) => {
                warn!("row {}: skipping `{smiles}`: {reason}", i + 1);
                skipped.push((i + 1, reason));
            }
        }
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    Ok(Dataset {
        records,
        label_names,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 6:2:2 split: sizes `floor(0.6 n)`, `floor(0.2 n)` and the remainder.
pub fn split(n: usize, seed: u64) -> Result<Split, DatasetError> {
    if n < 5 {
        return Err(DatasetError::TooSmall(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 6 / 10;
    let n_valid = n * 2 / 10;
    let test = idx.split_off(n_train + n_valid);
    let valid = idx.split_off(n_train);
    Ok(Split { train: idx, valid, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<Dataset, DatasetError> {
        load_csv_reader(text.as_bytes())
    }

    #[test]
    fn parses_rows_and_missing_labels() {
        let d = load("smiles,a,b\nCCO,1,\nc1ccccc1,0,1\nCN,,0\n").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.label_names, vec!["a", "b"]);
        assert_eq!(d.records[0].labels, vec![Some(1.0), None]);
        assert_eq!(d.records[2].labels, vec![None, Some(0.0)]);
    }

    #[test]
    fn skips_bad_smiles() {
        let d = load("smiles\nCCO\nC1CC\nCC\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.skipped.len(), 1);
        assert_eq!(d.skipped[0].0, 2);
    }

    #[test]
    fn errors() {
        assert!(matches!(load(""), Err(DatasetError::EmptyDataset)));
        assert!(matches!(load("smiles\n"), Err(DatasetError::EmptyDataset)));
        assert!(matches!(load("mol,y\nCC,1\n"), Err(DatasetError::MissingSmilesColumn)));
        assert!(matches!(load("smiles,y\nCC,abc\n"), Err(DatasetError::BadLabel { .. })));
        assert!(matches!(load("smiles,y\nCC,2\n").unwrap().check_binary(), Err(DatasetError::NonBinaryLabel { .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split(10, 3).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (6, 2, 2));
        assert_eq!(split(10, 3).unwrap(), s);
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_ne!(split(100, 1).unwrap(), split(100, 2).unwrap());
        assert!(matches!(split(4, 0), Err(DatasetError::TooSmall(4))));
        let s = split(7, 0).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (4, 1, 2));
    }
}
