//! CSV ingestion: a header row, one label column, every other column
//! numeric. Row order is time order; the train/test split is a time cut.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use eraps_core::LabeledSeries;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainSplit {
    Count(usize),
    Fraction(f64),
}

impl TrainSplit {
    fn train_len(self, n: usize) -> usize {
        match self {
            TrainSplit::Count(c) => c,
            TrainSplit::Fraction(f) => (f * n as f64).floor() as usize,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub train: LabeledSeries,
    /// Test labels of classes never seen in training get indices at or
    /// above `n_classes`; no prefix of the model's labels can cover them.
    pub test: LabeledSeries,
    /// Raw label of each dense index, in first-appearance order.
    pub dictionary: Vec<String>,
    /// Classes the models are fit over.
    pub n_classes: usize,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub rows: usize,
    pub train: usize,
    pub test: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub dictionary: Vec<String>,
    pub unseen_test_labels: Vec<String>,
}

impl Ingested {
    pub fn summary(&self) -> IngestSummary {
        IngestSummary {
            rows: self.train.len() + self.test.len(),
            train: self.train.len(),
            test: self.test.len(),
            dim: self.train.dim(),
            n_classes: self.n_classes,
            dictionary: self.dictionary[..self.n_classes].to_vec(),
            unseen_test_labels: self.dictionary[self.n_classes..].to_vec(),
        }
    }
}

/// Reads `path`. With `classes`, the dictionary is exactly that list and
/// any other label is an error; otherwise it is built from the training rows
/// in order of first appearance.
pub fn ingest_csv(
    path: &Path,
    label_column: &str,
    split: TrainSplit,
    classes: Option<&[String]>,
) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .context("reading header row")?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| anyhow!("label column `{label_column}` not found in header"))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.with_context(|| format!("row {row}: malformed record"))?;
        if record.len() != header.len() {
            bail!("row {row}: expected {} fields, found {}", header.len(), record.len());
        }
        let mut x = Vec::with_capacity(feature_names.len());
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| anyhow!("row {row}: column `{}`: `{cell}` is not a number", header[j]))?;
            if !v.is_finite() {
                bail!("row {row}: column `{}`: `{cell}` is not finite", header[j]);
            }
            x.push(v);
        }
        features.push(x);
        raw_labels.push(record[label_idx].to_string());
    }

    let n = features.len();
    let n_train = split.train_len(n);
    if n_train == 0 || n_train >= n {
        bail!("train/test split of {n} rows at {n_train} leaves an empty part");
    }

    let mut dictionary: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let n_classes = match classes {
        Some(list) => {
            for c in list {
                if index.insert(c.clone(), dictionary.len()).is_some() {
                    bail!("classes: `{c}` is listed twice");
                }
                dictionary.push(c.clone());
            }
            if let Some((row, l)) = raw_labels.iter().enumerate().find(|(_, l)| !index.contains_key(*l)) {
                bail!("row {}: label `{l}` is not among the declared classes", row + 1);
            }
            list.len()
        }
        None => {
            for l in raw_labels.iter().take(n_train) {
                if !index.contains_key(l) {
                    index.insert(l.clone(), dictionary.len());
                    dictionary.push(l.clone());
                }
            }
            dictionary.len()
        }
    };
    for l in &raw_labels[n_train..] {
        if !index.contains_key(l) {
            index.insert(l.clone(), dictionary.len());
            dictionary.push(l.clone());
        }
    }
    let labels: Vec<usize> = raw_labels.iter().map(|l| index[l]).collect();
    let dim = feature_names.len();
    let test_features = features.split_off(n_train);
    let test_labels = labels[n_train..].to_vec();
    let train = LabeledSeries::new(features, labels[..n_train].to_vec(), n_classes, dim)?;
    let test = LabeledSeries::new(test_features, test_labels, dictionary.len().max(1), dim)?;
    Ok(Ingested {
        train,
        test,
        dictionary,
        n_classes,
        feature_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn time_cut_split() {
        let f = file("x,label\n1,a\n2,b\n3,a\n4,b\n");
        let d = ingest_csv(f.path(), "label", TrainSplit::Count(2), None).unwrap();
        assert_eq!(d.train.features(), &[vec![1.0], vec![2.0]]);
        assert_eq!(d.test.features(), &[vec![3.0], vec![4.0]]);
    }

    #[test]
    fn first_appearance_dictionary() {
        let f = file("label,x\na,1\nb,2\na,3\nb,4\n");
        let d = ingest_csv(f.path(), "label", TrainSplit::Count(3), None).unwrap();
        assert_eq!(d.dictionary, vec!["a", "b"]);
        assert_eq!(d.train.labels(), &[0, 1, 0]);
    }

    #[test]
    fn non_numeric_cell_names_the_row() {
        let f = file("x,label\n1,a\nzz,b\n3,a\n");
        let err = ingest_csv(f.path(), "label", TrainSplit::Count(2), None).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn unseen_test_label_is_appended() {
        let f = file("x,label\n1,a\n2,b\n3,c\n");
        let d = ingest_csv(f.path(), "label", TrainSplit::Count(2), None).unwrap();
        assert_eq!(d.n_classes, 2);
        assert_eq!(d.test.labels(), &[2]);
        assert_eq!(d.summary().unseen_test_labels, vec!["c"]);
    }

    #[test]
    fn declared_classes_fix_the_dictionary() {
        let f = file("x,label\n1,b\n2,b\n3,a\n");
        let classes = vec!["a".to_string(), "b".into(), "c".into()];
        let d = ingest_csv(f.path(), "label", TrainSplit::Count(2), Some(&classes)).unwrap();
        assert_eq!(d.n_classes, 3);
        assert_eq!(d.test.labels(), &[0]);
        let bad = file("x,label\n1,b\n2,z\n3,a\n");
        assert!(ingest_csv(bad.path(), "label", TrainSplit::Count(2), Some(&classes)).is_err());
    }

    #[test]
    fn empty_split_and_missing_column() {
        let f = file("x,label\n1,a\n2,b\n");
        assert!(ingest_csv(f.path(), "label", TrainSplit::Count(2), None).is_err());
        assert!(ingest_csv(f.path(), "y", TrainSplit::Count(1), None).is_err());
        let d = ingest_csv(f.path(), "label", TrainSplit::Fraction(0.5), None).unwrap();
        assert_eq!((d.train.len(), d.test.len()), (1, 1));
    }
}
