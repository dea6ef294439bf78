//! In-memory longitudinal panel and wide-per-time CSV ingestion.
//!
//! One CSV row holds one subject at one time point: a subject column, a time
//! column, the response column, and one column per feature. Time values are
//! used only to order each subject's rows; spacing is ignored. Any transform
//! of the abundances (e.g. log) is the caller's responsibility.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

/// Mean squared first difference below which a feature is reported as
/// near-constant.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("missing or non-numeric cell at line {line}, column `{column}`")]
    MissingCell { line: u64, column: String },
    #[error("subject `{subject}` has {rows} rows, expected {expected}")]
    RaggedPanel {
        subject: String,
        rows: usize,
        expected: usize,
    },
    #[error("subject `{subject}` has more than one row at time {time}")]
    DuplicateKey { subject: String, time: f64 },
    #[error("no data rows")]
    Empty,
    #[error("no feature columns besides subject, time and response")]
    NoFeatures,
    #[error("duplicate feature name `{0}`")]
    DuplicateFeature(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("inconsistent dimensions: {0}")]
    Shape(String),
}

/// Column roles for CSV ingestion. All columns not named here are features.
#[derive(Debug, Clone)]
pub struct ColumnConfig {
    pub subject: String,
    pub time: String,
    pub response: String,
    pub delimiter: u8,
}

impl Default for ColumnConfig {
    fn default() -> Self {
        Self {
            subject: "subject".into(),
            time: "time".into(),
            response: "response".into(),
            delimiter: b',',
        }
    }
}

/// Subjects × time points × features panel with one response per subject
/// and time point. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    responses: DMatrix<f64>,
    features: Vec<DMatrix<f64>>,
    feature_names: Vec<String>,
    subject_ids: Vec<String>,
}

impl LongitudinalDataset {
    /// `responses` is `n × T`; `features[j]` is the `n × T` trajectory
    /// matrix of feature `j`.
    pub fn new(
        subject_ids: Vec<String>,
        feature_names: Vec<String>,
        responses: DMatrix<f64>,
        features: Vec<DMatrix<f64>>,
    ) -> Result<Self, DataError> {
        let (n, t) = responses.shape();
        if n == 0 || t == 0 {
            return Err(DataError::Empty);
        }
        if features.is_empty() {
            return Err(DataError::NoFeatures);
        }
        if subject_ids.len() != n {
            return Err(DataError::Shape(format!(
                "{} subject ids for {n} response rows",
                subject_ids.len()
            )));
        }
        if feature_names.len() != features.len() {
            return Err(DataError::Shape(format!(
                "{} feature names for {} feature matrices",
                feature_names.len(),
                features.len()
            )));
        }
        for (name, m) in feature_names.iter().zip(&features) {
            if m.shape() != (n, t) {
                return Err(DataError::Shape(format!(
                    "feature `{name}` is {:?}, expected {:?}",
                    m.shape(),
                    (n, t)
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite(format!("feature `{name}`")));
            }
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("responses".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateFeature(name.clone()));
            }
        }
        Ok(Self {
            responses,
            features,
            feature_names,
            subject_ids,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.responses.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.responses.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// `n × T` response matrix.
    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    /// `n × T` trajectories of feature `j`.
    pub fn feature(&self, j: usize) -> &DMatrix<f64> {
        &self.features[j]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }
}

struct Row {
    time: f64,
    response: f64,
    features: Vec<f64>,
}

/// Loads a wide-per-time panel from `path`.
pub fn load_long_csv(
    path: impl AsRef<Path>,
    config: &ColumnConfig,
) -> Result<LongitudinalDataset, DataError> {
    read_long_csv(File::open(path)?, config)
}

/// Reads a wide-per-time panel. Subjects are ordered by id, and each
/// subject's rows by time, so the result does not depend on row order.
pub fn read_long_csv<R: Read>(
    reader: R,
    config: &ColumnConfig,
) -> Result<LongitudinalDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(config.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let subject_col = find(&config.subject)?;
    let time_col = find(&config.time)?;
    let response_col = find(&config.response)?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != subject_col && c != time_col && c != response_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(DataError::NoFeatures);
    }
    let feature_names: Vec<String> = feature_cols
        .iter()
        .map(|&c| headers[c].to_string())
        .collect();

    let mut by_subject: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |c: usize| -> Result<f64, DataError> {
            record
                .get(c)
                .filter(|s| !s.is_empty())
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::MissingCell {
                    line,
                    column: headers.get(c).unwrap_or("").to_string(),
                })
        };
        let subject = record
            .get(subject_col)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| DataError::MissingCell {
                line,
                column: config.subject.clone(),
            })?
            .to_string();
        let time = cell(time_col)?;
        let response = cell(response_col)?;
        let features = feature_cols
            .iter()
            .map(|&c| cell(c))
            .collect::<Result<Vec<_>, _>>()?;
        by_subject.entry(subject).or_default().push(Row {
            time,
            response,
            features,
        });
    }
    if by_subject.is_empty() {
        return Err(DataError::Empty);
    }

    for (subject, rows) in by_subject.iter_mut() {
        rows.sort_by(|a, b| a.time.total_cmp(&b.time));
        if let Some(w) = rows.windows(2).find(|w| w[0].time == w[1].time) {
            return Err(DataError::DuplicateKey {
                subject: subject.clone(),
                time: w[0].time,
            });
        }
    }

    let n_times = panel_length(by_subject.values().map(Vec::len));
    if let Some((subject, rows)) = by_subject.iter().find(|(_, r)| r.len() != n_times) {
        return Err(DataError::RaggedPanel {
            subject: subject.clone(),
            rows: rows.len(),
            expected: n_times,
        });
    }

    let n = by_subject.len();
    let p = feature_names.len();
    let mut responses = DMatrix::zeros(n, n_times);
    let mut features = vec![DMatrix::zeros(n, n_times); p];
    for (i, rows) in by_subject.values().enumerate() {
        for (t, row) in rows.iter().enumerate() {
            responses[(i, t)] = row.response;
            for (j, v) in row.features.iter().enumerate() {
                features[j][(i, t)] = *v;
            }
        }
    }
    let subject_ids = by_subject.into_keys().collect();
    LongitudinalDataset::new(subject_ids, feature_names, responses, features)
}

/// Most common per-subject row count; ties go to the larger count.
fn panel_length(counts: impl Iterator<Item = usize>) -> usize {
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for c in counts {
        *freq.entry(c).or_default() += 1;
    }
    freq.into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
        .map_or(0, |(len, _)| len)
}

/// Writes the panel in the layout read by [`read_long_csv`]. Time points are
/// written as `1..=T`. Values use the shortest representation that parses
/// back to the same `f64`.
pub fn write_long_csv<W: Write>(
    dataset: &LongitudinalDataset,
    writer: W,
    config: &ColumnConfig,
) -> Result<(), DataError> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(config.delimiter)
        .from_writer(writer);
    let mut header = vec![
        config.subject.clone(),
        config.time.clone(),
        config.response.clone(),
    ];
    header.extend(dataset.feature_names.iter().cloned());
    wtr.write_record(&header)?;
    for (i, subject) in dataset.subject_ids.iter().enumerate() {
        for t in 0..dataset.n_times() {
            let mut record = Vec::with_capacity(header.len());
            record.push(subject.clone());
            record.push((t + 1).to_string());
            record.push(dataset.responses[(i, t)].to_string());
            record.extend(dataset.features.iter().map(|f| f[(i, t)].to_string()));
            wtr.write_record(&record)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_long_csv(
    dataset: &LongitudinalDataset,
    path: impl AsRef<Path>,
    config: &ColumnConfig,
) -> Result<(), DataError> {
    write_long_csv(dataset, File::create(path)?, config)
}

/// Features whose first differences make degenerate design columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Every first difference is exactly zero: the design block is all zeros.
    pub constant_features: Vec<usize>,
    /// Not constant, but the mean squared first difference is below the floor.
    pub near_constant_features: Vec<usize>,
    pub variance_floor: f64,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.constant_features.is_empty() && self.near_constant_features.is_empty()
    }
}

pub fn validate(dataset: &LongitudinalDataset) -> ValidationReport {
    validate_with_floor(dataset, DEFAULT_VARIANCE_FLOOR)
}

pub fn validate_with_floor(dataset: &LongitudinalDataset, variance_floor: f64) -> ValidationReport {
    let mut constant_features = Vec::new();
    let mut near_constant_features = Vec::new();
    let (n, t) = (dataset.n_subjects(), dataset.n_times());
    for (j, m) in dataset.features.iter().enumerate() {
        let mut sum_sq = 0.0;
        let mut all_zero = true;
        for i in 0..n {
            for s in 1..t {
                let d = m[(i, s)] - m[(i, s - 1)];
                all_zero &= d == 0.0;
                sum_sq += d * d;
            }
        }
        let count = (n * t.saturating_sub(1)).max(1) as f64;
        if all_zero {
            constant_features.push(j);
        } else if sum_sq / count < variance_floor {
            near_constant_features.push(j);
        }
    }
    ValidationReport {
        constant_features,
        near_constant_features,
        variance_floor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LongitudinalDataset, DataError> {
        read_long_csv(text.as_bytes(), &ColumnConfig::default())
    }

    #[test]
    fn minimal_panel() {
        let ds = parse("subject,time,response,a\nS1,1,1,2\nS1,2,4,3\nS1,3,9,5\nS1,4,16,7\n").unwrap();
        assert_eq!(
            (ds.n_subjects(), ds.n_times(), ds.n_features()),
            (1, 4, 1)
        );
        assert_eq!(ds.responses()[(0, 2)], 9.0);
        assert_eq!(ds.feature(0)[(0, 3)], 7.0);
    }

    #[test]
    fn rows_are_sorted_by_subject_and_time() {
        let ds = parse("subject,time,response,a\nB,2,4,0\nA,2,2,0\nB,1,3,0\nA,1,1,0\n").unwrap();
        assert_eq!(ds.subject_ids(), &["A".to_string(), "B".to_string()]);
        assert_eq!(ds.responses()[(0, 0)], 1.0);
        assert_eq!(ds.responses()[(1, 1)], 4.0);
    }

    #[test]
    fn unequal_time_spacing_is_accepted() {
        let ds = parse("subject,time,response,a\nS1,0,1,0\nS1,2,2,1\nS1,14,3,5\n").unwrap();
        assert_eq!(ds.n_times(), 3);
    }

    #[test]
    fn ragged_subject_is_rejected() {
        let mut text = String::from("subject,time,response,a\n");
        for s in 1..=4 {
            let rows = if s == 3 { 3 } else { 4 };
            for t in 1..=rows {
                text.push_str(&format!("S{s},{t},1.0,2.0\n"));
            }
        }
        match parse(&text) {
            Err(DataError::RaggedPanel {
                subject,
                rows,
                expected,
            }) => {
                assert_eq!(subject, "S3");
                assert_eq!((rows, expected), (3, 4));
            }
            other => panic!("expected RaggedPanel, got {other:?}"),
        }
    }

    #[test]
    fn empty_and_non_numeric_cells_are_rejected() {
        let err = parse("subject,time,response,a\nS1,1,,2\nS1,2,1,2\n").unwrap_err();
        assert!(matches!(err, DataError::MissingCell { ref column, .. } if column == "response"));
        let err = parse("subject,time,response,a\nS1,1,1,abc\nS1,2,1,2\n").unwrap_err();
        assert!(matches!(err, DataError::MissingCell { ref column, .. } if column == "a"));
        let err = parse("subject,time,response,a\nS1,1,1,NaN\nS1,2,1,2\n").unwrap_err();
        assert!(matches!(err, DataError::MissingCell { .. }));
    }

    #[test]
    fn duplicate_subject_time_is_rejected() {
        let err = parse("subject,time,response,a\nS1,1,1,2\nS1,1,3,2\n").unwrap_err();
        assert!(matches!(err, DataError::DuplicateKey { ref subject, time } if subject == "S1" && time == 1.0));
    }

    #[test]
    fn missing_role_column() {
        let err = parse("id,time,response,a\nS1,1,1,2\n").unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(ref c) if c == "subject"));
    }

    #[test]
    fn semicolon_delimiter() {
        let cfg = ColumnConfig {
            delimiter: b';',
            ..ColumnConfig::default()
        };
        let ds = read_long_csv("subject;time;response;a\nS1;1;1.5;2\nS1;2;1;2\n".as_bytes(), &cfg).unwrap();
        assert_eq!(ds.responses()[(0, 0)], 1.5);
    }

    #[test]
    fn duplicate_feature_names_rejected() {
        let r = DMatrix::zeros(1, 2);
        let f = DMatrix::zeros(1, 2);
        let err = LongitudinalDataset::new(
            vec!["S1".into()],
            vec!["a".into(), "a".into()],
            r,
            vec![f.clone(), f],
        )
        .unwrap_err();
        assert!(matches!(err, DataError::DuplicateFeature(_)));
    }

    #[test]
    fn validation_flags_only_globally_constant_features() {
        let r = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        let constant = DMatrix::from_element(2, 3, 7.0);
        // constant for subject 0 only
        let partly = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 0.0, 2.0, 3.0]);
        let tiny = DMatrix::from_row_slice(2, 3, &[1.0, 1.0 + 1e-7, 1.0, 0.0, 0.0, 1e-7]);
        let ds = LongitudinalDataset::new(
            vec!["a".into(), "b".into()],
            vec!["c".into(), "p".into(), "t".into()],
            r,
            vec![constant, partly, tiny],
        )
        .unwrap();
        let report = validate(&ds);
        assert_eq!(report.constant_features, vec![0]);
        assert_eq!(report.near_constant_features, vec![2]);
        assert!(!report.is_clean());
    }
}
