//! UCR-archive text format: one series per line, the class label in the
//! first field and the values in the rest, separated by tabs or commas.
//!
//! Labels are mapped onto `{0, 1}` by ascending numeric order when every
//! label parses as a number, lexicographic order otherwise.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, CdnetError, Result};

/// Shortest series the classifier and denoisers accept.
pub const MIN_SERIES_LEN: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub values: Vec<f64>,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl LabeledSeries {
    pub fn new(values: Vec<f64>, label: u8) -> Self {
        Self {
            values,
            label,
            source_id: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Original label text for binary labels 0 and 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    originals: [String; 2],
}

impl LabelMap {
    pub fn new(zero: impl Into<String>, one: impl Into<String>) -> Self {
        Self {
            originals: [zero.into(), one.into()],
        }
    }

    pub fn identity() -> Self {
        Self::new("0", "1")
    }

    /// Builds the map from the distinct labels seen in a file.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut distinct: Vec<&str> = Vec::new();
        for l in labels {
            if !distinct.contains(&l) {
                distinct.push(l);
            }
        }
        if distinct.len() != 2 {
            return Err(CdnetError::NotBinary(distinct.len()));
        }
        distinct.sort_by(|a, b| compare_labels(a, b));
        Ok(Self::new(distinct[0], distinct[1]))
    }

    pub fn original(&self, label: u8) -> &str {
        &self.originals[usize::from(label.min(1))]
    }

    pub fn binary(&self, original: &str) -> Option<u8> {
        self.originals
            .iter()
            .position(|o| o == original || same_number(o, original))
            .map(|i| i as u8)
    }
}

fn same_number(a: &str, b: &str) -> bool {
    matches!((a.parse::<f64>(), b.parse::<f64>()), (Ok(x), Ok(y)) if x == y)
}

fn compare_labels(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x
            .partial_cmp(&y)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<LabeledSeries>,
    pub test: Vec<LabeledSeries>,
    pub label_map: LabelMap,
}

impl Dataset {
    /// Series length shared by every sample, checked across both splits.
    pub fn series_len(&self) -> Result<usize> {
        let mut all = self.train.iter().chain(&self.test);
        let first = all
            .next()
            .ok_or_else(|| invalid("dataset has no samples"))?
            .len();
        if let Some(bad) = all.find(|s| s.len() != first) {
            return Err(invalid(format!(
                "dataset {} mixes series lengths {first} and {}",
                self.name,
                bad.len()
            )));
        }
        Ok(first)
    }

    /// Checks the invariants required before training.
    pub fn validate_for_training(&self) -> Result<usize> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(invalid(format!(
                "dataset {} needs non-empty train and test splits",
                self.name
            )));
        }
        let m = self.series_len()?;
        if m < MIN_SERIES_LEN {
            return Err(invalid(format!(
                "series length {m} is below the minimum {MIN_SERIES_LEN}"
            )));
        }
        for s in self.train.iter().chain(&self.test) {
            if s.label > 1 {
                return Err(invalid(format!("label {} is not binary", s.label)));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(invalid("series contains non-finite values"));
            }
        }
        Ok(m)
    }
}

/// Zero mean, unit population standard deviation. Series whose standard
/// deviation is below `1e-9` are only centred, which leaves them at zero.
pub fn znormalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v -= mean;
        if std >= 1e-9 {
            *v /= std;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Delimiter {
    Tab,
    Comma,
    Whitespace,
}

impl Delimiter {
    fn detect(line: &str) -> Self {
        if line.contains('\t') {
            Delimiter::Tab
        } else if line.contains(',') {
            Delimiter::Comma
        } else {
            Delimiter::Whitespace
        }
    }

    fn split<'a>(self, line: &'a str) -> Box<dyn Iterator<Item = &'a str> + 'a> {
        match self {
            Delimiter::Tab => Box::new(line.split('\t').map(str::trim)),
            Delimiter::Comma => Box::new(line.split(',').map(str::trim)),
            Delimiter::Whitespace => Box::new(line.split_whitespace()),
        }
    }
}

struct RawRow {
    label: String,
    values: Vec<f64>,
}

fn parse_rows(text: &str, origin: &str) -> Result<Vec<RawRow>> {
    let mut delimiter = None;
    let mut rows: Vec<RawRow> = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row_no = i + 1;
        let d = *delimiter.get_or_insert_with(|| Delimiter::detect(line));
        let mut fields = d.split(line);
        let label = fields.next().unwrap_or_default().to_string();
        let mut values = Vec::new();
        for (col, field) in fields.enumerate() {
            let v: f64 = field.parse().map_err(|_| CdnetError::Parse {
                location: format!("{origin} row {row_no}, column {}", col + 2),
                detail: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(CdnetError::Parse {
                    location: format!("{origin} row {row_no}, column {}", col + 2),
                    detail: "value is not finite".into(),
                });
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(CdnetError::Parse {
                location: format!("{origin} row {row_no}"),
                detail: "row has a label but no values".into(),
            });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(CdnetError::Parse {
                    location: format!("{origin} row {row_no}"),
                    detail: format!("ragged row: {} values, expected {w}", values.len()),
                })
            }
            _ => {}
        }
        rows.push(RawRow { label, values });
    }
    if rows.is_empty() {
        return Err(CdnetError::Parse {
            location: origin.to_string(),
            detail: "no rows".into(),
        });
    }
    Ok(rows)
}

fn into_series(
    rows: Vec<RawRow>,
    map: &LabelMap,
    normalize: bool,
    origin: &str,
) -> Result<Vec<LabeledSeries>> {
    rows.into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            let label = map.binary(&r.label).ok_or_else(|| CdnetError::Parse {
                location: format!("{origin} row {}", i + 1),
                detail: format!("label {:?} is not in the label map", r.label),
            })?;
            if normalize {
                znormalize(&mut r.values);
            }
            Ok(LabeledSeries {
                values: r.values,
                label,
                source_id: Some(format!("{origin}:{}", i + 1)),
            })
        })
        .collect()
}

/// Parses UCR-format text. See [`load_ucr_split`].
pub fn parse_ucr(
    text: &str,
    normalize: bool,
    origin: &str,
) -> Result<(Vec<LabeledSeries>, LabelMap)> {
    let rows = parse_rows(text, origin)?;
    let map = LabelMap::from_labels(rows.iter().map(|r| r.label.as_str()))?;
    let series = into_series(rows, &map, normalize, origin)?;
    Ok((series, map))
}

/// Reads one UCR split file.
pub fn load_ucr_split(path: &Path, normalize: bool) -> Result<(Vec<LabeledSeries>, LabelMap)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_ucr(&text, normalize, &path.display().to_string())
}

/// Reads a train/test pair, mapping labels consistently across both files.
pub fn load_dataset(
    name: &str,
    train_path: &Path,
    test_path: &Path,
    normalize: bool,
) -> Result<Dataset> {
    let read = |p: &Path| -> Result<Vec<RawRow>> {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        parse_rows(&text, &p.display().to_string())
    };
    let train_rows = read(train_path)?;
    let test_rows = read(test_path)?;
    let map = LabelMap::from_labels(
        train_rows
            .iter()
            .chain(&test_rows)
            .map(|r| r.label.as_str()),
    )?;
    let dataset = Dataset {
        name: name.to_string(),
        train: into_series(
            train_rows,
            &map,
            normalize,
            &train_path.display().to_string(),
        )?,
        test: into_series(test_rows, &map, normalize, &test_path.display().to_string())?,
        label_map: map,
    };
    dataset.series_len()?;
    Ok(dataset)
}

/// Standard `<dir>/<name>_TRAIN.tsv` and `<dir>/<name>_TEST.tsv` paths.
pub fn split_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{name}_TRAIN.tsv")),
        dir.join(format!("{name}_TEST.tsv")),
    )
}

/// Renders series as tab-separated UCR text using the original labels.
/// Values are printed in shortest round-trip form.
pub fn format_ucr(series: &[LabeledSeries], map: &LabelMap) -> String {
    let mut out = String::new();
    for s in series {
        out.push_str(map.original(s.label));
        for v in &s.values {
            let _ = write!(out, "\t{v:?}");
        }
        out.push('\n');
    }
    out
}

/// Writes both splits under `dir` (created if missing) and returns the paths.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if dataset.train.is_empty() && dataset.test.is_empty() {
        return Err(invalid(format!("dataset {} is empty", dataset.name)));
    }
    dataset.series_len()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (train, test) = split_paths(dir, &dataset.name);
    fs::write(&train, format_ucr(&dataset.train, &dataset.label_map)).map_err(io_err(&train))?;
    fs::write(&test, format_ucr(&dataset.test, &dataset.label_map)).map_err(io_err(&test))?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_labels_by_numeric_order() {
        let text = "1\t0.5\t-0.5\n-1\t1.0\t2.0\n";
        let (series, map) = parse_ucr(text, false, "mem").unwrap();
        assert_eq!(map.original(0), "-1");
        assert_eq!(map.original(1), "1");
        assert_eq!(series[0].label, 1);
        assert_eq!(series[0].values, vec![0.5, -0.5]);
        assert_eq!(series[1].label, 0);
    }

    #[test]
    fn numeric_order_beats_lexicographic() {
        let map = LabelMap::from_labels(["10", "9"]).unwrap();
        assert_eq!(map.original(0), "9");
        let map = LabelMap::from_labels(["b", "a"]).unwrap();
        assert_eq!(map.original(0), "a");
    }

    #[test]
    fn label_map_ignores_row_order() {
        let a = parse_ucr("2,1,1\n1,0,0\n", false, "a").unwrap().1;
        let b = parse_ucr("1,0,0\n2,1,1\n", false, "b").unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn comma_and_crlf_are_accepted() {
        let (series, _) = parse_ucr("0,1,2,3\r\n1,4,5,6\r\n", false, "mem").unwrap();
        assert_eq!(series[1].values, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn rejects_more_than_two_labels() {
        let err = parse_ucr("1\t0\n2\t0\n3\t0\n", false, "mem").unwrap_err();
        assert!(matches!(err, CdnetError::NotBinary(3)));
    }

    #[test]
    fn ragged_rows_report_row_number() {
        let err = parse_ucr("1\t0\t1\n2\t0\n", false, "mem").unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn bad_value_reports_position() {
        let err = parse_ucr("1\t0\t1\n2\t0\tx\n", false, "mem").unwrap_err();
        assert!(err.to_string().contains("row 2, column 3"), "{err}");
    }

    #[test]
    fn znormalize_examples() {
        let mut c = vec![1.0, 1.0, 1.0];
        znormalize(&mut c);
        assert_eq!(c, vec![0.0, 0.0, 0.0]);
        let mut v = vec![0.0, 2.0];
        znormalize(&mut v);
        assert_eq!(v, vec![-1.0, 1.0]);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = Dataset {
            name: "empty".into(),
            train: vec![],
            test: vec![],
            label_map: LabelMap::identity(),
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(save_dataset(&ds, dir.path()).is_err());
    }
}
