//! Dataset ingestion, the synthetic benchmark, stratified splits and the
//! append-only feedback journal.
//!
//! Feature vectors are the ingestion boundary: every record carries a
//! precomputed numeric vector and an optional year label.
//!
//! CSV files use the header `doc_id,year,f0,...,f{F-1}` with an empty year for
//! unlabeled rows. JSON-lines files hold one [`DocumentRecord`] per line.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub features: Vec<f64>,
    pub year: Option<i32>,
    pub split: Split,
}

impl DocumentRecord {
    pub fn labeled(doc_id: impl Into<String>, features: Vec<f64>, year: i32) -> Self {
        DocumentRecord {
            doc_id: doc_id.into(),
            features,
            year: Some(year),
            split: Split::Train,
        }
    }

    pub fn unlabeled(doc_id: impl Into<String>, features: Vec<f64>) -> Self {
        DocumentRecord {
            doc_id: doc_id.into(),
            features,
            year: None,
            split: Split::Unlabeled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.doc_id.is_empty() {
            return Err(Error::input("doc_id is empty"));
        }
        if let Some(i) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "{}: feature {i} is not finite",
                self.doc_id
            )));
        }
        match (self.year, self.split) {
            (None, Split::Train | Split::Test) => Err(Error::input(format!(
                "{}: labeled record has no year",
                self.doc_id
            ))),
            (Some(_), Split::Unlabeled) => Err(Error::input(format!(
                "{}: unlabeled record carries a year",
                self.doc_id
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    CsvFeatures,
    JsonLines,
}

impl DatasetFormat {
    /// Guesses the format from a file extension (`.jsonl`/`.json` → JSON-lines).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => DatasetFormat::JsonLines,
            _ => DatasetFormat::CsvFeatures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    /// Records that failed validation; they are skipped in lenient mode.
    pub rejected: Vec<RecordIssue>,
    pub warnings: Vec<String>,
}

/// Loads and validates a dataset. Invalid records fail the whole load unless
/// `lenient` is set, in which case they are dropped and listed in the report.
/// Rows whose feature dimension differs from the first row are always a
/// schema error.
pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DatasetFormat,
    lenient: bool,
) -> Result<(Vec<DocumentRecord>, LoadReport)> {
    let path = path.as_ref();
    let mut report = LoadReport::default();
    let parsed = match format {
        DatasetFormat::CsvFeatures => parse_csv(path, &mut report)?,
        DatasetFormat::JsonLines => parse_jsonl(path, &mut report)?,
    };

    let mut records = Vec::with_capacity(parsed.len());
    let mut dim: Option<(usize, usize)> = None;
    for (line, record) in parsed {
        match dim {
            None => dim = Some((record.features.len(), line)),
            Some((expected, _)) if expected != record.features.len() => {
                return Err(Error::Schema {
                    line,
                    expected,
                    found: record.features.len(),
                })
            }
            _ => {}
        }
        match record.validate() {
            Ok(()) => records.push(record),
            Err(e) => report.rejected.push(RecordIssue {
                line,
                message: e.to_string(),
            }),
        }
    }
    if !report.rejected.is_empty() && !lenient {
        let first = &report.rejected[0];
        return Err(Error::InvalidRecords(
            report.rejected.len(),
            format!("line {}: {}", first.line, first.message),
        ));
    }
    Ok((records, report))
}

/// Parses CSV rows; unparsable rows are recorded in `report.rejected`.
fn parse_csv(path: &Path, report: &mut LoadReport) -> Result<Vec<(usize, DocumentRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() < 2 || &headers[0] != "doc_id" || &headers[1] != "year" {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: "header must start with doc_id,year".into(),
        });
    }
    for (i, name) in headers.iter().skip(2).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: 1,
                message: format!("column {} must be named f{i}, found {name}", i + 2),
            });
        }
    }
    let expected = headers.len() - 2;

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.len() != headers.len() {
            return Err(Error::Schema {
                line,
                expected,
                found: row.len().saturating_sub(2),
            });
        }
        match csv_row(&row) {
            Ok(r) => out.push((line, r)),
            Err(message) => report.rejected.push(RecordIssue { line, message }),
        }
    }
    Ok(out)
}

fn csv_row(row: &csv::StringRecord) -> std::result::Result<DocumentRecord, String> {
    let doc_id = row[0].to_string();
    let year = match row[1].trim() {
        "" => None,
        y => Some(
            y.parse::<i32>()
                .map_err(|e| format!("{doc_id}: bad year {y:?}: {e}"))?,
        ),
    };
    let features = row
        .iter()
        .skip(2)
        .enumerate()
        .map(|(i, v)| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| format!("{doc_id}: bad feature f{i} {v:?}: {e}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let split = if year.is_some() {
        Split::Train
    } else {
        Split::Unlabeled
    };
    Ok(DocumentRecord {
        doc_id,
        features,
        year,
        split,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            path: path.to_owned(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// JSON-lines record; `split` defaults from the presence of a year.
#[derive(Deserialize)]
struct JsonRecord {
    doc_id: String,
    features: Vec<f64>,
    #[serde(default)]
    year: Option<i32>,
    #[serde(default)]
    split: Option<Split>,
}

fn parse_jsonl(path: &Path, report: &mut LoadReport) -> Result<Vec<(usize, DocumentRecord)>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JsonRecord>(&line) {
            Ok(r) => {
                let split = r.split.unwrap_or(if r.year.is_some() {
                    Split::Train
                } else {
                    Split::Unlabeled
                });
                out.push((
                    line_no,
                    DocumentRecord {
                        doc_id: r.doc_id,
                        features: r.features,
                        year: r.year,
                        split,
                    },
                ));
            }
            Err(e) => report.rejected.push(RecordIssue {
                line: line_no,
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Writes records in the given format. CSV cannot express the train/test
/// distinction, so labeled records load back as [`Split::Train`].
pub fn save_dataset(
    path: impl AsRef<Path>,
    records: &[DocumentRecord],
    format: DatasetFormat,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        DatasetFormat::JsonLines => {
            let mut out = String::new();
            for r in records {
                out.push_str(&serde_json::to_string(r)?);
                out.push('\n');
            }
            std::fs::write(path, out)?;
        }
        DatasetFormat::CsvFeatures => {
            let dim = records.first().map_or(0, |r| r.features.len());
            if let Some(r) = records.iter().find(|r| r.features.len() != dim) {
                return Err(Error::input(format!(
                    "{}: {} features, expected {dim}",
                    r.doc_id,
                    r.features.len()
                )));
            }
            let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
            let mut header = vec!["doc_id".to_string(), "year".to_string()];
            header.extend((0..dim).map(|i| format!("f{i}")));
            w.write_record(&header).map_err(|e| csv_error(path, e))?;
            for r in records {
                let mut row = vec![
                    r.doc_id.clone(),
                    r.year.map(|y| y.to_string()).unwrap_or_default(),
                ];
                row.extend(r.features.iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(|e| csv_error(path, e))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Full periods of the sine/cosine pair in the synthetic signature over the
/// year range.
pub const SIGNATURE_TURNS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub year_lo: i32,
    pub year_hi: i32,
    pub docs_per_year: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub mixing_seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.year_lo >= self.year_hi {
            return Err(Error::param(format!(
                "year range [{}, {}] is empty",
                self.year_lo, self.year_hi
            )));
        }
        if self.docs_per_year == 0 {
            return Err(Error::param("docs_per_year must be positive"));
        }
        if self.feature_dim < 4 {
            return Err(Error::param(format!(
                "feature_dim must be >= 4, got {}",
                self.feature_dim
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::param(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// The noiseless year signature `g(y)`: the year scaled to `[-1, 1]`, a
    /// sine/cosine pair completing [`SIGNATURE_TURNS`] turns over the range,
    /// and the squared scaled year; zero-padded to `feature_dim`.
    pub fn signature(&self, year: i32) -> Vec<f64> {
        let span = (self.year_hi - self.year_lo) as f64;
        let offset = (year - self.year_lo) as f64;
        let t = 2.0 * offset / span - 1.0;
        let omega = 2.0 * PI * SIGNATURE_TURNS / (span + 1.0);
        let mut g = vec![0.0; self.feature_dim];
        g[0] = t;
        g[1] = (omega * offset).sin();
        g[2] = (omega * offset).cos();
        g[3] = t * t;
        g
    }

    /// Random orthogonal `F × F` mixing matrix (row-major), from Gram-Schmidt
    /// on a seeded Gaussian matrix.
    pub fn mixing_matrix(&self) -> Vec<Vec<f64>> {
        let f = self.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(self.mixing_seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(f);
        while rows.len() < f {
            let mut v: Vec<f64> = (0..f).map(|_| StandardNormal.sample(&mut rng)).collect();
            for r in &rows {
                let p: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= p * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|a| *a /= norm);
                rows.push(v);
            }
        }
        rows
    }
}

/// Synthetic labeled documents: `features = A · g(year) + ε`, with `A` from
/// [`SyntheticSpec::mixing_matrix`] and `ε ~ N(0, σ²)` per coordinate.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<DocumentRecord>> {
    spec.validate()?;
    let a = spec.mixing_matrix();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.mixing_seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::param(e.to_string()))?;
    let n_years = (spec.year_hi - spec.year_lo + 1) as usize;
    let mut out = Vec::with_capacity(n_years * spec.docs_per_year);
    for year in spec.year_lo..=spec.year_hi {
        let g = spec.signature(year);
        let clean: Vec<f64> = a
            .iter()
            .map(|row| row.iter().zip(&g).map(|(x, y)| x * y).sum())
            .collect();
        for k in 0..spec.docs_per_year {
            let features = clean
                .iter()
                .map(|c| {
                    if spec.noise_sigma > 0.0 {
                        c + noise.sample(&mut noise_rng)
                    } else {
                        *c
                    }
                })
                .collect();
            out.push(DocumentRecord::labeled(
                format!("{year}-{k:04}"),
                features,
                year,
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub train: Vec<DocumentRecord>,
    pub test: Vec<DocumentRecord>,
    /// Years with a single labeled record; those records go to train.
    pub singleton_years: Vec<i32>,
}

/// Stratified split by year. Each year with at least two records contributes
/// `round(test_fraction · n)` records (clamped to `[1, n − 1]`) to the test
/// set. Unlabeled records are ignored.
pub fn split_dataset(
    records: &[DocumentRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitOutcome> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_year: BTreeMap<i32, Vec<&DocumentRecord>> = BTreeMap::new();
    for r in records {
        if let Some(y) = r.year {
            by_year.entry(y).or_default().push(r);
        }
    }
    let labeled: usize = by_year.values().map(Vec::len).sum();
    if labeled < 2 {
        return Err(Error::input(format!(
            "need at least 2 labeled records to split, got {labeled}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitOutcome {
        train: Vec::new(),
        test: Vec::new(),
        singleton_years: Vec::new(),
    };
    for (year, mut group) in by_year {
        if group.len() == 1 {
            out.singleton_years.push(year);
            out.train.push(with_split(group[0], Split::Train));
            continue;
        }
        group.shuffle(&mut rng);
        let n = group.len();
        let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        for (i, r) in group.into_iter().enumerate() {
            if i < n_test {
                out.test.push(with_split(r, Split::Test));
            } else {
                out.train.push(with_split(r, Split::Train));
            }
        }
    }
    Ok(out)
}

fn with_split(r: &DocumentRecord, split: Split) -> DocumentRecord {
    DocumentRecord { split, ..r.clone() }
}

/// Uses stored train/test assignments when the dataset carries any test
/// records, otherwise splits the labeled records with [`split_dataset`].
pub fn partition(
    records: &[DocumentRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitOutcome> {
    if records.iter().any(|r| r.split == Split::Test) {
        return Ok(SplitOutcome {
            train: records
                .iter()
                .filter(|r| r.split == Split::Train)
                .cloned()
                .collect(),
            test: records
                .iter()
                .filter(|r| r.split == Split::Test)
                .cloned()
                .collect(),
            singleton_years: Vec::new(),
        });
    }
    split_dataset(records, test_fraction, seed)
}

/// Replayed feedback journal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackStore {
    /// Latest entry per doc_id, in order of first appearance.
    pub records: Vec<DocumentRecord>,
    pub warnings: Vec<String>,
}

/// Appends labeled records to the journal and returns the number of distinct
/// documents it now holds.
pub fn feedback_append(store_path: impl AsRef<Path>, records: &[DocumentRecord]) -> Result<usize> {
    let store_path = store_path.as_ref();
    for r in records {
        if r.year.is_none() {
            return Err(Error::input(format!(
                "{}: feedback must be labeled",
                r.doc_id
            )));
        }
        r.validate()?;
    }
    // An interrupted earlier append may have left a torn final line; cut it
    // off so the journal stays line-aligned.
    if let Ok(existing) = std::fs::read(store_path) {
        if existing.last().is_some_and(|b| *b != b'\n') {
            let keep = existing
                .iter()
                .rposition(|b| *b == b'\n')
                .map_or(0, |i| i + 1);
            log::warn!(
                "{}: truncating torn trailing entry ({} bytes)",
                store_path.display(),
                existing.len() - keep
            );
            OpenOptions::new()
                .write(true)
                .open(store_path)?
                .set_len(keep as u64)?;
        }
    }
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(store_path)?;
    file.write_all(buf.as_bytes())?;
    file.sync_data()?;
    Ok(feedback_load(store_path)?.records.len())
}

/// Replays the journal with last-write-wins per doc_id. A corrupt final line
/// (an interrupted append) is dropped with a warning; corruption earlier in
/// the journal is an error. A missing journal is an empty store.
pub fn feedback_load(store_path: impl AsRef<Path>) -> Result<FeedbackStore> {
    let store_path = store_path.as_ref();
    let text = match std::fs::read_to_string(store_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(FeedbackStore::default()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let mut store = FeedbackStore::default();
    let mut position: HashMap<String, usize> = HashMap::new();
    for (k, (line, content)) in lines.iter().enumerate() {
        let parsed = serde_json::from_str::<DocumentRecord>(content)
            .map_err(|e| e.to_string())
            .and_then(|r| r.validate().map(|_| r).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => match position.get(&r.doc_id) {
                Some(&i) => store.records[i] = r,
                None => {
                    position.insert(r.doc_id.clone(), store.records.len());
                    store.records.push(r);
                }
            },
            Err(message) if k + 1 == lines.len() => {
                let warning = format!(
                    "{}: dropped corrupt trailing line {line}: {message}",
                    store_path.display()
                );
                log::warn!("{warning}");
                store.warnings.push(warning);
            }
            Err(message) => {
                return Err(Error::Parse {
                    path: store_path.to_owned(),
                    line: *line,
                    message,
                })
            }
        }
    }
    Ok(store)
}
