//! Dataset ingestion, synthetic registry data and result serialisation.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! emitted CSV value parses back to the identical `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::survival::{CensoredSample, Record};

/// Column mapping for an input file. Without a header row, column names are
/// zero-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub covariate: String,
    pub time: String,
    pub delta: String,
    pub group: Option<String>,
    pub delimiter: char,
    pub has_header: bool,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema {
            covariate: "x".into(),
            time: "t".into(),
            delta: "delta".into(),
            group: None,
            delimiter: ',',
            has_header: true,
        }
    }
}

impl DatasetSchema {
    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter).ok().filter(u8::is_ascii).ok_or_else(|| {
            Error::Schema(format!(
                "delimiter {:?} is not a single ASCII character",
                self.delimiter
            ))
        })
    }
}

/// Row counts from an ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub censored: usize,
    /// Percentage of kept rows with `delta = 0`.
    pub censoring_pct: f64,
}

impl IngestReport {
    pub fn new(rows_read: usize, rows_kept: usize, censored: usize) -> Self {
        let censoring_pct = if rows_kept == 0 {
            0.0
        } else {
            100.0 * censored as f64 / rows_kept as f64
        };
        IngestReport {
            rows_read,
            rows_kept,
            censored,
            censoring_pct,
        }
    }
}

fn column_index(headers: Option<&csv::StringRecord>, name: &str, width: usize) -> Result<usize> {
    let found = match headers {
        Some(h) => h.iter().position(|c| c.trim() == name),
        None => name.parse::<usize>().ok().filter(|&i| i < width),
    };
    found.ok_or_else(|| Error::Schema(format!("column `{name}` not found")))
}

fn parse_delta(s: &str) -> std::result::Result<bool, String> {
    match s.parse::<f64>() {
        Ok(0.0) => Ok(false),
        Ok(1.0) => Ok(true),
        _ => Err(format!("delta must be 0 or 1, got `{s}`")),
    }
}

fn parse_time(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("time must be a nonnegative number, got `{s}`")),
    }
}

fn parse_covariate(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("covariate must be a finite number, got `{s}`")),
    }
}

/// Reads a censored sample. With `groups`, only rows whose group column
/// matches one of the values are kept.
pub fn ingest(
    path: &Path,
    schema: &DatasetSchema,
    groups: Option<&[String]>,
) -> Result<(CensoredSample, IngestReport)> {
    let display = path.display().to_string();
    if groups.is_some() && schema.group.is_none() {
        return Err(Error::Schema("a group filter needs a group column".into()));
    }
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: display.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .has_headers(schema.has_header)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = if schema.has_header {
        Some(reader.headers()?.clone())
    } else {
        None
    };

    let mut records = Vec::new();
    let mut rows_read = 0usize;
    let mut columns: Option<(usize, usize, usize, Option<usize>)> = None;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                path: display.clone(),
                line,
                reason: e.to_string(),
            }
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let (ix, it, id, ig) = match columns {
            Some(c) => c,
            None => {
                let width = row.len();
                let c = (
                    column_index(headers.as_ref(), &schema.covariate, width)?,
                    column_index(headers.as_ref(), &schema.time, width)?,
                    column_index(headers.as_ref(), &schema.delta, width)?,
                    schema
                        .group
                        .as_deref()
                        .map(|g| column_index(headers.as_ref(), g, width))
                        .transpose()?,
                );
                *columns.insert(c)
            }
        };
        rows_read += 1;
        let field = |i: usize| row.get(i).unwrap_or("");
        let err = |reason: String| Error::Parse {
            path: display.clone(),
            line,
            reason,
        };
        if let (Some(wanted), Some(ig)) = (groups, ig) {
            if !wanted.iter().any(|g| g.trim() == field(ig)) {
                continue;
            }
        }
        let x = parse_covariate(field(ix)).map_err(err)?;
        let t = parse_time(field(it)).map_err(err)?;
        let delta = parse_delta(field(id)).map_err(err)?;
        records.push(Record::new(x, t, delta));
    }
    if records.is_empty() {
        return Err(if groups.is_some() && rows_read > 0 {
            Error::EmptyAfterFilter
        } else {
            Error::EmptySample
        });
    }
    let censored = records.iter().filter(|r| !r.delta).count();
    let report = IngestReport::new(rows_read, records.len(), censored);
    Ok((CensoredSample::new(records)?, report))
}

/// One row of the synthetic registry file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistryRow {
    pub stage: u8,
    pub age: u32,
    /// Follow-up in months.
    pub time: f64,
    pub delta: bool,
}

/// Patients and censored counts per stage, 1 to 4.
pub const REGISTRY_COUNTS: [(usize, usize); 4] = [(62, 44), (167, 92), (133, 53), (52, 16)];
const AGE_RANGE: (u32, u32) = (23, 103);

/// A synthetic colorectal-registry-shaped dataset: stages 1-4 with fixed
/// patient and censoring counts, ages in 23..=103 and follow-up times in
/// months. The clinical values are not meant to be realistic.
pub fn synthetic_registry(seed: u64) -> Vec<RegistryRow> {
    let mut rng = rng::stream(seed, 0);
    let mut rows = Vec::new();
    for (k, &(patients, censored)) in REGISTRY_COUNTS.iter().enumerate() {
        let stage = k as u8 + 1;
        // Exactly `censored` of the stage's rows get delta = 0: a partial
        // Fisher-Yates shuffle picks which.
        let mut order: Vec<usize> = (0..patients).collect();
        for i in 0..censored {
            let j = rng.random_range(i..patients);
            order.swap(i, j);
        }
        let mut is_censored = vec![false; patients];
        for &i in &order[..censored] {
            is_censored[i] = true;
        }
        let scale = 30.0 + 25.0 * (4 - k) as f64;
        for &cens in &is_censored {
            let age = rng.random_range(AGE_RANGE.0..=AGE_RANGE.1);
            let u: f64 = rng.random();
            // Deaths happen within ten years; follow-up runs to twelve, which
            // leaves a plateau of censored long-term survivors.
            let time = if cens {
                6.0 + 138.0 * u
            } else {
                -scale * (1.0 - u * (1.0 - (-120.0 / scale).exp())).ln()
            };
            rows.push(RegistryRow {
                stage,
                age,
                time: (time * 100.0).round() / 100.0,
                delta: !cens,
            });
        }
    }
    rows
}

/// One output value.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Missing,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Num)
    }
}

impl Cell {
    fn csv_text(&self) -> String {
        match self {
            Cell::Num(v) => fmt_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Num(v) => serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into),
            Cell::Int(v) => (*v).into(),
            Cell::Text(s) => s.clone().into(),
            Cell::Missing => serde_json::Value::Null,
        }
    }
}

/// Output format of result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// A result table held in memory until it is serialised.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    headers: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&'static str]) -> Self {
        Table {
            headers: headers.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv_text))?;
        }
        w.into_inner().map_err(|e| Error::Io {
            path: "<memory>".into(),
            source: e.into_error(),
        })
    }

    /// An array of objects keyed by column name.
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|row| {
                self.headers
                    .iter()
                    .zip(row)
                    .map(|(h, c)| (h.to_string(), c.json()))
                    .collect()
            })
            .collect();
        let mut bytes = serde_json::to_vec_pretty(&rows)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn to_bytes(&self, format: Format) -> Result<Vec<u8>> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

/// Shortest round-trip decimal for `v`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn registry_table(rows: &[RegistryRow]) -> Table {
    let mut table = Table::new(&["stage", "age", "time", "delta"]);
    for r in rows {
        table.push(vec![
            Cell::Int(r.stage.into()),
            Cell::Int(r.age.into()),
            r.time.into(),
            r.delta.into(),
        ]);
    }
    table
}

/// Samples with a leading trial index column.
pub fn sample_table<'a>(samples: impl IntoIterator<Item = &'a CensoredSample>) -> Table {
    let mut table = Table::new(&["trial", "x", "t", "delta"]);
    for (j, sample) in samples.into_iter().enumerate() {
        for r in sample.records() {
            table.push(vec![j.into(), r.x.into(), r.t.into(), r.delta.into()]);
        }
    }
    table
}

/// Provenance written next to every output as `<output>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// The fully resolved configuration of the run.
    pub config: serde_json::Value,
    pub rows: usize,
    /// Command-specific results and diagnostics.
    pub details: serde_json::Value,
}

impl RunMetadata {
    pub fn new(command: &str, config: serde_json::Value, rows: usize, details: serde_json::Value) -> Self {
        RunMetadata {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            rows,
            details,
        }
    }
}

/// Path of the metadata sidecar for `output`.
pub fn sidecar_path(output: &Path) -> std::path::PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    output.with_file_name(name)
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(bytes).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err)
}

/// Writes an output and its metadata sidecar.
pub fn write_with_metadata(path: &Path, bytes: &[u8], meta: &RunMetadata) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(meta)?;
    json.push(b'\n');
    write_atomic(path, bytes)?;
    write_atomic(&sidecar_path(path), &json)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn age_schema() -> DatasetSchema {
        DatasetSchema {
            covariate: "age".into(),
            time: "time".into(),
            ..DatasetSchema::default()
        }
    }

    #[test]
    fn three_rows_with_header() {
        let f = file_with("age,time,delta\n40,12.5,1\n55,3,0\n61,20,1\n");
        let (s, r) = ingest(f.path(), &age_schema(), None).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(r, IngestReport::new(3, 3, 1));
        assert_eq!(s.records()[0], Record::new(40.0, 12.5, true));
    }

    #[test]
    fn bad_delta_reports_line() {
        let f = file_with("age,time,delta\n40,12.5,1\n55,3,2\n");
        match ingest(f.path(), &age_schema(), None) {
            Err(Error::Parse { line, reason, .. }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("delta"));
            }
            other => panic!("{other:?}"),
        }
        let f = file_with("age,time,delta\n40,-1,1\n");
        assert!(matches!(
            ingest(f.path(), &age_schema(), None),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_column_and_file() {
        let f = file_with("a,b,c\n1,2,1\n");
        assert!(matches!(ingest(f.path(), &age_schema(), None), Err(Error::Schema(_))));
        assert!(matches!(
            ingest(Path::new("/nonexistent/input.csv"), &age_schema(), None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn headerless_indices_and_delimiter() {
        let f = file_with("1;2.5;1\n2;4;0\n");
        let schema = DatasetSchema {
            covariate: "0".into(),
            time: "1".into(),
            delta: "2".into(),
            group: None,
            delimiter: ';',
            has_header: false,
        };
        let (s, _) = ingest(f.path(), &schema, None).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn registry_counts_and_group_filter() {
        let rows = synthetic_registry(1);
        assert_eq!(rows.len(), 414);
        assert_eq!(rows.iter().filter(|r| !r.delta).count(), 205);
        for (k, &(n, c)) in REGISTRY_COUNTS.iter().enumerate() {
            let stage: Vec<_> = rows.iter().filter(|r| r.stage as usize == k + 1).collect();
            assert_eq!(stage.len(), n);
            assert_eq!(stage.iter().filter(|r| !r.delta).count(), c);
        }
        assert!(rows.iter().all(|r| (23..=103).contains(&r.age) && r.time >= 0.0));

        let bytes = registry_table(&rows).to_csv().unwrap();
        let f = file_with(std::str::from_utf8(&bytes).unwrap());
        let schema = DatasetSchema {
            group: Some("stage".into()),
            ..age_schema()
        };
        let (_, report) = ingest(f.path(), &schema, None).unwrap();
        assert_eq!(report.rows_kept, 414);
        assert_eq!(format!("{:.2}", report.censoring_pct), "49.52");

        let early = ["1".to_string(), "2".to_string()];
        let (s, report) = ingest(f.path(), &schema, Some(&early)).unwrap();
        assert_eq!((s.len(), report.censored), (229, 136));
        let none = ["9".to_string()];
        assert!(matches!(
            ingest(f.path(), &schema, Some(&none)),
            Err(Error::EmptyAfterFilter)
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let records = vec![
            Record::new(0.1 + 0.2, 1.0 / 3.0, true),
            Record::new(-1e-300, 12345.678901234567, false),
            Record::new(f64::MAX, f64::MIN_POSITIVE, true),
        ];
        let s = CensoredSample::new(records.clone()).unwrap();
        let bytes = sample_table([&s]).to_csv().unwrap();
        let f = file_with(std::str::from_utf8(&bytes).unwrap());
        let (back, _) = ingest(f.path(), &DatasetSchema::default(), None).unwrap();
        assert_eq!(back.records(), &records[..]);
    }

    #[test]
    fn json_table_rows() {
        let mut t = Table::new(&["x", "h", "note"]);
        t.push(vec![0.5.into(), Cell::Missing, Cell::Text("a".into())]);
        let v: serde_json::Value = serde_json::from_slice(&t.to_json().unwrap()).unwrap();
        assert_eq!(v, serde_json::json!([{"x": 0.5, "h": null, "note": "a"}]));
        assert_eq!(t.to_csv().unwrap(), b"x,h,note\n0.5,,a\n");
    }

    #[test]
    fn sidecar_naming_and_atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sub").join("run.csv");
        assert_eq!(sidecar_path(&out).file_name().unwrap(), "run.csv.meta.json");
        let meta = RunMetadata::new("simulate", serde_json::json!({"n": 3}), 0, serde_json::Value::Null);
        write_with_metadata(&out, b"a\n", &meta).unwrap();
        assert_eq!(fs::read(&out).unwrap(), b"a\n");
        let back: RunMetadata = serde_json::from_slice(&fs::read(sidecar_path(&out)).unwrap()).unwrap();
        assert_eq!(back, meta);
    }
}
