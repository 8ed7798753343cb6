//! Per-surgery CSV files and cohort manifests.
//!
//! A surgery file has a `minute` column followed by one column per channel.
//! An empty cell is a missing reading.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::record::{SurgeryRecord, CHANNELS};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";

fn malformed(path: &Path, msg: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| malformed(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::Io(e)
    })
}

pub fn surgery_to_csv(record: &SurgeryRecord) -> Result<Vec<u8>> {
    if record.channels() != CHANNELS.len() {
        return Err(Error::Shape(format!(
            "expected {} channels, record has {}",
            CHANNELS.len(),
            record.channels()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["minute"];
    header.extend(CHANNELS);
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for t in 0..record.minutes() {
        row.clear();
        row.push(t.to_string());
        for c in 0..record.channels() {
            row.push(record.value(c, t).map(|v| format!("{v:.2}")).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_surgery(path: &Path, record: &SurgeryRecord) -> Result<()> {
    atomic_write(path, &surgery_to_csv(record)?)
}

/// Reads one surgery; the id is the file stem.
pub fn read_surgery(path: &Path) -> Result<SurgeryRecord> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| malformed(path, "missing file name"))?;
    let mut rdr = csv::ReaderBuilder::new().from_path(path)?;
    let header = rdr.headers()?.clone();
    let expected: Vec<&str> = std::iter::once("minute").chain(CHANNELS).collect();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(malformed(path, format!("header must be {}", expected.join(","))));
    }
    let v = CHANNELS.len();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); v];
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        if row.len() != v + 1 {
            return Err(malformed(path, format!("line {line}: expected {} fields, found {}", v + 1, row.len())));
        }
        let minute: usize = row[0]
            .trim()
            .parse()
            .map_err(|_| malformed(path, format!("line {line}: bad minute {:?}", &row[0])))?;
        if minute != i {
            return Err(malformed(path, format!("line {line}: minute {minute} out of sequence, expected {i}")));
        }
        for (c, col) in columns.iter_mut().enumerate() {
            let cell = row[c + 1].trim();
            let value = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                None
            } else {
                let x: f64 = cell.parse().map_err(|_| {
                    malformed(path, format!("line {line}, column {}: cannot parse {cell:?}", CHANNELS[c]))
                })?;
                if !x.is_finite() {
                    return Err(malformed(path, format!("line {line}, column {}: non-finite value", CHANNELS[c])));
                }
                Some(x)
            };
            col.push(value);
        }
    }
    let t = columns[0].len();
    if t == 0 {
        return Err(malformed(path, "no data rows"));
    }
    let mut values = Vec::with_capacity(v * t);
    let mut observed = Vec::with_capacity(v * t);
    for col in &columns {
        for x in col {
            values.push(x.unwrap_or(0.0));
            observed.push(x.is_some());
        }
    }
    SurgeryRecord::new(id, Tensor::new(&[v, t], values)?, observed)
}

/// Writes every surgery as `<dir>/<id>.csv` plus a manifest listing them.
pub fn write_cohort(dir: &Path, records: &[SurgeryRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["surgery_id", "path"])?;
    for rec in records {
        let file = format!("{}.csv", rec.id);
        write_surgery(&dir.join(&file), rec)?;
        w.write_record([rec.id.as_str(), file.as_str()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    atomic_write(&dir.join(MANIFEST_FILE), &bytes)
}

/// Manifest entries as `(id, absolute path)`; relative paths resolve
/// against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new().from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "surgery_id" || &header[1] != "path" {
        return Err(malformed(path, "header must be surgery_id,path"));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() < 2 || row[0].trim().is_empty() {
            return Err(malformed(path, format!("line {}: incomplete entry", i + 2)));
        }
        let p = Path::new(row[1].trim());
        let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        out.push((row[0].trim().to_string(), full));
    }
    Ok(out)
}

/// Loads a cohort from a manifest file or a directory containing one.
pub fn read_cohort(path: &Path) -> Result<Vec<SurgeryRecord>> {
    let manifest = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    read_manifest(&manifest)?
        .into_iter()
        .map(|(id, p)| {
            let mut rec = read_surgery(&p)?;
            rec.id = id;
            Ok(rec)
        })
        .collect()
}
