use std::collections::HashMap;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;

use super::{GroundTruth, WatershedDataset};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pixcon::PixelMeta;

pub const PRECIP_FILE: &str = "precip.csv";
pub const META_FILE: &str = "meta.csv";
pub const DISCHARGE_FILE: &str = "discharge.csv";
pub const TRUTH_FILE: &str = "truth.json";

const META_HEADER: [&str; 4] = ["pixel_id", "row", "col", "distance_km"];
const DISCHARGE_HEADER: [&str; 2] = ["date", "discharge_cms"];

fn data_err(file: &Path, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Data {
        file: file.display().to_string(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn header(path: &Path, rdr: &mut csv::Reader<fs::File>) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(|e| data_err(path, 1, "header", e.to_string()))?;
    Ok(h.iter().map(str::to_string).collect())
}

fn expect_header(path: &Path, got: &[String], expected: &[String]) -> Result<()> {
    if got != expected {
        return Err(data_err(path, 1, "header", format!("expected `{}`, got `{}`", expected.join(","), got.join(","))));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: u64, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| data_err(path, line, column, format!("cannot parse `{raw}` as a number")))?;
    if !v.is_finite() {
        return Err(data_err(path, line, column, "value is not finite"));
    }
    if v < 0.0 {
        return Err(data_err(path, line, column, format!("negative value {v}")));
    }
    Ok(v)
}

fn parse_date(path: &Path, line: u64, raw: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|_| data_err(path, line, "date", format!("`{raw}` is not an ISO-8601 date")))
}

/// Dates, source line numbers and value rows of a dated CSV.
type DatedRows = (Vec<NaiveDate>, Vec<u64>, Vec<Vec<f64>>);

/// Rows of `date,<values...>` with strictly increasing dates.
fn read_dated(path: &Path, rdr: &mut csv::Reader<fs::File>, columns: &[String]) -> Result<DatedRows> {
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            data_err(path, line, "record", e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != columns.len() + 1 {
            return Err(data_err(path, line, "record", format!("expected {} fields, got {}", columns.len() + 1, rec.len())));
        }
        let date = parse_date(path, line, &rec[0])?;
        if let Some(prev) = dates.last() {
            if date <= *prev {
                return Err(data_err(path, line, "date", format!("{date} does not follow {prev}")));
            }
        }
        let values = columns
            .iter()
            .enumerate()
            .map(|(i, c)| parse_f64(path, line, c, &rec[i + 1]))
            .collect::<Result<Vec<_>>>()?;
        dates.push(date);
        lines.push(line);
        rows.push(values);
    }
    Ok((dates, lines, rows))
}

/// Loads the precipitation / pixel-metadata / discharge trio.
pub fn load_watershed_csv(watershed_id: &str, precip_path: &Path, meta_path: &Path, discharge_path: &Path) -> Result<WatershedDataset> {
    let mut rdr = reader(precip_path)?;
    let head = header(precip_path, &mut rdr)?;
    if head.first().map(String::as_str) != Some("date") || head.len() < 2 {
        return Err(data_err(precip_path, 1, "header", "expected `date,pixel_0,...`"));
    }
    let pixel_cols: Vec<String> = head[1..].to_vec();
    for (i, c) in pixel_cols.iter().enumerate() {
        if *c != format!("pixel_{i}") {
            return Err(data_err(precip_path, 1, c, format!("expected column `pixel_{i}`")));
        }
    }
    let (dates, precip_lines, precip_rows) = read_dated(precip_path, &mut rdr, &pixel_cols)?;
    let p = pixel_cols.len();

    let mut rdr = reader(meta_path)?;
    let head = header(meta_path, &mut rdr)?;
    expect_header(meta_path, &head, &META_HEADER.map(String::from))?;
    let mut pixels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data_err(meta_path, e.position().map_or(0, |p| p.line()), "record", e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != META_HEADER.len() {
            return Err(data_err(meta_path, line, "record", format!("expected 4 fields, got {}", rec.len())));
        }
        let int = |i: usize| -> Result<usize> {
            rec[i].trim().parse().map_err(|_| data_err(meta_path, line, META_HEADER[i], format!("`{}` is not a non-negative integer", &rec[i])))
        };
        pixels.push(PixelMeta {
            pixel_id: int(0)?,
            row: int(1)?,
            col: int(2)?,
            distance_km: parse_f64(meta_path, line, "distance_km", &rec[3])?,
        });
    }
    pixels.sort_by_key(|m| m.pixel_id);
    if pixels.len() != p || pixels.iter().enumerate().any(|(i, m)| m.pixel_id != i) {
        return Err(data_err(meta_path, 0, "pixel_id", format!("pixel ids must be exactly 0..{p} to match {}", precip_path.display())));
    }

    let mut rdr = reader(discharge_path)?;
    let head = header(discharge_path, &mut rdr)?;
    expect_header(discharge_path, &head, &DISCHARGE_HEADER.map(String::from))?;
    let (q_dates, q_lines, q_rows) = read_dated(discharge_path, &mut rdr, &["discharge_cms".to_string()])?;

    if q_dates != dates {
        let q_set: HashMap<NaiveDate, u64> = q_dates.iter().copied().zip(q_lines.iter().copied()).collect();
        if let Some((d, line)) = dates.iter().zip(&precip_lines).find(|(d, _)| !q_set.contains_key(d)) {
            return Err(data_err(precip_path, *line, "date", format!("date {d} has no discharge record in {}", discharge_path.display())));
        }
        let p_set: std::collections::HashSet<NaiveDate> = dates.iter().copied().collect();
        let (d, line) = q_dates.iter().zip(&q_lines).find(|(d, _)| !p_set.contains(d)).expect("date sets differ");
        return Err(data_err(discharge_path, *line, "date", format!("date {d} has no precipitation record in {}", precip_path.display())));
    }

    let t_total = dates.len();
    if t_total == 0 {
        return Err(data_err(precip_path, 1, "record", "no data rows"));
    }
    let ds = WatershedDataset {
        watershed_id: watershed_id.to_string(),
        pixels,
        dates,
        precipitation: Tensor::new(vec![t_total, p], precip_rows.concat())?,
        discharge: q_rows.into_iter().map(|r| r[0]).collect(),
        truth: None,
    };
    ds.validate()?;
    Ok(ds)
}

/// Loads `dir/{precip,meta,discharge}.csv` (and `truth.json` if present);
/// the watershed id is the directory name.
pub fn load_watershed_dir(dir: &Path) -> Result<WatershedDataset> {
    let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "watershed".into());
    let mut ds = load_watershed_csv(&id, &dir.join(PRECIP_FILE), &dir.join(META_FILE), &dir.join(DISCHARGE_FILE))?;
    let truth_path = dir.join(TRUTH_FILE);
    if truth_path.exists() {
        let text = fs::read_to_string(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
        ds.truth = Some(serde_json::from_str::<GroundTruth>(&text)?);
        ds.validate()?;
    }
    Ok(ds)
}

/// Loads every subdirectory of `dir` that holds a precipitation file, in name order.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<WatershedDataset>> {
    let mut subdirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.join(PRECIP_FILE).is_file() {
            subdirs.push(path);
        }
    }
    if subdirs.is_empty() {
        return Err(Error::InvalidArgument(format!("no watershed directories under {}", dir.display())));
    }
    subdirs.sort();
    subdirs.iter().map(|d| load_watershed_dir(d)).collect()
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the CSV trio (plus `truth.json` for synthetic data) into `dir`.
/// Floats use Rust's shortest round-trip formatting, so reloading is bit-exact.
pub fn write_watershed_csv(ds: &WatershedDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = ds.num_pixels();

    let mut head = vec!["date".to_string()];
    head.extend((0..p).map(|i| format!("pixel_{i}")));
    write_rows(
        &dir.join(PRECIP_FILE),
        &head,
        ds.dates.iter().enumerate().map(|(t, d)| {
            let mut r = vec![d.format("%Y-%m-%d").to_string()];
            r.extend(ds.precipitation.row(t).iter().map(|v| v.to_string()));
            r
        }),
    )?;
    write_rows(
        &dir.join(META_FILE),
        &META_HEADER.map(String::from),
        ds.pixels
            .iter()
            .map(|m| vec![m.pixel_id.to_string(), m.row.to_string(), m.col.to_string(), m.distance_km.to_string()]),
    )?;
    write_rows(
        &dir.join(DISCHARGE_FILE),
        &DISCHARGE_HEADER.map(String::from),
        ds.dates.iter().zip(&ds.discharge).map(|(d, q)| vec![d.format("%Y-%m-%d").to_string(), q.to_string()]),
    )?;
    if let Some(truth) = &ds.truth {
        let path = dir.join(TRUTH_FILE);
        fs::write(&path, serde_json::to_string_pretty(truth)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
