//! Event logs and feature tables as CSV (header required) or JSONL.
//!
//! Diffusion rows carry `cascade_id, src_id, tgt_id, timestamp`; any further
//! CSV columns (or a JSONL `edge_features` array) become edge features.
//! Conversion rows carry `cascade_id, promoter_id, user_id, timestamp`.
//! Feature rows are an id followed by a fixed-width real vector.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use castemp_core::splitter::SplitKind;
use castemp_core::store::{CascadeId, CascadeStore, FeatureTable, StoreBuilder};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn of(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("jsonl" | "json" | "ndjson") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventFiles {
    pub diffusion: PathBuf,
    pub conversions: Option<PathBuf>,
    pub promoter_features: Option<PathBuf>,
    pub cascade_features: Option<PathBuf>,
    pub allow_self_loops: bool,
}

impl EventFiles {
    pub fn new(diffusion: impl Into<PathBuf>) -> Self {
        EventFiles { diffusion: diffusion.into(), ..EventFiles::default() }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_f64(path: &Path, line: u64, field: &str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::malformed(path, line, format!("{field}: `{s}` is not a number")))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).flexible(false).from_reader(open(path)?))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::malformed(path, line, e.to_string())
}

/// Column positions of `required` in the CSV header, plus the remaining ones.
fn columns(path: &Path, headers: &csv::StringRecord, required: &[&str]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut pos = Vec::with_capacity(required.len());
    for name in required {
        match headers.iter().position(|h| h == *name) {
            Some(i) => pos.push(i),
            None => return Err(Error::malformed(path, 1, format!("header lacks column `{name}`"))),
        }
    }
    let rest = (0..headers.len()).filter(|i| !pos.contains(i)).collect();
    Ok((pos, rest))
}

fn json_lines(path: &Path, mut each: impl FnMut(u64, serde_json::Map<String, Value>) -> Result<()>) -> Result<()> {
    let reader = BufReader::new(open(path)?);
    for (k, line) in reader.lines().enumerate() {
        let line_no = k as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(map)) => each(line_no, map)?,
            Ok(_) => return Err(Error::malformed(path, line_no, "expected a JSON object")),
            Err(e) => return Err(Error::malformed(path, line_no, e.to_string())),
        }
    }
    Ok(())
}

fn json_id(path: &Path, line: u64, map: &serde_json::Map<String, Value>, key: &str) -> Result<String> {
    match map.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(Error::malformed(path, line, format!("missing or non-scalar `{key}`"))),
    }
}

fn json_f64(path: &Path, line: u64, map: &serde_json::Map<String, Value>, key: &str) -> Result<f64> {
    match map.get(key) {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| Error::malformed(path, line, format!("`{key}` out of range"))),
        Some(Value::String(s)) => parse_f64(path, line, key, s),
        _ => Err(Error::malformed(path, line, format!("missing numeric `{key}`"))),
    }
}

fn json_vec(path: &Path, line: u64, v: &Value, key: &str) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| Error::malformed(path, line, format!("`{key}` must be an array")))?;
    arr.iter()
        .map(|x| x.as_f64().ok_or_else(|| Error::malformed(path, line, format!("`{key}` holds a non-number"))))
        .collect()
}

const DIFFUSION_COLUMNS: [&str; 4] = ["cascade_id", "src_id", "tgt_id", "timestamp"];
const CONVERSION_COLUMNS: [&str; 4] = ["cascade_id", "promoter_id", "user_id", "timestamp"];

fn row_error(path: &Path, line: u64, e: castemp_core::Error) -> Error {
    Error::malformed(path, line, e.to_string())
}

pub fn read_diffusion(path: &Path, b: &mut StoreBuilder) -> Result<usize> {
    let mut n = 0;
    match Format::of(path) {
        Format::Csv => {
            let mut rdr = csv_reader(path)?;
            let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
            let (pos, extra) = columns(path, &headers, &DIFFUSION_COLUMNS)?;
            let mut rec = csv::StringRecord::new();
            while rdr.read_record(&mut rec).map_err(|e| csv_error(path, e))? {
                let line = rec.position().map_or(0, |p| p.line());
                let time = parse_f64(path, line, "timestamp", &rec[pos[3]])?;
                let edge = if extra.is_empty() {
                    None
                } else {
                    Some(extra.iter().map(|&i| parse_f64(path, line, &headers[i], &rec[i])).collect::<Result<Vec<_>>>()?)
                };
                b.add_diffusion(&rec[pos[0]], &rec[pos[1]], &rec[pos[2]], time, edge).map_err(|e| row_error(path, line, e))?;
                n += 1;
            }
        }
        Format::Jsonl => json_lines(path, |line, map| {
            let c = json_id(path, line, &map, "cascade_id")?;
            let s = json_id(path, line, &map, "src_id")?;
            let t = json_id(path, line, &map, "tgt_id")?;
            let time = json_f64(path, line, &map, "timestamp")?;
            let edge = map.get("edge_features").map(|v| json_vec(path, line, v, "edge_features")).transpose()?;
            b.add_diffusion(&c, &s, &t, time, edge).map_err(|e| row_error(path, line, e))?;
            n += 1;
            Ok(())
        })?,
    }
    Ok(n)
}

pub fn read_conversions(path: &Path, b: &mut StoreBuilder) -> Result<usize> {
    let mut n = 0;
    match Format::of(path) {
        Format::Csv => {
            let mut rdr = csv_reader(path)?;
            let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
            let (pos, _) = columns(path, &headers, &CONVERSION_COLUMNS)?;
            let mut rec = csv::StringRecord::new();
            while rdr.read_record(&mut rec).map_err(|e| csv_error(path, e))? {
                let line = rec.position().map_or(0, |p| p.line());
                let time = parse_f64(path, line, "timestamp", &rec[pos[3]])?;
                b.add_conversion(&rec[pos[0]], &rec[pos[1]], &rec[pos[2]], time).map_err(|e| row_error(path, line, e))?;
                n += 1;
            }
        }
        Format::Jsonl => json_lines(path, |line, map| {
            let c = json_id(path, line, &map, "cascade_id")?;
            let p = json_id(path, line, &map, "promoter_id")?;
            let u = json_id(path, line, &map, "user_id")?;
            let time = json_f64(path, line, &map, "timestamp")?;
            b.add_conversion(&c, &p, &u, time).map_err(|e| row_error(path, line, e))?;
            n += 1;
            Ok(())
        })?,
    }
    Ok(n)
}

/// `(id, vector)` rows of a feature file: CSV `id,f0,f1,...` or JSONL
/// `{"id": ..., "features": [...]}`.
pub fn read_features(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rows = Vec::new();
    match Format::of(path) {
        Format::Csv => {
            let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).flexible(true).from_reader(open(path)?);
            let mut rec = csv::StringRecord::new();
            while rdr.read_record(&mut rec).map_err(|e| csv_error(path, e))? {
                let line = rec.position().map_or(0, |p| p.line());
                let id = rec.get(0).ok_or_else(|| Error::malformed(path, line, "empty row"))?.to_string();
                let v = rec.iter().skip(1).map(|s| parse_f64(path, line, "feature", s)).collect::<Result<Vec<_>>>()?;
                rows.push((id, v));
            }
        }
        Format::Jsonl => json_lines(path, |line, map| {
            let id = json_id(path, line, &map, "id")?;
            let v = map.get("features").ok_or_else(|| Error::malformed(path, line, "missing `features`"))?;
            rows.push((id, json_vec(path, line, v, "features")?));
            Ok(())
        })?,
    }
    Ok(rows)
}

/// Loads both event streams and the feature tables into a store. Events are
/// sorted by time, ties keeping file order.
pub fn load_events(files: &EventFiles) -> Result<CascadeStore> {
    let mut b = StoreBuilder::new().allow_self_loops(files.allow_self_loops);
    read_diffusion(&files.diffusion, &mut b)?;
    if let Some(p) = &files.conversions {
        read_conversions(p, &mut b)?;
    }
    if let Some(p) = &files.promoter_features {
        for (id, v) in read_features(p)? {
            b.add_promoter_features(&id, v);
        }
    }
    if let Some(p) = &files.cascade_features {
        for (id, v) in read_features(p)? {
            b.add_cascade_features(&id, v);
        }
    }
    Ok(b.build())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<File>> {
    create(path)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(create(path)?))
}

fn wcsv(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

pub fn write_diffusion(path: &Path, store: &CascadeStore) -> Result<()> {
    let mut w = csv_writer(path)?;
    let edge_dim = store.diffusion().iter().find_map(|e| e.edge_features.as_ref().map(Vec::len)).unwrap_or(0);
    let mut header: Vec<String> = DIFFUSION_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..edge_dim).map(|k| format!("e{k}")));
    w.write_record(&header).map_err(|e| wcsv(path, e))?;
    for e in store.diffusion() {
        let mut row = vec![
            store.cascade_name(e.cascade).to_string(),
            store.promoter_name(e.src).to_string(),
            store.promoter_name(e.tgt).to_string(),
            e.time.to_string(),
        ];
        let zeros = vec![0.0; edge_dim];
        row.extend(e.edge_features.as_deref().unwrap_or(&zeros).iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| wcsv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_conversions(path: &Path, store: &CascadeStore) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(CONVERSION_COLUMNS).map_err(|e| wcsv(path, e))?;
    for e in store.conversions() {
        let t = e.time.to_string();
        w.write_record([store.cascade_name(e.cascade), store.promoter_name(e.promoter), store.user_name(e.user), &t])
            .map_err(|e| wcsv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_table(path: &Path, table: &FeatureTable, name: impl Fn(usize) -> String) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..table.dim()).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(|e| wcsv(path, e))?;
    for id in 0..table.len() {
        if let Some(v) = table.raw(id) {
            let mut row = vec![name(id)];
            row.extend(v.iter().map(f64::to_string));
            w.write_record(&row).map_err(|e| wcsv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `cascade_id,split` rows, as produced for the toy scenarios.
pub fn write_assignment(path: &Path, store: &CascadeStore, assignment: &[(CascadeId, SplitKind)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cascade_id", "split"]).map_err(|e| wcsv(path, e))?;
    for (c, split) in assignment {
        w.write_record([store.cascade_name(*c), split.as_str()]).map_err(|e| wcsv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `diffusion.csv`, `conversions.csv` and, when present, the two
/// feature tables into `dir`.
pub fn write_store(dir: &Path, store: &CascadeStore) -> Result<EventFiles> {
    let mut files = EventFiles::new(dir.join("diffusion.csv"));
    write_diffusion(&files.diffusion, store)?;
    let conv = dir.join("conversions.csv");
    write_conversions(&conv, store)?;
    files.conversions = Some(conv);
    if !store.promoter_features().is_empty() {
        let p = dir.join("promoter_features.csv");
        write_table(&p, store.promoter_features(), |i| store.promoter_name(castemp_core::PromoterId(i as u32)).to_string())?;
        files.promoter_features = Some(p);
    }
    if !store.cascade_features().is_empty() {
        let p = dir.join("cascade_features.csv");
        write_table(&p, store.cascade_features(), |i| store.cascade_name(castemp_core::CascadeId(i as u32)).to_string())?;
        files.cascade_features = Some(p);
    }
    Ok(files)
}

/// Writes any serializable rows as JSON lines.
pub fn write_jsonl<T: serde::Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut w, &r).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::malformed(path, k as u64 + 1, e.to_string()))?);
    }
    Ok(out)
}
