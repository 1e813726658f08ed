use std::io::Read;
use std::path::Path;

use crate::block::Block;
use crate::error::{Error, Result};

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Any empty or NaN cell is an error.
    Strict,
    /// Gaps take the previous row's value; a gap in the first row is still an error.
    ForwardFill,
}

impl std::str::FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Self::Strict),
            "ffill" => Ok(Self::ForwardFill),
            other => Err(Error::Config(format!("unknown missing-value policy {other:?}"))),
        }
    }
}

pub fn load_csv(path: &Path, policy: MissingPolicy) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let name = path.file_stem().map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned());
    parse_csv(file, &name, policy)
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na")
}

/// Header row required. The first column is treated as a timestamp when its
/// header names one or its first value is not numeric.
pub fn parse_csv<R: Read>(reader: R, name: &str, policy: MissingPolicy) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() {
        return Err(Error::Data("empty header".into()));
    }
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    let first = header[0].to_ascii_lowercase();
    let named_time = matches!(first.as_str(), "date" | "time" | "timestamp" | "datetime");
    let first_cell = records[0].get(0).unwrap_or("");
    let has_time = named_time || (!is_missing(first_cell) && first_cell.parse::<f64>().is_err());
    let skip = usize::from(has_time);
    let channels = header.len() - skip;
    if channels == 0 {
        return Err(Error::Data("no channel columns".into()));
    }
    let mut data = Vec::with_capacity(records.len() * channels);
    let mut stamps = has_time.then(Vec::new);
    let mut filled = 0usize;
    for (r, rec) in records.iter().enumerate() {
        let line = rec.position().map_or(r as u64 + 2, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Data(format!("line {line}: expected {} fields, found {}", header.len(), rec.len())));
        }
        if let Some(s) = stamps.as_mut() {
            s.push(rec[0].to_string());
        }
        for c in 0..channels {
            let cell = &rec[c + skip];
            let v = if is_missing(cell) {
                match (policy, r) {
                    (MissingPolicy::ForwardFill, r) if r > 0 => {
                        filled += 1;
                        data[(r - 1) * channels + c]
                    }
                    _ => {
                        return Err(Error::Data(format!(
                            "line {line}, column {:?}: missing value",
                            header[c + skip]
                        )))
                    }
                }
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!("line {line}, column {:?}: non-numeric cell {cell:?}", header[c + skip]))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!("line {line}, column {:?}: non-finite value", header[c + skip])));
                }
                v
            };
            data.push(v);
        }
    }
    if filled > 0 {
        log::warn!("{name}: forward-filled {filled} missing cells");
    }
    Ok(Dataset {
        name: name.to_string(),
        channel_names: header[skip..].to_vec(),
        timestamps: stamps,
        values: Block::from_vec(records.len(), channels, data)?,
    })
}

/// Same dialect as the input: header row, optional leading label column.
pub fn write_csv(path: &Path, channel_names: &[String], labels: Option<(&str, &[String])>, values: &Block) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = Vec::new();
    if let Some((name, _)) = labels {
        header.push(name.to_string());
    }
    header.extend(channel_names.iter().cloned());
    w.write_record(&header)?;
    for r in 0..values.rows() {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        if let Some((_, l)) = labels {
            row.push(l.get(r).cloned().unwrap_or_default());
        }
        row.extend(values.row(r).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
