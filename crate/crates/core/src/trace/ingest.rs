use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use super::{BbSeries, Result, SeriesKey, TraceError};

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    /// One series per distinct `(app, kernel, block)`, in key order.
    pub series: Vec<BbSeries>,
    /// Rows whose parameter vector repeated an earlier row of the same block;
    /// the later row's count replaced the earlier one.
    pub duplicates: usize,
    /// Parameter arity per app, after dropping zero padding.
    pub arity: BTreeMap<String, usize>,
}

#[derive(Default)]
struct Group {
    series: Option<BbSeries>,
    index: HashMap<Vec<i64>, usize>,
}

struct Row {
    key: SeriesKey,
    params: Vec<i64>,
    count: u64,
}

pub fn ingest_path(path: impl AsRef<Path>) -> Result<Ingested> {
    ingest(BufReader::new(File::open(path)?))
}

/// Parses a trace CSV and groups its rows by block.
///
/// Rows may carry trailing zero padding when the file mixes apps of different
/// arity; an app's arity is the widest parameter prefix that is non-zero in
/// any of its rows (at least 1).
pub fn ingest<R: Read>(source: R) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header = reader.headers()?.clone();
    let width = check_header(&header)?;

    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(TraceError::Schema(format!(
                "line {line}: {} fields, header declares {width} (inconsistent arity)",
                record.len()
            )));
        }
        rows.push(parse_row(&record, line)?);
    }

    let mut arity: BTreeMap<String, usize> = BTreeMap::new();
    for row in &rows {
        let used = row.params.iter().rposition(|&p| p != 0).map_or(1, |i| i + 1);
        let a = arity.entry(row.key.app.clone()).or_insert(1);
        *a = (*a).max(used);
    }

    let mut groups: BTreeMap<SeriesKey, Group> = BTreeMap::new();
    let mut duplicates = 0;
    for mut row in rows {
        row.params.truncate(arity[&row.key.app]);
        let group = groups.entry(row.key.clone()).or_default();
        let series = group.series.get_or_insert_with(|| BbSeries::new(row.key));
        match group.index.get(&row.params) {
            Some(&i) => {
                series.counts[i] = row.count;
                duplicates += 1;
            }
            None => {
                group.index.insert(row.params.clone(), series.len());
                series.push(row.params, row.count);
            }
        }
    }

    let series = groups.into_values().filter_map(|g| g.series).collect();
    Ok(Ingested { series, duplicates, arity })
}

fn check_header(header: &csv::StringRecord) -> Result<usize> {
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    let bad = || TraceError::Schema(format!("unexpected header `{}`", fields.join(",")));
    if fields.len() < 5 || fields[..3] != ["app", "kernel_id", "bb_id"] || fields.last() != Some(&"count") {
        return Err(bad());
    }
    for (i, name) in fields[3..fields.len() - 1].iter().enumerate() {
        if *name != format!("p{i}") {
            return Err(bad());
        }
    }
    Ok(fields.len())
}

fn parse_row(record: &csv::StringRecord, line: u64) -> Result<Row> {
    let err = |field: &str, value: &str| TraceError::Parse {
        line,
        reason: format!("field `{field}`: cannot parse `{value}`"),
    };
    let app = record[0].trim();
    if app.is_empty() {
        return Err(TraceError::Parse { line, reason: "empty app name".into() });
    }
    let kernel_id = record[1].trim().parse().map_err(|_| err("kernel_id", &record[1]))?;
    let bb_id = record[2].trim().parse().map_err(|_| err("bb_id", &record[2]))?;
    let last = record.len() - 1;
    let params = (3..last)
        .map(|i| record[i].trim().parse::<i64>().map_err(|_| err(&format!("p{}", i - 3), &record[i])))
        .collect::<Result<Vec<_>>>()?;
    let count = record[last].trim().parse().map_err(|_| err("count", &record[last]))?;
    Ok(Row { key: SeriesKey { app: app.to_string(), kernel_id, bb_id }, params, count })
}
