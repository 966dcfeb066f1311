//! Raw interaction records and their CSV / JSONL ingestion.
//!
//! The on-disk schema uses the exact header
//! `blockNumber,timestamp,from,to,fromIsContract,toIsContract,callingFunction,value`;
//! JSONL rows carry the same keys. Unknown columns are ignored. Malformed rows
//! are collected and reported with their 1-based row numbers.

use super::{GraphError, RowError, RowErrorKind};
use std::io::{BufRead, BufReader, Read};

pub const CSV_HEADER: [&str; 8] = [
    "blockNumber",
    "timestamp",
    "from",
    "to",
    "fromIsContract",
    "toIsContract",
    "callingFunction",
    "value",
];

/// One raw transaction or contract-call row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub block_number: u64,
    /// Seconds since epoch, strictly positive.
    pub timestamp: i64,
    pub from: String,
    pub to: String,
    pub from_is_contract: bool,
    pub to_is_contract: bool,
    /// Present only for contract calls with a known function name.
    pub calling_function: Option<String>,
    /// Amount in wei-scale integer units.
    pub value: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    Jsonl,
}

struct RawRow<'a> {
    block_number: &'a str,
    timestamp: &'a str,
    from: &'a str,
    to: &'a str,
    from_is_contract: &'a str,
    to_is_contract: &'a str,
    calling_function: &'a str,
    value: &'a str,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "0" | "false" | "False" | "FALSE" => Some(false),
        "1" | "true" | "True" | "TRUE" => Some(true),
        _ => None,
    }
}

fn build_record(row_no: usize, raw: &RawRow) -> Result<InteractionRecord, RowError> {
    let err = |kind: RowErrorKind, detail: String| RowError {
        row: row_no,
        kind,
        detail,
    };
    let block_number = raw.block_number.trim().parse::<u64>().map_err(|_| {
        err(
            RowErrorKind::NonNumericValue,
            format!("blockNumber {:?}", raw.block_number),
        )
    })?;
    let timestamp = raw.timestamp.trim().parse::<i64>().map_err(|_| {
        err(
            RowErrorKind::NonNumericValue,
            format!("timestamp {:?}", raw.timestamp),
        )
    })?;
    if timestamp <= 0 {
        return Err(err(
            RowErrorKind::NonNumericValue,
            format!("timestamp {timestamp} must be positive"),
        ));
    }
    let from = raw.from.trim();
    let to = raw.to.trim();
    if from.is_empty() {
        return Err(err(RowErrorKind::EmptyAccountId, "from".into()));
    }
    if to.is_empty() {
        return Err(err(RowErrorKind::EmptyAccountId, "to".into()));
    }
    let from_is_contract = parse_bool(raw.from_is_contract).ok_or_else(|| {
        err(
            RowErrorKind::NonNumericValue,
            format!("fromIsContract {:?}", raw.from_is_contract),
        )
    })?;
    let to_is_contract = parse_bool(raw.to_is_contract).ok_or_else(|| {
        err(
            RowErrorKind::NonNumericValue,
            format!("toIsContract {:?}", raw.to_is_contract),
        )
    })?;
    let value = raw.value.trim().parse::<u128>().map_err(|_| {
        err(
            RowErrorKind::NonNumericValue,
            format!("value {:?} (must be a non-negative integer)", raw.value),
        )
    })?;
    // A function name only makes sense on a contract call; stray names on
    // plain transactions are dropped rather than rejected.
    let calling_function = match raw.calling_function.trim() {
        "" => None,
        name if to_is_contract => Some(name.to_string()),
        _ => None,
    };
    Ok(InteractionRecord {
        block_number,
        timestamp,
        from: from.to_string(),
        to: to.to_string(),
        from_is_contract,
        to_is_contract,
        calling_function,
        value,
    })
}

/// Parses and validates a record stream, preserving input order.
///
/// All malformed rows are collected; any error fails the whole ingest with
/// the offending row numbers.
pub fn ingest_records<R: Read>(
    reader: R,
    format: RecordFormat,
) -> Result<Vec<InteractionRecord>, GraphError> {
    match format {
        RecordFormat::Csv => ingest_csv(reader),
        RecordFormat::Jsonl => ingest_jsonl(reader),
    }
}

fn ingest_csv<R: Read>(reader: R) -> Result<Vec<InteractionRecord>, GraphError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| GraphError::Corrupt(format!("cannot read csv header: {e}")))?
        .clone();
    let mut col = [usize::MAX; 8];
    for (want_idx, want) in CSV_HEADER.iter().enumerate() {
        match headers.iter().position(|h| h == *want) {
            Some(p) => col[want_idx] = p,
            None => {
                return Err(GraphError::Ingest {
                    errors: vec![RowError {
                        row: 1,
                        kind: RowErrorKind::MissingColumn,
                        detail: (*want).to_string(),
                    }],
                })
            }
        }
    }
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 2; // 1-based, after the header line
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    row: row_no,
                    kind: RowErrorKind::NonNumericValue,
                    detail: format!("unparsable csv row: {e}"),
                });
                continue;
            }
        };
        let field = |want_idx: usize| row.get(col[want_idx]).unwrap_or("");
        let raw = RawRow {
            block_number: field(0),
            timestamp: field(1),
            from: field(2),
            to: field(3),
            from_is_contract: field(4),
            to_is_contract: field(5),
            calling_function: field(6),
            value: field(7),
        };
        if row.get(col[0]).is_none()
            || row.get(col[1]).is_none()
            || row.get(col[7]).is_none()
        {
            errors.push(RowError {
                row: row_no,
                kind: RowErrorKind::MissingColumn,
                detail: "row has fewer fields than the header".into(),
            });
            continue;
        }
        match build_record(row_no, &raw) {
            Ok(rec) => records.push(rec),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(GraphError::Ingest { errors })
    }
}

fn ingest_jsonl<R: Read>(reader: R) -> Result<Vec<InteractionRecord>, GraphError> {
    let reader = BufReader::new(reader);
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row_no = i + 1;
        let line = line.map_err(GraphError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                errors.push(RowError {
                    row: row_no,
                    kind: RowErrorKind::NonNumericValue,
                    detail: format!("unparsable json: {e}"),
                });
                continue;
            }
        };
        let mut missing = None;
        let mut text = |key: &str| -> String {
            match value.get(key) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(serde_json::Value::Bool(b)) => b.to_string(),
                Some(serde_json::Value::Number(n)) => n.to_string(),
                Some(serde_json::Value::Null) | None => {
                    if key != "callingFunction" && missing.is_none() {
                        missing = Some(key.to_string());
                    }
                    String::new()
                }
                Some(other) => other.to_string(),
            }
        };
        let fields: Vec<String> = CSV_HEADER.iter().map(|k| text(k)).collect();
        if let Some(key) = missing {
            errors.push(RowError {
                row: row_no,
                kind: RowErrorKind::MissingColumn,
                detail: key,
            });
            continue;
        }
        let raw = RawRow {
            block_number: &fields[0],
            timestamp: &fields[1],
            from: &fields[2],
            to: &fields[3],
            from_is_contract: &fields[4],
            to_is_contract: &fields[5],
            calling_function: &fields[6],
            value: &fields[7],
        };
        match build_record(row_no, &raw) {
            Ok(rec) => records.push(rec),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(GraphError::Ingest { errors })
    }
}

/// Writes records in the canonical CSV schema.
pub fn write_records_csv<W: std::io::Write>(
    writer: W,
    records: &[InteractionRecord],
) -> Result<(), GraphError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)
        .map_err(|e| GraphError::Corrupt(e.to_string()))?;
    for r in records {
        w.write_record([
            r.block_number.to_string(),
            r.timestamp.to_string(),
            r.from.clone(),
            r.to.clone(),
            if r.from_is_contract { "1" } else { "0" }.to_string(),
            if r.to_is_contract { "1" } else { "0" }.to_string(),
            r.calling_function.clone().unwrap_or_default(),
            r.value.to_string(),
        ])
        .map_err(|e| GraphError::Corrupt(e.to_string()))?;
    }
    w.flush().map_err(GraphError::Io)?;
    Ok(())
}
