use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{MissError, Result};

/// One interaction: `user` touched `item` at `timestamp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub user: String,
    pub item: String,
    pub attrs: Vec<String>,
    pub timestamp: i64,
}

/// Column layout of a delimiter-separated log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    /// user, item, attribute columns..., timestamp
    pub fields: Vec<String>,
    pub delimiter: char,
}

impl Schema {
    pub fn new(fields: Vec<String>, delimiter: char) -> Result<Self> {
        if fields.len() < 3 {
            return Err(MissError::Config(format!(
                "schema needs user, item and timestamp columns, got {fields:?}"
            )));
        }
        Ok(Self { fields, delimiter })
    }

    pub fn attr_names(&self) -> &[String] {
        &self.fields[2..self.fields.len() - 1]
    }
}

/// Interaction records grouped by user (users in ascending id order) and
/// sorted chronologically within each user; equal timestamps keep input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionLog {
    pub attr_names: Vec<String>,
    records: Vec<Record>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub lines: usize,
    pub malformed: usize,
}

/// Above this fraction of malformed lines ingestion fails.
const MAX_MALFORMED_FRACTION: f64 = 0.01;

impl InteractionLog {
    pub fn new(attr_names: Vec<String>, mut records: Vec<Record>) -> Result<Self> {
        if let Some(bad) = records.iter().position(|r| r.attrs.len() != attr_names.len()) {
            return Err(MissError::Format {
                line: bad + 1,
                message: format!(
                    "record has {} attributes, expected {}",
                    records[bad].attrs.len(),
                    attr_names.len()
                ),
            });
        }
        records.sort_by(|a, b| a.user.cmp(&b.user).then(a.timestamp.cmp(&b.timestamp)));
        Ok(Self { attr_names, records })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-user record slices in user order.
    pub fn users(&self) -> impl Iterator<Item = &[Record]> {
        self.records.chunk_by(|a, b| a.user == b.user)
    }

    pub fn num_users(&self) -> usize {
        self.users().count()
    }

    pub fn write(&self, path: &Path, delimiter: char) -> Result<()> {
        let mut out = Vec::new();
        let d = delimiter.to_string();
        let mut header = vec!["user".to_string(), "item".to_string()];
        header.extend(self.attr_names.iter().cloned());
        header.push("timestamp".to_string());
        writeln!(out, "# {}", header.join(&d)).expect("write to vec");
        for r in &self.records {
            let mut cols = vec![r.user.clone(), r.item.clone()];
            cols.extend(r.attrs.iter().cloned());
            cols.push(r.timestamp.to_string());
            writeln!(out, "{}", cols.join(&d)).expect("write to vec");
        }
        fs::write(path, out).map_err(|e| MissError::io(path, e))
    }
}

fn parse_line(line: &str, schema: &Schema) -> Option<Record> {
    let cols: Vec<&str> = line.split(schema.delimiter).collect();
    if cols.len() != schema.fields.len() || cols.iter().any(|c| c.trim().is_empty()) {
        return None;
    }
    let timestamp = cols[cols.len() - 1].trim().parse().ok()?;
    Some(Record {
        user: cols[0].trim().to_string(),
        item: cols[1].trim().to_string(),
        attrs: cols[2..cols.len() - 1].iter().map(|c| c.trim().to_string()).collect(),
        timestamp,
    })
}

/// Reads a delimiter-separated log. Blank lines and `#` comments are ignored;
/// lines with the wrong column count, empty fields or a non-integer
/// timestamp are skipped and counted.
pub fn ingest(path: &Path, schema: &Schema) -> Result<(InteractionLog, IngestStats)> {
    let text = fs::read_to_string(path).map_err(|e| MissError::io(path, e))?;
    ingest_str(&text, schema)
}

pub fn ingest_str(text: &str, schema: &Schema) -> Result<(InteractionLog, IngestStats)> {
    let mut stats = IngestStats::default();
    let mut first_bad = None;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        stats.lines += 1;
        match parse_line(line, schema) {
            Some(r) => records.push(r),
            None => {
                stats.malformed += 1;
                first_bad.get_or_insert(lineno + 1);
            }
        }
    }
    if stats.malformed as f64 > MAX_MALFORMED_FRACTION * stats.lines as f64 {
        return Err(MissError::Format {
            line: first_bad.unwrap_or(0),
            message: format!("{} of {} lines malformed", stats.malformed, stats.lines),
        });
    }
    if stats.malformed > 0 {
        log::warn!("skipped {} malformed lines of {}", stats.malformed, stats.lines);
    }
    Ok((InteractionLog::new(schema.attr_names().to_vec(), records)?, stats))
}

/// Drops users and items with fewer than `min_count` interactions, repeating
/// until no further record is removed.
pub fn filter_infrequent(log: &InteractionLog, min_count: usize) -> Result<InteractionLog> {
    if min_count == 0 {
        return Err(MissError::Config("min_count must be >= 1".into()));
    }
    let mut records = log.records.clone();
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for r in &records {
            *users.entry(&r.user).or_default() += 1;
            *items.entry(&r.item).or_default() += 1;
        }
        let keep: Vec<bool> = records
            .iter()
            .map(|r| users[r.user.as_str()] >= min_count && items[r.item.as_str()] >= min_count)
            .collect();
        if keep.iter().all(|&k| k) {
            break;
        }
        let mut it = keep.into_iter();
        records.retain(|_| it.next().unwrap_or(false));
    }
    if records.is_empty() {
        return Err(MissError::DegenerateDataset(format!(
            "no interactions left after filtering with min_count = {min_count}"
        )));
    }
    Ok(InteractionLog {
        attr_names: log.attr_names.clone(),
        records,
    })
}
