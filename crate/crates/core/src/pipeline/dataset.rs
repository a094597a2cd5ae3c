use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::vision::{CoTRecord, Domain, ViolationKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineViolation {
    /// 1-based line number.
    pub line: usize,
    pub path: String,
    pub message: String,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateId {
    pub record_id: String,
    /// Every line carrying the id, ascending.
    pub lines: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub path: PathBuf,
    pub valid: bool,
    pub lines: usize,
    pub records: usize,
    pub per_domain: BTreeMap<Domain, usize>,
    pub violations: Vec<LineViolation>,
    pub duplicates: Vec<DuplicateId>,
}

/// Checks every line of a JSONL dataset. Each violation is reported once
/// per line with the line's number; a line that parses counts toward the
/// per-domain totals.
pub fn validate_dataset(path: &Path) -> io::Result<DatasetReport> {
    let bytes = fs::read(path)?;
    Ok(validate_dataset_text(path, &String::from_utf8_lossy(&bytes)))
}

pub fn validate_dataset_text(path: &Path, text: &str) -> DatasetReport {
    let mut report = DatasetReport { path: path.to_path_buf(), ..DatasetReport::default() };
    let mut ids: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let number = i + 1;
        report.lines = number;
        match CoTRecord::from_json(line) {
            Ok(record) => {
                report.records += 1;
                *report.per_domain.entry(record.domain).or_default() += 1;
                ids.entry(record.record_id).or_default().push(number);
            }
            Err(violations) => report.violations.extend(violations.into_iter().map(|v| LineViolation {
                line: number,
                path: v.path,
                message: v.message,
                kind: v.kind,
            })),
        }
    }
    report.duplicates = ids
        .into_iter()
        .filter(|(_, lines)| lines.len() > 1)
        .map(|(record_id, lines)| DuplicateId { record_id, lines })
        .collect();
    report.valid = report.violations.is_empty() && report.duplicates.is_empty();
    report
}
