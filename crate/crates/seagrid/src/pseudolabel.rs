//! Pseudo-label interchange: one JSON object per line so labels from both
//! engines are inspectable and diffable.

use crate::dataset::Patch;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub source_id: String,
    pub row: usize,
    pub col: usize,
    pub label: usize,
    /// Which engine produced the label: "seafeats" or "seaclip".
    pub origin: String,
}

pub fn records_for(patches: &[Patch], labels: &[usize], origin: &str) -> Vec<PseudoLabelRecord> {
    patches
        .iter()
        .zip(labels)
        .map(|(p, &label)| PseudoLabelRecord {
            source_id: p.parent_id.clone(),
            row: p.row,
            col: p.col,
            label,
            origin: origin.to_string(),
        })
        .collect()
}

pub fn write_pseudolabels(path: &Path, records: &[PseudoLabelRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::data(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_pseudolabels(path: &Path) -> Result<Vec<PseudoLabelRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PseudoLabelRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::parse(path, 1, "no pseudo-label records"));
    }
    Ok(records)
}

/// Align records to a patch list, erroring on gaps.
pub fn labels_for_patches(records: &[PseudoLabelRecord], patches: &[Patch]) -> Result<Vec<usize>> {
    use std::collections::BTreeMap;
    let map: BTreeMap<(&str, usize, usize), usize> = records
        .iter()
        .map(|r| ((r.source_id.as_str(), r.row, r.col), r.label))
        .collect();
    patches
        .iter()
        .map(|p| {
            map.get(&(p.parent_id.as_str(), p.row, p.col))
                .copied()
                .ok_or_else(|| {
                    Error::data(format!(
                        "no pseudo-label for patch {}:{}:{}",
                        p.parent_id, p.row, p.col
                    ))
                })
        })
        .collect()
}
