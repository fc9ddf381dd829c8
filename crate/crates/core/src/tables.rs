//! Static lookup tables used by pattern guards.
//!
//! A table file is whitespace-separated columns with a header line; `#`
//! starts a comment. Membership `x in table(t, k)` holds when some row has
//! `k` in its first column and `x` in its second.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("table is empty (missing header line)")]
    MissingHeader,
    #[error("table header needs at least two columns")]
    TooFewColumns,
    #[error("line {line}: expected {expected} columns, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    index: BTreeMap<String, BTreeSet<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, header) = lines.next().ok_or(TableError::MissingHeader)?;
        let columns: Vec<String> = header.split_whitespace().map(str::to_string).collect();
        if columns.len() < 2 {
            return Err(TableError::TooFewColumns);
        }
        let mut table = Table {
            columns,
            ..Table::default()
        };
        for (line, l) in lines {
            let row: Vec<String> = l.split_whitespace().map(str::to_string).collect();
            if row.len() != table.columns.len() {
                return Err(TableError::RaggedRow {
                    line,
                    expected: table.columns.len(),
                    found: row.len(),
                });
            }
            table
                .index
                .entry(row[0].clone())
                .or_default()
                .insert(row[1].clone());
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn contains(&self, key: &str, needle: &str) -> bool {
        self.index.get(key).is_some_and(|s| s.contains(needle))
    }
}

/// Named tables available to a model.
pub type Tables = BTreeMap<String, Table>;
