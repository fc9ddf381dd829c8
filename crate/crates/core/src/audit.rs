//! Append-only audit trail shared by the SAN runtime and the action service.
//!
//! One JSON object per line: `t`, `kind`, then string fields in key order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::event::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuditKind {
    Subscribe,
    Detection,
    Activation,
    Achievement,
    Directive,
    Skip,
    Veto,
    Decision,
}

impl AuditKind {
    pub const ALL: [AuditKind; 8] = [
        AuditKind::Subscribe,
        AuditKind::Detection,
        AuditKind::Activation,
        AuditKind::Achievement,
        AuditKind::Directive,
        AuditKind::Skip,
        AuditKind::Veto,
        AuditKind::Decision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuditKind::Subscribe => "subscribe",
            AuditKind::Detection => "detection",
            AuditKind::Activation => "activation",
            AuditKind::Achievement => "achievement",
            AuditKind::Directive => "directive",
            AuditKind::Skip => "skip",
            AuditKind::Veto => "veto",
            AuditKind::Decision => "decision",
        }
    }
}

impl fmt::Display for AuditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AuditKind {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AuditKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| AuditError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("unknown audit kind `{0}`")]
    UnknownKind(String),
    #[error("line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    pub t: Millis,
    pub kind: AuditKind,
    pub fields: BTreeMap<String, String>,
}

impl AuditEntry {
    pub fn get(&self, field: &str) -> Option<&str> {
        self.fields.get(field).map(String::as_str)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("audit entries always serialize")
    }

    pub fn parse(line: &str) -> Result<AuditEntry, String> {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let obj = v.as_object().ok_or("expected an object")?;
        let t = obj.get("t").and_then(|t| t.as_i64()).ok_or("missing integer `t`")?;
        let kind = obj
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or("missing `kind`")?
            .parse::<AuditKind>()
            .map_err(|e| e.to_string())?;
        let mut fields = BTreeMap::new();
        for (k, v) in obj {
            if k == "t" || k == "kind" {
                continue;
            }
            let s = v.as_str().ok_or_else(|| format!("field `{k}` is not a string"))?;
            fields.insert(k.clone(), s.to_string());
        }
        Ok(AuditEntry { t, kind, fields })
    }
}

impl Serialize for AuditEntry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.fields.len() + 2))?;
        m.serialize_entry("t", &self.t)?;
        m.serialize_entry("kind", self.kind.as_str())?;
        for (k, v) in &self.fields {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditFilter {
    pub kind: Option<AuditKind>,
    pub from: Option<Millis>,
    pub to: Option<Millis>,
    /// Substring that some field value must contain.
    pub entity: Option<String>,
}

impl AuditFilter {
    pub fn kind(kind: AuditKind) -> Self {
        AuditFilter {
            kind: Some(kind),
            ..Self::default()
        }
    }

    pub fn matches(&self, e: &AuditEntry) -> bool {
        self.kind.is_none_or(|k| k == e.kind)
            && self.from.is_none_or(|f| e.t >= f)
            && self.to.is_none_or(|t| e.t <= t)
            && self
                .entity
                .as_ref()
                .is_none_or(|s| e.fields.values().any(|v| v.contains(s.as_str())))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record<K: Into<String>, V: Into<String>>(
        &mut self,
        t: Millis,
        kind: AuditKind,
        fields: impl IntoIterator<Item = (K, V)>,
    ) {
        let fields: BTreeMap<String, String> = fields.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        debug_assert!(
            !fields.contains_key("t") && !fields.contains_key("kind"),
            "`t` and `kind` are reserved audit fields"
        );
        self.entries.push(AuditEntry { t, kind, fields });
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn query(&self, filter: &AuditFilter) -> Vec<&AuditEntry> {
        self.entries.iter().filter(|e| filter.matches(e)).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|e| e.to_line() + "\n").collect()
    }

    pub fn parse(text: &str) -> Result<AuditLog, AuditError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| AuditEntry::parse(l).map_err(|msg| AuditError::Corrupt { line: i + 1, msg }))
            .collect::<Result<_, _>>()?;
        Ok(AuditLog { entries })
    }
}
