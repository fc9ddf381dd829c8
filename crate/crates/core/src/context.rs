//! Business context: a typed key/value snapshot updated atomically from
//! events, with a journal of change sets that folds back to the snapshot.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, Millis};
use crate::expr::{EvalError, Expr, Scope, Value, ValueType};
use crate::syntax::render_template;
use crate::tables::Tables;

/// Declared key. A name ending in a `{param}` placeholder declares a family
/// of keys sharing the prefix (`fuel_{truck}` covers `fuel_T1`).
#[derive(Debug, Clone, PartialEq)]
pub struct KeyDecl {
    pub name: String,
    pub ty: ValueType,
    pub init: Option<Value>,
}

impl KeyDecl {
    fn template_prefix(&self) -> Option<&str> {
        self.name
            .strip_suffix('}')
            .and_then(|s| s.rfind('{').map(|i| &self.name[..i]))
    }

    fn covers(&self, key: &str) -> bool {
        match self.template_prefix() {
            Some(prefix) => key.len() > prefix.len() && key.starts_with(prefix) && !key.contains('{'),
            None => self.name == key,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schema {
    pub decls: Vec<KeyDecl>,
}

impl Schema {
    /// Declared type of a concrete key; exact declarations win over templates.
    pub fn type_of(&self, key: &str) -> Option<ValueType> {
        self.decls
            .iter()
            .find(|d| d.name == key)
            .or_else(|| self.decls.iter().find(|d| d.covers(key)))
            .map(|d| d.ty)
    }

    /// Whether a possibly templated key reference can resolve to a declared
    /// key: plain references must be declared, templated ones must share a
    /// declared family prefix.
    pub fn admits(&self, raw: &str) -> bool {
        match raw.find('{') {
            None => self.type_of(raw).is_some(),
            Some(i) => {
                let prefix = &raw[..i];
                self.decls
                    .iter()
                    .any(|d| d.template_prefix() == Some(prefix))
            }
        }
    }

    pub fn initial(&self) -> Snapshot {
        let values = self
            .decls
            .iter()
            .filter_map(|d| d.init.clone().map(|v| (d.name.clone(), d.ty.coerce(v))))
            .collect();
        Snapshot {
            version: 0,
            values,
            updated_at: 0,
        }
    }
}

/// `ON <etype> SET key = expr, ...`
#[derive(Debug, Clone, PartialEq)]
pub struct ContextRule {
    pub on_etype: String,
    /// Key templates may use `{attr}` or `{event.attr}` placeholders.
    pub assignments: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u64,
    pub values: BTreeMap<String, Value>,
    pub updated_at: Millis,
}

impl Snapshot {
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSet {
    pub version: u64,
    pub t: Millis,
    /// Id of the event that caused the change.
    pub cause: String,
    pub changes: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContextError {
    #[error("context key `{0}` is not declared")]
    UndeclaredKey(String),
    #[error("context key `{key}` is {expected}, assignment yields {found}")]
    TypeMismatch {
        key: String,
        expected: ValueType,
        found: ValueType,
    },
    #[error("key template `{template}`: event has no attribute `{attr}`")]
    UnresolvedKey { template: String, attr: String },
    #[error("assignment to `{key}`: {source}")]
    Eval { key: String, source: EvalError },
}

/// Rebuild a snapshot from an initial one and a journal.
pub fn fold(initial: &Snapshot, journal: &[ChangeSet]) -> Snapshot {
    let mut snap = initial.clone();
    for cs in journal {
        snap.values.extend(cs.changes.clone());
        snap.version = cs.version;
        snap.updated_at = cs.t;
    }
    snap
}

pub struct ContextStore {
    schema: Arc<Schema>,
    rules: Vec<ContextRule>,
    tables: Arc<Tables>,
    initial: Arc<Snapshot>,
    current: Arc<Snapshot>,
    journal: Vec<ChangeSet>,
}

impl ContextStore {
    pub fn new(schema: Arc<Schema>, rules: Vec<ContextRule>, tables: Arc<Tables>) -> Self {
        let initial = Arc::new(schema.initial());
        ContextStore {
            schema,
            rules,
            tables,
            current: initial.clone(),
            initial,
            journal: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rules(&self) -> &[ContextRule] {
        &self.rules
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.clone()
    }

    pub fn initial(&self) -> Arc<Snapshot> {
        self.initial.clone()
    }

    pub fn journal(&self) -> &[ChangeSet] {
        &self.journal
    }

    /// Apply every rule matching the event as one change set. Reads see the
    /// context as it was before the event. Returns the keys whose value
    /// changed; on error nothing is applied.
    pub fn apply(&mut self, event: &Event) -> Result<Vec<String>, ContextError> {
        let mut pending: BTreeMap<String, Value> = BTreeMap::new();
        let scope = RuleScope {
            event,
            snapshot: &self.current,
            schema: &self.schema,
            tables: &self.tables,
        };
        for rule in self.rules.iter().filter(|r| r.on_etype == event.etype) {
            for (template, expr) in &rule.assignments {
                let key = render_template(template, |p| {
                    let attr = p.strip_prefix("event.").unwrap_or(p);
                    event.attr(attr).map(|v| v.key_string())
                })
                .map_err(|attr| ContextError::UnresolvedKey {
                    template: template.clone(),
                    attr,
                })?;
                let ty = self
                    .schema
                    .type_of(&key)
                    .ok_or_else(|| ContextError::UndeclaredKey(key.clone()))?;
                let value = expr.eval(&scope).map_err(|source| ContextError::Eval {
                    key: key.clone(),
                    source,
                })?;
                if !ty.accepts(&value) {
                    return Err(ContextError::TypeMismatch {
                        key,
                        expected: ty,
                        found: value.value_type(),
                    });
                }
                pending.insert(key, ty.coerce(value));
            }
        }
        pending.retain(|k, v| self.current.get(k) != Some(v));
        if pending.is_empty() {
            return Ok(Vec::new());
        }
        let cs = ChangeSet {
            version: self.current.version + 1,
            t: event.t_end,
            cause: event.id.clone(),
            changes: pending,
        };
        let mut next = (*self.current).clone();
        next.values.extend(cs.changes.clone());
        next.version = cs.version;
        next.updated_at = cs.t;
        let changed = cs.changes.keys().cloned().collect();
        self.current = Arc::new(next);
        self.journal.push(cs);
        Ok(changed)
    }

    pub fn evaluate(&self, condition: &Expr) -> Result<bool, EvalError> {
        evaluate(condition, &self.current, &self.schema, &self.tables)
    }
}

/// Pure evaluation of a resolved condition against a snapshot.
pub fn evaluate(
    condition: &Expr,
    snapshot: &Snapshot,
    schema: &Schema,
    tables: &Tables,
) -> Result<bool, EvalError> {
    condition.eval_bool(&SnapshotScope {
        snapshot,
        schema,
        tables,
    })
}

struct SnapshotScope<'a> {
    snapshot: &'a Snapshot,
    schema: &'a Schema,
    tables: &'a Tables,
}

pub(crate) fn lookup_key(snapshot: &Snapshot, schema: &Schema, name: &str) -> Result<Value, EvalError> {
    if let Some(v) = snapshot.get(name) {
        return Ok(v.clone());
    }
    if name.contains('{') {
        let p = crate::syntax::placeholders(name);
        return Err(EvalError::UnresolvedPlaceholder(p.into_iter().next().unwrap_or_default()));
    }
    if schema.type_of(name).is_some() {
        Err(EvalError::UnknownContextKey(name.into()))
    } else {
        Err(EvalError::UndeclaredKey(name.into()))
    }
}

pub(crate) fn table_lookup(tables: &Tables, table: &str, key: &str, needle: &str) -> Result<bool, EvalError> {
    tables
        .get(table)
        .map(|t| t.contains(key, needle))
        .ok_or_else(|| EvalError::UnknownTable(table.into()))
}

impl Scope for SnapshotScope<'_> {
    fn attr(&self, var: &str, _: &str) -> Result<Value, EvalError> {
        Err(EvalError::UnboundVariable(var.into()))
    }

    fn key(&self, name: &str) -> Result<Value, EvalError> {
        lookup_key(self.snapshot, self.schema, name)
    }

    fn in_table(&self, table: &str, key: &str, needle: &str) -> Result<bool, EvalError> {
        table_lookup(self.tables, table, key, needle)
    }
}

struct RuleScope<'a> {
    event: &'a Event,
    snapshot: &'a Snapshot,
    schema: &'a Schema,
    tables: &'a Tables,
}

impl Scope for RuleScope<'_> {
    fn attr(&self, var: &str, attr: &str) -> Result<Value, EvalError> {
        if var != "event" {
            return Err(EvalError::UnboundVariable(var.into()));
        }
        self.event
            .attr(attr)
            .map(Value::from)
            .ok_or_else(|| EvalError::MissingAttr(var.into(), attr.into()))
    }

    fn key(&self, name: &str) -> Result<Value, EvalError> {
        lookup_key(self.snapshot, self.schema, name)
    }

    fn in_table(&self, table: &str, key: &str, needle: &str) -> Result<bool, EvalError> {
        table_lookup(self.tables, table, key, needle)
    }
}
